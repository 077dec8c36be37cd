#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "vesselseg/graph_smoothing.hpp"
#include "vesselseg/tensor.hpp"

namespace vesselseg {

enum class Reduction { sum, mean };

template <typename T>
struct ObjectiveValue {
    T total = T(0);
    T bce = T(0);
    T smoothing_sum = T(0);
    T lambda = T(0);
};

template <typename T>
struct BceResult {
    T value = T(0);
    Tensor4<T> grad;
};

namespace detail {

template <typename T>
T softplus(T z) {
    return z > T(0) ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

template <typename T>
T sigmoid_scalar(T z) {
    if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
    const T e = std::exp(z);
    return e / (T(1) + e);
}

template <typename T>
void check_bce_inputs(const Tensor4<T>& logits, const Tensor4<T>& targets) {
    require_same_shape(logits, targets, "bce_with_logits");
    for (const T& t : targets.v)
        if (!(t >= T(0) && t <= T(1)))
            throw InvalidLabelError("bce_with_logits: target outside [0,1]");
}

}  // namespace detail

/// Pixel-summed binary cross entropy in the numerically stable logits form:
/// sum of softplus(z) - t*z, gradient sigmoid(z) - t. Mean reduction divides
/// by the pixel count.
template <typename T>
BceResult<T> bce_with_logits(const Tensor4<T>& logits, const Tensor4<T>& targets,
                             Reduction reduction = Reduction::sum) {
    detail::check_bce_inputs(logits, targets);
    BceResult<T> r;
    r.grad = Tensor4<T>(logits.n, logits.c, logits.h, logits.w);
    T value = T(0);
    for (std::size_t i = 0; i < logits.v.size(); ++i) {
        const T z = logits.v[i], t = targets.v[i];
        value += detail::softplus(z) - t * z;
        r.grad.v[i] = detail::sigmoid_scalar(z) - t;
    }
    if (reduction == Reduction::mean) {
        const T scale = T(1) / static_cast<T>(logits.v.size());
        value *= scale;
        for (auto& g : r.grad.v) g *= scale;
    }
    r.value = value;
    return r;
}

/// Reference cross entropy evaluated on probabilities directly, with the
/// clamp that keeps log() finite at saturation. Test path only; the training
/// path is the fused logits form above.
template <typename T>
T bce_from_probs(std::span<const T> probs, std::span<const T> targets) {
    if (probs.size() != targets.size()) throw ShapeError("bce_from_probs: size mismatch");
    constexpr T eps = T(1e-7);
    T value = T(0);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const T y = std::min(T(1) - eps, std::max(eps, probs[i]));
        value -= targets[i] * std::log(y) + (T(1) - targets[i]) * std::log(T(1) - y);
    }
    return value;
}

/// Per-item region graphs sampled on the targets; `targets` must be
/// single-channel.
template <typename T>
std::vector<PatchGraphs<T>> build_batch_graphs(const Tensor4<T>& targets, int sample_m, Rng& rng) {
    if (targets.c != 1) throw ShapeError("build_batch_graphs: targets must be single-channel");
    std::vector<PatchGraphs<T>> graphs;
    graphs.reserve(targets.n);
    const std::size_t plane = static_cast<std::size_t>(targets.h) * targets.w;
    for (int i = 0; i < targets.n; ++i) {
        std::span<const T> labels(targets.plane(i, 0), plane);
        graphs.push_back(sample_patch_graphs(labels, sample_m, rng));
    }
    return graphs;
}

template <typename T>
struct ObjectiveResult {
    ObjectiveValue<T> value;
    Tensor4<T> grad;  // with respect to the logits
};

/// Objective O = BCE + lambda * sum_i S_i with fixed, caller-supplied graphs.
/// The smoothing gradient is chained through the sigmoid:
/// dO/dz += lambda * dS/dy * y(1-y). Mean reduction divides the BCE by the
/// pixel count and the smoothing sum by the batch size.
template <typename T>
ObjectiveResult<T> total_objective_with_graphs(const Tensor4<T>& logits, const Tensor4<T>& targets,
                                               T lambda,
                                               const std::vector<PatchGraphs<T>>& graphs,
                                               Reduction reduction = Reduction::sum) {
    if (lambda < T(0)) throw Error("total_objective: lambda must be nonnegative");
    if (static_cast<int>(graphs.size()) != logits.n)
        throw ShapeError("total_objective: one graph pair per batch item required");
    ObjectiveResult<T> r;
    auto bce = bce_with_logits(logits, targets, reduction);
    r.grad = std::move(bce.grad);

    const std::size_t plane = static_cast<std::size_t>(logits.h) * logits.w;
    const T s_scale = reduction == Reduction::mean ? T(1) / static_cast<T>(logits.n) : T(1);

    T smoothing_total = T(0);
    for (int i = 0; i < logits.n; ++i) {
        const T* z = logits.plane(i, 0);
        std::vector<T> y(plane);
        for (std::size_t k = 0; k < plane; ++k) y[k] = detail::sigmoid_scalar(z[k]);
        auto s = smoothing(graphs[i].fg, graphs[i].bg, std::span<const T>(y));
        smoothing_total += s.value;
        T* g = r.grad.plane(i, 0);
        const T chain_scale = lambda * s_scale;
        for (std::size_t k = 0; k < plane; ++k) {
            if (s.gradient[k] != T(0)) g[k] += chain_scale * s.gradient[k] * y[k] * (T(1) - y[k]);
        }
    }
    r.value.lambda = lambda;
    r.value.bce = bce.value;
    r.value.smoothing_sum = smoothing_total * s_scale;
    r.value.total = r.value.bce + lambda * r.value.smoothing_sum;
    return r;
}

/// Samples fresh region graphs on the targets, then evaluates the objective.
template <typename T>
ObjectiveResult<T> total_objective(const Tensor4<T>& logits, const Tensor4<T>& targets, T lambda,
                                   int sample_m, Rng& rng, Reduction reduction = Reduction::sum) {
    auto graphs = build_batch_graphs(targets, sample_m, rng);
    return total_objective_with_graphs(logits, targets, lambda, graphs, reduction);
}

}  // namespace vesselseg
