#pragma once

#include <cmath>
#include <cstdint>
#include <span>

#include "vesselseg/segnet.hpp"

namespace vesselseg {

template <typename T>
struct AdamConfig {
    T lr = T(1e-3);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
};

/// First/second moment accumulators mirroring the parameter shapes.
template <typename T>
struct AdamState {
    NetworkParams<T> m;
    NetworkParams<T> v;
    std::int64_t step = 0;

    static AdamState zero_like(const NetworkConfig& config) {
        AdamState s;
        s.m = zero_params<T>(config);
        s.v = zero_params<T>(config);
        return s;
    }
};

/// Bias-corrected Adam on one flat parameter array. `step` is the 1-based
/// step count after incrementing.
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                 std::int64_t step, const AdamConfig<T>& cfg) {
    if (param.size() != grad.size() || param.size() != m.size() || param.size() != v.size())
        throw ShapeError("adam_update: size mismatch");
    const T bc1 = T(1) - std::pow(cfg.beta1, static_cast<T>(step));
    const T bc2 = T(1) - std::pow(cfg.beta2, static_cast<T>(step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const T g = grad[i];
        m[i] = cfg.beta1 * m[i] + (T(1) - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (T(1) - cfg.beta2) * g * g;
        const T m_hat = m[i] / bc1;
        const T v_hat = v[i] / bc2;
        param[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

template <typename T>
void adam_step(NetworkParams<T>& params, const NetworkParams<T>& grads, AdamState<T>& state,
               const AdamConfig<T>& cfg) {
    ++state.step;
    auto p = param_entries(params);
    auto g = param_entries(grads);
    auto m = param_entries(state.m);
    auto v = param_entries(state.v);
    for (std::size_t i = 0; i < p.size(); ++i) {
        adam_update(std::span<T>(p[i].param->weight.v), std::span<const T>(g[i].param->weight.v),
                    std::span<T>(m[i].param->weight.v), std::span<T>(v[i].param->weight.v),
                    state.step, cfg);
        adam_update(std::span<T>(p[i].param->bias), std::span<const T>(g[i].param->bias),
                    std::span<T>(m[i].param->bias), std::span<T>(v[i].param->bias), state.step,
                    cfg);
    }
}

}  // namespace vesselseg
