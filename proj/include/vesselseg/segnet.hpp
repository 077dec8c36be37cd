#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "vesselseg/conv_ops.hpp"
#include "vesselseg/rng.hpp"
#include "vesselseg/tensor.hpp"

namespace vesselseg {

/// Channel widths of the three encoder stages. The decoder mirrors them.
struct NetworkConfig {
    int in_channels = 1;
    int c1 = 32;
    int c2 = 64;
    int c3 = 128;

    bool operator==(const NetworkConfig&) const = default;
};

template <typename T>
struct ConvParam {
    Tensor4<T> weight;  // (out_c, in_c, kh, kw)
    std::vector<T> bias;
};

/// Encoder: conv-conv-pool, conv-conv-pool, conv-conv (six ReLU convs, two
/// pools). Decoder: upconv, concat skip, conv-conv, upconv, concat skip,
/// conv-conv, then a 1x1 conv without ReLU. Upconvs are linear 2x2 stride-2
/// transposed convolutions.
template <typename T>
struct NetworkParams {
    NetworkConfig config;
    ConvParam<T> enc1a, enc1b;
    ConvParam<T> enc2a, enc2b;
    ConvParam<T> enc3a, enc3b;
    ConvParam<T> up1;
    ConvParam<T> dec1a, dec1b;
    ConvParam<T> up2;
    ConvParam<T> dec2a, dec2b;
    ConvParam<T> out;
};

template <typename T>
struct ParamRef {
    const char* name;
    ConvParam<T>* param;
};

template <typename T>
std::array<ParamRef<T>, 13> param_entries(NetworkParams<T>& p) {
    return {{{"enc1a", &p.enc1a},
             {"enc1b", &p.enc1b},
             {"enc2a", &p.enc2a},
             {"enc2b", &p.enc2b},
             {"enc3a", &p.enc3a},
             {"enc3b", &p.enc3b},
             {"up1", &p.up1},
             {"dec1a", &p.dec1a},
             {"dec1b", &p.dec1b},
             {"up2", &p.up2},
             {"dec2a", &p.dec2a},
             {"dec2b", &p.dec2b},
             {"out", &p.out}}};
}

template <typename T>
struct ConstParamRef {
    const char* name;
    const ConvParam<T>* param;
};

template <typename T>
std::array<ConstParamRef<T>, 13> param_entries(const NetworkParams<T>& p) {
    return {{{"enc1a", &p.enc1a},
             {"enc1b", &p.enc1b},
             {"enc2a", &p.enc2a},
             {"enc2b", &p.enc2b},
             {"enc3a", &p.enc3a},
             {"enc3b", &p.enc3b},
             {"up1", &p.up1},
             {"dec1a", &p.dec1a},
             {"dec1b", &p.dec1b},
             {"up2", &p.up2},
             {"dec2a", &p.dec2a},
             {"dec2b", &p.dec2b},
             {"out", &p.out}}};
}

namespace detail {

template <typename T>
ConvParam<T> zero_conv(int co, int ci, int kh, int kw) {
    ConvParam<T> p;
    p.weight = Tensor4<T>(co, ci, kh, kw);
    p.bias.assign(co, T(0));
    return p;
}

}  // namespace detail

/// Allocates all parameter tensors for `config`, zero-filled.
template <typename T>
NetworkParams<T> zero_params(const NetworkConfig& config) {
    if (config.in_channels < 1 || config.c1 < 1 || config.c2 < 1 || config.c3 < 1)
        throw ShapeError("zero_params: channel counts must be >= 1");
    NetworkParams<T> p;
    p.config = config;
    p.enc1a = detail::zero_conv<T>(config.c1, config.in_channels, 3, 3);
    p.enc1b = detail::zero_conv<T>(config.c1, config.c1, 3, 3);
    p.enc2a = detail::zero_conv<T>(config.c2, config.c1, 3, 3);
    p.enc2b = detail::zero_conv<T>(config.c2, config.c2, 3, 3);
    p.enc3a = detail::zero_conv<T>(config.c3, config.c2, 3, 3);
    p.enc3b = detail::zero_conv<T>(config.c3, config.c3, 3, 3);
    p.up1 = detail::zero_conv<T>(config.c2, config.c3, 2, 2);
    p.dec1a = detail::zero_conv<T>(config.c2, 2 * config.c2, 3, 3);
    p.dec1b = detail::zero_conv<T>(config.c2, config.c2, 3, 3);
    p.up2 = detail::zero_conv<T>(config.c1, config.c2, 2, 2);
    p.dec2a = detail::zero_conv<T>(config.c1, 2 * config.c1, 3, 3);
    p.dec2b = detail::zero_conv<T>(config.c1, config.c1, 3, 3);
    p.out = detail::zero_conv<T>(1, config.c1, 1, 1);
    return p;
}

/// He-style initialization: zero-mean normals with variance 2/fan_in, zero
/// biases. For the stride-2 transposed convolutions each output pixel sums
/// one tap per input channel, so fan_in is the channel count alone.
template <typename T>
NetworkParams<T> init_params(const NetworkConfig& config, Rng& rng) {
    NetworkParams<T> p = zero_params<T>(config);
    for (auto& entry : param_entries(p)) {
        const Tensor4<T>& shape = entry.param->weight;
        const bool transposed = (shape.h == 2);
        const double fan_in = transposed ? shape.c : static_cast<double>(shape.c) * shape.h * shape.w;
        const double stddev = std::sqrt(2.0 / fan_in);
        for (auto& v : entry.param->weight.v) v = static_cast<T>(stddev * rng.normal());
    }
    return p;
}

template <typename T>
struct ForwardCache {
    Tensor4<T> x;
    Tensor4<T> z1a, a1a, z1b, a1b;
    Tensor4<T> p1;
    std::vector<std::int32_t> idx1;
    Tensor4<T> z2a, a2a, z2b, a2b;
    Tensor4<T> p2;
    std::vector<std::int32_t> idx2;
    Tensor4<T> z3a, a3a, z3b, a3b;
    Tensor4<T> u1, cat1;
    Tensor4<T> z4a, a4a, z4b, a4b;
    Tensor4<T> u2, cat2;
    Tensor4<T> z5a, a5a, z5b, a5b;
};

template <typename T>
struct ForwardResult {
    Tensor4<T> logits;
    ForwardCache<T> cache;
};

template <typename T>
ForwardResult<T> forward(const NetworkParams<T>& params, const Tensor4<T>& x) {
    if (x.c != params.config.in_channels)
        throw ShapeError("forward: expected " + std::to_string(params.config.in_channels) +
                         " input channels, got " + std::to_string(x.c));
    if (x.h % 4 != 0 || x.w % 4 != 0 || x.h == 0 || x.w == 0)
        throw ShapeError("forward: spatial size must be divisible by 4, got " + x.shape_str());
    ForwardResult<T> r;
    ForwardCache<T>& c = r.cache;
    c.x = x;
    c.z1a = conv2d(x, params.enc1a.weight, std::span<const T>(params.enc1a.bias));
    c.a1a = relu(c.z1a);
    c.z1b = conv2d(c.a1a, params.enc1b.weight, std::span<const T>(params.enc1b.bias));
    c.a1b = relu(c.z1b);
    auto pool1 = maxpool2(c.a1b);
    c.p1 = std::move(pool1.out);
    c.idx1 = std::move(pool1.argmax);
    c.z2a = conv2d(c.p1, params.enc2a.weight, std::span<const T>(params.enc2a.bias));
    c.a2a = relu(c.z2a);
    c.z2b = conv2d(c.a2a, params.enc2b.weight, std::span<const T>(params.enc2b.bias));
    c.a2b = relu(c.z2b);
    auto pool2 = maxpool2(c.a2b);
    c.p2 = std::move(pool2.out);
    c.idx2 = std::move(pool2.argmax);
    c.z3a = conv2d(c.p2, params.enc3a.weight, std::span<const T>(params.enc3a.bias));
    c.a3a = relu(c.z3a);
    c.z3b = conv2d(c.a3a, params.enc3b.weight, std::span<const T>(params.enc3b.bias));
    c.a3b = relu(c.z3b);
    c.u1 = upconv2(c.a3b, params.up1.weight, std::span<const T>(params.up1.bias));
    c.cat1 = concat_channels(c.u1, c.a2b);
    c.z4a = conv2d(c.cat1, params.dec1a.weight, std::span<const T>(params.dec1a.bias));
    c.a4a = relu(c.z4a);
    c.z4b = conv2d(c.a4a, params.dec1b.weight, std::span<const T>(params.dec1b.bias));
    c.a4b = relu(c.z4b);
    c.u2 = upconv2(c.a4b, params.up2.weight, std::span<const T>(params.up2.bias));
    c.cat2 = concat_channels(c.u2, c.a1b);
    c.z5a = conv2d(c.cat2, params.dec2a.weight, std::span<const T>(params.dec2a.bias));
    c.a5a = relu(c.z5a);
    c.z5b = conv2d(c.a5a, params.dec2b.weight, std::span<const T>(params.dec2b.bias));
    c.a5b = relu(c.z5b);
    r.logits = conv2d(c.a5b, params.out.weight, std::span<const T>(params.out.bias));
    return r;
}

template <typename T>
struct BackwardResult {
    NetworkParams<T> grads;
    Tensor4<T> dx;
};

template <typename T>
BackwardResult<T> backward(const NetworkParams<T>& params, const ForwardCache<T>& cache,
                           const Tensor4<T>& d_logits) {
    if (d_logits.n != cache.x.n || d_logits.c != 1 || d_logits.h != cache.x.h ||
        d_logits.w != cache.x.w)
        throw ShapeError("backward: upstream gradient shape mismatch " + d_logits.shape_str());
    BackwardResult<T> r;
    r.grads = zero_params<T>(params.config);

    auto g_out = conv2d_backward(d_logits, cache.a5b, params.out.weight);
    r.grads.out.weight = std::move(g_out.dkernel);
    r.grads.out.bias = std::move(g_out.dbias);

    auto d_z5b = relu_backward(g_out.dx, cache.z5b);
    auto g5b = conv2d_backward(d_z5b, cache.a5a, params.dec2b.weight);
    r.grads.dec2b.weight = std::move(g5b.dkernel);
    r.grads.dec2b.bias = std::move(g5b.dbias);

    auto d_z5a = relu_backward(g5b.dx, cache.z5a);
    auto g5a = conv2d_backward(d_z5a, cache.cat2, params.dec2a.weight);
    r.grads.dec2a.weight = std::move(g5a.dkernel);
    r.grads.dec2a.bias = std::move(g5a.dbias);

    auto [d_u2, d_skip1] = split_channels(g5a.dx, cache.u2.c);
    auto g_up2 = upconv2_backward(d_u2, cache.a4b, params.up2.weight);
    r.grads.up2.weight = std::move(g_up2.dkernel);
    r.grads.up2.bias = std::move(g_up2.dbias);

    auto d_z4b = relu_backward(g_up2.dx, cache.z4b);
    auto g4b = conv2d_backward(d_z4b, cache.a4a, params.dec1b.weight);
    r.grads.dec1b.weight = std::move(g4b.dkernel);
    r.grads.dec1b.bias = std::move(g4b.dbias);

    auto d_z4a = relu_backward(g4b.dx, cache.z4a);
    auto g4a = conv2d_backward(d_z4a, cache.cat1, params.dec1a.weight);
    r.grads.dec1a.weight = std::move(g4a.dkernel);
    r.grads.dec1a.bias = std::move(g4a.dbias);

    auto [d_u1, d_skip2] = split_channels(g4a.dx, cache.u1.c);
    auto g_up1 = upconv2_backward(d_u1, cache.a3b, params.up1.weight);
    r.grads.up1.weight = std::move(g_up1.dkernel);
    r.grads.up1.bias = std::move(g_up1.dbias);

    auto d_z3b = relu_backward(g_up1.dx, cache.z3b);
    auto g3b = conv2d_backward(d_z3b, cache.a3a, params.enc3b.weight);
    r.grads.enc3b.weight = std::move(g3b.dkernel);
    r.grads.enc3b.bias = std::move(g3b.dbias);

    auto d_z3a = relu_backward(g3b.dx, cache.z3a);
    auto g3a = conv2d_backward(d_z3a, cache.p2, params.enc3a.weight);
    r.grads.enc3a.weight = std::move(g3a.dkernel);
    r.grads.enc3a.bias = std::move(g3a.dbias);

    auto d_a2b = maxpool2_backward(g3a.dx, cache.idx2, cache.a2b.h, cache.a2b.w);
    for (std::size_t i = 0; i < d_a2b.v.size(); ++i) d_a2b.v[i] += d_skip2.v[i];

    auto d_z2b = relu_backward(d_a2b, cache.z2b);
    auto g2b = conv2d_backward(d_z2b, cache.a2a, params.enc2b.weight);
    r.grads.enc2b.weight = std::move(g2b.dkernel);
    r.grads.enc2b.bias = std::move(g2b.dbias);

    auto d_z2a = relu_backward(g2b.dx, cache.z2a);
    auto g2a = conv2d_backward(d_z2a, cache.p1, params.enc2a.weight);
    r.grads.enc2a.weight = std::move(g2a.dkernel);
    r.grads.enc2a.bias = std::move(g2a.dbias);

    auto d_a1b = maxpool2_backward(g2a.dx, cache.idx1, cache.a1b.h, cache.a1b.w);
    for (std::size_t i = 0; i < d_a1b.v.size(); ++i) d_a1b.v[i] += d_skip1.v[i];

    auto d_z1b = relu_backward(d_a1b, cache.z1b);
    auto g1b = conv2d_backward(d_z1b, cache.a1a, params.enc1b.weight);
    r.grads.enc1b.weight = std::move(g1b.dkernel);
    r.grads.enc1b.bias = std::move(g1b.dbias);

    auto d_z1a = relu_backward(g1b.dx, cache.z1a);
    auto g1a = conv2d_backward(d_z1a, cache.x, params.enc1a.weight);
    r.grads.enc1a.weight = std::move(g1a.dkernel);
    r.grads.enc1a.bias = std::move(g1a.dbias);
    r.dx = std::move(g1a.dx);
    return r;
}

/// Elementwise sigmoid of the logits.
template <typename T>
Tensor4<T> sigmoid(const Tensor4<T>& logits) {
    Tensor4<T> out = logits;
    for (auto& v : out.v) {
        if (v >= T(0)) {
            const T e = std::exp(-v);
            v = T(1) / (T(1) + e);
        } else {
            const T e = std::exp(v);
            v = e / (T(1) + e);
        }
    }
    return out;
}

template <typename T>
void accumulate_params(NetworkParams<T>& into, const NetworkParams<T>& from) {
    auto dst = param_entries(into);
    auto src = param_entries(from);
    for (std::size_t i = 0; i < dst.size(); ++i) {
        auto& d = *dst[i].param;
        const auto& s = *src[i].param;
        for (std::size_t k = 0; k < d.weight.v.size(); ++k) d.weight.v[k] += s.weight.v[k];
        for (std::size_t k = 0; k < d.bias.size(); ++k) d.bias[k] += s.bias[k];
    }
}

}  // namespace vesselseg
