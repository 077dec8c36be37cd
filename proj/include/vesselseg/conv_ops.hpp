#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "vesselseg/error.hpp"
#include "vesselseg/tensor.hpp"

namespace vesselseg {

namespace detail {

// out[j] += k * in[j], contiguous, auto-vectorizes.
template <typename T>
inline void axpy(T* out, const T* in, T k, int len) {
    for (int j = 0; j < len; ++j) out[j] += k * in[j];
}

// Four-lane dot product. The lane split fixes the summation order while
// keeping the dependency chains short enough to pipeline.
template <typename T>
inline T dot4(const T* a, const T* b, int len) {
    T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
    int j = 0;
    for (; j + 4 <= len; j += 4) {
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    for (; j < len; ++j) s0 += a[j] * b[j];
    return (s0 + s1) + (s2 + s3);
}

}  // namespace detail

/// 2-D cross-correlation with zero same-padding. Kernel layout is
/// (out_channels, in_channels, kh, kw) with odd kh, kw; spatial size is
/// preserved.
template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& kernel, std::span<const T> bias) {
    if (kernel.c != x.c)
        throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.c) +
                         " input channels, got " + std::to_string(x.c));
    if (kernel.h % 2 == 0 || kernel.w % 2 == 0) throw ShapeError("conv2d: kernel must be odd");
    if (static_cast<int>(bias.size()) != kernel.n) throw ShapeError("conv2d: bias size mismatch");
    const int co_count = kernel.n, ci_count = x.c, h = x.h, w = x.w;
    const int p = kernel.h / 2, q = kernel.w / 2;
    Tensor4<T> out(x.n, co_count, h, w);
    for (int nn = 0; nn < x.n; ++nn) {
        for (int co = 0; co < co_count; ++co) {
            T* oplane = out.plane(nn, co);
            std::fill(oplane, oplane + h * w, bias[co]);
            for (int ci = 0; ci < ci_count; ++ci) {
                const T* xplane = x.plane(nn, ci);
                for (int u = 0; u < kernel.h; ++u) {
                    for (int v = 0; v < kernel.w; ++v) {
                        const T kval = kernel.at(co, ci, u, v);
                        if (kval == T(0)) continue;
                        const int i0 = std::max(0, p - u), i1 = std::min(h, h + p - u);
                        const int j0 = std::max(0, q - v), j1 = std::min(w, w + q - v);
                        for (int i = i0; i < i1; ++i) {
                            T* orow = oplane + i * w + j0;
                            const T* xrow = xplane + (i + u - p) * w + (j0 + v - q);
                            detail::axpy(orow, xrow, kval, j1 - j0);
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
struct ConvGrads {
    Tensor4<T> dx;
    Tensor4<T> dkernel;
    std::vector<T> dbias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& d_out, const Tensor4<T>& x,
                             const Tensor4<T>& kernel) {
    if (d_out.n != x.n || d_out.c != kernel.n || d_out.h != x.h || d_out.w != x.w)
        throw ShapeError("conv2d_backward: upstream gradient shape mismatch");
    if (kernel.c != x.c) throw ShapeError("conv2d_backward: kernel/input channel mismatch");
    const int co_count = kernel.n, ci_count = x.c, h = x.h, w = x.w;
    const int p = kernel.h / 2, q = kernel.w / 2;
    ConvGrads<T> g;
    g.dx = Tensor4<T>(x.n, x.c, h, w);
    g.dkernel = Tensor4<T>(kernel.n, kernel.c, kernel.h, kernel.w);
    g.dbias.assign(co_count, T(0));
    for (int nn = 0; nn < x.n; ++nn) {
        for (int co = 0; co < co_count; ++co) {
            const T* dplane = d_out.plane(nn, co);
            T bsum = T(0);
            for (int i = 0; i < h * w; ++i) bsum += dplane[i];
            g.dbias[co] += bsum;
            for (int ci = 0; ci < ci_count; ++ci) {
                const T* xplane = x.plane(nn, ci);
                T* dxplane = g.dx.plane(nn, ci);
                for (int u = 0; u < kernel.h; ++u) {
                    for (int v = 0; v < kernel.w; ++v) {
                        const int i0 = std::max(0, p - u), i1 = std::min(h, h + p - u);
                        const int j0 = std::max(0, q - v), j1 = std::min(w, w + q - v);
                        // dK accumulation: dot of the overlapping rows
                        T ksum = T(0);
                        for (int i = i0; i < i1; ++i) {
                            const T* drow = dplane + i * w + j0;
                            const T* xrow = xplane + (i + u - p) * w + (j0 + v - q);
                            ksum += detail::dot4(drow, xrow, j1 - j0);
                        }
                        g.dkernel.at(co, ci, u, v) += ksum;
                        // dX accumulation: scatter the same taps back
                        const T kval = kernel.at(co, ci, u, v);
                        if (kval == T(0)) continue;
                        for (int i = i0; i < i1; ++i) {
                            const T* drow = dplane + i * w + j0;
                            T* dxrow = dxplane + (i + u - p) * w + (j0 + v - q);
                            detail::axpy(dxrow, drow, kval, j1 - j0);
                        }
                    }
                }
            }
        }
    }
    return g;
}

template <typename T>
Tensor4<T> relu(const Tensor4<T>& x) {
    Tensor4<T> out = x;
    for (auto& v : out.v) v = std::max(T(0), v);
    return out;
}

/// dL/dz given dL/da and the pre-activation z (derivative 0 at z <= 0).
template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& d_act, const Tensor4<T>& pre) {
    require_same_shape(d_act, pre, "relu_backward");
    Tensor4<T> out = d_act;
    for (std::size_t i = 0; i < out.v.size(); ++i)
        if (pre.v[i] <= T(0)) out.v[i] = T(0);
    return out;
}

template <typename T>
struct PoolResult {
    Tensor4<T> out;
    std::vector<std::int32_t> argmax;  // flat (h*w) index per output element
};

/// 2x2 max pooling with stride 2. Ties resolve to the first maximal element
/// in row-major window order, which fixes the backward routing.
template <typename T>
PoolResult<T> maxpool2(const Tensor4<T>& x) {
    if (x.h % 2 != 0 || x.w % 2 != 0)
        throw ShapeError("maxpool2: spatial size must be even, got " + x.shape_str());
    const int oh = x.h / 2, ow = x.w / 2;
    PoolResult<T> r;
    r.out = Tensor4<T>(x.n, x.c, oh, ow);
    r.argmax.assign(r.out.size(), 0);
    std::size_t oidx = 0;
    for (int nn = 0; nn < x.n; ++nn) {
        for (int ci = 0; ci < x.c; ++ci) {
            const T* plane = x.plane(nn, ci);
            for (int i = 0; i < oh; ++i) {
                for (int j = 0; j < ow; ++j, ++oidx) {
                    const int base = 2 * i * x.w + 2 * j;
                    const int cand[4] = {base, base + 1, base + x.w, base + x.w + 1};
                    int best = cand[0];
                    T bestv = plane[cand[0]];
                    for (int t = 1; t < 4; ++t)
                        if (plane[cand[t]] > bestv) {
                            bestv = plane[cand[t]];
                            best = cand[t];
                        }
                    r.out.v[oidx] = bestv;
                    r.argmax[oidx] = best;
                }
            }
        }
    }
    return r;
}

template <typename T>
Tensor4<T> maxpool2_backward(const Tensor4<T>& d_out, const std::vector<std::int32_t>& argmax,
                             int in_h, int in_w) {
    if (argmax.size() != d_out.size()) throw ShapeError("maxpool2_backward: argmax size mismatch");
    Tensor4<T> dx(d_out.n, d_out.c, in_h, in_w);
    std::size_t oidx = 0;
    for (int nn = 0; nn < d_out.n; ++nn)
        for (int ci = 0; ci < d_out.c; ++ci) {
            T* plane = dx.plane(nn, ci);
            for (int i = 0; i < d_out.h * d_out.w; ++i, ++oidx) plane[argmax[oidx]] += d_out.v[oidx];
        }
    return dx;
}

/// Transposed convolution with a 2x2 kernel and stride 2; doubles the spatial
/// size. Kernel layout (out_channels, in_channels, 2, 2); every output pixel
/// receives exactly one tap per input channel.
template <typename T>
Tensor4<T> upconv2(const Tensor4<T>& x, const Tensor4<T>& kernel, std::span<const T> bias) {
    if (kernel.c != x.c)
        throw ShapeError("upconv2: kernel expects " + std::to_string(kernel.c) +
                         " input channels, got " + std::to_string(x.c));
    if (kernel.h != 2 || kernel.w != 2) throw ShapeError("upconv2: kernel must be 2x2");
    if (static_cast<int>(bias.size()) != kernel.n) throw ShapeError("upconv2: bias size mismatch");
    const int co_count = kernel.n, h = x.h, w = x.w;
    Tensor4<T> out(x.n, co_count, 2 * h, 2 * w);
    for (int nn = 0; nn < x.n; ++nn) {
        for (int co = 0; co < co_count; ++co) {
            T* oplane = out.plane(nn, co);
            std::fill(oplane, oplane + 4 * h * w, bias[co]);
            for (int ci = 0; ci < x.c; ++ci) {
                const T* xplane = x.plane(nn, ci);
                for (int di = 0; di < 2; ++di) {
                    for (int dj = 0; dj < 2; ++dj) {
                        const T kval = kernel.at(co, ci, di, dj);
                        for (int i = 0; i < h; ++i) {
                            T* orow = oplane + (2 * i + di) * 2 * w + dj;
                            const T* xrow = xplane + i * w;
                            for (int j = 0; j < w; ++j) orow[2 * j] += kval * xrow[j];
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
ConvGrads<T> upconv2_backward(const Tensor4<T>& d_out, const Tensor4<T>& x,
                              const Tensor4<T>& kernel) {
    if (d_out.n != x.n || d_out.c != kernel.n || d_out.h != 2 * x.h || d_out.w != 2 * x.w)
        throw ShapeError("upconv2_backward: upstream gradient shape mismatch");
    const int h = x.h, w = x.w;
    ConvGrads<T> g;
    g.dx = Tensor4<T>(x.n, x.c, h, w);
    g.dkernel = Tensor4<T>(kernel.n, kernel.c, 2, 2);
    g.dbias.assign(kernel.n, T(0));
    for (int nn = 0; nn < x.n; ++nn) {
        for (int co = 0; co < kernel.n; ++co) {
            const T* dplane = d_out.plane(nn, co);
            T bsum = T(0);
            for (int i = 0; i < 4 * h * w; ++i) bsum += dplane[i];
            g.dbias[co] += bsum;
            for (int ci = 0; ci < x.c; ++ci) {
                const T* xplane = x.plane(nn, ci);
                T* dxplane = g.dx.plane(nn, ci);
                for (int di = 0; di < 2; ++di) {
                    for (int dj = 0; dj < 2; ++dj) {
                        const T kval = kernel.at(co, ci, di, dj);
                        T ksum = T(0);
                        for (int i = 0; i < h; ++i) {
                            const T* drow = dplane + (2 * i + di) * 2 * w + dj;
                            const T* xrow = xplane + i * w;
                            T s0 = T(0), s1 = T(0);
                            int j = 0;
                            for (; j + 2 <= w; j += 2) {
                                s0 += drow[2 * j] * xrow[j];
                                s1 += drow[2 * (j + 1)] * xrow[j + 1];
                            }
                            for (; j < w; ++j) s0 += drow[2 * j] * xrow[j];
                            ksum += s0 + s1;
                            T* dxrow = dxplane + i * w;
                            for (int jj = 0; jj < w; ++jj) dxrow[jj] += kval * drow[2 * jj];
                        }
                        g.dkernel.at(co, ci, di, dj) += ksum;
                    }
                }
            }
        }
    }
    return g;
}

template <typename T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
    if (a.n != b.n || a.h != b.h || a.w != b.w)
        throw ShapeError("concat_channels: incompatible shapes " + a.shape_str() + " vs " +
                         b.shape_str());
    Tensor4<T> out(a.n, a.c + b.c, a.h, a.w);
    const std::size_t plane = static_cast<std::size_t>(a.h) * a.w;
    for (int nn = 0; nn < a.n; ++nn) {
        std::copy(a.plane(nn, 0), a.plane(nn, 0) + a.c * plane, out.plane(nn, 0));
        std::copy(b.plane(nn, 0), b.plane(nn, 0) + b.c * plane, out.plane(nn, a.c));
    }
    return out;
}

template <typename T>
std::pair<Tensor4<T>, Tensor4<T>> split_channels(const Tensor4<T>& d, int c_first) {
    if (c_first <= 0 || c_first >= d.c) throw ShapeError("split_channels: bad split point");
    Tensor4<T> a(d.n, c_first, d.h, d.w), b(d.n, d.c - c_first, d.h, d.w);
    const std::size_t plane = static_cast<std::size_t>(d.h) * d.w;
    for (int nn = 0; nn < d.n; ++nn) {
        std::copy(d.plane(nn, 0), d.plane(nn, 0) + c_first * plane, a.plane(nn, 0));
        std::copy(d.plane(nn, c_first), d.plane(nn, c_first) + (d.c - c_first) * plane,
                  b.plane(nn, 0));
    }
    return {std::move(a), std::move(b)};
}

}  // namespace vesselseg
