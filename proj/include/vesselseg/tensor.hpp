#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vesselseg/error.hpp"

namespace vesselseg {

/// Rank-4 array in (batch, channel, height, width) order, row-major.
template <typename T>
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> v;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_), v(static_cast<std::size_t>(n_) * c_ * h_ * w_, T(0)) {}

    std::size_t size() const { return v.size(); }

    T& at(int ni, int ci, int y, int x) {
        return v[((static_cast<std::size_t>(ni) * c + ci) * h + y) * w + x];
    }
    T at(int ni, int ci, int y, int x) const {
        return v[((static_cast<std::size_t>(ni) * c + ci) * h + y) * w + x];
    }

    T* plane(int ni, int ci) {
        return v.data() + (static_cast<std::size_t>(ni) * c + ci) * h * w;
    }
    const T* plane(int ni, int ci) const {
        return v.data() + (static_cast<std::size_t>(ni) * c + ci) * h * w;
    }

    bool same_shape(const Tensor4& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    void fill(T value) { std::fill(v.begin(), v.end(), value); }

    std::string shape_str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) +
               "," + std::to_string(w) + ")";
    }
};

template <typename T>
void require_same_shape(const Tensor4<T>& a, const Tensor4<T>& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
}

/// Extracts one batch item as an (1, c, h, w) tensor.
template <typename T>
Tensor4<T> slice_item(const Tensor4<T>& t, int item) {
    Tensor4<T> out(1, t.c, t.h, t.w);
    const std::size_t stride = out.size();
    std::copy(t.v.begin() + item * stride, t.v.begin() + (item + 1) * stride, out.v.begin());
    return out;
}

}  // namespace vesselseg
