#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <unordered_set>
#include <vector>

#include "vesselseg/error.hpp"
#include "vesselseg/rng.hpp"

namespace vesselseg {

enum class Region { foreground, background };

/// A pixel belongs to the foreground region when its label is >= 0.5.
template <typename T>
bool in_region(T label, Region region) {
    return (label >= T(0.5)) == (region == Region::foreground);
}

/// Edge weight between two label values, 1 - |t_j - t_k|. Identically 1 for
/// two pixels of the same hard-labeled region.
template <typename T>
T similarity(T t_j, T t_k) {
    if (!(t_j >= T(0) && t_j <= T(1)) || !(t_k >= T(0) && t_k <= T(1)))
        throw InvalidLabelError("similarity: label outside [0,1]");
    return T(1) - std::abs(t_j - t_k);
}

/// Complete graph over a sampled node set of one region. `weights` is the
/// m x m symmetric adjacency with zero diagonal, row-major.
template <typename T>
struct RegionGraph {
    Region region = Region::foreground;
    std::vector<int> nodes;
    std::vector<T> weights;

    int size() const { return static_cast<int>(nodes.size()); }
    T weight(int j, int k) const { return weights[static_cast<std::size_t>(j) * nodes.size() + k]; }
};

/// L = D - A over a sampled node set; symmetric, zero row sums, PSD.
template <typename T>
struct RegionLaplacian {
    std::vector<int> nodes;
    std::vector<T> matrix;

    int size() const { return static_cast<int>(nodes.size()); }
    T entry(int j, int k) const { return matrix[static_cast<std::size_t>(j) * nodes.size() + k]; }
};

template <typename T>
struct SmoothingResult {
    T value = T(0);
    std::vector<T> gradient;  // one entry per patch pixel, zero off the node sets
};

/// Draws min(m, available) distinct pixel indices of the requested region,
/// uniformly without replacement. Returned sorted ascending. An empty region
/// yields an empty sequence.
template <typename T>
std::vector<int> sample_region_nodes(std::span<const T> labels, Region region, int m, Rng& rng) {
    std::vector<int> members;
    for (int i = 0; i < static_cast<int>(labels.size()); ++i)
        if (in_region(labels[i], region)) members.push_back(i);
    const int take = std::min<int>(m, static_cast<int>(members.size()));
    if (take <= 0) return {};
    // partial Fisher-Yates
    for (int i = 0; i < take; ++i) {
        const std::size_t j = i + rng.uniform_index(members.size() - i);
        std::swap(members[i], members[j]);
    }
    members.resize(take);
    std::sort(members.begin(), members.end());
    return members;
}

template <typename T>
RegionGraph<T> build_region_graph(std::span<const int> nodes, std::span<const T> labels,
                                  Region region) {
    RegionGraph<T> g;
    g.region = region;
    g.nodes.assign(nodes.begin(), nodes.end());
    std::unordered_set<int> seen;
    for (int idx : g.nodes) {
        if (idx < 0 || idx >= static_cast<int>(labels.size()))
            throw InvalidGraphError("build_region_graph: node index out of range");
        if (!seen.insert(idx).second)
            throw InvalidGraphError("build_region_graph: duplicate node index");
    }
    const int m = g.size();
    g.weights.assign(static_cast<std::size_t>(m) * m, T(0));
    for (int j = 0; j < m; ++j) {
        for (int k = j + 1; k < m; ++k) {
            const T b = similarity(labels[g.nodes[j]], labels[g.nodes[k]]);
            g.weights[static_cast<std::size_t>(j) * m + k] = b;
            g.weights[static_cast<std::size_t>(k) * m + j] = b;
        }
    }
    return g;
}

template <typename T>
RegionLaplacian<T> laplacian(const RegionGraph<T>& graph) {
    const int m = graph.size();
    RegionLaplacian<T> l;
    l.nodes = graph.nodes;
    l.matrix.assign(static_cast<std::size_t>(m) * m, T(0));
    for (int j = 0; j < m; ++j) {
        T degree = T(0);
        for (int k = 0; k < m; ++k) degree += graph.weight(j, k);
        for (int k = 0; k < m; ++k)
            l.matrix[static_cast<std::size_t>(j) * m + k] = -graph.weight(j, k);
        l.matrix[static_cast<std::size_t>(j) * m + j] = degree;
    }
    return l;
}

namespace detail {

// Adds y_g' L y_g to value and 2 L y_g to the scattered gradient.
template <typename T>
void accumulate_region(const RegionLaplacian<T>& l, std::span<const T> y, T& value,
                       std::vector<T>& gradient) {
    const int m = l.size();
    for (int idx : l.nodes)
        if (idx < 0 || idx >= static_cast<int>(y.size()))
            throw InvalidGraphError("smoothing: node index outside prediction range");
    std::vector<T> yg(m);
    for (int j = 0; j < m; ++j) yg[j] = y[l.nodes[j]];
    for (int j = 0; j < m; ++j) {
        T row = T(0);
        const T* lrow = l.matrix.data() + static_cast<std::size_t>(j) * m;
        for (int k = 0; k < m; ++k) row += lrow[k] * yg[k];
        value += yg[j] * row;
        gradient[l.nodes[j]] += T(2) * row;
    }
}

}  // namespace detail

/// Smoothing penalty S = y_F' L_F y_F + y_B' L_B y_B and its gradient with
/// respect to the per-pixel predictions. Each undirected edge contributes
/// beta_jk (y_j - y_k)^2 exactly once.
template <typename T>
SmoothingResult<T> smoothing(const RegionLaplacian<T>& l_f, const RegionLaplacian<T>& l_b,
                             std::span<const T> y) {
    SmoothingResult<T> r;
    r.gradient.assign(y.size(), T(0));
    detail::accumulate_region(l_f, y, r.value, r.gradient);
    detail::accumulate_region(l_b, y, r.value, r.gradient);
    return r;
}

/// Laplacian pair for one patch, freshly sampled on both regions.
template <typename T>
struct PatchGraphs {
    RegionLaplacian<T> fg;
    RegionLaplacian<T> bg;
};

template <typename T>
PatchGraphs<T> sample_patch_graphs(std::span<const T> labels, int m, Rng& rng) {
    PatchGraphs<T> g;
    const auto fg_nodes = sample_region_nodes(labels, Region::foreground, m, rng);
    const auto bg_nodes = sample_region_nodes(labels, Region::background, m, rng);
    g.fg = laplacian(build_region_graph<T>(fg_nodes, labels, Region::foreground));
    g.bg = laplacian(build_region_graph<T>(bg_nodes, labels, Region::background));
    return g;
}

}  // namespace vesselseg
