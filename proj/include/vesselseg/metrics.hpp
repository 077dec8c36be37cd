#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "vesselseg/error.hpp"
#include "vesselseg/image.hpp"

namespace vesselseg {

struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::int64_t total() const { return tp + fp + tn + fn; }
};

/// Counts over in-mask pixels; a prediction is positive when prob >= threshold.
template <typename T>
ConfusionCounts confusion(std::span<const T> probs, std::span<const T> label,
                          std::span<const std::uint8_t> mask, T threshold) {
    if (probs.size() != label.size()) throw ShapeError("confusion: size mismatch");
    if (!mask.empty() && mask.size() != probs.size())
        throw ShapeError("confusion: mask size mismatch");
    if (!(threshold > T(0) && threshold < T(1)))
        throw Error("confusion: threshold must lie in (0,1)");
    ConfusionCounts c;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (!mask.empty() && mask[i] == 0) continue;
        const bool pred = probs[i] >= threshold;
        const bool pos = label[i] >= T(0.5);
        if (pred && pos) ++c.tp;
        else if (pred && !pos) ++c.fp;
        else if (!pred && pos) ++c.fn;
        else ++c.tn;
    }
    return c;
}

inline double sensitivity(const ConfusionCounts& c) {
    if (c.tp + c.fn == 0) throw EmptyEvaluationError("sensitivity undefined: no positives");
    return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

inline double specificity(const ConfusionCounts& c) {
    if (c.tn + c.fp == 0) throw EmptyEvaluationError("specificity undefined: no negatives");
    return static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
}

inline double accuracy(const ConfusionCounts& c) {
    if (c.total() == 0) throw EmptyEvaluationError("accuracy undefined: no evaluated pixels");
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

/// Mann-Whitney AUC with midrank tie handling: P(score_pos > score_neg) plus
/// half the tie probability; identical to the trapezoidal ROC area.
template <typename T>
double auc(std::span<const T> probs, std::span<const T> label,
           std::span<const std::uint8_t> mask = {}) {
    if (probs.size() != label.size()) throw ShapeError("auc: size mismatch");
    if (!mask.empty() && mask.size() != probs.size()) throw ShapeError("auc: mask size mismatch");
    std::vector<std::size_t> idx;
    idx.reserve(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i)
        if (mask.empty() || mask[i] != 0) idx.push_back(i);
    std::int64_t positives = 0;
    for (std::size_t i : idx)
        if (label[i] >= T(0.5)) ++positives;
    const std::int64_t negatives = static_cast<std::int64_t>(idx.size()) - positives;
    if (positives == 0 || negatives == 0)
        throw DegenerateAucError("auc undefined on single-class input");

    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return probs[a] < probs[b];
    });
    long double rank_sum_pos = 0.0L;
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j < idx.size() && probs[idx[j]] == probs[idx[i]]) ++j;
        const long double midrank = (static_cast<long double>(i + 1) + static_cast<long double>(j)) / 2.0L;
        for (std::size_t k = i; k < j; ++k)
            if (label[idx[k]] >= T(0.5)) rank_sum_pos += midrank;
        i = j;
    }
    const long double p = static_cast<long double>(positives);
    const long double n = static_cast<long double>(negatives);
    return static_cast<double>((rank_sum_pos - p * (p + 1) / 2.0L) / (p * n));
}

struct MetricsReport {
    double se = 0.0, sp = 0.0, acc = 0.0, auc = 0.0;
    double threshold = 0.5;
    std::int64_t pixels = 0;
};

template <typename T>
MetricsReport compute_report(std::span<const T> probs, std::span<const T> label,
                             std::span<const std::uint8_t> mask, T threshold) {
    const ConfusionCounts c = confusion(probs, label, mask, threshold);
    MetricsReport r;
    r.se = sensitivity(c);
    r.sp = specificity(c);
    r.acc = accuracy(c);
    r.auc = auc(probs, label, mask);
    r.threshold = static_cast<double>(threshold);
    r.pixels = c.total();
    return r;
}

/// Fig-style confusion overlay: TP green, FN red, FP blue, TN and
/// out-of-mask black. Bit-exact colors.
template <typename T>
Image8 render_overlay(std::span<const T> probs, std::span<const T> label,
                      std::span<const std::uint8_t> mask, T threshold, int height, int width) {
    if (probs.size() != label.size() ||
        probs.size() != static_cast<std::size_t>(height) * width)
        throw ShapeError("render_overlay: size mismatch");
    if (!mask.empty() && mask.size() != probs.size())
        throw ShapeError("render_overlay: mask size mismatch");
    Image8 out(width, height, 3);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        std::uint8_t r = 0, g = 0, b = 0;
        if (mask.empty() || mask[i] != 0) {
            const bool pred = probs[i] >= threshold;
            const bool pos = label[i] >= T(0.5);
            if (pred && pos) g = 255;        // TP
            else if (!pred && pos) r = 255;  // FN
            else if (pred && !pos) b = 255;  // FP
        }
        out.pixels[3 * i] = r;
        out.pixels[3 * i + 1] = g;
        out.pixels[3 * i + 2] = b;
    }
    return out;
}

inline void write_metrics_csv(const std::string& path,
                              const std::vector<std::pair<std::string, MetricsReport>>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "image,se,sp,acc,auc,threshold,pixels\n";
    char buf[256];
    for (const auto& [name, r] : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%.6g,%lld\n", name.c_str(), r.se,
                      r.sp, r.acc, r.auc, r.threshold, static_cast<long long>(r.pixels));
        out << buf;
    }
}

}  // namespace vesselseg
