#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "vesselseg/adam.hpp"
#include "vesselseg/checkpoint.hpp"
#include "vesselseg/data_pipeline.hpp"
#include "vesselseg/metrics.hpp"
#include "vesselseg/objective.hpp"
#include "vesselseg/parallel.hpp"
#include "vesselseg/segnet.hpp"

namespace vesselseg {

enum class Precision { f32, f64 };

inline const char* to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

struct TrainConfig {
    double lambda = 1e-6;
    double learning_rate = 1e-3;
    int epochs = 100;
    int batch_size = 32;
    int patches_per_epoch = 20000;
    int sample_m = 32;
    std::uint64_t seed = 42;
    Reduction reduction = Reduction::sum;
    Precision precision = Precision::f32;
    int patch_size = 48;
    InputMode mode = InputMode::green;
    AugmentFlags augment;
    int val_images = 0;   // held out from the end of the sample list
    int val_patches = 200;
    NetworkConfig net;
    int threads = 0;  // 0 = hardware concurrency
    std::string out_dir;  // empty = keep everything in memory
};

inline void validate(const TrainConfig& cfg) {
    if (!(cfg.learning_rate > 0)) throw Error("train: learning_rate must be > 0");
    if (cfg.batch_size < 1) throw Error("train: batch_size must be >= 1");
    if (cfg.epochs < 1) throw Error("train: epochs must be >= 1");
    if (cfg.lambda < 0) throw Error("train: lambda must be nonnegative");
    if (cfg.patch_size % 4 != 0) throw Error("train: patch_size must be divisible by 4");
}

struct EpochStats {
    int epoch = 0;
    double mean_bce = 0.0;
    double mean_s = 0.0;
    double total_objective = 0.0;
    std::optional<double> val_auc;
};

inline std::string format_epoch_header(bool with_val) {
    return with_val ? "epoch,mean_bce,mean_s,total_objective,val_auc"
                    : "epoch,mean_bce,mean_s,total_objective";
}

inline std::string format_epoch_row(const EpochStats& e) {
    char buf[256];
    if (e.val_auc)
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g", e.epoch, e.mean_bce,
                      e.mean_s, e.total_objective, *e.val_auc);
    else
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g", e.epoch, e.mean_bce, e.mean_s,
                      e.total_objective);
    return buf;
}

template <typename T>
struct TrainResult {
    NetworkParams<T> params;
    std::vector<EpochStats> log;
    std::string log_text;  // the epoch CSV, exactly as written to disk
};

namespace detail {

// rng stream tags
inline constexpr std::uint64_t kTagInit = 1;
inline constexpr std::uint64_t kTagBatch = 2;
inline constexpr std::uint64_t kTagNodes = 3;
inline constexpr std::uint64_t kTagVal = 4;

template <typename T>
struct ItemStep {
    NetworkParams<T> grads;
    double bce = 0.0;
    double smoothing = 0.0;
};

/// Forward, objective, and backward for one batch item. `bce_scale` and
/// `s_scale` fold the batch reduction into the per-item logits gradient.
template <typename T>
ItemStep<T> run_item(const NetworkParams<T>& params, const Tensor4<T>& x_item,
                     const Tensor4<T>& t_item, const PatchGraphs<T>& graphs, T lambda,
                     T bce_scale, T s_scale) {
    auto fwd = forward(params, x_item);
    const std::size_t pixels = fwd.logits.v.size();

    Tensor4<T> d_logits(1, 1, fwd.logits.h, fwd.logits.w);
    std::vector<T> y(pixels);
    double bce = 0.0;
    for (std::size_t i = 0; i < pixels; ++i) {
        const T z = fwd.logits.v[i], t = t_item.v[i];
        bce += static_cast<double>(softplus(z) - t * z);
        y[i] = sigmoid_scalar(z);
        d_logits.v[i] = bce_scale * (y[i] - t);
    }
    auto s = smoothing(graphs.fg, graphs.bg, std::span<const T>(y));
    const T chain = lambda * s_scale;
    for (std::size_t i = 0; i < pixels; ++i)
        if (s.gradient[i] != T(0)) d_logits.v[i] += chain * s.gradient[i] * y[i] * (T(1) - y[i]);

    ItemStep<T> r;
    r.bce = bce;
    r.smoothing = static_cast<double>(s.value);
    auto bwd = backward(params, fwd.cache, d_logits);
    r.grads = std::move(bwd.grads);
    return r;
}

}  // namespace detail

/// Probability maps for a batch, one forward pass per item in parallel.
template <typename T>
Tensor4<T> forward_probs(const NetworkParams<T>& params, const Tensor4<T>& x, int threads) {
    Tensor4<T> probs(x.n, 1, x.h, x.w);
    parallel_for(x.n, threads, [&](int i) {
        auto fwd = forward(params, slice_item(x, i));
        auto p = sigmoid(fwd.logits);
        std::copy(p.v.begin(), p.v.end(), probs.v.begin() + static_cast<std::size_t>(i) * p.v.size());
    });
    return probs;
}

template <typename T>
struct ValSet {
    Tensor4<T> x;
    Tensor4<T> t;
};

/// Adam mini-batch training over random patches. Fully reproducible per
/// (seed, config, data); per-item work is parallel but all reductions run in
/// item order.
template <typename T>
TrainResult<T> train(const TrainConfig& cfg, const std::vector<FundusSample>& samples) {
    validate(cfg);
    if (samples.empty()) throw Error("train: empty dataset");
    const int val_count = std::min<int>(cfg.val_images, static_cast<int>(samples.size()) - 1);
    const int train_count = static_cast<int>(samples.size()) - val_count;
    if (train_count < 1) throw Error("train: no training images left after the validation split");

    std::vector<PreparedImage<T>> prepared;
    prepared.reserve(samples.size());
    for (const auto& s : samples) prepared.push_back(prepare_image<T>(s, cfg.mode));

    const int in_channels = input_mode_channels(cfg.mode);
    NetworkConfig net = cfg.net;
    net.in_channels = in_channels;

    Rng init_rng(derive_seed(cfg.seed, detail::kTagInit));
    TrainResult<T> result;
    result.params = init_params<T>(net, init_rng);
    AdamState<T> adam = AdamState<T>::zero_like(net);
    AdamConfig<T> adam_cfg;
    adam_cfg.lr = static_cast<T>(cfg.learning_rate);

    // fixed validation patch set, drawn once
    std::optional<ValSet<T>> val;
    if (val_count > 0 && cfg.val_patches > 0) {
        Rng val_rng(derive_seed(cfg.seed, detail::kTagVal));
        ValSet<T> v;
        v.x = Tensor4<T>(cfg.val_patches, in_channels, cfg.patch_size, cfg.patch_size);
        v.t = Tensor4<T>(cfg.val_patches, 1, cfg.patch_size, cfg.patch_size);
        for (int i = 0; i < cfg.val_patches; ++i) {
            const int img = train_count + static_cast<int>(val_rng.uniform_index(val_count));
            auto p = sample_one_patch(prepared[img], cfg.patch_size, val_rng, {}, img);
            std::copy(p.input.begin(), p.input.end(),
                      v.x.v.begin() + static_cast<std::size_t>(i) * p.input.size());
            std::copy(p.target.begin(), p.target.end(),
                      v.t.v.begin() + static_cast<std::size_t>(i) * p.target.size());
        }
        val = std::move(v);
    }

    std::ofstream log_file;
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        log_file.open(cfg.out_dir + "/epoch_log.csv");
        if (!log_file) throw IoError("cannot write epoch log in " + cfg.out_dir);
    }
    auto emit = [&](const std::string& line) {
        result.log_text += line;
        result.log_text += '\n';
        if (log_file) {
            log_file << line << '\n';
            log_file.flush();
        }
    };
    emit(format_epoch_header(val.has_value()));

    const int steps_per_epoch = std::max(1, cfg.patches_per_epoch / cfg.batch_size);
    const std::size_t patch_pixels =
        static_cast<std::size_t>(cfg.patch_size) * cfg.patch_size;
    const T bce_scale = cfg.reduction == Reduction::mean
                            ? T(1) / static_cast<T>(cfg.batch_size * patch_pixels)
                            : T(1);
    const T s_scale =
        cfg.reduction == Reduction::mean ? T(1) / static_cast<T>(cfg.batch_size) : T(1);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double epoch_bce = 0.0, epoch_s = 0.0;
        std::int64_t epoch_patches = 0;
        for (int step = 0; step < steps_per_epoch; ++step) {
            Rng batch_rng(derive_seed(cfg.seed, detail::kTagBatch,
                                      static_cast<std::uint64_t>(epoch),
                                      static_cast<std::uint64_t>(step)));
            std::vector<Tensor4<T>> xs(cfg.batch_size), ts(cfg.batch_size);
            for (int b = 0; b < cfg.batch_size; ++b) {
                const int img = static_cast<int>(batch_rng.uniform_index(train_count));
                auto p = sample_one_patch(prepared[img], cfg.patch_size, batch_rng, cfg.augment,
                                          img);
                Tensor4<T> x(1, in_channels, cfg.patch_size, cfg.patch_size);
                x.v = std::move(p.input);
                Tensor4<T> t(1, 1, cfg.patch_size, cfg.patch_size);
                t.v = std::move(p.target);
                xs[b] = std::move(x);
                ts[b] = std::move(t);
            }

            std::vector<detail::ItemStep<T>> items(cfg.batch_size);
            const std::uint64_t step_tag =
                static_cast<std::uint64_t>(epoch) * 1000000ull + static_cast<std::uint64_t>(step);
            parallel_for(cfg.batch_size, cfg.threads, [&](int b) {
                Rng node_rng(derive_seed(cfg.seed, detail::kTagNodes, step_tag,
                                         static_cast<std::uint64_t>(b)));
                auto graphs = sample_patch_graphs(std::span<const T>(ts[b].v), cfg.sample_m,
                                                  node_rng);
                items[b] = detail::run_item(result.params, xs[b], ts[b], graphs,
                                            static_cast<T>(cfg.lambda), bce_scale, s_scale);
            });

            NetworkParams<T> grads = zero_params<T>(net);
            for (int b = 0; b < cfg.batch_size; ++b) {
                accumulate_params(grads, items[b].grads);
                epoch_bce += items[b].bce;
                epoch_s += items[b].smoothing;
            }
            epoch_patches += cfg.batch_size;
            adam_step(result.params, grads, adam, adam_cfg);
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.mean_bce = epoch_bce / static_cast<double>(epoch_patches);
        stats.mean_s = epoch_s / static_cast<double>(epoch_patches);
        stats.total_objective = stats.mean_bce + cfg.lambda * stats.mean_s;
        if (val) {
            auto probs = forward_probs(result.params, val->x, cfg.threads);
            stats.val_auc = auc(std::span<const T>(probs.v), std::span<const T>(val->t.v));
        }
        emit(format_epoch_row(stats));
        result.log.push_back(stats);
    }

    if (!cfg.out_dir.empty()) save_checkpoint(cfg.out_dir + "/checkpoint.vgsn", result.params);
    return result;
}

/// Full-image probability map by sliding-window prediction with
/// overlap averaging.
template <typename T>
std::vector<T> predict_image(const NetworkParams<T>& params, const PreparedImage<T>& img,
                             int patch_size = 48, int stride = 24, int threads = 0) {
    if (img.height < patch_size || img.width < patch_size)
        throw ShapeError("predict_image: image smaller than the patch size");
    const auto rows = grid_positions(img.height, patch_size, stride);
    const auto cols = grid_positions(img.width, patch_size, stride);
    std::vector<std::pair<int, int>> tiles;
    tiles.reserve(rows.size() * cols.size());
    for (int r : rows)
        for (int c : cols) tiles.emplace_back(r, c);

    const std::size_t count = static_cast<std::size_t>(img.height) * img.width;
    std::vector<double> sum(count, 0.0);
    std::vector<std::int32_t> hits(count, 0);
    std::vector<std::vector<T>> tile_probs(tiles.size());

    parallel_for(static_cast<int>(tiles.size()), threads, [&](int ti) {
        const auto [r0, c0] = tiles[ti];
        Tensor4<T> x(1, img.channels, patch_size, patch_size);
        for (int ch = 0; ch < img.channels; ++ch) {
            const T* plane = img.planes.data() + static_cast<std::size_t>(ch) * count;
            for (int r = 0; r < patch_size; ++r) {
                const T* src = plane + static_cast<std::size_t>(r0 + r) * img.width + c0;
                std::copy(src, src + patch_size,
                          x.v.begin() + (static_cast<std::size_t>(ch) * patch_size + r) * patch_size);
            }
        }
        auto fwd = forward(params, x);
        tile_probs[ti] = sigmoid(fwd.logits).v;
    });

    for (std::size_t ti = 0; ti < tiles.size(); ++ti) {
        const auto [r0, c0] = tiles[ti];
        for (int r = 0; r < patch_size; ++r)
            for (int c = 0; c < patch_size; ++c) {
                const std::size_t at = static_cast<std::size_t>(r0 + r) * img.width + (c0 + c);
                sum[at] += static_cast<double>(tile_probs[ti][static_cast<std::size_t>(r) * patch_size + c]);
                ++hits[at];
            }
    }
    std::vector<T> probs(count);
    for (std::size_t i = 0; i < count; ++i)
        probs[i] = hits[i] > 0 ? static_cast<T>(sum[i] / hits[i]) : T(0);
    return probs;
}

struct EvaluationResult {
    std::vector<std::pair<std::string, MetricsReport>> per_image;
    MetricsReport pooled;  // counts summed and AUC over all in-mask pixels
};

template <typename T>
EvaluationResult evaluate_dataset(const NetworkParams<T>& params,
                                  const std::vector<FundusSample>& samples,
                                  const std::vector<std::string>& names, InputMode mode,
                                  T threshold = T(0.5), int patch_size = 48, int stride = 24,
                                  int threads = 0) {
    EvaluationResult result;
    std::vector<T> pooled_probs, pooled_labels;
    ConfusionCounts pooled_counts;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto img = prepare_image<T>(samples[i], mode);
        const auto probs = predict_image(params, img, patch_size, stride, threads);
        std::span<const std::uint8_t> mask(img.mask);
        const std::string name =
            i < names.size() ? names[i] : "image_" + std::to_string(i);
        result.per_image.emplace_back(
            name, compute_report(std::span<const T>(probs), std::span<const T>(img.label), mask,
                                 threshold));
        const ConfusionCounts c =
            confusion(std::span<const T>(probs), std::span<const T>(img.label), mask, threshold);
        pooled_counts.tp += c.tp;
        pooled_counts.fp += c.fp;
        pooled_counts.tn += c.tn;
        pooled_counts.fn += c.fn;
        for (std::size_t k = 0; k < probs.size(); ++k) {
            if (!mask.empty() && mask[k] == 0) continue;
            pooled_probs.push_back(probs[k]);
            pooled_labels.push_back(img.label[k]);
        }
    }
    result.pooled.se = sensitivity(pooled_counts);
    result.pooled.sp = specificity(pooled_counts);
    result.pooled.acc = accuracy(pooled_counts);
    result.pooled.auc = auc(std::span<const T>(pooled_probs), std::span<const T>(pooled_labels));
    result.pooled.threshold = static_cast<double>(threshold);
    result.pooled.pixels = pooled_counts.total();
    return result;
}

/// Mean smoothing penalty of the model's predictions over a fixed patch set,
/// with node sampling fixed by `eval_seed` (identical graphs for any model).
template <typename T>
double evaluate_mean_smoothing(const NetworkParams<T>& params, const Tensor4<T>& x,
                               const Tensor4<T>& targets, int sample_m, Seed eval_seed,
                               int threads = 0) {
    std::vector<double> values(x.n, 0.0);
    parallel_for(x.n, threads, [&](int i) {
        Rng rng(derive_seed(eval_seed, static_cast<std::uint64_t>(i)));
        auto graphs = sample_patch_graphs(
            std::span<const T>(targets.plane(i, 0), static_cast<std::size_t>(targets.h) * targets.w),
            sample_m, rng);
        auto fwd = forward(params, slice_item(x, i));
        auto probs = sigmoid(fwd.logits);
        values[i] = static_cast<double>(
            smoothing(graphs.fg, graphs.bg, std::span<const T>(probs.v)).value);
    });
    double total = 0.0;
    for (double v : values) total += v;
    return x.n > 0 ? total / x.n : 0.0;
}

struct SweepRow {
    double lambda = 0.0;
    MetricsReport metrics;
};

/// Trains one model per lambda (ascending, identical seeds and data order)
/// and reports pooled evaluation metrics per lambda.
template <typename T>
std::vector<SweepRow> sweep(const TrainConfig& base, std::vector<double> lambdas,
                            const std::vector<FundusSample>& train_samples,
                            const std::vector<FundusSample>& eval_samples) {
    if (lambdas.empty()) throw Error("sweep: at least one lambda required");
    std::sort(lambdas.begin(), lambdas.end());
    std::vector<SweepRow> rows;
    for (double lambda : lambdas) {
        TrainConfig cfg = base;
        cfg.lambda = lambda;
        if (!base.out_dir.empty()) {
            char tag[64];
            std::snprintf(tag, sizeof(tag), "%g", lambda);
            cfg.out_dir = base.out_dir + "/lambda_" + tag;
        }
        auto result = train<T>(cfg, train_samples);
        auto eval = evaluate_dataset(result.params, eval_samples, {}, cfg.mode, T(0.5),
                                     cfg.patch_size, cfg.patch_size / 2, cfg.threads);
        rows.push_back({lambda, eval.pooled});
    }
    return rows;
}

}  // namespace vesselseg
