// Command-line front end: synth, train, sweep, eval, overlay, gradcheck.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "vesselseg/checkpoint.hpp"
#include "vesselseg/data_pipeline.hpp"
#include "vesselseg/gradcheck.hpp"
#include "vesselseg/metrics.hpp"
#include "vesselseg/trainer.hpp"
#include "vesselseg/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vesselseg;

namespace {

std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

void write_run_manifest(const std::string& out_dir, const std::string& command, json config) {
    config["command"] = command;
    config["tool_version"] = kVersion;
    config["timestamp"] = iso_timestamp();
    fs::create_directories(out_dir);
    std::ofstream out(out_dir + "/run_manifest.json");
    if (!out) throw IoError("cannot write run manifest in " + out_dir);
    out << config.dump(2) << '\n';
}

std::string image_stem(const std::string& path) { return fs::path(path).stem().string(); }

// flags shared by train and sweep
struct TrainCliOpts {
    std::string manifest;
    std::string out;
    std::string mode = "green";
    std::string reduction = "sum";
    std::string precision = "f32";
    std::vector<int> channels = {32, 64, 128};
    TrainConfig cfg;
};

void add_train_flags(CLI::App* cmd, TrainCliOpts& o) {
    cmd->add_option("--manifest", o.manifest, "dataset manifest (image,label[,mask] per line)")
        ->required();
    cmd->add_option("--out", o.out, "output directory")->required();
    cmd->add_option("--lambda", o.cfg.lambda, "smoothing weight");
    cmd->add_option("--lr", o.cfg.learning_rate, "Adam learning rate");
    cmd->add_option("--epochs", o.cfg.epochs, "training epochs");
    cmd->add_option("--batch-size", o.cfg.batch_size, "patches per step");
    cmd->add_option("--patches-per-epoch", o.cfg.patches_per_epoch, "patches drawn per epoch");
    cmd->add_option("--sample-m", o.cfg.sample_m, "sampled nodes per region graph");
    cmd->add_option("--seed", o.cfg.seed, "root random seed");
    cmd->add_option("--patch-size", o.cfg.patch_size, "square patch size");
    cmd->add_option("--mode", o.mode, "input channels: green, gray, or rgb")
        ->check(CLI::IsMember({"green", "gray", "rgb"}));
    cmd->add_option("--reduction", o.reduction, "loss reduction: sum or mean")
        ->check(CLI::IsMember({"sum", "mean"}));
    cmd->add_option("--precision", o.precision, "arithmetic: f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}));
    cmd->add_option("--channels", o.channels, "encoder widths c1,c2,c3")
        ->delimiter(',')
        ->expected(3);
    cmd->add_option("--val-images", o.cfg.val_images, "images held out for validation AUC");
    cmd->add_option("--val-patches", o.cfg.val_patches, "validation patch count");
    cmd->add_option("--threads", o.cfg.threads, "worker threads (0 = hardware)");
    cmd->add_flag("--augment-flips", o.cfg.augment.flips, "random h/v flips");
    cmd->add_flag("--augment-rotations", o.cfg.augment.rotations, "random 90-degree rotations");
    cmd->set_config("--config", "", "key=value config file; flags take precedence");
}

TrainConfig resolve(TrainCliOpts& o) {
    TrainConfig cfg = o.cfg;
    cfg.mode = input_mode_from_string(o.mode);
    cfg.reduction = o.reduction == "mean" ? Reduction::mean : Reduction::sum;
    cfg.precision = o.precision == "f64" ? Precision::f64 : Precision::f32;
    cfg.net = NetworkConfig{input_mode_channels(cfg.mode), o.channels[0], o.channels[1],
                            o.channels[2]};
    cfg.out_dir = o.out;
    return cfg;
}

json config_json(const TrainConfig& cfg, const std::string& manifest) {
    return json{{"manifest", manifest},
                {"out", cfg.out_dir},
                {"lambda", cfg.lambda},
                {"learning_rate", cfg.learning_rate},
                {"epochs", cfg.epochs},
                {"batch_size", cfg.batch_size},
                {"patches_per_epoch", cfg.patches_per_epoch},
                {"sample_m", cfg.sample_m},
                {"seed", cfg.seed},
                {"patch_size", cfg.patch_size},
                {"mode", to_string(cfg.mode)},
                {"reduction", cfg.reduction == Reduction::mean ? "mean" : "sum"},
                {"precision", to_string(cfg.precision)},
                {"channels", {cfg.net.c1, cfg.net.c2, cfg.net.c3}},
                {"val_images", cfg.val_images},
                {"val_patches", cfg.val_patches},
                {"augment_flips", cfg.augment.flips},
                {"augment_rotations", cfg.augment.rotations}};
}

int cmd_synth(const std::string& out_dir, int count, int size, int vessels, double noise,
              Seed seed) {
    fs::create_directories(fs::path(out_dir) / "images");
    fs::create_directories(fs::path(out_dir) / "labels");
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        const FundusSample s = synth_vessel_sample(rng, size, size, vessels, noise);
        char name[64];
        std::snprintf(name, sizeof(name), "synth_%03d.png", i);
        write_png((fs::path(out_dir) / "images" / name).string(), s.image);
        Image8 vis(s.label.width, s.label.height, 1);
        for (std::size_t k = 0; k < vis.pixels.size(); ++k)
            vis.pixels[k] = s.label.pixels[k] ? 255 : 0;
        write_png((fs::path(out_dir) / "labels" / name).string(), vis);
        entries.push_back({std::string("images/") + name, std::string("labels/") + name, ""});
    }
    write_manifest(out_dir + "/manifest.txt", entries);
    write_run_manifest(out_dir, "synth",
                       json{{"count", count},
                            {"size", size},
                            {"vessels", vessels},
                            {"noise", noise},
                            {"seed", seed}});
    if (count == 0) std::fprintf(stderr, "warning: synth produced an empty manifest\n");
    std::printf("wrote %d sample(s) under %s\n", count, out_dir.c_str());
    return 0;
}

template <typename T>
int run_train(const TrainConfig& cfg, const std::string& manifest) {
    const auto samples = load_dataset(manifest);
    auto result = train<T>(cfg, samples);
    const auto& last = result.log.back();
    std::printf("final epoch %d: mean_bce %.6g mean_s %.6g total %.6g", last.epoch, last.mean_bce,
                last.mean_s, last.total_objective);
    if (last.val_auc) std::printf(" val_auc %.4f", *last.val_auc);
    std::printf("\ncheckpoint: %s/checkpoint.vgsn\n", cfg.out_dir.c_str());
    return 0;
}

template <typename T>
int run_sweep(const TrainConfig& base, const std::string& manifest,
              const std::string& eval_manifest, std::vector<double> lambdas) {
    const auto train_samples = load_dataset(manifest);
    const auto eval_samples =
        eval_manifest == manifest ? train_samples : load_dataset(eval_manifest);
    auto rows = sweep<T>(base, std::move(lambdas), train_samples, eval_samples);
    std::ofstream csv(base.out_dir + "/sweep.csv");
    if (!csv) throw IoError("cannot write sweep.csv in " + base.out_dir);
    csv << "lambda,se,sp,acc,auc\n";
    std::printf("%-12s %-8s %-8s %-8s %-8s\n", "lambda", "se", "sp", "acc", "auc");
    for (const auto& row : rows) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%g,%.6f,%.6f,%.6f,%.6f\n", row.lambda, row.metrics.se,
                      row.metrics.sp, row.metrics.acc, row.metrics.auc);
        csv << buf;
        std::printf("%-12g %-8.4f %-8.4f %-8.4f %-8.4f\n", row.lambda, row.metrics.se,
                    row.metrics.sp, row.metrics.acc, row.metrics.auc);
    }
    return 0;
}

Image8 probs_to_gray(const std::vector<float>& probs, int height, int width) {
    Image8 img(width, height, 1);
    for (std::size_t i = 0; i < probs.size(); ++i)
        img.pixels[i] = static_cast<std::uint8_t>(
            std::lround(std::clamp(probs[i], 0.0f, 1.0f) * 255.0f));
    return img;
}

int cmd_eval(const std::string& manifest, const std::string& checkpoint,
             const std::string& out_dir, double threshold, const std::string& mode_str,
             int patch_size, int stride, int threads, bool save_probs) {
    const auto params = load_checkpoint<float>(checkpoint);
    const auto entries = parse_manifest(manifest);
    const auto samples = load_dataset(manifest);
    const InputMode mode = input_mode_from_string(mode_str);
    std::vector<std::string> names;
    names.reserve(entries.size());
    for (const auto& e : entries) names.push_back(image_stem(e.image));

    fs::create_directories(out_dir);
    auto result = evaluate_dataset(params, samples, names, mode, static_cast<float>(threshold),
                                   patch_size, stride, threads);
    if (save_probs) {
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const auto img = prepare_image<float>(samples[i], mode);
            const auto probs = predict_image(params, img, patch_size, stride, threads);
            char name[64];
            std::snprintf(name, sizeof(name), "prob_%03zu.png", i);
            write_png((fs::path(out_dir) / name).string(),
                      probs_to_gray(probs, img.height, img.width));
        }
    }
    auto rows = result.per_image;
    rows.emplace_back("all", result.pooled);
    write_metrics_csv(out_dir + "/metrics.csv", rows);
    write_run_manifest(out_dir, "eval",
                       json{{"manifest", manifest},
                            {"checkpoint", checkpoint},
                            {"threshold", threshold},
                            {"mode", mode_str},
                            {"patch_size", patch_size},
                            {"stride", stride}});
    std::printf("pooled: se %.4f sp %.4f acc %.4f auc %.4f over %lld pixels\n", result.pooled.se,
                result.pooled.sp, result.pooled.acc, result.pooled.auc,
                static_cast<long long>(result.pooled.pixels));
    return 0;
}

int cmd_overlay(const std::string& manifest, const std::string& checkpoint,
                const std::string& pred_png, const std::string& out_dir, double threshold,
                const std::string& mode_str, int patch_size, int stride, int threads) {
    const auto samples = load_dataset(manifest);
    const InputMode mode = input_mode_from_string(mode_str);
    fs::create_directories(out_dir);
    NetworkParams<float> params;
    if (pred_png.empty()) {
        params = load_checkpoint<float>(checkpoint);
    } else if (samples.size() != 1) {
        throw Error("--pred requires a manifest with exactly one sample");
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto img = prepare_image<float>(samples[i], mode);
        std::vector<float> probs;
        if (!pred_png.empty()) {
            const Image8 pred = read_png(pred_png);
            if (!pred.same_size(samples[i].image) || pred.channels != 1)
                throw ShapeError("--pred raster must be a gray image of matching size");
            probs.resize(pred.pixels.size());
            for (std::size_t k = 0; k < probs.size(); ++k)
                probs[k] = static_cast<float>(pred.pixels[k]) / 255.0f;
        } else {
            probs = predict_image(params, img, patch_size, stride, threads);
        }
        std::span<const std::uint8_t> mask(img.mask);
        const Image8 overlay =
            render_overlay(std::span<const float>(probs), std::span<const float>(img.label), mask,
                           static_cast<float>(threshold), img.height, img.width);
        char name[64];
        std::snprintf(name, sizeof(name), "overlay_%03zu.png", i);
        write_png((fs::path(out_dir) / name).string(), overlay);
    }
    write_run_manifest(out_dir, "overlay",
                       json{{"manifest", manifest},
                            {"checkpoint", checkpoint},
                            {"pred", pred_png},
                            {"threshold", threshold},
                            {"mode", mode_str}});
    std::printf("wrote %zu overlay(s) under %s\n", samples.size(), out_dir.c_str());
    return 0;
}

int cmd_gradcheck(Seed seed, bool self_test) {
    if (self_test)
        std::printf("self-test: analytic gradients intentionally corrupted; "
                    "every suite must fail\n");
    const auto suites = run_gradcheck(seed, self_test);
    bool all_pass = true;
    for (const auto& s : suites) {
        std::printf("suite %-18s worst relative error %.3e (tolerance %.0e) [%s]\n",
                    s.name.c_str(), s.worst_rel, s.tolerance, s.pass ? "PASS" : "FAIL");
        all_pass = all_pass && s.pass;
    }
    return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Graph-smoothed vessel segmentation toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic vessel dataset");
    std::string synth_out;
    int synth_count = 20, synth_size = kDefaultSynthSize, synth_vessels = kDefaultSynthVessels;
    double synth_noise = kDefaultSynthNoise;
    Seed synth_seed = 42;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--count", synth_count, "number of samples");
    synth->add_option("--size", synth_size, "square image size")->check(CLI::Range(64, 4096));
    synth->add_option("--vessels", synth_vessels, "curves per image");
    synth->add_option("--noise", synth_noise, "background noise sigma");
    synth->add_option("--seed", synth_seed, "root random seed");

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model on a manifest");
    TrainCliOpts train_opts;
    add_train_flags(train_cmd, train_opts);

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "train and evaluate across lambda values");
    TrainCliOpts sweep_opts;
    add_train_flags(sweep_cmd, sweep_opts);
    std::vector<double> sweep_lambdas = {1e-4, 1e-5, 1e-6, 1e-7};
    std::string sweep_eval_manifest;
    sweep_cmd->add_option("--lambdas", sweep_lambdas, "lambda grid")->delimiter(',');
    sweep_cmd->add_option("--eval-manifest", sweep_eval_manifest,
                          "held-out manifest for metrics (defaults to the training manifest)");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "stitched full-image evaluation");
    std::string eval_manifest, eval_checkpoint, eval_out, eval_mode = "green";
    double eval_threshold = 0.5;
    int eval_patch = 48, eval_stride = 24, eval_threads = 0;
    bool eval_no_probs = false;
    eval_cmd->add_option("--manifest", eval_manifest, "dataset manifest")->required();
    eval_cmd->add_option("--checkpoint", eval_checkpoint, "model checkpoint")->required();
    eval_cmd->add_option("--out", eval_out, "output directory")->required();
    eval_cmd->add_option("--threshold", eval_threshold, "classification threshold");
    eval_cmd->add_option("--mode", eval_mode)->check(CLI::IsMember({"green", "gray", "rgb"}));
    eval_cmd->add_option("--patch-size", eval_patch);
    eval_cmd->add_option("--stride", eval_stride, "tile stride for stitching");
    eval_cmd->add_option("--threads", eval_threads);
    eval_cmd->add_flag("--no-probs", eval_no_probs, "skip probability map PNGs");

    // overlay
    auto* overlay_cmd = app.add_subcommand("overlay", "render TP/FN/FP overlays");
    std::string ov_manifest, ov_checkpoint, ov_pred, ov_out, ov_mode = "green";
    double ov_threshold = 0.5;
    int ov_patch = 48, ov_stride = 24, ov_threads = 0;
    overlay_cmd->add_option("--manifest", ov_manifest, "dataset manifest")->required();
    overlay_cmd->add_option("--checkpoint", ov_checkpoint, "model checkpoint");
    overlay_cmd->add_option("--pred", ov_pred, "gray PNG used as the prediction map");
    overlay_cmd->add_option("--out", ov_out, "output directory")->required();
    overlay_cmd->add_option("--threshold", ov_threshold);
    overlay_cmd->add_option("--mode", ov_mode)->check(CLI::IsMember({"green", "gray", "rgb"}));
    overlay_cmd->add_option("--patch-size", ov_patch);
    overlay_cmd->add_option("--stride", ov_stride);
    overlay_cmd->add_option("--threads", ov_threads);

    // gradcheck
    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    Seed grad_seed = 7;
    bool grad_self_test = false;
    grad_cmd->add_option("--seed", grad_seed, "random seed");
    grad_cmd->add_flag("--self-test", grad_self_test,
                       "corrupt the analytic gradients; the audit must then fail");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed())
            return cmd_synth(synth_out, synth_count, synth_size, synth_vessels, synth_noise,
                             synth_seed);
        if (train_cmd->parsed()) {
            TrainConfig cfg = resolve(train_opts);
            write_run_manifest(cfg.out_dir, "train", config_json(cfg, train_opts.manifest));
            return cfg.precision == Precision::f64
                       ? run_train<double>(cfg, train_opts.manifest)
                       : run_train<float>(cfg, train_opts.manifest);
        }
        if (sweep_cmd->parsed()) {
            TrainConfig cfg = resolve(sweep_opts);
            if (sweep_eval_manifest.empty()) sweep_eval_manifest = sweep_opts.manifest;
            json j = config_json(cfg, sweep_opts.manifest);
            j["lambdas"] = sweep_lambdas;
            j["eval_manifest"] = sweep_eval_manifest;
            write_run_manifest(cfg.out_dir, "sweep", j);
            return cfg.precision == Precision::f64
                       ? run_sweep<double>(cfg, sweep_opts.manifest, sweep_eval_manifest,
                                           sweep_lambdas)
                       : run_sweep<float>(cfg, sweep_opts.manifest, sweep_eval_manifest,
                                          sweep_lambdas);
        }
        if (eval_cmd->parsed())
            return cmd_eval(eval_manifest, eval_checkpoint, eval_out, eval_threshold, eval_mode,
                            eval_patch, eval_stride, eval_threads, !eval_no_probs);
        if (overlay_cmd->parsed()) {
            if (ov_checkpoint.empty() && ov_pred.empty())
                throw Error("overlay needs --checkpoint or --pred");
            return cmd_overlay(ov_manifest, ov_checkpoint, ov_pred, ov_out, ov_threshold, ov_mode,
                               ov_patch, ov_stride, ov_threads);
        }
        if (grad_cmd->parsed()) return cmd_gradcheck(grad_seed, grad_self_test);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
