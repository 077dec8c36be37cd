#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "vesselseg/trainer.hpp"

using namespace vesselseg;

namespace {

std::vector<FundusSample> tiny_dataset(int count, Seed seed, int size = 64) {
    std::vector<FundusSample> out;
    for (int i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        out.push_back(synth_vessel_sample(rng, size, size, 4, 6.0));
    }
    return out;
}

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.net = NetworkConfig{1, 2, 4, 8};
    cfg.patch_size = 16;
    cfg.batch_size = 8;
    cfg.patches_per_epoch = 64;
    cfg.epochs = 2;
    cfg.sample_m = 8;
    cfg.lambda = 1e-6;
    cfg.seed = 77;
    cfg.precision = Precision::f64;
    cfg.threads = 2;
    return cfg;
}

}  // namespace

TEST_CASE("adam closed-form first step", "[trainer]") {
    AdamConfig<double> cfg;
    SECTION("zero gradient leaves parameters unchanged") {
        std::vector<double> p = {1.5}, g = {0.0}, m = {0.0}, v = {0.0};
        adam_update(std::span<double>(p), std::span<const double>(g), std::span<double>(m),
                    std::span<double>(v), 1, cfg);
        CHECK(p[0] == 1.5);
    }
    SECTION("first step with g=1 moves by -lr/(1+eps)") {
        std::vector<double> p = {0.0}, g = {1.0}, m = {0.0}, v = {0.0};
        adam_update(std::span<double>(p), std::span<const double>(g), std::span<double>(m),
                    std::span<double>(v), 1, cfg);
        CHECK(p[0] == Catch::Approx(-0.001 / (1.0 + 1e-8)).epsilon(1e-12));
    }
    SECTION("first-step magnitude is about lr for any large gradient") {
        for (double gval : {0.5, 3.0, -250.0, 1e6}) {
            std::vector<double> p = {0.0}, g = {gval}, m = {0.0}, v = {0.0};
            adam_update(std::span<double>(p), std::span<const double>(g), std::span<double>(m),
                        std::span<double>(v), 1, cfg);
            CHECK(std::abs(p[0]) == Catch::Approx(0.001).epsilon(1e-6));
            CHECK(std::signbit(p[0]) == !std::signbit(gval));
        }
    }
}

TEST_CASE("adam drives the toy quadratic to zero", "[trainer]") {
    AdamConfig<double> cfg;
    cfg.lr = 0.01;
    std::vector<double> w = {1.0}, m = {0.0}, v = {0.0};
    for (int step = 1; step <= 500; ++step) {
        std::vector<double> g = {w[0]};  // gradient of f(w) = w^2/2
        adam_update(std::span<double>(w), std::span<const double>(g), std::span<double>(m),
                    std::span<double>(v), step, cfg);
    }
    CHECK(std::abs(w[0]) < 0.1);
}

TEST_CASE("per-item gradient path agrees with the batch objective", "[trainer]") {
    Rng rng(3);
    NetworkConfig net{1, 2, 4, 8};
    auto params = init_params<double>(net, rng);
    const int n = 3, hw = 8;
    Tensor4<double> x(n, 1, hw, hw), t(n, 1, hw, hw);
    for (auto& v : x.v) v = rng.uniform();
    for (auto& v : t.v) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    Rng graph_rng(9);
    auto graphs = build_batch_graphs(t, 6, graph_rng);
    const double lambda = 0.01;

    for (Reduction red : {Reduction::sum, Reduction::mean}) {
        // reference: batch objective gradient pushed through batch backward
        std::vector<Tensor4<double>> fwd_logits;
        Tensor4<double> logits(n, 1, hw, hw);
        std::vector<ForwardCache<double>> caches;
        for (int i = 0; i < n; ++i) {
            auto f = forward(params, slice_item(x, i));
            std::copy(f.logits.v.begin(), f.logits.v.end(),
                      logits.v.begin() + static_cast<std::size_t>(i) * f.logits.v.size());
            caches.push_back(std::move(f.cache));
        }
        auto obj = total_objective_with_graphs(logits, t, lambda, graphs, red);
        NetworkParams<double> want = zero_params<double>(net);
        for (int i = 0; i < n; ++i) {
            Tensor4<double> d(1, 1, hw, hw);
            std::copy(obj.grad.v.begin() + static_cast<std::size_t>(i) * d.v.size(),
                      obj.grad.v.begin() + static_cast<std::size_t>(i + 1) * d.v.size(),
                      d.v.begin());
            accumulate_params(want, backward(params, caches[i], d).grads);
        }

        // trainer path
        const double bce_scale = red == Reduction::mean ? 1.0 / (n * hw * hw) : 1.0;
        const double s_scale = red == Reduction::mean ? 1.0 / n : 1.0;
        NetworkParams<double> got = zero_params<double>(net);
        for (int i = 0; i < n; ++i) {
            auto item = vesselseg::detail::run_item(params, slice_item(x, i), slice_item(t, i),
                                                    graphs[i], lambda, bce_scale, s_scale);
            accumulate_params(got, item.grads);
        }

        auto we = param_entries(want);
        auto ge = param_entries(got);
        for (std::size_t e = 0; e < we.size(); ++e)
            for (std::size_t k = 0; k < we[e].param->weight.v.size(); ++k)
                CHECK(ge[e].param->weight.v[k] ==
                      Catch::Approx(we[e].param->weight.v[k]).margin(1e-12));
    }
}

TEST_CASE("training reduces BCE and is seed-reproducible", "[trainer]") {
    auto data = tiny_dataset(3, 11);
    auto cfg = tiny_config();
    auto r1 = train<double>(cfg, data);
    REQUIRE(r1.log.size() == 2);
    CHECK(r1.log[1].mean_bce < r1.log[0].mean_bce);

    auto r2 = train<double>(cfg, data);
    CHECK(r1.log_text == r2.log_text);
    // bit-identical parameters too
    auto e1 = param_entries(r1.params);
    auto e2 = param_entries(r2.params);
    for (std::size_t i = 0; i < e1.size(); ++i)
        CHECK(e1[i].param->weight.v == e2[i].param->weight.v);
}

TEST_CASE("validation AUC is tracked when a split is configured", "[trainer]") {
    auto data = tiny_dataset(4, 19);
    auto cfg = tiny_config();
    cfg.epochs = 1;
    cfg.val_images = 1;
    cfg.val_patches = 16;
    auto r = train<double>(cfg, data);
    REQUIRE(r.log.size() == 1);
    REQUIRE(r.log[0].val_auc.has_value());
    CHECK(*r.log[0].val_auc >= 0.0);
    CHECK(*r.log[0].val_auc <= 1.0);
    CHECK(r.log_text.find("val_auc") != std::string::npos);
}

TEST_CASE("train rejects bad configurations", "[trainer]") {
    auto cfg = tiny_config();
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(train<double>(cfg, tiny_dataset(1, 1)), Error);
    cfg = tiny_config();
    CHECK_THROWS_AS(train<double>(cfg, {}), Error);
}

TEST_CASE("sweep reports one row per lambda in ascending order", "[trainer]") {
    auto data = tiny_dataset(2, 23);
    auto cfg = tiny_config();
    cfg.epochs = 1;
    cfg.patches_per_epoch = 32;

    SECTION("paper grid emits four ascending rows") {
        auto rows = sweep<double>(cfg, {1e-4, 1e-7, 1e-5, 1e-6}, data, data);
        REQUIRE(rows.size() == 4);
        CHECK(rows[0].lambda == 1e-7);
        CHECK(rows[1].lambda == 1e-6);
        CHECK(rows[2].lambda == 1e-5);
        CHECK(rows[3].lambda == 1e-4);
    }
    SECTION("single lambda=0 equals plain train + evaluate") {
        auto rows = sweep<double>(cfg, {0.0}, data, data);
        REQUIRE(rows.size() == 1);
        TrainConfig plain = cfg;
        plain.lambda = 0.0;
        auto trained = train<double>(plain, data);
        auto eval = evaluate_dataset(trained.params, data, {}, plain.mode, 0.5, plain.patch_size,
                                     plain.patch_size / 2, plain.threads);
        CHECK(rows[0].metrics.auc == eval.pooled.auc);
        CHECK(rows[0].metrics.acc == eval.pooled.acc);
    }
    SECTION("duplicate lambdas give identical rows") {
        auto rows = sweep<double>(cfg, {1e-6, 1e-6}, data, data);
        REQUIRE(rows.size() == 2);
        CHECK(rows[0].metrics.auc == rows[1].metrics.auc);
        CHECK(rows[0].metrics.se == rows[1].metrics.se);
    }
}

TEST_CASE("predict_image with zero weights yields a 0.5 map", "[trainer]") {
    auto data = tiny_dataset(1, 31);
    auto params = zero_params<double>(NetworkConfig{1, 2, 4, 8});
    auto img = prepare_image<double>(data[0], InputMode::green);
    auto probs = predict_image(params, img, 16, 8, 2);
    REQUIRE(probs.size() == static_cast<std::size_t>(img.height) * img.width);
    for (double p : probs) CHECK(p == 0.5);
}

TEST_CASE("untrained model evaluates at chance-level AUC", "[trainer]") {
    auto data = tiny_dataset(2, 37);
    auto params = zero_params<double>(NetworkConfig{1, 2, 4, 8});
    auto eval = evaluate_dataset(params, data, {}, InputMode::green, 0.5, 16, 8, 2);
    CHECK(eval.pooled.auc == 0.5);  // all probabilities tie at 0.5 exactly
    CHECK(eval.per_image.size() == 2);
}

TEST_CASE("evaluate_mean_smoothing is zero for constant predictions", "[trainer]") {
    auto params = zero_params<double>(NetworkConfig{1, 2, 4, 8});
    Rng rng(41);
    Tensor4<double> x(2, 1, 16, 16), t(2, 1, 16, 16);
    for (auto& v : x.v) v = rng.uniform();
    for (auto& v : t.v) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
    CHECK(evaluate_mean_smoothing(params, x, t, 8, 5) == Catch::Approx(0.0).margin(1e-12));
}
