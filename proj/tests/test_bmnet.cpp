#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include <eegart/bmnet.hpp>

using namespace eegart;
using namespace eegart::bm;

namespace {

ChannelModelConfig tiny_config(int window_len_s = 1) {
    ChannelModelConfig cfg;
    cfg.window_len_s = window_len_s;
    cfg.conv_filters = {2, 2, 2, 2, 4};
    cfg.d_model = 8;
    cfg.heads = 2;
    cfg.ffn_hidden = 8;
    cfg.fc1 = 4;
    cfg.dropout_p = 0.0;
    return cfg;
}

std::vector<double> random_window(size_t n, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> dist(0.0, scale);
    std::vector<double> w(n);
    for (double& v : w) v = dist(rng);
    return w;
}

// Monte-Carlo estimate of KL(Dir(a)||Dir(b)) as E_a[ln p_a(x) - ln p_b(x)]
double kl_monte_carlo(std::array<double, 2> a, std::array<double, 2> b,
                      std::mt19937_64& rng, int samples) {
    auto log_dir = [](const std::array<double, 2>& alpha, double p) {
        return log_gamma(alpha[0] + alpha[1]) - log_gamma(alpha[0]) -
               log_gamma(alpha[1]) + (alpha[0] - 1.0) * std::log(p) +
               (alpha[1] - 1.0) * std::log1p(-p);
    };
    std::gamma_distribution<double> g0(a[0], 1.0), g1(a[1], 1.0);
    double acc = 0.0;
    for (int i = 0; i < samples; ++i) {
        const double x0 = g0(rng), x1 = g1(rng);
        const double p = x0 / (x0 + x1);
        acc += log_dir(a, p) - log_dir(b, p);
    }
    return acc / samples;
}

}  // namespace

TEST_CASE("dirichlet_kl closed forms") {
    std::array<double, 2> uniform{1.0, 1.0};
    CHECK(dirichlet_kl(uniform, uniform) == doctest::Approx(0.0).epsilon(1e-14));

    std::array<double, 2> a{2.0, 1.0};
    CHECK(dirichlet_kl(a, uniform) ==
          doctest::Approx(std::log(2.0) - 0.5).epsilon(1e-12));

    std::array<double, 2> bad{0.0, 1.0};
    CHECK_THROWS_AS(dirichlet_kl(bad, uniform), std::domain_error);
}

TEST_CASE("dirichlet_kl nonnegative on random pairs, matches Monte-Carlo") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.1, 10.0);
    for (int i = 0; i < 1000; ++i) {
        std::array<double, 2> a{u(rng), u(rng)}, b{u(rng), u(rng)};
        CHECK(dirichlet_kl(a, b) >= -1e-12);
    }
    // density-ratio sanity on a few fixed pairs
    for (const auto& [a, b] : {std::pair{std::array<double, 2>{3.0, 2.0},
                                         std::array<double, 2>{1.0, 1.0}},
                               {std::array<double, 2>{0.7, 4.0},
                                std::array<double, 2>{2.0, 2.0}}}) {
        const double mc = kl_monte_carlo(a, b, rng, 400000);
        CHECK(dirichlet_kl(a, b) == doctest::Approx(mc).epsilon(0.02));
    }
}

TEST_CASE("elbo_node closed-form values") {
    // alpha = (1,1): psi(1) - psi(2) = -1, KL = 0, so -l_EB = 1
    auto logits = num::make_tensor({1, 2}, {0.0, 0.0}, true);
    auto alpha = num::exp_op(logits);
    auto node = elbo_node(alpha, 0);
    CHECK(node->value[0] == doctest::Approx(-1.0).epsilon(1e-12));

    // alpha = (2,1), y on the alpha=2 side: l_EB = -ln 2
    auto logits2 = num::make_tensor({1, 2}, {std::log(2.0), 0.0}, true);
    auto node2 = elbo_node(num::exp_op(logits2), 0);
    CHECK(node2->value[0] == doctest::Approx(-std::log(2.0)).epsilon(1e-12));

    CHECK_THROWS_AS(elbo_node(alpha, 2), std::invalid_argument);
}

TEST_CASE("elbo gradient matches finite differences through exp") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    for (int trial = 0; trial < 10; ++trial) {
        const double l0 = u(rng), l1 = u(rng);
        const int y = trial % 2;
        auto build = [&](double a, double b) {
            auto logits = num::make_tensor({1, 2}, {a, b}, true);
            return std::pair{logits, elbo_node(num::exp_op(logits), y)};
        };
        auto [logits, loss] = build(l0, l1);
        num::backward(loss);
        const double h = 1e-5;
        const double d0 =
            (build(l0 + h, l1).second->value[0] - build(l0 - h, l1).second->value[0]) /
            (2.0 * h);
        const double d1 =
            (build(l0, l1 + h).second->value[0] - build(l0, l1 - h).second->value[0]) /
            (2.0 * h);
        CHECK(logits->grad[0] == doctest::Approx(d0).epsilon(1e-4));
        CHECK(logits->grad[1] == doctest::Approx(d1).epsilon(1e-4));
    }
}

TEST_CASE("model shape contracts") {
    for (const auto& [len, tokens] : {std::pair{1, 2}, {3, 7}, {5, 13}}) {
        auto cfg = tiny_config(len);
        CHECK(cfg.n_tokens() == tokens);
        CHECK(cfg.window_samples() == len * 128);
    }
    auto a = build_model(tiny_config(), 1);
    auto b = build_model(tiny_config(), 999);
    CHECK(a.params.total_params() == b.params.total_params());

    // output layer width 2
    CHECK(a.params.at("fc2.w")->shape == std::vector<size_t>{4, 2});

    ChannelModelConfig bad = tiny_config();
    bad.window_len_s = 2;
    CHECK_THROWS_AS(build_model(bad, 0), std::invalid_argument);
    bad = tiny_config();
    bad.d_model = 9;  // not divisible by heads
    CHECK_THROWS_AS(build_model(bad, 0), std::invalid_argument);
}

TEST_CASE("forward: positivity, determinism, length checks") {
    auto model = build_model(tiny_config(), 7);
    std::mt19937_64 rng(11);
    const auto w = random_window(128, rng);
    const auto out1 = model.forward(w);
    const auto out2 = model.forward(w);
    CHECK(out1.alpha_artifact == out2.alpha_artifact);
    CHECK(out1.alpha_background == out2.alpha_background);
    CHECK(out1.alpha_artifact > 0.0);
    CHECK(out1.alpha_background > 0.0);
    CHECK(std::isfinite(out1.alpha0()));

    std::vector<double> wrong(100, 0.0);
    CHECK_THROWS_AS(model.forward(wrong), std::invalid_argument);

    // zero final layer -> logits (0,0) -> alpha = (1,1) -> p = 0.5
    auto flat = model;
    std::fill(flat.params.at("fc2.w")->value.begin(),
              flat.params.at("fc2.w")->value.end(), 0.0);
    std::fill(flat.params.at("fc2.b")->value.begin(),
              flat.params.at("fc2.b")->value.end(), 0.0);
    const auto out = flat.forward(w);
    CHECK(out.alpha_artifact == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out.alpha_background == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(flat.predict_proba(w) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("predict_proba: dirichlet mean and logit-shift invariance") {
    auto model = build_model(tiny_config(), 13);
    std::mt19937_64 rng(17);
    const auto w = random_window(128, rng);

    // bias the output layer so alpha = (3, 1) regardless of input
    auto fixed = model;
    std::fill(fixed.params.at("fc2.w")->value.begin(),
              fixed.params.at("fc2.w")->value.end(), 0.0);
    fixed.params.at("fc2.b")->value = {0.0, std::log(3.0)};
    // logit order is (background, artifact)
    CHECK(fixed.predict_proba(w) == doctest::Approx(0.75).epsilon(1e-12));
    const auto out = fixed.forward(w);
    CHECK(out.p_artifact() + out.alpha_background / out.alpha0() ==
          doctest::Approx(1.0).epsilon(1e-14));

    // adding the same constant to both logits leaves p unchanged
    const double p0 = model.predict_proba(w);
    auto shifted = model;
    for (auto& v : shifted.params.at("fc2.b")->value) v += 1.7;
    CHECK(shifted.predict_proba(w) == doctest::Approx(p0).epsilon(1e-12));
}

TEST_CASE("bm_loss: batch values and weight linearity") {
    auto model = build_model(tiny_config(), 19);
    std::fill(model.params.at("fc2.w")->value.begin(),
              model.params.at("fc2.w")->value.end(), 0.0);
    std::fill(model.params.at("fc2.b")->value.begin(),
              model.params.at("fc2.b")->value.end(), 0.0);

    std::mt19937_64 rng(23);
    std::vector<LabeledWindow> windows(4);
    for (size_t i = 0; i < windows.size(); ++i) {
        windows[i].samples = random_window(128, rng);
        windows[i].label = static_cast<int>(i % 2);
    }
    std::vector<const LabeledWindow*> batch;
    for (const auto& w : windows) batch.push_back(&w);

    // alpha = (1,1) for every window, so each term contributes exactly 1
    auto loss = bm_loss(batch, model, {1.0, 1.0});
    CHECK(loss->value[0] == doctest::Approx(1.0).epsilon(1e-12));

    auto doubled = bm_loss(batch, model, {2.0, 2.0});
    CHECK(doubled->value[0] == doctest::Approx(2.0 * loss->value[0]).epsilon(1e-12));

    CHECK_THROWS_AS(bm_loss({}, model, {1.0, 1.0}), std::invalid_argument);
}

TEST_CASE("full-model gradient check on the bm loss") {
    auto cfg = tiny_config();
    auto model = build_model(cfg, 29);
    std::mt19937_64 rng(31);
    LabeledWindow w;
    w.samples = random_window(cfg.window_samples(), rng);
    w.label = 1;
    const std::vector<const LabeledWindow*> batch{&w};

    auto loss = bm_loss(batch, model, {1.0, 1.5});
    num::backward(loss);
    const double h = 1e-5;
    size_t checked = 0, skipped = 0;
    for (const auto& name : model.params.names) {
        auto t = model.params.at(name);
        for (size_t i = 0; i < t->size(); ++i) {
            const double saved = t->value[i];
            t->value[i] = saved + h;
            const double up = bm_loss(batch, model, {1.0, 1.5})->value[0];
            t->value[i] = saved - h;
            const double down = bm_loss(batch, model, {1.0, 1.5})->value[0];
            t->value[i] = saved;
            const double fd = (up - down) / (2.0 * h);
            const double scale = std::max(std::abs(fd), std::abs(t->grad[i]));
            if (scale < 1e-8) {  // dead relu paths etc.
                ++skipped;
                continue;
            }
            CHECK(std::abs(t->grad[i] - fd) <= 1e-3 * std::max(scale, 1e-3));
            ++checked;
        }
    }
    CHECK(checked > 100);
    CHECK(skipped < checked);
}

TEST_CASE("label_windows coverage rules") {
    io::EegRecording rec;
    rec.patient_id = "p0";
    rec.sample_rate_hz = 128.0;
    rec.channels = {"FP1", "CZ"};
    rec.samples.assign(2, std::vector<double>(10 * 128, 0.0));
    dsp::WindowPlan plan;
    plan.window_len_s = 1;

    SUBCASE("no events: everything is background") {
        const auto windows = label_windows(rec, {}, plan, "eyem");
        CHECK(windows.size() == 20);
        for (const auto& w : windows) CHECK(w.label == 0);
    }

    SUBCASE("60% coverage is positive, 40% is discarded") {
        std::vector<io::ArtifactEvent> events{
            {"FP1", 2.0, 2.6, "eyem"},   // 60% of window [2,3)
            {"FP1", 5.0, 5.4, "eyem"}};  // 40% of window [5,6)
        const auto windows = label_windows(rec, events, plan, "eyem");
        // FP1 loses the [5,6) window; CZ keeps all 10 as background
        CHECK(windows.size() == 19);
        int positives = 0;
        for (const auto& w : windows) {
            if (w.label == 1) {
                ++positives;
                CHECK(w.channel == "FP1");
            }
        }
        CHECK(positives == 1);
    }

    SUBCASE("other-type overlap blocks background") {
        std::vector<io::ArtifactEvent> events{{"CZ", 3.0, 3.2, "musc"}};
        const auto windows = label_windows(rec, events, plan, "eyem");
        // the overlapped CZ window is neither eyem-positive nor clean
        CHECK(windows.size() == 19);
        for (const auto& w : windows) CHECK(w.label == 0);
    }

    SUBCASE("full-coverage event marks every spanned window") {
        std::vector<io::ArtifactEvent> events{{"FP1", 0.0, 10.0, "musc"}};
        const auto windows = label_windows(rec, events, plan, "musc");
        int positives = 0;
        for (const auto& w : windows) positives += w.label;
        CHECK(positives == 10);
    }

    CHECK_THROWS_AS(label_windows(rec, {}, plan, "blink"), std::invalid_argument);
    io::EegRecording wrong = rec;
    wrong.sample_rate_hz = 256.0;
    CHECK_THROWS_AS(label_windows(wrong, {}, plan, "eyem"), std::invalid_argument);
}

TEST_CASE("training separates synthetic bursts from smooth background") {
    std::mt19937_64 rng(37);
    std::normal_distribution<double> noise(0.0, 0.4);
    std::vector<LabeledWindow> windows;
    for (int i = 0; i < 60; ++i) {
        LabeledWindow pos, neg;
        pos.label = 1;
        neg.label = 0;
        pos.samples.resize(128);
        neg.samples.resize(128);
        const double phase = rng() % 100 / 100.0;
        for (int t = 0; t < 128; ++t) {
            pos.samples[t] = 3.0 * std::sin(2.0 * M_PI * (30.0 * t / 128.0 + phase)) +
                             noise(rng);
            neg.samples[t] = 1.0 * std::sin(2.0 * M_PI * (2.0 * t / 128.0 + phase)) +
                             noise(rng);
        }
        windows.push_back(std::move(pos));
        windows.push_back(std::move(neg));
    }

    // separability pre-check: a threshold on high-frequency power reaches BAC >= 0.95
    auto hf_power = [](const std::vector<double>& x) {
        double acc = 0.0;
        for (size_t t = 1; t < x.size(); ++t) acc += (x[t] - x[t - 1]) * (x[t] - x[t - 1]);
        return acc;
    };
    std::vector<double> powers;
    for (const auto& w : windows) powers.push_back(hf_power(w.samples));
    double best_bac = 0.0;
    for (double th : powers) {
        long tp = 0, fn = 0, tn = 0, fp = 0;
        for (size_t i = 0; i < windows.size(); ++i) {
            const bool pred = powers[i] >= th;
            if (windows[i].label) (pred ? tp : fn)++;
            else (pred ? fp : tn)++;
        }
        best_bac = std::max(best_bac, 0.5 * (double(tp) / (tp + fn) +
                                             double(tn) / (tn + fp)));
    }
    REQUIRE(best_bac >= 0.95);

    TrainRecipe recipe;
    recipe.max_epochs = 40;
    recipe.patience = 40;
    recipe.batch_size = 16;
    recipe.lr = 3e-3;  // tiny model trains faster with a larger step
    recipe.seed = 5;
    const auto result = train_channel_detector(windows, tiny_config(), recipe);
    CHECK(result.best_val_bac >= 0.95);
    CHECK(!result.log.empty());
    CHECK(result.log.size() <= 40);
    // first epoch reduces the loss relative to the start
    if (result.log.size() >= 2)
        CHECK(result.log.back().train_loss <= result.log.front().train_loss);

    // determinism: rerun gives identical parameters
    const auto rerun = train_channel_detector(windows, tiny_config(), recipe);
    for (const auto& name : result.model.params.names)
        CHECK(rerun.model.params.at(name)->value ==
              result.model.params.at(name)->value);

    // single-class data rejected
    std::vector<LabeledWindow> only_pos(windows.begin(), windows.begin() + 2);
    only_pos[1].label = 1;
    CHECK_THROWS_AS(train_channel_detector(only_pos, tiny_config(), recipe),
                    std::invalid_argument);
}

TEST_CASE("bundle round trip preserves predictions bitwise") {
    auto model = build_model(tiny_config(3), 41);
    std::mt19937_64 rng(43);
    const auto bundle = to_bundle(model);
    CHECK(bundle.kind == "channel-model");
    auto restored = from_bundle(bundle);
    for (int i = 0; i < 5; ++i) {
        const auto w = random_window(model.cfg.window_samples(), rng);
        CHECK(restored.predict_proba(w) == model.predict_proba(w));
    }
    io::ModelBundle wrong = bundle;
    wrong.kind = "boosted-ensemble";
    CHECK_THROWS_AS(from_bundle(wrong), std::invalid_argument);
}

TEST_CASE("dropout needs a generator in training mode") {
    auto cfg = tiny_config();
    cfg.dropout_p = 0.5;
    auto model = build_model(cfg, 47);
    std::mt19937_64 rng(53);
    const auto w = random_window(128, rng);
    CHECK_THROWS_AS(model.forward_logits(w, true, nullptr), std::invalid_argument);
    // inference path ignores dropout entirely
    const auto a = model.predict_proba(w);
    const auto b = model.predict_proba(w);
    CHECK(a == b);
}
