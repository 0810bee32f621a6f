#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dataio.hpp"
#include "dsp.hpp"
#include "special.hpp"
#include "tensor.hpp"

namespace eegart::bm {

using num::TensorPtr;

struct ChannelModelConfig {
    int window_len_s = 1;  // in {1, 3, 5}
    std::array<int, 5> conv_filters = {8, 16, 32, 64, 128};
    int kernel_size = 3;
    int d_model = 128;
    int heads = 8;
    int ffn_hidden = 1024;
    int fc1 = 100;
    int out_classes = 2;
    double dropout_p = 0.5;
    int encoder_layers = 1;

    void validate() const {
        if (window_len_s != 1 && window_len_s != 3 && window_len_s != 5)
            throw std::invalid_argument("ChannelModelConfig: window_len_s must be 1, 3 or 5");
        if (kernel_size != 3)
            throw std::invalid_argument("ChannelModelConfig: kernel_size must be 3");
        if (d_model < 2 || d_model % heads != 0)
            throw std::invalid_argument("ChannelModelConfig: d_model must divide by heads");
        if (out_classes != 2)
            throw std::invalid_argument("ChannelModelConfig: out_classes must be 2");
        for (int f : conv_filters)
            if (f < 1) throw std::invalid_argument("ChannelModelConfig: conv filters >= 1");
        if (encoder_layers < 1)
            throw std::invalid_argument("ChannelModelConfig: encoder_layers >= 1");
        if (!(dropout_p >= 0.0 && dropout_p < 1.0))
            throw std::invalid_argument("ChannelModelConfig: dropout_p in [0, 1)");
    }

    dsp::WindowPlan plan() const {
        dsp::WindowPlan p;
        p.window_len_s = window_len_s;
        return p;
    }
    int window_samples() const { return plan().window_samples(); }
    int n_tokens() const { return plan().n_local_segments(); }
    // local segment after 5 pool halvings: 64 -> 2 samples
    int token_width() const { return conv_filters[4] * 2; }
};

struct DirichletOutput {
    double alpha_artifact = 1.0;
    double alpha_background = 1.0;
    double alpha0() const { return alpha_artifact + alpha_background; }
    double p_artifact() const { return alpha_artifact / alpha0(); }
};

// KL(Dir(alpha) || Dir(beta)) for positive concentration vectors.
inline double dirichlet_kl(std::span<const double> alpha, std::span<const double> beta) {
    if (alpha.size() != beta.size() || alpha.empty())
        throw std::invalid_argument("dirichlet_kl: size mismatch");
    double a0 = 0.0, b0 = 0.0;
    for (double a : alpha) {
        if (!(a > 0.0)) throw std::domain_error("dirichlet_kl: nonpositive concentration");
        a0 += a;
    }
    for (double b : beta) {
        if (!(b > 0.0)) throw std::domain_error("dirichlet_kl: nonpositive concentration");
        b0 += b;
    }
    double kl = log_gamma(a0) - log_gamma(b0);
    const double psi_a0 = digamma(a0);
    for (size_t k = 0; k < alpha.size(); ++k) {
        kl += log_gamma(beta[k]) - log_gamma(alpha[k]);
        kl += (alpha[k] - beta[k]) * (digamma(alpha[k]) - psi_a0);
    }
    return kl;
}

// Evidence lower bound l_EB(y, alpha) = psi(alpha_y) - psi(alpha_0)
// - KL(Dir(alpha) || Dir(prior)), as a differentiable graph node over the
// alpha tensor [1, 2].  y: 0 = background, 1 = artifact; alpha layout is
// (alpha_background, alpha_artifact) matching the logit order.
inline TensorPtr elbo_node(const TensorPtr& alpha, int y,
                           std::array<double, 2> prior = {1.0, 1.0}) {
    if (alpha->size() != 2) throw std::invalid_argument("elbo_node: alpha must have 2 entries");
    if (y != 0 && y != 1) throw std::invalid_argument("elbo_node: label must be 0 or 1");
    const double a[2] = {alpha->value[0], alpha->value[1]};
    for (double v : a)
        if (!(v > 0.0)) throw std::domain_error("elbo_node: nonpositive alpha");
    const double a0 = a[0] + a[1];
    const double kl = dirichlet_kl(std::span<const double>(a, 2),
                                   std::span<const double>(prior.data(), 2));
    const double value = digamma(a[y]) - digamma(a0) - kl;

    auto out = num::detail::make_node({1, 1}, {alpha}, [alpha, y, prior](num::Tensor& self) {
        const double g = self.grad[0];
        const double av[2] = {alpha->value[0], alpha->value[1]};
        const double a0v = av[0] + av[1];
        const double tg0 = trigamma(a0v);
        const double s = (av[0] - prior[0]) + (av[1] - prior[1]);
        alpha->ensure_grad();
        for (int j = 0; j < 2; ++j) {
            double d = -tg0 - (av[j] - prior[j]) * trigamma(av[j]) + tg0 * s;
            if (j == y) d += trigamma(av[y]);
            alpha->grad[j] += g * d;
        }
    });
    out->value[0] = value;
    return out;
}

// ---- model ----

struct ChannelModel {
    ChannelModelConfig cfg;
    num::ParamStore params;
    uint64_t init_seed = 0;

    // forward pass over one window; returns the clamped logit tensor [1, 2]
    // (order: background, artifact).  In training mode dropout is applied
    // using the supplied generator.
    TensorPtr forward_logits(std::span<const double> window, bool training = false,
                             std::mt19937_64* rng = nullptr) const;

    DirichletOutput forward(std::span<const double> window) const {
        auto alpha = num::exp_op(forward_logits(window));
        DirichletOutput out;
        out.alpha_background = alpha->value[0];
        out.alpha_artifact = alpha->value[1];
        return out;
    }

    double predict_proba(std::span<const double> window) const {
        return forward(window).p_artifact();
    }
};

namespace detail {

inline TensorPtr he_uniform(num::ParamStore& ps, const std::string& name,
                            std::vector<size_t> shape, size_t fan_in,
                            std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    auto t = num::make_tensor(std::move(shape));
    for (double& v : t->value) v = dist(rng);
    return ps.add(name, t);
}

inline TensorPtr zeros_param(num::ParamStore& ps, const std::string& name,
                             std::vector<size_t> shape, double fill = 0.0) {
    auto t = num::make_tensor(std::move(shape));
    std::fill(t->value.begin(), t->value.end(), fill);
    return ps.add(name, t);
}

// fixed sinusoidal positional encoding, [n_tokens, d_model]
inline std::vector<double> sinusoidal_encoding(int n_tokens, int d_model) {
    std::vector<double> pe(static_cast<size_t>(n_tokens) * d_model);
    for (int pos = 0; pos < n_tokens; ++pos)
        for (int i = 0; i < d_model; ++i) {
            const double angle = pos / std::pow(10000.0, 2.0 * (i / 2) / d_model);
            pe[pos * d_model + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    return pe;
}

}  // namespace detail

inline ChannelModel build_model(const ChannelModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ChannelModel model;
    model.cfg = cfg;
    model.init_seed = seed;
    std::mt19937_64 rng(seed);
    auto& ps = model.params;

    int c_in = 1;
    for (int layer = 0; layer < 5; ++layer) {
        const int c_out = cfg.conv_filters[layer];
        const std::string base = "conv" + std::to_string(layer + 1);
        detail::he_uniform(ps, base + ".w",
                           {static_cast<size_t>(c_out), static_cast<size_t>(c_in), 3},
                           static_cast<size_t>(c_in) * 3, rng);
        detail::zeros_param(ps, base + ".b", {static_cast<size_t>(c_out)});
        c_in = c_out;
    }
    const size_t tok_w = static_cast<size_t>(cfg.token_width());
    const size_t d = static_cast<size_t>(cfg.d_model);
    detail::he_uniform(ps, "embed.w", {tok_w, d}, tok_w, rng);
    detail::zeros_param(ps, "embed.b", {d});

    for (int l = 0; l < cfg.encoder_layers; ++l) {
        const std::string base = "enc" + std::to_string(l);
        for (const char* proj : {"wq", "wk", "wv", "wo"})
            detail::he_uniform(ps, base + "." + proj, {d, d}, d, rng);
        for (const char* bias : {"bq", "bk", "bv", "bo"})
            detail::zeros_param(ps, base + "." + bias, {d});
        detail::zeros_param(ps, base + ".ln1.g", {d}, 1.0);
        detail::zeros_param(ps, base + ".ln1.b", {d});
        const size_t h = static_cast<size_t>(cfg.ffn_hidden);
        detail::he_uniform(ps, base + ".ffn1.w", {d, h}, d, rng);
        detail::zeros_param(ps, base + ".ffn1.b", {h});
        detail::he_uniform(ps, base + ".ffn2.w", {h, d}, h, rng);
        detail::zeros_param(ps, base + ".ffn2.b", {d});
        detail::zeros_param(ps, base + ".ln2.g", {d}, 1.0);
        detail::zeros_param(ps, base + ".ln2.b", {d});
    }

    const size_t f1 = static_cast<size_t>(cfg.fc1);
    detail::he_uniform(ps, "fc1.w", {d, f1}, d, rng);
    detail::zeros_param(ps, "fc1.b", {f1});
    detail::he_uniform(ps, "fc2.w", {f1, 2}, f1, rng);
    detail::zeros_param(ps, "fc2.b", {2});
    return model;
}

inline TensorPtr ChannelModel::forward_logits(std::span<const double> window,
                                              bool training,
                                              std::mt19937_64* rng) const {
    const auto plan = cfg.plan();
    if (static_cast<int>(window.size()) != plan.window_samples())
        throw std::invalid_argument("forward: window length does not match model config");
    if (training && cfg.dropout_p > 0.0 && rng == nullptr)
        throw std::invalid_argument("forward: training mode needs a generator for dropout");

    const auto& ps = params;
    const auto segments = dsp::extract_local_segments(window, plan);

    // per-token CNN feature extraction (shared weights)
    std::vector<TensorPtr> token_rows;
    token_rows.reserve(segments.size());
    for (const auto& seg : segments) {
        TensorPtr x = num::make_tensor({1, seg.size()}, seg);
        for (int layer = 0; layer < 5; ++layer) {
            const std::string base = "conv" + std::to_string(layer + 1);
            x = num::relu(num::conv1d(x, ps.at(base + ".w"), ps.at(base + ".b")));
            x = num::maxpool1d(x);
        }
        token_rows.push_back(num::reshape(x, {1, x->size()}));
    }
    TensorPtr tokens = num::row_stack(token_rows);  // [n, token_width]
    tokens = num::add_row_broadcast(num::matmul(tokens, ps.at("embed.w")),
                                    ps.at("embed.b"));

    // positional encoding
    const size_t n = tokens->shape[0], d = tokens->shape[1];
    TensorPtr pe = num::make_tensor({n, d},
        detail::sinusoidal_encoding(static_cast<int>(n), static_cast<int>(d)));
    tokens = num::add(tokens, pe);

    const size_t dh = d / static_cast<size_t>(cfg.heads);
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    for (int l = 0; l < cfg.encoder_layers; ++l) {
        const std::string base = "enc" + std::to_string(l);
        TensorPtr q = num::add_row_broadcast(num::matmul(tokens, ps.at(base + ".wq")),
                                             ps.at(base + ".bq"));
        TensorPtr k = num::add_row_broadcast(num::matmul(tokens, ps.at(base + ".wk")),
                                             ps.at(base + ".bk"));
        TensorPtr v = num::add_row_broadcast(num::matmul(tokens, ps.at(base + ".wv")),
                                             ps.at(base + ".bv"));
        std::vector<TensorPtr> head_outs;
        for (int h = 0; h < cfg.heads; ++h) {
            TensorPtr qh = num::col_slice(q, h * dh, dh);
            TensorPtr kh = num::col_slice(k, h * dh, dh);
            TensorPtr vh = num::col_slice(v, h * dh, dh);
            TensorPtr scores = num::scale(num::matmul(qh, num::transpose(kh)), att_scale);
            head_outs.push_back(num::matmul(num::softmax_rows(scores), vh));
        }
        TensorPtr att = num::add_row_broadcast(
            num::matmul(num::col_concat(head_outs), ps.at(base + ".wo")),
            ps.at(base + ".bo"));
        tokens = num::layer_norm_rows(num::add(tokens, att), ps.at(base + ".ln1.g"),
                                      ps.at(base + ".ln1.b"));
        TensorPtr ff = num::relu(num::add_row_broadcast(
            num::matmul(tokens, ps.at(base + ".ffn1.w")), ps.at(base + ".ffn1.b")));
        ff = num::add_row_broadcast(num::matmul(ff, ps.at(base + ".ffn2.w")),
                                    ps.at(base + ".ffn2.b"));
        tokens = num::layer_norm_rows(num::add(tokens, ff), ps.at(base + ".ln2.g"),
                                      ps.at(base + ".ln2.b"));
    }

    TensorPtr pooled = num::mean_rows(tokens);  // [1, d]
    TensorPtr hidden = num::relu(num::add_row_broadcast(
        num::matmul(pooled, ps.at("fc1.w")), ps.at("fc1.b")));

    if (training && cfg.dropout_p > 0.0) {
        // inverted dropout
        std::bernoulli_distribution keep(1.0 - cfg.dropout_p);
        auto mask = num::make_tensor(hidden->shape);
        const double inv_keep = 1.0 / (1.0 - cfg.dropout_p);
        for (double& m : mask->value) m = keep(*rng) ? inv_keep : 0.0;
        hidden = num::mul(hidden, mask);
    }

    TensorPtr logits = num::add_row_broadcast(num::matmul(hidden, ps.at("fc2.w")),
                                              ps.at("fc2.b"));
    return num::clamp(logits, -30.0, 30.0);
}

// ---- labeled windows & loss ----

struct LabeledWindow {
    std::vector<double> samples;
    int label = 0;  // 1 = artifact, 0 = background
    std::string artifact_type;
    std::string channel;
    std::string patient_id;
};

// Batch BM loss: -(1/m) sum w_y * l_EB(y, alpha).  Forward passes are built
// per window; returns the scalar loss tensor.
inline TensorPtr bm_loss(const std::vector<const LabeledWindow*>& batch,
                         const ChannelModel& model,
                         const std::array<double, 2>& class_weights,
                         bool training = false, std::mt19937_64* rng = nullptr,
                         std::array<double, 2> prior = {1.0, 1.0}) {
    if (batch.empty()) throw std::invalid_argument("bm_loss: empty batch");
    TensorPtr total;
    for (const LabeledWindow* w : batch) {
        TensorPtr alpha = num::exp_op(model.forward_logits(w->samples, training, rng));
        TensorPtr term = num::scale(elbo_node(alpha, w->label, prior),
                                    -class_weights[w->label]);
        total = total ? num::add(total, term) : term;
    }
    return num::scale(total, 1.0 / static_cast<double>(batch.size()));
}

// Window labeling: positive iff events of the requested type on the channel
// cover >= 50% of the window; background iff zero overlap with any event of
// any type; anything in between is discarded.
inline std::vector<LabeledWindow> label_windows(
    const io::EegRecording& rec, const std::vector<io::ArtifactEvent>& events,
    const dsp::WindowPlan& plan, const std::string& artifact_type) {
    plan.validate();
    if (!io::is_artifact_label(artifact_type))
        throw std::invalid_argument("label_windows: unknown artifact type " + artifact_type);
    if (std::lround(rec.sample_rate_hz) != plan.sample_rate_hz)
        throw std::invalid_argument("label_windows: recording must be at 128 Hz");

    std::vector<LabeledWindow> out;
    const double win_s = static_cast<double>(plan.window_len_s);
    for (size_t ci = 0; ci < rec.channels.size(); ++ci) {
        const auto& name = rec.channels[ci];
        const auto windows = dsp::extract_windows(rec.samples[ci], plan);
        for (size_t wi = 0; wi < windows.size(); ++wi) {
            const double w_start = wi * win_s, w_stop = w_start + win_s;
            double type_cover = 0.0, any_overlap = 0.0;
            for (const auto& e : events) {
                if (e.channel != name) continue;
                const double ov = std::max(0.0, std::min(e.stop_s, w_stop) -
                                                std::max(e.start_s, w_start));
                if (ov <= 0.0) continue;
                any_overlap += ov;
                if (e.label == artifact_type) type_cover += ov;
            }
            LabeledWindow lw;
            if (type_cover >= 0.5 * win_s) lw.label = 1;
            else if (any_overlap > 0.0) continue;  // ambiguous, discarded
            else lw.label = 0;
            lw.samples = windows[wi];
            lw.artifact_type = artifact_type;
            lw.channel = name;
            lw.patient_id = rec.patient_id;
            out.push_back(std::move(lw));
        }
    }
    return out;
}

// ---- training ----

struct TrainRecipe {
    double lr = 1e-4;
    int batch_size = 64;
    int max_epochs = 30;
    int patience = 5;
    double validation_split = 0.2;
    uint64_t seed = 0;
    std::optional<std::array<double, 2>> class_weights;  // {background, artifact}

    void validate() const {
        if (batch_size < 1) throw std::invalid_argument("TrainRecipe: batch_size >= 1");
        if (!(validation_split > 0.0 && validation_split < 1.0))
            throw std::invalid_argument("TrainRecipe: validation_split in (0, 1)");
        if (class_weights && ((*class_weights)[0] <= 0.0 || (*class_weights)[1] <= 0.0))
            throw std::invalid_argument("TrainRecipe: class weights must be positive");
    }
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_bac = 0.0;
};

struct TrainResult {
    ChannelModel model;
    std::vector<EpochLog> log;
    double best_val_bac = 0.0;
    std::array<double, 2> class_weights = {1.0, 1.0};
};

namespace detail {

inline double validation_bac(const ChannelModel& model,
                             const std::vector<const LabeledWindow*>& val) {
    long tp = 0, fn = 0, tn = 0, fp = 0;
    for (const LabeledWindow* w : val) {
        const bool pred = model.predict_proba(w->samples) >= 0.5;
        if (w->label == 1) (pred ? tp : fn)++;
        else (pred ? fp : tn)++;
    }
    const double sen = (tp + fn) ? static_cast<double>(tp) / (tp + fn) : 0.0;
    const double spe = (tn + fp) ? static_cast<double>(tn) / (tn + fp) : 0.0;
    return 0.5 * (sen + spe);
}

inline std::vector<std::vector<double>> snapshot(const num::ParamStore& ps) {
    std::vector<std::vector<double>> out;
    for (const auto& name : ps.names) out.push_back(ps.params.at(name)->value);
    return out;
}

inline void restore(num::ParamStore& ps, const std::vector<std::vector<double>>& snap) {
    for (size_t i = 0; i < ps.names.size(); ++i)
        ps.params.at(ps.names[i])->value = snap[i];
}

}  // namespace detail

inline TrainResult train_channel_detector(const std::vector<LabeledWindow>& windows,
                                          const ChannelModelConfig& cfg,
                                          const TrainRecipe& recipe) {
    recipe.validate();
    long n_pos = 0, n_neg = 0;
    for (const auto& w : windows) (w.label ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("train_channel_detector: both classes required");

    // inverse class frequency, normalized so the weighted sample mean is 1
    std::array<double, 2> weights;
    if (recipe.class_weights) {
        weights = *recipe.class_weights;
    } else {
        const double m = static_cast<double>(windows.size());
        weights = {m / (2.0 * n_neg), m / (2.0 * n_pos)};
    }

    TrainResult result;
    result.class_weights = weights;
    result.model = build_model(cfg, recipe.seed);
    std::mt19937_64 rng(recipe.seed ^ 0x9e3779b97f4a7c15ull);

    // stratified train/validation split
    std::vector<const LabeledWindow*> pos, neg;
    for (const auto& w : windows) (w.label ? pos : neg).push_back(&w);
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);
    std::vector<const LabeledWindow*> train, val;
    auto split = [&](std::vector<const LabeledWindow*>& src) {
        const size_t n_val = std::max<size_t>(
            1, static_cast<size_t>(std::lround(src.size() * recipe.validation_split)));
        for (size_t i = 0; i < src.size(); ++i)
            (i < n_val ? val : train).push_back(src[i]);
    };
    split(pos);
    split(neg);
    if (train.empty()) throw std::invalid_argument("train_channel_detector: too few windows");

    num::AdamConfig adam;
    adam.lr = recipe.lr;

    auto best = detail::snapshot(result.model.params);
    result.best_val_bac = detail::validation_bac(result.model, val);
    int since_best = 0;

    for (int epoch = 1; epoch <= recipe.max_epochs; ++epoch) {
        std::shuffle(train.begin(), train.end(), rng);
        double epoch_loss = 0.0;
        size_t n_batches = 0;
        for (size_t start = 0; start < train.size();
             start += static_cast<size_t>(recipe.batch_size)) {
            const size_t stop = std::min(train.size(),
                                         start + static_cast<size_t>(recipe.batch_size));
            std::vector<const LabeledWindow*> batch(train.begin() + start,
                                                    train.begin() + stop);
            result.model.params.zero_grad();
            TensorPtr loss = bm_loss(batch, result.model, weights, true, &rng);
            num::backward(loss);
            num::adam_step(result.model.params, adam);
            epoch_loss += loss->value[0];
            ++n_batches;
        }
        EpochLog log;
        log.epoch = epoch;
        log.train_loss = epoch_loss / static_cast<double>(n_batches);
        log.val_bac = detail::validation_bac(result.model, val);
        result.log.push_back(log);

        if (log.val_bac > result.best_val_bac) {
            result.best_val_bac = log.val_bac;
            best = detail::snapshot(result.model.params);
            since_best = 0;
        } else if (++since_best >= recipe.patience) {
            break;
        }
    }
    detail::restore(result.model.params, best);
    return result;
}

// ---- persistence ----

inline io::ModelBundle to_bundle(const ChannelModel& model) {
    io::ModelBundle bundle;
    bundle.kind = "channel-model";
    nlohmann::json cfg;
    cfg["window_len_s"] = model.cfg.window_len_s;
    cfg["conv_filters"] = model.cfg.conv_filters;
    cfg["d_model"] = model.cfg.d_model;
    cfg["heads"] = model.cfg.heads;
    cfg["ffn_hidden"] = model.cfg.ffn_hidden;
    cfg["fc1"] = model.cfg.fc1;
    cfg["dropout_p"] = model.cfg.dropout_p;
    cfg["encoder_layers"] = model.cfg.encoder_layers;
    bundle.manifest["config"] = cfg;
    bundle.manifest["init_seed"] = model.init_seed;
    for (const auto& name : model.params.names)
        bundle.blobs.emplace_back(name, model.params.params.at(name)->value);
    return bundle;
}

inline ChannelModel from_bundle(const io::ModelBundle& bundle) {
    if (bundle.kind != "channel-model")
        throw std::invalid_argument("from_bundle: bundle kind is not channel-model");
    const auto& cfg_json = bundle.manifest.at("config");
    ChannelModelConfig cfg;
    cfg.window_len_s = cfg_json.at("window_len_s").get<int>();
    cfg.conv_filters = cfg_json.at("conv_filters").get<std::array<int, 5>>();
    cfg.d_model = cfg_json.at("d_model").get<int>();
    cfg.heads = cfg_json.at("heads").get<int>();
    cfg.ffn_hidden = cfg_json.at("ffn_hidden").get<int>();
    cfg.fc1 = cfg_json.at("fc1").get<int>();
    cfg.dropout_p = cfg_json.at("dropout_p").get<double>();
    cfg.encoder_layers = cfg_json.at("encoder_layers").get<int>();
    ChannelModel model = build_model(cfg, bundle.manifest.value("init_seed", 0ull));
    for (const auto& [name, data] : bundle.blobs) {
        auto t = model.params.at(name);
        if (t->size() != data.size())
            throw io::ParseError("from_bundle: parameter shape mismatch for " + name);
        t->value = data;
    }
    if (bundle.blobs.size() != model.params.names.size())
        throw io::ParseError("from_bundle: parameter count mismatch");
    return model;
}

}  // namespace eegart::bm
