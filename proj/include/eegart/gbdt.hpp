#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dataio.hpp"

namespace eegart::gbdt {

struct GbdtConfig {
    int n_trees = 100;
    int max_depth = 4;
    double learning_rate = 0.1;
    int min_samples_leaf = 1;
    std::optional<std::array<double, 2>> class_weights;  // {negative, positive}
    double subsample = 1.0;
    uint64_t seed = 0;

    void validate() const {
        if (n_trees < 1) throw std::invalid_argument("GbdtConfig: n_trees >= 1");
        if (max_depth < 1) throw std::invalid_argument("GbdtConfig: max_depth >= 1");
        if (!(learning_rate > 0.0 && learning_rate <= 1.0))
            throw std::invalid_argument("GbdtConfig: learning_rate in (0, 1]");
        if (!(subsample > 0.0 && subsample <= 1.0))
            throw std::invalid_argument("GbdtConfig: subsample in (0, 1]");
        if (min_samples_leaf < 1)
            throw std::invalid_argument("GbdtConfig: min_samples_leaf >= 1");
    }
};

// flat binary tree: node i has children 2i+1 / 2i+2; leaf iff feature < 0
struct TreeNode {
    int feature = -1;
    double threshold = 0.0;  // go left when x[feature] <= threshold
    double leaf_value = 0.0;
};

struct RegressionTree {
    std::vector<TreeNode> nodes;

    double predict(std::span<const double> x) const {
        size_t i = 0;
        while (nodes[i].feature >= 0)
            i = (x[nodes[i].feature] <= nodes[i].threshold) ? 2 * i + 1 : 2 * i + 2;
        return nodes[i].leaf_value;
    }
};

struct BoostedEnsemble {
    double base_score = 0.0;  // log-odds of the weighted prior
    std::vector<RegressionTree> trees;
    GbdtConfig config;
    size_t n_features = 0;

    double decision(std::span<const double> x) const {
        if (x.size() != n_features)
            throw std::invalid_argument("predict: feature length mismatch (expected " +
                                        std::to_string(n_features) + ")");
        double score = base_score;
        for (const auto& t : trees) score += config.learning_rate * t.predict(x);
        return score;
    }

    double predict_score(std::span<const double> x) const {
        return 1.0 / (1.0 + std::exp(-decision(x)));
    }
};

namespace detail {

struct SplitChoice {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
};

// Weighted-SSE gain of the best split on the residuals, scanning sorted
// feature values.  Threshold is the midpoint between adjacent distinct values.
inline SplitChoice best_split(const std::vector<std::vector<double>>& x,
                              std::span<const size_t> idx,
                              std::span<const double> residual,
                              std::span<const double> weight, int min_leaf) {
    SplitChoice best;
    if (idx.size() < 2) return best;
    const size_t n_features = x[idx[0]].size();

    double w_tot = 0.0, wr_tot = 0.0;
    for (size_t i : idx) {
        w_tot += weight[i];
        wr_tot += weight[i] * residual[i];
    }
    const double parent_score = wr_tot * wr_tot / w_tot;

    std::vector<size_t> order(idx.begin(), idx.end());
    for (size_t f = 0; f < n_features; ++f) {
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            return x[a][f] < x[b][f];
        });
        double w_left = 0.0, wr_left = 0.0;
        for (size_t k = 0; k + 1 < order.size(); ++k) {
            const size_t i = order[k];
            w_left += weight[i];
            wr_left += weight[i] * residual[i];
            if (x[order[k]][f] == x[order[k + 1]][f]) continue;  // tie, no cut here
            const size_t n_left = k + 1, n_right = order.size() - n_left;
            if (n_left < static_cast<size_t>(min_leaf) ||
                n_right < static_cast<size_t>(min_leaf))
                continue;
            const double w_right = w_tot - w_left;
            const double wr_right = wr_tot - wr_left;
            const double gain = wr_left * wr_left / w_left +
                                wr_right * wr_right / w_right - parent_score;
            if (gain > best.gain + 1e-15) {
                best.feature = static_cast<int>(f);
                best.threshold = 0.5 * (x[order[k]][f] + x[order[k + 1]][f]);
                best.gain = gain;
            }
        }
    }
    return best;
}

inline void grow(RegressionTree& tree, size_t node,
                 const std::vector<std::vector<double>>& x,
                 std::vector<size_t>& idx, std::span<const double> grad,
                 std::span<const double> hess, std::span<const double> residual,
                 std::span<const double> weight, const GbdtConfig& cfg, int depth) {
    auto make_leaf = [&]() {
        double wg = 0.0, wh = 0.0;
        for (size_t i : idx) {
            wg += weight[i] * grad[i];
            wh += weight[i] * hess[i];
        }
        tree.nodes[node].feature = -1;
        tree.nodes[node].leaf_value = (wh > 1e-12) ? -wg / wh : 0.0;  // Newton step
    };

    if (depth >= cfg.max_depth || idx.size() < 2) {
        make_leaf();
        return;
    }
    const SplitChoice split =
        best_split(x, idx, residual, weight, cfg.min_samples_leaf);
    if (split.feature < 0) {
        make_leaf();
        return;
    }
    tree.nodes[node].feature = split.feature;
    tree.nodes[node].threshold = split.threshold;
    std::vector<size_t> left, right;
    for (size_t i : idx)
        (x[i][split.feature] <= split.threshold ? left : right).push_back(i);
    grow(tree, 2 * node + 1, x, left, grad, hess, residual, weight, cfg, depth + 1);
    grow(tree, 2 * node + 2, x, right, grad, hess, residual, weight, cfg, depth + 1);
}

inline void check_features(const std::vector<std::vector<double>>& x) {
    if (x.empty()) throw std::invalid_argument("fit: empty feature matrix");
    const size_t nf = x[0].size();
    for (const auto& row : x) {
        if (row.size() != nf)
            throw std::invalid_argument("fit: ragged feature matrix");
        for (size_t f = 0; f < nf; ++f)
            if (!std::isfinite(row[f]))
                throw std::invalid_argument("fit: non-finite value in feature column " +
                                            std::to_string(f));
    }
}

}  // namespace detail

// Logistic-loss gradient boosting: trees fit the weighted negative gradient of
// the current log-odds with exact greedy splits; leaf values by Newton step.
inline BoostedEnsemble fit_boosted_binary(const std::vector<std::vector<double>>& x,
                                          const std::vector<int>& y,
                                          const GbdtConfig& cfg) {
    cfg.validate();
    detail::check_features(x);
    if (y.size() != x.size()) throw std::invalid_argument("fit: label count mismatch");
    long n_pos = 0, n_neg = 0;
    for (int v : y) (v ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("fit_boosted_binary: both classes required");

    const size_t n = x.size();
    std::array<double, 2> cw = cfg.class_weights.value_or(std::array<double, 2>{
        static_cast<double>(n) / (2.0 * n_neg), static_cast<double>(n) / (2.0 * n_pos)});
    std::vector<double> weight(n);
    for (size_t i = 0; i < n; ++i) weight[i] = cw[y[i]];

    BoostedEnsemble model;
    model.config = cfg;
    model.n_features = x[0].size();
    {
        double wp = 0.0, wn = 0.0;
        for (size_t i = 0; i < n; ++i) (y[i] ? wp : wn) += weight[i];
        model.base_score = std::log(wp / wn);
    }

    std::vector<double> score(n, model.base_score);
    std::vector<double> grad(n), hess(n), residual(n);
    std::mt19937_64 rng(cfg.seed);

    const size_t tree_size = (1u << (cfg.max_depth + 1)) - 1;
    for (int round = 0; round < cfg.n_trees; ++round) {
        for (size_t i = 0; i < n; ++i) {
            const double p = 1.0 / (1.0 + std::exp(-score[i]));
            grad[i] = p - y[i];
            hess[i] = std::max(p * (1.0 - p), 1e-12);
            residual[i] = y[i] - p;  // negative gradient
        }
        std::vector<size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        if (cfg.subsample < 1.0) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(std::max<size_t>(2, static_cast<size_t>(n * cfg.subsample)));
        }
        RegressionTree tree;
        tree.nodes.assign(tree_size, {});
        detail::grow(tree, 0, x, idx, grad, hess, residual, weight, cfg, 0);
        model.trees.push_back(tree);
        for (size_t i = 0; i < n; ++i)
            score[i] += cfg.learning_rate * tree.predict(x[i]);
    }
    return model;
}

// ---- grid search ----

struct GridPointResult {
    GbdtConfig config;
    double val_bac = 0.0;
};

struct GridSearchResult {
    GbdtConfig best;
    std::vector<GridPointResult> table;
};

// Patient-disjoint inner 80/20 split scored by BAC at threshold 0.5.
// Ties broken by fewer trees, then shallower depth.
inline GridSearchResult grid_search(const std::vector<std::vector<double>>& x,
                                    const std::vector<int>& y,
                                    const std::vector<std::string>& patient_ids,
                                    const std::vector<GbdtConfig>& grid,
                                    double inner_split = 0.8) {
    if (grid.empty()) throw std::invalid_argument("grid_search: empty grid");
    if (patient_ids.size() != x.size())
        throw std::invalid_argument("grid_search: patient id count mismatch");

    std::vector<std::string> patients(patient_ids.begin(), patient_ids.end());
    std::sort(patients.begin(), patients.end());
    patients.erase(std::unique(patients.begin(), patients.end()), patients.end());
    const size_t n_train_pat = std::max<size_t>(
        1, static_cast<size_t>(std::lround(patients.size() * inner_split)));
    std::set<std::string> train_pat(patients.begin(), patients.begin() + n_train_pat);

    std::vector<std::vector<double>> xt, xv;
    std::vector<int> yt, yv;
    for (size_t i = 0; i < x.size(); ++i) {
        if (train_pat.count(patient_ids[i])) { xt.push_back(x[i]); yt.push_back(y[i]); }
        else { xv.push_back(x[i]); yv.push_back(y[i]); }
    }

    GridSearchResult result;
    bool any_valid = false;
    double best_bac = -1.0;
    for (const auto& cfg : grid) {
        GridPointResult point;
        point.config = cfg;
        try {
            auto model = fit_boosted_binary(xt, yt, cfg);
            long tp = 0, fn = 0, tn = 0, fp = 0;
            for (size_t i = 0; i < xv.size(); ++i) {
                const bool pred = model.predict_score(xv[i]) >= 0.5;
                if (yv[i]) (pred ? tp : fn)++;
                else (pred ? fp : tn)++;
            }
            const double sen = (tp + fn) ? static_cast<double>(tp) / (tp + fn) : 0.0;
            const double spe = (tn + fp) ? static_cast<double>(tn) / (tn + fp) : 0.0;
            point.val_bac = 0.5 * (sen + spe);
            any_valid = true;
            const bool better =
                point.val_bac > best_bac ||
                (point.val_bac == best_bac &&
                 (cfg.n_trees < result.best.n_trees ||
                  (cfg.n_trees == result.best.n_trees &&
                   cfg.max_depth < result.best.max_depth)));
            if (better) {
                best_bac = point.val_bac;
                result.best = cfg;
            }
        } catch (const std::invalid_argument&) {
            point.val_bac = std::numeric_limits<double>::quiet_NaN();
        }
        result.table.push_back(point);
    }
    if (!any_valid)
        throw std::invalid_argument("grid_search: no grid configuration could be trained");
    return result;
}

// ---- multi-class / multi-label / combined ----

inline const std::array<std::string, 6> kMulticlassOrder = {
    "bckg", "chew", "elec", "eyem", "musc", "shiv"};

struct OneVsRestModel {
    std::vector<std::string> classes;          // classes actually trained
    std::vector<BoostedEnsemble> ensembles;    // aligned with classes

    std::vector<double> scores(std::span<const double> x) const {
        std::vector<double> s;
        for (const auto& m : ensembles) s.push_back(m.predict_score(x));
        return s;
    }
    std::string predict(std::span<const double> x) const {
        const auto s = scores(x);
        const size_t best = std::max_element(s.begin(), s.end()) - s.begin();
        return classes[best];
    }
};

inline OneVsRestModel fit_one_vs_rest(const std::vector<std::vector<double>>& x,
                                      const std::vector<std::string>& y,
                                      const GbdtConfig& cfg) {
    if (y.size() != x.size()) throw std::invalid_argument("fit: label count mismatch");
    std::set<std::string> present(y.begin(), y.end());
    if (present.size() < 2)
        throw std::invalid_argument("fit_one_vs_rest: at least 2 classes required");
    OneVsRestModel model;
    for (const auto& cls : kMulticlassOrder) {
        if (!present.count(cls)) continue;  // absent class: omitted, never predicted
        std::vector<int> binary(y.size());
        for (size_t i = 0; i < y.size(); ++i) binary[i] = (y[i] == cls) ? 1 : 0;
        model.classes.push_back(cls);
        model.ensembles.push_back(fit_boosted_binary(x, binary, cfg));
    }
    return model;
}

struct MultiLabelModel {
    std::vector<std::string> types;            // heads actually trained
    std::vector<BoostedEnsemble> ensembles;
    std::vector<std::string> skipped;          // single-valued columns
    double threshold = 0.5;

    std::vector<double> scores(std::span<const double> x) const {
        std::vector<double> s;
        for (const auto& m : ensembles) s.push_back(m.predict_score(x));
        return s;
    }
};

// Independent binary heads over the per-type label matrix (columns in
// io::kArtifactLabels order).
inline MultiLabelModel fit_multilabel(const std::vector<std::vector<double>>& x,
                                      const std::vector<std::array<int, 5>>& labels,
                                      const GbdtConfig& cfg) {
    if (labels.size() != x.size())
        throw std::invalid_argument("fit: label count mismatch");
    MultiLabelModel model;
    for (size_t t = 0; t < io::kArtifactLabels.size(); ++t) {
        std::vector<int> col(labels.size());
        for (size_t i = 0; i < labels.size(); ++i) col[i] = labels[i][t];
        const long pos = std::count(col.begin(), col.end(), 1);
        if (pos == 0 || pos == static_cast<long>(col.size())) {
            model.skipped.push_back(io::kArtifactLabels[t]);
            continue;
        }
        model.types.push_back(io::kArtifactLabels[t]);
        model.ensembles.push_back(fit_boosted_binary(x, col, cfg));
    }
    return model;
}

// Combined detector over the 5-column matrix of per-type segment
// probabilities (chew, elec, eyem, musc, shiv order).
inline BoostedEnsemble fit_combined_binary(const std::vector<std::vector<double>>& probs,
                                           const std::vector<int>& y,
                                           const GbdtConfig& cfg) {
    for (const auto& row : probs)
        if (row.size() != 5)
            throw std::invalid_argument("fit_combined_binary: expected 5 probability columns");
    return fit_boosted_binary(probs, y, cfg);
}

// ---- persistence ----

inline io::ModelBundle to_bundle(const BoostedEnsemble& model) {
    io::ModelBundle bundle;
    bundle.kind = "boosted-ensemble";
    nlohmann::json cfg;
    cfg["n_trees"] = model.config.n_trees;
    cfg["max_depth"] = model.config.max_depth;
    cfg["learning_rate"] = model.config.learning_rate;
    cfg["min_samples_leaf"] = model.config.min_samples_leaf;
    cfg["subsample"] = model.config.subsample;
    cfg["seed"] = model.config.seed;
    bundle.manifest["config"] = cfg;
    bundle.manifest["base_score"] = model.base_score;
    bundle.manifest["n_features"] = model.n_features;
    bundle.manifest["n_tree_nodes"] =
        model.trees.empty() ? 0 : model.trees[0].nodes.size();
    // trees flattened as (feature, threshold, leaf_value) triples
    std::vector<double> flat;
    for (const auto& t : model.trees)
        for (const auto& node : t.nodes) {
            flat.push_back(node.feature);
            flat.push_back(node.threshold);
            flat.push_back(node.leaf_value);
        }
    bundle.blobs.emplace_back("trees", std::move(flat));
    return bundle;
}

inline BoostedEnsemble ensemble_from_bundle(const io::ModelBundle& bundle) {
    if (bundle.kind != "boosted-ensemble")
        throw std::invalid_argument("ensemble_from_bundle: wrong bundle kind");
    BoostedEnsemble model;
    const auto& cfg = bundle.manifest.at("config");
    model.config.n_trees = cfg.at("n_trees").get<int>();
    model.config.max_depth = cfg.at("max_depth").get<int>();
    model.config.learning_rate = cfg.at("learning_rate").get<double>();
    model.config.min_samples_leaf = cfg.at("min_samples_leaf").get<int>();
    model.config.subsample = cfg.at("subsample").get<double>();
    model.config.seed = cfg.at("seed").get<uint64_t>();
    model.base_score = bundle.manifest.at("base_score").get<double>();
    model.n_features = bundle.manifest.at("n_features").get<size_t>();
    const size_t node_count = bundle.manifest.at("n_tree_nodes").get<size_t>();
    const auto& flat = bundle.blob("trees");
    if (node_count == 0 || flat.size() % (3 * node_count) != 0)
        throw io::ParseError("ensemble_from_bundle: tree blob size mismatch");
    const size_t n_trees = flat.size() / (3 * node_count);
    size_t pos = 0;
    for (size_t t = 0; t < n_trees; ++t) {
        RegressionTree tree;
        tree.nodes.resize(node_count);
        for (auto& node : tree.nodes) {
            node.feature = static_cast<int>(flat[pos++]);
            node.threshold = flat[pos++];
            node.leaf_value = flat[pos++];
        }
        model.trees.push_back(std::move(tree));
    }
    return model;
}

}  // namespace eegart::gbdt
