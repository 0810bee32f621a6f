#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace eegart::eval {

namespace detail {

inline void check_binary(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw std::invalid_argument("metrics: score/label size mismatch");
    bool has_pos = false, has_neg = false;
    for (int y : labels) (y ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg)
        throw std::invalid_argument("metrics: undefined with single-class labels");
}

}  // namespace detail

// ROC AUC with tied scores grouped into a single threshold step; equals the
// Mann-Whitney statistic P(s+ > s-) + 0.5 P(tie).
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    detail::check_binary(scores, labels);
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    double n_pos = 0, n_neg = 0;
    for (int y : labels) (y ? n_pos : n_neg)++;

    // rank-sum with midranks for ties
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (size_t k = i; k < j; ++k)
            if (labels[order[k]]) rank_sum_pos += midrank;
        i = j;
    }
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg);
}

// Average precision: step-wise integral of precision over recall.
inline double auprc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw std::invalid_argument("metrics: score/label size mismatch");
    double n_pos = 0;
    for (int y : labels) n_pos += y;
    if (n_pos == 0) throw std::invalid_argument("auprc: undefined with no positives");

    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] > scores[b]; });

    double ap = 0.0, tp = 0.0, fp = 0.0, prev_recall = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        for (size_t k = i; k < j; ++k) (labels[order[k]] ? tp : fp)++;
        const double recall = tp / n_pos;
        const double precision = tp / (tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

struct Confusion {
    long tp = 0, fn = 0, tn = 0, fp = 0;
};

struct ThresholdRates {
    double acc = 0.0, bac = 0.0, sen = 0.0, spe = 0.0;
    Confusion confusion;
};

inline ThresholdRates rates_at_threshold(std::span<const double> scores,
                                         std::span<const int> labels, double th) {
    detail::check_binary(scores, labels);
    ThresholdRates r;
    for (size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= th;
        if (labels[i]) (pred ? r.confusion.tp : r.confusion.fn)++;
        else (pred ? r.confusion.fp : r.confusion.tn)++;
    }
    const auto& c = r.confusion;
    r.sen = static_cast<double>(c.tp) / (c.tp + c.fn);
    r.spe = static_cast<double>(c.tn) / (c.tn + c.fp);
    r.bac = 0.5 * (r.sen + r.spe);
    r.acc = static_cast<double>(c.tp + c.tn) / scores.size();
    return r;
}

struct SenAtSpe {
    double sen = 0.0;
    double threshold = 0.0;
    bool reachable = true;
};

// Smallest threshold achieving SPE >= target.
inline SenAtSpe sen_at_spe(std::span<const double> scores, std::span<const int> labels,
                           double spe_target) {
    detail::check_binary(scores, labels);
    std::vector<double> candidates(scores.begin(), scores.end());
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    // thresholds between/above observed scores
    std::vector<double> sweep;
    for (size_t i = 0; i + 1 < candidates.size(); ++i)
        sweep.push_back(0.5 * (candidates[i] + candidates[i + 1]));
    sweep.push_back(candidates.back() + 1.0);
    sweep.insert(sweep.begin(), candidates.front());  // everything predicted positive

    for (double th : sweep) {
        const auto r = rates_at_threshold(scores, labels, th);
        if (r.spe >= spe_target) return {r.sen, th, true};
    }
    return {0.0, sweep.back(), false};
}

// ---- patient folds ----

struct PatientInfo {
    std::string patient_id;
    std::array<double, 5> type_durations{};  // chew, elec, eyem, musc, shiv

    double total() const {
        return std::accumulate(type_durations.begin(), type_durations.end(), 0.0);
    }
};

struct FoldPlan {
    std::vector<std::vector<std::string>> folds;  // patient ids per fold
    std::vector<std::array<double, 5>> fold_durations;

    int fold_of(const std::string& patient) const {
        for (size_t f = 0; f < folds.size(); ++f)
            if (std::find(folds[f].begin(), folds[f].end(), patient) != folds[f].end())
                return static_cast<int>(f);
        return -1;
    }
};

// Greedy balanced assignment: patients sorted by total artifact duration
// descending, each assigned to the fold minimizing the L2 distance between
// per-type fold duration vectors (with fold sizes kept within one patient).
inline FoldPlan make_patient_folds(std::vector<PatientInfo> patients, int k = 5,
                                   uint64_t seed = 0) {
    if (static_cast<int>(patients.size()) < k)
        throw std::invalid_argument("make_patient_folds: fewer patients than folds");
    // deterministic tie order: shuffle by seed then stable sort by duration
    std::mt19937_64 rng(seed);
    std::shuffle(patients.begin(), patients.end(), rng);
    std::stable_sort(patients.begin(), patients.end(),
                     [](const PatientInfo& a, const PatientInfo& b) {
                         return a.total() > b.total();
                     });

    FoldPlan plan;
    plan.folds.resize(k);
    plan.fold_durations.assign(k, {});
    const size_t max_fold = (patients.size() + k - 1) / k;

    for (const auto& p : patients) {
        int best = -1;
        double best_cost = std::numeric_limits<double>::max();
        for (int f = 0; f < k; ++f) {
            if (plan.folds[f].size() >= max_fold) continue;
            // L2 spread of per-type totals if p joins fold f
            double cost = 0.0;
            for (int t = 0; t < 5; ++t) {
                double mean = 0.0;
                for (int g = 0; g < k; ++g) {
                    double v = plan.fold_durations[g][t];
                    if (g == f) v += p.type_durations[t];
                    mean += v;
                }
                mean /= k;
                for (int g = 0; g < k; ++g) {
                    double v = plan.fold_durations[g][t];
                    if (g == f) v += p.type_durations[t];
                    cost += (v - mean) * (v - mean);
                }
            }
            if (cost < best_cost) {
                best_cost = cost;
                best = f;
            }
        }
        plan.folds[best].push_back(p.patient_id);
        for (int t = 0; t < 5; ++t)
            plan.fold_durations[best][t] += p.type_durations[t];
    }
    return plan;
}

// ---- multi-class confusion ----

inline std::vector<std::vector<long>> confusion_matrix_multiclass(
    const std::vector<std::string>& preds, const std::vector<std::string>& labels,
    const std::vector<std::string>& classes) {
    if (preds.size() != labels.size())
        throw std::invalid_argument("confusion_matrix: size mismatch");
    std::map<std::string, size_t> index;
    for (size_t i = 0; i < classes.size(); ++i) index[classes[i]] = i;
    std::vector<std::vector<long>> m(classes.size(),
                                     std::vector<long>(classes.size(), 0));
    for (size_t i = 0; i < preds.size(); ++i) {
        auto pi = index.find(preds[i]);
        auto li = index.find(labels[i]);
        if (pi == index.end() || li == index.end())
            throw std::invalid_argument("confusion_matrix: unknown class value");
        m[li->second][pi->second]++;  // rows: true class, cols: predicted
    }
    return m;
}

struct MetricsReport {
    double auc = 0.0, auprc = 0.0, acc = 0.0, bac = 0.0, sen = 0.0, spe = 0.0;
    double threshold = 0.5;
    Confusion confusion;
};

inline MetricsReport full_report(std::span<const double> scores,
                                 std::span<const int> labels, double th = 0.5) {
    MetricsReport r;
    r.auc = roc_auc(scores, labels);
    r.auprc = auprc(scores, labels);
    const auto rates = rates_at_threshold(scores, labels, th);
    r.acc = rates.acc;
    r.bac = rates.bac;
    r.sen = rates.sen;
    r.spe = rates.spe;
    r.threshold = th;
    r.confusion = rates.confusion;
    return r;
}

}  // namespace eegart::eval
