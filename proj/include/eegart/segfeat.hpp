#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bmnet.hpp"

namespace eegart::seg {

inline const std::array<std::string, 7> kRegionOrder = {
    "frontal", "frontal_temporal", "non_frontal", "central",
    "parietal", "occipital", "whole_scalp"};

// 10-20 synonym normalization (T7->T3, T8->T4, P7->T5, P8->T6) plus
// uppercasing.
inline std::string normalize_channel_name(std::string name) {
    std::transform(name.begin(), name.end(), name.begin(),
                   [](unsigned char c) { return std::toupper(c); });
    static const std::map<std::string, std::string> synonyms = {
        {"T7", "T3"}, {"T8", "T4"}, {"P7", "T5"}, {"P8", "T6"}};
    auto it = synonyms.find(name);
    return it == synonyms.end() ? name : it->second;
}

struct RegionMap {
    // region name -> channel indices into the montage it was built from
    std::map<std::string, std::vector<size_t>> regions;
    std::vector<std::string> unknown_channels;  // fell into non_frontal/whole only
};

inline RegionMap map_channels_to_regions(const std::vector<std::string>& channel_names) {
    if (channel_names.empty())
        throw std::invalid_argument("map_channels_to_regions: empty channel list");
    static const std::map<std::string, std::set<std::string>> assignment = {
        {"frontal", {"FP1", "FP2", "F3", "F4", "FZ"}},
        {"frontal_temporal", {"F7", "F8", "T3", "T4"}},
        {"central", {"C3", "C4", "CZ"}},
        {"parietal", {"P3", "P4", "PZ"}},
        {"occipital", {"O1", "O2"}},
    };
    static const std::set<std::string> known = [] {
        std::set<std::string> all = {"T5", "T6", "A1", "A2"};
        for (const auto& [r, chans] : assignment) all.insert(chans.begin(), chans.end());
        return all;
    }();

    RegionMap map;
    for (const auto& r : kRegionOrder) map.regions[r];
    for (size_t i = 0; i < channel_names.size(); ++i) {
        const std::string name = normalize_channel_name(channel_names[i]);
        bool frontal = false;
        for (const auto& [region, chans] : assignment) {
            if (chans.count(name)) {
                map.regions[region].push_back(i);
                if (region == "frontal") frontal = true;
            }
        }
        if (!known.count(name)) map.unknown_channels.push_back(channel_names[i]);
        if (!frontal) map.regions["non_frontal"].push_back(i);
        map.regions["whole_scalp"].push_back(i);
    }
    return map;
}

// [mean, median, population std, max, min, hist_1..hist_5]; empty input gives
// all zeros; histogram bins on [0,1] as proportions.
inline std::array<double, 10> region_statistics(std::span<const double> probs) {
    std::array<double, 10> stats{};
    if (probs.empty()) return stats;
    for (double p : probs)
        if (!(p >= 0.0 && p <= 1.0))
            throw std::domain_error("region_statistics: probability outside [0, 1]");

    const double n = static_cast<double>(probs.size());
    double mean = 0.0;
    for (double p : probs) mean += p;
    mean /= n;
    double var = 0.0;
    for (double p : probs) var += (p - mean) * (p - mean);
    var /= n;

    std::vector<double> sorted(probs.begin(), probs.end());
    std::sort(sorted.begin(), sorted.end());
    const size_t mid = sorted.size() / 2;
    const double median = (sorted.size() % 2) ? sorted[mid]
                                              : 0.5 * (sorted[mid - 1] + sorted[mid]);

    stats[0] = mean;
    stats[1] = median;
    stats[2] = std::sqrt(var);
    stats[3] = sorted.back();
    stats[4] = sorted.front();
    for (double p : probs) {
        int bin = static_cast<int>(p / 0.2);
        if (bin > 4) bin = 4;  // p == 1.0 lands in the last bin
        stats[5 + bin] += 1.0 / n;
    }
    return stats;
}

namespace detail {

inline double pearson(std::span<const double> a, std::span<const double> b) {
    const size_t n = std::min(a.size(), b.size());
    if (n < 2) return 0.0;
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < n; ++i) { ma += a[i]; mb += b[i]; }
    ma /= n; mb /= n;
    double num = 0.0, da = 0.0, db = 0.0;
    for (size_t i = 0; i < n; ++i) {
        num += (a[i] - ma) * (b[i] - mb);
        da += (a[i] - ma) * (a[i] - ma);
        db += (b[i] - mb) * (b[i] - mb);
    }
    if (da <= 0.0 || db <= 0.0) return 0.0;
    return num / std::sqrt(da * db);
}

// max Pearson correlation of x against y shifted by lag in [lag_lo, lag_hi]
inline double max_lagged_correlation(std::span<const double> x,
                                     std::span<const double> y, int lag_lo,
                                     int lag_hi, bool by_magnitude) {
    double best = 0.0, best_mag = -1.0;
    const int n = static_cast<int>(std::min(x.size(), y.size()));
    for (int lag = lag_lo; lag <= lag_hi; ++lag) {
        const int a0 = std::max(0, -lag);
        const int b0 = std::max(0, lag);
        const int len = n - std::max(std::abs(lag), 0);
        if (len < 8) continue;
        const double r = pearson(x.subspan(a0, len), y.subspan(b0, len));
        const double mag = by_magnitude ? std::abs(r) : r;
        if (mag > best_mag) { best_mag = mag; best = r; }
    }
    return best;
}

}  // namespace detail

// Four eye-blink correlation features over a multi-channel segment at 128 Hz:
// max |cross-correlation| of (FP1, F7) and (FP2, F8) over lags up to 0.25 s,
// and max autocorrelation of FP1 / FP2 over lags 0.1-0.5 s.  Missing channels
// yield zeros.
inline std::array<double, 4> correlation_features(
    const std::vector<std::string>& channel_names,
    const std::vector<std::vector<double>>& segment, int sample_rate_hz = 128) {
    if (channel_names.size() != segment.size())
        throw std::invalid_argument("correlation_features: name/signal count mismatch");
    auto find = [&](const std::string& want) -> const std::vector<double>* {
        for (size_t i = 0; i < channel_names.size(); ++i)
            if (normalize_channel_name(channel_names[i]) == want) return &segment[i];
        return nullptr;
    };
    const auto* fp1 = find("FP1");
    const auto* fp2 = find("FP2");
    const auto* f7 = find("F7");
    const auto* f8 = find("F8");

    const int cross_lag = sample_rate_hz / 4;          // 0.25 s
    const int auto_lo = sample_rate_hz / 10;           // 0.1 s
    const int auto_hi = sample_rate_hz / 2;            // 0.5 s

    std::array<double, 4> f{};
    if (fp1 && f7)
        f[0] = detail::max_lagged_correlation(*fp1, *f7, -cross_lag, cross_lag, true);
    if (fp2 && f8)
        f[1] = detail::max_lagged_correlation(*fp2, *f8, -cross_lag, cross_lag, true);
    if (fp1) f[2] = detail::max_lagged_correlation(*fp1, *fp1, auto_lo, auto_hi, false);
    if (fp2) f[3] = detail::max_lagged_correlation(*fp2, *fp2, auto_lo, auto_hi, false);
    return f;
}

struct SegmentFeatureVector {
    std::vector<double> values;  // 70 region statistics + 4 correlations = 74
    std::string artifact_type;
    std::string segment_id;
    int window_len_s = 0;
};

// Region-major, statistic-minor feature order (regions in kRegionOrder),
// correlation features last.  This ordering is a frozen contract.
inline SegmentFeatureVector build_feature_vector(
    const std::vector<std::string>& channel_names,
    const std::vector<std::vector<double>>& segment,
    const bm::ChannelModel& channel_model, const RegionMap& region_map) {
    if (channel_names.size() != segment.size())
        throw std::invalid_argument("build_feature_vector: name/signal count mismatch");
    for (const auto& ch : segment)
        if (static_cast<int>(ch.size()) != channel_model.cfg.window_samples())
            throw std::invalid_argument(
                "build_feature_vector: segment length does not match model window");

    std::vector<double> probs(segment.size());
    for (size_t i = 0; i < segment.size(); ++i)
        probs[i] = channel_model.predict_proba(segment[i]);

    SegmentFeatureVector fv;
    fv.artifact_type = "";
    fv.window_len_s = channel_model.cfg.window_len_s;
    fv.values.reserve(74);
    for (const auto& region : kRegionOrder) {
        std::vector<double> region_probs;
        for (size_t idx : region_map.regions.at(region))
            region_probs.push_back(probs[idx]);
        const auto stats = region_statistics(region_probs);
        fv.values.insert(fv.values.end(), stats.begin(), stats.end());
    }
    const auto corr = correlation_features(channel_names, segment);
    fv.values.insert(fv.values.end(), corr.begin(), corr.end());
    return fv;
}

}  // namespace eegart::seg
