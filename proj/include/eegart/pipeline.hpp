#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <limits>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bmnet.hpp"
#include "dataio.hpp"
#include "dsp.hpp"
#include "evalkit.hpp"
#include "gbdt.hpp"
#include "segfeat.hpp"
#include "synth.hpp"

namespace eegart::pipe {

struct PreprocessConfig {
    double highpass_hz = 1.0;
    int highpass_order = 4;
    double notch_hz = 60.0;
    double notch_halfwidth_hz = 1.0;
    int notch_order = 4;
    double target_hz = 128.0;
};

// 1 Hz high-pass + notch (both zero-phase), then resample to 128 Hz.
inline io::EegRecording preprocess_recording(const io::EegRecording& rec,
                                             const PreprocessConfig& cfg = {}) {
    dsp::FilterSpec hp;
    hp.kind = dsp::FilterKind::highpass;
    hp.order = cfg.highpass_order;
    hp.corner_low_hz = cfg.highpass_hz;
    hp.sample_rate_hz = rec.sample_rate_hz;
    const auto hp_filter = dsp::design_filter(hp);

    std::optional<dsp::BiquadCascade> notch_filter;
    if (cfg.notch_hz + cfg.notch_halfwidth_hz < rec.sample_rate_hz / 2.0) {
        dsp::FilterSpec notch;
        notch.kind = dsp::FilterKind::bandstop;
        notch.order = cfg.notch_order;
        notch.corner_low_hz = cfg.notch_hz - cfg.notch_halfwidth_hz;
        notch.corner_high_hz = cfg.notch_hz + cfg.notch_halfwidth_hz;
        notch.sample_rate_hz = rec.sample_rate_hz;
        notch_filter = dsp::design_filter(notch);
    }

    io::EegRecording out;
    out.patient_id = rec.patient_id;
    out.sample_rate_hz = cfg.target_hz;
    out.channels = rec.channels;
    for (const auto& ch : rec.samples) {
        auto filtered = dsp::apply_filter_zero_phase(ch, hp_filter);
        if (notch_filter)
            filtered = dsp::apply_filter_zero_phase(filtered, *notch_filter);
        out.samples.push_back(
            dsp::resample(filtered, rec.sample_rate_hz, cfg.target_hz));
    }
    return out;
}

// ---- corpus on disk ----

struct CorpusItem {
    io::EegRecording recording;
    std::vector<io::ArtifactEvent> events;
};

inline std::vector<CorpusItem> load_corpus(const std::string& dir) {
    std::vector<std::string> rec_files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.ends_with(".rec.csv") || name.ends_with(".rec.bin"))
            rec_files.push_back(entry.path().string());
    }
    std::sort(rec_files.begin(), rec_files.end());
    if (rec_files.empty())
        throw std::runtime_error("no recordings (*.rec.csv) found in " + dir);

    std::vector<CorpusItem> corpus;
    for (const auto& path : rec_files) {
        CorpusItem item;
        item.recording = io::load_recording(path);
        std::string ann = path;
        ann.replace(ann.rfind(".rec."), 5, ".ann.");
        ann = ann.substr(0, ann.rfind('.')) + ".csv";
        if (std::filesystem::exists(ann))
            item.events = io::load_annotations(ann, item.recording);
        corpus.push_back(std::move(item));
    }
    return corpus;
}

// ---- segment records ----

struct SegmentRecord {
    std::string patient_id;
    std::string segment_id;  // "<patient>:<index>"
    std::vector<double> features;  // 74 per enabled type, concatenated in type order
    std::array<int, 5> type_flags{};  // chew, elec, eyem, musc, shiv
    int any_artifact = 0;
    std::string multiclass_label = "bckg";
};

// Segment label: a type flags positive when any channel's events of that type
// cover at least half the segment on that channel.
inline void label_segment(const CorpusItem& item, double start_s, double stop_s,
                          SegmentRecord& seg) {
    const double seg_len = stop_s - start_s;
    std::array<double, 5> max_cover{};
    std::map<std::string, std::array<double, 5>> per_channel;
    for (const auto& e : item.events) {
        const double ov =
            std::max(0.0, std::min(e.stop_s, stop_s) - std::max(e.start_s, start_s));
        if (ov <= 0.0) continue;
        const auto it = std::find(io::kArtifactLabels.begin(), io::kArtifactLabels.end(),
                                  e.label);
        const size_t t = it - io::kArtifactLabels.begin();
        auto& cover = per_channel[e.channel];
        cover[t] += ov;
        max_cover[t] = std::max(max_cover[t], cover[t]);
    }
    double best = 0.0;
    for (size_t t = 0; t < 5; ++t) {
        if (max_cover[t] >= 0.5 * seg_len) {
            seg.type_flags[t] = 1;
            seg.any_artifact = 1;
            if (max_cover[t] > best) {
                best = max_cover[t];
                seg.multiclass_label = io::kArtifactLabels[t];
            }
        }
    }
}

// Runs a channel model over every channel of every L-second segment and emits
// the per-segment 74-feature vectors with labels.
inline std::vector<SegmentRecord> extract_segment_features(
    const std::vector<CorpusItem>& corpus, const bm::ChannelModel& model) {
    const int L = model.cfg.window_len_s;
    std::vector<SegmentRecord> out;
    for (const auto& item : corpus) {
        const auto region_map = seg::map_channels_to_regions(item.recording.channels);
        const int n_seg = static_cast<int>(item.recording.duration_s()) / L;
        const size_t seg_samples = static_cast<size_t>(model.cfg.window_samples());
        for (int s = 0; s < n_seg; ++s) {
            const size_t t0 = static_cast<size_t>(s) * seg_samples;
            if (t0 + seg_samples > item.recording.n_samples()) break;
            std::vector<std::vector<double>> segment;
            for (const auto& ch : item.recording.samples)
                segment.emplace_back(ch.begin() + t0, ch.begin() + t0 + seg_samples);

            SegmentRecord rec;
            rec.patient_id = item.recording.patient_id;
            rec.segment_id = item.recording.patient_id + ":" + std::to_string(s);
            rec.features = seg::build_feature_vector(item.recording.channels, segment,
                                                     model, region_map)
                               .values;
            label_segment(item, s * static_cast<double>(L), (s + 1) * static_cast<double>(L),
                          rec);
            out.push_back(std::move(rec));
        }
    }
    return out;
}

// ---- feature CSV persistence ----

inline void save_segment_features(const std::vector<SegmentRecord>& records,
                                  const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f.precision(17);
    f << "patient_id,segment_id";
    const size_t nf = records.empty() ? 74 : records[0].features.size();
    for (size_t i = 0; i < nf; ++i) f << ",f" << i;
    for (const auto& t : io::kArtifactLabels) f << ",flag_" << t;
    f << ",any_artifact,multiclass\n";
    for (const auto& r : records) {
        f << r.patient_id << "," << r.segment_id;
        for (double v : r.features) f << "," << v;
        for (int v : r.type_flags) f << "," << v;
        f << "," << r.any_artifact << "," << r.multiclass_label << "\n";
    }
}

inline std::vector<SegmentRecord> load_segment_features(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line)) throw io::ParseError("empty feature file " + path);
    const auto header = io::detail::split_csv(line);
    if (header.size() < 10 || header[0] != "patient_id")
        throw io::ParseError("bad feature file header in " + path);
    const size_t nf = header.size() - 2 - 5 - 2;

    std::vector<SegmentRecord> out;
    size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto parts = io::detail::split_csv(line);
        if (parts.size() != header.size())
            throw io::ParseError(path + " line " + std::to_string(line_no) +
                                 ": column count mismatch");
        SegmentRecord r;
        r.patient_id = parts[0];
        r.segment_id = parts[1];
        for (size_t i = 0; i < nf; ++i)
            r.features.push_back(io::detail::parse_double(parts[2 + i], line_no, "feature"));
        for (size_t t = 0; t < 5; ++t)
            r.type_flags[t] = std::stoi(parts[2 + nf + t]);
        r.any_artifact = std::stoi(parts[2 + nf + 5]);
        r.multiclass_label = parts[2 + nf + 6];
        out.push_back(std::move(r));
    }
    return out;
}

// ---- fold construction from a corpus ----

inline eval::FoldPlan corpus_folds(const std::vector<CorpusItem>& corpus, int k = 5,
                                   uint64_t seed = 0) {
    std::vector<eval::PatientInfo> patients;
    for (const auto& item : corpus) {
        eval::PatientInfo info;
        info.patient_id = item.recording.patient_id;
        for (const auto& e : item.events) {
            const auto it = std::find(io::kArtifactLabels.begin(),
                                      io::kArtifactLabels.end(), e.label);
            info.type_durations[it - io::kArtifactLabels.begin()] += e.stop_s - e.start_s;
        }
        patients.push_back(std::move(info));
    }
    return eval::make_patient_folds(std::move(patients), k, seed);
}

// ---- per-fold segment-level training ----

struct FoldOutcome {
    eval::MetricsReport metrics;
    std::vector<double> oof_scores;       // aligned with the record subset
    std::vector<size_t> oof_indices;      // into the full record vector
};

struct SegmentCvResult {
    std::vector<eval::MetricsReport> per_fold;
    eval::MetricsReport mean;
    std::vector<double> oof_scores;  // out-of-fold score per record (NaN if untested)
    std::vector<int> oof_fold;       // fold index per record
};

namespace detail {

inline eval::MetricsReport mean_report(const std::vector<eval::MetricsReport>& reports) {
    eval::MetricsReport m;
    if (reports.empty()) return m;
    for (const auto& r : reports) {
        m.auc += r.auc;
        m.auprc += r.auprc;
        m.acc += r.acc;
        m.bac += r.bac;
        m.sen += r.sen;
        m.spe += r.spe;
        m.confusion.tp += r.confusion.tp;
        m.confusion.fn += r.confusion.fn;
        m.confusion.tn += r.confusion.tn;
        m.confusion.fp += r.confusion.fp;
    }
    const double n = static_cast<double>(reports.size());
    m.auc /= n; m.auprc /= n; m.acc /= n; m.bac /= n; m.sen /= n; m.spe /= n;
    return m;
}

}  // namespace detail

// Patient-disjoint K-fold CV of a binary GBDT over precomputed features.
// label_of selects the 0/1 target from each record.
template <typename LabelFn>
SegmentCvResult run_segment_cv(const std::vector<SegmentRecord>& records,
                               const eval::FoldPlan& folds, const gbdt::GbdtConfig& cfg,
                               LabelFn&& label_of,
                               const std::vector<gbdt::GbdtConfig>* grid = nullptr) {
    SegmentCvResult result;
    result.oof_scores.assign(records.size(), std::numeric_limits<double>::quiet_NaN());
    result.oof_fold.assign(records.size(), -1);

    const int k = static_cast<int>(folds.folds.size());
    for (int f = 0; f < k; ++f) {
        std::vector<std::vector<double>> xt;
        std::vector<int> yt;
        std::vector<std::string> pt;
        std::vector<size_t> test_idx;
        for (size_t i = 0; i < records.size(); ++i) {
            const int fold = folds.fold_of(records[i].patient_id);
            if (fold < 0)
                throw std::runtime_error("run_segment_cv: patient not in fold plan: " +
                                         records[i].patient_id);
            if (fold == f) {
                test_idx.push_back(i);
            } else {
                xt.push_back(records[i].features);
                yt.push_back(label_of(records[i]));
                pt.push_back(records[i].patient_id);
            }
        }
        gbdt::GbdtConfig chosen = cfg;
        if (grid && !grid->empty())
            chosen = gbdt::grid_search(xt, yt, pt, *grid).best;
        const auto model = gbdt::fit_boosted_binary(xt, yt, chosen);

        std::vector<double> scores;
        std::vector<int> labels;
        for (size_t i : test_idx) {
            const double s = model.predict_score(records[i].features);
            scores.push_back(s);
            labels.push_back(label_of(records[i]));
            result.oof_scores[i] = s;
            result.oof_fold[i] = f;
        }
        // a fold with single-class test labels contributes OOF scores only
        const bool has_pos = std::find(labels.begin(), labels.end(), 1) != labels.end();
        const bool has_neg = std::find(labels.begin(), labels.end(), 0) != labels.end();
        if (has_pos && has_neg)
            result.per_fold.push_back(eval::full_report(scores, labels));
    }
    result.mean = detail::mean_report(result.per_fold);
    return result;
}

}  // namespace eegart::pipe
