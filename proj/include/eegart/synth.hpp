#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "dataio.hpp"

namespace eegart::synth {

inline const std::vector<std::string> kStandardMontage = {
    "FP1", "FP2", "F3", "F4", "FZ", "F7", "F8", "T3", "T4", "C3",
    "C4",  "CZ",  "T5", "T6", "P3", "P4", "PZ", "O1", "O2"};

struct CorpusSpec {
    std::map<std::string, int> events_per_type = {
        {"chew", 6}, {"elec", 6}, {"eyem", 8}, {"musc", 8}, {"shiv", 2}};
    int n_patients = 10;
    double duration_s = 300.0;
    double sample_rate_hz = 256.0;
    std::vector<std::string> channels = kStandardMontage;
    uint64_t seed = 0;
};

struct SyntheticRecording {
    io::EegRecording recording;
    std::vector<io::ArtifactEvent> events;
};

namespace detail {

// Paul Kellet's economy pink-noise filter over white Gaussian input.
class PinkNoise {
public:
    explicit PinkNoise(std::mt19937_64& rng) : rng_(rng) {}
    double next() {
        const double white = dist_(rng_);
        b0_ = 0.99765 * b0_ + white * 0.0990460;
        b1_ = 0.96300 * b1_ + white * 0.2965164;
        b2_ = 0.57000 * b2_ + white * 1.0526913;
        return b0_ + b1_ + b2_ + white * 0.1848;
    }

private:
    std::mt19937_64& rng_;
    std::normal_distribution<double> dist_{0.0, 1.0};
    double b0_ = 0.0, b1_ = 0.0, b2_ = 0.0;
};

struct Span {
    double start, stop;
};

inline bool place_event(std::vector<Span>& occupied, std::mt19937_64& rng,
                        double duration_s, double total_s, Span& out) {
    std::uniform_real_distribution<double> pos(1.0, total_s - duration_s - 1.0);
    for (int attempt = 0; attempt < 200; ++attempt) {
        const double start = pos(rng);
        const Span cand{start, start + duration_s};
        const bool clash = std::any_of(occupied.begin(), occupied.end(), [&](const Span& s) {
            return cand.start < s.stop + 1.0 && s.start < cand.stop + 1.0;
        });
        if (!clash) {
            occupied.push_back(cand);
            out = cand;
            return true;
        }
    }
    return false;
}

}  // namespace detail

// One synthetic patient recording with injected artifact signatures and the
// matching annotations.  Deterministic for a given (spec.seed, patient index).
inline SyntheticRecording generate_recording(const CorpusSpec& spec, int patient_idx) {
    std::mt19937_64 rng(spec.seed * 1000003ull + static_cast<uint64_t>(patient_idx));
    const double fs = spec.sample_rate_hz;
    const size_t n = static_cast<size_t>(std::llround(spec.duration_s * fs));
    const size_t n_ch = spec.channels.size();

    SyntheticRecording out;
    out.recording.patient_id =
        "p" + std::string(patient_idx < 10 ? "00" : patient_idx < 100 ? "0" : "") +
        std::to_string(patient_idx);
    out.recording.sample_rate_hz = fs;
    out.recording.channels = spec.channels;
    out.recording.samples.assign(n_ch, std::vector<double>(n, 0.0));

    // background: pink noise + 10 Hz posterior alpha
    std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
    for (size_t c = 0; c < n_ch; ++c) {
        detail::PinkNoise pink(rng);
        const std::string& name = spec.channels[c];
        const bool posterior = name.starts_with("O") || name.starts_with("P") ||
                               name.starts_with("T5") || name.starts_with("T6");
        const double alpha_amp = posterior ? 6.0 : 1.5;
        const double ph = phase(rng);
        auto& ch = out.recording.samples[c];
        for (size_t t = 0; t < n; ++t)
            ch[t] = 4.0 * pink.next() +
                    alpha_amp * std::sin(2.0 * M_PI * 10.0 * t / fs + ph);
    }

    auto idx_of = [&](const std::string& name) {
        return out.recording.channel_index(name);
    };
    auto add_event = [&](const std::string& channel, double start, double stop,
                         const std::string& label) {
        out.events.push_back({channel, start, stop, label});
    };

    std::vector<detail::Span> occupied;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    for (const auto& [label, count] : spec.events_per_type) {
        for (int e = 0; e < count; ++e) {
            detail::Span span;
            if (label == "chew") {
                if (!detail::place_event(occupied, rng, 3.0 + 3.0 * unit(rng),
                                         spec.duration_s, span))
                    continue;
                // 1-3 Hz high-amplitude rhythmic bursts on temporal channels
                const double f0 = 1.0 + 2.0 * unit(rng);
                for (const char* chn : {"T3", "T4", "F7", "F8"}) {
                    const int ci = idx_of(chn);
                    if (ci < 0) continue;
                    const double ph = phase(rng);
                    for (size_t t = static_cast<size_t>(span.start * fs);
                         t < static_cast<size_t>(span.stop * fs) && t < n; ++t) {
                        const double rel = t / fs - span.start;
                        const double burst =
                            0.5 * (1.0 - std::cos(2.0 * M_PI * f0 * rel + ph));
                        out.recording.samples[ci][t] +=
                            55.0 * burst * std::sin(2.0 * M_PI * f0 * rel + ph) +
                            8.0 * gauss(rng);
                    }
                    add_event(chn, span.start, span.stop, label);
                }
            } else if (label == "elec") {
                if (!detail::place_event(occupied, rng, 2.0 + 2.0 * unit(rng),
                                         spec.duration_s, span))
                    continue;
                // single-channel step with exponential decay
                std::uniform_int_distribution<size_t> pick(0, n_ch - 1);
                const size_t ci = pick(rng);
                const double amp = (unit(rng) < 0.5 ? -1.0 : 1.0) * 120.0;
                const double tau = 0.5 * fs;
                const size_t t0 = static_cast<size_t>(span.start * fs);
                for (size_t t = t0; t < static_cast<size_t>(span.stop * fs) && t < n; ++t)
                    out.recording.samples[ci][t] +=
                        amp * std::exp(-(static_cast<double>(t) - t0) / tau);
                add_event(spec.channels[ci], span.start, span.stop, label);
            } else if (label == "eyem") {
                if (!detail::place_event(occupied, rng, 3.0 + 3.0 * unit(rng),
                                         spec.duration_s, span))
                    continue;
                // train of 0.3-1 s frontal slow deflections; F7/F8 follow
                // FP1/FP2 with reduced amplitude
                double t_blink = span.start;
                while (t_blink + 1.0 < span.stop) {
                    const double blink_len = 0.3 + 0.7 * unit(rng);
                    const size_t b0 = static_cast<size_t>(t_blink * fs);
                    const size_t b1 = static_cast<size_t>((t_blink + blink_len) * fs);
                    for (size_t t = b0; t < b1 && t < n; ++t) {
                        const double rel = (t - b0) / static_cast<double>(b1 - b0);
                        const double shape = std::sin(M_PI * rel);  // half-sine deflection
                        for (const auto& [chn, amp] :
                             std::initializer_list<std::pair<const char*, double>>{
                                 {"FP1", 80.0}, {"FP2", 80.0}, {"F7", 50.0}, {"F8", 50.0}}) {
                            const int ci = idx_of(chn);
                            if (ci >= 0) out.recording.samples[ci][t] += amp * shape;
                        }
                    }
                    t_blink += blink_len + 0.2 + 0.3 * unit(rng);
                }
                for (const char* chn : {"FP1", "FP2", "F7", "F8"})
                    if (idx_of(chn) >= 0) add_event(chn, span.start, span.stop, label);
            } else if (label == "musc") {
                if (!detail::place_event(occupied, rng, 3.0 + 3.0 * unit(rng),
                                         spec.duration_s, span))
                    continue;
                // 20-60 Hz broadband amplitude bursts on a channel subset
                std::vector<size_t> chans(n_ch);
                std::iota(chans.begin(), chans.end(), 0);
                std::shuffle(chans.begin(), chans.end(), rng);
                chans.resize(std::max<size_t>(6, n_ch / 2));
                for (size_t ci : chans) {
                    // sum of random sinusoids across the band approximates
                    // bandlimited noise
                    std::vector<std::pair<double, double>> comps;
                    for (int k = 0; k < 12; ++k)
                        comps.emplace_back(20.0 + 40.0 * unit(rng), phase(rng));
                    for (size_t t = static_cast<size_t>(span.start * fs);
                         t < static_cast<size_t>(span.stop * fs) && t < n; ++t) {
                        double v = 0.0;
                        for (const auto& [f0, ph] : comps)
                            v += std::sin(2.0 * M_PI * f0 * t / fs + ph);
                        out.recording.samples[ci][t] += 12.0 * v;
                    }
                    add_event(spec.channels[ci], span.start, span.stop, label);
                }
            } else if (label == "shiv") {
                if (!detail::place_event(occupied, rng, 5.0 + 5.0 * unit(rng),
                                         spec.duration_s, span))
                    continue;
                // ~10 Hz sustained tremor on most of the scalp
                for (size_t ci = 0; ci < n_ch; ++ci) {
                    const double ph = phase(rng);
                    const double f0 = 9.5 + unit(rng);
                    for (size_t t = static_cast<size_t>(span.start * fs);
                         t < static_cast<size_t>(span.stop * fs) && t < n; ++t)
                        out.recording.samples[ci][t] +=
                            30.0 * std::sin(2.0 * M_PI * f0 * t / fs + ph);
                    add_event(spec.channels[ci], span.start, span.stop, label);
                }
            }
        }
    }

    std::stable_sort(out.events.begin(), out.events.end(),
                     [](const io::ArtifactEvent& a, const io::ArtifactEvent& b) {
                         return a.start_s < b.start_s;
                     });
    return out;
}

struct CorpusSummary {
    std::map<std::string, int> event_counts;
    std::map<std::string, double> event_durations_s;
    double total_duration_s = 0.0;
    std::vector<std::string> recording_files;
};

// Writes one CSV recording + one annotation file per patient under out_dir.
inline CorpusSummary generate_synthetic_corpus(const CorpusSpec& spec,
                                               const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    CorpusSummary summary;
    for (const auto& [label, ignored] : spec.events_per_type) {
        summary.event_counts[label] = 0;
        summary.event_durations_s[label] = 0.0;
    }
    for (int p = 0; p < spec.n_patients; ++p) {
        const auto rec = generate_recording(spec, p);
        const std::string base = out_dir + "/" + rec.recording.patient_id;
        io::save_recording_csv(rec.recording, base + ".rec.csv");
        io::save_annotations(rec.events, base + ".ann.csv");
        summary.recording_files.push_back(base + ".rec.csv");
        summary.total_duration_s += rec.recording.duration_s();
        // count one per injection span (an injection annotates several channels)
        std::map<std::string, std::vector<std::pair<double, double>>> seen;
        for (const auto& e : rec.events) {
            auto& spans = seen[e.label];
            if (std::find(spans.begin(), spans.end(),
                          std::make_pair(e.start_s, e.stop_s)) == spans.end()) {
                spans.emplace_back(e.start_s, e.stop_s);
                summary.event_counts[e.label]++;
                summary.event_durations_s[e.label] += e.stop_s - e.start_s;
            }
        }
    }
    return summary;
}

}  // namespace eegart::synth
