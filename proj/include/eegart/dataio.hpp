#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace eegart::io {

inline const std::array<std::string, 5> kArtifactLabels = {
    "chew", "elec", "eyem", "musc", "shiv"};

inline bool is_artifact_label(const std::string& s) {
    return std::find(kArtifactLabels.begin(), kArtifactLabels.end(), s) !=
           kArtifactLabels.end();
}

struct EegRecording {
    std::string patient_id;
    double sample_rate_hz = 0.0;
    std::vector<std::string> channels;
    std::vector<std::vector<double>> samples;  // [channel][time]

    size_t n_samples() const { return samples.empty() ? 0 : samples[0].size(); }
    double duration_s() const {
        return sample_rate_hz > 0 ? n_samples() / sample_rate_hz : 0.0;
    }
    int channel_index(const std::string& name) const {
        for (size_t i = 0; i < channels.size(); ++i)
            if (channels[i] == name) return static_cast<int>(i);
        return -1;
    }
};

struct ArtifactEvent {
    std::string channel;  // "ALL" expands to every channel at load time
    double start_s = 0.0;
    double stop_s = 0.0;
    std::string label;
};

class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::stringstream ss(line);
    while (std::getline(ss, cur, ',')) out.push_back(cur);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

inline double parse_double(const std::string& s, size_t line_no, const char* what) {
    try {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) + ": bad " + what +
                         " value '" + s + "'");
    }
}

}  // namespace detail

// ---- CSV recording format ----
// line 1: patient_id,<id>
// line 2: sample_rate_hz,<fs>
// line 3: channels,<name>,<name>,...
// then one row per time sample with one column per channel

inline void save_recording_csv(const EegRecording& rec, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f.precision(17);
    f << "patient_id," << rec.patient_id << "\n";
    f << "sample_rate_hz," << rec.sample_rate_hz << "\n";
    f << "channels";
    for (const auto& c : rec.channels) f << "," << c;
    f << "\n";
    for (size_t t = 0; t < rec.n_samples(); ++t) {
        for (size_t c = 0; c < rec.channels.size(); ++c)
            f << (c ? "," : "") << rec.samples[c][t];
        f << "\n";
    }
}

inline EegRecording load_recording_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    EegRecording rec;
    std::string line;
    size_t line_no = 0;

    auto expect_header = [&](const char* key) -> std::vector<std::string> {
        if (!std::getline(f, line))
            throw ParseError("line " + std::to_string(line_no + 1) +
                             ": missing header '" + key + "'");
        ++line_no;
        auto parts = detail::split_csv(line);
        if (parts.empty() || parts[0] != key)
            throw ParseError("line " + std::to_string(line_no) + ": expected '" +
                             key + "' header, got '" + line + "'");
        return parts;
    };

    auto pid = expect_header("patient_id");
    if (pid.size() != 2 || pid[1].empty())
        throw ParseError("line 1: patient_id header needs one value");
    rec.patient_id = pid[1];

    auto fsr = expect_header("sample_rate_hz");
    if (fsr.size() != 2) throw ParseError("line 2: sample_rate_hz header needs one value");
    rec.sample_rate_hz = detail::parse_double(fsr[1], 2, "sample_rate_hz");
    if (!(rec.sample_rate_hz > 0.0))
        throw ParseError("line 2: sample_rate_hz must be positive");

    auto chs = expect_header("channels");
    if (chs.size() < 2) throw ParseError("line 3: channels header lists no channels");
    rec.channels.assign(chs.begin() + 1, chs.end());
    rec.samples.assign(rec.channels.size(), {});

    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto parts = detail::split_csv(line);
        if (parts.size() != rec.channels.size())
            throw ParseError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(rec.channels.size()) + " columns, got " +
                             std::to_string(parts.size()));
        for (size_t c = 0; c < parts.size(); ++c) {
            const double v = detail::parse_double(parts[c], line_no, "sample");
            if (std::isnan(v))
                throw ParseError("line " + std::to_string(line_no) + ": NaN sample");
            rec.samples[c].push_back(v);
        }
    }
    return rec;
}

// ---- packed binary recording, magic "EEGR", version u16, little-endian ----

namespace detail {

inline void write_bytes(std::ofstream& f, const void* p, size_t n) {
    f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::ifstream& f, void* p, size_t n, const char* what) {
    f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(f.gcount()) != n)
        throw ParseError(std::string("truncated file while reading ") + what);
}

template <typename T>
void write_pod(std::ofstream& f, T v) { write_bytes(f, &v, sizeof(T)); }

template <typename T>
T read_pod(std::ifstream& f, const char* what) {
    T v{};
    read_bytes(f, &v, sizeof(T), what);
    return v;
}

inline void write_string(std::ofstream& f, const std::string& s) {
    write_pod<uint32_t>(f, static_cast<uint32_t>(s.size()));
    write_bytes(f, s.data(), s.size());
}

inline std::string read_string(std::ifstream& f, const char* what) {
    const uint32_t n = read_pod<uint32_t>(f, what);
    if (n > (1u << 20)) throw ParseError(std::string("implausible string length in ") + what);
    std::string s(n, '\0');
    read_bytes(f, s.data(), n, what);
    return s;
}

}  // namespace detail

inline void save_recording_binary(const EegRecording& rec, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f.write("EEGR", 4);
    detail::write_pod<uint16_t>(f, 1);
    detail::write_string(f, rec.patient_id);
    detail::write_pod<double>(f, rec.sample_rate_hz);
    detail::write_pod<uint32_t>(f, static_cast<uint32_t>(rec.channels.size()));
    for (const auto& c : rec.channels) detail::write_string(f, c);
    detail::write_pod<uint64_t>(f, rec.n_samples());
    for (const auto& ch : rec.samples)
        detail::write_bytes(f, ch.data(), ch.size() * sizeof(double));
}

inline EegRecording load_recording_binary(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    char magic[4];
    detail::read_bytes(f, magic, 4, "magic");
    if (std::memcmp(magic, "EEGR", 4) != 0)
        throw ParseError("bad magic bytes (not an EEGR file)");
    const uint16_t ver = detail::read_pod<uint16_t>(f, "version");
    if (ver != 1)
        throw ParseError("unsupported EEGR version " + std::to_string(ver));
    EegRecording rec;
    rec.patient_id = detail::read_string(f, "patient_id");
    rec.sample_rate_hz = detail::read_pod<double>(f, "sample_rate_hz");
    const uint32_t nc = detail::read_pod<uint32_t>(f, "channel count");
    if (nc == 0 || nc > 4096) throw ParseError("implausible channel count");
    for (uint32_t i = 0; i < nc; ++i)
        rec.channels.push_back(detail::read_string(f, "channel name"));
    const uint64_t ns = detail::read_pod<uint64_t>(f, "sample count");
    rec.samples.assign(nc, std::vector<double>(ns));
    for (auto& ch : rec.samples)
        detail::read_bytes(f, ch.data(), ns * sizeof(double), "sample data");
    for (const auto& ch : rec.samples)
        for (double v : ch)
            if (std::isnan(v)) throw ParseError("NaN sample in binary recording");
    return rec;
}

inline EegRecording load_recording(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw std::runtime_error("cannot open: " + path);
    char magic[4] = {0, 0, 0, 0};
    probe.read(magic, 4);
    probe.close();
    if (std::memcmp(magic, "EEGR", 4) == 0) return load_recording_binary(path);
    return load_recording_csv(path);
}

// ---- annotations: CSV (channel,start_s,stop_s,label), header row required ----

inline void save_annotations(const std::vector<ArtifactEvent>& events,
                             const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f.precision(17);
    f << "channel,start_s,stop_s,label\n";
    for (const auto& e : events)
        f << e.channel << "," << e.start_s << "," << e.stop_s << "," << e.label << "\n";
}

inline std::vector<ArtifactEvent> load_annotations(const std::string& path,
                                                   const EegRecording& rec) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line) || detail::split_csv(line) !=
        std::vector<std::string>{"channel", "start_s", "stop_s", "label"})
        throw ParseError("line 1: expected header 'channel,start_s,stop_s,label'");

    std::vector<ArtifactEvent> events;
    size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto parts = detail::split_csv(line);
        if (parts.size() != 4)
            throw ParseError("line " + std::to_string(line_no) + ": expected 4 columns");
        ArtifactEvent e;
        e.channel = parts[0];
        e.start_s = detail::parse_double(parts[1], line_no, "start_s");
        e.stop_s = detail::parse_double(parts[2], line_no, "stop_s");
        e.label = parts[3];
        if (!is_artifact_label(e.label)) {
            std::string valid;
            for (const auto& l : kArtifactLabels) valid += (valid.empty() ? "" : ", ") + l;
            throw ParseError("line " + std::to_string(line_no) + ": unknown label '" +
                             e.label + "' (valid: " + valid + ")");
        }
        if (!(e.start_s >= 0.0 && e.start_s < e.stop_s && e.stop_s <= rec.duration_s()))
            throw ParseError("line " + std::to_string(line_no) +
                             ": event times outside recording bounds");
        if (e.channel == "ALL") {
            for (const auto& c : rec.channels) {
                ArtifactEvent copy = e;
                copy.channel = c;
                events.push_back(copy);
            }
        } else {
            if (rec.channel_index(e.channel) < 0)
                throw ParseError("line " + std::to_string(line_no) +
                                 ": unknown channel '" + e.channel + "'");
            events.push_back(e);
        }
    }
    std::stable_sort(events.begin(), events.end(),
                     [](const ArtifactEvent& a, const ArtifactEvent& b) {
                         return a.start_s < b.start_s;
                     });
    return events;
}

// ---- model bundle: JSON manifest + raw little-endian doubles ----

struct ModelBundle {
    uint16_t version = 1;
    std::string kind;           // "channel-model" | "boosted-ensemble"
    nlohmann::json manifest;    // config + training metadata
    std::vector<std::pair<std::string, std::vector<double>>> blobs;

    const std::vector<double>& blob(const std::string& name) const {
        for (const auto& [n, b] : blobs)
            if (n == name) return b;
        throw std::out_of_range("ModelBundle: no blob " + name);
    }
};

inline void save_model(const ModelBundle& bundle, const std::string& path) {
    nlohmann::json head;
    head["kind"] = bundle.kind;
    head["manifest"] = bundle.manifest;
    head["blobs"] = nlohmann::json::array();
    for (const auto& [name, data] : bundle.blobs)
        head["blobs"].push_back({{"name", name}, {"count", data.size()}});
    const std::string head_str = head.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f.write("EEGM", 4);
    detail::write_pod<uint16_t>(f, bundle.version);
    detail::write_pod<uint32_t>(f, static_cast<uint32_t>(head_str.size()));
    detail::write_bytes(f, head_str.data(), head_str.size());
    for (const auto& [name, data] : bundle.blobs)
        detail::write_bytes(f, data.data(), data.size() * sizeof(double));
}

inline ModelBundle load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    char magic[4];
    detail::read_bytes(f, magic, 4, "magic");
    if (std::memcmp(magic, "EEGM", 4) != 0)
        throw ParseError("bad magic bytes (not an EEGM model file)");
    ModelBundle bundle;
    bundle.version = detail::read_pod<uint16_t>(f, "version");
    if (bundle.version != 1)
        throw ParseError("unsupported model version " + std::to_string(bundle.version));
    const uint32_t head_len = detail::read_pod<uint32_t>(f, "manifest length");
    if (head_len > (64u << 20)) throw ParseError("implausible manifest length");
    std::string head_str(head_len, '\0');
    detail::read_bytes(f, head_str.data(), head_len, "manifest");
    nlohmann::json head;
    try {
        head = nlohmann::json::parse(head_str);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("corrupt manifest JSON: ") + e.what());
    }
    try {
        bundle.kind = head.at("kind").get<std::string>();
        bundle.manifest = head.at("manifest");
        for (const auto& b : head.at("blobs")) {
            const std::string name = b.at("name").get<std::string>();
            const uint64_t count = b.at("count").get<uint64_t>();
            if (count > (1ull << 30)) throw ParseError("implausible blob size");
            std::vector<double> data(count);
            detail::read_bytes(f, data.data(), count * sizeof(double), "parameter blob");
            bundle.blobs.emplace_back(name, std::move(data));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed manifest: ") + e.what());
    }
    return bundle;
}

}  // namespace eegart::io
