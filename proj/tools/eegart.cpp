#include <CLI11.hpp>

#include <cstdlib>
#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <eegart/pipeline.hpp>

namespace fs = std::filesystem;
using namespace eegart;

namespace {

// exit codes: 0 ok, 1 usage, 2 data error, 3 missing prerequisite
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MissingPrereq : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---- configuration ----

// flat key=value file with [section] headers; stored as "section.key"
struct Config {
    std::map<std::string, std::string> kv;

    static Config load(const std::string& path) {
        Config cfg;
        std::ifstream f(path);
        if (!f) throw UsageError("cannot open config file: " + path);
        std::string line, section;
        size_t line_no = 0;
        while (std::getline(f, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            auto trim = [](std::string s) {
                const auto a = s.find_first_not_of(" \t\r");
                if (a == std::string::npos) return std::string();
                const auto b = s.find_last_not_of(" \t\r");
                return s.substr(a, b - a + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[' && line.back() == ']') {
                section = trim(line.substr(1, line.size() - 2));
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw UsageError(path + " line " + std::to_string(line_no) +
                                 ": expected key=value");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            cfg.kv[section.empty() ? key : section + "." + key] = value;
        }
        return cfg;
    }

    std::string get(const std::string& key, const std::string& fallback) const {
        const auto it = kv.find(key);
        return it == kv.end() ? fallback : it->second;
    }
    double get_num(const std::string& key, double fallback) const {
        const auto it = kv.find(key);
        return it == kv.end() ? fallback : std::stod(it->second);
    }
    long get_int(const std::string& key, long fallback) const {
        const auto it = kv.find(key);
        return it == kv.end() ? fallback : std::stol(it->second);
    }
    std::vector<std::string> get_list(const std::string& key,
                                      const std::vector<std::string>& fallback) const {
        const auto it = kv.find(key);
        if (it == kv.end()) return fallback;
        std::vector<std::string> out;
        std::stringstream ss(it->second);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) out.push_back(item);
        return out;
    }
};

// ---- experiment layout ----

struct Experiment {
    fs::path root;
    Config cfg;
    bool force = false;
    uint64_t seed = 0;

    fs::path corpus_dir() const { return root / "corpus"; }
    fs::path preprocessed_dir() const { return root / "preprocessed"; }
    fs::path models_dir() const { return root / "models"; }
    fs::path features_dir() const { return root / "features"; }
    fs::path reports_dir() const { return root / "reports"; }
    fs::path logs_dir() const { return root / "logs"; }

    std::vector<std::string> enabled_types() const {
        auto types = cfg.get_list("types.enabled",
                                  {io::kArtifactLabels.begin(), io::kArtifactLabels.end()});
        for (const auto& t : types)
            if (!io::is_artifact_label(t)) throw UsageError("unknown artifact type: " + t);
        return types;
    }
};

// exclusive lock on the experiment directory for writing commands
struct DirLock {
    fs::path path;
    bool held = false;

    explicit DirLock(const fs::path& root) : path(root / ".lock") {
        fs::create_directories(root);
        const int fd = ::open(path.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0)
            throw UsageError("experiment directory is locked (remove " + path.string() +
                             " if no other run is active)");
        ::close(fd);
        held = true;
    }
    ~DirLock() {
        if (held) {
            std::error_code ec;
            fs::remove(path, ec);
        }
    }
};

void require_writable(const Experiment& exp, const fs::path& target) {
    if (fs::exists(target) && !exp.force)
        throw UsageError(target.string() + " exists; pass --force to overwrite");
}

std::vector<pipe::CorpusItem> load_preprocessed(const Experiment& exp) {
    if (!fs::exists(exp.preprocessed_dir()))
        throw MissingPrereq("no preprocessed corpus at " +
                            exp.preprocessed_dir().string() + " (run preprocess first)");
    return pipe::load_corpus(exp.preprocessed_dir().string());
}

bm::ChannelModelConfig channel_config(const Experiment& exp, int window_len) {
    bm::ChannelModelConfig cfg;
    cfg.window_len_s = window_len;
    const auto filters = exp.cfg.get_list("model.conv_filters", {});
    if (!filters.empty()) {
        if (filters.size() != 5) throw UsageError("model.conv_filters needs 5 entries");
        for (size_t i = 0; i < 5; ++i) cfg.conv_filters[i] = std::stoi(filters[i]);
    }
    cfg.d_model = static_cast<int>(exp.cfg.get_int("model.d_model", cfg.d_model));
    cfg.heads = static_cast<int>(exp.cfg.get_int("model.heads", cfg.heads));
    cfg.ffn_hidden = static_cast<int>(exp.cfg.get_int("model.ffn_hidden", cfg.ffn_hidden));
    cfg.fc1 = static_cast<int>(exp.cfg.get_int("model.fc1", cfg.fc1));
    cfg.dropout_p = exp.cfg.get_num("model.dropout", cfg.dropout_p);
    cfg.encoder_layers =
        static_cast<int>(exp.cfg.get_int("model.encoder_layers", cfg.encoder_layers));
    cfg.validate();
    return cfg;
}

std::vector<gbdt::GbdtConfig> gbdt_grid(const Experiment& exp) {
    const auto trees = exp.cfg.get_list("gbdt.trees", {"100", "300"});
    const auto depths = exp.cfg.get_list("gbdt.depths", {"3", "4", "6"});
    const auto lrs = exp.cfg.get_list("gbdt.learning_rates", {"0.05", "0.1"});
    std::vector<gbdt::GbdtConfig> grid;
    for (const auto& t : trees)
        for (const auto& d : depths)
            for (const auto& lr : lrs) {
                gbdt::GbdtConfig cfg;
                cfg.n_trees = std::stoi(t);
                cfg.max_depth = std::stoi(d);
                cfg.learning_rate = std::stod(lr);
                cfg.subsample = exp.cfg.get_num("gbdt.subsample", 1.0);
                cfg.seed = exp.seed;
                grid.push_back(cfg);
            }
    return grid;
}

fs::path channel_model_path(const Experiment& exp, const std::string& type, int L) {
    return exp.models_dir() / ("channel_" + type + "_L" + std::to_string(L) + ".eegm");
}
fs::path segment_model_path(const Experiment& exp, const std::string& type, int L) {
    return exp.models_dir() / ("segment_" + type + "_L" + std::to_string(L) + ".eegm");
}
fs::path combined_model_path(const Experiment& exp, int L) {
    return exp.models_dir() / ("combined_L" + std::to_string(L) + ".eegm");
}
fs::path features_path(const Experiment& exp, const std::string& type, int L) {
    return exp.features_dir() / (type + "_L" + std::to_string(L) + ".csv");
}
fs::path oof_path(const Experiment& exp, const std::string& type, int L) {
    return exp.features_dir() / ("oof_" + type + "_L" + std::to_string(L) + ".csv");
}

bm::ChannelModel load_channel_model(const Experiment& exp, const std::string& type,
                                    int L) {
    const auto path = channel_model_path(exp, type, L);
    if (!fs::exists(path))
        throw MissingPrereq("missing channel model for type " + type + " at L=" +
                            std::to_string(L) + " (" + path.string() +
                            "); run train-channel first");
    return bm::from_bundle(io::load_model(path.string()));
}

// ---- commands ----

int cmd_synth(Experiment& exp) {
    DirLock lock(exp.root);
    require_writable(exp, exp.corpus_dir());
    fs::remove_all(exp.corpus_dir());

    synth::CorpusSpec spec;
    spec.n_patients = static_cast<int>(exp.cfg.get_int("synth.patients", spec.n_patients));
    spec.duration_s = exp.cfg.get_num("synth.duration_s", spec.duration_s);
    spec.sample_rate_hz = exp.cfg.get_num("synth.sample_rate_hz", spec.sample_rate_hz);
    spec.seed = exp.seed;
    std::map<std::string, int> events;
    for (const auto& t : io::kArtifactLabels) {
        const long n = exp.cfg.get_int("synth." + t,
                                       spec.events_per_type.count(t)
                                           ? spec.events_per_type.at(t)
                                           : 0);
        if (n > 0) events[t] = static_cast<int>(n);
    }
    spec.events_per_type = events;

    const auto summary =
        synth::generate_synthetic_corpus(spec, exp.corpus_dir().string());

    double artifact_s = 0.0;
    std::cout << "class      events   duration_s\n";
    for (const auto& [label, count] : summary.event_counts) {
        std::cout << std::left << std::setw(11) << label << std::setw(9) << count
                  << summary.event_durations_s.at(label) << "\n";
        artifact_s += summary.event_durations_s.at(label);
    }
    std::cout << std::left << std::setw(11) << "bckg" << std::setw(9) << "-"
              << (summary.total_duration_s - artifact_s) << "\n";
    std::cout << "patients: " << spec.n_patients
              << "  total_duration_s: " << summary.total_duration_s << "\n";
    return 0;
}

int cmd_preprocess(Experiment& exp) {
    DirLock lock(exp.root);
    if (!fs::exists(exp.corpus_dir()))
        throw MissingPrereq("no corpus at " + exp.corpus_dir().string() +
                            " (run synth or place recordings there)");
    require_writable(exp, exp.preprocessed_dir());

    pipe::PreprocessConfig pp;
    pp.highpass_hz = exp.cfg.get_num("preprocess.highpass_hz", pp.highpass_hz);
    pp.highpass_order =
        static_cast<int>(exp.cfg.get_int("preprocess.highpass_order", pp.highpass_order));
    pp.notch_hz = exp.cfg.get_num("preprocess.notch_hz", pp.notch_hz);
    pp.notch_halfwidth_hz =
        exp.cfg.get_num("preprocess.notch_halfwidth_hz", pp.notch_halfwidth_hz);
    pp.notch_order =
        static_cast<int>(exp.cfg.get_int("preprocess.notch_order", pp.notch_order));
    pp.target_hz = exp.cfg.get_num("preprocess.target_hz", pp.target_hz);

    const auto corpus = pipe::load_corpus(exp.corpus_dir().string());
    fs::create_directories(exp.preprocessed_dir());
    for (const auto& item : corpus) {
        const auto out = pipe::preprocess_recording(item.recording, pp);
        const auto base = exp.preprocessed_dir() / out.patient_id;
        io::save_recording_binary(out, base.string() + ".rec.bin");
        io::save_annotations(item.events, base.string() + ".ann.csv");
    }
    std::cout << "preprocessed " << corpus.size() << " recordings to "
              << pp.target_hz << " Hz\n";
    return 0;
}

int cmd_train_channel(Experiment& exp, const std::string& type, int L) {
    DirLock lock(exp.root);
    const auto model_path = channel_model_path(exp, type, L);
    require_writable(exp, model_path);

    const auto corpus = load_preprocessed(exp);
    dsp::WindowPlan plan;
    plan.window_len_s = L;
    std::vector<bm::LabeledWindow> windows;
    for (const auto& item : corpus) {
        auto labeled = bm::label_windows(item.recording, item.events, plan, type);
        std::move(labeled.begin(), labeled.end(), std::back_inserter(windows));
    }

    // desk-scale cap: subsample each class to keep training tractable
    const size_t cap = static_cast<size_t>(
        exp.cfg.get_int("train.max_windows_per_class", 1200));
    std::mt19937_64 rng(exp.seed * 7919 + L);
    std::vector<size_t> pos, neg;
    for (size_t i = 0; i < windows.size(); ++i)
        (windows[i].label ? pos : neg).push_back(i);
    auto take = [&](std::vector<size_t>& idx) {
        std::shuffle(idx.begin(), idx.end(), rng);
        if (idx.size() > cap) idx.resize(cap);
    };
    take(pos);
    take(neg);
    std::vector<size_t> keep = pos;
    keep.insert(keep.end(), neg.begin(), neg.end());
    std::sort(keep.begin(), keep.end());
    std::vector<bm::LabeledWindow> subset;
    for (size_t i : keep) subset.push_back(std::move(windows[i]));

    bm::TrainRecipe recipe;
    recipe.lr = exp.cfg.get_num("train.lr", recipe.lr);
    recipe.batch_size = static_cast<int>(exp.cfg.get_int("train.batch_size", recipe.batch_size));
    recipe.max_epochs = static_cast<int>(exp.cfg.get_int("train.max_epochs", recipe.max_epochs));
    recipe.patience = static_cast<int>(exp.cfg.get_int("train.patience", recipe.patience));
    recipe.validation_split =
        exp.cfg.get_num("train.validation_split", recipe.validation_split);
    recipe.seed = exp.seed;

    const auto result =
        bm::train_channel_detector(subset, channel_config(exp, L), recipe);

    fs::create_directories(exp.models_dir());
    io::save_model(bm::to_bundle(result.model), model_path.string());

    fs::create_directories(exp.logs_dir());
    const auto log_path =
        exp.logs_dir() / ("channel_" + type + "_L" + std::to_string(L) + ".log.csv");
    std::ofstream log(log_path);
    log << "epoch,train_loss,val_bac\n";
    for (const auto& e : result.log)
        log << e.epoch << "," << e.train_loss << "," << e.val_bac << "\n";

    std::cout << "trained " << type << " L=" << L << " on " << subset.size()
              << " windows; best val BAC " << result.best_val_bac << "\n";
    return 0;
}

int cmd_extract_features(Experiment& exp, int L) {
    DirLock lock(exp.root);
    const auto corpus = load_preprocessed(exp);
    fs::create_directories(exp.features_dir());
    for (const auto& type : exp.enabled_types()) {
        const auto out = features_path(exp, type, L);
        require_writable(exp, out);
        const auto model = load_channel_model(exp, type, L);
        const auto records = pipe::extract_segment_features(corpus, model);
        pipe::save_segment_features(records, out.string());
        std::cout << "wrote " << records.size() << " segments to " << out.string()
                  << "\n";
    }
    return 0;
}

void write_report_header(std::ofstream& f) {
    f << "row,auc,auprc,acc,bac,sen,spe\n";
}
void write_report_row(std::ofstream& f, const std::string& name,
                      const eval::MetricsReport& m) {
    f << name << "," << m.auc << "," << m.auprc << "," << m.acc << "," << m.bac << ","
      << m.sen << "," << m.spe << "\n";
}

int cmd_train_segment(Experiment& exp, const std::string& mode, int L) {
    DirLock lock(exp.root);
    const auto corpus = load_preprocessed(exp);
    const int k = static_cast<int>(exp.cfg.get_int("gbdt.folds", 5));
    const auto folds = pipe::corpus_folds(corpus, k, exp.seed);
    const auto grid = gbdt_grid(exp);
    gbdt::GbdtConfig base = grid.front();
    fs::create_directories(exp.models_dir());
    fs::create_directories(exp.reports_dir());

    const auto types = exp.enabled_types();
    auto load_features = [&](const std::string& type) {
        const auto path = features_path(exp, type, L);
        if (!fs::exists(path))
            throw MissingPrereq("missing features for type " + type + " at L=" +
                                std::to_string(L) + " (run extract-features first)");
        return pipe::load_segment_features(path.string());
    };

    if (mode == "binary") {
        const auto report_path =
            exp.reports_dir() / ("binary_L" + std::to_string(L) + ".csv");
        require_writable(exp, report_path);
        std::ofstream report(report_path);
        report.precision(6);
        write_report_header(report);
        for (const auto& type : types) {
            const auto records = load_features(type);
            const size_t t =
                std::find(io::kArtifactLabels.begin(), io::kArtifactLabels.end(), type) -
                io::kArtifactLabels.begin();
            const auto cv = pipe::run_segment_cv(
                records, folds, base,
                [t](const pipe::SegmentRecord& r) { return r.type_flags[t]; }, &grid);
            write_report_row(report, type, cv.mean);

            // out-of-fold probabilities feed the combined stage
            std::ofstream oof(oof_path(exp, type, L));
            oof.precision(17);
            oof << "patient_id,segment_id,score,fold,label,any_artifact\n";
            for (size_t i = 0; i < records.size(); ++i)
                oof << records[i].patient_id << "," << records[i].segment_id << ","
                    << cv.oof_scores[i] << "," << cv.oof_fold[i] << ","
                    << records[i].type_flags[t] << "," << records[i].any_artifact
                    << "\n";

            // final model on all data for detect
            std::vector<std::vector<double>> x;
            std::vector<int> y;
            std::vector<std::string> pats;
            for (const auto& r : records) {
                x.push_back(r.features);
                y.push_back(r.type_flags[t]);
                pats.push_back(r.patient_id);
            }
            const auto best = gbdt::grid_search(x, y, pats, grid).best;
            const auto model = gbdt::fit_boosted_binary(x, y, best);
            io::save_model(gbdt::to_bundle(model),
                           segment_model_path(exp, type, L).string());
            std::cout << "binary " << type << " L=" << L << ": BAC " << cv.mean.bac
                      << " AUC " << cv.mean.auc << "\n";
        }
        return 0;
    }

    if (mode == "multiclass" || mode == "mcml") {
        // concatenated per-type features in enabled-type order
        std::vector<pipe::SegmentRecord> merged = load_features(types.front());
        for (size_t ti = 1; ti < types.size(); ++ti) {
            const auto more = load_features(types[ti]);
            if (more.size() != merged.size())
                throw io::ParseError("feature files disagree on segment count");
            for (size_t i = 0; i < merged.size(); ++i) {
                if (more[i].segment_id != merged[i].segment_id)
                    throw io::ParseError("feature files disagree on segment order");
                merged[i].features.insert(merged[i].features.end(),
                                          more[i].features.begin(),
                                          more[i].features.end());
            }
        }
        const auto report_path =
            exp.reports_dir() / (mode + "_L" + std::to_string(L) + ".csv");
        require_writable(exp, report_path);
        std::ofstream report(report_path);
        report.precision(6);

        if (mode == "multiclass") {
            std::vector<std::vector<std::string>> fold_pred(folds.folds.size());
            std::vector<std::vector<std::string>> fold_true(folds.folds.size());
            for (size_t f = 0; f < folds.folds.size(); ++f) {
                std::vector<std::vector<double>> xt;
                std::vector<std::string> yt;
                std::vector<size_t> test_idx;
                for (size_t i = 0; i < merged.size(); ++i) {
                    if (folds.fold_of(merged[i].patient_id) == static_cast<int>(f)) {
                        test_idx.push_back(i);
                    } else {
                        xt.push_back(merged[i].features);
                        yt.push_back(merged[i].multiclass_label);
                    }
                }
                const auto model = gbdt::fit_one_vs_rest(xt, yt, base);
                for (size_t i : test_idx) {
                    fold_pred[f].push_back(model.predict(merged[i].features));
                    fold_true[f].push_back(merged[i].multiclass_label);
                }
            }
            // summed confusion over folds
            std::vector<std::string> classes(gbdt::kMulticlassOrder.begin(),
                                             gbdt::kMulticlassOrder.end());
            std::vector<std::vector<long>> total(
                classes.size(), std::vector<long>(classes.size(), 0));
            double mean_acc = 0.0;
            int scored = 0;
            for (size_t f = 0; f < folds.folds.size(); ++f) {
                if (fold_true[f].empty()) continue;
                const auto m = eval::confusion_matrix_multiclass(fold_pred[f],
                                                                 fold_true[f], classes);
                long correct = 0, n = 0;
                for (size_t i = 0; i < classes.size(); ++i)
                    for (size_t j = 0; j < classes.size(); ++j) {
                        total[i][j] += m[i][j];
                        n += m[i][j];
                        if (i == j) correct += m[i][j];
                    }
                mean_acc += static_cast<double>(correct) / n;
                ++scored;
            }
            report << "confusion";
            for (const auto& c : classes) report << "," << c;
            report << "\n";
            for (size_t i = 0; i < classes.size(); ++i) {
                report << classes[i];
                for (long v : total[i]) report << "," << v;
                report << "\n";
            }
            report << "mean_fold_acc," << (scored ? mean_acc / scored : 0.0) << "\n";
            std::cout << "multiclass L=" << L << ": mean fold ACC "
                      << (scored ? mean_acc / scored : 0.0) << "\n";
            return 0;
        }

        // mcml: one independent head per type with both label values
        write_report_header(report);
        for (const auto& type : types) {
            const size_t t =
                std::find(io::kArtifactLabels.begin(), io::kArtifactLabels.end(), type) -
                io::kArtifactLabels.begin();
            bool has_pos = false, has_neg = false;
            for (const auto& r : merged)
                (r.type_flags[t] ? has_pos : has_neg) = true;
            if (!has_pos || !has_neg) {
                std::cout << "mcml head " << type << " skipped (single-valued)\n";
                continue;
            }
            const auto cv = pipe::run_segment_cv(
                merged, folds, base,
                [t](const pipe::SegmentRecord& r) { return r.type_flags[t]; });
            write_report_row(report, type, cv.mean);
            std::cout << "mcml " << type << " L=" << L << ": BAC " << cv.mean.bac
                      << "\n";
        }
        return 0;
    }

    if (mode == "combined") {
        // assemble the 5-column matrix of out-of-fold probabilities; disabled
        // types contribute a constant column
        std::vector<std::vector<double>> probs;
        std::vector<int> y;
        std::vector<std::string> patients;
        std::vector<std::string> segment_ids;
        bool first = true;
        for (size_t t = 0; t < io::kArtifactLabels.size(); ++t) {
            const std::string type = io::kArtifactLabels[t];
            const bool enabled =
                std::find(types.begin(), types.end(), type) != types.end();
            if (!enabled) continue;
            const auto path = oof_path(exp, type, L);
            if (!fs::exists(path))
                throw MissingPrereq("missing out-of-fold scores for " + type +
                                    " at L=" + std::to_string(L) +
                                    " (run train-segment binary first)");
            std::ifstream f(path.string());
            std::string line;
            std::getline(f, line);  // header
            size_t row = 0;
            while (std::getline(f, line)) {
                if (line.empty()) continue;
                const auto parts = io::detail::split_csv(line);
                if (parts.size() != 6) throw io::ParseError("bad oof row in " + path.string());
                if (first) {
                    probs.emplace_back(5, 0.0);
                    patients.push_back(parts[0]);
                    segment_ids.push_back(parts[1]);
                    y.push_back(std::stoi(parts[5]));
                } else if (row >= probs.size() || segment_ids[row] != parts[1]) {
                    throw io::ParseError("oof files disagree on segment order");
                }
                probs[row][t] = std::stod(parts[2]);
                ++row;
            }
            first = false;
        }
        if (probs.empty()) throw MissingPrereq("no out-of-fold scores found");

        const auto cv_scores = [&] {
            // patient-disjoint CV of the combined model over the OOF columns
            std::vector<double> oof(probs.size(),
                                    std::numeric_limits<double>::quiet_NaN());
            for (size_t f = 0; f < folds.folds.size(); ++f) {
                std::vector<std::vector<double>> xt;
                std::vector<int> yt;
                std::vector<size_t> test_idx;
                for (size_t i = 0; i < probs.size(); ++i) {
                    if (folds.fold_of(patients[i]) == static_cast<int>(f))
                        test_idx.push_back(i);
                    else {
                        xt.push_back(probs[i]);
                        yt.push_back(y[i]);
                    }
                }
                const auto model = gbdt::fit_combined_binary(xt, yt, base);
                for (size_t i : test_idx) oof[i] = model.predict_score(probs[i]);
            }
            return oof;
        }();

        const auto report_path =
            exp.reports_dir() / ("combined_L" + std::to_string(L) + ".csv");
        require_writable(exp, report_path);
        std::ofstream report(report_path);
        report.precision(6);
        report << "spe_target,sen,threshold,reachable\n";
        std::cout << "combined L=" << L << ":";
        for (double target : {0.95, 0.97, 0.99}) {
            const auto r = eval::sen_at_spe(cv_scores, y, target);
            report << target << "," << r.sen << "," << r.threshold << ","
                   << (r.reachable ? 1 : 0) << "\n";
            std::cout << "  SEN " << r.sen << " @ SPE" << target * 100;
        }
        std::cout << "\n";

        const auto model = gbdt::fit_combined_binary(probs, y, base);
        io::save_model(gbdt::to_bundle(model), combined_model_path(exp, L).string());
        return 0;
    }

    throw UsageError("unknown mode: " + mode +
                     " (expected binary, multiclass, mcml or combined)");
}

int cmd_eval(Experiment& exp) {
    if (!fs::exists(exp.reports_dir()))
        throw MissingPrereq("no reports at " + exp.reports_dir().string() +
                            " (run train-segment first)");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(exp.reports_dir()))
        if (entry.path().extension() == ".csv") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw MissingPrereq("reports directory is empty");
    for (const auto& path : files) {
        std::cout << "== " << path.filename().string() << " ==\n";
        std::ifstream f(path);
        std::string line;
        while (std::getline(f, line)) {
            std::replace(line.begin(), line.end(), ',', '\t');
            std::cout << "  " << line << "\n";
        }
    }
    return 0;
}

int cmd_detect(Experiment& exp, const std::string& recording_path, int L,
               double threshold) {
    const auto types = exp.enabled_types();
    std::vector<bm::ChannelModel> channel_models;
    std::vector<gbdt::BoostedEnsemble> segment_models;
    std::vector<size_t> type_cols;
    for (const auto& type : types) {
        channel_models.push_back(load_channel_model(exp, type, L));
        const auto sp = segment_model_path(exp, type, L);
        if (!fs::exists(sp))
            throw MissingPrereq("missing segment model " + sp.string() +
                                " (run train-segment binary first)");
        segment_models.push_back(gbdt::ensemble_from_bundle(io::load_model(sp.string())));
        type_cols.push_back(std::find(io::kArtifactLabels.begin(),
                                      io::kArtifactLabels.end(), type) -
                            io::kArtifactLabels.begin());
    }
    const auto cp = combined_model_path(exp, L);
    if (!fs::exists(cp))
        throw MissingPrereq("missing combined model " + cp.string() +
                            " (run train-segment combined first)");
    const auto combined = gbdt::ensemble_from_bundle(io::load_model(cp.string()));

    pipe::CorpusItem item;
    item.recording = io::load_recording(recording_path);
    if (item.recording.sample_rate_hz != 128.0)
        item.recording = pipe::preprocess_recording(item.recording);
    const std::vector<pipe::CorpusItem> corpus{std::move(item)};

    // per-type segment probabilities
    std::vector<std::vector<double>> probs;
    std::vector<std::string> segment_ids;
    for (size_t ti = 0; ti < types.size(); ++ti) {
        const auto records = pipe::extract_segment_features(corpus, channel_models[ti]);
        if (ti == 0) {
            probs.assign(records.size(), std::vector<double>(5, 0.0));
            for (const auto& r : records) segment_ids.push_back(r.segment_id);
        }
        for (size_t i = 0; i < records.size(); ++i)
            probs[i][type_cols[ti]] = segment_models[ti].predict_score(records[i].features);
    }

    fs::create_directories(exp.reports_dir());
    const std::string stem = fs::path(recording_path).stem().stem().string();
    const auto events_path = exp.reports_dir() / ("detect_" + stem + ".csv");
    const auto mask_path = exp.reports_dir() / ("detect_" + stem + ".mask.csv");
    std::ofstream events(events_path);
    std::ofstream mask(mask_path);
    events.precision(6);
    mask.precision(6);
    events << "start_s,stop_s,probability,top_type\n";
    mask << "segment,start_s,stop_s,probability,keep\n";
    size_t kept = 0;
    for (size_t i = 0; i < probs.size(); ++i) {
        const double p = combined.predict_score(probs[i]);
        const double start = static_cast<double>(i) * L;
        const double stop = start + L;
        const size_t best =
            std::max_element(probs[i].begin(), probs[i].end()) - probs[i].begin();
        const bool drop = p >= threshold;
        if (drop)
            events << start << "," << stop << "," << p << ","
                   << io::kArtifactLabels[best] << "\n";
        else
            ++kept;
        mask << i << "," << start << "," << stop << "," << p << "," << (drop ? 0 : 1)
             << "\n";
    }
    std::cout << "segments: " << probs.size() << "  kept: " << kept << "  dropped: "
              << (probs.size() - kept) << "\n"
              << "events: " << events_path.string() << "\n"
              << "mask:   " << mask_path.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EEG artifact detection pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_dir, type, mode = "binary", recording;
    int window_len = 1;
    uint64_t seed = 0;
    bool force = false;
    double threshold = 0.5;

    app.add_option("--config", config_path, "key=value config file");
    app.add_option("--out", out_dir, "experiment root directory");
    app.add_option("--seed", seed, "random seed");
    app.add_flag("--force", force, "overwrite existing outputs");

    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    auto* preprocess =
        app.add_subcommand("preprocess", "filter and resample the corpus to 128 Hz");
    auto* train_channel =
        app.add_subcommand("train-channel", "train one channel-level detector");
    train_channel->add_option("--type", type, "artifact type")->required();
    train_channel->add_option("--window-len", window_len, "window length in seconds")
        ->check(CLI::IsMember({1, 3, 5}));
    auto* extract =
        app.add_subcommand("extract-features", "segment-level feature extraction");
    extract->add_option("--window-len", window_len, "window length in seconds")
        ->check(CLI::IsMember({1, 3, 5}));
    auto* train_segment =
        app.add_subcommand("train-segment", "train segment-level classifiers");
    train_segment->add_option("--mode", mode,
                              "binary | multiclass | mcml | combined");
    train_segment->add_option("--window-len", window_len, "window length in seconds")
        ->check(CLI::IsMember({1, 3, 5}));
    auto* eval_cmd = app.add_subcommand("eval", "print all report tables");
    auto* detect = app.add_subcommand("detect", "score a recording");
    detect->add_option("recording", recording, "recording file")->required();
    detect->add_option("--window-len", window_len, "window length in seconds")
        ->check(CLI::IsMember({1, 3, 5}));
    detect->add_option("--threshold", threshold, "drop segments scoring at or above");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        Experiment exp;
        if (!out_dir.empty())
            exp.root = out_dir;
        else if (const char* env = std::getenv("EEGART_ROOT"))
            exp.root = env;
        else
            exp.root = "experiment";
        if (!config_path.empty()) exp.cfg = Config::load(config_path);
        exp.force = force;
        exp.seed = seed;

        if (*synth) return cmd_synth(exp);
        if (*preprocess) return cmd_preprocess(exp);
        if (*train_channel) {
            if (!io::is_artifact_label(type))
                throw UsageError("unknown artifact type: " + type);
            return cmd_train_channel(exp, type, window_len);
        }
        if (*extract) return cmd_extract_features(exp, window_len);
        if (*train_segment) return cmd_train_segment(exp, mode, window_len);
        if (*eval_cmd) return cmd_eval(exp);
        if (*detect) return cmd_detect(exp, recording, window_len, threshold);
        return 1;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const MissingPrereq& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
