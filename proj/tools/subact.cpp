// Command-line front end: train, detect, eval, synth, bench.
//
// Every option maps onto a flat config key, so a run is fully described by
// `--config file` plus `--set key=value` overrides. Exit codes: 0 success,
// 2 configuration error, 3 data error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "subact/subact.hpp"

namespace fs = std::filesystem;
using namespace subact;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "mode", "classifier", "vocabulary", "scene",
        "gmm.k", "gmm.lr", "gmm.bg_ratio", "gmm.match_sigma", "minimap.min_fg_pixels",
        "feat.xi_thr", "feat.tau_max", "feat.tau_min", "feat.n", "feat.w1", "feat.w2", "feat.abs_diff", "feat.pad",
        "det.threshold", "det.nms_iou", "det.scales", "det.scale_factor", "svm.c",
        "track.iou_gate", "track.n_skip", "track.q_pos", "track.q_vel", "track.r",
        "post.window", "post.prior_only",
        "train.iterations", "train.batch", "train.lr", "train.momentum", "train.decay", "train.flip", "train.seed",
        "train.jitter_px", "train.jitter_copies", "train.phrase", "train.detector",
        "eval.sigma", "eval.tau", "eval.kth",
        "synth.seed", "synth.noise",
        "data", "truth", "pred", "models", "out", "overlay", "dump_features"};
    return keys;
}

struct Options {
    std::string config_file;
    std::vector<std::string> assignments;
    // Command-specific flags; empty means "not given" and leaves the config alone.
    std::string data, truth, pred, models, out, overlay, dump, mode;
    std::optional<double> sigma, tau, noise;
    std::optional<long> seed, iterations;
    bool phrase = false, kth = false;
};

Config build_config(const Options& o) {
    Config cfg = o.config_file.empty() ? Config{} : Config::load(o.config_file);
    for (const auto& a : o.assignments) cfg.set_assignment(a);
    auto put = [&](const char* key, const std::string& v) {
        if (!v.empty()) cfg.set(key, v);
    };
    put("data", o.data);
    put("truth", o.truth);
    put("pred", o.pred);
    put("models", o.models);
    put("out", o.out);
    put("overlay", o.overlay);
    put("dump_features", o.dump);
    put("mode", o.mode);
    if (o.sigma) cfg.set("eval.sigma", std::to_string(*o.sigma));
    if (o.tau) cfg.set("eval.tau", std::to_string(*o.tau));
    if (o.noise) cfg.set("synth.noise", std::to_string(*o.noise));
    if (o.seed) cfg.set("synth.seed", std::to_string(*o.seed));
    if (o.iterations) cfg.set("train.iterations", std::to_string(*o.iterations));
    if (o.phrase) cfg.set("train.phrase", "true");
    if (o.kth) cfg.set("eval.kth", "true");
    for (const auto& [key, value] : cfg.entries())
        if (!known_keys().count(key)) std::cerr << "warning: unknown config key '" << key << "' ignored\n";
    return cfg;
}

std::string require_path(const Config& cfg, const char* key, const char* flag) {
    std::string v = cfg.get_string(key, "");
    if (v.empty()) throw ConfigError(std::string("missing ") + flag + " (config key '" + key + "')");
    return v;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

int cmd_synth(const Config& cfg) {
    const fs::path out = require_path(cfg, "out", "--out");
    const auto seed = static_cast<std::uint64_t>(cfg.get_int("synth.seed", 1));
    const double noise = cfg.get_double("synth.noise", 5.0);
    if (noise < 0) throw ConfigError("synth.noise must be >= 0");
    for (const auto& s : synth_grid_dataset(seed, noise)) {
        write_synth_sequence(s, out / s.name);
        std::cout << "wrote " << (out / s.name).string() << " (" << s.frames.size() << " frames, "
                  << s.annotations.size() << " boxes)\n";
    }
    return 0;
}

int cmd_train(const Config& cfg) {
    const auto p = PipelineParams::from_config(cfg);
    const fs::path data = require_path(cfg, "data", "--data");
    const fs::path out = require_path(cfg, "out", "--out");
    auto seqs = load_dataset(data, p.graph());
    TrainReport report;
    Models m = run_train(p, seqs, &report);
    save_models(m, out);
    print_train_report(std::cout, report, m.graph);
    std::cout << "models written to " << out.string() << "\n";
    return 0;
}

void dump_features(const fs::path& dir, std::size_t i, const ActionDetector& det) {
    char name[48];
    const auto& f = det.front_end().features();
    const std::pair<const char*, const Map*> maps[] = {{"bdi", &f.bdi()}, {"mhi", &f.mhi()}, {"wai", &f.wai()}};
    for (auto [tag, map] : maps) {
        std::snprintf(name, sizeof name, "%s_%06zu.pgm", tag, i);
        write_pgm(quantize(*map), dir / name);
    }
}

int cmd_detect(const Config& cfg) {
    const auto p = PipelineParams::from_config(cfg);
    const fs::path data = require_path(cfg, "data", "--data");
    const fs::path out = require_path(cfg, "out", "--out");
    const Models m = load_models(require_path(cfg, "models", "--models"), p);
    const std::string overlay = cfg.get_string("overlay", "");
    const std::string dump = cfg.get_string("dump_features", "");
    fs::create_directories(out);
    for (const auto& seq : load_dataset(data, m.graph)) {
        std::optional<fs::path> overlay_dir;
        if (!overlay.empty()) overlay_dir = fs::path(overlay) / seq.name;
        FrameHook hook;
        if (!dump.empty()) {
            const fs::path dir = fs::path(dump) / seq.name;
            fs::create_directories(dir);
            hook = [dir](std::size_t i, const ActionDetector& det) { dump_features(dir, i, det); };
        }
        auto result = run_detect(p, m, seq, overlay_dir, nullptr, hook);
        const fs::path file = out / (seq.name + ".txt");
        write_annotations(result.records, file);
        std::cout << seq.name << ": " << result.frames << " frames, " << result.records.size() << " predictions -> "
                  << file.string() << "\n";
    }
    return 0;
}

int cmd_eval(const Config& cfg) {
    const auto p = PipelineParams::from_config(cfg);
    const DescriptorGraph g = p.graph();
    const fs::path truth = require_path(cfg, "truth", "--truth");
    const fs::path pred = require_path(cfg, "pred", "--pred");
    const bool kth = cfg.get_bool("eval.kth", false);
    auto seqs = load_dataset(truth, g);
    std::vector<SequencePredictions> sp;
    for (const auto& s : seqs) {
        if (!s.annotated) throw DataError("no annotations for " + s.name);
        fs::path file = fs::is_directory(pred) ? pred / (s.name + ".txt") : pred;
        if (!fs::exists(file)) throw DataError("no predictions for " + s.name + " (expected " + file.string() + ")");
        if (!fs::is_directory(pred) && seqs.size() > 1)
            throw ConfigError("--pred must be a directory when --truth holds several sequences");
        sp.push_back({parse_annotations(file, g), s.annotations});
    }
    auto report = run_eval(p, g, sp, kth);
    std::cout << format_eval_report(report, g);
    const std::string out = cfg.get_string("out", "");
    if (!out.empty()) {
        write_text(fs::path(out) / "ap.csv", format_ap_csv(report.frame, report.video));
        for (Level l : kLevels)
            write_text(fs::path(out) / ("confusion_" + std::string(level_name(l)) + ".csv"),
                       format_confusion_csv(report.confusion[index_of(l)], g.labels(l)));
        write_text(fs::path(out) / "report.txt", format_eval_report(report, g));
    }
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
    return 0;
}

int cmd_bench(Config cfg) {
    if (!cfg.has("mode")) cfg.set("mode", "detector");
    const auto p = PipelineParams::from_config(cfg);
    const Models m = load_models(require_path(cfg, "models", "--models"), p);
    std::vector<LabeledSequence> seqs;
    const std::string data = cfg.get_string("data", "");
    if (data.empty()) {
        for (auto& s : synth_grid_dataset(static_cast<std::uint64_t>(cfg.get_int("synth.seed", 2)),
                                          cfg.get_double("synth.noise", 5.0)))
            seqs.push_back(to_labeled(std::move(s)));
    } else {
        seqs = load_dataset(data, m.graph);
    }
    auto t = run_bench(p, m, seqs);
    std::cout << format_timing(t);
    char buf[96];
    std::snprintf(buf, sizeof buf, "throughput: %.1f frames/s\n", t.overall_ms > 0 ? 1000.0 / t.overall_ms : 0.0);
    std::cout << buf;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Real-time action detection with a posture/locomotion/gesture descriptor"};
    app.require_subcommand(1);
    Options o;
    auto common = [&](CLI::App* c) {
        c->add_option("--config", o.config_file, "flat key=value configuration file");
        c->add_option("--set", o.assignments, "override one config key (key=value); repeatable");
    };

    auto* synth = app.add_subcommand("synth", "render the 12-sequence synthetic dataset");
    common(synth);
    synth->add_option("--out", o.out, "output directory");
    synth->add_option("--seed", o.seed, "random seed");
    synth->add_option("--noise", o.noise, "additive noise sigma");

    auto* train = app.add_subcommand("train", "train the three networks, priors and the person detector");
    common(train);
    train->add_option("--data", o.data, "dataset directory");
    train->add_option("--out", o.out, "model directory to write");
    train->add_option("--iterations", o.iterations, "SGD iterations per network");
    train->add_flag("--phrase", o.phrase, "also train the visual-phrase baseline network");

    auto* detect = app.add_subcommand("detect", "label every tracked person in each frame");
    common(detect);
    detect->add_option("--data", o.data, "dataset directory (sequence or directory of sequences)");
    detect->add_option("--models", o.models, "model directory");
    detect->add_option("--out", o.out, "directory for prediction files");
    detect->add_option("--mode", o.mode, "oracle | detector");
    detect->add_option("--overlay", o.overlay, "write annotated PGM frames under this directory");
    detect->add_option("--dump-features", o.dump, "write BDI/MHI/WAI maps per frame under this directory");

    auto* eval = app.add_subcommand("eval", "score predictions against ground truth");
    common(eval);
    eval->add_option("--truth", o.truth, "annotated dataset directory");
    eval->add_option("--pred", o.pred, "prediction directory (or file for a single sequence)");
    eval->add_option("--out", o.out, "directory for CSV outputs");
    eval->add_option("--sigma", o.sigma, "IoU threshold");
    eval->add_option("--tau", o.tau, "temporal overlap threshold for video-AP");
    eval->add_flag("--kth", o.kth, "also report video accuracy by majority vote");

    auto* bench = app.add_subcommand("bench", "per-stage timing in detector mode");
    common(bench);
    bench->add_option("--models", o.models, "model directory");
    bench->add_option("--data", o.data, "dataset directory (default: a synthetic grid)");
    bench->add_option("--mode", o.mode, "oracle | detector");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        const Config cfg = build_config(o);
        if (*synth) return cmd_synth(cfg);
        if (*train) return cmd_train(cfg);
        if (*detect) return cmd_detect(cfg);
        if (*eval) return cmd_eval(cfg);
        if (*bench) return cmd_bench(cfg);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitConfig;
}
