#pragma once

// End-to-end orchestration: per-frame processing (motion, detection or oracle
// boxes, tracking, temporal features, three CNNs, conflict resolution,
// smoothing), training from annotated sequences, evaluation and benchmarking.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "cnn.hpp"
#include "config.hpp"
#include "descriptor.hpp"
#include "detection.hpp"
#include "error.hpp"
#include "evaluation.hpp"
#include "hog.hpp"
#include "imaging.hpp"
#include "model_io.hpp"
#include "motion_saliency.hpp"
#include "svm.hpp"
#include "synth.hpp"
#include "temporal_features.hpp"
#include "tracking.hpp"
#include "vocabulary.hpp"

namespace subact {

enum class BoxSource { oracle, detector };
enum class ClassifierKind { multi, phrase };

struct PipelineParams {
    BoxSource mode = BoxSource::oracle;
    ClassifierKind classifier = ClassifierKind::multi;
    std::string vocabulary = "icvl";
    std::string scene;  // overrides the sequence's scene id for prior lookup
    GmmParams gmm;
    FeatureParams feat;
    DetectorParams det;
    TrackerParams track;
    int min_fg_pixels = 16;
    int smooth_window = 15;
    bool prior_only = false;
    TrainConfig train;
    double jitter_px = 4.0;  // extra training crops at GT boxes shifted up to this far
    int jitter_copies = 2;
    bool train_phrase = false;
    bool train_detector = true;
    double svm_c = 100.0;
    double sigma = 0.5;
    double tau = 0.5;

    DescriptorGraph graph() const {
        if (vocabulary == "icvl") return DescriptorGraph::icvl();
        if (vocabulary == "kth") return DescriptorGraph::kth();
        throw ConfigError("vocabulary must be icvl or kth, got '" + vocabulary + "'");
    }

    static PipelineParams from_config(const Config& cfg) {
        PipelineParams p;
        const std::string mode = cfg.get_string("mode", "oracle");
        if (mode == "oracle" || mode == "oracle-boxes") p.mode = BoxSource::oracle;
        else if (mode == "detector" || mode == "hog-detector") p.mode = BoxSource::detector;
        else throw ConfigError("mode must be oracle (oracle-boxes) or detector (hog-detector), got '" + mode + "'");
        const std::string cls = cfg.get_string("classifier", "multi");
        if (cls == "multi") p.classifier = ClassifierKind::multi;
        else if (cls == "phrase") p.classifier = ClassifierKind::phrase;
        else throw ConfigError("classifier must be multi or phrase, got '" + cls + "'");
        p.vocabulary = cfg.get_string("vocabulary", p.vocabulary);
        p.graph();
        p.scene = cfg.get_string("scene", "");
        p.gmm = GmmParams::from_config(cfg);
        p.feat = FeatureParams::from_config(cfg);
        p.det = DetectorParams::from_config(cfg);
        p.track = TrackerParams::from_config(cfg);
        p.min_fg_pixels = static_cast<int>(cfg.get_int("minimap.min_fg_pixels", p.min_fg_pixels));
        p.smooth_window = static_cast<int>(cfg.get_int("post.window", p.smooth_window));
        p.prior_only = cfg.get_bool("post.prior_only", p.prior_only);
        p.train.iterations = static_cast<int>(cfg.get_int("train.iterations", p.train.iterations));
        p.train.batch_size = static_cast<int>(cfg.get_int("train.batch", p.train.batch_size));
        p.train.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", static_cast<long>(p.train.seed)));
        p.train.flip_probability = cfg.get_double("train.flip", p.train.flip_probability);
        p.train.hyper.learning_rate = cfg.get_double("train.lr", p.train.hyper.learning_rate);
        p.train.hyper.momentum = cfg.get_double("train.momentum", p.train.hyper.momentum);
        p.train.hyper.weight_decay = cfg.get_double("train.decay", p.train.hyper.weight_decay);
        p.jitter_px = cfg.get_double("train.jitter_px", p.jitter_px);
        p.jitter_copies = static_cast<int>(cfg.get_int("train.jitter_copies", p.jitter_copies));
        p.train_phrase = cfg.get_bool("train.phrase", p.train_phrase);
        p.train_detector = cfg.get_bool("train.detector", p.train_detector);
        p.svm_c = cfg.get_double("svm.c", p.svm_c);
        p.sigma = cfg.get_double("eval.sigma", p.sigma);
        p.tau = cfg.get_double("eval.tau", p.tau);
        if (p.min_fg_pixels < 1) throw ConfigError("minimap.min_fg_pixels must be >= 1");
        if (p.smooth_window < 1) throw ConfigError("post.window must be >= 1");
        if (p.train.iterations < 1 || p.train.batch_size < 1) throw ConfigError("train.iterations and train.batch must be >= 1");
        if (!(p.train.hyper.learning_rate > 0)) throw ConfigError("train.lr must be positive");
        if (!(p.train.flip_probability >= 0 && p.train.flip_probability <= 1)) throw ConfigError("train.flip must be in [0, 1]");
        if (p.jitter_px < 0 || p.jitter_copies < 0) throw ConfigError("train.jitter_px and train.jitter_copies must be >= 0");
        if (!(p.svm_c > 0)) throw ConfigError("svm.c must be positive");
        if (!(p.sigma >= 0 && p.sigma < 1) || !(p.tau >= 0 && p.tau < 1)) throw ConfigError("eval.sigma and eval.tau must be in [0, 1)");
        return p;
    }
};

// ---------------------------------------------------------------------------
// Artifacts.

struct Models {
    DescriptorGraph graph;
    std::optional<JointPriorTable> priors;
    MultiCnn multi;
    std::optional<Network<float>> phrase;
    std::optional<SvmModel> detector;
};

namespace files {
inline constexpr const char* kDescriptor = "descriptor.txt";
inline constexpr const char* kDetector = "detector.svm";
inline constexpr const char* kPhrase = "phrase.cnn";
inline std::string level_model(Level l) { return std::string(level_name(l)) + ".cnn"; }
}  // namespace files

inline void save_models(const Models& m, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_descriptor(m.graph, m.priors ? &*m.priors : nullptr, dir / files::kDescriptor);
    for (Level l : kLevels)
        if (MultiCnn::needs_network(m.graph, l)) save_model(m.multi.nets[index_of(l)], dir / files::level_model(l));
    if (m.phrase) save_model(*m.phrase, dir / files::kPhrase);
    if (m.detector) save_svm(*m.detector, dir / files::kDetector);
}

inline Models load_models(const std::filesystem::path& dir, const PipelineParams& p) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw DataError("model directory not found: " + dir.string());
    Models m;
    DescriptorFile d = load_descriptor(dir / files::kDescriptor);
    m.graph = std::move(d.graph);
    m.priors = std::move(d.priors);
    if (!m.priors) throw DataError("descriptor file carries no prior table: " + (dir / files::kDescriptor).string());
    for (Level l : kLevels)
        if (MultiCnn::needs_network(m.graph, l)) m.multi.nets[index_of(l)] = load_model(dir / files::level_model(l));
    m.multi.check(m.graph);
    if (p.classifier == ClassifierKind::phrase) {
        m.phrase = load_model(dir / files::kPhrase);
        if (m.phrase->arity != PhraseVocabulary::icvl().size())
            throw DataError("phrase network arity does not match the 10-phrase vocabulary");
    }
    if (p.mode == BoxSource::detector) m.detector = load_svm(dir / files::kDetector);
    return m;
}

// ---------------------------------------------------------------------------
// Datasets: a directory holding one sequence, or a directory of sequence directories.

struct LabeledSequence {
    std::string name;
    FrameSequence frames;
    std::vector<AnnotationRecord> annotations;
    bool annotated = false;
};

inline LabeledSequence load_labeled_sequence(const std::filesystem::path& dir, const DescriptorGraph& g) {
    LabeledSequence s;
    s.name = dir.filename().string();
    s.frames = load_sequence(dir);
    const auto ann = dir / kAnnotationFileName;
    if (std::filesystem::exists(ann)) {
        s.annotations = parse_annotations(ann, g);
        s.annotated = true;
    }
    return s;
}

inline std::vector<LabeledSequence> load_dataset(const std::filesystem::path& root, const DescriptorGraph& g) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw DataError("dataset directory not found: " + root.string());
    if (fs::exists(root / kManifestName)) return {load_labeled_sequence(root, g)};
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory() && fs::exists(e.path() / kManifestName)) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw DataError("no sequences under " + root.string());
    std::vector<LabeledSequence> out;
    for (const auto& d : dirs) out.push_back(load_labeled_sequence(d, g));
    return out;
}

inline LabeledSequence to_labeled(SynthSequence s) {
    return {std::move(s.name), std::move(s.frames), std::move(s.annotations), true};
}

// ---------------------------------------------------------------------------
// Feature front end shared by training and detection.

class FeatureFrontEnd {
public:
    explicit FeatureFrontEnd(const PipelineParams& p) : gmm_(p.gmm), feat_(p.feat) {}

    // Background model step; returns the foreground mask.
    const Frame& motion(const Frame& frame) {
        mask_ = gmm_.step(frame);
        background_ = gmm_.background();
        return mask_;
    }
    void bdi(const Frame& frame) { feat_.update_bdi(frame, background_); }
    void mhi(const Frame& frame) { feat_.update_mhi(frame); }
    void wai() { feat_.update_wai(); }

    void step(const Frame& frame) {
        motion(frame);
        bdi(frame);
        mhi(frame);
        wai();
    }

    bool covers(const BoundingBox& b) const {
        return b.valid() && b.right() + feat_.params().pad > 0 && b.bottom() + feat_.params().pad > 0 &&
               b.x - feat_.params().pad < feat_.bdi().width && b.y - feat_.params().pad < feat_.bdi().height;
    }

    FeatureTriple crop(const BoundingBox& b) const {
        const int pad = feat_.params().pad;
        return {crop_patch(feat_.bdi(), b, pad), crop_patch(feat_.mhi(), b, pad), crop_patch(feat_.wai(), b, pad)};
    }

    const TemporalFeatureState& features() const { return feat_; }

private:
    GmmState gmm_;
    TemporalFeatureState feat_;
    Frame mask_, background_;
};

// ---------------------------------------------------------------------------
// Per-frame action detection over one ordered stream.

struct TrackOutput {
    int track_id = -1;
    BoundingBox box;
    double score = 1.0;
    ActionPrediction raw;       // straight from the classifier
    ActionPrediction smoothed;  // after conflict resolution and temporal smoothing
};

class ActionDetector {
public:
    ActionDetector(const Models& models, const PipelineParams& params, std::string scene)
        : models_(&models), params_(params), scene_(std::move(scene)), front_(params), tracks_(params.track) {
        models.multi.check(models.graph);
        if (!models.priors) throw DataError("models lack a prior table");
        if (params.mode == BoxSource::detector && !models.detector) throw DataError("detector mode needs a detector model");
        if (params.classifier == ClassifierKind::phrase && !models.phrase) throw DataError("phrase mode needs a phrase model");
    }

    const TrackSet& tracks() const { return tracks_; }
    const FeatureFrontEnd& front_end() const { return front_; }

    std::vector<TrackOutput> process(const Frame& frame, std::span<const AnnotationRecord> oracle = {},
                                     StageTimer* timer = nullptr) {
        auto mark = [&](Stage s) {
            if (timer) timer->mark(s);
        };
        const Frame& mask = front_.motion(frame);
        MiniMotionMap mm;
        if (params_.mode == BoxSource::detector) mm = mini_motion_map(mask, {}, {}, params_.min_fg_pixels);
        mark(Stage::motion);

        std::vector<Detection> dets = params_.mode == BoxSource::detector
                                          ? detect(frame, mm, *models_->detector, params_.det)
                                          : oracle_detect(oracle, frame.index);
        mark(Stage::detector);

        if (params_.mode == BoxSource::detector) {
            tracks_.step(dets);
            for (const auto& t : tracks_.tracks()) {
                if (t.frames_since_detection != 0) continue;
                double best = -1;
                for (const auto& d : dets) {
                    double v = iou(d.box, t.reported);
                    if (v > best) best = v, scores_[t.id] = d.score;
                }
            }
        } else {
            tracks_.step_oracle(dets);
        }
        mark(Stage::tracker);

        front_.bdi(frame);
        mark(Stage::bdi);
        front_.mhi(frame);
        mark(Stage::mhi);
        front_.wai();
        mark(Stage::wai);

        std::vector<TrackOutput> out;
        std::vector<Track*> owners;
        for (auto& t : tracks_.tracks()) {
            if (params_.mode == BoxSource::oracle && t.frames_since_detection != 0) continue;
            if (!front_.covers(t.reported)) continue;
            TrackOutput o;
            o.track_id = t.id;
            o.box = t.reported;
            o.score = params_.mode == BoxSource::oracle ? 1.0 : scores_.count(t.id) ? scores_[t.id] : 0.0;
            o.raw = classify_patch(front_.crop(t.reported), t.id);
            out.push_back(std::move(o));
            owners.push_back(&t);
        }
        mark(Stage::cnns);

        const ResolveOptions opt{params_.prior_only};
        for (std::size_t i = 0; i < out.size(); ++i) {
            ActionPrediction revised = resolve_conflicts(out[i].raw, models_->graph, *models_->priors, scene_, opt);
            out[i].smoothed = smooth(owners[i]->history, revised, params_.smooth_window);
        }
        std::erase_if(scores_, [&](const auto& kv) { return tracks_.find(kv.first) == nullptr; });
        mark(Stage::post);
        return out;
    }

private:
    ActionPrediction classify_patch(const FeatureTriple& x, int track_id) const {
        if (params_.classifier == ClassifierKind::phrase) {
            auto p = forward(*models_->phrase, x.wai);
            return phrase_prediction(std::vector<double>(p.begin(), p.end()), PhraseVocabulary::icvl(), models_->graph,
                                     track_id);
        }
        return classify(models_->multi, models_->graph, x, track_id);
    }

    const Models* models_;
    PipelineParams params_;
    std::string scene_;
    FeatureFrontEnd front_;
    TrackSet tracks_;
    std::map<int, double> scores_;
};

// Prediction record for one track on one frame: labels plus per-level
// confidence = detection score x posterior of the emitted label.
inline AnnotationRecord to_record(const TrackOutput& o, std::int64_t frame, const DescriptorGraph& g) {
    AnnotationRecord r;
    r.frame = frame;
    r.track_id = o.track_id;
    r.box = o.box;
    std::array<double, kLevelCount> conf{};
    for (Level l : kLevels) {
        r.label(l) = g.label(l, o.smoothed.labels[index_of(l)]);
        conf[index_of(l)] = o.score * o.smoothed.confidence(l);
    }
    r.confidence = conf;
    return r;
}

// ---------------------------------------------------------------------------
// Overlays: boxes and abbreviated labels drawn into 8-bit frames.

namespace overlay {

inline const char* glyph(char c) {
    static const std::map<char, const char*> font = {
        {'A', ".#.#.####.##.#"}, {'B', "##.#.###.#.###."}, {'C', ".###..#..#...##"}, {'D', "##.#.##.##.###."},
        {'E', "####..##.#..###"}, {'F', "####..##.#..#.."}, {'G', ".###..#.##.#.##"}, {'H', "#.##.####.##.#"},
        {'I', "###.#..#..#.###"}, {'J', "..#..#..##.#.#."}, {'K', "#.##.###.#.##.#"}, {'L', "#..#..#..#..###"},
        {'M', "#.#######.##.#"}, {'N', "##.#.##.##.##.#"}, {'O', ".#.#.##.##.#.#."}, {'P', "##.#.###.#..#.."},
        {'Q', ".#.#.##.###..##"}, {'R', "##.#.###.#.##.#"}, {'S', ".###...#...###."}, {'T', "###.#..#..#..#."},
        {'U', "#.##.##.##.####"}, {'V', "#.##.##.##.#.#."}, {'W', "#.##.#######.#"}, {'X', "#.##.#.#.#.##.#"},
        {'Y', "#.##.#.#..#..#."}, {'Z', "###..#.#.#..###"}, {'0', "####.##.##.####"}, {'1', ".#.##..#..#.###"},
        {'2', "##...#.#.#..###"}, {'3', "##...#.#...###."}, {'4', "#.##.####..#..#"}, {'5', "####..##...###."},
        {'6', ".###..####.####"}, {'7', "###..#.#..#..#."}, {'8', "####.#####.####"}, {'9', "####.####..###."},
        {'-', "......###......"}};
    auto it = font.find(c);
    return it == font.end() ? nullptr : it->second;
}

inline void put(Plane<std::uint8_t>& img, int x, int y, std::uint8_t v) {
    if (x >= 0 && y >= 0 && x < img.width && y < img.height) img.at(x, y) = v;
}

// 3x5 glyphs at 2x scale; lowercase is drawn as uppercase.
inline void text(Plane<std::uint8_t>& img, int x, int y, const std::string& s, std::uint8_t v = 255) {
    for (char ch : s) {
        const char* g = glyph(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
        if (g) {
            const std::size_t n = std::char_traits<char>::length(g);
            for (std::size_t i = 0; i < 15 && i < n; ++i)
                if (g[i] == '#')
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) put(img, x + static_cast<int>(i % 3) * 2 + dx, y + static_cast<int>(i / 3) * 2 + dy, v);
        }
        x += 8;
    }
}

inline void rectangle(Plane<std::uint8_t>& img, const BoundingBox& b, std::uint8_t v = 255) {
    const int x0 = static_cast<int>(std::lround(b.x)), y0 = static_cast<int>(std::lround(b.y));
    const int x1 = static_cast<int>(std::lround(b.right())) - 1, y1 = static_cast<int>(std::lround(b.bottom())) - 1;
    for (int x = x0; x <= x1; ++x) put(img, x, y0, v), put(img, x, y1, v);
    for (int y = y0; y <= y1; ++y) put(img, x0, y, v), put(img, x1, y, v);
}

inline Plane<std::uint8_t> draw(const Frame& frame, std::span<const AnnotationRecord> records) {
    Plane<std::uint8_t> img = frame;
    for (const auto& r : records) {
        rectangle(img, r.box);
        std::string label = std::to_string(r.track_id);
        for (Level l : kLevels) label += " " + r.label(l).substr(0, 3);
        text(img, static_cast<int>(std::lround(r.box.x)), static_cast<int>(std::lround(r.box.y)) - 12, label);
    }
    return img;
}

}  // namespace overlay

// ---------------------------------------------------------------------------
// Detection over whole sequences.

inline std::string scene_for(const LabeledSequence& s, const PipelineParams& p) {
    return p.scene.empty() ? s.frames.scene_id() : p.scene;
}

struct DetectOutput {
    std::vector<AnnotationRecord> records;
    std::size_t frames = 0;
};

// Called after each frame, outside the timed region.
using FrameHook = std::function<void(std::size_t, const ActionDetector&)>;

inline DetectOutput run_detect(const PipelineParams& p, const Models& models, const LabeledSequence& seq,
                               const std::optional<std::filesystem::path>& overlay_dir = std::nullopt,
                               StageTimer* timer = nullptr, const FrameHook& on_frame = {}) {
    if (p.mode == BoxSource::oracle && !seq.annotated)
        throw DataError("oracle mode needs annotations for sequence " + seq.name);
    ActionDetector det(models, p, scene_for(seq, p));
    DetectOutput out;
    if (overlay_dir) std::filesystem::create_directories(*overlay_dir);
    for (std::size_t i = 0; i < seq.frames.size(); ++i) {
        const Frame f = seq.frames.frame(i);
        if (timer) timer->begin_frame();
        auto tracks = det.process(f, seq.annotations, timer);
        std::vector<AnnotationRecord> frame_records;
        for (const auto& o : tracks) frame_records.push_back(to_record(o, f.index, models.graph));
        if (timer) timer->end_frame();
        if (on_frame) on_frame(i, det);
        if (overlay_dir) {
            char name[32];
            std::snprintf(name, sizeof name, "%06zu.pgm", i);
            write_pgm(overlay::draw(f, frame_records), *overlay_dir / name);
        }
        out.records.insert(out.records.end(), frame_records.begin(), frame_records.end());
        ++out.frames;
    }
    std::stable_sort(out.records.begin(), out.records.end(), annotation_order);
    return out;
}

// ---------------------------------------------------------------------------
// Training.

struct LevelDatasets {
    std::array<std::vector<LabeledPatch>, kLevelCount> level;
    std::vector<LabeledPatch> phrase;  // WAI patches of phrase-encodable triples
    std::size_t phrase_skipped = 0;
    std::vector<SceneAnnotations> scenes;
};

// GT boxes -> BDI patches for posture, MHI for locomotion, WAI for gesture.
inline LevelDatasets build_datasets(const PipelineParams& p, const DescriptorGraph& g,
                                    std::span<const LabeledSequence> data) {
    LevelDatasets out;
    std::optional<PhraseVocabulary> vocab;
    if (p.vocabulary == "icvl") vocab = PhraseVocabulary::icvl();
    std::map<std::string, std::size_t> scene_slot;
    std::mt19937_64 rng(p.train.seed + 707);
    std::uniform_real_distribution<double> shift(-p.jitter_px, p.jitter_px);
    for (const auto& seq : data) {
        if (!seq.annotated) throw DataError("training sequence without annotations: " + seq.name);
        const std::string scene = scene_for(seq, p);
        if (!scene_slot.count(scene)) {
            scene_slot[scene] = out.scenes.size();
            out.scenes.push_back({scene, {}});
        }
        auto& scene_records = out.scenes[scene_slot[scene]].records;
        scene_records.insert(scene_records.end(), seq.annotations.begin(), seq.annotations.end());
        FeatureFrontEnd front(p);
        std::size_t next = 0;
        for (std::size_t i = 0; i < seq.frames.size(); ++i) {
            const Frame f = seq.frames.frame(i);
            front.step(f);
            while (next < seq.annotations.size() && seq.annotations[next].frame < f.index) ++next;
            for (; next < seq.annotations.size() && seq.annotations[next].frame == f.index; ++next) {
                const auto& r = seq.annotations[next];
                LabelTriple t{};
                bool full = true;
                for (Level l : kLevels) {
                    if (r.label(l) == kUnlabeled) full = false;
                    else t[index_of(l)] = g.require(l, r.label(l));
                }
                const bool encodable = vocab && full && vocab->contains(t);
                if (vocab && full && !encodable) ++out.phrase_skipped;
                // The exact box first, then shifted copies so the networks tolerate
                // the few-pixel misalignment of detector boxes.
                for (int c = 0; c <= p.jitter_copies; ++c) {
                    BoundingBox box = r.box;
                    if (c > 0) {
                        if (p.jitter_px <= 0) break;
                        box.x += shift(rng);
                        box.y += shift(rng);
                    }
                    if (!front.covers(box)) continue;
                    FeatureTriple x = front.crop(box);
                    const FeaturePatch* inputs[kLevelCount] = {&x.bdi, &x.mhi, &x.wai};
                    for (Level l : kLevels)
                        if (r.label(l) != kUnlabeled) out.level[index_of(l)].push_back({*inputs[index_of(l)], t[index_of(l)]});
                    if (encodable) out.phrase.push_back({x.wai, vocab->encode(t)});
                }
            }
        }
    }
    return out;
}

// Bilinear resample of an arbitrary region, clamped at the image border.
inline Plane<std::uint8_t> crop_resize(const Plane<std::uint8_t>& img, double x0, double y0, double w, double h, int out_w,
                                       int out_h) {
    Plane<std::uint8_t> out(out_w, out_h);
    const double sx = w / out_w, sy = h / out_h;
    for (int j = 0; j < out_h; ++j) {
        const double fy = std::clamp(y0 + (j + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
        const int iy = static_cast<int>(fy), iy1 = std::min(iy + 1, img.height - 1);
        const double ay = fy - iy;
        for (int i = 0; i < out_w; ++i) {
            const double fx = std::clamp(x0 + (i + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
            const int ix = static_cast<int>(fx), ix1 = std::min(ix + 1, img.width - 1);
            const double ax = fx - ix;
            const double v = (img.at(ix, iy) * (1 - ax) + img.at(ix1, iy) * ax) * (1 - ay) +
                             (img.at(ix, iy1) * (1 - ax) + img.at(ix1, iy1) * ax) * ay;
            out.at(i, j) = static_cast<std::uint8_t>(std::lround(v));
        }
    }
    return out;
}

inline Plane<std::uint8_t> mirror(const Plane<std::uint8_t>& img) {
    Plane<std::uint8_t> out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) out.at(x, y) = img.at(img.width - 1 - x, y);
    return out;
}

struct DetectorSamples {
    std::vector<std::vector<float>> positives, negatives;
};

// Person windows from upright annotated boxes (window = box grown by the
// detector inset) plus random background windows that miss every person.
inline DetectorSamples detector_samples(const DetectorParams& dp, std::span<const LabeledSequence> data,
                                        std::uint64_t seed, int frame_step = 3, int negatives_per_frame = 3) {
    DetectorSamples out;
    std::mt19937_64 rng(seed);
    const double person_h = hog::kWindowH - 2.0 * dp.inset_y;
    for (const auto& seq : data) {
        for (std::size_t i = 0; i < seq.frames.size(); i += frame_step) {
            const Frame f = seq.frames.frame(i);
            std::vector<BoundingBox> people;
            for (const auto& r : seq.annotations)
                if (r.frame == f.index) people.push_back(r.box);
            for (const auto& b : people) {
                const double s = b.h / person_h;
                if (b.h / b.w < 2.2 || s < 0.8 || s > 3.0) continue;  // upright people only
                const double ww = hog::kWindowW * s, wh = hog::kWindowH * s;
                auto win = crop_resize(f, b.cx() - ww / 2, b.cy() - wh / 2, ww, wh, hog::kWindowW, hog::kWindowH);
                out.positives.push_back(hog_descriptor(win));
                out.positives.push_back(hog_descriptor(mirror(win)));
            }
            if (f.width < hog::kWindowW || f.height < hog::kWindowH) continue;
            std::uniform_int_distribution<int> xs(0, f.width - hog::kWindowW), ys(0, f.height - hog::kWindowH);
            for (int n = 0, tries = 0; n < negatives_per_frame && tries < 50; ++tries) {
                const int x = xs(rng), y = ys(rng);
                const BoundingBox pb = dp.person_box(x, y, 1.0, 1.0);
                bool clear = true;
                for (const auto& b : people) clear = clear && iou(pb, b) < 0.2;
                if (!clear) continue;
                Plane<std::uint8_t> win(hog::kWindowW, hog::kWindowH);
                for (int v = 0; v < hog::kWindowH; ++v)
                    for (int u = 0; u < hog::kWindowW; ++u) win.at(u, v) = f.at(x + u, y + v);
                out.negatives.push_back(hog_descriptor(win));
                ++n;
            }
        }
    }
    return out;
}

struct TrainReport {
    std::array<std::size_t, kLevelCount> examples{};
    std::array<double, kLevelCount> train_accuracy{};
    std::array<double, kLevelCount> final_loss{};
    std::size_t phrase_examples = 0, phrase_skipped = 0;
    double phrase_accuracy = 0;
    std::size_t detector_positives = 0, detector_negatives = 0;
    double detector_accuracy = 0;
};

inline void print_train_report(std::ostream& os, const TrainReport& r, const DescriptorGraph& g) {
    char buf[160];
    for (Level l : kLevels) {
        if (!MultiCnn::needs_network(g, l)) {
            std::snprintf(buf, sizeof buf, "%-10s single label, no network\n", std::string(level_name(l)).c_str());
            os << buf;
            continue;
        }
        std::snprintf(buf, sizeof buf, "%-10s %6zu patches  arity %d  final loss %.4f  train accuracy %.4f\n",
                      std::string(level_name(l)).c_str(), r.examples[index_of(l)], g.size(l), r.final_loss[index_of(l)],
                      r.train_accuracy[index_of(l)]);
        os << buf;
    }
    if (r.phrase_examples) {
        std::snprintf(buf, sizeof buf, "phrase     %6zu patches  (%zu boxes outside the phrase vocabulary)  train accuracy %.4f\n",
                      r.phrase_examples, r.phrase_skipped, r.phrase_accuracy);
        os << buf;
    }
    if (r.detector_positives) {
        std::snprintf(buf, sizeof buf, "detector   %6zu positive / %zu negative windows  train accuracy %.4f\n",
                      r.detector_positives, r.detector_negatives, r.detector_accuracy);
        os << buf;
    }
}

inline Models run_train(const PipelineParams& p, std::span<const LabeledSequence> data, TrainReport* report = nullptr) {
    if (data.empty()) throw DataError("no training sequences");
    const DescriptorGraph g = p.graph();
    LevelDatasets ds = build_datasets(p, g, data);
    TrainReport rep;
    Models m;
    m.graph = g;
    for (Level l : kLevels) {
        const auto& set = ds.level[index_of(l)];
        std::set<int> present;
        for (const auto& ex : set) present.insert(ex.label);
        rep.examples[index_of(l)] = set.size();
        if (!MultiCnn::needs_network(g, l)) continue;  // single label: constant posterior
        if (present.size() < 2)
            throw DataError(std::string(level_name(l)) + " level has fewer than 2 distinct labels in the training data");
        TrainConfig tc = p.train;
        tc.seed = p.train.seed + 101 * static_cast<std::uint64_t>(index_of(l) + 1);
        auto result = train(init_network<float>(g.size(l), tc.seed), std::span<const LabeledPatch>(set), tc);
        rep.final_loss[index_of(l)] = result.loss_curve.back();
        rep.train_accuracy[index_of(l)] = accuracy(result.net, std::span<const LabeledPatch>(set));
        m.multi.nets[index_of(l)] = std::move(result.net);
    }
    m.priors = estimate_priors(g, ds.scenes);
    if (p.train_phrase) {
        if (p.vocabulary != "icvl") throw ConfigError("the phrase baseline is defined for the icvl vocabulary only");
        if (ds.phrase.empty()) throw DataError("no phrase-encodable training examples");
        TrainConfig tc = p.train;
        tc.seed = p.train.seed + 404;
        auto result = train(init_network<float>(PhraseVocabulary::icvl().size(), tc.seed),
                            std::span<const LabeledPatch>(ds.phrase), tc);
        rep.phrase_examples = ds.phrase.size();
        rep.phrase_skipped = ds.phrase_skipped;
        rep.phrase_accuracy = accuracy(result.net, std::span<const LabeledPatch>(ds.phrase));
        m.phrase = std::move(result.net);
    }
    if (p.train_detector) {
        DetectorSamples s = detector_samples(p.det, data, p.train.seed + 505);
        if (s.positives.empty()) throw DataError("no upright person boxes to train the detector on");
        if (s.negatives.empty()) throw DataError("no background windows to train the detector on");
        SvmTrainOptions opt;
        opt.C = p.svm_c;
        opt.seed = p.train.seed + 606;
        auto r = train_svm(s.positives, s.negatives, opt);
        rep.detector_positives = s.positives.size();
        rep.detector_negatives = s.negatives.size();
        rep.detector_accuracy = r.train_accuracy;
        m.detector = std::move(r.model);
    }
    if (report) *report = rep;
    return m;
}

// ---------------------------------------------------------------------------
// Evaluation.

struct SequencePredictions {
    std::vector<AnnotationRecord> predicted, truth;
};

struct EvalReport {
    ApReport frame, video;
    std::array<ConfusionMatrix, kLevelCount> confusion;
    std::optional<double> video_accuracy;  // video-level majority voting
    std::size_t videos = 0;
    std::vector<std::string> warnings;
};

namespace detail {

// Frame keys stay unique across sequences.
inline std::int64_t global_frame(std::size_t seq, std::int64_t frame) {
    return static_cast<std::int64_t>(seq) * 100000000LL + frame;
}

inline std::vector<Tube> tubes_from(std::span<const AnnotationRecord> records, std::size_t seq, bool with_confidence) {
    // (track, level, label) -> tube; confidence is the mean of frame confidences.
    std::map<std::tuple<int, int, std::string>, std::pair<Tube, double>> acc;
    for (const auto& r : records)
        for (Level l : kLevels) {
            if (r.label(l) == kUnlabeled) continue;
            auto& [tube, sum] = acc[{r.track_id, index_of(l), r.label(l)}];
            tube.track_id = r.track_id;
            tube.cls = r.label(l);
            tube.boxes[global_frame(seq, r.frame)] = r.box;
            if (with_confidence && r.confidence) sum += (*r.confidence)[index_of(l)];
        }
    std::vector<Tube> out;
    for (auto& [key, v] : acc) {
        v.first.confidence = with_confidence ? v.second / static_cast<double>(v.first.boxes.size()) : 0.0;
        out.push_back(std::move(v.first));
    }
    return out;
}

}  // namespace detail

inline EvalReport run_eval(const PipelineParams& p, const DescriptorGraph& g, std::span<const SequencePredictions> seqs,
                           bool video_voting = false) {
    EvalReport rep;
    std::vector<ScoredDetection> dets;
    std::vector<GroundTruthBox> gt;
    std::vector<Tube> tracks, tubes;
    std::array<std::vector<std::pair<int, int>>, kLevelCount> pairs;
    std::size_t correct_videos = 0;
    for (std::size_t s = 0; s < seqs.size(); ++s) {
        const auto& sp = seqs[s];
        std::int64_t lo = INT64_MAX, hi = INT64_MIN;
        for (const auto& r : sp.truth) lo = std::min(lo, r.frame), hi = std::max(hi, r.frame);
        for (const auto& r : sp.predicted) {
            if (!sp.truth.empty() && (r.frame < lo || r.frame > hi)) {
                rep.warnings.push_back("sequence " + std::to_string(s) + ": prediction at frame " + std::to_string(r.frame) +
                                       " outside the annotated range");
                break;
            }
        }
        for (const auto& r : sp.predicted)
            for (Level l : kLevels) {
                if (r.label(l) == kUnlabeled) continue;
                const double c = r.confidence ? (*r.confidence)[index_of(l)] : 1.0;
                dets.push_back({detail::global_frame(s, r.frame), r.box, r.label(l), c});
            }
        for (const auto& r : sp.truth)
            for (Level l : kLevels)
                if (r.label(l) != kUnlabeled) gt.push_back({detail::global_frame(s, r.frame), r.box, r.label(l)});
        auto tr = detail::tubes_from(sp.predicted, s, true);
        auto tu = detail::tubes_from(sp.truth, s, false);
        tracks.insert(tracks.end(), tr.begin(), tr.end());
        tubes.insert(tubes.end(), tu.begin(), tu.end());

        // Label pairs for the confusion matrices: each annotated box against the
        // best-overlapping prediction of its frame.
        for (const auto& t : sp.truth) {
            const AnnotationRecord* best = nullptr;
            double best_iou = p.sigma;
            for (const auto& r : sp.predicted) {
                if (r.frame != t.frame) continue;
                double v = iou(r.box, t.box);
                if (v > best_iou) best = &r, best_iou = v;
            }
            if (!best) continue;
            for (Level l : kLevels)
                if (t.label(l) != kUnlabeled && best->label(l) != kUnlabeled)
                    pairs[index_of(l)].emplace_back(g.require(l, t.label(l)), g.require(l, best->label(l)));
        }

        if (video_voting && !sp.truth.empty()) {
            auto triples = [&](std::span<const AnnotationRecord> rs) {
                std::vector<LabelTriple> out;
                for (const auto& r : rs) {
                    LabelTriple t{};
                    bool ok = true;
                    for (Level l : kLevels) {
                        if (r.label(l) == kUnlabeled) ok = false;
                        else t[index_of(l)] = g.require(l, r.label(l));
                    }
                    if (ok) out.push_back(t);
                }
                return out;
            };
            auto truth = triples(sp.truth), pred = triples(sp.predicted);
            ++rep.videos;
            if (!truth.empty() && !pred.empty() &&
                video_correct(video_majority_label(pred), video_majority_label(truth)))
                ++correct_videos;
        }
    }
    rep.frame = frame_ap(dets, gt, p.sigma);
    rep.video = video_ap(tracks, tubes, p.sigma, p.tau);
    for (Level l : kLevels) rep.confusion[index_of(l)] = confusion_matrix(pairs[index_of(l)], g.size(l));
    if (video_voting && rep.videos) rep.video_accuracy = static_cast<double>(correct_videos) / rep.videos;
    return rep;
}

inline constexpr double kReferenceFrameMap = 76.6;
inline constexpr double kReferenceVideoMap = 83.5;
inline constexpr double kReferenceKthAccuracy = 96.3;

inline std::string reference_footer() {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "reference (published, ICVL): frame-mAP %.1f%%  video-mAP %.1f%%; KTH video accuracy %.1f%%\n"
                  "these figures need the original datasets and are listed for comparison only\n",
                  kReferenceFrameMap, kReferenceVideoMap, kReferenceKthAccuracy);
    return buf;
}

inline std::string format_eval_report(const EvalReport& r, const DescriptorGraph& g) {
    std::string out;
    char buf[160];
    out += "class                frame-AP  video-AP\n";
    std::map<std::string, std::pair<double, double>> rows;
    for (const auto& c : r.frame.classes) rows[c.cls].first = c.ap;
    for (const auto& c : r.video.classes) rows[c.cls].second = c.ap;
    for (const auto& [cls, v] : rows) {
        std::snprintf(buf, sizeof buf, "%-20s %8.4f  %8.4f\n", cls.c_str(), v.first, v.second);
        out += buf;
    }
    std::snprintf(buf, sizeof buf, "%-20s %8.4f  %8.4f\n", "mAP", r.frame.map, r.video.map);
    out += buf;
    for (const auto& s : r.frame.skipped) out += "no ground truth for predicted class " + s + " (not in mAP)\n";
    for (Level l : kLevels) {
        out += "\nconfusion (" + std::string(level_name(l)) + ", rows = truth)\n";
        out += format_confusion_csv(r.confusion[index_of(l)], g.labels(l));
        for (int k = 0; k < g.size(l); ++k)
            if (r.confusion[index_of(l)].empty_rows[k]) out += "  (no matched samples of " + g.label(l, k) + ")\n";
    }
    if (r.video_accuracy) {
        std::snprintf(buf, sizeof buf, "\nvideo accuracy (majority vote, %zu videos): %.4f\n", r.videos, *r.video_accuracy);
        out += buf;
    }
    for (const auto& w : r.warnings) out += "warning: " + w + "\n";
    out += "\n" + reference_footer();
    return out;
}

// ---------------------------------------------------------------------------
// Benchmark: detector-mode processing with per-stage timing; no overlays.

inline TimingReport run_bench(const PipelineParams& p, const Models& models, std::span<const LabeledSequence> seqs) {
    StageTimer timer;
    for (const auto& s : seqs) run_detect(p, models, s, std::nullopt, &timer);
    return timer.report();
}

// KTH protocol: the fixed training persons; everyone else is test.
inline bool kth_training_person(const std::string& sequence_name) {
    static const std::set<int> train = {11, 12, 13, 14, 15, 16, 17, 18};
    auto pos = sequence_name.find("person");
    if (pos == std::string::npos) return false;
    return train.count(std::atoi(sequence_name.c_str() + pos + 6)) > 0;
}

}  // namespace subact
