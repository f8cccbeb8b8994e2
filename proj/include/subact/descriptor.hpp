#pragma once

// The three-level sub-action descriptor at inference time: per-level CNN
// classification, scene-conditioned joint priors, conflict resolution against
// the compatibility graph, temporal smoothing, the visual-phrase baseline
// vocabulary and video-level majority voting.

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cnn.hpp"
#include "error.hpp"
#include "imaging.hpp"
#include "vocabulary.hpp"

namespace subact {

// ---------------------------------------------------------------------------
// Joint priors P(label, scene) per level.

struct SceneAnnotations {
    std::string scene;
    std::vector<AnnotationRecord> records;
};

class JointPriorTable {
public:
    JointPriorTable() = default;
    JointPriorTable(const DescriptorGraph& graph, std::vector<std::string> scenes) : scenes_(std::move(scenes)) {
        for (Level l : kLevels) {
            labels_[index_of(l)] = graph.size(l);
            probs_[index_of(l)].assign(static_cast<std::size_t>(graph.size(l)) * scenes_.size(), 0.0);
            counts_[index_of(l)].assign(probs_[index_of(l)].size(), 0);
        }
    }

    const std::vector<std::string>& scenes() const { return scenes_; }
    int label_count(Level l) const { return labels_[index_of(l)]; }

    std::optional<int> scene_index(std::string_view scene) const {
        for (std::size_t i = 0; i < scenes_.size(); ++i)
            if (scenes_[i] == scene) return static_cast<int>(i);
        return std::nullopt;
    }

    double& prob(Level l, int label, int scene) { return probs_[index_of(l)][cell(l, label, scene)]; }
    double prob(Level l, int label, int scene) const { return probs_[index_of(l)][cell(l, label, scene)]; }
    long& count(Level l, int label, int scene) { return counts_[index_of(l)][cell(l, label, scene)]; }
    long count(Level l, int label, int scene) const { return counts_[index_of(l)][cell(l, label, scene)]; }

    // Unsmoothed frequency, from the counts.
    double raw_prob(Level l, int label, int scene) const {
        const auto& c = counts_[index_of(l)];
        long total = std::accumulate(c.begin(), c.end(), 0L);
        return total ? static_cast<double>(count(l, label, scene)) / total : 0.0;
    }

    // P(label, scene) for a known scene; the scene-marginal sum_j P(label, s_j) otherwise.
    double prior(Level l, int label, std::string_view scene) const {
        if (auto s = scene_index(scene)) return prob(l, label, *s);
        double m = 0;
        for (int s = 0; s < static_cast<int>(scenes_.size()); ++s) m += prob(l, label, s);
        return m;
    }

    // P(s_j) read off one level's joint table.
    double scene_marginal(int scene, Level l = Level::posture) const {
        double m = 0;
        for (int a = 0; a < label_count(l); ++a) m += prob(l, a, scene);
        return m;
    }

    bool operator==(const JointPriorTable&) const = default;

private:
    std::size_t cell(Level l, int label, int scene) const {
        if (label < 0 || label >= labels_[index_of(l)] || scene < 0 || scene >= static_cast<int>(scenes_.size()))
            throw DataError("prior table index out of range");
        return static_cast<std::size_t>(label) * scenes_.size() + scene;
    }

    std::vector<std::string> scenes_;
    std::array<int, kLevelCount> labels_{};
    std::array<std::vector<double>, kLevelCount> probs_;
    std::array<std::vector<long>, kLevelCount> counts_;
};

// Add-one smoothing over the (label, scene) grid, normalized per level.
inline JointPriorTable estimate_priors(const DescriptorGraph& graph, std::span<const SceneAnnotations> data) {
    std::vector<std::string> scenes;
    for (const auto& d : data)
        if (std::find(scenes.begin(), scenes.end(), d.scene) == scenes.end()) scenes.push_back(d.scene);
    JointPriorTable t(graph, scenes);
    long labeled = 0;
    for (const auto& d : data) {
        const int s = *t.scene_index(d.scene);
        for (const auto& r : d.records)
            for (Level l : kLevels) {
                if (r.label(l) == kUnlabeled) continue;
                ++t.count(l, graph.require(l, r.label(l)), s);
                ++labeled;
            }
    }
    if (labeled == 0) throw DataError("estimate_priors: no labeled frames");
    for (Level l : kLevels) {
        long total = 0;
        for (int a = 0; a < graph.size(l); ++a)
            for (int s = 0; s < static_cast<int>(scenes.size()); ++s) total += t.count(l, a, s);
        const double denom = static_cast<double>(total) + static_cast<double>(graph.size(l)) * scenes.size();
        for (int a = 0; a < graph.size(l); ++a)
            for (int s = 0; s < static_cast<int>(scenes.size()); ++s) t.prob(l, a, s) = (t.count(l, a, s) + 1.0) / denom;
    }
    return t;
}

// ---------------------------------------------------------------------------
// Text form: `level <name>: <labels...>`, `edge <a> <b>` for every compatible
// adjacent-level pair, `prior <level> <label> <scene> <prob>`.

inline std::string format_descriptor(const DescriptorGraph& g, const JointPriorTable* priors = nullptr) {
    std::ostringstream out;
    for (Level l : kLevels) {
        out << "level " << level_name(l) << ":";
        for (const auto& name : g.labels(l)) out << ' ' << name;
        out << '\n';
    }
    for (Level upper : {Level::posture, Level::locomotion}) {
        Level lower = static_cast<Level>(index_of(upper) + 1);
        for (int a = 0; a < g.size(upper); ++a)
            for (int b = 0; b < g.size(lower); ++b)
                if (g.compatible(upper, a, b)) out << "edge " << g.label(upper, a) << ' ' << g.label(lower, b) << '\n';
    }
    if (priors) {
        char buf[64];
        for (Level l : kLevels)
            for (int a = 0; a < g.size(l); ++a)
                for (int s = 0; s < static_cast<int>(priors->scenes().size()); ++s) {
                    std::snprintf(buf, sizeof buf, "%.17g", priors->prob(l, a, s));
                    out << "prior " << level_name(l) << ' ' << g.label(l, a) << ' ' << priors->scenes()[s] << ' ' << buf
                        << '\n';
                }
    }
    return out.str();
}

struct DescriptorFile {
    DescriptorGraph graph;
    std::optional<JointPriorTable> priors;
};

inline DescriptorFile parse_descriptor(std::string_view text, const std::string& origin = "<descriptor>") {
    std::array<std::vector<std::string>, kLevelCount> labels;
    std::array<bool, kLevelCount> seen{};
    std::vector<std::pair<std::string, std::string>> edges;
    struct PriorLine {
        Level level;
        std::string label, scene;
        double p;
    };
    std::vector<PriorLine> prior_lines;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    auto fail = [&](const std::string& msg) { throw FormatError(origin + ":" + std::to_string(lineno) + ": " + msg); };
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string kind;
        if (!(ls >> kind)) continue;
        if (kind == "level") {
            std::string name;
            ls >> name;
            if (name.empty() || name.back() != ':') fail("expected 'level <name>: <labels>'");
            name.pop_back();
            auto l = parse_level(name);
            if (!l) fail("unknown level '" + name + "'");
            if (seen[index_of(*l)]) fail("level '" + name + "' declared twice");
            seen[index_of(*l)] = true;
            for (std::string lab; ls >> lab;) labels[index_of(*l)].push_back(lab);
            if (labels[index_of(*l)].empty()) fail("level '" + name + "' has no labels");
        } else if (kind == "edge") {
            std::string a, b, extra;
            if (!(ls >> a >> b) || (ls >> extra)) fail("expected 'edge <a> <b>'");
            edges.emplace_back(a, b);
        } else if (kind == "prior") {
            std::string level, label, scene, extra;
            double p = 0;
            if (!(ls >> level >> label >> scene >> p) || (ls >> extra)) fail("expected 'prior <level> <label> <scene> <prob>'");
            auto l = parse_level(level);
            if (!l) fail("unknown level '" + level + "'");
            if (!(p >= 0)) fail("negative prior");
            prior_lines.push_back({*l, label, scene, p});
        } else {
            fail("unknown directive '" + kind + "'");
        }
    }
    for (Level l : kLevels)
        if (!seen[index_of(l)]) throw FormatError(origin + ": missing level '" + std::string(level_name(l)) + "'");
    DescriptorFile out;
    out.graph = DescriptorGraph(labels[0], labels[1], labels[2]);
    for (Level upper : {Level::posture, Level::locomotion}) {
        Level lower = static_cast<Level>(index_of(upper) + 1);
        for (int a = 0; a < out.graph.size(upper); ++a)
            for (int b = 0; b < out.graph.size(lower); ++b) out.graph.set_compatible(upper, a, b, false);
    }
    for (const auto& [a, b] : edges) {
        bool placed = false;
        for (Level upper : {Level::posture, Level::locomotion}) {
            Level lower = static_cast<Level>(index_of(upper) + 1);
            auto ia = out.graph.find(upper, a), ib = out.graph.find(lower, b);
            if (ia && ib) {
                out.graph.set_compatible(upper, *ia, *ib, true);
                placed = true;
            }
        }
        if (!placed) throw FormatError(origin + ": edge '" + a + " " + b + "' does not join adjacent levels");
    }
    if (!prior_lines.empty()) {
        std::vector<std::string> scenes;
        for (const auto& p : prior_lines)
            if (std::find(scenes.begin(), scenes.end(), p.scene) == scenes.end()) scenes.push_back(p.scene);
        JointPriorTable t(out.graph, scenes);
        for (const auto& p : prior_lines) {
            auto label = out.graph.find(p.level, p.label);
            if (!label) throw FormatError(origin + ": prior for unknown label '" + p.label + "'");
            t.prob(p.level, *label, *t.scene_index(p.scene)) = p.p;
        }
        out.priors = std::move(t);
    }
    return out;
}

inline DescriptorFile load_descriptor(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open descriptor file: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_descriptor(ss.str(), path.string());
}

inline void save_descriptor(const DescriptorGraph& g, const JointPriorTable* priors, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("unwritable path: " + path.string());
    out << format_descriptor(g, priors);
}

// ---------------------------------------------------------------------------
// Predictions.

struct ActionPrediction {
    int track_id = -1;
    LabelTriple labels{};
    std::array<std::vector<double>, kLevelCount> posterior;
    // Some level's top two posteriors tie (e.g. an untrained, uniform network).
    bool low_confidence = false;

    double confidence(Level l) const {
        const auto& p = posterior[index_of(l)];
        int label = labels[index_of(l)];
        return label >= 0 && label < static_cast<int>(p.size()) ? p[label] : 0.0;
    }
};

template <class T>
int argmax_first(const std::vector<T>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline bool top_two_tie(const std::vector<double>& p) {
    if (p.size() < 2) return false;
    std::vector<double> s = p;
    std::partial_sort(s.begin(), s.begin() + 2, s.end(), std::greater<>());
    return s[0] - s[1] <= 1e-9;
}

inline ActionPrediction prediction_from_posteriors(std::array<std::vector<double>, kLevelCount> posterior,
                                                   int track_id = -1) {
    ActionPrediction p;
    p.track_id = track_id;
    for (int k = 0; k < kLevelCount; ++k) {
        p.labels[k] = argmax_first(posterior[k]);
        p.low_confidence = p.low_confidence || top_two_tie(posterior[k]);
    }
    p.posterior = std::move(posterior);
    return p;
}

// One network per level: BDI -> posture, MHI -> locomotion, WAI -> gesture.
// A level with a single label needs no network (its slot stays empty, arity 0).
struct MultiCnn {
    std::array<Network<float>, kLevelCount> nets;

    static bool needs_network(const DescriptorGraph& g, Level l) { return g.size(l) > 1; }

    void check(const DescriptorGraph& g) const {
        for (Level l : kLevels)
            if (nets[index_of(l)].arity != (needs_network(g, l) ? g.size(l) : 0))
                throw DataError(std::string(level_name(l)) + " network has arity " +
                                std::to_string(nets[index_of(l)].arity) + " but the descriptor level has " +
                                std::to_string(g.size(l)) + " labels");
    }
};

struct FeatureTriple {
    FeaturePatch bdi, mhi, wai;
};

inline ActionPrediction classify(const MultiCnn& m, const DescriptorGraph& g, const FeatureTriple& x, int track_id = -1) {
    m.check(g);
    std::array<std::vector<double>, kLevelCount> post;
    const FeaturePatch* inputs[kLevelCount] = {&x.bdi, &x.mhi, &x.wai};
    for (int k = 0; k < kLevelCount; ++k) {
        if (!MultiCnn::needs_network(g, kLevels[k])) {
            post[k] = {1.0};
            continue;
        }
        auto p = forward(m.nets[k], *inputs[k]);
        post[k].assign(p.begin(), p.end());
    }
    return prediction_from_posteriors(std::move(post), track_id);
}

// ---------------------------------------------------------------------------
// Conflict resolution.

struct ResolveOptions {
    bool prior_only = false;
};

namespace detail {

inline bool compatible_with(const DescriptorGraph& g, Level l, int label, const LabelTriple& t,
                            const std::array<bool, kLevelCount>& fixed) {
    for (Level other : kLevels)
        if (fixed[index_of(other)] && other != l && !g.pair_compatible(l, label, other, t[index_of(other)])) return false;
    return true;
}

inline double log_prior_score(const JointPriorTable& pr, std::string_view scene, const LabelTriple& t) {
    double s = 0;
    for (Level l : kLevels) s += std::log(pr.prior(l, t[index_of(l)], scene));
    return s;
}

// Compatible triple with the best joint prior, optionally pinned at one level.
inline LabelTriple best_prior_triple(const DescriptorGraph& g, const JointPriorTable& pr, std::string_view scene,
                                     std::optional<std::pair<Level, int>> pin = std::nullopt) {
    std::optional<LabelTriple> best;
    double best_score = -HUGE_VAL;
    for (const auto& t : g.compatible_triples()) {
        if (pin && t[index_of(pin->first)] != pin->second) continue;
        double s = log_prior_score(pr, scene, t);
        if (!best || s > best_score) best = t, best_score = s;
    }
    if (!best) {
        if (pin) return best_prior_triple(g, pr, scene);
        throw DataError("descriptor graph admits no compatible triple");
    }
    return *best;
}

}  // namespace detail

// Compatible triples pass through. Otherwise the most confident level is
// anchored and the remaining levels, in decreasing confidence, keep their label
// when it agrees with the levels fixed so far, or take the prior argmax among
// the labels that do.
inline ActionPrediction resolve_conflicts(const ActionPrediction& raw, const DescriptorGraph& g,
                                          const JointPriorTable& priors, std::string_view scene,
                                          const ResolveOptions& opt = {}) {
    if (g.compatible(raw.labels)) return raw;
    ActionPrediction out = raw;
    if (opt.prior_only) {
        out.labels = detail::best_prior_triple(g, priors, scene);
        return out;
    }
    std::array<int, kLevelCount> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return raw.confidence(static_cast<Level>(a)) > raw.confidence(static_cast<Level>(b));
    });
    std::array<bool, kLevelCount> fixed{};
    fixed[order[0]] = true;
    for (int i = 1; i < kLevelCount; ++i) {
        const Level l = static_cast<Level>(order[i]);
        if (!detail::compatible_with(g, l, out.labels[order[i]], out.labels, fixed)) {
            int best = -1;
            double best_p = -1;
            for (int a = 0; a < g.size(l); ++a) {
                if (!detail::compatible_with(g, l, a, out.labels, fixed)) continue;
                double p = priors.prior(l, a, scene);
                if (p > best_p) best = a, best_p = p;
            }
            if (best < 0) {
                // Dead end for this graph: fall back to the best full triple keeping the anchor.
                out.labels = detail::best_prior_triple(g, priors, scene,
                                                       std::pair{static_cast<Level>(order[0]), raw.labels[order[0]]});
                return out;
            }
            out.labels[order[i]] = best;
        }
        fixed[order[i]] = true;
    }
    if (!g.compatible(out.labels))
        out.labels = detail::best_prior_triple(g, priors, scene,
                                               std::pair{static_cast<Level>(order[0]), raw.labels[order[0]]});
    return out;
}

// ---------------------------------------------------------------------------
// Temporal smoothing over a per-track history of revised labels.

using LabelHistory = std::array<std::deque<int>, kLevelCount>;

// Majority over the last `window` entries; ties go to the most recent label.
inline int windowed_majority(const std::deque<int>& h) {
    std::map<int, int> counts;
    for (int v : h) ++counts[v];
    int best = h.back(), best_count = 0;
    for (auto it = h.rbegin(); it != h.rend(); ++it) {
        int c = counts[*it];
        if (c > best_count) best = *it, best_count = c;
    }
    return best;
}

inline ActionPrediction smooth(LabelHistory& history, const ActionPrediction& revised, int window) {
    if (window < 1) throw ConfigError("post.window must be >= 1");
    ActionPrediction out = revised;
    for (int k = 0; k < kLevelCount; ++k) {
        auto& h = history[k];
        h.push_back(revised.labels[k]);
        while (static_cast<int>(h.size()) > window) h.pop_front();
        out.labels[k] = windowed_majority(h);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Visual-phrase baseline: one label per compatible combination seen in the data.

class PhraseVocabulary {
public:
    static PhraseVocabulary icvl() {
        PhraseVocabulary v;
        const DescriptorGraph g = DescriptorGraph::icvl();
        auto add = [&](const char* name, const char* p, const char* l, const char* ge) {
            v.names_.push_back(name);
            v.triples_.push_back({g.require(Level::posture, p), g.require(Level::locomotion, l), g.require(Level::gesture, ge)});
        };
        add("sitting with nothing", "sitting", "stationary", "nothing");
        add("standing with nothing", "standing", "stationary", "nothing");
        add("walking with nothing", "standing", "walking", "nothing");
        add("running with nothing", "standing", "running", "nothing");
        add("sitting with texting", "sitting", "stationary", "texting");
        add("standing with texting", "standing", "stationary", "texting");
        add("walking with texting", "standing", "walking", "texting");
        add("sitting with smoking", "sitting", "stationary", "smoking");
        add("standing with smoking", "standing", "stationary", "smoking");
        add("walking with smoking", "standing", "walking", "smoking");
        return v;
    }

    int size() const { return static_cast<int>(names_.size()); }
    const std::string& name(int phrase) const { return names_.at(phrase); }
    const LabelTriple& decode(int phrase) const { return triples_.at(phrase); }

    bool contains(const LabelTriple& t) const { return std::find(triples_.begin(), triples_.end(), t) != triples_.end(); }

    int encode(const LabelTriple& t) const {
        for (int i = 0; i < size(); ++i)
            if (triples_[i] == t) return i;
        throw DataError("label triple is not one of the visual phrases");
    }

    std::optional<int> find(std::string_view name) const {
        for (int i = 0; i < size(); ++i)
            if (names_[i] == name) return i;
        return std::nullopt;
    }

private:
    std::vector<std::string> names_;
    std::vector<LabelTriple> triples_;
};

// Phrase posterior -> decoded labels with per-level marginal posteriors.
inline ActionPrediction phrase_prediction(const std::vector<double>& phrase_post, const PhraseVocabulary& vocab,
                                          const DescriptorGraph& g, int track_id = -1) {
    if (static_cast<int>(phrase_post.size()) != vocab.size()) throw DataError("phrase posterior has the wrong length");
    ActionPrediction p;
    p.track_id = track_id;
    for (Level l : kLevels) p.posterior[index_of(l)].assign(g.size(l), 0.0);
    for (int i = 0; i < vocab.size(); ++i)
        for (int k = 0; k < kLevelCount; ++k) p.posterior[k][vocab.decode(i)[k]] += phrase_post[i];
    const int best = argmax_first(phrase_post);
    p.labels = vocab.decode(best);
    p.low_confidence = top_two_tie(phrase_post);
    return p;
}

// ---------------------------------------------------------------------------
// Video-level majority voting.

// Modal label per level; a tie goes to the label that reached the tied count first.
inline LabelTriple video_majority_label(std::span<const LabelTriple> frames) {
    if (frames.empty()) throw DataError("video_majority_label: no frames");
    LabelTriple out{};
    for (int k = 0; k < kLevelCount; ++k) {
        std::map<int, int> counts;
        for (const auto& f : frames) ++counts[f[k]];
        int top = 0;
        for (auto [label, c] : counts) top = std::max(top, c);
        std::map<int, int> running;
        for (const auto& f : frames)
            if (++running[f[k]] == top && counts[f[k]] == top) {
                out[k] = f[k];
                break;
            }
    }
    return out;
}

// Correct iff locomotion and gesture agree; posture is ignored.
inline bool video_correct(const LabelTriple& predicted, const LabelTriple& truth) {
    return predicted[index_of(Level::locomotion)] == truth[index_of(Level::locomotion)] &&
           predicted[index_of(Level::gesture)] == truth[index_of(Level::gesture)];
}

}  // namespace subact
