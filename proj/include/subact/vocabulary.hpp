#pragma once

// Sub-action vocabularies and the compatibility graph between adjacent levels.

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"

namespace subact {

enum class Level : int { posture = 0, locomotion = 1, gesture = 2 };

inline constexpr int kLevelCount = 3;
inline constexpr std::array<Level, kLevelCount> kLevels = {Level::posture, Level::locomotion, Level::gesture};
inline constexpr std::string_view kUnlabeled = "-";

inline constexpr int index_of(Level level) { return static_cast<int>(level); }

inline std::string_view level_name(Level level) {
    switch (level) {
        case Level::posture: return "posture";
        case Level::locomotion: return "locomotion";
        case Level::gesture: return "gesture";
    }
    return "?";
}

inline std::optional<Level> parse_level(std::string_view name) {
    for (Level l : kLevels)
        if (level_name(l) == name) return l;
    return std::nullopt;
}

// Per-level label indices; a triple is one complete descriptor.
using LabelTriple = std::array<int, kLevelCount>;

class DescriptorGraph {
public:
    DescriptorGraph() = default;

    // All cross-level pairs start compatible.
    DescriptorGraph(std::vector<std::string> posture, std::vector<std::string> locomotion,
                    std::vector<std::string> gesture)
        : labels_{std::move(posture), std::move(locomotion), std::move(gesture)} {
        for (const auto& level : labels_)
            if (level.empty()) throw ConfigError("descriptor level with no labels");
        for (int pair = 0; pair < 2; ++pair)
            compat_[pair].assign(labels_[pair].size() * labels_[pair + 1].size(), 1);
    }

    static DescriptorGraph icvl() {
        DescriptorGraph g({"sitting", "standing"}, {"stationary", "walking", "running"},
                          {"nothing", "texting", "smoking", "others"});
        g.set_compatible(Level::posture, "sitting", "walking", false);
        g.set_compatible(Level::posture, "sitting", "running", false);
        g.set_compatible(Level::locomotion, "running", "texting", false);
        g.set_compatible(Level::locomotion, "running", "smoking", false);
        return g;
    }

    // KTH: one posture, jogging folded into walking, the arm actions at the gesture level.
    static DescriptorGraph kth() {
        DescriptorGraph g({"standing"}, {"stationary", "walking", "running"},
                          {"boxing", "hand-clapping", "hand-waving", "nothing"});
        for (const char* loco : {"walking", "running"})
            for (const char* gesture : {"boxing", "hand-clapping", "hand-waving"})
                g.set_compatible(Level::locomotion, loco, gesture, false);
        return g;
    }

    int size(Level level) const { return static_cast<int>(labels_[index_of(level)].size()); }

    const std::vector<std::string>& labels(Level level) const { return labels_[index_of(level)]; }

    const std::string& label(Level level, int idx) const { return labels_[index_of(level)].at(idx); }

    std::optional<int> find(Level level, std::string_view name) const {
        const auto& v = labels_[index_of(level)];
        for (std::size_t i = 0; i < v.size(); ++i)
            if (v[i] == name) return static_cast<int>(i);
        return std::nullopt;
    }

    int require(Level level, std::string_view name) const {
        if (auto idx = find(level, name)) return *idx;
        throw DataError("unknown " + std::string(level_name(level)) + " label '" + std::string(name) + "'");
    }

    // `upper` is posture (pair posture-locomotion) or locomotion (pair locomotion-gesture).
    bool compatible(Level upper, int a, int b) const {
        int pair = index_of(upper);
        return compat_.at(pair)[static_cast<std::size_t>(a) * labels_[pair + 1].size() + b] != 0;
    }

    void set_compatible(Level upper, int a, int b, bool value) {
        int pair = index_of(upper);
        if (pair > 1) throw ConfigError("edges connect posture-locomotion or locomotion-gesture only");
        compat_[pair][static_cast<std::size_t>(a) * labels_[pair + 1].size() + b] = value ? 1 : 0;
    }

    void set_compatible(Level upper, std::string_view a, std::string_view b, bool value) {
        Level lower = static_cast<Level>(index_of(upper) + 1);
        set_compatible(upper, require(upper, a), require(lower, b), value);
    }

    bool compatible(const LabelTriple& t) const {
        return compatible(Level::posture, t[0], t[1]) && compatible(Level::locomotion, t[1], t[2]);
    }

    // Compatibility of labels at two arbitrary levels; non-adjacent levels are unconstrained.
    bool pair_compatible(Level la, int a, Level lb, int b) const {
        int ia = index_of(la), ib = index_of(lb);
        if (ia > ib) return pair_compatible(lb, b, la, a);
        if (ib - ia != 1) return true;
        return compatible(la, a, b);
    }

    std::vector<LabelTriple> all_triples() const {
        std::vector<LabelTriple> out;
        for (int p = 0; p < size(Level::posture); ++p)
            for (int l = 0; l < size(Level::locomotion); ++l)
                for (int g = 0; g < size(Level::gesture); ++g) out.push_back({p, l, g});
        return out;
    }

    std::vector<LabelTriple> compatible_triples() const {
        std::vector<LabelTriple> out;
        for (const auto& t : all_triples())
            if (compatible(t)) out.push_back(t);
        return out;
    }

    bool operator==(const DescriptorGraph&) const = default;

private:
    std::array<std::vector<std::string>, kLevelCount> labels_;
    std::array<std::vector<char>, 2> compat_;
};

}  // namespace subact
