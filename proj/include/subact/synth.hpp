#pragma once

// Synthetic scene generator: grey sprites on a textured plate with additive
// noise. Posture sets the sprite shape, speed sets the locomotion label and a
// blinking interior patch encodes the gesture. Annotations follow the script.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "error.hpp"
#include "imaging.hpp"
#include "vocabulary.hpp"

namespace subact {

struct ActorScript {
    int track_id = 0;
    std::string posture = "standing";
    std::string gesture = "nothing";
    double x = 0, y = 0;    // top-left of the box at start_frame
    double vx = 0, vy = 0;  // px per frame
    int start_frame = 0;
    int end_frame = -1;     // exclusive; -1 runs to the end
    int intensity = 210;
    bool mirrored = false;  // sprite faces left
};

struct SynthScenario {
    int width = 640;
    int height = 320;
    int frames = 72;
    int fps = 15;
    double noise_sigma = 5.0;
    std::string scene = "synth";
    std::vector<ActorScript> actors;
};

struct SynthSequence {
    std::string name;
    FrameSequence frames;
    std::vector<AnnotationRecord> annotations;
};

namespace synth {

inline constexpr int kWarmupFrames = 8;
inline constexpr int kPatchIntensity = 40;  // lit phase
inline constexpr int kPatchDark = 0;        // unlit phase; both stay below the plate
inline constexpr double kStationaryMax = 0.5;  // px/frame
inline constexpr double kWalkingMax = 3.0;

inline std::string locomotion_for_speed(double speed) {
    if (speed <= kStationaryMax) return "stationary";
    if (speed <= kWalkingMax) return "walking";
    return "running";
}

inline std::pair<int, int> sprite_size(const std::string& posture) {
    if (posture == "sitting") return {40, 64};
    if (posture == "standing") return {32, 96};
    throw ConfigError("synth: unknown posture '" + posture + "'");
}

// Full blink cycle in frames; 0 means no patch.
inline int blink_period(const std::string& gesture) {
    if (gesture == "nothing") return 0;
    if (gesture == "texting") return 2;
    if (gesture == "others") return 4;
    if (gesture == "smoking") return 8;
    throw ConfigError("synth: unknown gesture '" + gesture + "'");
}

inline Plane<std::uint8_t> sprite_mask(const std::string& posture) {
    auto [w, h] = sprite_size(posture);
    Plane<std::uint8_t> m(w, h, 0);
    auto rect = [&](int x0, int y0, int x1, int y1) {
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) m.at(x, y) = 1;
    };
    auto head = [&](double cx, double cy) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double dx = (x + 0.5 - cx) / 7.0, dy = (y + 0.5 - cy) / 9.0;
                if (dx * dx + dy * dy <= 1.0) m.at(x, y) = 1;
            }
    };
    if (posture == "standing") {
        head(16, 10);
        rect(7, 18, 25, 58);   // torso
        rect(2, 20, 7, 54);    // arms
        rect(25, 20, 30, 54);
        rect(8, 58, 15, 96);   // legs
        rect(17, 58, 24, 96);
    } else {
        head(12, 10);
        rect(5, 18, 21, 44);   // torso
        rect(18, 26, 30, 32);  // forearm
        rect(5, 36, 36, 46);   // thighs
        rect(28, 46, 36, 64);  // shins
        rect(28, 60, 40, 64);  // feet
    }
    return m;
}

// Top-left of the gesture patch inside an unmirrored sprite.
struct PatchRect {
    int x = 0, y = 0, w = 0, h = 0;
    bool contains(int u, int v) const { return u >= x && u < x + w && v >= y && v < y + h; }
};

// Region of an unmirrored sprite that blinks for a gesture. Regions are large
// so the gesture carries a signal comparable to the posture silhouette.
inline PatchRect patch_rect(const std::string& posture, const std::string& gesture) {
    const bool sit = posture == "sitting";
    if (gesture == "texting") return sit ? PatchRect{0, 18, 32, 14} : PatchRect{0, 20, 32, 20};  // arms and chest
    if (gesture == "smoking") return sit ? PatchRect{2, 0, 22, 18} : PatchRect{4, 0, 24, 18};    // head
    return sit ? PatchRect{0, 32, 40, 14} : PatchRect{0, 40, 32, 20};                            // lap or hips
}

inline bool patch_on(int period, int t) { return period > 0 && (t / (period / 2)) % 2 == 0; }

// Smooth value noise on a 16 px lattice plus fine 4 px blocks, spanning [50, 130].
inline Plane<std::uint8_t> background_plate(int w, int h, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const int L = 16, gw = w / L + 2, gh = h / L + 2;
    std::vector<double> lattice(static_cast<std::size_t>(gw) * gh);
    for (auto& v : lattice) v = u(rng);
    const int B = 4, bw = w / B + 1, bh = h / B + 1;
    std::vector<double> blocks(static_cast<std::size_t>(bw) * bh);
    for (auto& v : blocks) v = u(rng);
    Plane<std::uint8_t> out(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double fx = static_cast<double>(x) / L, fy = static_cast<double>(y) / L;
            const int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
            const double ax = fx - ix, ay = fy - iy;
            auto at = [&](int i, int j) { return lattice[static_cast<std::size_t>(j) * gw + i]; };
            const double smooth = (at(ix, iy) * (1 - ax) + at(ix + 1, iy) * ax) * (1 - ay) +
                                  (at(ix, iy + 1) * (1 - ax) + at(ix + 1, iy + 1) * ax) * ay;
            const double fine = blocks[static_cast<std::size_t>(y / B) * bw + x / B];
            out.at(x, y) = static_cast<std::uint8_t>(std::lround(std::clamp(90.0 + 28.0 * smooth + 12.0 * fine, 50.0, 130.0)));
        }
    return out;
}

inline void validate(const SynthScenario& s, const DescriptorGraph& g) {
    if (s.width < 64 || s.height < 128) throw ConfigError("synth: frame must be at least 64x128");
    if (s.frames < 1) throw ConfigError("synth: need at least one frame");
    if (s.noise_sigma < 0) throw ConfigError("synth: noise sigma must be >= 0");
    for (const auto& a : s.actors) {
        const std::string who = "synth: actor " + std::to_string(a.track_id);
        if (!g.find(Level::posture, a.posture)) throw ConfigError(who + " has unknown posture " + a.posture);
        if (!g.find(Level::gesture, a.gesture)) throw ConfigError(who + " has unknown gesture " + a.gesture);
        blink_period(a.gesture);
        const int end = a.end_frame < 0 ? s.frames : a.end_frame;
        if (a.start_frame < 0 || end > s.frames || end <= a.start_frame) throw ConfigError(who + " has an empty or out-of-range span");
        auto [w, h] = sprite_size(a.posture);
        for (int f = a.start_frame; f < end; ++f) {
            const double x = a.x + a.vx * (f - a.start_frame), y = a.y + a.vy * (f - a.start_frame);
            if (x < 0 || y < 0 || x + w > s.width || y + h > s.height)
                throw ConfigError(who + " leaves the frame at frame " + std::to_string(f));
        }
    }
}

}  // namespace synth

inline SynthSequence synth_generate(const SynthScenario& s, std::uint64_t seed,
                                    const DescriptorGraph& graph = DescriptorGraph::icvl()) {
    synth::validate(s, graph);
    const Plane<std::uint8_t> plate = synth::background_plate(s.width, s.height, seed);
    std::mt19937_64 noise_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> noise(0.0, s.noise_sigma > 0 ? s.noise_sigma : 1.0);

    std::vector<Plane<std::uint8_t>> masks;
    for (const auto& a : s.actors) masks.push_back(synth::sprite_mask(a.posture));

    SynthSequence out;
    std::vector<Frame> frames;
    frames.reserve(s.frames);
    std::vector<double> canvas(plate.size());
    for (int f = 0; f < s.frames; ++f) {
        for (std::size_t i = 0; i < plate.size(); ++i) canvas[i] = plate.data[i];
        for (std::size_t k = 0; k < s.actors.size(); ++k) {
            const auto& a = s.actors[k];
            const int end = a.end_frame < 0 ? s.frames : a.end_frame;
            if (f < a.start_frame || f >= end) continue;
            const int t = f - a.start_frame;
            const BoundingBox box{a.x + a.vx * t, a.y + a.vy * t, static_cast<double>(masks[k].width),
                                  static_cast<double>(masks[k].height)};
            const int ox = static_cast<int>(std::floor(box.x + 0.5)), oy = static_cast<int>(std::floor(box.y + 0.5));
            const int period = synth::blink_period(a.gesture);
            const bool lit = synth::patch_on(period, t);
            const auto patch = synth::patch_rect(a.posture, a.gesture);
            const Plane<std::uint8_t>& m = masks[k];
            for (int v = 0; v < m.height; ++v)
                for (int u = 0; u < m.width; ++u) {
                    const int su = a.mirrored ? m.width - 1 - u : u;
                    const int x = ox + u, y = oy + v;
                    if (x < 0 || y < 0 || x >= s.width || y >= s.height) continue;
                    if (period > 0 && patch.contains(su, v)) {
                        canvas[static_cast<std::size_t>(y) * s.width + x] = lit ? synth::kPatchIntensity : synth::kPatchDark;
                    } else if (m.at(su, v)) {
                        canvas[static_cast<std::size_t>(y) * s.width + x] = a.intensity;
                    }
                }
            AnnotationRecord r;
            r.frame = f;
            r.track_id = a.track_id;
            r.box = box;
            r.posture = a.posture;
            r.locomotion = synth::locomotion_for_speed(std::hypot(a.vx, a.vy));
            r.gesture = a.gesture;
            out.annotations.push_back(std::move(r));
        }
        Frame fr(s.width, s.height, 0, f);
        for (std::size_t i = 0; i < canvas.size(); ++i) {
            const double v = canvas[i] + (s.noise_sigma > 0 ? noise(noise_rng) : 0.0);
            fr.data[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
        frames.push_back(std::move(fr));
    }
    std::stable_sort(out.annotations.begin(), out.annotations.end(), annotation_order);
    out.frames = FrameSequence(std::move(frames), s.fps, s.scene);
    return out;
}

// One scripted actor per sequence over the grid locomotion x posture x
// gesture-script. Sitting cannot walk or run, so those slots stand; the active
// gesture per slot is the one the graph allows there.
struct GridCell {
    std::string posture, locomotion, gesture;
};

// Two gesture scripts per (locomotion, posture) slot, chosen so every gesture
// covers three cells. Moving slots are always standing.
inline std::vector<GridCell> icvl_grid_cells() {
    static const char* const scripts[3][2][2] = {
        {{"nothing", "texting"}, {"smoking", "others"}},  // stationary: sitting slot, standing slot
        {{"texting", "smoking"}, {"texting", "smoking"}},  // walking
        {{"nothing", "others"}, {"nothing", "others"}},    // running
    };
    const char* const locos[3] = {"stationary", "walking", "running"};
    std::vector<GridCell> cells;
    for (int l = 0; l < 3; ++l)
        for (int p = 0; p < 2; ++p)
            for (int k = 0; k < 2; ++k)
                cells.push_back({l == 0 && p == 0 ? "sitting" : "standing", locos[l], scripts[l][p][k]});
    return cells;
}

inline SynthScenario grid_scenario(const GridCell& cell, std::uint64_t seed, double noise_sigma = 5.0) {
    std::mt19937_64 rng(seed);
    SynthScenario s;
    s.noise_sigma = noise_sigma;
    const double speed = cell.locomotion == "stationary" ? 0.0 : cell.locomotion == "walking" ? 1.5 : 4.5;
    auto [w, h] = synth::sprite_size(cell.posture);
    ActorScript a;
    a.posture = cell.posture;
    a.gesture = cell.gesture;
    a.start_frame = synth::kWarmupFrames;
    a.mirrored = rng() % 2 == 1;
    a.intensity = 195 + static_cast<int>(rng() % 31);
    a.vx = a.mirrored ? -speed : speed;
    const double path = speed * (s.frames - a.start_frame - 1);
    const int margin = 12;
    std::uniform_real_distribution<double> ys(margin, s.height - h - margin);
    std::uniform_real_distribution<double> xs(margin, s.width - w - margin - path);
    a.y = std::floor(ys(rng));
    a.x = std::floor(xs(rng));
    if (a.vx < 0) a.x += path;
    s.actors.push_back(a);
    return s;
}

// The 12-sequence grid rendered with `seed`; train and test use different seeds.
inline std::vector<SynthSequence> synth_grid_dataset(std::uint64_t seed, double noise_sigma = 5.0) {
    std::vector<SynthSequence> out;
    const auto cells = icvl_grid_cells();
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const std::uint64_t s = seed * 1000003ULL + i;
        SynthSequence seq = synth_generate(grid_scenario(cells[i], s, noise_sigma), s);
        char name[96];
        std::snprintf(name, sizeof name, "seq%02zu_%s_%s_%s", i, cells[i].posture.c_str(), cells[i].locomotion.c_str(),
                      cells[i].gesture.c_str());
        seq.name = name;
        out.push_back(std::move(seq));
    }
    return out;
}

inline constexpr const char* kAnnotationFileName = "annotations.txt";

inline void write_synth_sequence(const SynthSequence& s, const std::filesystem::path& dir) {
    write_sequence(s.frames, dir);
    write_annotations(s.annotations, dir / kAnnotationFileName);
}

}  // namespace subact
