#pragma once

// Appearance-based temporal features: binary difference image (BDI), motion
// history image (MHI) and their weighted average (WAI), kept as full-frame maps
// and cropped per region of interest into 28x28 network inputs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <optional>

#include "config.hpp"
#include "error.hpp"
#include "imaging.hpp"

namespace subact {

struct FeatureParams {
    double xi_thr = 30.0;
    double tau_max = 255.0;
    double tau_min = 0.0;
    int n = 25;
    double w1 = 0.6;
    double w2 = 0.4;
    bool abs_diff = true;
    int pad = 10;

    double delta_tau() const { return (tau_max - tau_min) / n; }

    void validate() const {
        if (n < 1) throw ConfigError("feat.n must be >= 1");
        if (!(tau_max > tau_min)) throw ConfigError("feat.tau_max must exceed feat.tau_min");
        if (w1 < 0 || w2 < 0 || std::abs(w1 + w2 - 1.0) > 1e-12) throw ConfigError("WAI weights must be non-negative and sum to 1");
        if (pad < 0) throw ConfigError("feat.pad must be >= 0");
    }

    static FeatureParams from_config(const Config& cfg) {
        FeatureParams p;
        p.xi_thr = cfg.get_double("feat.xi_thr", p.xi_thr);
        p.tau_max = cfg.get_double("feat.tau_max", p.tau_max);
        p.tau_min = cfg.get_double("feat.tau_min", p.tau_min);
        p.n = static_cast<int>(cfg.get_int("feat.n", p.n));
        p.w1 = cfg.get_double("feat.w1", p.w1);
        p.w2 = cfg.has("feat.w2") ? cfg.get_double("feat.w2", p.w2) : 1.0 - p.w1;
        p.abs_diff = cfg.get_bool("feat.abs_diff", p.abs_diff);
        p.pad = static_cast<int>(cfg.get_int("feat.pad", p.pad));
        p.validate();
        return p;
    }
};

namespace detail {

inline bool exceeds(int current, int reference, double thr, bool abs_diff) {
    int d = current - reference;
    return (abs_diff ? std::abs(d) : d) > thr;
}

}  // namespace detail

inline Map compute_bdi(const Frame& frame, const Frame& background, double xi_thr, bool abs_diff = true) {
    if (!frame.same_shape(background)) throw DataError("compute_bdi: frame and background dimensions differ");
    Map bdi(frame.width, frame.height);
    for (std::size_t i = 0; i < frame.size(); ++i)
        bdi.data[i] = detail::exceeds(frame.data[i], background.data[i], xi_thr, abs_diff) ? 255.0 : 0.0;
    return bdi;
}

inline Map compute_wai(const Map& bdi, const Map& mhi, double w1, double w2) {
    if (w1 < 0 || w2 < 0 || std::abs(w1 + w2 - 1.0) > 1e-12) throw DataError("compute_wai: weights must be convex");
    if (!bdi.same_shape(mhi)) throw DataError("compute_wai: map dimensions differ");
    Map wai(bdi.width, bdi.height);
    for (std::size_t i = 0; i < bdi.size(); ++i) {
        const double b = bdi.data[i], h = mhi.data[i];
        // The exact convex combination lies in [min, max]; clamping only absorbs rounding.
        wai.data[i] = std::clamp(w1 * b + w2 * h, std::min(b, h), std::max(b, h));
    }
    return wai;
}

class TemporalFeatureState {
public:
    explicit TemporalFeatureState(FeatureParams params = {}) : params_(params) { params_.validate(); }

    const FeatureParams& params() const { return params_; }
    bool has_history() const { return prev_.has_value(); }
    const Map& bdi() const { return bdi_; }
    const Map& mhi() const { return mhi_; }
    const Map& wai() const { return wai_; }

    // Incremental replacement-and-decay step; the first frame only seeds the history.
    const Map& update_mhi(const Frame& frame) {
        if (!prev_) {
            mhi_ = Map(frame.width, frame.height, params_.tau_min);
            prev_ = frame;
            return mhi_;
        }
        if (!frame.same_shape(*prev_)) throw DataError("update_mhi: frame dimensions differ from history");
        const double dt = params_.delta_tau();
        // After n silent frames the value lands on tau_min exactly.
        const double snap = params_.tau_min + 1e-9 * (params_.tau_max - params_.tau_min);
        for (std::size_t i = 0; i < frame.size(); ++i) {
            if (detail::exceeds(frame.data[i], prev_->data[i], params_.xi_thr, params_.abs_diff)) {
                mhi_.data[i] = params_.tau_max;
            } else {
                double next = mhi_.data[i] - dt;
                mhi_.data[i] = next < snap ? params_.tau_min : next;
            }
        }
        prev_->data = frame.data;
        prev_->index = frame.index;
        return mhi_;
    }

    const Map& update_bdi(const Frame& frame, const Frame& background) {
        bdi_ = compute_bdi(frame, background, params_.xi_thr, params_.abs_diff);
        return bdi_;
    }

    const Map& update_wai() {
        wai_ = compute_wai(bdi_, mhi_, params_.w1, params_.w2);
        return wai_;
    }

    void update(const Frame& frame, const Frame& background) {
        update_bdi(frame, background);
        update_mhi(frame);
        update_wai();
    }

private:
    FeatureParams params_;
    std::optional<Frame> prev_;
    Map bdi_;
    Map mhi_;
    Map wai_;
};

inline const Map& update_mhi(TemporalFeatureState& state, const Frame& frame) { return state.update_mhi(frame); }

inline constexpr int kPatchSize = 28;

struct FeaturePatch {
    std::array<float, kPatchSize * kPatchSize> values{};

    float& at(int x, int y) { return values[static_cast<std::size_t>(y) * kPatchSize + x]; }
    float at(int x, int y) const { return values[static_cast<std::size_t>(y) * kPatchSize + x]; }

    FeaturePatch flipped() const {
        FeaturePatch out;
        for (int y = 0; y < kPatchSize; ++y)
            for (int x = 0; x < kPatchSize; ++x) out.at(x, y) = at(kPatchSize - 1 - x, y);
        return out;
    }

    bool operator==(const FeaturePatch&) const = default;
};

struct PixelRect {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
};

// Box grown by `pad` on every side, snapped outward to pixels and clamped to the map.
inline PixelRect padded_crop_rect(const BoundingBox& box, int pad, int map_w, int map_h) {
    PixelRect r;
    r.x0 = std::max(0, static_cast<int>(std::floor(box.x - pad)));
    r.y0 = std::max(0, static_cast<int>(std::floor(box.y - pad)));
    r.x1 = std::min(map_w, static_cast<int>(std::ceil(box.right() + pad)));
    r.y1 = std::min(map_h, static_cast<int>(std::ceil(box.bottom() + pad)));
    if (r.x1 <= r.x0 || r.y1 <= r.y0) throw DataError("crop_patch: box does not intersect the map");
    return r;
}

inline FeaturePatch crop_patch(const Map& map, const BoundingBox& box, int pad = 10) {
    if (!box.valid()) throw DataError("crop_patch: invalid box");
    PixelRect r = padded_crop_rect(box, pad, map.width, map.height);
    const double sx = static_cast<double>(r.width()) / kPatchSize;
    const double sy = static_cast<double>(r.height()) / kPatchSize;
    std::array<double, kPatchSize * kPatchSize> tmp{};
    double sum = 0.0;
    for (int j = 0; j < kPatchSize; ++j) {
        double fy = std::clamp(r.y0 + (j + 0.5) * sy - 0.5, static_cast<double>(r.y0), static_cast<double>(r.y1 - 1));
        int y0 = static_cast<int>(fy);
        int y1 = std::min(y0 + 1, r.y1 - 1);
        double ay = fy - y0;
        for (int i = 0; i < kPatchSize; ++i) {
            double fx = std::clamp(r.x0 + (i + 0.5) * sx - 0.5, static_cast<double>(r.x0), static_cast<double>(r.x1 - 1));
            int x0 = static_cast<int>(fx);
            int x1 = std::min(x0 + 1, r.x1 - 1);
            double ax = fx - x0;
            double top = map.at(x0, y0) * (1 - ax) + map.at(x1, y0) * ax;
            double bot = map.at(x0, y1) * (1 - ax) + map.at(x1, y1) * ax;
            double v = top * (1 - ay) + bot * ay;
            tmp[static_cast<std::size_t>(j) * kPatchSize + i] = v;
            sum += v;
        }
    }
    const double mean = sum / tmp.size();
    FeaturePatch patch;
    for (std::size_t i = 0; i < tmp.size(); ++i) patch.values[i] = static_cast<float>(tmp[i] - mean);
    return patch;
}

// 8-bit view of a feature map for debug dumps.
inline Plane<std::uint8_t> quantize(const Map& map) {
    Plane<std::uint8_t> out(map.width, map.height);
    for (std::size_t i = 0; i < map.size(); ++i)
        out.data[i] = static_cast<std::uint8_t>(std::clamp(std::lround(map.data[i]), 0L, 255L));
    return out;
}

}  // namespace subact
