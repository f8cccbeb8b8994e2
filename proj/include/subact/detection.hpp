#pragma once

// Person detection: a linear SVM over HOG windows, restricted to the windows
// the mini motion map marks as moving, on a small image pyramid, followed by
// greedy non-maximum suppression. Oracle mode replays annotated boxes.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "config.hpp"
#include "error.hpp"
#include "hog.hpp"
#include "imaging.hpp"
#include "motion_saliency.hpp"
#include "svm.hpp"

namespace subact {

struct Detection {
    BoundingBox box;
    double score = 0;
    int track_id = -1;  // set only by oracle_detect

    bool operator==(const Detection&) const = default;
};

struct DetectorParams {
    double threshold = 0.0;
    double nms_iou = 0.45;
    int scales = 3;
    double scale_factor = 1.2;
    // The person occupies the window minus this margin on each side.
    int inset_x = 16;
    int inset_y = 16;

    BoundingBox person_box(double wx, double wy, double sx, double sy) const {
        return {(wx + inset_x) * sx, (wy + inset_y) * sy, (hog::kWindowW - 2.0 * inset_x) * sx,
                (hog::kWindowH - 2.0 * inset_y) * sy};
    }

    void validate() const {
        if (!(nms_iou > 0 && nms_iou <= 1)) throw ConfigError("det.nms_iou must be in (0, 1]");
        if (scales < 1) throw ConfigError("det.scales must be >= 1");
        if (!(scale_factor > 1)) throw ConfigError("det.scale_factor must exceed 1");
        if (inset_x < 0 || inset_y < 0 || 2 * inset_x >= hog::kWindowW || 2 * inset_y >= hog::kWindowH)
            throw ConfigError("detector inset leaves no person box");
    }

    static DetectorParams from_config(const Config& cfg) {
        DetectorParams p;
        p.threshold = cfg.get_double("det.threshold", p.threshold);
        p.nms_iou = cfg.get_double("det.nms_iou", p.nms_iou);
        p.scales = static_cast<int>(cfg.get_int("det.scales", p.scales));
        p.scale_factor = cfg.get_double("det.scale_factor", p.scale_factor);
        p.validate();
        return p;
    }
};

// Greedy: highest score first, drop anything overlapping a kept box by more than `iou_thr`.
inline std::vector<Detection> nms(std::vector<Detection> dets, double iou_thr) {
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<Detection> kept;
    for (const auto& d : dets) {
        bool suppressed = false;
        for (const auto& k : kept)
            if (iou(d.box, k.box) > iou_thr) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

namespace detail {

inline void check_minimap(const MiniMotionMap& mm, int frame_w, int frame_h) {
    if (mm.window.w != hog::kWindowW || mm.window.h != hog::kWindowH)
        throw ConfigError("detector needs a 64x128 mini-map window");
    if (mm.stride.x % hog::kCell != 0 || mm.stride.y % hog::kCell != 0)
        throw ConfigError("detector stride must be a multiple of the 8-pixel HOG cell");
    if (mm.cols != MiniMotionMap::grid_extent(frame_w, mm.window.w, mm.stride.x) ||
        mm.rows != MiniMotionMap::grid_extent(frame_h, mm.window.h, mm.stride.y))
        throw DataError("mini motion map geometry does not match the frame");
}

}  // namespace detail

// Every gated window scoring above the threshold, before suppression.
inline std::vector<Detection> detect_candidates(const Plane<std::uint8_t>& frame, const MiniMotionMap& mm,
                                                const SvmModel& model, const DetectorParams& params = {}) {
    detail::check_minimap(mm, frame.width, frame.height);
    if (model.weights.size() != static_cast<std::size_t>(hog::kDescriptorLen))
        throw DataError("detector model has " + std::to_string(model.weights.size()) + " weights, expected 3780");
    std::vector<Detection> out;
    if (mm.count() == 0) return out;

    const int sx = mm.stride.x, sy = mm.stride.y;
    Plane<std::uint8_t> scaled;
    for (int level = 0; level < params.scales; ++level) {
        const double s = std::pow(params.scale_factor, level);
        const Plane<std::uint8_t>* img = &frame;
        if (level > 0) {
            int w = static_cast<int>(std::lround(frame.width / s)), h = static_cast<int>(std::lround(frame.height / s));
            if (w < hog::kWindowW || h < hog::kWindowH) break;
            scaled = resize_bilinear(frame, w, h);
            img = &scaled;
        }
        const double fx = static_cast<double>(frame.width) / img->width;
        const double fy = static_cast<double>(frame.height) / img->height;
        const int cols = (img->width - hog::kWindowW) / sx + 1;
        const int rows = (img->height - hog::kWindowH) / sy + 1;

        // Gate each window by the level-0 cell nearest its centre.
        std::vector<std::pair<int, int>> windows;
        int c_lo = cols, c_hi = -1, r_lo = rows, r_hi = -1;
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                bool gated;
                if (level == 0) {
                    gated = mm.at(c, r);
                } else {
                    double cx0 = (c * sx + hog::kWindowW / 2.0) * fx, cy0 = (r * sy + hog::kWindowH / 2.0) * fy;
                    int mc = std::clamp(static_cast<int>(std::lround((cx0 - hog::kWindowW / 2.0) / sx)), 0, mm.cols - 1);
                    int mr = std::clamp(static_cast<int>(std::lround((cy0 - hog::kWindowH / 2.0) / sy)), 0, mm.rows - 1);
                    gated = mm.at(mc, mr);
                }
                if (!gated) continue;
                windows.emplace_back(c, r);
                c_lo = std::min(c_lo, c), c_hi = std::max(c_hi, c);
                r_lo = std::min(r_lo, r), r_hi = std::max(r_hi, r);
            }
        if (windows.empty()) continue;

        const int step_x = sx / hog::kCell, step_y = sy / hog::kCell;
        HogGrid grid = compute_hog_grid(*img, c_lo * step_x, r_lo * step_y,
                                        c_hi * step_x + hog::kWindowW / hog::kCell,
                                        r_hi * step_y + hog::kWindowH / hog::kCell);
        for (auto [c, r] : windows) {
            float score = window_dot(grid, c * step_x - grid.origin_x, r * step_y - grid.origin_y, model.weights) + model.bias;
            if (score > params.threshold)
                out.push_back({params.person_box(c * sx, r * sy, fx, fy), static_cast<double>(score)});
        }
    }
    return out;
}

inline std::vector<Detection> detect(const Plane<std::uint8_t>& frame, const MiniMotionMap& mm, const SvmModel& model,
                                     const DetectorParams& params = {}) {
    return nms(detect_candidates(frame, mm, model, params), params.nms_iou);
}

// Annotated boxes of one frame, score 1, carrying the annotated track ids.
inline std::vector<Detection> oracle_detect(std::span<const AnnotationRecord> annotations, std::int64_t frame_index) {
    std::vector<Detection> out;
    for (const auto& a : annotations)
        if (a.frame == frame_index) out.push_back({a.box, 1.0, a.track_id});
    return out;
}

// Top-left HOG cell of the level-0 window whose person box is centred on `box`.
inline std::pair<int, int> window_cell_for(const BoundingBox& box) {
    int cx = static_cast<int>(std::lround((box.cx() - hog::kWindowW / 2.0) / hog::kCell));
    int cy = static_cast<int>(std::lround((box.cy() - hog::kWindowH / 2.0) / hog::kCell));
    return {cx, cy};
}

}  // namespace subact
