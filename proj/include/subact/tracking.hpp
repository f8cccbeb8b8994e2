#pragma once

// Tracking by detection: constant-velocity Kalman tracks over (cx, cy, w, h),
// greedy IoU association, and the add / update / delete track life cycle.

#include <algorithm>
#include <array>
#include <deque>
#include <optional>
#include <span>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "config.hpp"
#include "detection.hpp"
#include "error.hpp"
#include "imaging.hpp"
#include "vocabulary.hpp"

namespace subact {

struct TrackerParams {
    int n_skip = 15;
    double iou_gate = 0.3;
    double q_pos = 1.0;   // process sigma on cx, cy, w, h (px)
    double q_vel = 0.5;   // process sigma on vx, vy (px/frame)
    double r = 2.0;       // measurement sigma (px)
    double init_vel = 5.0;  // prior sigma on the velocity of a new track

    void validate() const {
        if (n_skip < 0) throw ConfigError("track.n_skip must be >= 0");
        if (!(iou_gate >= 0 && iou_gate <= 1)) throw ConfigError("track.iou_gate must be in [0, 1]");
        if (!(q_pos > 0 && q_vel > 0 && r > 0 && init_vel > 0)) throw ConfigError("Kalman noise levels must be positive");
    }

    static TrackerParams from_config(const Config& cfg) {
        TrackerParams p;
        p.n_skip = static_cast<int>(cfg.get_int("track.n_skip", p.n_skip));
        p.iou_gate = cfg.get_double("track.iou_gate", p.iou_gate);
        p.q_pos = cfg.get_double("track.q_pos", p.q_pos);
        p.q_vel = cfg.get_double("track.q_vel", p.q_vel);
        p.r = cfg.get_double("track.r", p.r);
        p.validate();
        return p;
    }
};

struct Track {
    using State = Eigen::Matrix<double, 6, 1>;
    using Cov = Eigen::Matrix<double, 6, 6>;

    int id = 0;
    State x = State::Zero();  // cx, cy, w, h, vx, vy
    Cov P = Cov::Identity();
    int frames_since_detection = 0;
    std::int64_t age = 0;
    // Box reported for the current frame: the filtered estimate, or the oracle box verbatim.
    BoundingBox reported;
    // Revised per-level labels, most recent last, for temporal smoothing.
    std::array<std::deque<int>, kLevelCount> history;

    BoundingBox box() const { return BoundingBox::from_center(x(0), x(1), x(2), x(3)); }

    static Track from_box(int id, const BoundingBox& b, const TrackerParams& p) {
        Track t;
        t.id = id;
        t.x << b.cx(), b.cy(), b.w, b.h, 0, 0;
        t.reported = b;
        t.P.setZero();
        t.P.diagonal() << p.r * p.r, p.r * p.r, p.r * p.r, p.r * p.r, p.init_vel * p.init_vel, p.init_vel * p.init_vel;
        return t;
    }
};

namespace kalman {

inline Eigen::Matrix<double, 6, 6> transition() {
    Eigen::Matrix<double, 6, 6> F = Eigen::Matrix<double, 6, 6>::Identity();
    F(0, 4) = 1;
    F(1, 5) = 1;
    return F;
}

inline Eigen::Matrix<double, 6, 6> process_noise(const TrackerParams& p) {
    Eigen::Matrix<double, 6, 1> d;
    d << p.q_pos, p.q_pos, p.q_pos, p.q_pos, p.q_vel, p.q_vel;
    return d.cwiseProduct(d).asDiagonal();
}

}  // namespace kalman

// Advances the track one frame and returns the predicted box.
inline BoundingBox kalman_predict(Track& t, const TrackerParams& p = {}) {
    static const Eigen::Matrix<double, 6, 6> F = kalman::transition();
    t.x = F * t.x;
    t.P = F * t.P * F.transpose() + kalman::process_noise(p);
    t.x(2) = std::max(t.x(2), 1.0);
    t.x(3) = std::max(t.x(3), 1.0);
    return t.box();
}

inline void kalman_update(Track& t, const BoundingBox& z_box, const TrackerParams& p = {}) {
    Eigen::Matrix<double, 4, 6> H = Eigen::Matrix<double, 4, 6>::Zero();
    H.leftCols<4>().setIdentity();
    Eigen::Vector4d z(z_box.cx(), z_box.cy(), z_box.w, z_box.h);
    Eigen::Matrix4d S = H * t.P * H.transpose() + Eigen::Matrix4d::Identity() * (p.r * p.r);
    Eigen::Matrix<double, 6, 4> K = t.P * H.transpose() * S.inverse();
    t.x += K * (z - H * t.x);
    Eigen::Matrix<double, 6, 6> I_KH = Eigen::Matrix<double, 6, 6>::Identity() - K * H;
    // Joseph form keeps P symmetric positive definite.
    t.P = I_KH * t.P * I_KH.transpose() + K * (p.r * p.r) * K.transpose();
    t.x(2) = std::max(t.x(2), 1.0);
    t.x(3) = std::max(t.x(3), 1.0);
}

struct Association {
    std::vector<std::pair<int, int>> matches;  // (track index, detection index)
    std::vector<int> unmatched_tracks;
    std::vector<int> unmatched_detections;
};

// Greedy on descending IoU; pairs below the gate never match.
inline Association associate(std::span<const BoundingBox> tracks, std::span<const BoundingBox> detections,
                             double iou_gate = 0.3) {
    std::vector<std::tuple<double, int, int>> pairs;
    for (int i = 0; i < static_cast<int>(tracks.size()); ++i)
        for (int j = 0; j < static_cast<int>(detections.size()); ++j) {
            double v = iou(tracks[i], detections[j]);
            if (v >= iou_gate && v > 0) pairs.emplace_back(v, i, j);
        }
    std::stable_sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return std::get<0>(a) > std::get<0>(b); });
    std::vector<char> track_used(tracks.size(), 0), det_used(detections.size(), 0);
    Association out;
    for (auto [v, i, j] : pairs) {
        if (track_used[i] || det_used[j]) continue;
        track_used[i] = det_used[j] = 1;
        out.matches.emplace_back(i, j);
    }
    for (int i = 0; i < static_cast<int>(tracks.size()); ++i)
        if (!track_used[i]) out.unmatched_tracks.push_back(i);
    for (int j = 0; j < static_cast<int>(detections.size()); ++j)
        if (!det_used[j]) out.unmatched_detections.push_back(j);
    return out;
}

class TrackSet {
public:
    explicit TrackSet(TrackerParams params = {}) : params_(params) { params_.validate(); }

    const std::vector<Track>& tracks() const { return tracks_; }
    std::vector<Track>& tracks() { return tracks_; }
    int next_id() const { return next_id_; }
    const TrackerParams& params() const { return params_; }

    Track* find(int id) {
        for (auto& t : tracks_)
            if (t.id == id) return &t;
        return nullptr;
    }

    // Predict, associate, update matched, coast unmatched, spawn, delete stale.
    void step(std::span<const Detection> detections) {
        std::vector<BoundingBox> predicted, boxes;
        for (auto& t : tracks_) predicted.push_back(kalman_predict(t, params_));
        for (const auto& d : detections) boxes.push_back(d.box);
        Association a = associate(predicted, boxes, params_.iou_gate);
        for (auto [i, j] : a.matches) {
            kalman_update(tracks_[i], boxes[j], params_);
            tracks_[i].frames_since_detection = 0;
            tracks_[i].reported = tracks_[i].box();
        }
        for (int i : a.unmatched_tracks) {
            ++tracks_[i].frames_since_detection;
            tracks_[i].reported = predicted[i];
        }
        for (int j : a.unmatched_detections) tracks_.push_back(Track::from_box(next_id_++, boxes[j], params_));
        finish_step();
    }

    // Oracle boxes carry their own identities and are taken verbatim.
    void step_oracle(std::span<const Detection> detections) {
        for (auto& t : tracks_) ++t.frames_since_detection;
        for (const auto& d : detections) {
            if (d.track_id < 0) throw DataError("oracle detection without a track id");
            Track* t = find(d.track_id);
            if (!t) {
                tracks_.push_back(Track::from_box(d.track_id, d.box, params_));
                t = &tracks_.back();
                next_id_ = std::max(next_id_, d.track_id + 1);
            }
            t->x << d.box.cx(), d.box.cy(), d.box.w, d.box.h, 0, 0;
            t->frames_since_detection = 0;
            t->reported = d.box;
        }
        finish_step();
    }

private:
    void finish_step() {
        std::erase_if(tracks_, [&](const Track& t) { return t.frames_since_detection > params_.n_skip; });
        for (auto& t : tracks_) ++t.age;
    }

    TrackerParams params_;
    std::vector<Track> tracks_;
    int next_id_ = 0;
};

inline void track_step(TrackSet& set, std::span<const Detection> detections) { set.step(detections); }

}  // namespace subact
