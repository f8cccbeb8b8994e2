#pragma once

// Detection metrics (frame-AP, video-AP, mAP), confusion matrices and the
// per-stage timing report.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "imaging.hpp"

namespace subact {

struct ScoredDetection {
    std::int64_t frame = 0;
    BoundingBox box;
    std::string cls;
    double confidence = 0;
};

struct GroundTruthBox {
    std::int64_t frame = 0;
    BoundingBox box;
    std::string cls;
};

struct ClassAp {
    std::string cls;
    double ap = 0;
    int positives = 0;   // ground-truth instances
    int detections = 0;
};

struct ApReport {
    std::vector<ClassAp> classes;   // classes with ground truth, sorted by name
    std::vector<std::string> skipped;  // detected classes without ground truth
    double map = 0;
};

// All-points AP from ranked true/false positive flags: the sum, over true
// positives in rank order, of the precision envelope at that rank, / n_gt.
inline double average_precision(const std::vector<char>& tp, int n_gt) {
    if (n_gt <= 0) return 0.0;
    std::vector<double> prec(tp.size());
    int hits = 0;
    for (std::size_t k = 0; k < tp.size(); ++k) {
        hits += tp[k] != 0;
        prec[k] = static_cast<double>(hits) / static_cast<double>(k + 1);
    }
    for (std::size_t k = tp.size(); k-- > 1;) prec[k - 1] = std::max(prec[k - 1], prec[k]);
    double sum = 0;
    for (std::size_t k = 0; k < tp.size(); ++k)
        if (tp[k]) sum += prec[k];
    return sum / n_gt;
}

namespace detail {

inline std::vector<std::string> class_union(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::string> out(a);
    out.insert(out.end(), b.begin(), b.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

template <class T>
std::vector<std::size_t> rank_by_confidence(const std::vector<T>& items, const std::vector<std::size_t>& idx) {
    std::vector<std::size_t> order = idx;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return items[a].confidence > items[b].confidence; });
    return order;
}

inline ApReport finish_report(std::vector<ClassAp> classes, std::vector<std::string> skipped) {
    ApReport r;
    r.classes = std::move(classes);
    r.skipped = std::move(skipped);
    if (!r.classes.empty()) {
        double s = 0;
        for (const auto& c : r.classes) s += c.ap;
        r.map = s / static_cast<double>(r.classes.size());
    }
    return r;
}

}  // namespace detail

// Per class: detections in descending confidence (input order on ties) each
// take the best-overlapping unmatched ground-truth box of the same frame with
// IoU > sigma.
inline ApReport frame_ap(std::span<const ScoredDetection> dets, std::span<const GroundTruthBox> gt, double sigma = 0.5) {
    std::vector<ScoredDetection> d(dets.begin(), dets.end());
    std::vector<std::string> det_classes, gt_classes;
    for (const auto& x : d) det_classes.push_back(x.cls);
    for (const auto& g : gt) gt_classes.push_back(g.cls);
    std::vector<ClassAp> out;
    std::vector<std::string> skipped;
    for (const auto& cls : detail::class_union(det_classes, gt_classes)) {
        std::map<std::int64_t, std::vector<std::size_t>> gt_by_frame;
        int n_gt = 0;
        for (std::size_t i = 0; i < gt.size(); ++i)
            if (gt[i].cls == cls) gt_by_frame[gt[i].frame].push_back(i), ++n_gt;
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < d.size(); ++i)
            if (d[i].cls == cls) idx.push_back(i);
        if (n_gt == 0) {
            skipped.push_back(cls);
            continue;
        }
        std::vector<char> used(gt.size(), 0), tp;
        for (std::size_t i : detail::rank_by_confidence(d, idx)) {
            int best = -1;
            double best_iou = sigma;
            if (auto it = gt_by_frame.find(d[i].frame); it != gt_by_frame.end())
                for (std::size_t g : it->second) {
                    if (used[g]) continue;
                    double v = iou(d[i].box, gt[g].box);
                    if (v > best_iou) best = static_cast<int>(g), best_iou = v;
                }
            if (best >= 0) used[best] = 1;
            tp.push_back(best >= 0);
        }
        out.push_back({cls, average_precision(tp, n_gt), n_gt, static_cast<int>(idx.size())});
    }
    return detail::finish_report(std::move(out), std::move(skipped));
}

// A labelled sequence of per-frame boxes: a predicted track or a ground-truth tube.
struct Tube {
    int track_id = -1;
    std::string cls;
    std::map<std::int64_t, BoundingBox> boxes;
    double confidence = 0;  // predicted tracks: mean frame confidence

    std::int64_t first() const { return boxes.begin()->first; }
    std::int64_t last() const { return boxes.rbegin()->first; }
};

// Frames where both are present with IoU > sigma, over the frames in the union
// of the two [first, last] spans.
inline double tube_overlap(const Tube& track, const Tube& tube, double sigma = 0.5) {
    if (track.boxes.empty() || tube.boxes.empty()) return 0.0;
    long good = 0;
    for (const auto& [f, b] : track.boxes)
        if (auto it = tube.boxes.find(f); it != tube.boxes.end() && iou(b, it->second) > sigma) ++good;
    const std::int64_t a0 = track.first(), a1 = track.last(), b0 = tube.first(), b1 = tube.last();
    const std::int64_t inter = std::max<std::int64_t>(0, std::min(a1, b1) - std::max(a0, b0) + 1);
    const std::int64_t uni = (a1 - a0 + 1) + (b1 - b0 + 1) - inter;
    return static_cast<double>(good) / static_cast<double>(uni);
}

// Per class: tracks in descending confidence each take the unmatched tube of
// that class with the highest overlap, if it exceeds tau.
inline ApReport video_ap(std::span<const Tube> tracks, std::span<const Tube> tubes, double sigma = 0.5,
                         double tau = 0.5) {
    std::vector<Tube> t(tracks.begin(), tracks.end());
    std::vector<std::string> track_classes, tube_classes;
    for (const auto& x : t) track_classes.push_back(x.cls);
    for (const auto& x : tubes) tube_classes.push_back(x.cls);
    std::vector<ClassAp> out;
    std::vector<std::string> skipped;
    for (const auto& cls : detail::class_union(track_classes, tube_classes)) {
        std::vector<std::size_t> gt_idx, idx;
        for (std::size_t i = 0; i < tubes.size(); ++i)
            if (tubes[i].cls == cls) gt_idx.push_back(i);
        for (std::size_t i = 0; i < t.size(); ++i)
            if (t[i].cls == cls) idx.push_back(i);
        if (gt_idx.empty()) {
            skipped.push_back(cls);
            continue;
        }
        std::vector<char> used(tubes.size(), 0), tp;
        for (std::size_t i : detail::rank_by_confidence(t, idx)) {
            int best = -1;
            double best_ov = tau;
            for (std::size_t g : gt_idx) {
                if (used[g]) continue;
                double ov = tube_overlap(t[i], tubes[g], sigma);
                if (ov > best_ov) best = static_cast<int>(g), best_ov = ov;
            }
            if (best >= 0) used[best] = 1;
            tp.push_back(best >= 0);
        }
        out.push_back({cls, average_precision(tp, static_cast<int>(gt_idx.size())), static_cast<int>(gt_idx.size()),
                       static_cast<int>(idx.size())});
    }
    return detail::finish_report(std::move(out), std::move(skipped));
}

// ---------------------------------------------------------------------------

struct ConfusionMatrix {
    int n = 0;
    std::vector<double> cells;        // row = ground truth, column = prediction
    std::vector<char> empty_rows;     // ground-truth classes never seen

    double at(int gt, int pred) const { return cells[static_cast<std::size_t>(gt) * n + pred]; }
};

inline ConfusionMatrix confusion_matrix(std::span<const std::pair<int, int>> gt_pred, int n) {
    if (n < 1) throw DataError("confusion_matrix: need at least one class");
    ConfusionMatrix m;
    m.n = n;
    m.cells.assign(static_cast<std::size_t>(n) * n, 0.0);
    m.empty_rows.assign(n, 0);
    std::vector<long> counts(static_cast<std::size_t>(n) * n, 0);
    for (auto [g, p] : gt_pred) {
        if (g < 0 || g >= n || p < 0 || p >= n) throw DataError("confusion_matrix: label out of range");
        ++counts[static_cast<std::size_t>(g) * n + p];
    }
    for (int g = 0; g < n; ++g) {
        long row = 0;
        for (int p = 0; p < n; ++p) row += counts[static_cast<std::size_t>(g) * n + p];
        if (row == 0) {
            m.empty_rows[g] = 1;
            continue;
        }
        for (int p = 0; p < n; ++p)
            m.cells[static_cast<std::size_t>(g) * n + p] = static_cast<double>(counts[static_cast<std::size_t>(g) * n + p]) / row;
    }
    return m;
}

inline std::string format_confusion_csv(const ConfusionMatrix& m, const std::vector<std::string>& names) {
    std::string out = "truth\\predicted";
    for (const auto& n : names) out += "," + n;
    out += '\n';
    char buf[32];
    for (int g = 0; g < m.n; ++g) {
        out += names.at(g);
        for (int p = 0; p < m.n; ++p) {
            std::snprintf(buf, sizeof buf, ",%.4f", m.at(g, p));
            out += buf;
        }
        out += '\n';
    }
    return out;
}

// class,frame_ap,video_ap with an `mAP` row; a class missing from one report shows as empty.
inline std::string format_ap_csv(const ApReport& frame, const ApReport& video) {
    std::map<std::string, std::pair<std::optional<double>, std::optional<double>>> rows;
    for (const auto& c : frame.classes) rows[c.cls].first = c.ap;
    for (const auto& c : video.classes) rows[c.cls].second = c.ap;
    std::string out = "class,frame_ap,video_ap\n";
    char buf[64];
    auto num = [&](std::optional<double> v) -> std::string {
        if (!v) return "";
        std::snprintf(buf, sizeof buf, "%.6f", *v);
        return buf;
    };
    for (const auto& [cls, v] : rows) out += cls + "," + num(v.first) + "," + num(v.second) + "\n";
    out += "mAP," + num(frame.map) + "," + num(video.map) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Per-stage wall-clock timing, in the reference table's column order.

enum class Stage : int { motion, detector, tracker, bdi, mhi, wai, cnns, post, others, count };

inline constexpr std::array<const char*, static_cast<int>(Stage::count)> kStageNames = {
    "Motion detection", "Detector", "Tracker", "BDI", "MHI", "WAI", "CNNs", "Post-processing", "Others"};

struct TimingReport {
    std::array<double, static_cast<int>(Stage::count)> mean_ms{};
    double overall_ms = 0;
    long frames = 0;

    double stage_sum() const { return std::accumulate(mean_ms.begin(), mean_ms.end(), 0.0); }
};

class StageTimer {
public:
    using Clock = std::chrono::steady_clock;

    void begin_frame() { frame_start_ = last_ = Clock::now(); }

    // Charges the time since the previous mark to `s`.
    void mark(Stage s) {
        auto now = Clock::now();
        totals_[static_cast<int>(s)] += std::chrono::duration<double, std::milli>(now - last_).count();
        last_ = now;
    }

    void end_frame() {
        mark(Stage::others);
        overall_ += std::chrono::duration<double, std::milli>(last_ - frame_start_).count();
        ++frames_;
    }

    long frames() const { return frames_; }

    TimingReport report() const {
        if (frames_ == 0) throw DataError("nothing benchmarked");
        TimingReport r;
        r.frames = frames_;
        for (std::size_t i = 0; i < totals_.size(); ++i) r.mean_ms[i] = totals_[i] / frames_;
        r.overall_ms = overall_ / frames_;
        return r;
    }

private:
    Clock::time_point frame_start_, last_;
    std::array<double, static_cast<int>(Stage::count)> totals_{};
    double overall_ = 0;
    long frames_ = 0;
};

inline std::string format_timing(const TimingReport& r) {
    std::string head, vals;
    char buf[64];
    for (std::size_t i = 0; i < kStageNames.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%-17s", kStageNames[i]);
        head += buf;
        std::snprintf(buf, sizeof buf, "%-17.2f", r.mean_ms[i]);
        vals += buf;
    }
    std::snprintf(buf, sizeof buf, "%s\n", "Overall");
    head += buf;
    std::snprintf(buf, sizeof buf, "%.2f\n", r.overall_ms);
    vals += buf;
    std::snprintf(buf, sizeof buf, "(mean ms per frame over %ld frames)\n", r.frames);
    return head + vals + buf;
}

}  // namespace subact
