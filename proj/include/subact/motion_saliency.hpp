#pragma once

// Per-pixel Gaussian-mixture background model and the mini motion map that
// gates the sliding-window detector.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "config.hpp"
#include "error.hpp"
#include "imaging.hpp"

namespace subact {

struct GmmParams {
    int k = 4;
    float learning_rate = 0.005f;
    float background_ratio = 0.7f;
    float match_sigma = 2.5f;
    float initial_variance = 15.0f * 15.0f;
    float min_variance = 4.0f;

    static GmmParams from_config(const Config& cfg) {
        GmmParams p;
        p.k = static_cast<int>(cfg.get_int("gmm.k", p.k));
        p.learning_rate = static_cast<float>(cfg.get_double("gmm.lr", p.learning_rate));
        p.background_ratio = static_cast<float>(cfg.get_double("gmm.bg_ratio", p.background_ratio));
        p.match_sigma = static_cast<float>(cfg.get_double("gmm.match_sigma", p.match_sigma));
        if (p.k < 1 || p.k > 16) throw ConfigError("gmm.k must be in [1,16]");
        if (!(p.learning_rate > 0 && p.learning_rate < 1)) throw ConfigError("gmm.lr must be in (0,1)");
        if (!(p.background_ratio > 0 && p.background_ratio <= 1)) throw ConfigError("gmm.bg_ratio must be in (0,1]");
        if (!(p.match_sigma > 0)) throw ConfigError("gmm.match_sigma must be positive");
        return p;
    }
};

// Components per pixel are kept sorted by weight/sigma, descending.
class GmmState {
public:
    explicit GmmState(GmmParams params = {}) : params_(params) {}

    const GmmParams& params() const { return params_; }
    bool initialized() const { return width_ > 0; }
    int width() const { return width_; }
    int height() const { return height_; }
    int k() const { return params_.k; }

    float weight(int pixel, int c) const { return weight_[slot(pixel, c)]; }
    float mean(int pixel, int c) const { return mean_[slot(pixel, c)]; }
    float variance(int pixel, int c) const { return var_[slot(pixel, c)]; }

    // Seeds the top component of every pixel from `frame` with weight 1.
    void initialize(const Frame& frame) {
        width_ = frame.width;
        height_ = frame.height;
        std::size_t n = frame.size() * params_.k;
        weight_.assign(n, 0.0f);
        mean_.assign(n, 0.0f);
        var_.assign(n, params_.initial_variance);
        for (std::size_t p = 0; p < frame.size(); ++p) {
            weight_[p * params_.k] = 1.0f;
            mean_[p * params_.k] = frame.data[p];
        }
    }

    // Returns the foreground mask (255 = foreground) and updates the model.
    Frame step(const Frame& frame) {
        if (!initialized()) {
            initialize(frame);
            Frame mask(frame.width, frame.height, 0, frame.index);
            return mask;
        }
        if (!frame.same_shape(width_, height_)) throw DataError("gmm_step: frame dimensions do not match model");
        Frame mask(width_, height_, 0, frame.index);
        const int K = params_.k;
        const float lr = params_.learning_rate;
        const float keep = 1.0f - lr;
        const float t2 = params_.match_sigma * params_.match_sigma;
        const float bg_ratio = params_.background_ratio;
        for (std::size_t p = 0; p < frame.size(); ++p) {
            float* w = &weight_[p * K];
            float* mu = &mean_[p * K];
            float* var = &var_[p * K];
            const float x = frame.data[p];

            int matched = -1;
            bool background = false;
            float cumulative = 0.0f;
            bool in_background = true;
            for (int c = 0; c < K; ++c) {
                if (w[c] <= 0.0f) break;
                float d = x - mu[c];
                if (d * d < t2 * var[c]) {
                    matched = c;
                    background = in_background;
                    break;
                }
                cumulative += w[c];
                if (cumulative > bg_ratio) in_background = false;
            }
            mask.data[p] = background ? 0 : 255;

            if (matched >= 0) {
                float total = 0.0f;
                for (int c = 0; c < K; ++c) {
                    w[c] *= keep;
                    if (c == matched) w[c] += lr;
                    total += w[c];
                }
                float rho = std::min(1.0f, lr / w[matched]);
                float d = x - mu[matched];
                mu[matched] += rho * d;
                var[matched] = std::max(params_.min_variance, var[matched] + rho * (d * d - var[matched]));
                for (int c = 0; c < K; ++c) w[c] /= total;
                // Only the matched component's rank can change.
                int c = matched;
                for (; c > 0 && rank_key(w[c], var[c]) > rank_key(w[c - 1], var[c - 1]); --c)
                    swap_components(w, mu, var, c, c - 1);
                for (; c + 1 < K && rank_key(w[c + 1], var[c + 1]) > rank_key(w[c], var[c]); ++c)
                    swap_components(w, mu, var, c, c + 1);
            } else {
                int last = K - 1;
                for (int c = 0; c < K; ++c)
                    if (w[c] <= 0.0f) {
                        last = c;
                        break;
                    }
                float total = 0.0f;
                for (int c = 0; c < K; ++c) {
                    if (c == last) continue;
                    w[c] *= keep;
                    total += w[c];
                }
                w[last] = lr;
                mu[last] = x;
                var[last] = params_.initial_variance;
                total += lr;
                for (int c = 0; c < K; ++c) w[c] /= total;
                for (int c = last; c > 0 && rank_key(w[c], var[c]) > rank_key(w[c - 1], var[c - 1]); --c)
                    swap_components(w, mu, var, c, c - 1);
            }
        }
        return mask;
    }

    // f(x, y, t0): the highest-weight background component's mean.
    Frame background() const {
        if (!initialized()) throw DataError("background_image: model not initialized");
        Frame bg(width_, height_);
        const int K = params_.k;
        for (std::size_t p = 0; p < bg.size(); ++p) {
            const float* w = &weight_[p * K];
            const float* mu = &mean_[p * K];
            int best = 0;
            float cumulative = 0.0f;
            for (int c = 0; c < K && w[c] > 0.0f; ++c) {
                if (w[c] > w[best]) best = c;
                cumulative += w[c];
                if (cumulative > params_.background_ratio) break;
            }
            bg.data[p] = static_cast<std::uint8_t>(std::clamp(std::lround(mu[best]), 0L, 255L));
        }
        return bg;
    }

private:
    std::size_t slot(int pixel, int c) const { return static_cast<std::size_t>(pixel) * params_.k + c; }

    static float rank_key(float w, float var) { return w > 0.0f ? w / std::sqrt(var) : -1.0f; }

    static void swap_components(float* w, float* mu, float* var, int a, int b) {
        std::swap(w[a], w[b]);
        std::swap(mu[a], mu[b]);
        std::swap(var[a], var[b]);
    }

    GmmParams params_;
    int width_ = 0;
    int height_ = 0;
    std::vector<float> weight_;
    std::vector<float> mean_;
    std::vector<float> var_;
};

inline Frame gmm_step(GmmState& state, const Frame& frame) { return state.step(frame); }

inline Frame background_image(const GmmState& state) { return state.background(); }

struct WindowSize {
    int w = 64;
    int h = 128;
};

struct Stride {
    int x = 8;
    int y = 8;
};

struct MiniMotionMap {
    int cols = 0;
    int rows = 0;
    WindowSize window;
    Stride stride;
    std::vector<std::uint8_t> cells;

    bool at(int col, int row) const { return cells[static_cast<std::size_t>(row) * cols + col] != 0; }
    void set(int col, int row, bool v) { cells[static_cast<std::size_t>(row) * cols + col] = v ? 1 : 0; }
    int count() const { return static_cast<int>(std::count(cells.begin(), cells.end(), std::uint8_t{1})); }

    static MiniMotionMap filled(int frame_w, int frame_h, WindowSize window, Stride stride, bool value) {
        MiniMotionMap m;
        m.window = window;
        m.stride = stride;
        m.cols = grid_extent(frame_w, window.w, stride.x);
        m.rows = grid_extent(frame_h, window.h, stride.y);
        m.cells.assign(static_cast<std::size_t>(m.cols) * m.rows, value ? 1 : 0);
        return m;
    }

    // Number of window positions along one axis, fencepost included.
    static int grid_extent(int frame, int window, int stride) {
        if (window > frame) throw DataError("detection window larger than frame");
        if (stride <= 0) throw DataError("stride must be positive");
        return (frame - window) / stride + 1;
    }
};

inline MiniMotionMap mini_motion_map(const Plane<std::uint8_t>& mask, WindowSize window = {}, Stride stride = {},
                                     int min_fg_pixels = 16) {
    MiniMotionMap m = MiniMotionMap::filled(mask.width, mask.height, window, stride, false);
    // Summed-area table of foreground pixels.
    const int W = mask.width, H = mask.height;
    std::vector<int> sat(static_cast<std::size_t>(W + 1) * (H + 1), 0);
    for (int y = 0; y < H; ++y) {
        int run = 0;
        const auto* row = mask.row(y);
        for (int x = 0; x < W; ++x) {
            run += row[x] != 0;
            sat[static_cast<std::size_t>(y + 1) * (W + 1) + x + 1] = sat[static_cast<std::size_t>(y) * (W + 1) + x + 1] + run;
        }
    }
    auto box_sum = [&](int x0, int y0, int x1, int y1) {
        auto idx = [&](int x, int y) { return static_cast<std::size_t>(y) * (W + 1) + x; };
        return sat[idx(x1, y1)] - sat[idx(x0, y1)] - sat[idx(x1, y0)] + sat[idx(x0, y0)];
    };
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) {
            int x0 = c * stride.x, y0 = r * stride.y;
            m.set(c, r, box_sum(x0, y0, x0 + window.w, y0 + window.h) >= min_fg_pixels);
        }
    return m;
}

}  // namespace subact
