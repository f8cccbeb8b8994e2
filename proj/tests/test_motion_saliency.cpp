#include <gtest/gtest.h>

#include <random>

#include "subact/motion_saliency.hpp"

using namespace subact;

namespace {

Frame textured(int w, int h, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> v(40, 140);
    Frame f(w, h);
    for (auto& p : f.data) p = static_cast<std::uint8_t>(v(rng));
    return f;
}

int foreground_count(const Frame& mask) {
    return static_cast<int>(std::count(mask.data.begin(), mask.data.end(), std::uint8_t{255}));
}

void expect_state_invariants(const GmmState& s) {
    for (int p = 0; p < s.width() * s.height(); ++p) {
        double sum = 0;
        double prev_key = std::numeric_limits<double>::infinity();
        for (int c = 0; c < s.k(); ++c) {
            sum += s.weight(p, c);
            ASSERT_GT(s.variance(p, c), 0.0f);
            if (s.weight(p, c) > 0) {
                double key = s.weight(p, c) / std::sqrt(s.variance(p, c));
                ASSERT_LE(key, prev_key + 1e-12) << "pixel " << p << " component " << c;
                prev_key = key;
            }
        }
        ASSERT_NEAR(sum, 1.0, 1e-6) << "pixel " << p;
    }
}

}  // namespace

TEST(Gmm, FirstFrameInitializesToBackground) {
    GmmState s;
    Frame f = textured(16, 8, 1);
    Frame mask = gmm_step(s, f);
    EXPECT_EQ(foreground_count(mask), 0);
    EXPECT_EQ(background_image(s).data, f.data);
}

TEST(Gmm, ConstantFrameBackground) {
    GmmState s;
    for (int t = 0; t < 5; ++t) gmm_step(s, Frame(8, 8, 100));
    for (auto v : background_image(s).data) EXPECT_EQ(v, 100);
}

TEST(Gmm, StationaryAfterWarmup) {
    GmmState s;
    Frame f = textured(32, 24, 2);
    Frame mask;
    for (int t = 0; t < 50; ++t) mask = gmm_step(s, f);
    EXPECT_EQ(foreground_count(mask), 0);
}

TEST(Gmm, StaticSceneConvergesToEmpty) {
    GmmState s;
    Frame f(40, 30, 77);
    Frame mask;
    for (int t = 0; t < 200; ++t) mask = gmm_step(s, f);
    EXPECT_EQ(foreground_count(mask), 0);
}

TEST(Gmm, DominantComponentWins) {
    GmmState s;
    for (int t = 0; t < 300; ++t) gmm_step(s, Frame(6, 6, t % 10 == 9 ? 200 : 100));
    for (auto v : background_image(s).data) EXPECT_EQ(v, 100);
}

TEST(Gmm, BlockJumpMatchesCurrentFootprint) {
    const int W = 120, H = 80, B = 20;
    Frame bg = textured(W, H, 3);
    GmmState s;
    for (int t = 0; t < 60; ++t) gmm_step(s, bg);
    const int xs[] = {5, 70, 30, 90, 10, 50};
    const int ys[] = {5, 40, 50, 10, 55, 20};
    Frame prev = bg;
    for (int step = 0; step < 6; ++step) {
        Frame f = bg;
        for (int y = ys[step]; y < ys[step] + B; ++y)
            for (int x = xs[step]; x < xs[step] + B; ++x) f.at(x, y) = 230;
        Frame mask = gmm_step(s, f);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                bool in_block = x >= xs[step] && x < xs[step] + B && y >= ys[step] && y < ys[step] + B;
                bool fg = mask.at(x, y) == 255;
                bool changed = f.at(x, y) != prev.at(x, y);
                ASSERT_EQ(fg, in_block) << "step " << step << " at " << x << "," << y;
                if (fg) ASSERT_TRUE(changed);
            }
        prev = f;
    }
}

TEST(Gmm, InvariantsUnderRandomInput) {
    GmmState s;
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> v(0, 255), coin(0, 3);
    Frame base = textured(12, 10, 5);
    for (int t = 0; t < 120; ++t) {
        Frame f = base;
        for (auto& p : f.data)
            if (coin(rng) == 0) p = static_cast<std::uint8_t>(v(rng));
        gmm_step(s, f);
        expect_state_invariants(s);
    }
}

TEST(Gmm, DimensionMismatch) {
    GmmState s;
    gmm_step(s, Frame(8, 8, 0));
    EXPECT_THROW(gmm_step(s, Frame(8, 9, 0)), DataError);
    EXPECT_THROW(background_image(GmmState{}), DataError);
}

TEST(Gmm, ConfigKeys) {
    Config cfg;
    cfg.set("gmm.k", "3");
    cfg.set("gmm.lr", "0.01");
    auto p = GmmParams::from_config(cfg);
    EXPECT_EQ(p.k, 3);
    EXPECT_FLOAT_EQ(p.learning_rate, 0.01f);
    cfg.set("gmm.lr", "1.5");
    EXPECT_THROW(GmmParams::from_config(cfg), ConfigError);
}

TEST(MiniMap, GridExtentWithFencepost) {
    auto m = MiniMotionMap::filled(640, 360, {64, 128}, {8, 8}, false);
    EXPECT_EQ(m.cols, 73);
    EXPECT_EQ(m.rows, 30);
    auto m2 = MiniMotionMap::filled(640, 320, {64, 128}, {8, 8}, false);
    EXPECT_EQ(m2.cols, 73);
    EXPECT_EQ(m2.rows, 25);
}

TEST(MiniMap, AllZeroMask) {
    Plane<std::uint8_t> mask(640, 360, 0);
    auto m = mini_motion_map(mask);
    EXPECT_EQ(m.count(), 0);
    EXPECT_EQ(static_cast<int>(m.cells.size()), 73 * 30);
}

TEST(MiniMap, SinglePixelAtOrigin) {
    Plane<std::uint8_t> mask(64, 48, 0);
    mask.at(0, 0) = 255;
    auto m = mini_motion_map(mask, {16, 16}, {4, 4}, 1);
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) EXPECT_EQ(m.at(c, r), c == 0 && r == 0);
}

TEST(MiniMap, WindowLargerThanFrame) {
    Plane<std::uint8_t> mask(32, 32, 0);
    EXPECT_THROW(mini_motion_map(mask, {64, 16}, {8, 8}), DataError);
}

TEST(MiniMap, MatchesBruteForceScan) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 300; ++trial) {
        std::uniform_int_distribution<int> dim(8, 64);
        int W = dim(rng), H = dim(rng);
        std::uniform_int_distribution<int> ww(1, W), wh(1, H), st(1, 6), thr(1, 20);
        WindowSize win{ww(rng), wh(rng)};
        Stride stride{st(rng), st(rng)};
        int min_fg = thr(rng);
        std::bernoulli_distribution on(std::uniform_real_distribution<double>(0.0, 0.2)(rng));
        Plane<std::uint8_t> mask(W, H, 0);
        for (auto& v : mask.data) v = on(rng) ? 255 : 0;

        auto m = mini_motion_map(mask, win, stride, min_fg);
        int cols = 0, rows = 0;
        for (int x0 = 0; x0 + win.w <= W; x0 += stride.x) ++cols;
        for (int y0 = 0; y0 + win.h <= H; y0 += stride.y) ++rows;
        ASSERT_EQ(m.cols, cols);
        ASSERT_EQ(m.rows, rows);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                int n = 0;
                for (int y = r * stride.y; y < r * stride.y + win.h; ++y)
                    for (int x = c * stride.x; x < c * stride.x + win.w; ++x) n += mask.at(x, y) != 0;
                ASSERT_EQ(m.at(c, r), n >= min_fg) << "trial " << trial;
            }
    }
}
