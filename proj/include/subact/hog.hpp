#pragma once

// Histogram of oriented gradients over a dense cell grid. Window descriptors
// are read out of the grid, so a standalone 64x128 patch and the same window
// inside a larger frame differ only in the border gradients.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "error.hpp"
#include "imaging.hpp"

namespace subact {

namespace hog {

inline constexpr int kCell = 8;
inline constexpr int kBins = 9;
inline constexpr int kBlockCells = 2;
inline constexpr int kBlockLen = kBlockCells * kBlockCells * kBins;  // 36
inline constexpr int kWindowW = 64;
inline constexpr int kWindowH = 128;
inline constexpr int kWindowBlocksX = kWindowW / kCell - 1;  // 7
inline constexpr int kWindowBlocksY = kWindowH / kCell - 1;  // 15
inline constexpr int kDescriptorLen = kWindowBlocksX * kWindowBlocksY * kBlockLen;
static_assert(kDescriptorLen == 3780);

inline constexpr float kClip = 0.2f;
inline constexpr float kEpsSq = 1e-6f;

// Orientation vote for an integer gradient: the magnitude split linearly
// between the two nearest of the bin centres 0, 20, ..., 160 degrees.
struct Vote {
    float w0 = 0, w1 = 0;
    std::uint8_t bin = 0;
};

class VoteTable {
public:
    static const VoteTable& instance() {
        static const VoteTable table;
        return table;
    }
    const Vote& operator()(int dx, int dy) const {
        return votes_[static_cast<std::size_t>(dy + 255) * kSide + static_cast<std::size_t>(dx + 255)];
    }

private:
    static constexpr std::size_t kSide = 511;
    VoteTable() : votes_(kSide * kSide) {
        for (int dy = -255; dy <= 255; ++dy)
            for (int dx = -255; dx <= 255; ++dx) {
                Vote& v = votes_[static_cast<std::size_t>(dy + 255) * kSide + static_cast<std::size_t>(dx + 255)];
                if (dx == 0 && dy == 0) continue;
                double mag = std::sqrt(double(dx) * dx + double(dy) * dy);
                double deg = std::atan2(double(dy), double(dx)) * 180.0 / std::numbers::pi;
                if (deg < 0) deg += 180.0;
                if (deg >= 180.0) deg -= 180.0;
                double pos = deg / (180.0 / kBins);
                int b = static_cast<int>(pos);
                double frac = pos - b;
                v.bin = static_cast<std::uint8_t>(b % kBins);
                v.w0 = static_cast<float>(mag * (1 - frac));
                v.w1 = static_cast<float>(mag * frac);
            }
    }
    std::vector<Vote> votes_;
};

}  // namespace hog

// Per-cell histograms and L2-Hys normalized blocks (stride one cell) over a
// rectangle of cells whose top-left cell is (origin_x, origin_y) in the image.
struct HogGrid {
    int origin_x = 0, origin_y = 0;
    int cells_x = 0, cells_y = 0;
    int blocks_x = 0, blocks_y = 0;
    std::vector<float> cells;   // cells_y x cells_x x bins
    std::vector<float> blocks;  // blocks_y x blocks_x x 36

    // Indices are relative to the origin.
    const float* cell(int cx, int cy) const {
        return cells.data() + (static_cast<std::size_t>(cy) * cells_x + cx) * hog::kBins;
    }
    const float* block(int bx, int by) const {
        return blocks.data() + (static_cast<std::size_t>(by) * blocks_x + bx) * hog::kBlockLen;
    }

    bool window_fits(int cx, int cy) const {
        return cx >= 0 && cy >= 0 && cx + hog::kWindowBlocksX <= blocks_x && cy + hog::kWindowBlocksY <= blocks_y;
    }
};

inline void l2hys_normalize(std::span<float> v) {
    auto normalize = [&] {
        float ss = 0;
        for (float x : v) ss += x * x;
        const float inv = 1.0f / std::sqrt(ss + hog::kEpsSq);
        for (float& x : v) x *= inv;
    };
    normalize();
    for (float& x : v) x = std::min(x, hog::kClip);
    normalize();
}

// Centred [-1 0 1] gradients with replicated image borders. Only the cells in
// [cx0, cx1) x [cy0, cy1) are computed; their values do not depend on the range.
inline HogGrid compute_hog_grid(const Plane<std::uint8_t>& img, int cx0, int cy0, int cx1, int cy1) {
    const int W = img.width, H = img.height;
    cx0 = std::max(cx0, 0), cy0 = std::max(cy0, 0);
    cx1 = std::min(cx1, W / hog::kCell), cy1 = std::min(cy1, H / hog::kCell);
    HogGrid g;
    g.origin_x = cx0;
    g.origin_y = cy0;
    g.cells_x = cx1 - cx0;
    g.cells_y = cy1 - cy0;
    if (g.cells_x < hog::kBlockCells || g.cells_y < hog::kBlockCells) throw DataError("HOG: region smaller than one block");
    g.blocks_x = g.cells_x - 1;
    g.blocks_y = g.cells_y - 1;
    g.cells.assign(static_cast<std::size_t>(g.cells_x) * g.cells_y * hog::kBins, 0.0f);
    const auto& table = hog::VoteTable::instance();
    const int x_begin = cx0 * hog::kCell, x_end = cx1 * hog::kCell;
    for (int y = cy0 * hog::kCell; y < cy1 * hog::kCell; ++y) {
        const std::uint8_t* row = img.row(y);
        const std::uint8_t* up = img.row(y > 0 ? y - 1 : 0);
        const std::uint8_t* down = img.row(y + 1 < H ? y + 1 : H - 1);
        float* cell_row = g.cells.data() + static_cast<std::size_t>(y / hog::kCell - cy0) * g.cells_x * hog::kBins;
        for (int x = x_begin; x < x_end; ++x) {
            const int dx = int(row[x + 1 < W ? x + 1 : W - 1]) - int(row[x > 0 ? x - 1 : 0]);
            const int dy = int(down[x]) - int(up[x]);
            if ((dx | dy) == 0) continue;
            const hog::Vote& v = table(dx, dy);
            float* hist = cell_row + static_cast<std::size_t>(x / hog::kCell - cx0) * hog::kBins;
            hist[v.bin] += v.w0;
            hist[v.bin + 1 == hog::kBins ? 0 : v.bin + 1] += v.w1;
        }
    }
    g.blocks.resize(static_cast<std::size_t>(g.blocks_x) * g.blocks_y * hog::kBlockLen);
    for (int by = 0; by < g.blocks_y; ++by)
        for (int bx = 0; bx < g.blocks_x; ++bx) {
            float* out = g.blocks.data() + (static_cast<std::size_t>(by) * g.blocks_x + bx) * hog::kBlockLen;
            for (int j = 0; j < hog::kBlockCells; ++j)
                for (int i = 0; i < hog::kBlockCells; ++i) {
                    const float* c = g.cell(bx + i, by + j);
                    std::copy(c, c + hog::kBins, out + (j * hog::kBlockCells + i) * hog::kBins);
                }
            l2hys_normalize({out, static_cast<std::size_t>(hog::kBlockLen)});
        }
    return g;
}

inline HogGrid compute_hog_grid(const Plane<std::uint8_t>& img) {
    return compute_hog_grid(img, 0, 0, img.width / hog::kCell, img.height / hog::kCell);
}

using HogDescriptor = std::vector<float>;

// Blocks in row-major order, 36 values each.
inline HogDescriptor window_descriptor(const HogGrid& g, int cx, int cy) {
    if (!g.window_fits(cx, cy)) throw DataError("HOG: window outside the grid");
    HogDescriptor d;
    d.reserve(hog::kDescriptorLen);
    for (int by = 0; by < hog::kWindowBlocksY; ++by)
        for (int bx = 0; bx < hog::kWindowBlocksX; ++bx) {
            const float* b = g.block(cx + bx, cy + by);
            d.insert(d.end(), b, b + hog::kBlockLen);
        }
    return d;
}

// w . descriptor(cx, cy) without materializing the descriptor.
inline float window_dot(const HogGrid& g, int cx, int cy, std::span<const float> weights) {
    using Row = Eigen::Map<const Eigen::Matrix<float, hog::kWindowBlocksX * hog::kBlockLen, 1>>;
    float acc = 0;
    const float* w = weights.data();
    for (int by = 0; by < hog::kWindowBlocksY; ++by) {
        // One block row of the window is contiguous in the grid.
        acc += Row(w).dot(Row(g.block(cx, cy + by)));
        w += hog::kWindowBlocksX * hog::kBlockLen;
    }
    return acc;
}

inline HogDescriptor hog_descriptor(const Plane<std::uint8_t>& patch) {
    if (!patch.same_shape(hog::kWindowW, hog::kWindowH))
        throw DataError("hog_descriptor: patch must be 64x128, got " + std::to_string(patch.width) + "x" +
                        std::to_string(patch.height));
    return window_descriptor(compute_hog_grid(patch), 0, 0);
}

// Bilinear resample to (w, h) with pixel-centre alignment.
inline Plane<std::uint8_t> resize_bilinear(const Plane<std::uint8_t>& src, int w, int h) {
    if (w <= 0 || h <= 0) throw DataError("resize: empty target");
    Plane<std::uint8_t> out(w, h);
    const double sx = static_cast<double>(src.width) / w, sy = static_cast<double>(src.height) / h;
    std::vector<int> x0(w), x1(w);
    std::vector<float> ax(w);
    for (int x = 0; x < w; ++x) {
        double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
        x0[x] = static_cast<int>(fx);
        x1[x] = std::min(x0[x] + 1, src.width - 1);
        ax[x] = static_cast<float>(fx - x0[x]);
    }
    for (int y = 0; y < h; ++y) {
        double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
        int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, src.height - 1);
        float ay = static_cast<float>(fy - y0);
        const std::uint8_t* r0 = src.row(y0);
        const std::uint8_t* r1 = src.row(y1);
        std::uint8_t* o = out.row(y);
        for (int x = 0; x < w; ++x) {
            float top = r0[x0[x]] + (r0[x1[x]] - r0[x0[x]]) * ax[x];
            float bot = r1[x0[x]] + (r1[x1[x]] - r1[x0[x]]) * ax[x];
            o[x] = static_cast<std::uint8_t>(std::lround(top + (bot - top) * ay));
        }
    }
    return out;
}

}  // namespace subact
