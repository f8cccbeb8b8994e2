#pragma once

// The light action CNN:
//   I(28) - C(5,4,1) - ReLU - Sm(2,2) - C(7,8,1) - ReLU - Sm(2,2)
//         - FC(256) - D(0.5) - FC(256) - D(0.5) - FC(arity) - softmax
// with batch-averaged cross-entropy gradients and momentum SGD with weight decay.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "temporal_features.hpp"

namespace subact {

template <class T>
struct Tensor {
    std::vector<int> dims;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> d, T fill = T{}) : dims(std::move(d)) {
        std::size_t n = 1;
        for (int v : dims) n *= static_cast<std::size_t>(v);
        data.assign(n, fill);
    }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Tensor& o) const { return dims == o.dims; }
    bool operator==(const Tensor&) const = default;
};

namespace nn {

inline constexpr int kInput = kPatchSize;
inline constexpr int kConv1Kernel = 5, kConv1Filters = 4;
inline constexpr int kConv1Out = kInput - kConv1Kernel + 1;  // 24
inline constexpr int kPool1Out = kConv1Out / 2;               // 12
inline constexpr int kConv2Kernel = 7, kConv2Filters = 8;
inline constexpr int kConv2Out = kPool1Out - kConv2Kernel + 1;  // 6
inline constexpr int kPool2Out = kConv2Out / 2;                  // 3
inline constexpr int kFlat = kConv2Filters * kPool2Out * kPool2Out;  // 72
inline constexpr int kHidden = 256;
inline constexpr double kKeepProbability = 0.5;

enum Param : int { conv1_w, conv1_b, conv2_w, conv2_b, fc1_w, fc1_b, fc2_w, fc2_b, fc3_w, fc3_b, kParamCount };

inline constexpr bool is_bias(int p) { return p % 2 == 1; }

inline const char* param_name(int p) {
    static constexpr const char* names[] = {"conv1.w", "conv1.b", "conv2.w", "conv2.b", "fc1.w",
                                            "fc1.b",   "fc2.w",   "fc2.b",   "fc3.w",   "fc3.b"};
    return names[p];
}

inline std::vector<std::vector<int>> param_shapes(int arity) {
    return {{kConv1Filters, 1, kConv1Kernel, kConv1Kernel},
            {kConv1Filters},
            {kConv2Filters, kConv1Filters, kConv2Kernel, kConv2Kernel},
            {kConv2Filters},
            {kHidden, kFlat},
            {kHidden},
            {kHidden, kHidden},
            {kHidden},
            {arity, kHidden},
            {arity}};
}

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using RowMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using ConstRowMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// Unrolls one [channels][h][w] image into columns first_col .. first_col+oh*ow of `cols`,
// one column per output position, rows ordered (c, ky, kx) like the weights.
template <class T>
void im2col(const T* input, int channels, int h, int w, int k, Mat<T>& cols, Eigen::Index first_col) {
    const int oh = h - k + 1, ow = w - k + 1;
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
            T* dst = cols.col(first_col + oy * ow + ox).data();
            for (int c = 0; c < channels; ++c)
                for (int ky = 0; ky < k; ++ky) {
                    const T* src = input + (static_cast<std::size_t>(c) * h + oy + ky) * w + ox;
                    std::copy_n(src, k, dst + (c * k + ky) * k);
                }
        }
}

template <class T>
void col2im_add(const Mat<T>& cols, Eigen::Index first_col, int channels, int h, int w, int k, T* grad_input) {
    const int oh = h - k + 1, ow = w - k + 1;
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
            const T* src = cols.col(first_col + oy * ow + ox).data();
            for (int c = 0; c < channels; ++c)
                for (int ky = 0; ky < k; ++ky) {
                    T* dst = grad_input + (static_cast<std::size_t>(c) * h + oy + ky) * w + ox;
                    for (int kx = 0; kx < k; ++kx) dst[kx] += src[(c * k + ky) * k + kx];
                }
        }
}

// out = W * cols + b, with W given as [filters][rows] row-major.
template <class T>
void conv_gemm(const Tensor<T>& w, const Tensor<T>& b, const Mat<T>& cols, Mat<T>& out) {
    const int filters = w.dims[0];
    const int rows = static_cast<int>(w.size() / filters);
    ConstRowMap<T> W(w.data.data(), filters, rows);
    out.noalias() = W * cols;
    out.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(b.data.data(), filters);
}

// Direct valid stride-1 convolution, input [channels][h][w], output [filters][oh][ow].
template <class T>
void conv_direct(const T* in, int channels, int h, int w, const T* weights, const T* bias, int filters, int k, T* out) {
    const int oh = h - k + 1, ow = w - k + 1;
    for (int f = 0; f < filters; ++f)
        for (int y = 0; y < oh; ++y) {
            T* row = out + (static_cast<std::size_t>(f) * oh + y) * ow;
            std::fill_n(row, ow, bias[f]);
            for (int c = 0; c < channels; ++c)
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const T wv = weights[((static_cast<std::size_t>(f) * channels + c) * k + ky) * k + kx];
                        const T* src = in + (static_cast<std::size_t>(c) * h + y + ky) * w + kx;
                        for (int x = 0; x < ow; ++x) row[x] += wv * src[x];
                    }
        }
}

// grad_w[f][c][ky][kx] += sum over outputs of d_out * input; grad_b[f] += sum of d_out.
// Per-column partial sums are reduced in a fixed order, so results are deterministic.
template <class T>
void conv_direct_weight_grad(const T* in, int channels, int h, int w, const T* d_out, int filters, int k, T* grad_w,
                             T* grad_b) {
    const int oh = h - k + 1, ow = w - k + 1;
    constexpr int kMaxWidth = 64;
    if (ow > kMaxWidth) throw DataError("conv_direct_weight_grad: output row too wide");
    std::array<T, kMaxWidth> lane;
    for (int f = 0; f < filters; ++f) {
        const T* dz = d_out + static_cast<std::size_t>(f) * oh * ow;
        T bsum = 0;
        for (int i = 0; i < oh * ow; ++i) bsum += dz[i];
        grad_b[f] += bsum;
        for (int c = 0; c < channels; ++c)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    std::fill_n(lane.begin(), ow, T{0});
                    for (int y = 0; y < oh; ++y) {
                        const T* src = in + (static_cast<std::size_t>(c) * h + y + ky) * w + kx;
                        const T* d = dz + static_cast<std::size_t>(y) * ow;
                        for (int x = 0; x < ow; ++x) lane[x] += d[x] * src[x];
                    }
                    T sum = 0;
                    for (int x = 0; x < ow; ++x) sum += lane[x];
                    grad_w[((static_cast<std::size_t>(f) * channels + c) * k + ky) * k + kx] += sum;
                }
    }
}

// Valid stride-1 convolution of one image through the first-layer kernel; output [filters][oh][ow].
template <class T>
std::vector<T> conv2d_valid(std::span<const T> input, int channels, int h, int w, const Tensor<T>& weights,
                            const Tensor<T>& bias, int k) {
    const int filters = weights.dims[0];
    std::vector<T> out(static_cast<std::size_t>(filters) * (h - k + 1) * (w - k + 1));
    conv_direct(input.data(), channels, h, w, weights.data.data(), bias.data.data(), filters, k, out.data());
    return out;
}

// Same convolution through the im2col/GEMM kernel used by the second layer.
template <class T>
std::vector<T> conv2d_valid_gemm(std::span<const T> input, int channels, int h, int w, const Tensor<T>& weights,
                                 const Tensor<T>& bias, int k) {
    const int oh = h - k + 1, ow = w - k + 1;
    Mat<T> cols(channels * k * k, oh * ow), out;
    im2col(input.data(), channels, h, w, k, cols, 0);
    conv_gemm(weights, bias, cols, out);
    std::vector<T> result(out.size());
    for (int f = 0; f < out.rows(); ++f)
        for (int p = 0; p < out.cols(); ++p) result[static_cast<std::size_t>(f) * out.cols() + p] = out(f, p);
    return result;
}

// 2x2 stride-2 max pooling over per-example [f][h][w] maps. `at(f, b, p)` reads position p of
// map f of example b. Output column b holds [f][h/2][w/2]; `arg` records the winning p.
// Ties resolve to the first row-major maximum.
template <class T, class At>
void maxpool(At at, int filters, int h, int w, Eigen::Index batch, Mat<T>& pooled, std::vector<std::int32_t>& arg) {
    const int oh = h / 2, ow = w / 2;
    pooled.resize(static_cast<Eigen::Index>(filters) * oh * ow, batch);
    arg.resize(static_cast<std::size_t>(pooled.size()));
    for (Eigen::Index b = 0; b < batch; ++b)
        for (int f = 0; f < filters; ++f)
            for (int py = 0; py < oh; ++py)
                for (int px = 0; px < ow; ++px) {
                    std::int32_t best = (2 * py) * w + 2 * px;
                    T best_v = at(f, b, best);
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            std::int32_t p = (2 * py + dy) * w + 2 * px + dx;
                            T v = at(f, b, p);
                            if (v > best_v) {
                                best = p;
                                best_v = v;
                            }
                        }
                    Eigen::Index o = (static_cast<Eigen::Index>(f) * oh + py) * ow + px;
                    pooled(o, b) = best_v;
                    arg[static_cast<std::size_t>(b * pooled.rows() + o)] = best;
                }
}

// Routes each pooled gradient to its argmax, gated by the ReLU that preceded pooling.
template <class T, class Ref>
void maxpool_backward(const Mat<T>& d_pooled, const std::vector<std::int32_t>& arg, int h, int w, Ref ref) {
    const int oh = h / 2, ow = w / 2;
    for (Eigen::Index b = 0; b < d_pooled.cols(); ++b)
        for (Eigen::Index o = 0; o < d_pooled.rows(); ++o) {
            const int f = static_cast<int>(o / (oh * ow));
            const std::int32_t p = arg[static_cast<std::size_t>(b * d_pooled.rows() + o)];
            ref(f, b, p, d_pooled(o, b));
        }
}

}  // namespace nn

template <class T>
using ParamSet = std::array<Tensor<T>, nn::kParamCount>;

template <class T>
struct Network {
    int arity = 0;
    ParamSet<T> params;

    Tensor<T>& operator[](int p) { return params[p]; }
    const Tensor<T>& operator[](int p) const { return params[p]; }
    bool operator==(const Network&) const = default;
};

template <class T>
ParamSet<T> zeros_like(const ParamSet<T>& ref) {
    ParamSet<T> out;
    for (int p = 0; p < nn::kParamCount; ++p) out[p] = Tensor<T>(ref[p].dims, T{0});
    return out;
}

template <class To, class From>
Network<To> convert(const Network<From>& net) {
    Network<To> out;
    out.arity = net.arity;
    for (int p = 0; p < nn::kParamCount; ++p) {
        out[p].dims = net[p].dims;
        out[p].data.assign(net[p].data.begin(), net[p].data.end());
    }
    return out;
}

// Weights ~ N(0, 0.01^2), biases = 1.
template <class T = float>
Network<T> init_network(int arity, std::uint64_t seed) {
    if (arity < 2) throw ConfigError("network arity must be >= 2, got " + std::to_string(arity));
    Network<T> net;
    net.arity = arity;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.01);
    auto shapes = nn::param_shapes(arity);
    for (int p = 0; p < nn::kParamCount; ++p) {
        net[p] = Tensor<T>(shapes[p], T{1});
        if (!nn::is_bias(p))
            for (auto& v : net[p].data) v = static_cast<T>(normal(rng));
    }
    return net;
}

template <class T>
void check_shapes(const Network<T>& net) {
    auto shapes = nn::param_shapes(net.arity);
    for (int p = 0; p < nn::kParamCount; ++p)
        if (net[p].dims != shapes[p] || net[p].data.size() != Tensor<T>(shapes[p]).size())
            throw FormatError(std::string("network tensor ") + nn::param_name(p) + " has the wrong shape");
}

// Keep flags for the two dropout layers of one example.
struct DropoutMask {
    std::array<std::vector<std::uint8_t>, 2> keep;

    template <class Rng>
    static DropoutMask sample(Rng& rng) {
        DropoutMask m;
        std::bernoulli_distribution coin(nn::kKeepProbability);
        for (auto& layer : m.keep) {
            layer.resize(nn::kHidden);
            for (auto& k : layer) k = coin(rng) ? 1 : 0;
        }
        return m;
    }
};

struct LabeledPatch {
    FeaturePatch patch;
    int label = 0;
};

enum class Mode { train, eval };

// Activations of one batched forward pass (one column per example), kept for backpropagation.
template <class T>
struct BatchTrace {
    nn::Mat<T> input;   // 784 x B
    nn::Mat<T> conv1;   // 2304 x B ([f][24][24] per column), after ReLU
    nn::Mat<T> pool1;   // 576 x B
    std::vector<std::int32_t> arg1;
    nn::Mat<T> cols2;   // 196 x (36*B)
    nn::Mat<T> conv2;   // 8 x (36*B), after ReLU
    nn::Mat<T> pool2;   // 72 x B
    std::vector<std::int32_t> arg2;
    nn::Mat<T> keep1, keep2;      // dropout scale per unit (0 or 1/keep), empty without dropout
    nn::Mat<T> hidden1, hidden2;  // after dropout
    nn::Mat<T> logits, probs;
};

namespace nn {

template <class T>
void relu_inplace(Mat<T>& m) {
    m = m.cwiseMax(T{0});
}

template <class T>
void dense(const Tensor<T>& w, const Tensor<T>& b, const Mat<T>& x, Mat<T>& y) {
    ConstRowMap<T> W(w.data.data(), w.dims[0], w.dims[1]);
    y.noalias() = W * x;
    y.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(b.data.data(), w.dims[0]);
}

template <class T>
void keep_matrix(std::span<const DropoutMask> masks, int layer, Mat<T>& keep) {
    const T scale = static_cast<T>(1.0 / kKeepProbability);
    keep.resize(kHidden, static_cast<Eigen::Index>(masks.size()));
    for (std::size_t b = 0; b < masks.size(); ++b)
        for (int i = 0; i < kHidden; ++i) keep(i, static_cast<Eigen::Index>(b)) = masks[b].keep[layer][i] ? scale : T{0};
}

// `masks` is empty (no dropout) or holds one mask per patch.
template <class T>
void forward_batch(const Network<T>& net, std::span<const FeaturePatch* const> patches,
                   std::span<const DropoutMask> masks, BatchTrace<T>& tr) {
    const auto B = static_cast<Eigen::Index>(patches.size());
    constexpr int pos1 = kConv1Out * kConv1Out, pos2 = kConv2Out * kConv2Out;

    tr.input.resize(kInput * kInput, B);
    tr.conv1.resize(kConv1Filters * pos1, B);
    for (Eigen::Index b = 0; b < B; ++b) {
        std::copy(patches[b]->values.begin(), patches[b]->values.end(), tr.input.col(b).data());
        conv_direct(tr.input.col(b).data(), 1, kInput, kInput, net[conv1_w].data.data(), net[conv1_b].data.data(),
                    kConv1Filters, kConv1Kernel, tr.conv1.col(b).data());
    }
    relu_inplace(tr.conv1);
    maxpool<T>([&](int f, Eigen::Index b, int p) { return tr.conv1(f * pos1 + p, b); }, kConv1Filters, kConv1Out,
               kConv1Out, B, tr.pool1, tr.arg1);

    tr.cols2.resize(kConv1Filters * kConv2Kernel * kConv2Kernel, pos2 * B);
    for (Eigen::Index b = 0; b < B; ++b)
        im2col(tr.pool1.col(b).data(), kConv1Filters, kPool1Out, kPool1Out, kConv2Kernel, tr.cols2, b * pos2);
    conv_gemm(net[conv2_w], net[conv2_b], tr.cols2, tr.conv2);
    relu_inplace(tr.conv2);
    maxpool<T>([&](int f, Eigen::Index b, int p) { return tr.conv2(f, b * pos2 + p); }, kConv2Filters, kConv2Out,
               kConv2Out, B, tr.pool2, tr.arg2);

    const bool dropout = !masks.empty();
    if (dropout) {
        keep_matrix(masks, 0, tr.keep1);
        keep_matrix(masks, 1, tr.keep2);
    }
    dense(net[fc1_w], net[fc1_b], tr.pool2, tr.hidden1);
    if (dropout) tr.hidden1.array() *= tr.keep1.array();
    dense(net[fc2_w], net[fc2_b], tr.hidden1, tr.hidden2);
    if (dropout) tr.hidden2.array() *= tr.keep2.array();
    dense(net[fc3_w], net[fc3_b], tr.hidden2, tr.logits);

    tr.probs.resize(tr.logits.rows(), B);
    for (Eigen::Index b = 0; b < B; ++b) {
        auto z = tr.logits.col(b);
        auto p = tr.probs.col(b);
        p = (z.array() - z.maxCoeff()).exp().matrix();
        p /= p.sum();
    }
}

// Gradients of sum_b weight * CE(b) with respect to every parameter; `d_logits` enters as
// (probs - onehot) * weight and the result overwrites `grads`.
template <class T>
void backward_batch(const Network<T>& net, const BatchTrace<T>& tr, Mat<T> d_logits, ParamSet<T>& grads) {
    const Eigen::Index B = d_logits.cols();
    constexpr int pos1 = kConv1Out * kConv1Out, pos2 = kConv2Out * kConv2Out;
    auto weight_grad = [&](int p, const Mat<T>& dy, const Mat<T>& x) {
        RowMap<T>(grads[p].data.data(), dy.rows(), x.rows()).noalias() = dy * x.transpose();
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(grads[p + 1].data.data(), dy.rows()) = dy.rowwise().sum();
    };
    auto input_grad = [&](int p, const Mat<T>& dy, Mat<T>& dx) {
        const Tensor<T>& w = net[p];
        const int rows = w.dims[0];
        ConstRowMap<T> W(w.data.data(), rows, static_cast<Eigen::Index>(w.size() / rows));
        dx.noalias() = W.transpose() * dy;
    };
    const bool dropout = tr.keep1.size() > 0;

    Mat<T> d_hidden2, d_hidden1, d_pool2, d_conv2, d_cols2, d_conv1;
    weight_grad(fc3_w, d_logits, tr.hidden2);
    input_grad(fc3_w, d_logits, d_hidden2);
    if (dropout) d_hidden2.array() *= tr.keep2.array();

    weight_grad(fc2_w, d_hidden2, tr.hidden1);
    input_grad(fc2_w, d_hidden2, d_hidden1);
    if (dropout) d_hidden1.array() *= tr.keep1.array();

    weight_grad(fc1_w, d_hidden1, tr.pool2);
    input_grad(fc1_w, d_hidden1, d_pool2);

    d_conv2.setZero(tr.conv2.rows(), tr.conv2.cols());
    maxpool_backward(d_pool2, tr.arg2, kConv2Out, kConv2Out, [&](int f, Eigen::Index b, int p, T g) {
        if (tr.conv2(f, b * pos2 + p) > T{0}) d_conv2(f, b * pos2 + p) += g;
    });
    weight_grad(conv2_w, d_conv2, tr.cols2);
    input_grad(conv2_w, d_conv2, d_cols2);
    Mat<T> d_pool1 = Mat<T>::Zero(tr.pool1.rows(), B);
    for (Eigen::Index b = 0; b < B; ++b)
        col2im_add(d_cols2, b * pos2, kConv1Filters, kPool1Out, kPool1Out, kConv2Kernel, d_pool1.col(b).data());

    d_conv1.setZero(tr.conv1.rows(), B);
    maxpool_backward(d_pool1, tr.arg1, kConv1Out, kConv1Out, [&](int f, Eigen::Index b, int p, T g) {
        if (tr.conv1(f * pos1 + p, b) > T{0}) d_conv1(f * pos1 + p, b) += g;
    });
    std::fill(grads[conv1_w].data.begin(), grads[conv1_w].data.end(), T{0});
    std::fill(grads[conv1_b].data.begin(), grads[conv1_b].data.end(), T{0});
    for (Eigen::Index b = 0; b < B; ++b)
        conv_direct_weight_grad(tr.input.col(b).data(), 1, kInput, kInput, d_conv1.col(b).data(), kConv1Filters,
                                kConv1Kernel, grads[conv1_w].data.data(), grads[conv1_b].data.data());
}

}  // namespace nn

// Class probabilities. Train mode needs a dropout mask; eval mode ignores it.
template <class T>
std::vector<T> forward(const Network<T>& net, const FeaturePatch& patch, Mode mode = Mode::eval,
                       const DropoutMask* mask = nullptr) {
    if (mode == Mode::train && !mask) throw DataError("forward: train mode requires a dropout mask");
    BatchTrace<T> tr;
    const FeaturePatch* one[] = {&patch};
    std::span<const DropoutMask> masks;
    if (mode == Mode::train) masks = std::span<const DropoutMask>(mask, 1);
    nn::forward_batch(net, std::span<const FeaturePatch* const>(one), masks, tr);
    return std::vector<T>(tr.probs.data(), tr.probs.data() + tr.probs.size());
}

template <class T, class Rng>
std::vector<T> forward(const Network<T>& net, const FeaturePatch& patch, Mode mode, Rng& rng) {
    if (mode == Mode::eval) return forward(net, patch, Mode::eval);
    DropoutMask mask = DropoutMask::sample(rng);
    return forward(net, patch, Mode::train, &mask);
}

// Eval-mode probabilities for many patches at once; one column per patch.
template <class T>
nn::Mat<T> forward_eval(const Network<T>& net, std::span<const FeaturePatch* const> patches) {
    BatchTrace<T> tr;
    if (patches.empty()) return nn::Mat<T>(net.arity, 0);
    nn::forward_batch(net, patches, {}, tr);
    return std::move(tr.probs);
}

template <class T>
struct LossAndGrad {
    T loss = 0;
    ParamSet<T> grads;
};

// Mean cross-entropy and batch-averaged gradients. `masks` is either empty
// (no dropout) or holds one mask per example.
template <class T>
LossAndGrad<T> loss_and_grad(const Network<T>& net, std::span<const LabeledPatch> batch,
                             std::span<const DropoutMask> masks, BatchTrace<T>& tr) {
    if (batch.empty()) throw DataError("loss_and_grad: empty batch");
    if (!masks.empty() && masks.size() != batch.size()) throw DataError("loss_and_grad: one dropout mask per example required");
    std::vector<const FeaturePatch*> patches(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        if (batch[b].label < 0 || batch[b].label >= net.arity)
            throw DataError("loss_and_grad: label " + std::to_string(batch[b].label) + " out of range for arity " +
                            std::to_string(net.arity));
        patches[b] = &batch[b].patch;
    }
    nn::forward_batch(net, std::span<const FeaturePatch* const>(patches), masks, tr);

    LossAndGrad<T> out;
    out.grads = zeros_like(net.params);
    const T scale = static_cast<T>(1.0 / static_cast<double>(batch.size()));
    nn::Mat<T> d_logits = tr.probs;
    double total = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto col = static_cast<Eigen::Index>(b);
        auto z = tr.logits.col(col);
        // log-sum-exp form of -log p[label]
        const T mx = z.maxCoeff();
        double lse = 0.0;
        for (Eigen::Index i = 0; i < z.size(); ++i) lse += std::exp(static_cast<double>(z(i) - mx));
        total += std::log(lse) + static_cast<double>(mx) - static_cast<double>(z(batch[b].label));
        d_logits(batch[b].label, col) -= T{1};
    }
    d_logits *= scale;
    nn::backward_batch(net, tr, std::move(d_logits), out.grads);
    out.loss = static_cast<T>(total / static_cast<double>(batch.size()));
    return out;
}

template <class T>
LossAndGrad<T> loss_and_grad(const Network<T>& net, std::span<const LabeledPatch> batch,
                             std::span<const DropoutMask> masks) {
    BatchTrace<T> tr;
    return loss_and_grad(net, batch, masks, tr);
}
template <class T, class Rng>
LossAndGrad<T> loss_and_grad(const Network<T>& net, std::span<const LabeledPatch> batch, Rng& rng) {
    std::vector<DropoutMask> masks;
    masks.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) masks.push_back(DropoutMask::sample(rng));
    return loss_and_grad(net, batch, std::span<const DropoutMask>(masks));
}

struct SgdHyper {
    double momentum = 0.9;
    double weight_decay = 0.0005;
    double learning_rate = 0.001;
};

// v <- m*v - alpha*eps*w - eps*g ;  w <- w + v   (decay skipped when `decay` is false)
template <class T>
void sgd_update(std::span<T> w, std::span<T> v, std::span<const T> g, const SgdHyper& h, bool decay) {
    if (w.size() != v.size() || w.size() != g.size()) throw DataError("sgd_update: shape mismatch");
    const T m = static_cast<T>(h.momentum);
    const T ae = decay ? static_cast<T>(h.weight_decay * h.learning_rate) : T{0};
    const T eps = static_cast<T>(h.learning_rate);
    for (std::size_t i = 0; i < w.size(); ++i) {
        v[i] = m * v[i] - ae * w[i] - eps * g[i];
        w[i] += v[i];
    }
}

template <class T>
struct OptimizerState {
    SgdHyper hyper;
    std::int64_t iteration = 0;
    ParamSet<T> velocity;

    static OptimizerState for_network(const Network<T>& net, SgdHyper hyper = {}) {
        OptimizerState s;
        s.hyper = hyper;
        s.velocity = zeros_like(net.params);
        return s;
    }
};

template <class T>
void sgd_step(Network<T>& net, OptimizerState<T>& opt, const ParamSet<T>& grads) {
    for (int p = 0; p < nn::kParamCount; ++p) {
        if (!net[p].same_shape(grads[p]) || !net[p].same_shape(opt.velocity[p]))
            throw DataError(std::string("sgd_step: shape mismatch on ") + nn::param_name(p));
        sgd_update<T>(net[p].data, opt.velocity[p].data, grads[p].data, opt.hyper, !nn::is_bias(p));
    }
    ++opt.iteration;
}

struct TrainConfig {
    int batch_size = 256;
    int iterations = 1000;
    double flip_probability = 0.5;
    std::uint64_t seed = 1;
    SgdHyper hyper;
};

template <class T>
struct TrainResult {
    Network<T> net;
    std::vector<double> loss_curve;
};

// Uniformly sampled batches with horizontal-flip augmentation.
template <class T>
TrainResult<T> train(Network<T> net, std::span<const LabeledPatch> dataset, const TrainConfig& cfg) {
    if (dataset.empty()) throw DataError("train: empty dataset");
    if (cfg.batch_size < 1 || cfg.iterations < 1) throw ConfigError("train: batch_size and iterations must be >= 1");
    for (const auto& ex : dataset)
        if (ex.label < 0 || ex.label >= net.arity) throw DataError("train: label out of range");
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
    std::bernoulli_distribution flip(cfg.flip_probability);
    auto opt = OptimizerState<T>::for_network(net, cfg.hyper);
    TrainResult<T> result;
    result.loss_curve.reserve(cfg.iterations);
    std::vector<LabeledPatch> batch(cfg.batch_size);
    std::vector<DropoutMask> masks(cfg.batch_size);
    BatchTrace<T> trace;
    for (int it = 0; it < cfg.iterations; ++it) {
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto& ex = dataset[pick(rng)];
            batch[b].label = ex.label;
            batch[b].patch = flip(rng) ? ex.patch.flipped() : ex.patch;
            masks[b] = DropoutMask::sample(rng);
        }
        auto lg = loss_and_grad(net, std::span<const LabeledPatch>(batch), std::span<const DropoutMask>(masks), trace);
        sgd_step(net, opt, lg.grads);
        result.loss_curve.push_back(static_cast<double>(lg.loss));
    }
    result.net = std::move(net);
    return result;
}

template <class T>
int argmax(const std::vector<T>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

template <class T>
double accuracy(const Network<T>& net, std::span<const LabeledPatch> data) {
    if (data.empty()) return 0.0;
    std::size_t correct = 0;
    constexpr std::size_t chunk = 256;
    for (std::size_t start = 0; start < data.size(); start += chunk) {
        std::vector<const FeaturePatch*> patches;
        for (std::size_t i = start; i < std::min(data.size(), start + chunk); ++i) patches.push_back(&data[i].patch);
        nn::Mat<T> probs = forward_eval(net, std::span<const FeaturePatch* const>(patches));
        for (Eigen::Index b = 0; b < probs.cols(); ++b) {
            Eigen::Index best;
            probs.col(b).maxCoeff(&best);
            correct += best == data[start + b].label;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace subact
