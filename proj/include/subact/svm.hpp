#pragma once

// Linear hinge-loss SVM trained by dual coordinate descent. The bias is
// learned as the weight of a constant feature 1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "error.hpp"
#include "model_io.hpp"

namespace subact {

struct SvmModel {
    std::vector<float> weights;
    float bias = 0;
    double C = 100.0;

    float score(std::span<const float> x) const {
        if (x.size() != weights.size()) throw DataError("svm: feature length mismatch");
        double acc = bias;
        for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(weights[i]) * x[i];
        return static_cast<float>(acc);
    }

    bool operator==(const SvmModel&) const = default;
};

struct SvmTrainOptions {
    double C = 100.0;
    int max_epochs = 1000;
    double tolerance = 1e-3;  // on the projected-gradient spread
    std::uint64_t seed = 1;
};

struct SvmTrainResult {
    SvmModel model;
    double train_accuracy = 0;
    int epochs = 0;
    bool converged = false;
};

inline SvmTrainResult train_svm(const std::vector<std::vector<float>>& positives,
                                const std::vector<std::vector<float>>& negatives, const SvmTrainOptions& opt = {}) {
    if (positives.empty() || negatives.empty()) throw DataError("train_svm: need at least one example per class");
    if (!(opt.C > 0)) throw ConfigError("train_svm: C must be positive");
    const std::size_t dim = positives.front().size();
    std::vector<const std::vector<float>*> xs;
    std::vector<double> ys;
    for (const auto& x : positives) xs.push_back(&x), ys.push_back(1.0);
    for (const auto& x : negatives) xs.push_back(&x), ys.push_back(-1.0);
    for (const auto* x : xs)
        if (x->size() != dim) throw DataError("train_svm: inconsistent feature lengths");
    if (std::all_of(xs.begin(), xs.end(), [&](const auto* x) { return *x == *xs.front(); }))
        throw DataError("train_svm: degenerate input, all feature vectors identical");

    const std::size_t n = xs.size();
    std::vector<double> qii(n), alpha(n, 0.0), w(dim, 0.0);
    double b = 0;
    for (std::size_t i = 0; i < n; ++i)
        qii[i] = 1.0 + std::inner_product(xs[i]->begin(), xs[i]->end(), xs[i]->begin(), 0.0);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(opt.seed);
    SvmTrainResult result;
    for (int epoch = 0; epoch < opt.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double pg_max = -HUGE_VAL, pg_min = HUGE_VAL;
        for (std::size_t i : order) {
            const auto& x = *xs[i];
            double wx = b;
            for (std::size_t d = 0; d < dim; ++d) wx += w[d] * x[d];
            const double g = ys[i] * wx - 1.0;
            double pg = g;
            if (alpha[i] == 0.0)
                pg = std::min(g, 0.0);
            else if (alpha[i] == opt.C)
                pg = std::max(g, 0.0);
            pg_max = std::max(pg_max, pg);
            pg_min = std::min(pg_min, pg);
            if (pg == 0.0) continue;
            const double old = alpha[i];
            alpha[i] = std::clamp(old - g / qii[i], 0.0, opt.C);
            const double step = (alpha[i] - old) * ys[i];
            for (std::size_t d = 0; d < dim; ++d) w[d] += step * x[d];
            b += step;
        }
        result.epochs = epoch + 1;
        if (pg_max - pg_min < opt.tolerance) {
            result.converged = true;
            break;
        }
    }
    result.model.weights.assign(w.begin(), w.end());
    result.model.bias = static_cast<float>(b);
    result.model.C = opt.C;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += (result.model.score(*xs[i]) > 0) == (ys[i] > 0);
    result.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    return result;
}

// Stored in the shared tensor container with arity 1: weights, bias, C.
inline void save_svm(const SvmModel& m, const std::filesystem::path& path) {
    TensorFile file;
    file.arity = 1;
    Tensor<float> w({static_cast<int>(m.weights.size())});
    w.data = m.weights;
    file.tensors = {std::move(w), Tensor<float>({1}, m.bias), Tensor<float>({1}, static_cast<float>(m.C))};
    write_tensor_file(file, path);
}

inline SvmModel load_svm(const std::filesystem::path& path) {
    TensorFile file = read_tensor_file(path);
    if (file.arity != 1 || file.tensors.size() != 3 || file.tensors[0].dims.size() != 1 || file.tensors[1].size() != 1 ||
        file.tensors[2].size() != 1)
        throw FormatError("not a detector model: " + path.string());
    SvmModel m;
    m.weights = std::move(file.tensors[0].data);
    m.bias = file.tensors[1].data[0];
    m.C = file.tensors[2].data[0];
    if (!(m.C > 0)) throw FormatError("detector model has non-positive C: " + path.string());
    for (float v : m.weights)
        if (!std::isfinite(v)) throw FormatError("detector model has non-finite weights: " + path.string());
    return m;
}

}  // namespace subact
