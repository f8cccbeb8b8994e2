#pragma once

// Random patches and labeled batches for gradient and training checks.

#include <random>
#include <vector>

#include "subact/cnn.hpp"

namespace subact::testing {

inline FeaturePatch random_patch(std::mt19937_64& rng, float scale = 100.0f) {
    std::uniform_real_distribution<float> u(-scale, scale);
    FeaturePatch p;
    for (auto& v : p.values) v = u(rng);
    return p;
}

inline std::vector<LabeledPatch> random_batch(int n, int arity, std::mt19937_64& rng) {
    std::vector<LabeledPatch> batch(n);
    for (int i = 0; i < n; ++i) {
        batch[i].patch = random_patch(rng);
        batch[i].label = i % arity;
    }
    return batch;
}

}  // namespace subact::testing
