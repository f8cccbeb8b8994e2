#pragma once

// Independent statement of the ICVL compatibility rules plus random prior tables
// and synthetic raw predictions for the conflict-resolution checks.

#include <array>
#include <random>
#include <string>

#include "subact/descriptor.hpp"

namespace subact::testing {

inline const DescriptorGraph kIcvl = DescriptorGraph::icvl();

inline int P(const char* s) { return kIcvl.require(Level::posture, s); }
inline int L(const char* s) { return kIcvl.require(Level::locomotion, s); }
inline int G(const char* s) { return kIcvl.require(Level::gesture, s); }

// The three quoted constraints, written out independently of the graph.
inline bool rule_compatible(const LabelTriple& t) {
    if (t[0] == P("sitting") && t[1] != L("stationary")) return false;
    if (t[1] == L("running") && (t[2] == G("texting") || t[2] == G("smoking"))) return false;
    return true;
}

inline JointPriorTable random_priors(std::mt19937_64& rng, const std::string& scene = "cam1") {
    JointPriorTable t(kIcvl, {scene});
    std::uniform_real_distribution<double> u(0.01, 1.0);
    for (Level l : kLevels) {
        double sum = 0;
        for (int a = 0; a < kIcvl.size(l); ++a) sum += t.prob(l, a, 0) = u(rng);
        for (int a = 0; a < kIcvl.size(l); ++a) t.prob(l, a, 0) /= sum;
    }
    return t;
}

inline ActionPrediction raw_prediction(const LabelTriple& labels, const std::array<double, 3>& conf) {
    ActionPrediction p;
    for (Level l : kLevels) {
        int k = index_of(l);
        int n = kIcvl.size(l);
        p.posterior[k].assign(n, n > 1 ? (1 - conf[k]) / (n - 1) : 1.0);
        p.posterior[k][labels[k]] = conf[k];
    }
    p.labels = labels;
    return p;
}

}  // namespace subact::testing
