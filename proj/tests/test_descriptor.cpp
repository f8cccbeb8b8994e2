#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "subact/descriptor.hpp"
#include "support/descriptor_oracles.hpp"

using namespace subact;
using namespace subact::testing;

namespace {

SceneAnnotations scene_with(const std::string& scene, std::vector<std::array<const char*, 3>> labels) {
    SceneAnnotations s{scene, {}};
    for (std::size_t i = 0; i < labels.size(); ++i) {
        AnnotationRecord r;
        r.frame = static_cast<std::int64_t>(i);
        r.box = {0, 0, 10, 10};
        r.posture = labels[i][0];
        r.locomotion = labels[i][1];
        r.gesture = labels[i][2];
        s.records.push_back(r);
    }
    return s;
}

Network<float> fixed_output(const std::vector<double>& probs) {
    auto net = init_network<float>(static_cast<int>(probs.size()), 1);
    std::fill(net[nn::fc3_w].data.begin(), net[nn::fc3_w].data.end(), 0.0f);
    for (std::size_t i = 0; i < probs.size(); ++i) net[nn::fc3_b].data[i] = static_cast<float>(std::log(probs[i]));
    return net;
}

}  // namespace

TEST(Graph, IcvlCompatibleTriplesMatchTheQuotedRules) {
    int count = 0;
    for (const auto& t : kIcvl.all_triples()) {
        EXPECT_EQ(kIcvl.compatible(t), rule_compatible(t));
        count += rule_compatible(t);
    }
    EXPECT_EQ(kIcvl.all_triples().size(), 24u);
    EXPECT_EQ(count, 14);
    EXPECT_EQ(kIcvl.compatible_triples().size(), 14u);
}

TEST(Graph, Kth) {
    auto g = DescriptorGraph::kth();
    EXPECT_EQ(g.size(Level::posture), 1);
    EXPECT_TRUE(g.compatible({0, g.require(Level::locomotion, "stationary"), g.require(Level::gesture, "boxing")}));
    EXPECT_FALSE(g.compatible({0, g.require(Level::locomotion, "running"), g.require(Level::gesture, "boxing")}));
    EXPECT_TRUE(g.compatible({0, g.require(Level::locomotion, "running"), g.require(Level::gesture, "nothing")}));
}

TEST(Classify, ArgmaxOfPosteriors) {
    MultiCnn m{{fixed_output({0.9, 0.1}), fixed_output({0.2, 0.5, 0.3}), fixed_output({0.1, 0.1, 0.1, 0.7})}};
    FeatureTriple x;
    auto p = classify(m, kIcvl, x, 4);
    EXPECT_EQ(p.track_id, 4);
    EXPECT_EQ(p.labels, (LabelTriple{P("sitting"), L("walking"), G("others")}));
    EXPECT_NEAR(p.confidence(Level::posture), 0.9, 1e-6);
    EXPECT_FALSE(p.low_confidence);
}

TEST(Classify, UniformNetworksPickFirstLabelsAndFlag) {
    MultiCnn m{{fixed_output({0.5, 0.5}), fixed_output({1 / 3.0, 1 / 3.0, 1 / 3.0}), fixed_output({0.25, 0.25, 0.25, 0.25})}};
    auto p = classify(m, kIcvl, FeatureTriple{});
    EXPECT_EQ(p.labels, (LabelTriple{0, 0, 0}));
    EXPECT_TRUE(p.low_confidence);
}

TEST(Classify, ArityMismatch) {
    MultiCnn m{{fixed_output({0.5, 0.5}), fixed_output({0.5, 0.5}), fixed_output({0.25, 0.25, 0.25, 0.25})}};
    EXPECT_THROW(classify(m, kIcvl, FeatureTriple{}), DataError);
}

TEST(Priors, BalancedSingleScene) {
    std::vector<SceneAnnotations> data{
        scene_with("cam1", {{"sitting", "stationary", "nothing"}, {"standing", "walking", "nothing"}})};
    auto t = estimate_priors(kIcvl, data);
    EXPECT_DOUBLE_EQ(t.raw_prob(Level::posture, P("sitting"), 0), 0.5);
    EXPECT_DOUBLE_EQ(t.raw_prob(Level::posture, P("standing"), 0), 0.5);
    EXPECT_DOUBLE_EQ(t.prob(Level::posture, P("sitting"), 0), t.prob(Level::posture, P("standing"), 0));
    // Absent labels stay strictly positive.
    EXPECT_GT(t.prob(Level::gesture, G("smoking"), 0), 0.0);
    EXPECT_DOUBLE_EQ(t.prob(Level::gesture, G("nothing"), 0), 3.0 / 6.0);
}

TEST(Priors, SceneImbalanceAndNormalization) {
    std::vector<SceneAnnotations> data{
        scene_with("a", {{"sitting", "stationary", "texting"}, {"standing", "walking", "nothing"},
                         {"standing", "running", "others"}}),
        scene_with("b", {{"standing", "stationary", "smoking"}})};
    auto t = estimate_priors(kIcvl, data);
    double raw_a = 0;
    for (int a = 0; a < 2; ++a) raw_a += t.raw_prob(Level::posture, a, 0);
    EXPECT_DOUBLE_EQ(raw_a, 0.75);
    for (Level l : kLevels) {
        double sum = 0;
        for (int a = 0; a < kIcvl.size(l); ++a)
            for (int s = 0; s < 2; ++s) sum += t.prob(l, a, s);
        EXPECT_NEAR(sum, 1.0, 1e-9);
    }
    // Unknown scene: the scene-marginal prior.
    EXPECT_DOUBLE_EQ(t.prior(Level::posture, 1, "unseen"), t.prob(Level::posture, 1, 0) + t.prob(Level::posture, 1, 1));
    EXPECT_DOUBLE_EQ(t.prior(Level::posture, 1, "b"), t.prob(Level::posture, 1, 1));
}

TEST(Priors, Errors) {
    EXPECT_THROW(estimate_priors(kIcvl, std::vector<SceneAnnotations>{}), DataError);
    EXPECT_THROW(estimate_priors(kIcvl, std::vector<SceneAnnotations>{scene_with("a", {{"-", "-", "-"}})}), DataError);
    EXPECT_THROW(estimate_priors(kIcvl, std::vector<SceneAnnotations>{scene_with("a", {{"lying", "-", "-"}})}), DataError);
}

TEST(Resolve, CompatibleTripleUnchanged) {
    std::mt19937_64 rng(1);
    auto pr = random_priors(rng);
    auto raw = raw_prediction({P("standing"), L("walking"), G("texting")}, {0.6, 0.7, 0.8});
    auto out = resolve_conflicts(raw, kIcvl, pr, "cam1");
    EXPECT_EQ(out.labels, raw.labels);
}

TEST(Resolve, ConfidentSittingForcesStationary) {
    JointPriorTable pr(kIcvl, {"cam1"});
    for (Level l : kLevels)
        for (int a = 0; a < kIcvl.size(l); ++a) pr.prob(l, a, 0) = 1.0 / kIcvl.size(l);
    pr.prob(Level::locomotion, L("stationary"), 0) = 0.6;
    pr.prob(Level::locomotion, L("walking"), 0) = 0.3;
    pr.prob(Level::locomotion, L("running"), 0) = 0.1;
    auto raw = raw_prediction({P("sitting"), L("walking"), G("nothing")}, {0.95, 0.60, 0.5});
    auto out = resolve_conflicts(raw, kIcvl, pr, "cam1");
    EXPECT_EQ(out.labels, (LabelTriple{P("sitting"), L("stationary"), G("nothing")}));
}

TEST(Resolve, ConfidentRunningRevisesPostureAndGesture) {
    JointPriorTable pr(kIcvl, {"cam1"});
    for (Level l : kLevels)
        for (int a = 0; a < kIcvl.size(l); ++a) pr.prob(l, a, 0) = 1.0 / kIcvl.size(l);
    pr.prob(Level::gesture, G("others"), 0) = 0.4;
    pr.prob(Level::gesture, G("nothing"), 0) = 0.1;
    auto raw = raw_prediction({P("sitting"), L("running"), G("texting")}, {0.55, 0.99, 0.7});
    auto out = resolve_conflicts(raw, kIcvl, pr, "cam1");
    EXPECT_EQ(out.labels, (LabelTriple{P("standing"), L("running"), G("others")}));
}

TEST(Resolve, ExhaustiveSoundness) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> conf(0.34, 1.0);
    for (int table = 0; table < 100; ++table) {
        auto pr = random_priors(rng);
        for (const auto& t : kIcvl.all_triples()) {
            auto raw = raw_prediction(t, {conf(rng), conf(rng), conf(rng)});
            auto once = resolve_conflicts(raw, kIcvl, pr, "cam1");
            ASSERT_TRUE(kIcvl.compatible(once.labels));
            ASSERT_EQ(resolve_conflicts(once, kIcvl, pr, "cam1").labels, once.labels);
            if (kIcvl.compatible(t)) {
                ASSERT_EQ(once.labels, t);
            }
            // The most confident level survives revision.
            int anchor = 0;
            for (int k = 1; k < 3; ++k)
                if (raw.confidence(static_cast<Level>(k)) > raw.confidence(static_cast<Level>(anchor))) anchor = k;
            ASSERT_EQ(once.labels[anchor], t[anchor]);
            auto prior_only = resolve_conflicts(raw, kIcvl, pr, "elsewhere", {.prior_only = true});
            ASSERT_TRUE(kIcvl.compatible(prior_only.labels));
        }
    }
}

TEST(Resolve, PriorOnlyPicksTheJointPriorMode) {
    JointPriorTable pr(kIcvl, {"cam1"});
    for (Level l : kLevels)
        for (int a = 0; a < kIcvl.size(l); ++a) pr.prob(l, a, 0) = 0.1;
    pr.prob(Level::posture, P("standing"), 0) = 0.9;
    pr.prob(Level::locomotion, L("running"), 0) = 0.8;
    pr.prob(Level::gesture, G("smoking"), 0) = 0.5;
    pr.prob(Level::gesture, G("others"), 0) = 0.3;
    auto raw = raw_prediction({P("sitting"), L("running"), G("texting")}, {0.99, 0.5, 0.5});
    auto out = resolve_conflicts(raw, kIcvl, pr, "cam1", {.prior_only = true});
    EXPECT_EQ(out.labels, (LabelTriple{P("standing"), L("running"), G("others")}));
}

TEST(Smooth, ConstantHistory) {
    LabelHistory h;
    auto p = raw_prediction({1, 2, 3}, {0.9, 0.9, 0.9});
    for (int i = 0; i < 20; ++i) EXPECT_EQ(smooth(h, p, 15).labels, p.labels);
    EXPECT_EQ(h[0].size(), 15u);
}

TEST(Smooth, FlickerSuppressed) {
    LabelHistory h;
    auto stable = raw_prediction({1, 1, 0}, {0.9, 0.9, 0.9});
    auto flicker = raw_prediction({0, 2, 3}, {0.9, 0.9, 0.9});
    for (int i = 0; i < 7; ++i) smooth(h, stable, 15);
    EXPECT_EQ(smooth(h, flicker, 15).labels, stable.labels);
    for (int i = 0; i < 7; ++i) EXPECT_EQ(smooth(h, stable, 15).labels, stable.labels);
}

TEST(Smooth, WindowOneIsIdentity) {
    LabelHistory h;
    std::mt19937_64 rng(3);
    for (int i = 0; i < 50; ++i) {
        LabelTriple t{int(rng() % 2), int(rng() % 3), int(rng() % 4)};
        auto p = raw_prediction(t, {0.5, 0.5, 0.5});
        EXPECT_EQ(smooth(h, p, 1).labels, t);
    }
    EXPECT_THROW(smooth(h, raw_prediction({0, 0, 0}, {1, 1, 1}), 0), ConfigError);
}

TEST(Smooth, TieGoesToMostRecent) {
    LabelHistory h;
    smooth(h, raw_prediction({0, 0, 0}, {1, 1, 1}), 4);
    smooth(h, raw_prediction({0, 0, 0}, {1, 1, 1}), 4);
    smooth(h, raw_prediction({1, 1, 1}, {1, 1, 1}), 4);
    EXPECT_EQ(smooth(h, raw_prediction({1, 2, 1}, {1, 1, 1}), 4).labels, (LabelTriple{1, 0, 1}));
}

TEST(Phrases, TableVocabulary) {
    auto v = PhraseVocabulary::icvl();
    EXPECT_EQ(v.size(), 10);
    EXPECT_EQ(v.name(v.encode({P("standing"), L("walking"), G("smoking")})), "walking with smoking");
    EXPECT_EQ(v.name(v.encode({P("sitting"), L("stationary"), G("nothing")})), "sitting with nothing");
    for (int i = 0; i < v.size(); ++i) {
        EXPECT_EQ(v.encode(v.decode(i)), i);
        EXPECT_TRUE(kIcvl.compatible(v.decode(i)));
        EXPECT_EQ(v.find(v.name(i)), i);
    }
    EXPECT_THROW(v.encode({P("standing"), L("running"), G("texting")}), DataError);
    EXPECT_THROW(v.encode({P("standing"), L("running"), G("others")}), DataError);
}

TEST(Phrases, PredictionMarginals) {
    auto v = PhraseVocabulary::icvl();
    std::vector<double> post(10, 0.0);
    post[v.encode({P("standing"), L("walking"), G("texting")})] = 0.6;
    post[v.encode({P("sitting"), L("stationary"), G("texting")})] = 0.4;
    auto p = phrase_prediction(post, v, kIcvl, 2);
    EXPECT_EQ(p.labels, (LabelTriple{P("standing"), L("walking"), G("texting")}));
    EXPECT_DOUBLE_EQ(p.confidence(Level::gesture), 1.0);
    EXPECT_DOUBLE_EQ(p.confidence(Level::posture), 0.6);
    EXPECT_THROW(phrase_prediction(std::vector<double>(3, 0.3), v, kIcvl), DataError);
}

TEST(VideoMajority, Votes) {
    std::vector<LabelTriple> all(5, LabelTriple{0, 0, 1});
    EXPECT_EQ(video_majority_label(all), (LabelTriple{0, 0, 1}));
    std::vector<LabelTriple> split;
    for (int i = 0; i < 10; ++i) split.push_back({0, i < 4 ? 1 : 2, 0});
    EXPECT_EQ(video_majority_label(split)[1], 2);
    // 2 vs 2: label 1 reaches two votes at the third frame, label 0 only at the fourth.
    std::vector<LabelTriple> tie{{0, 0, 0}, {0, 1, 0}, {0, 1, 0}, {0, 0, 0}};
    EXPECT_EQ(video_majority_label(tie)[1], 1);
    EXPECT_THROW(video_majority_label(std::vector<LabelTriple>{}), DataError);
    EXPECT_TRUE(video_correct({0, 1, 2}, {5, 1, 2}));
    EXPECT_FALSE(video_correct({0, 1, 2}, {0, 1, 3}));
}

TEST(DescriptorText, RoundTrip) {
    std::vector<SceneAnnotations> data{scene_with("cam1", {{"sitting", "stationary", "texting"}}),
                                       scene_with("cam2", {{"standing", "running", "nothing"}})};
    auto pr = estimate_priors(kIcvl, data);
    auto text = format_descriptor(kIcvl, &pr);
    EXPECT_NE(text.find("level posture: sitting standing"), std::string::npos);
    EXPECT_NE(text.find("edge sitting stationary"), std::string::npos);
    EXPECT_EQ(text.find("edge sitting walking"), std::string::npos);
    auto back = parse_descriptor(text);
    EXPECT_EQ(back.graph, kIcvl);
    ASSERT_TRUE(back.priors);
    for (Level l : kLevels)
        for (int a = 0; a < kIcvl.size(l); ++a)
            for (int s = 0; s < 2; ++s) EXPECT_EQ(back.priors->prob(l, a, s), pr.prob(l, a, s));
    auto kth = parse_descriptor(format_descriptor(DescriptorGraph::kth()));
    EXPECT_EQ(kth.graph, DescriptorGraph::kth());
    EXPECT_FALSE(kth.priors);
}

TEST(DescriptorText, Errors) {
    EXPECT_THROW(parse_descriptor("level posture: a b\n"), FormatError);
    EXPECT_THROW(parse_descriptor("level posture: a\nlevel locomotion: b\nlevel gesture: c\nedge a c\n"), FormatError);
    EXPECT_THROW(parse_descriptor("level posture: a\nlevel locomotion: b\nlevel gesture: c\nbogus\n"), FormatError);
    try {
        parse_descriptor("level posture: a\nlevel locomotion: b\nlevel gesture: c\nprior posture a s x\n");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find(":4:"), std::string::npos);
    }
}
