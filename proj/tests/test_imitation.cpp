#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dapol/harness.hpp"
#include "dapol/imitation.hpp"

using namespace dapol;
using namespace dapol::imitation;

namespace {

Env low_env() {
    Env e;
    e.tag = "test";
    return e;
}

/// Single dense layer into a softmax whose logits are exactly `logits` for any input.
nn::Network constant_net(const std::vector<double>& logits, std::size_t width = 4) {
    auto net = nn::init_network(nn::ArchBuilder(width).dense(logits.size()).softmax().build(), 1);
    for (auto& w : net.params[0].weight.data()) w = 0.0;
    net.params[0].bias = logits;
    return net;
}

}  // namespace

TEST(Discretize, Examples) {
    EXPECT_EQ(discretize(0.0, 9, 1.0).bin, 4u);
    EXPECT_EQ(discretize(1.0, 9, 1.0).bin, 8u);
    EXPECT_EQ(discretize(-1.0, 9, 1.0).bin, 0u);
    EXPECT_EQ(discretize(0.4, 9, 1.0).bin, 6u);
    const auto c = discretize(1.7, 9, 1.0);
    EXPECT_EQ(c.bin, 8u);
    EXPECT_TRUE(c.clamped);
    EXPECT_FALSE(discretize(0.99, 9, 1.0).clamped);
    EXPECT_THROW(discretize(0.0, 8, 1.0), invalid_argument);
    EXPECT_THROW(discretize(0.0, 9, 0.0), invalid_argument);
}

TEST(Discretize, RoundTripWithinHalfBin) {
    Rng rng(1);
    for (int t = 0; t < 2000; ++t) {
        const double v = rng.uniform(-1.0, 1.0);
        EXPECT_LE(std::abs(bin_center(discretize(v, 9, 1.0).bin, 9, 1.0) - v), 1.0 / 9.0 + 1e-15);
    }
}

TEST(PolicyAct, Examples) {
    const PolicyHead head;
    const std::vector<double> scan(4, 0.5);
    EXPECT_NEAR(policy_act(constant_net(std::vector<double>(9, 0.0)), scan, head), 0.0, 1e-15);

    std::vector<double> top(9, -1000.0);
    top[8] = 0.0;
    // Bin 8 is the top bin; its midpoint is 8/9 v_max.
    EXPECT_NEAR(policy_act(constant_net(top), scan, head), bin_center(8, 9, 1.0), 1e-12);

    std::vector<double> two(9, -1000.0);
    two[3] = two[5] = 0.0;
    EXPECT_NEAR(policy_act(constant_net(two), scan, head), 0.0, 1e-15);

    EXPECT_THROW(policy_act(constant_net(std::vector<double>(9, 0.0)), std::vector<double>(5, 0.5), head), invalid_argument);
    EXPECT_THROW(policy_act(constant_net(std::vector<double>(3, 0.0)), scan, head), invalid_argument);
}

TEST(PolicyAct, BoundedForAnySoftmax) {
    Rng rng(2);
    const PolicyHead head;
    for (int t = 0; t < 200; ++t) {
        std::vector<double> logits(9);
        for (auto& l : logits) l = rng.normal(0.0, 5.0);
        EXPECT_LE(std::abs(policy_act(constant_net(logits), std::vector<double>(4, 0.1), head)), head.v_max);
    }
}

TEST(PolicyHead, CoarseCentersAndMeta) {
    PolicyHead h;
    h.space = LabelSpace::coarse3;
    EXPECT_EQ(h.classes(), 3u);
    EXPECT_EQ(h.center(0), -0.5);
    EXPECT_EQ(h.center(1), 0.0);
    EXPECT_EQ(h.center(2), 0.5);
    EXPECT_EQ(h.label_of(-0.5), 0u);
    EXPECT_EQ(h.label_of(0.5), 2u);
    const auto back = PolicyHead::from_meta(h.to_meta());
    EXPECT_EQ(back.space, h.space);
    EXPECT_EQ(back.bins, h.bins);
    EXPECT_EQ(back.v_max, h.v_max);
}

TEST(ResampleScan, PreservesConstantsAndMean) {
    EXPECT_EQ(resample_scan(std::vector<double>{0.1, 0.2, 0.3}, 3), (std::vector<double>{0.1, 0.2, 0.3}));
    for (double v : resample_scan(std::vector<double>(96, 0.4), 64)) EXPECT_NEAR(v, 0.4, 1e-15);
    Rng rng(3);
    std::vector<double> s(96);
    for (auto& v : s) v = rng.uniform();
    const auto r = resample_scan(s, 64);
    double a = 0.0, b = 0.0;
    for (double v : s) a += v;
    for (double v : r) b += v;
    EXPECT_NEAR(a / 96.0, b / 64.0, 1e-12);
}

TEST(BehaviorClone, Examples) {
    const auto env = low_env();
    const sim::ExpertConfig ex;
    EXPECT_TRUE(behavior_clone(env, ex, 0.0, 1).empty());
    const auto d = behavior_clone(env, ex, 1000.0, 1);
    EXPECT_NEAR(static_cast<double>(d.size()), 1000.0 / 1.5 * 15.0, 10.0);
    EXPECT_EQ(d.width(), env.domain.sensor.width);
    for (const auto& r : d.records) {
        ASSERT_TRUE(r.velocity.has_value());
        EXPECT_LE(std::abs(*r.velocity), env.domain.dynamics.max_lateral);
        EXPECT_EQ(r.domain, "test");
    }
    EXPECT_NO_THROW(validate(d));
    EXPECT_EQ(d, behavior_clone(env, ex, 1000.0, 1));
}

TEST(BehaviorClone, CoarseLabels) {
    const auto d = behavior_clone(low_env(), sim::ExpertConfig{}, 100.0, 2, LabelSpace::coarse3);
    EXPECT_EQ(d.label_space, LabelSpace::coarse3);
    bool saw_turn = false;
    for (const auto& r : d.records) {
        const double v = *r.velocity;
        EXPECT_TRUE(v == -0.5 || v == 0.0 || v == 0.5);
        saw_turn |= v != 0.0;
    }
    EXPECT_TRUE(saw_turn);
}

TEST(UnlabeledScans, CarryNoLabels) {
    const auto d = unlabeled_scans(low_env(), 50.0, 3);
    EXPECT_GT(d.size(), 0u);
    for (const auto& r : d.records) EXPECT_FALSE(r.velocity.has_value());
    EXPECT_EQ(labeled_data(d, PolicyHead{}).x.rows(), 0u);
    EXPECT_EQ(scans_matrix(d).rows(), d.size());
}

TEST(Jsonl, RoundTripIsExact) {
    auto d = behavior_clone(low_env(), sim::ExpertConfig{}, 20.0, 4);
    d.append(unlabeled_scans(low_env(), 5.0, 5));
    std::stringstream ss;
    write_jsonl(ss, d);
    EXPECT_EQ(read_jsonl(ss), d);

    const auto c = behavior_clone(low_env(), sim::ExpertConfig{}, 20.0, 4, LabelSpace::coarse3);
    std::stringstream cs;
    write_jsonl(cs, c);
    EXPECT_EQ(read_jsonl(cs), c);
}

TEST(Jsonl, RejectsInvalidRecords) {
    std::stringstream mixed(R"({"scan":[0.1,0.2],"velocity":0.1,"domain":"a"}
{"scan":[0.1,0.2,0.3],"velocity":0.1,"domain":"a"}
)");
    EXPECT_THROW(read_jsonl(mixed), invalid_argument);
    std::stringstream fast(R"({"scan":[0.1,0.2],"velocity":1.5,"domain":"a"})");
    EXPECT_THROW(read_jsonl(fast), invalid_argument);
    std::stringstream bright(R"({"scan":[0.1,1.2],"velocity":0.0,"domain":"a"})");
    EXPECT_THROW(read_jsonl(bright), invalid_argument);
    std::stringstream coarse(R"({"scan":[0.1,0.2],"velocity":0.3,"domain":"a","label":"right"})");
    EXPECT_THROW(read_jsonl(coarse), invalid_argument);
    std::stringstream junk("not json\n");
    EXPECT_THROW(read_jsonl(junk), invalid_argument);
}

TEST(WithMirrors, ReversesScansAndNegatesLabels) {
    const auto d = behavior_clone(low_env(), sim::ExpertConfig{}, 10.0, 6);
    const auto m = with_mirrors(d);
    ASSERT_EQ(m.size(), 2 * d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        EXPECT_EQ(m.records[i], d.records[i]);
        const auto& r = m.records[d.size() + i];
        EXPECT_EQ(*r.velocity, -*d.records[i].velocity);
        EXPECT_TRUE(std::equal(r.scan.begin(), r.scan.end(), d.records[i].scan.rbegin()));
    }
}

TEST(Dagger, SingleExpertIterationIsBehaviorCloning) {
    const auto env = low_env();
    const sim::ExpertConfig ex;
    DaggerConfig c;
    c.iterations = 1;
    c.beta = {1.0};
    c.meters_per_iteration = 60.0;
    c.train.steps = 20;
    const auto r = dagger(env, ex, PolicyHead{}, c, 9);
    EXPECT_EQ(r.aggregate, behavior_clone(env, ex, 60.0, derive_seed(9, {0xDA66ULL, 0})));
}

TEST(Dagger, AggregateIsAppendOnly) {
    const auto env = low_env();
    const sim::ExpertConfig ex;
    DaggerConfig c;
    c.iterations = 3;
    c.meters_per_iteration = 40.0;
    c.train.steps = 50;
    const auto r = dagger(env, ex, PolicyHead{}, c, 10);
    std::size_t total = 0;
    for (auto n : r.records_per_iteration) total += n;
    EXPECT_EQ(r.aggregate.size(), total);
    c.iterations = 2;
    const auto shorter = dagger(env, ex, PolicyHead{}, c, 10);
    ASSERT_LE(shorter.aggregate.size(), r.aggregate.size());
    EXPECT_TRUE(std::equal(shorter.aggregate.records.begin(), shorter.aggregate.records.end(), r.aggregate.records.begin()));
}

TEST(Dagger, RejectsBadSchedules) {
    DaggerConfig c;
    c.iterations = 0;
    EXPECT_THROW(dagger(low_env(), {}, PolicyHead{}, c, 1), invalid_argument);
    c = {};
    c.beta = {0.5, 0.5, 0.25};
    EXPECT_THROW(dagger(low_env(), {}, PolicyHead{}, c, 1), invalid_argument);
    c = {};
    c.beta = {1.0, 0.5, 0.75};
    EXPECT_THROW(dagger(low_env(), {}, PolicyHead{}, c, 1), invalid_argument);
    c = {};
    c.beta = {1.0, 0.5};
    EXPECT_THROW(dagger(low_env(), {}, PolicyHead{}, c, 1), invalid_argument);
}

TEST(Dagger, NotWorseThanBehaviorCloningOnPairedWorlds) {
    const Env env = low_env();
    const sim::ExpertConfig ex;
    const PolicyHead head;
    DaggerConfig c;
    c.meters_per_iteration = 1000.0;
    c.train.steps = 6000;
    c.train.base_lr = 0.1;
    c.train.seed = 5;
    c.init_seed = 4;
    c.mirror_augment = true;
    const auto dg = dagger(env, ex, head, c, 2);
    // Same total demonstration budget, same trainer.
    const auto bc = fit_policy(with_mirrors(behavior_clone(env, ex, 3000.0, derive_seed(2, {0xBCULL}))), head, c.train, 4);

    const auto worlds = harness::make_worlds(world_params_for(env), 1, 50, false);
    const auto a = harness::distances(harness::evaluate(harness::network_factory(dg.net, head), worlds, env.domain, 200.0, 6));
    const auto b = harness::distances(harness::evaluate(harness::network_factory(bc, head), worlds, env.domain, 200.0, 6));
    EXPECT_GE(harness::mean(a), harness::mean(b));
}
