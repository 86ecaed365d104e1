#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "dapol/harness.hpp"

using namespace dapol;
using namespace dapol::harness;
using Json = nlohmann::json;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("dapol_test_" + name);
    std::filesystem::remove_all(p);
    return p;
}

Json card(const std::string& kind, std::size_t episodes, double mean, std::size_t passed, std::size_t hit) {
    return {{"kind", kind}, {"mean_distance", mean}, {"episodes", episodes}, {"trees_avoided_rate", 0.5},
            {"trees_passed", passed}, {"trees_hit", hit}};
}

Json report(const std::string& scenario, std::vector<Json> cards, double p) {
    return {{"schema_version", kReportSchemaVersion}, {"scenario", scenario}, {"density", "low"}, {"policies", cards},
            {"dan_vs_source_only", {{"p_value", p}}}};
}

ExperimentConfig tiny_config() {
    ExperimentConfig c;
    c.demo_method = DemoMethod::behavior_clone;
    c.demo_meters = 60.0;
    c.unlabeled_meters = 30.0;
    c.eval_meters_total = 60.0;
    c.n_eval_worlds = 3;
    c.n_val_worlds = 2;
    c.lambda_grid = {0.1, 1.0};
    c.pretrain_steps = 30;
    c.dan.steps = 20;
    return c;
}

}  // namespace

TEST(Config, RoundTripAndStrictKeys) {
    ExperimentConfig c = tiny_config();
    c.dan.bank_policy = dan::BankPolicy::first_batch;
    c.seeds.eval = 99;
    c.mirror_augment = false;
    const auto back = config_from_json(to_json(c));
    EXPECT_EQ(to_json(back).dump(), to_json(c).dump());

    auto j = to_json(c);
    j["lambda_gird"] = {0.1};
    EXPECT_THROW(config_from_json(j), invalid_argument);
    j = to_json(c);
    j["schema_version"] = 2;
    EXPECT_THROW(config_from_json(j), invalid_argument);
    j = to_json(c);
    j["density"] = "medium";
    EXPECT_THROW(config_from_json(j), invalid_argument);
    j = to_json(c);
    j["dan"]["bank_policy"] = "sometimes";
    EXPECT_THROW(config_from_json(j), invalid_argument);
    j = to_json(c);
    j["scenario"] = "monsoon";
    EXPECT_THROW(config_from_json(j), invalid_argument);
}

TEST(SignTest, Examples) {
    const auto all = sign_test({2, 3, 4, 5, 6}, {1, 1, 1, 1, 1});
    EXPECT_EQ(all.wins, 5u);
    EXPECT_NEAR(all.p_value, 1.0 / 32.0, 1e-15);

    const auto ties = sign_test({1, 1, 2}, {1, 1, 1});
    EXPECT_EQ(ties.ties, 2u);
    EXPECT_NEAR(ties.p_value, 0.5, 1e-15);

    EXPECT_EQ(sign_test({1, 2}, {1, 2}).p_value, 1.0);
    // 8 wins, 2 losses: P(W >= 8) = (45 + 10 + 1) / 1024.
    EXPECT_NEAR(sign_test({1, 1, 1, 1, 1, 1, 1, 1, 0, 0}, {0, 0, 0, 0, 0, 0, 0, 0, 1, 1}).p_value, 56.0 / 1024.0, 1e-14);
    EXPECT_THROW(sign_test({1}, {1, 2}), invalid_argument);
}

TEST(Summarize, SingleReportIsIdentityPlusTotals) {
    const auto r = report("weather", {card("random", 5, 10.0, 3, 5), card("dan_adapted", 5, 50.0, 30, 2)}, 0.03);
    const auto rows = summarize({r});
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(rows[0].policy, "random");
    EXPECT_EQ(rows[0].mean_distance, 10.0);
    EXPECT_EQ(rows[1].p_value, 0.03);
    EXPECT_EQ(rows[2].scenario, "total");
    EXPECT_EQ(rows[3].mean_distance, 50.0);
    EXPECT_FALSE(rows[3].has_p);
}

TEST(Summarize, TotalsAreEpisodeWeighted) {
    const auto a = report("weather", {card("dan_adapted", 10, 20.0, 10, 10)}, 0.1);
    const auto b = report("sanity_gamma", {card("dan_adapted", 30, 60.0, 30, 0)}, 0.2);
    const auto rows = summarize({a, b});
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[2].episodes, 40u);
    EXPECT_NEAR(rows[2].mean_distance, 50.0, 1e-12);
    EXPECT_NEAR(rows[2].trees_avoided_rate, 40.0 / 50.0, 1e-15);
}

TEST(Summarize, RejectsEmptyAndForeignInput) {
    EXPECT_THROW(summarize({}), invalid_argument);
    EXPECT_THROW(summarize({Json{{"schema_version", 7}}}), invalid_argument);
}

TEST(Replay, SamePolicyTwiceAgrees) {
    const auto net = nn::init_network(imitation::default_policy_arch(64, 9), 3);
    const imitation::PolicyHead head;
    const auto world = sim::generate_world(sim::WorldParams{}, 5);
    const auto log = replay(net, head, net, head, world, sim::DomainConfig{}, 40.0, 1);
    ASSERT_FALSE(log.empty());
    for (const auto& t : log) EXPECT_EQ(t.command_a, t.command_b);
    std::ostringstream csv;
    write_replay_csv(csv, log);
    EXPECT_EQ(csv.str().rfind("tick,x,y,v_lat,command,command_b,crashed\n", 0), 0u);
    EXPECT_NE(replay_svg(log, 1.0).find("<polyline"), std::string::npos);
}

TEST(Replay, EmptyWorldKeepsCommandsConstant) {
    const auto net = nn::init_network(imitation::default_policy_arch(64, 9), 4);
    const auto other = nn::init_network(imitation::default_policy_arch(64, 9), 5);
    sim::ForestWorld world;
    world.params.length = 30.0;
    sim::DomainConfig dom;
    dom.sensor.noise_std = 0.0;
    dom.appearance.clutter_rate = 0.0;
    const auto log = replay(net, {}, other, {}, world, dom, 30.0, 2);
    ASSERT_GT(log.size(), 10u);
    for (const auto& t : log) {
        EXPECT_EQ(t.command_a, log[0].command_a);
        EXPECT_EQ(t.command_b, log[0].command_b);
    }
    const auto narrow = nn::init_network(imitation::default_policy_arch(96, 9), 5);
    EXPECT_THROW(replay(net, {}, narrow, {}, world, dom, 30.0, 2), invalid_argument);
}

TEST(Evaluate, PairsWorldsAndIsThreadInvariant) {
    const auto worlds = make_worlds(sim::WorldParams{}, 1, 4, false);
    const sim::DomainConfig dom;
    const auto one = evaluate(random_factory(1.0), worlds, dom, 30.0, 6, 1);
    const auto four = evaluate(random_factory(1.0), worlds, dom, 30.0, 6, 4);
    ASSERT_EQ(one.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(one[i].world_seed, worlds[i].seed);
        EXPECT_EQ(one[i].distance, four[i].distance);
        EXPECT_LE(one[i].distance, 30.0 + 0.1 + 1e-9);
    }
}

TEST(Experiment, SmallRunWritesArtifactsAndIsDeterministic) {
    const auto cfg = tiny_config();
    const auto a = temp_dir("exp_a"), b = temp_dir("exp_b");
    const auto rep = run_experiment(cfg, a);
    run_experiment(cfg, b);
    ASSERT_EQ(rep.cards.size(), 4u);
    EXPECT_EQ(rep.cards[0].kind, "random");
    EXPECT_EQ(rep.cards[0].checkpoint, "");
    EXPECT_EQ(rep.lambda_trials.size(), 2u);
    EXPECT_EQ(rep.max_dist, 20.0);

    const auto episodes = io::read_file((a / "episodes.csv").string());
    EXPECT_EQ(std::count(episodes.begin(), episodes.end(), '\n'), 1 + 4 * 3);
    for (const char* f : {"episodes.csv", "policies.csv", "summary.json", "lambda_selection.csv", "source_only_history.csv",
                          "dan_adapted_history.csv", "resolved_config.json", "scenario.json"})
        EXPECT_EQ(io::read_file((a / f).string()), io::read_file((b / f).string())) << f;
    for (const char* f : {"source_only.ckpt", "dan_adapted.ckpt", "target_oracle.ckpt"}) EXPECT_TRUE(std::filesystem::exists(a / f)) << f;

    const auto summary = Json::parse(io::read_file((a / "summary.json").string()));
    EXPECT_EQ(summarize({summary}).size(), 8u);
    std::filesystem::remove_all(a);
    std::filesystem::remove_all(b);
}
