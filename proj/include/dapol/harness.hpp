#pragma once

// Experiment orchestration: configuration, the four-policy pipeline, paired
// evaluation, reports, replay and summaries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dapol/checkpoint.hpp"
#include "dapol/dan.hpp"
#include "dapol/error.hpp"
#include "dapol/imitation.hpp"
#include "dapol/io.hpp"
#include "dapol/rng.hpp"
#include "dapol/scenarios.hpp"
#include "dapol/sim.hpp"

namespace dapol::harness {

using json = nlohmann::ordered_json;

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr int kReportSchemaVersion = 1;

namespace detail {

/// Throws on keys outside `allowed`, so typos in config files surface early.
inline void check_keys(const nlohmann::json& j, const std::string& where, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw invalid_argument(where + ": expected an object");
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) throw invalid_argument(where + ": unknown key '" + k + "'");
}

template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
    if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

}  // namespace detail

// ---- worlds and trajectories -------------------------------------------------

inline json world_to_json(const sim::ForestWorld& w) {
    json j;
    j["schema_version"] = 1;
    j["seed"] = w.seed;
    const auto& p = w.params;
    j["params"] = {{"density", p.density},       {"half_width", p.half_width},   {"length", p.length},
                   {"radius_min", p.radius_min}, {"radius_max", p.radius_max},   {"radius_scale", p.radius_scale},
                   {"drone_radius", p.drone_radius}, {"start_clear", p.start_clear}};
    json trees = json::array();
    for (const auto& t : w.trees) trees.push_back({{"x", t.x}, {"y", t.y}, {"radius", t.radius}, {"appearance", t.appearance}});
    j["trees"] = std::move(trees);
    return j;
}

inline sim::ForestWorld world_from_json(const nlohmann::json& j) {
    if (j.value("schema_version", -1) != 1) throw invalid_argument("world: unsupported schema_version");
    sim::ForestWorld w;
    w.seed = j.at("seed").get<std::uint64_t>();
    const auto& p = j.at("params");
    detail::check_keys(p, "world.params",
                       {"density", "half_width", "length", "radius_min", "radius_max", "radius_scale", "drone_radius",
                        "start_clear"});
    detail::get_if(p, "density", w.params.density);
    detail::get_if(p, "half_width", w.params.half_width);
    detail::get_if(p, "length", w.params.length);
    detail::get_if(p, "radius_min", w.params.radius_min);
    detail::get_if(p, "radius_max", w.params.radius_max);
    detail::get_if(p, "radius_scale", w.params.radius_scale);
    detail::get_if(p, "drone_radius", w.params.drone_radius);
    detail::get_if(p, "start_clear", w.params.start_clear);
    for (const auto& t : j.at("trees"))
        w.trees.push_back({t.at("x").get<double>(), t.at("y").get<double>(), t.at("radius").get<double>(),
                           t.value("appearance", 0.5)});
    std::stable_sort(w.trees.begin(), w.trees.end(), [](const sim::Tree& a, const sim::Tree& b) { return a.y < b.y; });
    return w;
}

inline void save_world(const std::string& path, const sim::ForestWorld& w) { io::write_file(path, world_to_json(w).dump(2) + "\n"); }

inline sim::ForestWorld load_world(const std::string& path) {
    try {
        return world_from_json(nlohmann::json::parse(io::read_file(path)));
    } catch (const nlohmann::json::exception& e) {
        throw invalid_argument("world file " + path + ": " + e.what());
    }
}

/// tick, x, y, v_lat, command, crashed; one row per issued command.
inline void write_trajectory_csv(std::ostream& os, const sim::EpisodeResult& r) {
    io::CsvWriter w(os);
    w.header({"tick", "x", "y", "v_lat", "command", "crashed"});
    for (std::size_t i = 0; i < r.commands.size(); ++i) {
        const auto& s = r.trajectory[i];
        const bool crashed = r.crashed && i + 1 == r.commands.size();
        w.row(s.tick, s.x, s.y, s.v_lat, r.commands[i], crashed ? 1 : 0);
    }
}

// ---- configuration -------------------------------------------------------------

struct Seeds {
    std::uint64_t world = 1;      ///< test and validation worlds
    std::uint64_t demos = 2;      ///< source (and oracle) demonstrations
    std::uint64_t unlabeled = 3;  ///< target random rollouts
    std::uint64_t init = 4;       ///< network initialisation, shared by every trained policy
    std::uint64_t train = 5;      ///< minibatch streams
    std::uint64_t eval = 6;       ///< per-episode render and dynamics streams
};

enum class DemoMethod { behavior_clone, dagger };

struct ExperimentConfig {
    std::string scenario = "sanity_gamma";
    std::string density = "low";  ///< low: scenario densities; high: target density 1/9
    double demo_meters = 1000.0;
    DemoMethod demo_method = DemoMethod::dagger;
    std::size_t dagger_iterations = 3;
    std::vector<double> dagger_beta{1.0, 0.5, 0.25};
    bool mirror_augment = true;  ///< train on demos plus their left-right mirrors
    double unlabeled_meters = 1000.0;
    double eval_meters_total = 1000.0;  ///< per policy, split evenly across eval worlds
    std::size_t n_eval_worlds = 5;
    std::size_t n_val_worlds = 10;
    std::vector<double> lambda_grid{0.1, 0.3, 1.0};
    std::size_t pretrain_steps = 8000;  ///< supervised source steps shared by source_only and dan_adapted
    dan::DanConfig dan{};               ///< second phase; lambda unused here, the grid decides
    sim::ExpertConfig expert{};
    Seeds seeds{};
    std::size_t threads = 1;
    bool save_datasets = false;
};

inline const char* to_string(DemoMethod m) { return m == DemoMethod::dagger ? "dagger" : "behavior_clone"; }

inline json dan_to_json(const dan::DanConfig& d) {
    json j;
    j["lambda"] = d.lambda;
    j["batch_size"] = d.batch_size;
    j["steps"] = d.steps;
    j["base_lr"] = d.base_lr;
    j["finetune_multiplier"] = d.roles.finetune;
    j["adapt_multiplier"] = d.roles.adapt;
    if (d.adapt_range) j["adapt_range"] = {d.adapt_range->first, d.adapt_range->second};
    else j["adapt_range"] = nullptr;
    j["bank_policy"] = d.bank_policy == dan::BankPolicy::first_batch ? "first_batch" : "per_batch_median";
    return j;
}

inline dan::DanConfig dan_from_json(const nlohmann::json& j, dan::DanConfig d = {}) {
    detail::check_keys(j, "dan", {"lambda", "batch_size", "steps", "base_lr", "finetune_multiplier", "adapt_multiplier", "adapt_range",
                                 "bank_policy"});
    detail::get_if(j, "lambda", d.lambda);
    detail::get_if(j, "batch_size", d.batch_size);
    detail::get_if(j, "steps", d.steps);
    detail::get_if(j, "base_lr", d.base_lr);
    detail::get_if(j, "finetune_multiplier", d.roles.finetune);
    detail::get_if(j, "adapt_multiplier", d.roles.adapt);
    if (auto it = j.find("adapt_range"); it != j.end()) {
        if (it->is_null()) d.adapt_range.reset();
        else {
            const auto r = it->get<std::vector<std::size_t>>();
            if (r.size() != 2) throw invalid_argument("dan.adapt_range must be [first, last]");
            d.adapt_range = std::pair{r[0], r[1]};
        }
    }
    if (auto it = j.find("bank_policy"); it != j.end()) {
        const auto p = it->get<std::string>();
        if (p == "per_batch_median") d.bank_policy = dan::BankPolicy::per_batch_median;
        else if (p == "first_batch") d.bank_policy = dan::BankPolicy::first_batch;
        else throw invalid_argument("dan.bank_policy must be per_batch_median or first_batch");
    }
    dan::validate(d);
    return d;
}

inline json to_json(const ExperimentConfig& c) {
    json j;
    j["schema_version"] = kConfigSchemaVersion;
    j["scenario"] = c.scenario;
    j["density"] = c.density;
    j["demo_meters"] = c.demo_meters;
    j["demo_method"] = to_string(c.demo_method);
    j["dagger_iterations"] = c.dagger_iterations;
    j["dagger_beta"] = c.dagger_beta;
    j["mirror_augment"] = c.mirror_augment;
    j["unlabeled_meters"] = c.unlabeled_meters;
    j["eval_meters_total"] = c.eval_meters_total;
    j["n_eval_worlds"] = c.n_eval_worlds;
    j["n_val_worlds"] = c.n_val_worlds;
    j["lambda_grid"] = c.lambda_grid;
    j["pretrain_steps"] = c.pretrain_steps;
    j["dan"] = dan_to_json(c.dan);
    j["expert"] = {{"lookahead", c.expert.lookahead},
                   {"gain", c.expert.gain},
                   {"margin", c.expert.margin},
                   {"sweep_speed", c.expert.sweep_speed}};
    j["seeds"] = {{"world", c.seeds.world}, {"demos", c.seeds.demos}, {"unlabeled", c.seeds.unlabeled},
                  {"init", c.seeds.init},   {"train", c.seeds.train}, {"eval", c.seeds.eval}};
    j["threads"] = c.threads;
    j["save_datasets"] = c.save_datasets;
    return j;
}

inline void validate(const ExperimentConfig& c) {
    scenarios::build_scenario(c.scenario);
    if (c.density != "low" && c.density != "high") throw invalid_argument("config: density must be 'low' or 'high'");
    if (!(c.demo_meters > 0.0) || !(c.unlabeled_meters > 0.0) || !(c.eval_meters_total > 0.0))
        throw invalid_argument("config: distances must be positive");
    if (c.n_eval_worlds == 0) throw invalid_argument("config: n_eval_worlds must be positive");
    if (c.lambda_grid.empty()) throw invalid_argument("config: lambda_grid is empty");
    for (double l : c.lambda_grid)
        if (!(l >= 0.0)) throw invalid_argument("config: lambda values must be non-negative");
    if (c.lambda_grid.size() > 1 && c.n_val_worlds == 0) throw invalid_argument("config: lambda selection needs validation worlds");
    if (c.threads == 0) throw invalid_argument("config: threads must be at least 1");
    dan::validate(c.dan);
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    detail::check_keys(j, "config",
                       {"schema_version", "scenario", "density", "demo_meters", "demo_method", "dagger_iterations", "mirror_augment",
                        "dagger_beta", "unlabeled_meters", "eval_meters_total", "n_eval_worlds", "n_val_worlds",
                        "lambda_grid", "pretrain_steps", "dan", "expert", "seeds", "threads", "save_datasets"});
    if (j.value("schema_version", -1) != kConfigSchemaVersion)
        throw invalid_argument("config: schema_version must be " + std::to_string(kConfigSchemaVersion));
    ExperimentConfig c;
    detail::get_if(j, "scenario", c.scenario);
    detail::get_if(j, "density", c.density);
    detail::get_if(j, "demo_meters", c.demo_meters);
    if (auto it = j.find("demo_method"); it != j.end()) {
        const auto m = it->get<std::string>();
        if (m == "dagger") c.demo_method = DemoMethod::dagger;
        else if (m == "behavior_clone") c.demo_method = DemoMethod::behavior_clone;
        else throw invalid_argument("config: unknown demo_method '" + m + "'");
    }
    detail::get_if(j, "dagger_iterations", c.dagger_iterations);
    detail::get_if(j, "dagger_beta", c.dagger_beta);
    detail::get_if(j, "unlabeled_meters", c.unlabeled_meters);
    detail::get_if(j, "eval_meters_total", c.eval_meters_total);
    detail::get_if(j, "n_eval_worlds", c.n_eval_worlds);
    detail::get_if(j, "n_val_worlds", c.n_val_worlds);
    detail::get_if(j, "lambda_grid", c.lambda_grid);
    detail::get_if(j, "pretrain_steps", c.pretrain_steps);
    if (auto it = j.find("dan"); it != j.end()) c.dan = dan_from_json(*it);
    if (auto it = j.find("expert"); it != j.end()) {
        detail::check_keys(*it, "expert", {"lookahead", "gain", "margin", "sweep_speed"});
        detail::get_if(*it, "lookahead", c.expert.lookahead);
        detail::get_if(*it, "gain", c.expert.gain);
        detail::get_if(*it, "margin", c.expert.margin);
        detail::get_if(*it, "sweep_speed", c.expert.sweep_speed);
    }
    if (auto it = j.find("seeds"); it != j.end()) {
        detail::check_keys(*it, "seeds", {"world", "demos", "unlabeled", "init", "train", "eval"});
        detail::get_if(*it, "world", c.seeds.world);
        detail::get_if(*it, "demos", c.seeds.demos);
        detail::get_if(*it, "unlabeled", c.seeds.unlabeled);
        detail::get_if(*it, "init", c.seeds.init);
        detail::get_if(*it, "train", c.seeds.train);
        detail::get_if(*it, "eval", c.seeds.eval);
    }
    detail::get_if(j, "threads", c.threads);
    detail::get_if(j, "save_datasets", c.save_datasets);
    detail::get_if(j, "mirror_augment", c.mirror_augment);
    validate(c);
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    try {
        return config_from_json(nlohmann::json::parse(io::read_file(path)));
    } catch (const nlohmann::json::exception& e) {
        throw invalid_argument("config " + path + ": " + e.what());
    }
}

/// Scenario with the density regime applied.
inline scenarios::Scenario resolve_scenario(const ExperimentConfig& c) {
    auto s = scenarios::build_scenario(c.scenario);
    if (c.density == "high") s.target.density = scenarios::kHighDensity;
    return s;
}

// ---- statistics ----------------------------------------------------------------

struct SignTest {
    std::size_t wins = 0;
    std::size_t losses = 0;
    std::size_t ties = 0;
    double p_value = 1.0;  ///< P(W >= wins) under Binomial(wins + losses, 1/2)
};

/// One-sided paired sign test of "a > b"; ties are dropped.
inline SignTest sign_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw invalid_argument("sign_test: unpaired samples");
    SignTest t;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] > b[i]) ++t.wins;
        else if (a[i] < b[i]) ++t.losses;
        else ++t.ties;
    }
    const std::size_t n = t.wins + t.losses;
    if (n == 0) return t;
    double p = 0.0;
    for (std::size_t k = t.wins; k <= n; ++k) {
        const double lc = std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
                          std::lgamma(static_cast<double>(n - k) + 1.0);
        p += std::exp(lc - static_cast<double>(n) * std::log(2.0));
    }
    t.p_value = std::min(1.0, p);
    return t;
}

// ---- evaluation ----------------------------------------------------------------

struct EpisodeRow {
    std::size_t world_index = 0;
    std::uint64_t world_seed = 0;
    double distance = 0.0;
    bool crashed = false;
    std::size_t trees_passed = 0;
    std::size_t trees_hit = 0;
};

/// Factory so that every episode gets its own policy object (random policies
/// derive their stream from the episode seed).
using PolicyFactory = std::function<sim::Policy(std::uint64_t episode_seed)>;

inline std::uint64_t test_world_seed(std::uint64_t base, std::size_t i) { return derive_seed(base, {0x7E57ULL, i}); }
inline std::uint64_t val_world_seed(std::uint64_t base, std::size_t i) { return derive_seed(base, {0x7A11DULL, i}); }
inline std::uint64_t episode_seed(std::uint64_t base, std::size_t i) { return derive_seed(base, {0xE9ULL, i}); }

/// Flies one policy over the given worlds. Episode i always uses world i and
/// episode seed i, whichever policy flies, so results pair across policies.
inline std::vector<EpisodeRow> evaluate(const PolicyFactory& make_policy, const std::vector<sim::ForestWorld>& worlds,
                                        const sim::DomainConfig& domain, double max_dist, std::uint64_t eval_seed,
                                        std::size_t threads = 1) {
    std::vector<EpisodeRow> rows(worlds.size());
    auto run = [&](std::size_t i) {
        const auto seed = episode_seed(eval_seed, i);
        const auto r = sim::run_episode(make_policy(seed), worlds[i], domain, std::min(max_dist, worlds[i].params.length), seed);
        rows[i] = {i, worlds[i].seed, r.distance_flown, r.crashed, r.trees_passed, r.trees_hit};
    };
    threads = std::max<std::size_t>(1, std::min(threads, worlds.size()));
    if (threads == 1) {
        for (std::size_t i = 0; i < worlds.size(); ++i) run(i);
        return rows;
    }
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            for (std::size_t i = t; i < worlds.size(); i += threads) run(i);
        });
    for (auto& th : pool) th.join();
    return rows;
}

struct PolicyCard {
    std::string kind;  ///< random | source_only | dan_adapted | target_oracle
    std::string checkpoint;
    double mean_distance = 0.0;
    double trees_avoided_rate = 0.0;
    std::size_t episodes = 0;
    std::size_t trees_passed = 0;
    std::size_t trees_hit = 0;
    std::size_t crashes = 0;
};

inline PolicyCard make_card(const std::string& kind, const std::string& checkpoint, const std::vector<EpisodeRow>& rows) {
    PolicyCard c{kind, checkpoint};
    c.episodes = rows.size();
    for (const auto& r : rows) {
        c.mean_distance += r.distance;
        c.trees_passed += r.trees_passed;
        c.trees_hit += r.trees_hit;
        c.crashes += r.crashed ? 1 : 0;
    }
    if (c.episodes) c.mean_distance /= static_cast<double>(c.episodes);
    const auto seen = c.trees_passed + c.trees_hit;
    c.trees_avoided_rate = seen ? static_cast<double>(c.trees_passed) / static_cast<double>(seen) : 1.0;
    return c;
}

inline json card_to_json(const PolicyCard& c) {
    return {{"kind", c.kind},
            {"checkpoint", c.checkpoint},
            {"mean_distance", c.mean_distance},
            {"trees_avoided_rate", c.trees_avoided_rate},
            {"episodes", c.episodes},
            {"trees_passed", c.trees_passed},
            {"trees_hit", c.trees_hit},
            {"crashes", c.crashes}};
}

inline std::vector<double> distances(const std::vector<EpisodeRow>& rows) {
    std::vector<double> d;
    d.reserve(rows.size());
    for (const auto& r : rows) d.push_back(r.distance);
    return d;
}

inline double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline std::vector<sim::ForestWorld> make_worlds(const sim::WorldParams& p, std::uint64_t base, std::size_t n, bool validation) {
    std::vector<sim::ForestWorld> w;
    w.reserve(n);
    for (std::size_t i = 0; i < n; ++i) w.push_back(sim::generate_world(p, validation ? val_world_seed(base, i) : test_world_seed(base, i)));
    return w;
}

inline PolicyFactory network_factory(const nn::Network& net, const imitation::PolicyHead& head) {
    auto pol = imitation::network_policy(net, head);
    return [pol](std::uint64_t) { return pol; };
}

inline PolicyFactory random_factory(double v_max) {
    return [v_max](std::uint64_t seed) { return sim::random_policy(derive_seed(seed, {0x4A4DULL}), v_max); };
}

// ---- experiment ------------------------------------------------------------------

struct LambdaTrial {
    double lambda = 0.0;
    double val_mean_distance = 0.0;
};

struct ExperimentReport {
    std::string scenario;
    std::string density;
    std::vector<PolicyCard> cards;                       ///< random, source_only, dan_adapted, target_oracle
    std::map<std::string, std::vector<EpisodeRow>> episodes;
    std::vector<LambdaTrial> lambda_trials;
    double selected_lambda = 0.0;
    SignTest dan_vs_source;
    double max_dist = 0.0;
};

inline const std::vector<std::string>& policy_kinds() {
    static const std::vector<std::string> k{"random", "source_only", "dan_adapted", "target_oracle"};
    return k;
}

inline json report_to_json(const ExperimentReport& r) {
    json j;
    j["schema_version"] = kReportSchemaVersion;
    j["scenario"] = r.scenario;
    j["density"] = r.density;
    j["max_distance_per_episode"] = r.max_dist;
    json cards = json::array();
    for (const auto& c : r.cards) cards.push_back(card_to_json(c));
    j["policies"] = std::move(cards);
    json trials = json::array();
    for (const auto& t : r.lambda_trials) trials.push_back({{"lambda", t.lambda}, {"val_mean_distance", t.val_mean_distance}});
    j["lambda_selection"] = {{"trials", std::move(trials)}, {"selected", r.selected_lambda}};
    j["dan_vs_source_only"] = {{"wins", r.dan_vs_source.wins},
                               {"losses", r.dan_vs_source.losses},
                               {"ties", r.dan_vs_source.ties},
                               {"p_value", r.dan_vs_source.p_value},
                               {"margin", r.cards.size() == 4 ? r.cards[2].mean_distance - r.cards[1].mean_distance : 0.0}};
    return j;
}

inline void write_episodes_csv(std::ostream& os, const ExperimentReport& r) {
    io::CsvWriter w(os);
    w.header({"policy", "world_index", "world_seed", "distance", "crashed", "trees_passed", "trees_hit"});
    for (const auto& kind : policy_kinds()) {
        const auto it = r.episodes.find(kind);
        if (it == r.episodes.end()) continue;
        for (const auto& e : it->second)
            w.row(kind, e.world_index, e.world_seed, e.distance, e.crashed ? 1 : 0, e.trees_passed, e.trees_hit);
    }
}

inline void write_cards_csv(std::ostream& os, const ExperimentReport& r) {
    io::CsvWriter w(os);
    w.header({"scenario", "density", "policy", "episodes", "mean_distance", "trees_avoided_rate", "crashes"});
    for (const auto& c : r.cards) w.row(r.scenario, r.density, c.kind, c.episodes, c.mean_distance, c.trees_avoided_rate, c.crashes);
}

namespace detail {

template <typename F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const stage_error&) {
        throw;
    } catch (const std::exception& e) {
        throw stage_error(name, e.what());
    }
}

inline void write_text(const std::filesystem::path& p, const std::string& s) { io::write_file(p.string(), s); }

template <typename F>
void write_stream(const std::filesystem::path& p, F&& f) {
    std::ostringstream ss;
    f(ss);
    io::write_file(p.string(), ss.str());
}

}  // namespace detail

/// Second training phase from the pretrained network: lambda = 0 gives the
/// source_only policy, lambda > 0 the adapted one, on identical minibatches.
inline std::pair<nn::Network, dan::TrainHistory> train_phase2(const ExperimentConfig& cfg, const nn::Network& pretrained,
                                                              const dan::LabeledData& source, const Matrix& target,
                                                              double lambda) {
    auto d = cfg.dan;
    d.lambda = lambda;
    d.seed = derive_seed(cfg.seeds.train, {2});
    return dan::train_dan(pretrained, source, target, d);
}

/// The full pipeline. Artifacts are written to `out_dir` as each stage
/// completes, so a failing stage leaves earlier outputs in place.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                       std::ostream* log = nullptr) {
    validate(cfg);
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    detail::write_text(out_dir / "resolved_config.json", to_json(cfg).dump(2) + "\n");
    auto say = [&](const std::string& s) {
        if (log) *log << s << std::endl;
    };

    const auto sc = resolve_scenario(cfg);
    const auto src_env = [&] {
        auto e = scenarios::source_env(sc);
        return e;
    }();
    auto tgt_env = scenarios::target_env(sc);
    tgt_env.world.density = sc.target.density;
    detail::write_text(out_dir / "scenario.json", scenarios::dump(sc));

    const imitation::PolicyHead src_head{sc.source.label_space};
    const imitation::PolicyHead tgt_head{imitation::LabelSpace::fine};
    const std::size_t w_src = sc.source.domain.sensor.width;
    const std::size_t w_tgt = sc.target.domain.sensor.width;
    // Whole-budget supervised training, used for DAgger learners.
    auto train_cfg = cfg.dan;
    train_cfg.lambda = 0.0;
    train_cfg.steps = cfg.pretrain_steps + cfg.dan.steps;
    train_cfg.seed = cfg.seeds.train;
    auto pretrain_cfg = train_cfg;
    pretrain_cfg.steps = cfg.pretrain_steps;
    pretrain_cfg.seed = derive_seed(cfg.seeds.train, {1});

    ExperimentReport rep;
    rep.scenario = sc.name;
    rep.density = cfg.density;

    auto collect = [&](const imitation::Env& env, const imitation::PolicyHead& head, std::uint64_t seed) {
        if (cfg.demo_method == DemoMethod::behavior_clone) return imitation::behavior_clone(env, cfg.expert, cfg.demo_meters, seed, head.space);
        imitation::DaggerConfig dc;
        dc.iterations = cfg.dagger_iterations;
        dc.beta = cfg.dagger_beta;
        dc.meters_per_iteration = cfg.demo_meters;
        dc.train = train_cfg;
        dc.init_seed = cfg.seeds.init;
        dc.mirror_augment = cfg.mirror_augment;
        return imitation::dagger(env, cfg.expert, head, dc, seed).aggregate;
    };

    auto augment = [&](const imitation::Dataset& d) { return cfg.mirror_augment ? imitation::with_mirrors(d) : d; };

    // 1. source demonstrations
    say("[1/6] source demonstrations");
    const auto demos = detail::stage("source_demos", [&] { return collect(src_env, src_head, cfg.seeds.demos); });
    if (cfg.save_datasets) detail::write_stream(out_dir / "source_demos.jsonl", [&](std::ostream& os) { imitation::write_jsonl(os, demos); });

    // 2. unlabeled target scans
    say("[2/6] target unlabeled scans");
    const auto unlabeled = detail::stage("target_unlabeled", [&] {
        return imitation::unlabeled_scans(tgt_env, cfg.unlabeled_meters, cfg.seeds.unlabeled);
    });
    if (cfg.save_datasets)
        detail::write_stream(out_dir / "target_unlabeled.jsonl", [&](std::ostream& os) { imitation::write_jsonl(os, unlabeled); });

    const double max_dist = std::min(tgt_env.world.length, cfg.eval_meters_total / static_cast<double>(cfg.n_eval_worlds));
    rep.max_dist = max_dist;
    const auto tgt_world_params = imitation::world_params_for(tgt_env);
    const auto test_worlds = detail::stage("worlds", [&] { return make_worlds(tgt_world_params, cfg.seeds.world, cfg.n_eval_worlds, false); });
    const auto val_worlds = detail::stage("worlds", [&] { return make_worlds(tgt_world_params, cfg.seeds.world, cfg.n_val_worlds, true); });

    // 3. source-only and adapted policies
    say("[3/6] source_only and dan_adapted training");
    const auto labeled = detail::stage("source_only", [&] { return imitation::labeled_data(augment(demos), src_head, w_src); });
    const auto init = nn::init_network(imitation::default_policy_arch(w_src, src_head.classes()), cfg.seeds.init);
    const auto pretrained = detail::stage("pretrain", [&] { return dan::train_supervised(init, labeled, pretrain_cfg); });
    const auto target_x = imitation::scans_matrix(unlabeled, w_src);
    const auto [source_only, source_hist] =
        detail::stage("source_only", [&] { return train_phase2(cfg, pretrained, labeled, target_x, 0.0); });
    nn::save_checkpoint((out_dir / "source_only.ckpt").string(), source_only, src_head.to_meta());
    detail::write_stream(out_dir / "source_only_history.csv", [&](std::ostream& os) { source_hist.write_csv(os); });

    std::optional<nn::Network> best;
    std::optional<dan::TrainHistory> best_hist;
    double best_score = -1.0;
    detail::stage("dan_adapted", [&] {
        for (double lambda : cfg.lambda_grid) {
            auto [net, hist] = train_phase2(cfg, pretrained, labeled, target_x, lambda);
            double score = 0.0;
            if (cfg.lambda_grid.size() > 1) {
                const auto rows = evaluate(network_factory(net, src_head), val_worlds, sc.target.domain, max_dist,
                                           derive_seed(cfg.seeds.eval, {0x7A11DULL}), cfg.threads);
                score = mean(distances(rows));
            }
            rep.lambda_trials.push_back({lambda, score});
            say("  lambda " + io::fmt(lambda) + " validation mean distance " + io::fmt(score));
            if (!best || score > best_score) {
                best = std::move(net);
                best_hist = std::move(hist);
                best_score = score;
                rep.selected_lambda = lambda;
            }
        }
        return 0;
    });
    const auto& dan_net = *best;
    auto dan_meta = src_head.to_meta();
    dan_meta["lambda"] = io::fmt(rep.selected_lambda);
    nn::save_checkpoint((out_dir / "dan_adapted.ckpt").string(), dan_net, dan_meta);
    detail::write_stream(out_dir / "dan_adapted_history.csv", [&](std::ostream& os) { best_hist->write_csv(os); });
    detail::write_stream(out_dir / "lambda_selection.csv", [&](std::ostream& os) {
        io::CsvWriter w(os);
        w.header({"lambda", "val_mean_distance"});
        for (const auto& t : rep.lambda_trials) w.row(t.lambda, t.val_mean_distance);
    });

    // 4. upper bound: expert demonstrations collected in the target itself
    say("[4/6] target_oracle training");
    const auto oracle = detail::stage("target_oracle", [&] {
        const auto tdemos = collect(tgt_env, tgt_head, derive_seed(cfg.seeds.demos, {0x0AC1EULL}));
        const auto tl = imitation::labeled_data(augment(tdemos), tgt_head, w_tgt);
        const auto tinit = nn::init_network(imitation::default_policy_arch(w_tgt, tgt_head.classes()), cfg.seeds.init);
        return dan::train_supervised(tinit, tl, train_cfg);
    });
    nn::save_checkpoint((out_dir / "target_oracle.ckpt").string(), oracle, tgt_head.to_meta());

    // 5. paired evaluation on the held-out target worlds
    say("[5/6] evaluation");
    detail::stage("evaluate", [&] {
        const auto& dom = sc.target.domain;
        const double vmax = dom.dynamics.max_lateral;
        rep.episodes["random"] = evaluate(random_factory(vmax), test_worlds, dom, max_dist, cfg.seeds.eval, cfg.threads);
        rep.episodes["source_only"] = evaluate(network_factory(source_only, src_head), test_worlds, dom, max_dist, cfg.seeds.eval, cfg.threads);
        rep.episodes["dan_adapted"] = evaluate(network_factory(dan_net, src_head), test_worlds, dom, max_dist, cfg.seeds.eval, cfg.threads);
        rep.episodes["target_oracle"] = evaluate(network_factory(oracle, tgt_head), test_worlds, dom, max_dist, cfg.seeds.eval, cfg.threads);
        return 0;
    });
    const std::map<std::string, std::string> ckpt{{"random", ""},
                                                  {"source_only", "source_only.ckpt"},
                                                  {"dan_adapted", "dan_adapted.ckpt"},
                                                  {"target_oracle", "target_oracle.ckpt"}};
    for (const auto& k : policy_kinds()) rep.cards.push_back(make_card(k, ckpt.at(k), rep.episodes.at(k)));
    rep.dan_vs_source = sign_test(distances(rep.episodes.at("dan_adapted")), distances(rep.episodes.at("source_only")));

    // 6. reports
    say("[6/6] reports");
    detail::write_stream(out_dir / "episodes.csv", [&](std::ostream& os) { write_episodes_csv(os, rep); });
    detail::write_stream(out_dir / "policies.csv", [&](std::ostream& os) { write_cards_csv(os, rep); });
    detail::write_text(out_dir / "summary.json", report_to_json(rep).dump(2) + "\n");
    return rep;
}

// ---- replay ----------------------------------------------------------------------

struct ReplayTick {
    std::uint64_t tick = 0;
    double x = 0.0, y = 0.0, v_lat = 0.0;
    double command_a = 0.0;  ///< executed
    double command_b = 0.0;  ///< counterfactual on the same frame
    bool crashed = false;
};

/// Flies policy A and logs what policy B would have commanded on each frame.
inline std::vector<ReplayTick> replay(const nn::Network& a, const imitation::PolicyHead& head_a, const nn::Network& b,
                                      const imitation::PolicyHead& head_b, const sim::ForestWorld& world,
                                      const sim::DomainConfig& domain, double max_dist, std::uint64_t seed) {
    if (a.input_dim() != b.input_dim()) throw invalid_argument("replay: checkpoints have different scan widths");
    const auto pa = imitation::network_policy(a, head_a);
    const auto pb = imitation::network_policy(b, head_b);
    std::vector<ReplayTick> log;
    const sim::Policy logged = [&](std::span<const double> scan, std::uint64_t tick) {
        const double ca = pa(scan, tick);
        log.push_back({tick, 0, 0, 0, ca, pb(scan, tick), false});
        return ca;
    };
    const auto res = sim::run_episode(logged, world, domain, std::min(max_dist, world.params.length), seed);
    for (std::size_t i = 0; i < log.size(); ++i) {
        const auto& s = res.trajectory[i];
        log[i].x = s.x;
        log[i].y = s.y;
        log[i].v_lat = s.v_lat;
        log[i].command_a = std::clamp(log[i].command_a, -domain.dynamics.max_lateral, domain.dynamics.max_lateral);
        log[i].crashed = res.crashed && i + 1 == log.size();
    }
    return log;
}

inline void write_replay_csv(std::ostream& os, const std::vector<ReplayTick>& log) {
    io::CsvWriter w(os);
    w.header({"tick", "x", "y", "v_lat", "command", "command_b", "crashed"});
    for (const auto& t : log) w.row(t.tick, t.x, t.y, t.v_lat, t.command_a, t.command_b, t.crashed ? 1 : 0);
}

/// Two-trace strip chart of the commands over time.
inline std::string replay_svg(const std::vector<ReplayTick>& log, double v_max, const std::string& label_a = "A",
                              const std::string& label_b = "B") {
    const double w = 900, h = 240, pad = 30;
    const double n = std::max<double>(1.0, static_cast<double>(log.size()) - 1.0);
    auto px = [&](std::size_t i) { return pad + (w - 2 * pad) * static_cast<double>(i) / n; };
    auto py = [&](double v) { return h / 2 - (h / 2 - pad) * v / v_max; };
    auto poly = [&](auto get) {
        std::string pts;
        for (std::size_t i = 0; i < log.size(); ++i) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", i ? " " : "", px(i), py(get(log[i])));
            pts += buf;
        }
        return pts;
    };
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<line x1=\"" << pad << "\" y1=\"" << h / 2 << "\" x2=\"" << w - pad << "\" y2=\"" << h / 2
      << "\" stroke=\"#bbb\"/>\n"
      << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"" << poly([](const ReplayTick& t) { return t.command_a; })
      << "\"/>\n"
      << "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"1\" stroke-dasharray=\"4 2\" points=\""
      << poly([](const ReplayTick& t) { return t.command_b; }) << "\"/>\n"
      << "<text x=\"" << pad << "\" y=\"16\" font-size=\"12\" fill=\"#1f77b4\">" << label_a << " (executed)</text>\n"
      << "<text x=\"" << pad + 200 << "\" y=\"16\" font-size=\"12\" fill=\"#d62728\">" << label_b << " (counterfactual)</text>\n"
      << "<text x=\"" << w - pad << "\" y=\"" << h - 8 << "\" font-size=\"11\" text-anchor=\"end\">tick " << log.size()
      << "</text>\n"
      << "</svg>\n";
    return s.str();
}

// ---- summaries -------------------------------------------------------------------

struct SummaryRow {
    std::string scenario;
    std::string density;
    std::string policy;
    std::size_t episodes = 0;
    double mean_distance = 0.0;
    double trees_avoided_rate = 0.0;
    double p_value = 1.0;  ///< dan vs source_only of the originating report; blank in totals
    bool has_p = false;
};

/// Merges report summaries into one table; the trailing rows are per-policy
/// totals, weighted by episode count.
inline std::vector<SummaryRow> summarize(const std::vector<nlohmann::json>& reports) {
    if (reports.empty()) throw invalid_argument("summarize: no reports");
    std::vector<SummaryRow> rows;
    struct Acc {
        std::size_t episodes = 0;
        double dist = 0.0;
        std::size_t passed = 0, hit = 0;
    };
    std::map<std::string, Acc> totals;
    std::vector<std::string> order;
    for (const auto& r : reports) {
        if (!r.is_object() || r.value("schema_version", -1) != kReportSchemaVersion || !r.contains("policies"))
            throw invalid_argument("summarize: report schema mismatch");
        const double p = r.at("dan_vs_source_only").at("p_value").get<double>();
        for (const auto& c : r.at("policies")) {
            SummaryRow row;
            row.scenario = r.at("scenario").get<std::string>();
            row.density = r.at("density").get<std::string>();
            row.policy = c.at("kind").get<std::string>();
            row.episodes = c.at("episodes").get<std::size_t>();
            row.mean_distance = c.at("mean_distance").get<double>();
            row.trees_avoided_rate = c.at("trees_avoided_rate").get<double>();
            row.p_value = p;
            row.has_p = true;
            rows.push_back(row);
            auto& a = totals[row.policy];
            if (a.episodes == 0 && std::find(order.begin(), order.end(), row.policy) == order.end()) order.push_back(row.policy);
            a.episodes += row.episodes;
            a.dist += row.mean_distance * static_cast<double>(row.episodes);
            a.passed += c.value("trees_passed", std::size_t{0});
            a.hit += c.value("trees_hit", std::size_t{0});
        }
    }
    for (const auto& k : order) {
        const auto& a = totals.at(k);
        SummaryRow row{"total", "all", k, a.episodes};
        row.mean_distance = a.episodes ? a.dist / static_cast<double>(a.episodes) : 0.0;
        const auto seen = a.passed + a.hit;
        row.trees_avoided_rate = seen ? static_cast<double>(a.passed) / static_cast<double>(seen) : 1.0;
        rows.push_back(row);
    }
    return rows;
}

inline void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
    io::CsvWriter w(os);
    w.header({"scenario", "density", "policy", "episodes", "mean_distance", "trees_avoided_rate", "p_dan_vs_source_only"});
    for (const auto& r : rows)
        w.row(r.scenario, r.density, r.policy, r.episodes, r.mean_distance, r.trees_avoided_rate,
              r.has_p ? io::fmt(r.p_value) : std::string{});
}

}  // namespace dapol::harness
