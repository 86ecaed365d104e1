// dapol command-line front end.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dapol/checkpoint.hpp"
#include "dapol/dan.hpp"
#include "dapol/harness.hpp"
#include "dapol/imitation.hpp"
#include "dapol/io.hpp"
#include "dapol/scenarios.hpp"
#include "dapol/sim.hpp"

namespace fs = std::filesystem;
using namespace dapol;
using json = nlohmann::ordered_json;

namespace {

void emit(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") std::cout << text;
    else io::write_file(path, text);
}

// Options of a subcommand, stored next to its main output.
void write_resolved(const std::string& out, const json& opts) {
    if (out.empty() || out == "-") return;
    io::write_file(out + ".config.json", opts.dump(2) + "\n");
}

double parse_density(const std::string& s) {
    if (s == "low") return scenarios::kLowDensity;
    if (s == "high") return scenarios::kHighDensity;
    return io::parse_double(s);
}

scenarios::DomainSide pick_side(const scenarios::Scenario& sc, const std::string& side) {
    if (side == "source") return sc.source;
    if (side == "target") return sc.target;
    throw invalid_argument("side must be 'source' or 'target'");
}

imitation::Env env_for(const scenarios::Scenario& sc, const std::string& side) {
    return side == "source" ? scenarios::source_env(sc) : scenarios::target_env(sc);
}

imitation::Dataset load_dataset(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw invalid_argument("cannot open " + path);
    return imitation::read_jsonl(is);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Domain-adaptive imitation learning for reactive flight in a 2-D forest simulator"};
    app.require_subcommand(1);

    // scenario list | show
    auto* scen = app.add_subcommand("scenario", "Inspect the scenario catalog");
    scen->require_subcommand(1);
    auto* scen_list = scen->add_subcommand("list", "List scenario names");
    auto* scen_show = scen->add_subcommand("show", "Print a scenario as JSON");
    std::string scen_name;
    scen_show->add_option("name", scen_name, "Scenario name")->required();

    // world gen
    auto* world = app.add_subcommand("world", "World files");
    world->require_subcommand(1);
    auto* world_gen = world->add_subcommand("gen", "Generate a forest world");
    std::string wg_density = "low", wg_out;
    std::uint64_t wg_seed = 0;
    sim::WorldParams wg_params;
    world_gen->add_option("--density", wg_density, "low, high or trees per m^2")->capture_default_str();
    world_gen->add_option("--seed", wg_seed, "World seed")->required();
    world_gen->add_option("--length", wg_params.length, "Corridor length, m")->capture_default_str();
    world_gen->add_option("--half-width", wg_params.half_width, "Corridor half width, m")->capture_default_str();
    world_gen->add_option("--radius-scale", wg_params.radius_scale, "Tree radius scale")->capture_default_str();
    world_gen->add_option("-o,--out", wg_out, "Output JSON (stdout if omitted)");

    // demos collect
    auto* demos = app.add_subcommand("demos", "Demonstration datasets");
    demos->require_subcommand(1);
    auto* demos_collect = demos->add_subcommand("collect", "Fly and record a dataset");
    std::string dc_scenario = "sanity_gamma", dc_side = "source", dc_method = "behavior_clone", dc_out, dc_density;
    double dc_meters = 1000.0;
    std::uint64_t dc_seed = 0;
    demos_collect->add_option("--scenario", dc_scenario)->capture_default_str();
    demos_collect->add_option("--side", dc_side, "source or target")->capture_default_str();
    demos_collect->add_option("--method", dc_method, "behavior_clone, dagger or random (unlabeled)")->capture_default_str();
    demos_collect->add_option("--meters", dc_meters)->capture_default_str();
    demos_collect->add_option("--seed", dc_seed)->capture_default_str();
    demos_collect->add_option("--density", dc_density, "Override density: low, high or a number");
    demos_collect->add_option("-o,--out", dc_out, "Output JSONL")->required();

    // train
    auto* train = app.add_subcommand("train", "Train a policy network");
    std::string tr_demos, tr_target, tr_out, tr_history, tr_init;
    dan::DanConfig tr_cfg;
    tr_cfg.lambda = 0.0;
    std::uint64_t tr_init_seed = 0;
    train->add_option("--demos", tr_demos, "Labeled source JSONL")->required();
    train->add_option("--target", tr_target, "Unlabeled target JSONL (needed when lambda > 0)");
    train->add_option("--lambda", tr_cfg.lambda)->capture_default_str();
    train->add_option("--steps", tr_cfg.steps)->capture_default_str();
    train->add_option("--lr", tr_cfg.base_lr)->capture_default_str();
    train->add_option("--batch", tr_cfg.batch_size)->capture_default_str();
    train->add_option("--adapt-mult", tr_cfg.roles.adapt)->capture_default_str();
    train->add_option("--finetune-mult", tr_cfg.roles.finetune)->capture_default_str();
    train->add_option("--seed", tr_cfg.seed, "Minibatch stream seed")->capture_default_str();
    train->add_option("--init-seed", tr_init_seed)->capture_default_str();
    train->add_option("--init", tr_init, "Start from this checkpoint instead of a fresh network");
    train->add_option("-o,--out", tr_out, "Output checkpoint")->required();
    train->add_option("--history", tr_history, "Loss history CSV");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "Fly a policy over seeded worlds");
    std::string ev_ckpt, ev_scenario = "sanity_gamma", ev_side = "target", ev_density, ev_out, ev_traj;
    bool ev_random = false;
    std::size_t ev_worlds = 10, ev_threads = 1;
    std::uint64_t ev_world_seed = 1, ev_eval_seed = 6;
    double ev_max = 200.0;
    eval->add_option("--checkpoint", ev_ckpt);
    eval->add_flag("--random", ev_random, "Evaluate the uniform random policy");
    eval->add_option("--scenario", ev_scenario)->capture_default_str();
    eval->add_option("--side", ev_side)->capture_default_str();
    eval->add_option("--density", ev_density, "Override density: low, high or a number");
    eval->add_option("--worlds", ev_worlds)->capture_default_str();
    eval->add_option("--world-seed", ev_world_seed)->capture_default_str();
    eval->add_option("--eval-seed", ev_eval_seed)->capture_default_str();
    eval->add_option("--max-dist", ev_max)->capture_default_str();
    eval->add_option("--threads", ev_threads)->capture_default_str();
    eval->add_option("-o,--out", ev_out, "Episode CSV (stdout if omitted)");
    eval->add_option("--trajectories", ev_traj, "Directory for per-episode trajectory CSVs");

    // experiment run
    auto* exp = app.add_subcommand("experiment", "Full pipelines");
    exp->require_subcommand(1);
    auto* exp_run = exp->add_subcommand("run", "Run an experiment from a config file");
    std::string ex_config, ex_out;
    std::size_t ex_threads = 0;
    exp_run->add_option("-c,--config", ex_config)->required()->check(CLI::ExistingFile);
    exp_run->add_option("-o,--out", ex_out, "Output directory")->required();
    exp_run->add_option("--threads", ex_threads, "Override evaluation threads");

    // replay
    auto* rep = app.add_subcommand("replay", "Fly policy A, log policy B's counterfactual commands");
    std::string rp_a, rp_b, rp_world, rp_scenario = "sanity_gamma", rp_side = "target", rp_out;
    std::uint64_t rp_seed = 0;
    double rp_max = 200.0;
    rep->add_option("--a", rp_a, "Executed policy checkpoint")->required();
    rep->add_option("--b", rp_b, "Counterfactual policy checkpoint")->required();
    rep->add_option("--world", rp_world, "World JSON")->required();
    rep->add_option("--scenario", rp_scenario)->capture_default_str();
    rep->add_option("--side", rp_side)->capture_default_str();
    rep->add_option("--seed", rp_seed, "Episode seed")->capture_default_str();
    rep->add_option("--max-dist", rp_max)->capture_default_str();
    rep->add_option("-o,--out", rp_out, "Output prefix (.csv and .svg)")->required();

    // summarize
    auto* sum = app.add_subcommand("summarize", "Aggregate experiment summaries");
    std::vector<std::string> sm_reports;
    std::string sm_out;
    sum->add_option("reports", sm_reports, "summary.json files")->required();
    sum->add_option("-o,--out", sm_out, "Output CSV (stdout if omitted)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (scen_list->parsed()) {
            for (const auto& n : scenarios::scenario_names()) std::cout << n << "\n";
        } else if (scen_show->parsed()) {
            std::cout << scenarios::dump(scenarios::build_scenario(scen_name));
        } else if (world_gen->parsed()) {
            wg_params.density = parse_density(wg_density);
            const auto w = sim::generate_world(wg_params, wg_seed);
            emit(wg_out, harness::world_to_json(w).dump(2) + "\n");
        } else if (demos_collect->parsed()) {
            const auto sc = scenarios::build_scenario(dc_scenario);
            const auto side = pick_side(sc, dc_side);
            auto env = env_for(sc, dc_side);
            if (!dc_density.empty()) env.world.density = parse_density(dc_density);
            imitation::Dataset d;
            sim::ExpertConfig ex;
            const imitation::PolicyHead head{side.label_space};
            if (dc_method == "behavior_clone") d = imitation::behavior_clone(env, ex, dc_meters, dc_seed, side.label_space);
            else if (dc_method == "dagger") {
                imitation::DaggerConfig cfg;
                cfg.meters_per_iteration = dc_meters;
                d = imitation::dagger(env, ex, head, cfg, dc_seed).aggregate;
            } else if (dc_method == "random") d = imitation::unlabeled_scans(env, dc_meters, dc_seed);
            else throw invalid_argument("unknown method '" + dc_method + "'");
            std::ostringstream os;
            imitation::write_jsonl(os, d);
            io::write_file(dc_out, os.str());
            write_resolved(dc_out, {{"command", "demos collect"}, {"scenario", dc_scenario}, {"side", dc_side},
                                    {"method", dc_method}, {"meters", dc_meters}, {"seed", dc_seed},
                                    {"density", env.world.density}, {"records", d.size()}});
            std::cerr << d.size() << " records\n";
        } else if (train->parsed()) {
            const auto src = load_dataset(tr_demos);
            const imitation::PolicyHead head{src.label_space};
            const auto labeled = imitation::labeled_data(src, head);
            nn::Network net = tr_init.empty()
                                  ? nn::init_network(imitation::default_policy_arch(src.width(), head.classes()), tr_init_seed)
                                  : nn::load_checkpoint(tr_init).net;
            auto meta = head.to_meta();
            meta["lambda"] = io::fmt(tr_cfg.lambda);
            if (tr_cfg.lambda > 0.0 && tr_target.empty()) throw invalid_argument("--target is required when lambda > 0");
            if (tr_cfg.lambda > 0.0 || !tr_history.empty()) {
                // At lambda = 0 the target only feeds the logged MMD columns.
                const Matrix tgt = tr_target.empty() ? labeled.x : imitation::scans_matrix(load_dataset(tr_target), src.width());
                auto [trained, hist] = dan::train_dan(std::move(net), labeled, tgt, tr_cfg);
                net = std::move(trained);
                if (!tr_history.empty()) {
                    std::ostringstream os;
                    hist.write_csv(os);
                    io::write_file(tr_history, os.str());
                }
            } else {
                net = dan::train_supervised(std::move(net), labeled, tr_cfg);
            }
            nn::save_checkpoint(tr_out, net, meta);
            write_resolved(tr_out, {{"command", "train"}, {"demos", tr_demos}, {"target", tr_target},
                                    {"init", tr_init}, {"init_seed", tr_init_seed}, {"dan", harness::dan_to_json(tr_cfg)},
                                    {"seed", tr_cfg.seed}});
            std::cerr << "source accuracy " << dan::accuracy(net, labeled) << "\n";
        } else if (eval->parsed()) {
            const auto sc = scenarios::build_scenario(ev_scenario);
            auto env = env_for(sc, ev_side);
            if (!ev_density.empty()) env.world.density = parse_density(ev_density);
            const auto worlds = harness::make_worlds(imitation::world_params_for(env), ev_world_seed, ev_worlds, false);
            harness::PolicyFactory factory;
            if (ev_random) factory = harness::random_factory(env.domain.dynamics.max_lateral);
            else if (!ev_ckpt.empty()) {
                const auto cp = nn::load_checkpoint(ev_ckpt);
                factory = harness::network_factory(cp.net, imitation::PolicyHead::from_meta(cp.meta));
            } else throw invalid_argument("give --checkpoint or --random");
            const auto rows = harness::evaluate(factory, worlds, env.domain, ev_max, ev_eval_seed, ev_threads);
            std::ostringstream os;
            io::CsvWriter w(os);
            w.header({"world_index", "world_seed", "distance", "crashed", "trees_passed", "trees_hit"});
            for (const auto& r : rows) w.row(r.world_index, r.world_seed, r.distance, r.crashed ? 1 : 0, r.trees_passed, r.trees_hit);
            emit(ev_out, os.str());
            if (!ev_traj.empty()) {
                fs::create_directories(ev_traj);
                for (std::size_t i = 0; i < worlds.size(); ++i) {
                    const auto seed = harness::episode_seed(ev_eval_seed, i);
                    const auto res = sim::run_episode(factory(seed), worlds[i], env.domain,
                                                      std::min(ev_max, worlds[i].params.length), seed);
                    std::ostringstream ts;
                    harness::write_trajectory_csv(ts, res);
                    io::write_file((fs::path(ev_traj) / ("episode_" + std::to_string(i) + ".csv")).string(), ts.str());
                }
            }
            const auto card = harness::make_card(ev_random ? "random" : "network", ev_ckpt, rows);
            write_resolved(ev_out, {{"command", "evaluate"}, {"checkpoint", ev_ckpt}, {"random", ev_random},
                                    {"scenario", ev_scenario}, {"side", ev_side}, {"density", env.world.density},
                                    {"worlds", ev_worlds}, {"world_seed", ev_world_seed}, {"eval_seed", ev_eval_seed},
                                    {"max_dist", ev_max}});
            std::cerr << harness::card_to_json(card).dump(2) << "\n";
        } else if (exp_run->parsed()) {
            auto cfg = harness::load_config(ex_config);
            if (ex_threads) cfg.threads = ex_threads;
            const auto r = harness::run_experiment(cfg, ex_out, &std::cerr);
            std::cout << harness::report_to_json(r).dump(2) << "\n";
        } else if (rep->parsed()) {
            const auto sc = scenarios::build_scenario(rp_scenario);
            const auto side = pick_side(sc, rp_side);
            const auto a = nn::load_checkpoint(rp_a);
            const auto b = nn::load_checkpoint(rp_b);
            const auto w = harness::load_world(rp_world);
            const auto log = harness::replay(a.net, imitation::PolicyHead::from_meta(a.meta), b.net,
                                             imitation::PolicyHead::from_meta(b.meta), w, side.domain, rp_max, rp_seed);
            std::ostringstream os;
            harness::write_replay_csv(os, log);
            io::write_file(rp_out + ".csv", os.str());
            io::write_file(rp_out + ".svg", harness::replay_svg(log, side.domain.dynamics.max_lateral,
                                                                fs::path(rp_a).stem().string(), fs::path(rp_b).stem().string()));
            write_resolved(rp_out, {{"command", "replay"}, {"a", rp_a}, {"b", rp_b}, {"world", rp_world},
                                    {"scenario", rp_scenario}, {"side", rp_side}, {"seed", rp_seed}, {"max_dist", rp_max}});
            double diff = 0.0;
            for (const auto& t : log) diff += std::abs(t.command_a - t.command_b);
            std::cerr << log.size() << " ticks, mean |command difference| "
                      << (log.empty() ? 0.0 : diff / static_cast<double>(log.size())) << "\n";
        } else if (sum->parsed()) {
            std::vector<nlohmann::json> reports;
            for (const auto& p : sm_reports) reports.push_back(nlohmann::json::parse(io::read_file(p)));
            std::ostringstream os;
            harness::write_summary_csv(os, harness::summarize(reports));
            emit(sm_out, os.str());
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
