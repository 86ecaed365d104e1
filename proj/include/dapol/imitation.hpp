#pragma once

// Demonstrations, label discretization, network-backed policies,
// behaviour cloning and DAgger.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dapol/checkpoint.hpp"
#include "dapol/dan.hpp"
#include "dapol/error.hpp"
#include "dapol/net.hpp"
#include "dapol/rng.hpp"
#include "dapol/sim.hpp"

namespace dapol::imitation {

inline constexpr double kDefaultVMax = 1.0;
inline constexpr std::size_t kDefaultBins = 9;

enum class LabelSpace { fine, coarse3 };

inline const char* to_string(LabelSpace s) { return s == LabelSpace::fine ? "fine" : "coarse3"; }

inline LabelSpace label_space_from_string(const std::string& s) {
    if (s == "fine") return LabelSpace::fine;
    if (s == "coarse3") return LabelSpace::coarse3;
    throw invalid_argument("unknown label space '" + s + "'");
}

struct BinIndex {
    std::size_t bin = 0;
    bool clamped = false;  ///< |v| exceeded v_max and was moved to a boundary bin
};

/// Uniform bins over [-v_max, v_max]; bin (K-1)/2 holds 0.
inline BinIndex discretize(double v, std::size_t k, double v_max) {
    if (k < 3 || k % 2 == 0) throw invalid_argument("discretize: bin count must be odd and >= 3");
    if (!(v_max > 0.0)) throw invalid_argument("discretize: v_max must be positive");
    BinIndex out;
    if (std::abs(v) > v_max) {
        out.clamped = true;
        v = std::clamp(v, -v_max, v_max);
    }
    const double width = 2.0 * v_max / static_cast<double>(k);
    const auto raw = static_cast<long long>(std::floor((v + v_max) / width));
    out.bin = static_cast<std::size_t>(std::clamp<long long>(raw, 0, static_cast<long long>(k) - 1));
    return out;
}

inline double bin_center(std::size_t bin, std::size_t k, double v_max) {
    const double width = 2.0 * v_max / static_cast<double>(k);
    return -v_max + (static_cast<double>(bin) + 0.5) * width;
}

/// How network outputs map to velocities.
struct PolicyHead {
    LabelSpace space = LabelSpace::fine;
    std::size_t bins = kDefaultBins;
    double v_max = kDefaultVMax;

    std::size_t classes() const noexcept { return space == LabelSpace::fine ? bins : 3; }

    /// Velocity attached to class `c`: bin midpoints for fine labels,
    /// {-0.5, 0, +0.5} * v_max for coarse left/center/right.
    double center(std::size_t c) const {
        if (space == LabelSpace::coarse3) return (static_cast<double>(c) - 1.0) * 0.5 * v_max;
        return bin_center(c, bins, v_max);
    }

    std::size_t label_of(double v) const {
        return discretize(v, space == LabelSpace::fine ? bins : 3, v_max).bin;
    }

    nn::CheckpointMeta to_meta() const {
        return {{"label_space", to_string(space)}, {"bins", std::to_string(bins)}, {"v_max", io::fmt(v_max)}};
    }

    static PolicyHead from_meta(const nn::CheckpointMeta& m) {
        PolicyHead h;
        if (auto it = m.find("label_space"); it != m.end()) h.space = label_space_from_string(it->second);
        if (auto it = m.find("bins"); it != m.end()) h.bins = static_cast<std::size_t>(std::stoul(it->second));
        if (auto it = m.find("v_max"); it != m.end()) h.v_max = io::parse_double(it->second);
        return h;
    }
};

inline const char* coarse_name(std::size_t c) {
    static const char* names[] = {"left", "center", "right"};
    return names[std::min<std::size_t>(c, 2)];
}

/// Expected velocity under the network's class distribution.
inline double policy_act(const nn::Network& net, std::span<const double> scan, const PolicyHead& head) {
    if (scan.size() != net.input_dim()) throw invalid_argument("policy_act: scan width does not match network input");
    if (net.output_dim() != head.classes()) throw invalid_argument("policy_act: network output does not match head");
    Matrix x(1, scan.size());
    std::copy(scan.begin(), scan.end(), x.row(0).begin());
    const auto probs = nn::forward(net, x).output();
    double v = 0.0;
    for (std::size_t c = 0; c < probs.cols(); ++c) v += probs(0, c) * head.center(c);
    return std::clamp(v, -head.v_max, head.v_max);
}

/// Area-weighted resampling of a strip to `width` pixels.
inline std::vector<double> resample_scan(std::span<const double> scan, std::size_t width) {
    if (scan.size() == width) return {scan.begin(), scan.end()};
    if (scan.empty() || width == 0) throw invalid_argument("resample_scan: empty input or output");
    std::vector<double> out(width, 0.0);
    const double ratio = static_cast<double>(scan.size()) / static_cast<double>(width);
    for (std::size_t i = 0; i < width; ++i) {
        const double a = static_cast<double>(i) * ratio, b = static_cast<double>(i + 1) * ratio;
        double acc = 0.0;
        for (auto j = static_cast<std::size_t>(std::floor(a)); j < scan.size() && static_cast<double>(j) < b; ++j) {
            const double overlap = std::min(b, static_cast<double>(j + 1)) - std::max(a, static_cast<double>(j));
            if (overlap > 0.0) acc += overlap * scan[j];
        }
        out[i] = acc / ratio;
    }
    return out;
}

/// Network policy for the simulator; resamples strips of a different width.
inline sim::Policy network_policy(const nn::Network& net, const PolicyHead& head) {
    return [net, head](std::span<const double> scan, std::uint64_t) {
        if (scan.size() == net.input_dim()) return policy_act(net, scan, head);
        const auto r = resample_scan(scan, net.input_dim());
        return policy_act(net, r, head);
    };
}

struct Demonstration {
    std::vector<double> scan;
    std::optional<double> velocity;  ///< absent for unlabeled target data
    std::string domain;

    friend bool operator==(const Demonstration&, const Demonstration&) = default;
};

struct Dataset {
    std::vector<Demonstration> records;
    LabelSpace label_space = LabelSpace::fine;

    std::size_t size() const noexcept { return records.size(); }
    bool empty() const noexcept { return records.empty(); }
    std::size_t width() const noexcept { return records.empty() ? 0 : records.front().scan.size(); }

    void append(const Dataset& other) { records.insert(records.end(), other.records.begin(), other.records.end()); }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Checks width homogeneity, scan range, velocity bound, and coarse labels.
inline void validate(const Dataset& d, double v_max = kDefaultVMax) {
    const std::size_t w = d.width();
    for (std::size_t i = 0; i < d.records.size(); ++i) {
        const auto& r = d.records[i];
        if (r.scan.size() != w) throw invalid_argument("dataset: record " + std::to_string(i) + " has a different scan width");
        for (double v : r.scan)
            if (!(v >= 0.0 && v <= 1.0)) throw invalid_argument("dataset: record " + std::to_string(i) + " scan outside [0,1]");
        if (r.velocity) {
            if (!(std::abs(*r.velocity) <= v_max)) throw invalid_argument("dataset: record " + std::to_string(i) + " velocity exceeds v_max");
            if (d.label_space == LabelSpace::coarse3) {
                const double a = std::abs(*r.velocity);
                if (!(a == 0.0 || a == 0.5 * v_max))
                    throw invalid_argument("dataset: record " + std::to_string(i) + " is not a left/center/right label");
            }
        }
    }
}

/// JSON Lines: {"scan": [...], "velocity": f64|null, "domain": "..."} per line.
/// Coarse records also carry "label": "left"|"center"|"right".
inline void write_jsonl(std::ostream& os, const Dataset& d) {
    for (const auto& r : d.records) {
        nlohmann::ordered_json j;
        j["scan"] = r.scan;
        j["velocity"] = r.velocity ? nlohmann::ordered_json(*r.velocity) : nlohmann::ordered_json(nullptr);
        j["domain"] = r.domain;
        if (d.label_space == LabelSpace::coarse3 && r.velocity)
            j["label"] = *r.velocity < 0.0 ? "left" : (*r.velocity > 0.0 ? "right" : "center");
        os << j.dump() << '\n';
    }
}

inline Dataset read_jsonl(std::istream& is, double v_max = kDefaultVMax) {
    Dataset d;
    std::string line;
    std::size_t lineno = 0;
    bool any_coarse = false;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw invalid_argument("dataset line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!j.is_object() || !j.contains("scan") || !j["scan"].is_array())
            throw invalid_argument("dataset line " + std::to_string(lineno) + ": missing scan array");
        Demonstration r;
        r.scan = j["scan"].get<std::vector<double>>();
        if (j.contains("velocity") && !j["velocity"].is_null()) r.velocity = j["velocity"].get<double>();
        r.domain = j.value("domain", "");
        if (j.contains("label")) any_coarse = true;
        d.records.push_back(std::move(r));
    }
    if (any_coarse) d.label_space = LabelSpace::coarse3;
    validate(d, v_max);
    return d;
}

/// Appends the left-right mirror of every record: scan reversed, velocity negated.
/// The corridor and both label spaces are symmetric, so mirrored labels stay valid.
inline Dataset with_mirrors(const Dataset& d) {
    Dataset out = d;
    out.records.reserve(2 * d.size());
    for (const auto& r : d.records) {
        auto m = r;
        std::reverse(m.scan.begin(), m.scan.end());
        if (m.velocity) m.velocity = -*m.velocity;
        out.records.push_back(std::move(m));
    }
    return out;
}

/// Scans as rows, resampled to `width` when given.
inline Matrix scans_matrix(const Dataset& d, std::size_t width = 0) {
    if (width == 0) width = d.width();
    Matrix m(d.size(), width);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto row = resample_scan(d.records[i].scan, width);
        std::copy(row.begin(), row.end(), m.row(i).begin());
    }
    return m;
}

/// Labeled training matrix; unlabeled records are skipped.
inline dan::LabeledData labeled_data(const Dataset& d, const PolicyHead& head, std::size_t width = 0) {
    if (width == 0) width = d.width();
    dan::LabeledData out;
    std::vector<const Demonstration*> keep;
    for (const auto& r : d.records)
        if (r.velocity) keep.push_back(&r);
    out.x = Matrix(keep.size(), width);
    out.labels.reserve(keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i) {
        const auto row = resample_scan(keep[i]->scan, width);
        std::copy(row.begin(), row.end(), out.x.row(i).begin());
        out.labels.push_back(head.label_of(*keep[i]->velocity));
    }
    return out;
}

/// Everything needed to fly in one domain.
struct Env {
    sim::DomainConfig domain;
    sim::WorldParams world;
    std::string tag;  ///< written into Demonstration::domain
};

inline sim::WorldParams world_params_for(const Env& env) {
    auto p = env.world;
    p.radius_scale = env.domain.appearance.tree_radius_scale;
    return p;
}

/// Coarse labels are stored as their mapped velocity.
inline double coarsen(double v, double v_max) {
    const auto c = discretize(v, 3, v_max).bin;
    return (static_cast<double>(c) - 1.0) * 0.5 * v_max;
}

/// Rolls out a per-tick mixture of expert and learner and labels every
/// visited state with the expert. `expert_prob` = 1 gives pure expert flight.
/// Crashed episodes restart in a fresh world; the crash tick is not recorded.
/// Stops once at least `meters` of flight have been logged.
inline Dataset collect_rollouts(const Env& env, const sim::ExpertConfig& expert, double meters, std::uint64_t seed,
                                double expert_prob, const sim::Policy& learner, LabelSpace space) {
    sim::validate(env.domain);
    Dataset d;
    d.label_space = space;
    if (!(meters > 0.0)) return d;
    const double v_max = env.domain.dynamics.max_lateral;
    const double rd = env.world.drone_radius;
    const auto wp = world_params_for(env);
    double flown = 0.0;
    for (std::uint64_t episode = 0; flown < meters; ++episode) {
        const auto ep_seed = derive_seed(seed, {0xE715ULL, episode});
        const auto world = sim::generate_world(wp, derive_seed(ep_seed, {1}));
        const double max_dist = std::min(wp.length, meters - flown);
        Rng mix(derive_seed(ep_seed, {2}));
        sim::DroneState st;
        std::vector<Demonstration> pending;
        while (st.y < max_dist) {
            auto scan = sim::render_scan(world, st, env.domain, sim::render_seed(ep_seed, st.tick));
            const double label = sim::expert_policy(world, st, expert, env.domain);
            const bool use_expert = expert_prob >= 1.0 || mix.uniform() < expert_prob;
            const double cmd = use_expert ? label : std::clamp(learner(scan, st.tick), -v_max, v_max);
            const double stored = space == LabelSpace::coarse3 ? coarsen(label, v_max) : label;
            pending.push_back({std::move(scan), stored, env.tag});
            const auto next = sim::step(st, cmd, env.domain, sim::dynamics_seed(ep_seed, st.tick));
            if (sim::check_collision(world, next, rd)) {
                pending.pop_back();
                break;
            }
            st = next;
        }
        flown += st.y;
        d.records.insert(d.records.end(), std::make_move_iterator(pending.begin()), std::make_move_iterator(pending.end()));
        if (episode > 100000) throw std::runtime_error("collect_rollouts: no progress");
    }
    return d;
}

/// Expert-piloted demonstrations totalling at least `meters` of flight.
inline Dataset behavior_clone(const Env& env, const sim::ExpertConfig& expert, double meters, std::uint64_t seed,
                              LabelSpace space = LabelSpace::fine) {
    return collect_rollouts(env, expert, meters, seed, 1.0, {}, space);
}

/// Target-domain scans from random-policy flight, without labels.
inline Dataset unlabeled_scans(const Env& env, double meters, std::uint64_t seed) {
    Dataset d;
    if (!(meters > 0.0)) return d;
    const double v_max = env.domain.dynamics.max_lateral;
    const auto wp = world_params_for(env);
    double flown = 0.0;
    for (std::uint64_t episode = 0; flown < meters; ++episode) {
        const auto ep_seed = derive_seed(seed, {0x0A1AULL, episode});
        const auto world = sim::generate_world(wp, derive_seed(ep_seed, {1}));
        const auto policy = sim::random_policy(derive_seed(ep_seed, {2}), v_max);
        const double max_dist = std::min(wp.length, meters - flown);
        sim::DroneState st;
        while (st.y < max_dist) {
            auto scan = sim::render_scan(world, st, env.domain, sim::render_seed(ep_seed, st.tick));
            const double cmd = policy(scan, st.tick);
            d.records.push_back({std::move(scan), std::nullopt, env.tag});
            const auto next = sim::step(st, cmd, env.domain, sim::dynamics_seed(ep_seed, st.tick));
            if (sim::check_collision(world, next, wp.drone_radius)) {
                d.records.pop_back();
                break;
            }
            st = next;
        }
        flown += st.y;
        if (episode > 100000) throw std::runtime_error("unlabeled_scans: no progress");
    }
    return d;
}

/// Default desk-scale policy network: two strided 1-D convolutions
/// (finetune) then three dense layers (adapt).
inline std::vector<nn::LayerSpec> default_policy_arch(std::size_t width, std::size_t classes) {
    using nn::Role;
    return nn::ArchBuilder(width)
        .conv1d(1, 8, 5, 2, Role::finetune).relu()
        .conv1d(8, 8, 5, 2, Role::finetune).relu()
        .dense(64, Role::adapt).relu()
        .dense(32, Role::adapt).relu()
        .dense(classes, Role::adapt).softmax()
        .build();
}

struct DaggerConfig {
    std::size_t iterations = 3;
    std::vector<double> beta{1.0, 0.5, 0.25};  ///< expert probability per iteration
    double meters_per_iteration = 1000.0;
    dan::DanConfig train{};                    ///< lambda is forced to 0
    std::uint64_t init_seed = 0;
    bool mirror_augment = false;               ///< learners train on the aggregate plus its mirrors
};

struct DaggerResult {
    nn::Network net;
    Dataset aggregate;
    std::vector<std::size_t> records_per_iteration;
};

/// Trains a fresh network with cross-entropy only.
inline nn::Network fit_policy(const Dataset& data, const PolicyHead& head, const dan::DanConfig& cfg, std::uint64_t init_seed,
                              std::size_t width = 0) {
    if (width == 0) width = data.width();
    const auto labeled = labeled_data(data, head, width);
    if (labeled.x.rows() == 0) throw invalid_argument("fit_policy: no labeled records");
    auto net = nn::init_network(default_policy_arch(width, head.classes()), init_seed);
    auto c = cfg;
    c.lambda = 0.0;
    return dan::train_supervised(std::move(net), labeled, c);
}

/// Dataset aggregation: iteration i flies the expert with probability beta_i
/// per tick (the current learner otherwise), labels every visited state with
/// the expert, appends to the aggregate and retrains from scratch.
inline DaggerResult dagger(const Env& env, const sim::ExpertConfig& expert, const PolicyHead& head, const DaggerConfig& cfg,
                           std::uint64_t seed) {
    if (cfg.iterations == 0) throw invalid_argument("dagger: need at least one iteration");
    if (cfg.beta.size() < cfg.iterations) throw invalid_argument("dagger: beta schedule shorter than iteration count");
    if (cfg.beta.front() != 1.0) throw invalid_argument("dagger: first beta must be 1");
    for (std::size_t i = 0; i < cfg.iterations; ++i) {
        if (!(cfg.beta[i] >= 0.0 && cfg.beta[i] <= 1.0)) throw invalid_argument("dagger: beta outside [0,1]");
        if (i > 0 && cfg.beta[i] > cfg.beta[i - 1]) throw invalid_argument("dagger: beta must be non-increasing");
    }
    DaggerResult res;
    res.aggregate.label_space = head.space;
    std::optional<nn::Network> learner;
    for (std::size_t i = 0; i < cfg.iterations; ++i) {
        sim::Policy pol;
        if (learner) pol = network_policy(*learner, head);
        const auto batch = collect_rollouts(env, expert, cfg.meters_per_iteration, derive_seed(seed, {0xDA66ULL, i}),
                                            cfg.beta[i], pol, head.space);
        res.records_per_iteration.push_back(batch.size());
        res.aggregate.append(batch);
        learner = fit_policy(cfg.mirror_augment ? with_mirrors(res.aggregate) : res.aggregate, head, cfg.train, cfg.init_seed);
    }
    res.net = std::move(*learner);
    return res;
}

}  // namespace dapol::imitation
