#pragma once

// Deterministic 2-D cluttered-forest flight simulator.
//
// Frame: x is lateral (positive to the right), y is downrange. The drone flies
// forward at constant speed and controls only its lateral velocity. The
// corridor spans x in [-half_width, half_width] and y in [0, length]. The
// camera is a 1-D strip: pixel p looks along angle theta_p from +y, with
// negative angles to the left, so pixel 0 is the leftmost.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "dapol/error.hpp"
#include "dapol/rng.hpp"

namespace dapol::sim {

struct SensorConfig {
    std::size_t width = 64;        ///< pixels
    double fov_deg = 90.0;         ///< horizontal field of view
    double noise_std = 0.02;       ///< additive Gaussian noise, intensity units
    double gamma = 1.0;            ///< output = input^gamma
    bool invert = false;           ///< intensity inversion before gamma
    double rolling_skew = 0.0;     ///< lateral sampling offset per unit lateral speed across the strip
    double max_range = 10.0;       ///< m; farther trees render as background

    friend bool operator==(const SensorConfig&, const SensorConfig&) = default;
};

struct AppearanceConfig {
    double background = 0.55;
    double tree_lo = 0.15;          ///< intensity of appearance 0
    double tree_hi = 0.35;          ///< intensity of appearance 1
    double clutter_rate = 0.2;      ///< per m^2
    double clutter_intensity = 0.2;
    double tree_radius_scale = 1.0; ///< applied at world generation

    friend bool operator==(const AppearanceConfig&, const AppearanceConfig&) = default;
};

struct DynamicsConfig {
    double forward_speed = 1.5;   ///< m/s
    double tau = 0.25;            ///< lateral time constant, s
    double wind_std = 0.05;       ///< per-tick gust added to lateral speed, m/s
    double control_rate = 15.0;   ///< Hz
    double max_lateral = 1.0;     ///< command bound, m/s

    double dt() const noexcept { return 1.0 / control_rate; }
    double step_length() const noexcept { return forward_speed * dt(); }

    friend bool operator==(const DynamicsConfig&, const DynamicsConfig&) = default;
};

struct DomainConfig {
    SensorConfig sensor;
    AppearanceConfig appearance;
    DynamicsConfig dynamics;

    friend bool operator==(const DomainConfig&, const DomainConfig&) = default;
};

/// Speckle footprint per pixel, m^2: converts a clutter rate into a per-pixel probability.
inline constexpr double kClutterFootprint = 0.2;
/// Distance attenuation of tree intensity, 1/m.
inline constexpr double kAttenuation = 0.05;

inline void validate(const DomainConfig& c) {
    if (c.sensor.width < 8) throw invalid_argument("DomainConfig: sensor width must be at least 8");
    if (!(c.sensor.fov_deg > 10.0 && c.sensor.fov_deg < 180.0)) throw invalid_argument("DomainConfig: FOV must be in (10, 180) degrees");
    if (!(c.sensor.noise_std >= 0.0) || !(c.sensor.gamma > 0.0) || !(c.sensor.max_range > 0.0))
        throw invalid_argument("DomainConfig: invalid sensor parameters");
    if (!(c.dynamics.tau > 0.0)) throw invalid_argument("DomainConfig: tau must be positive");
    if (!(c.dynamics.control_rate > 0.0)) throw invalid_argument("DomainConfig: control rate must be positive");
    if (!(c.dynamics.forward_speed > 0.0) || !(c.dynamics.max_lateral > 0.0) || !(c.dynamics.wind_std >= 0.0))
        throw invalid_argument("DomainConfig: invalid dynamics parameters");
    if (!(c.appearance.clutter_rate >= 0.0) || !(c.appearance.tree_radius_scale > 0.0))
        throw invalid_argument("DomainConfig: invalid appearance parameters");
}

struct Tree {
    double x = 0.0;
    double y = 0.0;
    double radius = 0.0;
    double appearance = 0.0;  ///< in [0, 1]; mapped to an intensity by AppearanceConfig

    friend bool operator==(const Tree&, const Tree&) = default;
};

struct WorldParams {
    double density = 1.0 / 36.0;  ///< trees per m^2
    double half_width = 10.0;     ///< m
    double length = 200.0;        ///< m
    double radius_min = 0.2;      ///< m, before radius_scale
    double radius_max = 0.4;
    double radius_scale = 1.0;
    double drone_radius = 0.25;
    double start_clear = 5.0;     ///< tree-free run-up from y = 0

    /// Minimum centre distance between two trees.
    double separation(double ri, double rj) const noexcept { return ri + rj + 2.0 * drone_radius + 0.2; }

    friend bool operator==(const WorldParams&, const WorldParams&) = default;
};

/// Tree field. Trees are sorted by y.
struct ForestWorld {
    WorldParams params;
    std::uint64_t seed = 0;
    std::vector<Tree> trees;

    friend bool operator==(const ForestWorld&, const ForestWorld&) = default;
};

/// Mirror image about x = 0.
inline ForestWorld mirrored(ForestWorld w) {
    for (auto& t : w.trees) t.x = -t.x;
    return w;
}

/// True iff every pair of trees honours the minimum separation and every tree
/// lies inside the corridor.
inline bool is_legal(const ForestWorld& w) {
    const auto& p = w.params;
    for (std::size_t i = 0; i < w.trees.size(); ++i) {
        const auto& a = w.trees[i];
        if (std::abs(a.x) + a.radius > p.half_width || a.y < 0.0 || a.y > p.length) return false;
        for (std::size_t j = i + 1; j < w.trees.size(); ++j) {
            const auto& b = w.trees[j];
            if (b.y - a.y >= p.separation(p.radius_max * p.radius_scale, p.radius_max * p.radius_scale)) break;
            if (std::hypot(a.x - b.x, a.y - b.y) < p.separation(a.radius, b.radius)) return false;
        }
    }
    return true;
}

/// Rejection-sampled uniform placement of round(density * area) trees over
/// the region beyond the run-up.
inline ForestWorld generate_world(const WorldParams& params, std::uint64_t seed) {
    if (!(params.density > 0.0)) throw invalid_argument("generate_world: density must be positive");
    const double rmax = params.radius_max * params.radius_scale;
    const double rmin = params.radius_min * params.radius_scale;
    if (!(rmin > 0.0) || rmin > rmax) throw invalid_argument("generate_world: invalid radius range");
    if (params.half_width <= rmax + params.drone_radius || params.length <= params.start_clear)
        throw invalid_argument("generate_world: corridor too small");

    const double area = 2.0 * params.half_width * (params.length - params.start_clear);
    const auto count = static_cast<std::size_t>(std::llround(params.density * area));
    ForestWorld w{params, seed, {}};
    w.trees.reserve(count);
    Rng rng(seed);
    constexpr std::size_t kMaxTries = 10000;
    const double max_sep = params.separation(rmax, rmax);
    for (std::size_t n = 0; n < count; ++n) {
        std::size_t tries = 0;
        for (;; ++tries) {
            if (tries == kMaxTries)
                throw infeasible_density_error("generate_world: could not place tree " + std::to_string(n) + " of " +
                                               std::to_string(count) + " after 10^4 attempts");
            Tree t;
            t.radius = rng.uniform(rmin, rmax);
            t.x = rng.uniform(-params.half_width + t.radius, params.half_width - t.radius);
            t.y = rng.uniform(params.start_clear, params.length);
            t.appearance = rng.uniform();
            // Candidates are kept sorted by y, so only a y-window needs checking.
            const auto lo = std::lower_bound(w.trees.begin(), w.trees.end(), t.y - max_sep,
                                             [](const Tree& a, double y) { return a.y < y; });
            bool ok = true;
            for (auto it = lo; it != w.trees.end() && it->y <= t.y + max_sep; ++it) {
                if (std::hypot(it->x - t.x, it->y - t.y) < params.separation(it->radius, t.radius)) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                const auto pos = std::upper_bound(w.trees.begin(), w.trees.end(), t.y,
                                                  [](double y, const Tree& a) { return y < a.y; });
                w.trees.insert(pos, t);
                break;
            }
        }
    }
    return w;
}

/// Trees whose y lies in [y_lo, y_hi].
inline std::span<const Tree> trees_between(const ForestWorld& w, double y_lo, double y_hi) {
    const auto lo = std::lower_bound(w.trees.begin(), w.trees.end(), y_lo, [](const Tree& a, double y) { return a.y < y; });
    const auto hi = std::upper_bound(lo, w.trees.end(), y_hi, [](double y, const Tree& a) { return y < a.y; });
    return {lo, hi};
}

struct DroneState {
    double x = 0.0;      ///< lateral position, m
    double y = 0.0;      ///< downrange position, m
    double v_lat = 0.0;  ///< lateral speed, m/s
    bool alive = true;
    std::uint64_t tick = 0;

    DroneState mirrored() const { return {-x, y, -v_lat, alive, tick}; }

    friend bool operator==(const DroneState&, const DroneState&) = default;
};

/// Per-tick random streams, separated so that rendering noise and dynamics
/// noise are independent of each other and of the policy.
inline std::uint64_t render_seed(std::uint64_t episode_seed, std::uint64_t tick) { return derive_seed(episode_seed, {0xCA3E7AULL, tick}); }
inline std::uint64_t dynamics_seed(std::uint64_t episode_seed, std::uint64_t tick) { return derive_seed(episode_seed, {0xD1A3ULL, tick}); }

/// Viewing angle of pixel p, radians; exactly antisymmetric: angle(W-1-p) == -angle(p).
inline double pixel_angle(std::size_t p, std::size_t width, double fov_deg) {
    const double step = fov_deg * (std::numbers::pi / 180.0) / static_cast<double>(width);
    return (static_cast<double>(p) + 0.5 - 0.5 * static_cast<double>(width)) * step;
}

/// Distance along the ray to the first intersection with the circle, or +inf.
inline double ray_circle(double ox, double oy, double dx, double dy, const Tree& t) {
    const double vx = t.x - ox, vy = t.y - oy;
    const double tca = vx * dx + vy * dy;
    const double d2 = vx * vx + vy * vy - tca * tca;
    const double r2 = t.radius * t.radius;
    if (d2 > r2) return std::numeric_limits<double>::infinity();
    const double half = std::sqrt(r2 - d2);
    const double t0 = tca - half;
    if (t0 >= 0.0) return t0;
    if (tca + half >= 0.0) return 0.0;  // origin inside the trunk
    return std::numeric_limits<double>::infinity();
}

/// Renders the monocular strip seen from `state`. Appearance only: the nearest
/// tree along each ray sets the pixel to its intensity attenuated by
/// 1 / (1 + 0.05 d); misses show background. Then clutter speckle, additive
/// noise, inversion and gamma, clamped to [0, 1].
inline std::vector<double> render_scan(const ForestWorld& world, const DroneState& state, const DomainConfig& cfg,
                                       std::uint64_t tick_seed) {
    const auto& s = cfg.sensor;
    const auto& a = cfg.appearance;
    const std::size_t w = s.width;
    const double rmax = world.params.radius_max * world.params.radius_scale;
    const double max_skew = std::abs(s.rolling_skew * state.v_lat) * 0.5;
    const auto visible = trees_between(world, state.y - rmax, state.y + s.max_range + rmax);

    std::vector<double> scan(w, a.background);
    for (std::size_t p = 0; p < w; ++p) {
        const double theta = pixel_angle(p, w, s.fov_deg);
        const double dx = std::sin(theta), dy = std::cos(theta);
        const double offset = s.rolling_skew * ((static_cast<double>(p) + 0.5) / static_cast<double>(w) - 0.5) * state.v_lat;
        const double ox = state.x + offset;
        double best = std::numeric_limits<double>::infinity();
        const Tree* hit = nullptr;
        for (const auto& t : visible) {
            if (std::abs(t.x - state.x) > s.max_range + t.radius + max_skew) continue;
            const double d = ray_circle(ox, state.y, dx, dy, t);
            if (d < best) {
                best = d;
                hit = &t;
            }
        }
        if (hit && best <= s.max_range) {
            const double intensity = a.tree_lo + hit->appearance * (a.tree_hi - a.tree_lo);
            scan[p] = intensity / (1.0 + kAttenuation * best);
        }
    }

    const bool stochastic = s.noise_std > 0.0 || a.clutter_rate > 0.0;
    if (stochastic) {
        Rng rng(tick_seed);
        const double p_clutter = 1.0 - std::exp(-a.clutter_rate * kClutterFootprint);
        for (auto& v : scan) {
            const double u = rng.uniform();
            const double amp = rng.uniform(-1.0, 1.0);
            if (u < p_clutter) v += a.clutter_intensity * amp;
            v += s.noise_std * rng.normal();
        }
    }
    for (auto& v : scan) {
        v = std::clamp(v, 0.0, 1.0);
        if (s.invert) v = 1.0 - v;
        if (s.gamma != 1.0) v = std::pow(v, s.gamma);
        v = std::clamp(v, 0.0, 1.0);
    }
    return scan;
}

/// First-order lateral response plus a wind gust; constant forward speed.
/// y is recomputed from the tick count so that an episode's downrange
/// progress is exactly ticks * v_f * dt.
inline DroneState step(const DroneState& st, double command, const DomainConfig& cfg, std::uint64_t tick_seed,
                       double y_start = 0.0) {
    const auto& d = cfg.dynamics;
    const double dt = d.dt();
    DroneState next = st;
    double gust = 0.0;
    if (d.wind_std > 0.0) {
        Rng rng(tick_seed);
        gust = d.wind_std * rng.normal();
    }
    next.v_lat = st.v_lat + (dt / d.tau) * (command - st.v_lat) + gust;
    next.x = st.x + next.v_lat * dt;
    next.tick = st.tick + 1;
    next.y = y_start + static_cast<double>(next.tick) * d.step_length();
    return next;
}

/// Strict overlap with any tree, or contact with a corridor wall.
inline bool check_collision(const ForestWorld& world, const DroneState& st, double drone_radius) {
    if (std::abs(st.x) > world.params.half_width - drone_radius) return true;
    const double rmax = world.params.radius_max * world.params.radius_scale;
    for (const auto& t : trees_between(world, st.y - rmax - drone_radius, st.y + rmax + drone_radius)) {
        const double reach = t.radius + drone_radius;
        const double dx = st.x - t.x, dy = st.y - t.y;
        if (dx * dx + dy * dy < reach * reach) return true;
    }
    return false;
}

struct ExpertConfig {
    double lookahead = 8.0;     ///< m downrange
    double gain = 0.8;          ///< k_p, 1/s
    double margin = 0.1;        ///< extra lateral clearance, m
    double sweep_speed = 0.6;   ///< fraction of v_max assumed when crossing in front of a tree
    double view = 8.0;          ///< lateral half-width searched for gaps, m (lookahead * tan(45 deg))

    friend bool operator==(const ExpertConfig&, const ExpertConfig&) = default;
};

struct Gap {
    double lo = 0.0;
    double hi = 0.0;
    double width() const noexcept { return hi - lo; }
    double center() const noexcept { return 0.5 * (lo + hi); }
};

/// Lateral interval a tree denies to the drone centre, with the tree's downrange distance.
struct Blocked {
    double lo = 0.0;
    double hi = 0.0;
    double dist = 0.0;
};

inline std::vector<Blocked> blocked_intervals(const ForestWorld& world, const DroneState& st, double lookahead,
                                              double margin) {
    const double rd = world.params.drone_radius;
    const double rmax = world.params.radius_max * world.params.radius_scale;
    std::vector<Blocked> out;
    for (const auto& t : trees_between(world, st.y - rmax - rd, st.y + lookahead + rmax + rd)) {
        if (t.y + t.radius + rd < st.y) continue;  // already behind
        if (t.y - t.radius - rd > st.y + lookahead) continue;
        const double e = t.radius + rd + margin;
        out.push_back({t.x - e, t.x + e, std::max(0.0, t.y - t.radius - rd - st.y)});
    }
    std::sort(out.begin(), out.end(), [](const Blocked& a, const Blocked& b) { return a.lo < b.lo; });
    return out;
}

/// Free lateral intervals left by `blocked` inside [lo, hi], left to right.
inline std::vector<Gap> free_gaps(const std::vector<Blocked>& blocked, double lo, double hi) {
    std::vector<Gap> gaps;
    double cursor = lo;
    for (const auto& b : blocked) {
        if (b.lo > cursor) gaps.push_back({cursor, std::min(b.lo, hi)});
        cursor = std::max(cursor, b.hi);
        if (cursor >= hi) break;
    }
    if (cursor < hi) gaps.push_back({cursor, hi});
    gaps.erase(std::remove_if(gaps.begin(), gaps.end(), [](const Gap& g) { return !(g.hi > g.lo); }), gaps.end());
    return gaps;
}

/// Privileged pilot. Trees inside the lookahead window leave free lateral gaps
/// within +-view of the drone (clipped to the corridor walls); the pilot steers toward the centre of the widest
/// reachable gap with command = clamp(gain * (centre - x), +-v_max). A gap is
/// reachable if the drone is inside it, or if every tree interval the lateral
/// sweep must clear can be cleared before that tree is reached at
/// sweep_speed * v_max. With no reachable gap the window is halved (twice)
/// before falling back to the nearest gap centre. Exactly antisymmetric under
/// mirroring of world and state.
inline double expert_policy(const ForestWorld& world, const DroneState& st, const ExpertConfig& ex, double v_max,
                            double forward_speed) {
    const double wall = world.params.half_width - world.params.drone_radius - ex.margin;
    const double lo = std::max(-wall, st.x - ex.view), hi = std::min(wall, st.x + ex.view);
    const double v_sweep = ex.sweep_speed * v_max;

    const Gap* fallback = nullptr;
    std::vector<Gap> fallback_gaps;
    for (double window = ex.lookahead, shrink = 0; shrink < 3; ++shrink, window *= 0.5) {
        const auto blocked = blocked_intervals(world, st, window, ex.margin);
        const auto gaps = free_gaps(blocked, lo, hi);
        if (gaps.empty()) continue;

        auto reachable = [&](const Gap& g) {
            if (g.lo <= st.x && st.x <= g.hi) return true;
            const double target = g.center();
            const bool right = target > st.x;
            for (const auto& b : blocked) {
                const bool in_path = right ? (b.hi > st.x && b.lo < target) : (b.lo < st.x && b.hi > target);
                if (!in_path) continue;
                const double clear = right ? b.hi - st.x : st.x - b.lo;
                if (clear > v_sweep * b.dist / forward_speed) return false;
            }
            return true;
        };

        const Gap* best = nullptr;
        for (const auto& g : gaps) {
            if (!reachable(g)) continue;
            if (!best || g.width() > best->width() ||
                (g.width() == best->width() && std::abs(g.center() - st.x) < std::abs(best->center() - st.x)))
                best = &g;
        }
        if (best) return std::clamp(ex.gain * (best->center() - st.x), -v_max, v_max);
        if (fallback_gaps.empty()) fallback_gaps = gaps;
    }
    for (const auto& g : fallback_gaps)
        if (!fallback || std::abs(g.center() - st.x) < std::abs(fallback->center() - st.x)) fallback = &g;
    if (!fallback) return 0.0;
    return std::clamp(ex.gain * (fallback->center() - st.x), -v_max, v_max);
}

inline double expert_policy(const ForestWorld& world, const DroneState& st, const ExpertConfig& ex, const DomainConfig& cfg) {
    return expert_policy(world, st, ex, cfg.dynamics.max_lateral, cfg.dynamics.forward_speed);
}

struct EpisodeResult {
    double distance_flown = 0.0;
    bool crashed = false;
    std::size_t trees_passed = 0;
    std::size_t trees_hit = 0;
    std::vector<DroneState> trajectory;  ///< state after each tick, initial state first
    std::vector<double> commands;        ///< command issued at each tick

    friend bool operator==(const EpisodeResult&, const EpisodeResult&) = default;
};

/// A reactive policy sees only the rendered strip (and the tick index, which
/// stateless random policies use to derive their draws).
using Policy = std::function<double(std::span<const double> scan, std::uint64_t tick)>;

/// Counts trees whose y was passed on this tick.
inline std::size_t newly_passed(const ForestWorld& world, double y_before, double y_after) {
    return trees_between(world, std::nextafter(y_before, std::numeric_limits<double>::infinity()), y_after).size();
}

/// Flies `policy` from the corridor start until a crash or y >= max_dist.
inline EpisodeResult run_episode(const Policy& policy, const ForestWorld& world, const DomainConfig& cfg, double max_dist,
                                 std::uint64_t seed) {
    validate(cfg);
    if (max_dist > world.params.length) throw invalid_argument("run_episode: max_dist exceeds corridor length");
    const double v_max = cfg.dynamics.max_lateral;
    const double rd = world.params.drone_radius;
    EpisodeResult res;
    DroneState st;
    res.trajectory.push_back(st);
    while (st.y < max_dist) {
        const auto scan = render_scan(world, st, cfg, render_seed(seed, st.tick));
        const double cmd = std::clamp(policy(scan, st.tick), -v_max, v_max);
        res.commands.push_back(cmd);
        const double y_before = st.y;
        st = step(st, cmd, cfg, dynamics_seed(seed, st.tick));
        if (check_collision(world, st, rd)) {
            st.alive = false;
            res.trajectory.push_back(st);
            res.crashed = true;
            res.trees_hit = 1;
            break;
        }
        res.trees_passed += newly_passed(world, y_before, st.y);
        res.trajectory.push_back(st);
    }
    res.distance_flown = res.trajectory.back().y;
    return res;
}

/// Uniform random lateral command each tick, a pure function of (seed, tick).
inline Policy random_policy(std::uint64_t seed, double v_max) {
    return [seed, v_max](std::span<const double>, std::uint64_t tick) {
        Rng rng(derive_seed(seed, {0x7A4D0ULL, tick}));
        return rng.uniform(-v_max, v_max);
    };
}

/// The privileged expert as a Policy for run_episode with the same world,
/// config and seed. It ignores the scan and tracks the drone by replaying the
/// dynamics, which are a pure function of (seed, tick).
inline Policy expert_pilot(const ForestWorld& world, const ExpertConfig& ex, const DomainConfig& cfg, std::uint64_t seed) {
    auto st = std::make_shared<DroneState>();
    return [&world, ex, cfg, seed, st](std::span<const double>, std::uint64_t tick) {
        if (tick != st->tick) throw invalid_argument("expert_pilot: ticks must be consecutive from 0");
        const double cmd = expert_policy(world, *st, ex, cfg);
        *st = step(*st, std::clamp(cmd, -cfg.dynamics.max_lateral, cfg.dynamics.max_lateral), cfg, dynamics_seed(seed, tick));
        return cmd;
    };
}

}  // namespace dapol::sim
