#pragma once

// Named source/target domain pairs. Every numeric shift lives here and in the
// golden files under tests/golden, never in simulator logic.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dapol/error.hpp"
#include "dapol/imitation.hpp"
#include "dapol/sim.hpp"

namespace dapol::scenarios {

inline constexpr int kScenarioSchemaVersion = 1;
inline constexpr double kLowDensity = 1.0 / 36.0;
inline constexpr double kHighDensity = 1.0 / 9.0;

struct DomainSide {
    sim::DomainConfig domain;
    double density = kLowDensity;
    imitation::LabelSpace label_space = imitation::LabelSpace::fine;

    friend bool operator==(const DomainSide&, const DomainSide&) = default;
};

struct Scenario {
    std::string name;
    DomainSide source;
    DomainSide target;
    std::string notes;

    friend bool operator==(const Scenario&, const Scenario&) = default;
};

inline const std::vector<std::string>& scenario_names() {
    static const std::vector<std::string> names{"systems", "weather", "environment", "sanity_gamma"};
    return names;
}

inline Scenario build_scenario(const std::string& name) {
    Scenario s;
    s.name = name;
    if (name == "systems") {
        auto& src = s.source.domain;
        src.sensor.width = 64;
        src.sensor.rolling_skew = 2.0;
        src.sensor.noise_std = 0.03;
        src.dynamics.tau = 0.35;
        src.dynamics.wind_std = 0.08;
        auto& tgt = s.target.domain;
        tgt.sensor.width = 96;
        tgt.sensor.rolling_skew = 0.0;
        tgt.sensor.noise_std = 0.01;
        tgt.dynamics.tau = 0.15;
        tgt.dynamics.wind_std = 0.03;
        s.notes = "rolling-shutter, low-resolution, sluggish and gusty platform to a global-shutter, higher-resolution, "
                  "responsive one; appearance unchanged";
    } else if (name == "weather") {
        auto& src = s.source.domain.appearance;
        src.background = 0.55;
        src.tree_lo = 0.15;
        src.tree_hi = 0.35;
        src.clutter_rate = 0.5;
        s.target.domain = s.source.domain;
        auto& tgt = s.target.domain.appearance;
        tgt.background = 0.9;
        tgt.tree_lo = 0.25;
        tgt.tree_hi = 0.4;
        tgt.tree_radius_scale = 0.7;
        tgt.clutter_rate = 0.05;
        s.notes = "summer (dark foliage, heavy clutter) to winter (bright snow background, bare thinner trunks); "
                  "sensor and dynamics unchanged";
    } else if (name == "environment") {
        s.source.label_space = imitation::LabelSpace::coarse3;
        s.source.density = kLowDensity;
        s.target.density = kHighDensity;
        s.notes = "sparse source forest labelled only left/center/right to a dense target forest with fine labels "
                  "withheld";
    } else if (name == "sanity_gamma") {
        s.target.domain.sensor.gamma = 2.2;
        s.target.domain.sensor.invert = true;
        s.notes = "target strip is the source strip inverted and gamma-warped; a monotone, alignable shift";
    } else {
        throw invalid_argument("unknown scenario '" + name + "'");
    }
    return s;
}

// ---- JSON ------------------------------------------------------------------

inline nlohmann::ordered_json domain_to_json(const sim::DomainConfig& d) {
    nlohmann::ordered_json j;
    j["sensor"] = {{"width", d.sensor.width},
                   {"fov_deg", d.sensor.fov_deg},
                   {"noise_std", d.sensor.noise_std},
                   {"gamma", d.sensor.gamma},
                   {"invert", d.sensor.invert},
                   {"rolling_skew", d.sensor.rolling_skew},
                   {"max_range", d.sensor.max_range}};
    j["appearance"] = {{"background", d.appearance.background},
                       {"tree_lo", d.appearance.tree_lo},
                       {"tree_hi", d.appearance.tree_hi},
                       {"clutter_rate", d.appearance.clutter_rate},
                       {"clutter_intensity", d.appearance.clutter_intensity},
                       {"tree_radius_scale", d.appearance.tree_radius_scale}};
    j["dynamics"] = {{"forward_speed", d.dynamics.forward_speed},
                     {"tau", d.dynamics.tau},
                     {"wind_std", d.dynamics.wind_std},
                     {"control_rate", d.dynamics.control_rate},
                     {"max_lateral", d.dynamics.max_lateral}};
    return j;
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline sim::DomainConfig domain_from_json(const nlohmann::json& j) {
    sim::DomainConfig d;
    auto read = [](const nlohmann::json& obj, const char* section, auto&& fields) {
        if (!obj.is_object()) throw invalid_argument(std::string("domain: '") + section + "' must be an object");
        for (const auto& [k, v] : obj.items())
            if (!fields(k, v)) throw invalid_argument(std::string("domain: unknown key '") + section + "." + k + "'");
    };
    for (const auto& [section, obj] : j.items()) {
        if (section == "sensor") {
            read(obj, "sensor", [&](const std::string& k, const nlohmann::json& v) {
                if (k == "width") d.sensor.width = v.get<std::size_t>();
                else if (k == "fov_deg") d.sensor.fov_deg = v.get<double>();
                else if (k == "noise_std") d.sensor.noise_std = v.get<double>();
                else if (k == "gamma") d.sensor.gamma = v.get<double>();
                else if (k == "invert") d.sensor.invert = v.get<bool>();
                else if (k == "rolling_skew") d.sensor.rolling_skew = v.get<double>();
                else if (k == "max_range") d.sensor.max_range = v.get<double>();
                else return false;
                return true;
            });
        } else if (section == "appearance") {
            read(obj, "appearance", [&](const std::string& k, const nlohmann::json& v) {
                if (k == "background") d.appearance.background = v.get<double>();
                else if (k == "tree_lo") d.appearance.tree_lo = v.get<double>();
                else if (k == "tree_hi") d.appearance.tree_hi = v.get<double>();
                else if (k == "clutter_rate") d.appearance.clutter_rate = v.get<double>();
                else if (k == "clutter_intensity") d.appearance.clutter_intensity = v.get<double>();
                else if (k == "tree_radius_scale") d.appearance.tree_radius_scale = v.get<double>();
                else return false;
                return true;
            });
        } else if (section == "dynamics") {
            read(obj, "dynamics", [&](const std::string& k, const nlohmann::json& v) {
                if (k == "forward_speed") d.dynamics.forward_speed = v.get<double>();
                else if (k == "tau") d.dynamics.tau = v.get<double>();
                else if (k == "wind_std") d.dynamics.wind_std = v.get<double>();
                else if (k == "control_rate") d.dynamics.control_rate = v.get<double>();
                else if (k == "max_lateral") d.dynamics.max_lateral = v.get<double>();
                else return false;
                return true;
            });
        } else {
            throw invalid_argument("domain: unknown section '" + section + "'");
        }
    }
    sim::validate(d);
    return d;
}

inline nlohmann::ordered_json side_to_json(const DomainSide& s) {
    nlohmann::ordered_json j;
    j["density"] = s.density;
    j["label_space"] = imitation::to_string(s.label_space);
    j["domain"] = domain_to_json(s.domain);
    return j;
}

inline DomainSide side_from_json(const nlohmann::json& j) {
    DomainSide s;
    s.density = j.at("density").get<double>();
    s.label_space = imitation::label_space_from_string(j.at("label_space").get<std::string>());
    s.domain = domain_from_json(j.at("domain"));
    return s;
}

inline nlohmann::ordered_json to_json(const Scenario& s) {
    nlohmann::ordered_json j;
    j["schema_version"] = kScenarioSchemaVersion;
    j["name"] = s.name;
    j["notes"] = s.notes;
    j["source"] = side_to_json(s.source);
    j["target"] = side_to_json(s.target);
    return j;
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
    if (j.value("schema_version", -1) != kScenarioSchemaVersion)
        throw invalid_argument("scenario: unsupported schema_version");
    Scenario s;
    s.name = j.at("name").get<std::string>();
    s.notes = j.value("notes", "");
    s.source = side_from_json(j.at("source"));
    s.target = side_from_json(j.at("target"));
    return s;
}

/// Canonical text form; golden files hold exactly this.
inline std::string dump(const Scenario& s) { return to_json(s).dump(2) + "\n"; }

/// Environments the imitation layer flies in.
inline imitation::Env source_env(const Scenario& s) {
    imitation::Env e;
    e.domain = s.source.domain;
    e.world.density = s.source.density;
    e.tag = s.name + ":source";
    return e;
}

inline imitation::Env target_env(const Scenario& s) {
    imitation::Env e;
    e.domain = s.target.domain;
    e.world.density = s.target.density;
    e.tag = s.name + ":target";
    return e;
}

}  // namespace dapol::scenarios
