#pragma once

// Run configuration: a line-oriented text file of dotted `section.key = value`
// pairs. '#' starts a comment. Vectors are space separated. Every section must
// appear at least once; keys left out keep their defaults; unknown keys are an
// error. `emit_run_config` writes the canonical form, which parses back to the
// same configuration.

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ncbf/datagen.hpp"
#include "ncbf/safectrl.hpp"
#include "ncbf/training.hpp"

namespace ncbf {

struct RunPaths {
    std::string dataset = "dataset.txt";
    std::string checkpoint = "model.ckpt";
    std::string report = "report.csv";
    std::string landscape = "landscape.csv";
};

struct RunConfig {
    DynamicsModel dynamics = DynamicsModel::defaults(DynamicsKind::DoubleIntegrator);
    std::uint64_t world_seed = 7;
    WorldGenConfig world;
    PotentialFieldSampler controller;
    CollectConfig collect;
    LabelingConfig labeling;
    TrainingConfig training;
    Method method = Method::NcbfBc;
    long subsample_labeled = -1;  // negative keeps the pool whole
    long subsample_unlabeled = -1;
    EvaluationConfig evaluation;
    ControlFilterConfig filter;
    LandscapeConfig landscape;
    RunPaths paths;

    World make_world() const {
        Rng rng(world_seed);
        return generate_world(world, rng);
    }

    void validate() const {
        dynamics.validate();
        if (collect.count < 0) throw ConfigError("collect: count must be >= 0");
        if (collect.max_steps < 0 || evaluation.max_steps < 0) throw ConfigError("max_steps must be >= 0");
        if (labeling.tau < 0) throw ConfigError("labeling: tau must be >= 0");
        training.validate();
        filter.validate();
        if (evaluation.count < 0) throw ConfigError("evaluation: count must be >= 0");
        if (landscape.resolution < 1) throw ConfigError("landscape: resolution must be >= 1");
        if (world.obstacles_min < 0 || world.obstacles_max < world.obstacles_min)
            throw ConfigError("world: obstacle count range is empty");
        if (!(world.radius_min > 0.0) || world.radius_max < world.radius_min)
            throw ConfigError("world: obstacle radius range is empty");
        auto interval_ok = [](const Interval& i) { return i.lo <= i.hi; };
        if (!interval_ok(controller.attractive_gain) || !interval_ok(controller.repulsive_gain) ||
            !interval_ok(controller.repulsive_range))
            throw ConfigError("controller: interval lo must be <= hi");
    }
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

// shortest text that parses back to the same double
inline std::string shortest(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline std::vector<std::string> words(std::string_view s) {
    std::istringstream in{std::string(s)};
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

inline double to_double(std::string_view key, std::string_view s) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw ConfigError(std::string(key) + ": expected a number, got '" + std::string(s) + "'");
    return v;
}

template <class Int>
Int to_int(std::string_view key, std::string_view s) {
    Int v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw ConfigError(std::string(key) + ": expected an integer, got '" + std::string(s) + "'");
    return v;
}

inline bool to_bool(std::string_view key, std::string_view s) {
    if (s == "true" || s == "on" || s == "1") return true;
    if (s == "false" || s == "off" || s == "0") return false;
    throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(s) + "'");
}

struct ConfigField {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

inline std::vector<ConfigField> config_fields() {
    std::vector<ConfigField> f;
    auto num = [&f](std::string key, auto member) {
        f.push_back({key, [member](const RunConfig& c) { return shortest(member(const_cast<RunConfig&>(c))); },
                     [member, key](RunConfig& c, const std::string& v) { member(c) = to_double(key, v); }});
    };
    auto integer = [&f](std::string key, auto member) {
        f.push_back({key, [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); },
                     [member, key](RunConfig& c, const std::string& v) {
                         using T = std::remove_reference_t<decltype(member(c))>;
                         member(c) = to_int<T>(key, v);
                     }});
    };
    auto flag = [&f](std::string key, auto member) {
        f.push_back({key, [member](const RunConfig& c) -> std::string {
                         return member(const_cast<RunConfig&>(c)) ? "true" : "false";
                     },
                     [member, key](RunConfig& c, const std::string& v) { member(c) = to_bool(key, v); }});
    };
    auto text = [&f](std::string key, auto member) {
        f.push_back({key, [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); },
                     [member](RunConfig& c, const std::string& v) { member(c) = v; }});
    };
    auto pair = [&f](std::string key, auto lo, auto hi) {
        f.push_back({key,
                     [lo, hi](const RunConfig& c) {
                         auto& m = const_cast<RunConfig&>(c);
                         return shortest(lo(m)) + " " + shortest(hi(m));
                     },
                     [lo, hi, key](RunConfig& c, const std::string& v) {
                         const auto w = words(v);
                         if (w.size() != 2) throw ConfigError(key + ": expected two numbers");
                         lo(c) = to_double(key, w[0]);
                         hi(c) = to_double(key, w[1]);
                     }});
    };

    // dynamics.kind is applied first by the parser; it resets the control bounds.
    f.push_back({"dynamics.kind", [](const RunConfig& c) { return std::string(to_string(c.dynamics.kind)); },
                 [](RunConfig& c, const std::string& v) { c.dynamics.kind = parse_dynamics_kind(v); }});
    num("dynamics.dt", [](RunConfig& c) -> double& { return c.dynamics.dt; });
    num("dynamics.wheelbase", [](RunConfig& c) -> double& { return c.dynamics.wheelbase; });
    num("dynamics.v_max", [](RunConfig& c) -> double& { return c.dynamics.v_max; });
    num("dynamics.omega_max", [](RunConfig& c) -> double& { return c.dynamics.omega_max; });
    pair("dynamics.u_min", [](RunConfig& c) -> double& { return c.dynamics.u_min(0); },
         [](RunConfig& c) -> double& { return c.dynamics.u_min(1); });
    pair("dynamics.u_max", [](RunConfig& c) -> double& { return c.dynamics.u_max(0); },
         [](RunConfig& c) -> double& { return c.dynamics.u_max(1); });

    integer("world.seed", [](RunConfig& c) -> std::uint64_t& { return c.world_seed; });
    pair("world.x_range", [](RunConfig& c) -> double& { return c.world.bounds.x_min; },
         [](RunConfig& c) -> double& { return c.world.bounds.x_max; });
    pair("world.y_range", [](RunConfig& c) -> double& { return c.world.bounds.y_min; },
         [](RunConfig& c) -> double& { return c.world.bounds.y_max; });
    integer("world.obstacles_min", [](RunConfig& c) -> int& { return c.world.obstacles_min; });
    integer("world.obstacles_max", [](RunConfig& c) -> int& { return c.world.obstacles_max; });
    num("world.radius_min", [](RunConfig& c) -> double& { return c.world.radius_min; });
    num("world.radius_max", [](RunConfig& c) -> double& { return c.world.radius_max; });
    num("world.robot_radius", [](RunConfig& c) -> double& { return c.world.robot_radius; });
    num("world.wall_margin", [](RunConfig& c) -> double& { return c.world.wall_margin; });
    num("world.gap", [](RunConfig& c) -> double& { return c.world.gap; });

    flag("controller.randomized", [](RunConfig& c) -> bool& { return c.controller.randomized; });
    num("controller.attractive_gain", [](RunConfig& c) -> double& { return c.controller.fixed.attractive_gain; });
    num("controller.repulsive_gain", [](RunConfig& c) -> double& { return c.controller.fixed.repulsive_gain; });
    num("controller.repulsive_range", [](RunConfig& c) -> double& { return c.controller.fixed.repulsive_range; });
    num("controller.tracking_gain", [](RunConfig& c) -> double& { return c.controller.fixed.tracking_gain; });
    pair("controller.attractive_gain_interval", [](RunConfig& c) -> double& { return c.controller.attractive_gain.lo; },
         [](RunConfig& c) -> double& { return c.controller.attractive_gain.hi; });
    pair("controller.repulsive_gain_interval", [](RunConfig& c) -> double& { return c.controller.repulsive_gain.lo; },
         [](RunConfig& c) -> double& { return c.controller.repulsive_gain.hi; });
    pair("controller.repulsive_range_interval",
         [](RunConfig& c) -> double& { return c.controller.repulsive_range.lo; },
         [](RunConfig& c) -> double& { return c.controller.repulsive_range.hi; });

    integer("collect.count", [](RunConfig& c) -> int& { return c.collect.count; });
    integer("collect.max_steps", [](RunConfig& c) -> int& { return c.collect.max_steps; });
    num("collect.goal_radius", [](RunConfig& c) -> double& { return c.collect.goal_radius; });
    num("collect.start_margin", [](RunConfig& c) -> double& { return c.collect.start_margin; });
    num("collect.min_start_goal_distance", [](RunConfig& c) -> double& { return c.collect.min_start_goal_distance; });
    num("collect.initial_speed_max", [](RunConfig& c) -> double& { return c.collect.initial_speed_max; });
    integer("collect.seed", [](RunConfig& c) -> std::uint64_t& { return c.collect.seed; });

    integer("labeling.tau", [](RunConfig& c) -> int& { return c.labeling.tau; });
    f.push_back({"labeling.timeout",
                 [](const RunConfig& c) -> std::string {
                     return c.labeling.timeout == TimeoutPolicy::Safe ? "safe" : "discard";
                 },
                 [](RunConfig& c, const std::string& v) {
                     if (v == "safe") c.labeling.timeout = TimeoutPolicy::Safe;
                     else if (v == "discard") c.labeling.timeout = TimeoutPolicy::Discard;
                     else throw ConfigError("labeling.timeout: expected safe or discard, got '" + v + "'");
                 }});

    f.push_back({"training.method", [](const RunConfig& c) { return std::string(to_string(c.method)); },
                 [](RunConfig& c, const std::string& v) { c.method = parse_method(v); }});
    integer("training.iterations", [](RunConfig& c) -> int& { return c.training.iterations; });
    integer("training.annotation_start", [](RunConfig& c) -> int& { return c.training.annotation_start; });
    num("training.c", [](RunConfig& c) -> double& { return c.training.c; });
    num("training.kappa", [](RunConfig& c) -> double& { return c.training.kappa; });
    integer("training.anchor_size", [](RunConfig& c) -> int& { return c.training.anchor_size; });
    integer("training.batch_safe", [](RunConfig& c) -> int& { return c.training.batch_safe; });
    integer("training.batch_unsafe", [](RunConfig& c) -> int& { return c.training.batch_unsafe; });
    integer("training.batch_unlabeled", [](RunConfig& c) -> int& { return c.training.batch_unlabeled; });
    integer("training.hidden_width", [](RunConfig& c) -> int& { return c.training.hidden_width; });
    num("training.learning_rate", [](RunConfig& c) -> double& { return c.training.adam.learning_rate; });
    num("training.beta1", [](RunConfig& c) -> double& { return c.training.adam.beta1; });
    num("training.beta2", [](RunConfig& c) -> double& { return c.training.adam.beta2; });
    num("training.epsilon", [](RunConfig& c) -> double& { return c.training.adam.epsilon; });
    integer("training.seed", [](RunConfig& c) -> std::uint64_t& { return c.training.seed; });
    flag("training.regularization", [](RunConfig& c) -> bool& { return c.training.regularization_on; });
    flag("training.annotation", [](RunConfig& c) -> bool& { return c.training.annotation_on; });
    integer("training.subsample_labeled", [](RunConfig& c) -> long& { return c.subsample_labeled; });
    integer("training.subsample_unlabeled", [](RunConfig& c) -> long& { return c.subsample_unlabeled; });
    integer("training.unsafe_horizon", [](RunConfig& c) -> int& { return c.training.unsafe_horizon; });

    integer("evaluation.count", [](RunConfig& c) -> int& { return c.evaluation.count; });
    integer("evaluation.seed", [](RunConfig& c) -> std::uint64_t& { return c.evaluation.seed; });
    integer("evaluation.max_steps", [](RunConfig& c) -> int& { return c.evaluation.max_steps; });
    num("evaluation.start_margin", [](RunConfig& c) -> double& { return c.evaluation.start_margin; });
    num("evaluation.min_start_goal_distance",
        [](RunConfig& c) -> double& { return c.evaluation.min_start_goal_distance; });
    integer("evaluation.sample_size", [](RunConfig& c) -> int& { return c.filter.sample_size; });
    f.push_back({"evaluation.sampling",
                 [](const RunConfig& c) -> std::string {
                     return c.filter.scheme == SamplingScheme::UniformGrid ? "grid" : "random";
                 },
                 [](RunConfig& c, const std::string& v) {
                     if (v == "grid") c.filter.scheme = SamplingScheme::UniformGrid;
                     else if (v == "random") c.filter.scheme = SamplingScheme::UniformRandom;
                     else throw ConfigError("evaluation.sampling: expected grid or random, got '" + v + "'");
                 }});
    num("evaluation.goal_radius", [](RunConfig& c) -> double& { return c.filter.goal_radius; });
    num("evaluation.speed_weight", [](RunConfig& c) -> double& { return c.filter.speed_weight; });

    integer("landscape.resolution", [](RunConfig& c) -> int& { return c.landscape.resolution; });
    num("landscape.yaw", [](RunConfig& c) -> double& { return c.landscape.yaw; });
    num("landscape.v", [](RunConfig& c) -> double& { return c.landscape.v; });
    num("landscape.omega", [](RunConfig& c) -> double& { return c.landscape.omega; });

    text("paths.dataset", [](RunConfig& c) -> std::string& { return c.paths.dataset; });
    text("paths.checkpoint", [](RunConfig& c) -> std::string& { return c.paths.checkpoint; });
    text("paths.report", [](RunConfig& c) -> std::string& { return c.paths.report; });
    text("paths.landscape", [](RunConfig& c) -> std::string& { return c.paths.landscape; });
    return f;
}

inline const std::vector<std::string>& config_sections() {
    static const std::vector<std::string> s{"dynamics", "world",    "controller", "collect", "labeling",
                                            "training", "evaluation", "landscape", "paths"};
    return s;
}

}  // namespace detail

inline std::string emit_run_config(const RunConfig& cfg) {
    std::string out = "# ncbf run config v1\n";
    std::string section;
    for (const auto& f : detail::config_fields()) {
        const std::string sec = f.key.substr(0, f.key.find('.'));
        if (sec != section) {
            if (!section.empty()) out += "\n";
            section = sec;
        }
        out += f.key + " = " + f.get(cfg) + "\n";
    }
    return out;
}

/// Throws FormatError (with the offending line) on syntax problems and unknown
/// or duplicate keys, ConfigError on out-of-range values.
inline RunConfig parse_run_config(const std::string& text, const std::string& origin = "<config>") {
    struct Entry {
        std::string value;
        std::size_t line;
    };
    std::map<std::string, Entry> entries;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    const auto fields = detail::config_fields();
    std::set<std::string> known;
    for (const auto& f : fields) known.insert(f.key);
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string t = detail::trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw FormatError(origin, lineno, "expected 'key = value'");
        const std::string key = detail::trim(std::string_view(t).substr(0, eq));
        const std::string value = detail::trim(std::string_view(t).substr(eq + 1));
        if (!known.count(key)) throw FormatError(origin, lineno, "unknown key '" + key + "'");
        if (entries.count(key)) throw FormatError(origin, lineno, "duplicate key '" + key + "'");
        entries[key] = {value, lineno};
    }
    for (const auto& sec : detail::config_sections()) {
        const bool present = std::any_of(entries.begin(), entries.end(),
                                         [&](const auto& e) { return e.first.rfind(sec + ".", 0) == 0; });
        if (!present) throw ConfigError(origin + ": missing section '" + sec + "'");
    }

    RunConfig cfg;
    if (auto it = entries.find("dynamics.kind"); it != entries.end())
        cfg.dynamics = DynamicsModel::defaults(parse_dynamics_kind(it->second.value));
    for (const auto& f : fields) {
        auto it = entries.find(f.key);
        if (it == entries.end()) continue;
        try {
            f.set(cfg, it->second.value);
        } catch (const ConfigError& e) {
            throw FormatError(origin, it->second.line, e.what());
        }
    }
    cfg.validate();
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), path);
}

}  // namespace ncbf
