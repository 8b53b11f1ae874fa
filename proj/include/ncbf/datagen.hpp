#pragma once

// Demonstration collection, unlabel-horizon labeling and the dataset file.
//
// Dataset file layout (text, one record per line):
//   ncbf-dataset v1 kind=<dynamics> dt=<f> tau=<n> timeout=<discard|safe> trajectories=<n>
//   T <id> <outcome> <goal_x> <goal_y> <k_att> <k_rep> <range> <k_track> <n_states> S <5n floats> U <2(n-1) floats>
// Floats use 17 significant digits so f64 values round-trip exactly.

#include <cerrno>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ncbf/dynamics.hpp"
#include "ncbf/error.hpp"
#include "ncbf/models.hpp"
#include "ncbf/rng.hpp"

namespace ncbf {

enum class Outcome { ReachedGoal, Collision, Timeout };

inline std::string_view to_string(Outcome o) {
    switch (o) {
        case Outcome::ReachedGoal: return "goal";
        case Outcome::Collision: return "collision";
        case Outcome::Timeout: return "timeout";
    }
    return "?";
}

struct Trajectory {
    std::vector<State> states;
    std::vector<Control> controls;  // states.size() - 1 entries
    Outcome outcome = Outcome::Timeout;
    PotentialFieldParams controller_params;
    double goal_x = 0.0;
    double goal_y = 0.0;

    std::size_t size() const { return states.size(); }
};

enum class TimeoutPolicy { Discard, Safe };

struct LabelingConfig {
    int tau = 9;
    TimeoutPolicy timeout = TimeoutPolicy::Discard;
};

/// Index of one state inside the stored trajectories.
struct StateRef {
    std::uint32_t trajectory = 0;
    std::uint32_t step = 0;

    friend bool operator==(const StateRef&, const StateRef&) = default;
};

struct Dataset {
    DynamicsKind kind = DynamicsKind::DoubleIntegrator;
    double dt = 0.2;
    LabelingConfig labeling;
    std::vector<Trajectory> trajectories;
    std::vector<StateRef> safe, unsafe, unlabeled;

    const State& state(StateRef r) const { return trajectories.at(r.trajectory).states.at(r.step); }

    /// Recorded control leaving the referenced state; zero for terminal states.
    Control recorded_control(StateRef r) const {
        const auto& t = trajectories.at(r.trajectory);
        return r.step < t.controls.size() ? t.controls[r.step] : Control{};
    }

    MatrixXd gather(const std::vector<StateRef>& refs) const {
        MatrixXd m(kStateDim, static_cast<Index>(refs.size()));
        for (std::size_t i = 0; i < refs.size(); ++i) m.col(static_cast<Index>(i)) = state(refs[i]).vec();
        return m;
    }
};

// ---------------------------------------------------------------- rollout

/// Closed loop of `controller` (callable State -> Control) until the goal
/// radius is reached, a collision occurs, or `max_steps` transitions ran.
/// Collision takes precedence over goal arrival on the same state.
template <class Controller>
Trajectory rollout(Controller&& controller, const DynamicsModel& model, const World& world, const State& init,
                   int max_steps, double goal_radius) {
    Trajectory t;
    t.goal_x = world.goal_x;
    t.goal_y = world.goal_y;
    t.states.push_back(init);
    auto classify = [&](const State& s) -> std::optional<Outcome> {
        if (collision_check(world, s)) return Outcome::Collision;
        if (std::hypot(s.x - world.goal_x, s.y - world.goal_y) <= goal_radius) return Outcome::ReachedGoal;
        return std::nullopt;
    };
    if (auto o = classify(init)) {
        t.outcome = *o;
        return t;
    }
    for (int k = 0; k < max_steps; ++k) {
        const State& s = t.states.back();
        const Control u = model.clamp(controller(s));
        const State next = step(model, s, u);
        t.controls.push_back(u);
        t.states.push_back(next);
        if (auto o = classify(next)) {
            t.outcome = *o;
            return t;
        }
    }
    t.outcome = Outcome::Timeout;
    return t;
}

struct CollectConfig {
    int count = 500;
    int max_steps = 300;
    double goal_radius = 0.3;
    double start_margin = 0.2;          // clearance beyond inflated obstacles
    double min_start_goal_distance = 4.0;
    double initial_speed_max = 0.0;     // initial speed drawn from [0, max]
    std::uint64_t seed = 1;
};

/// Random start/goal pairs in `world`, one controller draw per trajectory.
/// Trajectory i uses its own generator forked from the seed.
inline std::vector<Trajectory> collect_trajectories(const CollectConfig& cfg, const DynamicsModel& model,
                                                    const World& world, const PotentialFieldSampler& sampler) {
    if (cfg.count < 0) throw ConfigError("collect: count must be >= 0");
    std::vector<Trajectory> out;
    out.reserve(static_cast<std::size_t>(cfg.count));
    Rng root(cfg.seed);
    for (int i = 0; i < cfg.count; ++i) {
        Rng rng = root.fork(static_cast<std::uint64_t>(i));
        const PotentialFieldParams params = sampler.draw(rng);
        const auto [sx, sy] = sample_free_position(world, cfg.start_margin, rng);
        double gx = sx, gy = sy;
        for (int k = 0; k < 10000; ++k) {
            std::tie(gx, gy) = sample_free_position(world, cfg.start_margin, rng);
            if (std::hypot(gx - sx, gy - sy) >= cfg.min_start_goal_distance) break;
        }
        State init{sx, sy, rng.uniform(-std::numbers::pi, std::numbers::pi), 0.0, 0.0};
        if (cfg.initial_speed_max > 0.0) init.v = std::min(rng.uniform(0.0, cfg.initial_speed_max), model.v_max);
        const World w = world.with_goal(gx, gy);
        auto pf = [&](const State& s) { return potential_field_control(params, s, w, model); };
        Trajectory t = rollout(pf, model, w, init, cfg.max_steps, cfg.goal_radius);
        t.controller_params = params;
        out.push_back(std::move(t));
    }
    return out;
}

// ---------------------------------------------------------------- labeling

/// Goal-reaching trajectories are all safe. A collision trajectory gives its
/// final state to the unsafe pool, the min(tau, len - 1) states before it to
/// the unlabeled pool and everything earlier to the safe pool. Timeouts are
/// discarded or treated as safe per the config.
inline Dataset label_trajectories(std::vector<Trajectory> trajs, const LabelingConfig& cfg, DynamicsKind kind,
                                  double dt) {
    if (cfg.tau < 0) throw ConfigError("labeling: tau must be >= 0");
    Dataset ds;
    ds.kind = kind;
    ds.dt = dt;
    ds.labeling = cfg;
    ds.trajectories = std::move(trajs);
    for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
        const auto& t = ds.trajectories[i];
        const auto id = static_cast<std::uint32_t>(i);
        const auto len = static_cast<std::uint32_t>(t.size());
        if (len == 0) throw ContractError("labeling: empty trajectory");
        const bool all_safe =
            t.outcome == Outcome::ReachedGoal || (t.outcome == Outcome::Timeout && cfg.timeout == TimeoutPolicy::Safe);
        if (all_safe) {
            for (std::uint32_t k = 0; k < len; ++k) ds.safe.push_back({id, k});
            continue;
        }
        if (t.outcome != Outcome::Collision) continue;
        const std::uint32_t window = std::min<std::uint32_t>(static_cast<std::uint32_t>(cfg.tau), len - 1);
        const std::uint32_t first_unlabeled = len - 1 - window;
        for (std::uint32_t k = 0; k < first_unlabeled; ++k) ds.safe.push_back({id, k});
        for (std::uint32_t k = first_unlabeled; k < len - 1; ++k) ds.unlabeled.push_back({id, k});
        ds.unsafe.push_back({id, len - 1});
    }
    return ds;
}

/// Baseline relabeling: the last `unsafe_horizon` states of every collision
/// trajectory are unsafe. Remaining states of the tau-window are dropped, so
/// unsafe_horizon = 1 yields the labeled pools above without the unlabeled
/// pool. Nothing is unlabeled.
inline Dataset relabel_unsafe_horizon(const Dataset& src, int unsafe_horizon) {
    if (unsafe_horizon < 1) throw ConfigError("unsafe_horizon must be >= 1");
    Dataset ds;
    ds.kind = src.kind;
    ds.dt = src.dt;
    ds.labeling = src.labeling;
    ds.trajectories = src.trajectories;
    const auto tau = static_cast<std::uint32_t>(src.labeling.tau);
    for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
        const auto& t = ds.trajectories[i];
        const auto id = static_cast<std::uint32_t>(i);
        const auto len = static_cast<std::uint32_t>(t.size());
        const bool all_safe = t.outcome == Outcome::ReachedGoal ||
                              (t.outcome == Outcome::Timeout && src.labeling.timeout == TimeoutPolicy::Safe);
        if (all_safe) {
            for (std::uint32_t k = 0; k < len; ++k) ds.safe.push_back({id, k});
            continue;
        }
        if (t.outcome != Outcome::Collision) continue;
        const std::uint32_t n_unsafe = std::min<std::uint32_t>(static_cast<std::uint32_t>(unsafe_horizon), len);
        const std::uint32_t tail = std::max(n_unsafe, std::min(tau + 1, len));
        for (std::uint32_t k = 0; k < len - tail; ++k) ds.safe.push_back({id, k});
        for (std::uint32_t k = len - n_unsafe; k < len; ++k) ds.unsafe.push_back({id, k});
    }
    return ds;
}

// ---------------------------------------------------------------- file I/O

namespace detail {

inline void put_double(std::string& out, double v) {
    char buf[32];
    const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
    out.append(buf, static_cast<std::size_t>(n));
}

// Whitespace tokenizer that reports the line and field on failure.
class LineReader {
public:
    LineReader(std::string path, std::size_t line_no, std::string_view line)
        : path_(std::move(path)), line_no_(line_no), line_(line) {}

    std::string_view token() {
        while (pos_ < line_.size() && line_[pos_] == ' ') ++pos_;
        if (pos_ >= line_.size()) fail("unexpected end of record");
        const std::size_t start = pos_;
        while (pos_ < line_.size() && line_[pos_] != ' ') ++pos_;
        ++field_;
        return line_.substr(start, pos_ - start);
    }

    void expect(std::string_view literal) {
        const auto t = token();
        if (t != literal) fail("expected '" + std::string(literal) + "', found '" + std::string(t) + "'");
    }

    std::string_view keyed(std::string_view key) {
        const auto t = token();
        if (t.size() <= key.size() || t.substr(0, key.size()) != key || t[key.size()] != '=')
            fail("expected field '" + std::string(key) + "='");
        return t.substr(key.size() + 1);
    }

    double number(std::string_view t) {
        const std::string s(t);
        char* end = nullptr;
        errno = 0;
        const double v = std::strtod(s.c_str(), &end);
        if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) fail("malformed number '" + s + "'");
        return v;
    }
    double number() { return number(token()); }

    std::uint64_t integer(std::string_view t) {
        std::uint64_t v = 0;
        const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
        if (r.ec != std::errc() || r.ptr != t.data() + t.size())
            fail("malformed integer '" + std::string(t) + "'");
        return v;
    }
    std::uint64_t integer() { return integer(token()); }

    void end() {
        while (pos_ < line_.size() && line_[pos_] == ' ') ++pos_;
        if (pos_ != line_.size()) fail("trailing data");
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw FormatError(path_, line_no_, "field " + std::to_string(field_ + 1) + ": " + what);
    }

private:
    std::string path_;
    std::size_t line_no_;
    std::string_view line_;
    std::size_t pos_ = 0;
    std::size_t field_ = 0;
};

inline Outcome parse_outcome(LineReader& r, std::string_view t) {
    if (t == "goal") return Outcome::ReachedGoal;
    if (t == "collision") return Outcome::Collision;
    if (t == "timeout") return Outcome::Timeout;
    r.fail("unknown outcome '" + std::string(t) + "'");
}

}  // namespace detail

inline std::string to_string(TimeoutPolicy p) { return p == TimeoutPolicy::Safe ? "safe" : "discard"; }

inline std::string serialize_dataset(const Dataset& ds) {
    std::string out = "ncbf-dataset v1 kind=" + std::string(to_string(ds.kind)) + " dt=";
    detail::put_double(out, ds.dt);
    out += " tau=" + std::to_string(ds.labeling.tau) + " timeout=" + to_string(ds.labeling.timeout) +
           " trajectories=" + std::to_string(ds.trajectories.size()) + "\n";
    for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
        const auto& t = ds.trajectories[i];
        out += "T " + std::to_string(i) + " " + std::string(to_string(t.outcome));
        for (double v : {t.goal_x, t.goal_y, t.controller_params.attractive_gain, t.controller_params.repulsive_gain,
                         t.controller_params.repulsive_range, t.controller_params.tracking_gain}) {
            out += ' ';
            detail::put_double(out, v);
        }
        out += " " + std::to_string(t.states.size()) + " S";
        for (const auto& s : t.states)
            for (double v : {s.x, s.y, s.yaw, s.v, s.omega}) {
                out += ' ';
                detail::put_double(out, v);
            }
        out += " U";
        for (const auto& u : t.controls)
            for (double v : {u.u1, u.u2}) {
                out += ' ';
                detail::put_double(out, v);
            }
        out += '\n';
    }
    return out;
}

/// Parses the text container and re-derives the pools with the stored tau.
inline Dataset parse_dataset(const std::string& text, const std::string& path = "<memory>") {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw FormatError(path, 1, "missing header");
    ++line_no;

    detail::LineReader h(path, line_no, line);
    h.expect("ncbf-dataset");
    h.expect("v1");
    DynamicsKind kind;
    try {
        kind = parse_dynamics_kind(h.keyed("kind"));
    } catch (const ConfigError& e) {
        h.fail(e.what());
    }
    const double dt = h.number(h.keyed("dt"));
    LabelingConfig lab;
    lab.tau = static_cast<int>(h.integer(h.keyed("tau")));
    const auto timeout = h.keyed("timeout");
    if (timeout == "safe") lab.timeout = TimeoutPolicy::Safe;
    else if (timeout == "discard") lab.timeout = TimeoutPolicy::Discard;
    else h.fail("unknown timeout policy");
    const auto count = h.integer(h.keyed("trajectories"));
    h.end();
    if (!(dt > 0.0)) h.fail("dt must be > 0");

    std::vector<Trajectory> trajs;
    trajs.reserve(static_cast<std::size_t>(count));
    for (std::uint64_t i = 0; i < count; ++i) {
        if (!std::getline(in, line)) throw FormatError(path, line_no + 1, "missing trajectory record " + std::to_string(i));
        ++line_no;
        detail::LineReader r(path, line_no, line);
        r.expect("T");
        if (r.integer() != i) r.fail("trajectory ids must be consecutive");
        Trajectory t;
        t.outcome = detail::parse_outcome(r, r.token());
        t.goal_x = r.number();
        t.goal_y = r.number();
        t.controller_params.attractive_gain = r.number();
        t.controller_params.repulsive_gain = r.number();
        t.controller_params.repulsive_range = r.number();
        t.controller_params.tracking_gain = r.number();
        const auto n = r.integer();
        if (n == 0) r.fail("trajectory without states");
        r.expect("S");
        t.states.resize(static_cast<std::size_t>(n));
        for (auto& s : t.states) {
            s.x = r.number();
            s.y = r.number();
            s.yaw = r.number();
            s.v = r.number();
            s.omega = r.number();
        }
        r.expect("U");
        t.controls.resize(static_cast<std::size_t>(n - 1));
        for (auto& u : t.controls) {
            u.u1 = r.number();
            u.u2 = r.number();
        }
        r.end();
        trajs.push_back(std::move(t));
    }
    if (std::getline(in, line) && !line.empty()) throw FormatError(path, line_no + 1, "unexpected trailing record");
    return label_trajectories(std::move(trajs), lab, kind, dt);
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("cannot open '" + path + "' for writing");
    f << serialize_dataset(ds);
    if (!f) throw ConfigError("write failed for '" + path + "'");
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open dataset '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_dataset(ss.str(), path);
}

}  // namespace ncbf
