#pragma once

// Runtime safe-control filter, closed-loop scenario evaluation and landscape
// export.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ncbf/checkpoint.hpp"
#include "ncbf/datagen.hpp"
#include "ncbf/dynamics.hpp"
#include "ncbf/models.hpp"
#include "ncbf/training.hpp"

namespace ncbf {

enum class SamplingScheme { UniformGrid, UniformRandom };

struct ControlFilterConfig {
    int sample_size = 100;
    SamplingScheme scheme = SamplingScheme::UniformGrid;
    double goal_radius = 0.3;
    // Candidates are ranked by goal_metric + speed_weight * v / v_max. The
    // heading metric alone cannot tell speeds apart; 0 gives the pure ranking.
    double speed_weight = 0.05;

    void validate() const {
        if (sample_size < 1) throw ConfigError("filter: sample_size must be >= 1");
        if (!(goal_radius > 0.0)) throw ConfigError("filter: goal_radius must be > 0");
        if (!(speed_weight >= 0.0)) throw ConfigError("filter: speed_weight must be >= 0");
    }
};

/// cos of the angle between the heading and the bearing to the goal.
inline double goal_metric(const State& s, double goal_x, double goal_y) {
    const double dx = goal_x - s.x, dy = goal_y - s.y;
    if (std::hypot(dx, dy) < 1e-12) return 1.0;
    return std::cos(s.yaw - std::atan2(dy, dx));
}

/// 2 x N candidates from the control box. The grid uses k = ceil(sqrt(N))
/// levels on the first axis and ceil(N / k) on the second, row-major,
/// truncated to N; single-level axes take the midpoint.
inline MatrixXd sample_candidates(const DynamicsModel& dyn, const ControlFilterConfig& cfg, Rng* rng) {
    const int n = cfg.sample_size;
    MatrixXd u(kControlDim, n);
    if (cfg.scheme == SamplingScheme::UniformRandom) {
        if (!rng) throw ContractError("random candidate sampling needs a generator");
        for (int j = 0; j < n; ++j)
            for (Index i = 0; i < kControlDim; ++i) u(i, j) = rng->uniform(dyn.u_min(i), dyn.u_max(i));
        return u;
    }
    const int k1 = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
    const int k2 = (n + k1 - 1) / k1;
    auto level = [](double lo, double hi, int i, int k) {
        return k == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(k - 1);
    };
    int j = 0;
    for (int a = 0; a < k1 && j < n; ++a)
        for (int b = 0; b < k2 && j < n; ++b, ++j) {
            u(0, j) = level(dyn.u_min(0), dyn.u_max(0), a, k1);
            u(1, j) = level(dyn.u_min(1), dyn.u_max(1), b, k2);
        }
    return u;
}

/// Keeps candidates whose successor has B >= 0 and passes the rejection
/// test (skipped without a rejection model), then returns the best-ranked
/// survivor. nullopt means no safe control was found.
inline std::optional<Control> safe_control(const State& x, const CbfModel& cbf, const RejectionModel* rejection,
                                           const DynamicsModel& dyn, const ControlFilterConfig& cfg, double goal_x,
                                           double goal_y, Rng* rng = nullptr) {
    const MatrixXd cand = sample_candidates(dyn, cfg, rng);
    const Index n = cand.cols();
    MatrixXd states(kStateDim, n);
    for (Index j = 0; j < n; ++j) states.col(j) = x.vec();
    const MatrixXd next = successors(dyn, states, cand);
    const VectorXd b = cbf.values(next);
    MatrixXd r;
    if (rejection) r = rejection->scores(next);

    std::vector<std::pair<double, Index>> ranked;
    for (Index j = 0; j < n; ++j) {
        if (b(j) < 0.0) continue;
        if (rejection && !is_in_distribution({r(0, j), r(1, j)}, rejection->c)) continue;
        const State s = state_at(next, j);
        ranked.emplace_back(goal_metric(s, goal_x, goal_y) + cfg.speed_weight * s.v / dyn.v_max, j);
    }
    // highest score first, ties by candidate order
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

    // Batched and single-sample products may round differently; confirm the
    // choice through the single-state path.
    for (const auto& [score, j] : ranked) {
        const Control u = Control::from(cand.col(j));
        const State s = step(dyn, x, u);
        if (cbf_value(cbf, s) < 0.0) continue;
        if (rejection && !is_in_distribution(rejection_scores(*rejection, s), rejection->c)) continue;
        return u;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------- scenarios

enum class EvalOutcome { Success, Collision, NoSafeControl, Timeout };

inline std::string_view to_string(EvalOutcome o) {
    switch (o) {
        case EvalOutcome::Success: return "success";
        case EvalOutcome::Collision: return "collision";
        case EvalOutcome::NoSafeControl: return "no_safe_control";
        case EvalOutcome::Timeout: return "timeout";
    }
    return "?";
}

struct ScenarioRecord {
    EvalOutcome outcome = EvalOutcome::Timeout;
    int steps = 0;
    double path_length = 0.0;      // m
    double completion_time = 0.0;  // s
    double mean_velocity = 0.0;    // m/s
    double min_distance = 0.0;     // m, robot centre to nearest obstacle surface
    std::vector<State> states;
};

/// Closed loop under safe_control until goal, collision, no safe control or
/// the step cap.
inline ScenarioRecord run_scenario(const ModelBundle& models, const DynamicsModel& dyn, const World& world,
                                   const State& init, const ControlFilterConfig& cfg, int max_steps,
                                   Rng* rng = nullptr) {
    ScenarioRecord rec;
    rec.states.push_back(init);
    rec.min_distance = obstacle_clearance(world, init);
    const RejectionModel* rej = models.rejection ? &*models.rejection : nullptr;
    auto at_goal = [&](const State& s) { return std::hypot(s.x - world.goal_x, s.y - world.goal_y) <= cfg.goal_radius; };

    State s = init;
    rec.outcome = EvalOutcome::Timeout;
    if (collision_check(world, s)) rec.outcome = EvalOutcome::Collision;
    else if (at_goal(s)) rec.outcome = EvalOutcome::Success;
    else {
        for (int k = 0; k < max_steps; ++k) {
            const auto u = safe_control(s, models.cbf, rej, dyn, cfg, world.goal_x, world.goal_y, rng);
            if (!u) {
                rec.outcome = EvalOutcome::NoSafeControl;
                break;
            }
            const State next = step(dyn, s, *u);
            rec.path_length += std::hypot(next.x - s.x, next.y - s.y);
            rec.steps += 1;
            rec.states.push_back(next);
            rec.min_distance = std::min(rec.min_distance, obstacle_clearance(world, next));
            s = next;
            if (collision_check(world, s)) {
                rec.outcome = EvalOutcome::Collision;
                break;
            }
            if (at_goal(s)) {
                rec.outcome = EvalOutcome::Success;
                break;
            }
        }
    }
    rec.completion_time = rec.steps * dyn.dt;
    rec.mean_velocity = rec.completion_time > 0.0 ? rec.path_length / rec.completion_time : 0.0;
    return rec;
}

struct EvaluationConfig {
    int count = 100;
    std::uint64_t seed = 12345;
    int max_steps = 300;
    double start_margin = 0.2;
    double min_start_goal_distance = 4.0;
};

struct EvaluationReport {
    std::vector<ScenarioRecord> scenarios;
    int successes = 0;
    std::optional<double> success_rate;  // percent; undefined for zero scenarios
    // means over successful runs only
    double mean_path_length = 0.0;
    double mean_completion_time = 0.0;
    double mean_velocity = 0.0;
    double mean_min_distance = 0.0;
};

inline EvaluationReport aggregate(std::vector<ScenarioRecord> scenarios) {
    EvaluationReport rep;
    rep.scenarios = std::move(scenarios);
    for (const auto& s : rep.scenarios) {
        if (s.outcome != EvalOutcome::Success) continue;
        ++rep.successes;
        rep.mean_path_length += s.path_length;
        rep.mean_completion_time += s.completion_time;
        rep.mean_velocity += s.mean_velocity;
        rep.mean_min_distance += s.min_distance;
    }
    if (!rep.scenarios.empty())
        rep.success_rate = 100.0 * rep.successes / static_cast<double>(rep.scenarios.size());
    if (rep.successes > 0) {
        const double k = rep.successes;
        rep.mean_path_length /= k;
        rep.mean_completion_time /= k;
        rep.mean_velocity /= k;
        rep.mean_min_distance /= k;
    }
    return rep;
}

/// Scenario i draws its start, goal and heading from a generator forked from
/// `cfg.seed` with salt i, then runs independently; workers only split the
/// index range.
inline EvaluationReport evaluate(const ModelBundle& models, const DynamicsModel& dyn, const World& world,
                                 const EvaluationConfig& cfg, const ControlFilterConfig& filter,
                                 unsigned threads = std::thread::hardware_concurrency()) {
    filter.validate();
    if (cfg.count < 0) throw ConfigError("evaluation: count must be >= 0");
    std::vector<ScenarioRecord> out(static_cast<std::size_t>(cfg.count));
    std::vector<Rng> rngs;
    Rng root(cfg.seed);
    for (int i = 0; i < cfg.count; ++i) rngs.push_back(root.fork(static_cast<std::uint64_t>(i)));

    auto run = [&](int i) {
        Rng& rng = rngs[static_cast<std::size_t>(i)];
        const auto [sx, sy] = sample_free_position(world, cfg.start_margin, rng);
        double gx = sx, gy = sy;
        for (int k = 0; k < 10000; ++k) {
            std::tie(gx, gy) = sample_free_position(world, cfg.start_margin, rng);
            if (std::hypot(gx - sx, gy - sy) >= cfg.min_start_goal_distance) break;
        }
        const State init{sx, sy, rng.uniform(-std::numbers::pi, std::numbers::pi), 0.0, 0.0};
        auto rec = run_scenario(models, dyn, world.with_goal(gx, gy), init, filter, cfg.max_steps, &rng);
        out[static_cast<std::size_t>(i)] = std::move(rec);
    };

    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max(cfg.count, 1))));
    if (threads == 1) {
        for (int i = 0; i < cfg.count; ++i) run(i);
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < threads; ++w)
            pool.emplace_back([&, w] {
                for (int i = static_cast<int>(w); i < cfg.count; i += static_cast<int>(threads)) run(i);
            });
        for (auto& t : pool) t.join();
    }
    return aggregate(std::move(out));
}

inline std::string format_rate(const std::optional<double>& rate) {
    if (!rate) return "undefined";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", *rate);
    return buf;
}

inline std::string report_csv(const EvaluationReport& rep) {
    using detail::fmt;
    std::string out = "# ncbf-eval-report v1\n";
    out += "scenario,outcome,steps,path_length,completion_time,mean_velocity,min_distance\n";
    for (std::size_t i = 0; i < rep.scenarios.size(); ++i) {
        const auto& s = rep.scenarios[i];
        out += std::to_string(i) + "," + std::string(to_string(s.outcome)) + "," + std::to_string(s.steps) + "," +
               fmt(s.path_length) + "," + fmt(s.completion_time) + "," + fmt(s.mean_velocity) + "," +
               fmt(s.min_distance) + "\n";
    }
    out += "# aggregate,count=" + std::to_string(rep.scenarios.size()) + ",successes=" + std::to_string(rep.successes) +
           ",success_rate=" + format_rate(rep.success_rate) + ",mean_path_length=" + fmt(rep.mean_path_length) +
           ",mean_completion_time=" + fmt(rep.mean_completion_time) + ",mean_velocity=" + fmt(rep.mean_velocity) +
           ",mean_min_distance=" + fmt(rep.mean_min_distance) + "\n";
    return out;
}

// ---------------------------------------------------------------- landscape

struct LandscapeConfig {
    Bounds region;
    int resolution = 50;
    double yaw = 0.0;
    double v = 0.5;
    double omega = 0.0;
};

/// B and the in-distribution flag at the centres of a resolution^2 x-y grid,
/// remaining state fields frozen. Without a rejection model the flag is 1.
inline std::string export_landscape_grid(const CbfModel& cbf, const RejectionModel* rejection,
                                         const LandscapeConfig& cfg) {
    if (cfg.resolution < 1) throw ConfigError("landscape: resolution must be >= 1");
    using detail::fmt;
    std::string out = "# ncbf-landscape v1 resolution=" + std::to_string(cfg.resolution) + " yaw=" + fmt(cfg.yaw) +
                      " v=" + fmt(cfg.v) + " omega=" + fmt(cfg.omega) + "\n";
    out += "x,y,B,in_distribution\n";
    const double hx = (cfg.region.x_max - cfg.region.x_min) / cfg.resolution;
    const double hy = (cfg.region.y_max - cfg.region.y_min) / cfg.resolution;
    for (int iy = 0; iy < cfg.resolution; ++iy)
        for (int ix = 0; ix < cfg.resolution; ++ix) {
            const State s{cfg.region.x_min + (ix + 0.5) * hx, cfg.region.y_min + (iy + 0.5) * hy, cfg.yaw, cfg.v,
                          cfg.omega};
            const bool ok = !rejection || is_in_distribution(rejection_scores(*rejection, s), rejection->c);
            out += fmt(s.x) + "," + fmt(s.y) + "," + fmt(cbf_value(cbf, s)) + "," + (ok ? "1" : "0") + "\n";
        }
    return out;
}

}  // namespace ncbf
