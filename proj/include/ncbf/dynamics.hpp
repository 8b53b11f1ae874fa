#pragma once

// Ego-robot dynamics on a shared 5-dim state (x, y, yaw, v, omega), the
// static obstacle world, and the potential-field controllers used to collect
// demonstrations.
//
// All three models integrate with semi-implicit Euler: velocities update
// first, then yaw and position advance with the updated velocities. The
// one-step successor therefore depends on the control through every row,
// which both the actor and the runtime filter rely on.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "ncbf/error.hpp"
#include "ncbf/rng.hpp"

namespace ncbf {

inline constexpr Eigen::Index kStateDim = 5;
inline constexpr Eigen::Index kControlDim = 2;

using StateVector = Eigen::Matrix<double, kStateDim, 1>;
using ControlVector = Eigen::Matrix<double, kControlDim, 1>;
using ControlJacobian = Eigen::Matrix<double, kStateDim, kControlDim>;

/// Wraps to (-pi, pi].
inline double wrap_angle(double a) {
    constexpr double pi = std::numbers::pi;
    double w = std::remainder(a, 2.0 * pi);
    if (w <= -pi) w += 2.0 * pi;
    return w;
}

struct State {
    double x = 0.0;
    double y = 0.0;
    double yaw = 0.0;
    double v = 0.0;
    double omega = 0.0;

    StateVector vec() const { return {x, y, yaw, v, omega}; }
    static State from(const Eigen::Ref<const StateVector>& s) { return {s(0), s(1), s(2), s(3), s(4)}; }

    bool finite() const {
        return std::isfinite(x) && std::isfinite(y) && std::isfinite(yaw) && std::isfinite(v) &&
               std::isfinite(omega);
    }

    friend bool operator==(const State&, const State&) = default;
};

struct Control {
    double u1 = 0.0;
    double u2 = 0.0;

    ControlVector vec() const { return {u1, u2}; }
    static Control from(const Eigen::Ref<const ControlVector>& u) { return {u(0), u(1)}; }

    friend bool operator==(const Control&, const Control&) = default;
};

enum class DynamicsKind { DoubleIntegrator, Dubins, Bicycle };

inline std::string_view to_string(DynamicsKind k) {
    switch (k) {
        case DynamicsKind::DoubleIntegrator: return "double_integrator";
        case DynamicsKind::Dubins: return "dubins";
        case DynamicsKind::Bicycle: return "bicycle";
    }
    return "?";
}

inline DynamicsKind parse_dynamics_kind(std::string_view s) {
    if (s == "double_integrator") return DynamicsKind::DoubleIntegrator;
    if (s == "dubins") return DynamicsKind::Dubins;
    if (s == "bicycle") return DynamicsKind::Bicycle;
    throw ConfigError("unknown dynamics kind '" + std::string(s) + "'");
}

/// Controls: DoubleIntegrator (a, alpha), Dubins (a, omega_cmd), Bicycle (a, steer).
struct DynamicsModel {
    DynamicsKind kind = DynamicsKind::DoubleIntegrator;
    double dt = 0.2;
    double wheelbase = 0.5;
    double v_max = 1.0;
    double omega_max = 1.5;  // state clamp for the double integrator
    ControlVector u_min{-1.0, -3.0};
    ControlVector u_max{1.0, 3.0};

    static DynamicsModel defaults(DynamicsKind kind) {
        DynamicsModel m;
        m.kind = kind;
        switch (kind) {
            case DynamicsKind::DoubleIntegrator:
                m.u_min = {-1.0, -3.0};
                m.u_max = {1.0, 3.0};
                break;
            case DynamicsKind::Dubins:
                m.u_min = {-1.0, -1.5};
                m.u_max = {1.0, 1.5};
                break;
            case DynamicsKind::Bicycle:
                m.u_min = {-1.0, -0.6};
                m.u_max = {1.0, 0.6};
                break;
        }
        return m;
    }

    void validate() const {
        if (!(dt > 0.0)) throw ConfigError("dynamics: dt must be > 0");
        if (kind == DynamicsKind::Bicycle && !(wheelbase > 0.0))
            throw ConfigError("dynamics: wheelbase must be > 0");
        if (!(v_max > 0.0) || !(omega_max > 0.0)) throw ConfigError("dynamics: velocity bounds must be > 0");
        for (int i = 0; i < kControlDim; ++i)
            if (!(u_min(i) < u_max(i))) throw ConfigError("dynamics: control bounds must satisfy min < max");
        if (kind == DynamicsKind::Bicycle &&
            (u_min(1) <= -std::numbers::pi / 2 || u_max(1) >= std::numbers::pi / 2))
            throw ConfigError("dynamics: steering bounds must lie inside (-pi/2, pi/2)");
    }

    Control clamp(Control u) const {
        u.u1 = std::clamp(u.u1, u_min(0), u_max(0));
        u.u2 = std::clamp(u.u2, u_min(1), u_max(1));
        return u;
    }
};

namespace detail {

// Velocity / yaw-rate update shared by step and its Jacobian. d*_du hold the
// partials wrt (u1, u2) of the updated quantities.
struct VelocityUpdate {
    double v = 0.0, omega = 0.0;
    ControlVector dv_du = ControlVector::Zero();
    ControlVector domega_du = ControlVector::Zero();
};

inline VelocityUpdate update_velocities(const DynamicsModel& m, const State& s, const Control& raw_u) {
    const Control u = m.clamp(raw_u);
    const bool u1_free = raw_u.u1 >= m.u_min(0) && raw_u.u1 <= m.u_max(0);
    const bool u2_free = raw_u.u2 >= m.u_min(1) && raw_u.u2 <= m.u_max(1);

    VelocityUpdate r;
    const double v_raw = s.v + u.u1 * m.dt;
    r.v = std::clamp(v_raw, 0.0, m.v_max);
    if (u1_free && v_raw >= 0.0 && v_raw <= m.v_max) r.dv_du(0) = m.dt;

    switch (m.kind) {
        case DynamicsKind::DoubleIntegrator: {
            const double w_raw = s.omega + u.u2 * m.dt;
            r.omega = std::clamp(w_raw, -m.omega_max, m.omega_max);
            if (u2_free && w_raw >= -m.omega_max && w_raw <= m.omega_max) r.domega_du(1) = m.dt;
            break;
        }
        case DynamicsKind::Dubins:
            r.omega = u.u2;
            if (u2_free) r.domega_du(1) = 1.0;
            break;
        case DynamicsKind::Bicycle: {
            const double t = std::tan(u.u2);
            r.omega = r.v * t / m.wheelbase;
            r.domega_du(0) = r.dv_du(0) * t / m.wheelbase;
            if (u2_free) r.domega_du(1) = r.v * (1.0 + t * t) / m.wheelbase;
            break;
        }
    }
    return r;
}

}  // namespace detail

/// One integration step. Controls outside the bounds are clamped.
inline State step(const DynamicsModel& m, const State& s, const Control& u) {
    const auto vel = detail::update_velocities(m, s, u);
    const double yaw = s.yaw + vel.omega * m.dt;
    State n;
    n.v = vel.v;
    n.omega = vel.omega;
    n.x = s.x + vel.v * std::cos(yaw) * m.dt;
    n.y = s.y + vel.v * std::sin(yaw) * m.dt;
    n.yaw = wrap_angle(yaw);
    return n;
}

/// d step(s, u) / du, zero in directions where a clamp is active.
inline ControlJacobian control_jacobian(const DynamicsModel& m, const State& s, const Control& u) {
    const auto vel = detail::update_velocities(m, s, u);
    const double yaw = s.yaw + vel.omega * m.dt;
    const double c = std::cos(yaw), sn = std::sin(yaw);
    const ControlVector dyaw = m.dt * vel.domega_du;
    ControlJacobian j;
    j.row(0) = (c * m.dt * vel.dv_du - vel.v * sn * m.dt * dyaw).transpose();
    j.row(1) = (sn * m.dt * vel.dv_du + vel.v * c * m.dt * dyaw).transpose();
    j.row(2) = dyaw.transpose();
    j.row(3) = vel.dv_du.transpose();
    j.row(4) = vel.domega_du.transpose();
    return j;
}

/// (next - s) / dt with the yaw component taken as the wrapped difference.
inline StateVector flow_direction(const DynamicsModel& m, const State& s, const State& next) {
    StateVector d = (next.vec() - s.vec()) / m.dt;
    d(2) = wrap_angle(next.yaw - s.yaw) / m.dt;
    return d;
}

// ---------------------------------------------------------------- world

struct Obstacle {
    double x = 0.0;
    double y = 0.0;
    double radius = 0.5;
};

struct Bounds {
    double x_min = 0.0, x_max = 10.0;
    double y_min = 0.0, y_max = 10.0;

    bool contains(double x, double y) const { return x >= x_min && x <= x_max && y >= y_min && y <= y_max; }
};

struct World {
    std::vector<Obstacle> obstacles;
    Bounds bounds;
    double goal_x = 5.0;
    double goal_y = 5.0;
    double robot_radius = 0.3;

    World with_goal(double gx, double gy) const {
        World w = *this;
        w.goal_x = gx;
        w.goal_y = gy;
        return w;
    }

    void validate() const {
        if (!(robot_radius >= 0.0)) throw ConfigError("world: robot_radius must be >= 0");
        if (!(bounds.x_min < bounds.x_max && bounds.y_min < bounds.y_max))
            throw ConfigError("world: empty bounds");
        for (const auto& o : obstacles)
            if (!(o.radius > 0.0)) throw ConfigError("world: obstacle radius must be > 0");
        if (!bounds.contains(goal_x, goal_y)) throw ConfigError("world: goal outside bounds");
        for (const auto& o : obstacles)
            if (std::hypot(goal_x - o.x, goal_y - o.y) < o.radius + robot_radius)
                throw ConfigError("world: goal inside an inflated obstacle");
    }
};

/// True on contact with an inflated obstacle (strict) or when the position
/// leaves the arena.
inline bool collision_check(const World& w, const State& s) {
    if (!w.bounds.contains(s.x, s.y)) return true;
    for (const auto& o : w.obstacles)
        if (std::hypot(s.x - o.x, s.y - o.y) < o.radius + w.robot_radius) return true;
    return false;
}

/// Distance from the robot centre to the nearest obstacle surface
/// (infinity without obstacles).
inline double obstacle_clearance(const World& w, const State& s) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& o : w.obstacles) best = std::min(best, std::hypot(s.x - o.x, s.y - o.y) - o.radius);
    return best;
}

/// Position with clearance of at least `margin` beyond the inflated obstacles
/// and the arena walls.
inline bool is_free(const World& w, double x, double y, double margin) {
    const auto& b = w.bounds;
    if (x < b.x_min + margin || x > b.x_max - margin || y < b.y_min + margin || y > b.y_max - margin)
        return false;
    for (const auto& o : w.obstacles)
        if (std::hypot(x - o.x, y - o.y) < o.radius + w.robot_radius + margin) return false;
    return true;
}

struct WorldGenConfig {
    Bounds bounds;
    int obstacles_min = 3;
    int obstacles_max = 6;
    double radius_min = 0.5;
    double radius_max = 1.0;
    double robot_radius = 0.3;
    double wall_margin = 1.0;  // obstacle centres keep this distance from walls
    double gap = 0.6;          // minimum free gap between obstacle surfaces
};

/// Random circular obstacles; non-overlapping with the configured gap.
inline World generate_world(const WorldGenConfig& cfg, Rng& rng) {
    if (cfg.obstacles_min < 0 || cfg.obstacles_max < cfg.obstacles_min)
        throw ConfigError("world: obstacle count range invalid");
    if (!(cfg.radius_min > 0.0) || cfg.radius_max < cfg.radius_min)
        throw ConfigError("world: obstacle radius range invalid");
    World w;
    w.bounds = cfg.bounds;
    w.robot_radius = cfg.robot_radius;
    const int count = cfg.obstacles_min +
                      static_cast<int>(rng.index(static_cast<std::uint64_t>(cfg.obstacles_max - cfg.obstacles_min + 1)));
    int attempts = 0;
    while (static_cast<int>(w.obstacles.size()) < count) {
        if (++attempts > 10000) throw ConfigError("world: could not place obstacles; arena too small");
        Obstacle o;
        o.radius = rng.uniform(cfg.radius_min, cfg.radius_max);
        o.x = rng.uniform(cfg.bounds.x_min + cfg.wall_margin, cfg.bounds.x_max - cfg.wall_margin);
        o.y = rng.uniform(cfg.bounds.y_min + cfg.wall_margin, cfg.bounds.y_max - cfg.wall_margin);
        bool ok = true;
        for (const auto& q : w.obstacles)
            if (std::hypot(o.x - q.x, o.y - q.y) < o.radius + q.radius + cfg.gap) ok = false;
        if (ok) w.obstacles.push_back(o);
    }
    w.goal_x = 0.5 * (cfg.bounds.x_min + cfg.bounds.x_max);
    w.goal_y = 0.5 * (cfg.bounds.y_min + cfg.bounds.y_max);
    return w;
}

/// Uniform free position; throws after too many rejections.
inline std::pair<double, double> sample_free_position(const World& w, double margin, Rng& rng) {
    for (int i = 0; i < 100000; ++i) {
        const double x = rng.uniform(w.bounds.x_min, w.bounds.x_max);
        const double y = rng.uniform(w.bounds.y_min, w.bounds.y_max);
        if (is_free(w, x, y, margin)) return {x, y};
    }
    throw ConfigError("world: no free space to sample from");
}

// ---------------------------------------------------------------- potential field

struct PotentialFieldParams {
    double attractive_gain = 1.0;
    double repulsive_gain = 0.5;
    double repulsive_range = 1.5;  // measured from the obstacle surface
    double tracking_gain = 1.0;

    void validate(double robot_radius) const {
        if (!(attractive_gain > 0.0) || !(repulsive_gain > 0.0) || !(tracking_gain > 0.0))
            throw ConfigError("potential field: gains must be > 0");
        if (!(repulsive_range > robot_radius))
            throw ConfigError("potential field: repulsive_range must exceed robot_radius");
    }

    friend bool operator==(const PotentialFieldParams&, const PotentialFieldParams&) = default;
};

struct Interval {
    double lo = 0.0, hi = 0.0;
    double sample(Rng& rng) const { return rng.uniform(lo, hi); }
};

/// Draws one controller per trajectory when randomizing.
struct PotentialFieldSampler {
    bool randomized = false;
    PotentialFieldParams fixed;
    Interval attractive_gain{0.4, 1.5};
    Interval repulsive_gain{0.02, 1.0};
    Interval repulsive_range{0.4, 2.0};

    PotentialFieldParams draw(Rng& rng) const {
        if (!randomized) return fixed;
        PotentialFieldParams p = fixed;
        p.attractive_gain = attractive_gain.sample(rng);
        p.repulsive_gain = repulsive_gain.sample(rng);
        p.repulsive_range = repulsive_range.sample(rng);
        return p;
    }
};

/// Desired planar velocity: unit-direction attraction scaled by the
/// attractive gain, plus k_rep (1/d - 1/range) / d^2 away from every obstacle
/// whose surface distance d is below the range.
inline Eigen::Vector2d potential_field_force(const PotentialFieldParams& p, const State& s, const World& w) {
    Eigen::Vector2d f = Eigen::Vector2d::Zero();
    const Eigen::Vector2d to_goal(w.goal_x - s.x, w.goal_y - s.y);
    const double goal_dist = to_goal.norm();
    if (goal_dist > 1e-12) f += p.attractive_gain * to_goal / goal_dist;
    for (const auto& o : w.obstacles) {
        const Eigen::Vector2d away(s.x - o.x, s.y - o.y);
        const double centre_dist = away.norm();
        const double d = std::max(centre_dist - o.radius, 1e-3);
        if (d >= p.repulsive_range || centre_dist < 1e-12) continue;
        const double mag = p.repulsive_gain * (1.0 / d - 1.0 / p.repulsive_range) / (d * d);
        f += mag * away / centre_dist;
    }
    return f;
}

/// Proportional tracking of the potential-field velocity, clamped to bounds.
inline Control potential_field_control(const PotentialFieldParams& p, const State& s, const World& w,
                                       const DynamicsModel& m) {
    const Eigen::Vector2d f = potential_field_force(p, s, w);
    const double speed = std::min(f.norm(), m.v_max);
    const double heading = f.norm() > 1e-12 ? std::atan2(f.y(), f.x()) : s.yaw;
    const double err = wrap_angle(heading - s.yaw);
    const double k = p.tracking_gain;

    Control u;
    u.u1 = k * (speed - s.v);
    switch (m.kind) {
        case DynamicsKind::DoubleIntegrator: u.u2 = k * (k * err - s.omega); break;
        case DynamicsKind::Dubins: u.u2 = k * err; break;
        case DynamicsKind::Bicycle: u.u2 = k * err; break;
    }
    return m.clamp(u);
}

}  // namespace ncbf
