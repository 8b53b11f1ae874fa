#pragma once

// The three learned models (barrier B, two-head rejection R, actor pi),
// their objectives and the anchor-normalized surrogate barrier values.
//
// State batches are 5 x n matrices, one raw state per column. Each model
// owns a fixed InputScaling that maps raw states into roughly [-1, 1]
// before the network; gradients reported here are wrt raw states.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "ncbf/diffcore.hpp"
#include "ncbf/dynamics.hpp"
#include "ncbf/error.hpp"

namespace ncbf {

inline MatrixXd to_batch(const std::vector<State>& states) {
    MatrixXd m(kStateDim, static_cast<Index>(states.size()));
    for (std::size_t i = 0; i < states.size(); ++i) m.col(static_cast<Index>(i)) = states[i].vec();
    return m;
}

inline State state_at(const MatrixXd& batch, Index j) { return State::from(batch.col(j)); }

/// normalized = (raw - center) .* inv_half_range
struct InputScaling {
    StateVector center = StateVector::Zero();
    StateVector inv_half_range = StateVector::Ones();

    static InputScaling identity() { return {}; }

    /// Arena bounds for position, (-pi, pi] for yaw, the speed range, and the
    /// largest yaw rate the model can reach.
    static InputScaling for_task(const DynamicsModel& m, const Bounds& b) {
        double omega_range = m.omega_max;
        if (m.kind == DynamicsKind::Dubins) omega_range = std::max(std::abs(m.u_min(1)), std::abs(m.u_max(1)));
        if (m.kind == DynamicsKind::Bicycle)
            omega_range = m.v_max * std::tan(std::max(std::abs(m.u_min(1)), std::abs(m.u_max(1)))) / m.wheelbase;
        InputScaling s;
        s.center << 0.5 * (b.x_min + b.x_max), 0.5 * (b.y_min + b.y_max), 0.0, 0.5 * m.v_max, 0.0;
        s.inv_half_range << 2.0 / (b.x_max - b.x_min), 2.0 / (b.y_max - b.y_min), 1.0 / std::numbers::pi,
            2.0 / m.v_max, 1.0 / omega_range;
        return s;
    }

    MatrixXd apply(const MatrixXd& raw) const {
        return ((raw.colwise() - center).array().colwise() * inv_half_range.array()).matrix();
    }
    MatrixXd apply_direction(const MatrixXd& raw_dir) const {
        return (raw_dir.array().colwise() * inv_half_range.array()).matrix();
    }
    // maps a gradient wrt normalized input back to raw input
    MatrixXd pull_back(const MatrixXd& grad_normalized) const { return apply_direction(grad_normalized); }

    friend bool operator==(const InputScaling&, const InputScaling&) = default;
};

// ---------------------------------------------------------------- models

struct CbfModel {
    MlpParams params;  // 5 -> 1
    InputScaling scaling;

    VectorXd values(const MatrixXd& states) const {
        return mlp_forward(params, scaling.apply(states)).row(0).transpose();
    }
    double value(const State& s) const { return values(MatrixXd(s.vec()))(0); }

    /// grad_x B at each column, raw coordinates.
    MatrixXd gradients(const MatrixXd& states) const {
        return scaling.pull_back(input_gradients(params, scaling.apply(states)));
    }
};

inline double cbf_value(const CbfModel& cbf, const State& x) { return cbf.value(x); }

struct RejectionScores {
    double r1 = 0.0;
    double r2 = 0.0;
};

/// Shared trunk with two scalar heads: row 0 of the output layer is head 1,
/// row 1 is head 2.
struct RejectionModel {
    MlpParams params;  // 5 -> 2
    InputScaling scaling;
    double c = 0.1;

    void validate() const {
        params.validate();
        if (params.output_dim() != 2) throw ConfigError("rejection model must have two heads");
        if (!(c > 0.0 && c < 1.0)) throw ConfigError("rejection threshold c must lie in (0, 1)");
    }

    MatrixXd scores(const MatrixXd& states) const { return mlp_forward(params, scaling.apply(states)); }
    RejectionScores scores(const State& s) const {
        const MatrixXd r = scores(MatrixXd(s.vec()));
        return {r(0, 0), r(1, 0)};
    }
};

inline RejectionScores rejection_scores(const RejectionModel& rej, const State& x) { return rej.scores(x); }

/// Both heads agree on "safe": r1 > c and r2 > 1 - c.
inline bool is_in_distribution(const RejectionScores& r, double c) { return r.r1 > c && r.r2 > 1.0 - c; }

/// Raw network output squashed by tanh into the control box.
struct ActorModel {
    MlpParams params;  // 5 -> 2
    InputScaling scaling;
    ControlVector u_min{-1.0, -1.0};
    ControlVector u_max{1.0, 1.0};

    MatrixXd controls_from_raw(const MatrixXd& raw) const {
        MatrixXd u(raw.rows(), raw.cols());
        for (Index i = 0; i < raw.rows(); ++i) {
            const double half = 0.5 * (u_max(i) - u_min(i));
            u.row(i) = (u_min(i) + half * (raw.row(i).array().tanh() + 1.0)).matrix();
        }
        return u;
    }

    MatrixXd controls(const MatrixXd& states) const {
        return controls_from_raw(mlp_forward(params, scaling.apply(states)));
    }
    Control control(const State& s) const { return Control::from(controls(MatrixXd(s.vec())).col(0)); }
};

struct ClassKappa {
    double kappa = 0.1;
    double operator()(double b) const { return kappa * b; }
};

/// Fixed subset of labeled-safe states over which the surrogate denominator
/// (mean barrier value) is taken.
struct RegularizationAnchor {
    MatrixXd states;  // 5 x A
    double epsilon = 1e-3;

    Index size() const { return states.cols(); }
};

// ---------------------------------------------------------------- helpers

inline double hinge(double z) { return z > 0.0 ? z : 0.0; }

inline void require_nonempty(const MatrixXd& batch, const char* what) {
    if (batch.cols() == 0) throw ContractError(std::string(what) + ": empty batch");
    if (batch.rows() != kStateDim) throw ContractError(std::string(what) + ": states must be 5 x n");
}

/// Successor states step(x_j, u_j) for each column.
inline MatrixXd successors(const DynamicsModel& dyn, const MatrixXd& states, const MatrixXd& controls) {
    MatrixXd next(kStateDim, states.cols());
    for (Index j = 0; j < states.cols(); ++j)
        next.col(j) = step(dyn, state_at(states, j), Control::from(controls.col(j))).vec();
    return next;
}

/// Discrete flow directions (step(x, u) - x) / dt, one column per sample.
inline MatrixXd flow_directions(const DynamicsModel& dyn, const MatrixXd& states, const MatrixXd& controls) {
    MatrixXd d(kStateDim, states.cols());
    for (Index j = 0; j < states.cols(); ++j) {
        const State s = state_at(states, j);
        d.col(j) = flow_direction(dyn, s, step(dyn, s, Control::from(controls.col(j))));
    }
    return d;
}

/// <grad_x B(x), (step(x, u) - x) / dt>
inline double lie_derivative(const CbfModel& cbf, const DynamicsModel& dyn, const State& x, const Control& u) {
    const StateVector d = flow_direction(dyn, x, step(dyn, x, u));
    return cbf.gradients(MatrixXd(x.vec())).col(0).dot(d);
}

/// Sign-preserving floor on the magnitude of the anchor mean.
inline double guard_denominator(double mean, double epsilon) {
    if (std::abs(mean) >= epsilon) return mean;
    return mean < 0.0 ? -epsilon : epsilon;
}

inline double anchor_mean(const CbfModel& cbf, const RegularizationAnchor& anchor) {
    if (anchor.size() == 0) throw ContractError("regularization anchor is empty");
    return cbf.values(anchor.states).mean();
}

/// B(x) / E_anchor[B], the anchor mean floored at epsilon.
inline VectorXd surrogate_values(const CbfModel& cbf, const RegularizationAnchor& anchor, const MatrixXd& batch) {
    const double m = guard_denominator(anchor_mean(cbf, anchor), anchor.epsilon);
    return cbf.values(batch) / m;
}

// ---------------------------------------------------------------- losses

struct LossResult {
    double value = 0.0;
    MlpParams grad;
};

/// Two hinge objectives, head 1 against c and head 2 against 1 - c, each the
/// safe-batch mean of [-R_i + t]_+ plus the unsafe-batch mean of [R_i - t]_+.
inline LossResult rejection_loss(const RejectionModel& rej, const MatrixXd& safe, const MatrixXd& unsafe) {
    require_nonempty(safe, "rejection_loss safe");
    require_nonempty(unsafe, "rejection_loss unsafe");
    const double thr[2] = {rej.c, 1.0 - rej.c};
    const double ws = 1.0 / static_cast<double>(safe.cols());
    const double wu = 1.0 / static_cast<double>(unsafe.cols());

    const Tape ts = record(rej.params, rej.scaling.apply(safe));
    const Tape tu = record(rej.params, rej.scaling.apply(unsafe));
    MatrixXd seed_s = MatrixXd::Zero(2, safe.cols());
    MatrixXd seed_u = MatrixXd::Zero(2, unsafe.cols());

    LossResult out;
    for (int h = 0; h < 2; ++h) {
        for (Index j = 0; j < safe.cols(); ++j) {
            const double z = -ts.output(h, j) + thr[h];
            if (z > 0.0) {
                out.value += ws * z;
                seed_s(h, j) = -ws;
            }
        }
        for (Index j = 0; j < unsafe.cols(); ++j) {
            const double z = tu.output(h, j) - thr[h];
            if (z > 0.0) {
                out.value += wu * z;
                seed_u(h, j) = wu;
            }
        }
    }
    out.grad = reverse(rej.params, ts, seed_s).params;
    out.grad += reverse(rej.params, tu, seed_u).params;
    return out;
}

/// Batch mean of -B(x') + [-R1(x') + c]_+ + [-R2(x') + 1 - c]_+ with
/// x' = step(x, pi(x)). Gradient wrt the actor only.
inline LossResult actor_loss(const ActorModel& actor, const CbfModel& cbf, const RejectionModel& rej,
                             const DynamicsModel& dyn, const MatrixXd& batch) {
    require_nonempty(batch, "actor_loss");
    const Index n = batch.cols();
    const double w = 1.0 / static_cast<double>(n);

    const Tape ta = record(actor.params, actor.scaling.apply(batch));
    const MatrixXd u = actor.controls_from_raw(ta.output);
    const MatrixXd next = successors(dyn, batch, u);

    const Tape tb = record(cbf.params, cbf.scaling.apply(next));
    const Tape tr = record(rej.params, rej.scaling.apply(next));

    LossResult out;
    MatrixXd seed_r = MatrixXd::Zero(2, n);
    const double thr[2] = {rej.c, 1.0 - rej.c};
    for (Index j = 0; j < n; ++j) {
        out.value -= w * tb.output(0, j);
        for (int h = 0; h < 2; ++h) {
            const double z = -tr.output(h, j) + thr[h];
            if (z > 0.0) {
                out.value += w * z;
                seed_r(h, j) = -w;
            }
        }
    }

    // dL/dx' in raw coordinates
    MatrixXd dnext = cbf.scaling.pull_back(reverse(cbf.params, tb, MatrixXd::Constant(1, n, -w)).input);
    dnext += rej.scaling.pull_back(reverse(rej.params, tr, seed_r).input);

    MatrixXd seed_a(kControlDim, n);
    for (Index j = 0; j < n; ++j) {
        const ControlJacobian jac = control_jacobian(dyn, state_at(batch, j), Control::from(u.col(j)));
        const ControlVector du = jac.transpose() * dnext.col(j);
        for (Index i = 0; i < kControlDim; ++i) {
            const double t = std::tanh(ta.output(i, j));
            seed_a(i, j) = du(i) * 0.5 * (actor.u_max(i) - actor.u_min(i)) * (1.0 - t * t);
        }
    }
    out.grad = reverse(actor.params, ta, seed_a).params;
    return out;
}

struct CbfLossResult {
    double value = 0.0;
    double safe_term = 0.0;
    double unsafe_term = 0.0;
    double lie_term = 0.0;
    double anchor_mean = 1.0;  // raw anchor mean, before the epsilon guard
    MlpParams grad;
};

/// Barrier objective over explicit per-state controls for the Lie term:
///   mean_s [-Bs(x)]_+ + mean_u [Bs(x)]_+ + mean_s [-Ls(x, u_x) - kappa Bs(x)]_+
/// where Bs = B / m and Ls = <grad Bs, flow>. With regularization the
/// denominator m is the anchor mean and is differentiated; otherwise m = 1.
inline CbfLossResult cbf_loss_with_controls(const CbfModel& cbf, const DynamicsModel& dyn, ClassKappa alpha,
                                            const RegularizationAnchor* anchor, const MatrixXd& safe,
                                            const MatrixXd& safe_controls, const MatrixXd& unsafe) {
    require_nonempty(safe, "cbf_loss safe");
    require_nonempty(unsafe, "cbf_loss unsafe");
    if (safe_controls.cols() != safe.cols() || safe_controls.rows() != kControlDim)
        throw ContractError("cbf_loss: one control per safe state required");

    const Index ns = safe.cols(), nu = unsafe.cols();
    const double ws = 1.0 / static_cast<double>(ns);
    const double wu = 1.0 / static_cast<double>(nu);

    const MatrixXd dirs = cbf.scaling.apply_direction(flow_directions(dyn, safe, safe_controls));
    const Tape ts = record_with_tangent(cbf.params, cbf.scaling.apply(safe), dirs);
    const Tape tu = record(cbf.params, cbf.scaling.apply(unsafe));

    CbfLossResult out;
    double m = 1.0;
    bool m_free = false;
    Tape tanchor;
    if (anchor) {
        if (anchor->size() == 0) throw ContractError("regularization anchor is empty");
        tanchor = record(cbf.params, cbf.scaling.apply(anchor->states));
        out.anchor_mean = tanchor.output.mean();
        m = guard_denominator(out.anchor_mean, anchor->epsilon);
        m_free = std::abs(out.anchor_mean) >= anchor->epsilon;
    }

    MatrixXd seed_s = MatrixXd::Zero(1, ns), tseed_s = MatrixXd::Zero(1, ns), seed_u = MatrixXd::Zero(1, nu);
    double dm = 0.0;  // dL/dm
    for (Index j = 0; j < ns; ++j) {
        const double b = ts.output(0, j), g = ts.doutput(0, j);
        if (-b / m > 0.0) {
            out.safe_term += ws * (-b / m);
            seed_s(0, j) += -ws / m;
            dm += ws * b / (m * m);
        }
        const double z = -(g + alpha.kappa * b) / m;
        if (z > 0.0) {
            out.lie_term += ws * z;
            tseed_s(0, j) += -ws / m;
            seed_s(0, j) += -ws * alpha.kappa / m;
            dm += ws * (g + alpha.kappa * b) / (m * m);
        }
    }
    for (Index j = 0; j < nu; ++j) {
        const double b = tu.output(0, j);
        if (b / m > 0.0) {
            out.unsafe_term += wu * (b / m);
            seed_u(0, j) = wu / m;
            dm += -wu * b / (m * m);
        }
    }
    out.value = out.safe_term + out.unsafe_term + out.lie_term;

    out.grad = reverse(cbf.params, ts, seed_s, tseed_s).params;
    out.grad += reverse(cbf.params, tu, seed_u).params;
    if (anchor && m_free && dm != 0.0) {
        const Index na = anchor->size();
        out.grad += reverse(cbf.params, tanchor, MatrixXd::Constant(1, na, dm / static_cast<double>(na))).params;
    }
    return out;
}

/// Barrier objective with the Lie term along the actor's controls.
inline CbfLossResult cbf_loss(const CbfModel& cbf, const ActorModel& actor, const DynamicsModel& dyn,
                              ClassKappa alpha, const RegularizationAnchor* anchor, const MatrixXd& safe,
                              const MatrixXd& unsafe) {
    require_nonempty(safe, "cbf_loss safe");
    return cbf_loss_with_controls(cbf, dyn, alpha, anchor, safe, actor.controls(safe), unsafe);
}

}  // namespace ncbf
