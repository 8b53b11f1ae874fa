#pragma once

// Offline training: the barrier-critic pipeline with rejection-gated
// annotation of unlabeled states, and the plain neural-CBF baseline trained
// on unsafe-horizon labels with recorded controls.
//
// Generator consumption order (single mt19937_64 seeded with cfg.seed):
//   1. anchor subset of the safe pool (partial Fisher-Yates)
//   2. barrier, rejection, actor weights (MlpParams::uniform_init order)
//   3. per iteration: safe draws, unsafe draws, then unlabeled draws when
//      annotation is active. All draws are with replacement.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ncbf/adam.hpp"
#include "ncbf/datagen.hpp"
#include "ncbf/diffcore.hpp"
#include "ncbf/dynamics.hpp"
#include "ncbf/models.hpp"

namespace ncbf {

enum class Method { NcbfBc, Ncbf };

inline std::string_view to_string(Method m) { return m == Method::NcbfBc ? "ncbf-bc" : "ncbf"; }

inline Method parse_method(std::string_view s) {
    if (s == "ncbf-bc") return Method::NcbfBc;
    if (s == "ncbf") return Method::Ncbf;
    throw ConfigError("unknown method '" + std::string(s) + "' (expected ncbf-bc or ncbf)");
}

struct TrainingConfig {
    int iterations = 2000;
    int annotation_start = 200;
    double c = 0.1;
    double kappa = 0.1;
    int anchor_size = 1000;
    int batch_safe = 256;
    int batch_unsafe = 256;
    int batch_unlabeled = 256;
    int hidden_width = 128;
    AdamConfig adam;
    std::uint64_t seed = 0;
    bool regularization_on = true;
    bool annotation_on = true;
    int unsafe_horizon = 10;  // baseline only

    void validate() const {
        if (iterations < 1) throw ConfigError("training: iterations must be >= 1");
        if (annotation_start < 1 || annotation_start > iterations)
            throw ConfigError("training: annotation_start must lie in [1, iterations]");
        if (!(c > 0.0 && c < 1.0)) throw ConfigError("training: c must lie in (0, 1)");
        if (!(kappa > 0.0)) throw ConfigError("training: kappa must be > 0");
        if (anchor_size < 1) throw ConfigError("training: anchor_size must be >= 1");
        if (batch_safe < 1 || batch_unsafe < 1 || batch_unlabeled < 1)
            throw ConfigError("training: batch sizes must be >= 1");
        if (hidden_width < 1) throw ConfigError("training: hidden_width must be >= 1");
        if (!(adam.learning_rate > 0.0)) throw ConfigError("training: learning_rate must be > 0");
        if (unsafe_horizon < 1) throw ConfigError("training: unsafe_horizon must be >= 1");
    }
};

struct CurveRow {
    int iteration = 0;
    double rejection_loss = 0.0;
    double actor_loss = 0.0;
    double cbf_loss = 0.0;
    int annotated_safe = 0;
    int annotated_unsafe = 0;
    double anchor_mean = 0.0;

    friend bool operator==(const CurveRow&, const CurveRow&) = default;
};

/// Learned models. The baseline carries no rejection model or actor.
struct ModelBundle {
    CbfModel cbf;
    std::optional<RejectionModel> rejection;
    std::optional<ActorModel> actor;
};

struct Checkpoint {
    Method method = Method::NcbfBc;
    ModelBundle models;
    TrainingConfig config;
    DynamicsModel dynamics;
    std::vector<CurveRow> curve;
    std::string run_config;  // emitted run configuration, opaque here
};

using IterationObserver = std::function<void(int iteration, const ModelBundle&)>;

// ---------------------------------------------------------------- annotate

struct Annotation {
    MatrixXd safe;
    MatrixXd unsafe;
};

/// Unroll each state one step with the actor's control; the state is safe iff
/// the successor has B > 0 and both rejection heads pass.
inline Annotation annotate(const MatrixXd& batch, const CbfModel& cbf, const RejectionModel& rej,
                           const ActorModel& actor, const DynamicsModel& dyn) {
    Annotation out;
    const Index n = batch.cols();
    if (n == 0) {
        out.safe.resize(kStateDim, 0);
        out.unsafe.resize(kStateDim, 0);
        return out;
    }
    const MatrixXd next = successors(dyn, batch, actor.controls(batch));
    const VectorXd b = cbf.values(next);
    const MatrixXd r = rej.scores(next);
    std::vector<Index> safe_idx, unsafe_idx;
    for (Index j = 0; j < n; ++j) {
        const bool ok = b(j) > 0.0 && is_in_distribution({r(0, j), r(1, j)}, rej.c);
        (ok ? safe_idx : unsafe_idx).push_back(j);
    }
    out.safe.resize(kStateDim, static_cast<Index>(safe_idx.size()));
    out.unsafe.resize(kStateDim, static_cast<Index>(unsafe_idx.size()));
    for (std::size_t k = 0; k < safe_idx.size(); ++k) out.safe.col(static_cast<Index>(k)) = batch.col(safe_idx[k]);
    for (std::size_t k = 0; k < unsafe_idx.size(); ++k)
        out.unsafe.col(static_cast<Index>(k)) = batch.col(unsafe_idx[k]);
    return out;
}

// ---------------------------------------------------------------- helpers

namespace detail {

inline MatrixXd sample_columns(const MatrixXd& pool, int count, Rng& rng) {
    MatrixXd out(pool.rows(), count);
    for (int k = 0; k < count; ++k)
        out.col(k) = pool.col(static_cast<Index>(rng.index(static_cast<std::uint64_t>(pool.cols()))));
    return out;
}

inline std::vector<Index> sample_indices(Index pool, int count, Rng& rng) {
    std::vector<Index> out(static_cast<std::size_t>(count));
    for (auto& i : out) i = static_cast<Index>(rng.index(static_cast<std::uint64_t>(pool)));
    return out;
}

inline MatrixXd hcat(const MatrixXd& a, const MatrixXd& b) {
    MatrixXd out(a.rows(), a.cols() + b.cols());
    out << a, b;
    return out;
}

/// First `count` entries of a seeded partial Fisher-Yates shuffle.
inline std::vector<std::size_t> choose_without_replacement(std::size_t n, std::size_t count, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    count = std::min(count, n);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.index(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(count);
    return idx;
}

inline RegularizationAnchor make_anchor(const MatrixXd& safe_pool, int size, Rng& rng) {
    const auto idx = choose_without_replacement(static_cast<std::size_t>(safe_pool.cols()),
                                                static_cast<std::size_t>(size), rng);
    RegularizationAnchor a;
    a.states.resize(kStateDim, static_cast<Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) a.states.col(static_cast<Index>(k)) = safe_pool.col(static_cast<Index>(idx[k]));
    return a;
}

// The surrogate is sign-blind: with a negative anchor mean it would push raw
// values negative on safe states. Flip the output layer so the initial anchor
// mean is nonnegative and raw and surrogate signs agree.
inline void orient_barrier(CbfModel& cbf, const RegularizationAnchor& anchor) {
    if (anchor_mean(cbf, anchor) < 0.0) {
        cbf.params.weights[2] *= -1.0;
        cbf.params.biases[2] *= -1.0;
    }
}

inline CbfModel init_cbf(const InputScaling& s, int width, Rng& rng) {
    return {MlpParams::uniform_init(kStateDim, width, 1, rng), s};
}

}  // namespace detail

/// Random subsets of the labeled (safe + unsafe combined) and unlabeled pools.
/// Negative sizes keep a pool whole.
inline Dataset subsample_pools(const Dataset& ds, long labeled, long unlabeled, std::uint64_t seed) {
    Dataset out = ds;
    Rng rng(seed ^ 0x5u);
    if (labeled >= 0) {
        std::vector<StateRef> all = ds.safe;
        all.insert(all.end(), ds.unsafe.begin(), ds.unsafe.end());
        const auto idx = detail::choose_without_replacement(all.size(), static_cast<std::size_t>(labeled), rng);
        std::vector<std::size_t> sorted = idx;
        std::sort(sorted.begin(), sorted.end());
        out.safe.clear();
        out.unsafe.clear();
        for (auto i : sorted) (i < ds.safe.size() ? out.safe : out.unsafe).push_back(all[i]);
    }
    if (unlabeled >= 0) {
        auto idx = detail::choose_without_replacement(ds.unlabeled.size(), static_cast<std::size_t>(unlabeled), rng);
        std::sort(idx.begin(), idx.end());
        out.unlabeled.clear();
        for (auto i : idx) out.unlabeled.push_back(ds.unlabeled[i]);
    }
    return out;
}

// ---------------------------------------------------------------- NCBF-BC

/// Models initialized (and the barrier oriented) exactly as the trainer does.
struct TrainingState {
    ModelBundle models;
    RegularizationAnchor anchor;
};

inline TrainingState initialize_models(const TrainingConfig& cfg, const MatrixXd& safe_pool,
                                       const DynamicsModel& dyn, const InputScaling& scaling, Rng& rng,
                                       bool with_critic) {
    TrainingState st;
    st.anchor = detail::make_anchor(safe_pool, cfg.anchor_size, rng);
    st.models.cbf = detail::init_cbf(scaling, cfg.hidden_width, rng);
    if (with_critic) {
        RejectionModel rej{MlpParams::uniform_init(kStateDim, cfg.hidden_width, 2, rng), scaling, cfg.c};
        ActorModel actor{MlpParams::uniform_init(kStateDim, cfg.hidden_width, kControlDim, rng), scaling, dyn.u_min,
                         dyn.u_max};
        st.models.rejection = std::move(rej);
        st.models.actor = std::move(actor);
    }
    detail::orient_barrier(st.models.cbf, st.anchor);
    return st;
}

inline Checkpoint train_ncbf_bc(const TrainingConfig& cfg, const Dataset& ds, const DynamicsModel& dyn,
                                const InputScaling& scaling, const IterationObserver& observer = {}) {
    cfg.validate();
    dyn.validate();
    if (ds.safe.empty() || ds.unsafe.empty()) throw ConfigError("training: labeled safe and unsafe pools must be non-empty");

    const MatrixXd safe_pool = ds.gather(ds.safe);
    const MatrixXd unsafe_pool = ds.gather(ds.unsafe);
    const MatrixXd unlabeled_pool = ds.gather(ds.unlabeled);

    Rng rng(cfg.seed);
    TrainingState st = initialize_models(cfg, safe_pool, dyn, scaling, rng, true);
    CbfModel& cbf = st.models.cbf;
    RejectionModel& rej = *st.models.rejection;
    ActorModel& actor = *st.models.actor;

    Adam opt_cbf(cbf.params, cfg.adam), opt_rej(rej.params, cfg.adam), opt_actor(actor.params, cfg.adam);
    const ClassKappa alpha{cfg.kappa};

    Checkpoint ck;
    ck.method = Method::NcbfBc;
    ck.config = cfg;
    ck.dynamics = dyn;
    ck.curve.reserve(static_cast<std::size_t>(cfg.iterations));

    for (int t = 1; t <= cfg.iterations; ++t) {
        MatrixXd xs = detail::sample_columns(safe_pool, cfg.batch_safe, rng);
        MatrixXd xu = detail::sample_columns(unsafe_pool, cfg.batch_unsafe, rng);
        CurveRow row;
        row.iteration = t;
        if (cfg.annotation_on && t >= cfg.annotation_start && unlabeled_pool.cols() > 0) {
            const MatrixXd xul = detail::sample_columns(unlabeled_pool, cfg.batch_unlabeled, rng);
            const Annotation ann = annotate(xul, cbf, rej, actor, dyn);
            row.annotated_safe = static_cast<int>(ann.safe.cols());
            row.annotated_unsafe = static_cast<int>(ann.unsafe.cols());
            xs = detail::hcat(xs, ann.safe);
            xu = detail::hcat(xu, ann.unsafe);
        }

        // all three gradients from the parameters as of the iteration start
        const LossResult lr = rejection_loss(rej, xs, xu);
        const LossResult la = actor_loss(actor, cbf, rej, dyn, detail::hcat(xs, xu));
        const CbfLossResult lb = cbf_loss(cbf, actor, dyn, alpha, cfg.regularization_on ? &st.anchor : nullptr, xs, xu);

        row.rejection_loss = lr.value;
        row.actor_loss = la.value;
        row.cbf_loss = lb.value;
        row.anchor_mean = cfg.regularization_on ? lb.anchor_mean : anchor_mean(cbf, st.anchor);

        opt_rej.step(rej.params, lr.grad);
        opt_actor.step(actor.params, la.grad);
        opt_cbf.step(cbf.params, lb.grad);
        ck.curve.push_back(row);
        if (observer) observer(t, st.models);
    }
    ck.models = std::move(st.models);
    return ck;
}

// ---------------------------------------------------------------- baseline

/// Relabels with the unsafe horizon and fits the barrier alone. The Lie term
/// uses each safe state's recorded control (zero at terminal states).
inline Checkpoint train_ncbf_baseline(const TrainingConfig& cfg, const Dataset& ds, const DynamicsModel& dyn,
                                      const InputScaling& scaling, const IterationObserver& observer = {}) {
    cfg.validate();
    dyn.validate();
    const Dataset relabeled = relabel_unsafe_horizon(ds, cfg.unsafe_horizon);
    if (relabeled.safe.empty() || relabeled.unsafe.empty())
        throw ConfigError("training: labeled safe and unsafe pools must be non-empty");

    const MatrixXd safe_pool = relabeled.gather(relabeled.safe);
    const MatrixXd unsafe_pool = relabeled.gather(relabeled.unsafe);
    MatrixXd safe_controls(kControlDim, safe_pool.cols());
    for (std::size_t k = 0; k < relabeled.safe.size(); ++k)
        safe_controls.col(static_cast<Index>(k)) = relabeled.recorded_control(relabeled.safe[k]).vec();

    Rng rng(cfg.seed);
    TrainingState st = initialize_models(cfg, safe_pool, dyn, scaling, rng, false);
    CbfModel& cbf = st.models.cbf;
    Adam opt(cbf.params, cfg.adam);
    const ClassKappa alpha{cfg.kappa};

    Checkpoint ck;
    ck.method = Method::Ncbf;
    ck.config = cfg;
    ck.dynamics = dyn;
    ck.curve.reserve(static_cast<std::size_t>(cfg.iterations));

    for (int t = 1; t <= cfg.iterations; ++t) {
        const auto idx = detail::sample_indices(safe_pool.cols(), cfg.batch_safe, rng);
        MatrixXd xs(kStateDim, cfg.batch_safe), us(kControlDim, cfg.batch_safe);
        for (int k = 0; k < cfg.batch_safe; ++k) {
            xs.col(k) = safe_pool.col(idx[static_cast<std::size_t>(k)]);
            us.col(k) = safe_controls.col(idx[static_cast<std::size_t>(k)]);
        }
        const MatrixXd xu = detail::sample_columns(unsafe_pool, cfg.batch_unsafe, rng);
        const CbfLossResult lb =
            cbf_loss_with_controls(cbf, dyn, alpha, cfg.regularization_on ? &st.anchor : nullptr, xs, us, xu);
        CurveRow row;
        row.iteration = t;
        row.cbf_loss = lb.value;
        row.anchor_mean = cfg.regularization_on ? lb.anchor_mean : anchor_mean(cbf, st.anchor);
        opt.step(cbf.params, lb.grad);
        ck.curve.push_back(row);
        if (observer) observer(t, st.models);
    }
    ck.models = std::move(st.models);
    return ck;
}

}  // namespace ncbf
