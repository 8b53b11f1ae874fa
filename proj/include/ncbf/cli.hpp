#pragma once

// Pipeline commands behind the ncbf binary. Each takes the parsed run config
// and path overrides, writes its artifact and returns a one-line summary.

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "ncbf/checkpoint.hpp"
#include "ncbf/config.hpp"
#include "ncbf/datagen.hpp"
#include "ncbf/safectrl.hpp"
#include "ncbf/training.hpp"

namespace ncbf {

enum class Ablation { NoRegularization, NoAnnotation };

inline Ablation parse_ablation(std::string_view s) {
    if (s == "no-regularization") return Ablation::NoRegularization;
    if (s == "no-annotation") return Ablation::NoAnnotation;
    throw ConfigError("unknown ablation '" + std::string(s) + "' (expected no-regularization or no-annotation)");
}

/// Command-line overrides applied on top of the config file.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<Method> method;
    std::vector<Ablation> ablations;
    std::optional<long> subsample_labeled;
    std::optional<long> subsample_unlabeled;
    std::optional<std::string> out;
};

namespace detail {

inline void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << text;
    if (!out) throw ConfigError("write failed for '" + path + "'");
}

}  // namespace detail

/// Pool counts as printed by `collect`.
inline std::string pool_summary(const Dataset& ds) {
    return "trajectories=" + std::to_string(ds.trajectories.size()) + " safe=" + std::to_string(ds.safe.size()) +
           " unsafe=" + std::to_string(ds.unsafe.size()) + " unlabeled=" + std::to_string(ds.unlabeled.size());
}

inline std::string cmd_collect(RunConfig cfg, const Overrides& o) {
    if (o.seed) cfg.collect.seed = *o.seed;
    if (o.out) cfg.paths.dataset = *o.out;
    cfg.validate();
    const DynamicsModel& dyn = cfg.dynamics;
    const World world = cfg.make_world();
    auto trajs = collect_trajectories(cfg.collect, dyn, world, cfg.controller);
    const Dataset ds = label_trajectories(std::move(trajs), cfg.labeling, dyn.kind, dyn.dt);
    save_dataset(ds, cfg.paths.dataset);
    return pool_summary(ds);
}

/// Config as trained: flags folded in, so the embedded text reproduces the run.
inline RunConfig effective_train_config(RunConfig cfg, const Overrides& o) {
    if (o.seed) cfg.training.seed = *o.seed;
    if (o.method) cfg.method = *o.method;
    for (auto a : o.ablations) {
        if (a == Ablation::NoRegularization) cfg.training.regularization_on = false;
        if (a == Ablation::NoAnnotation) cfg.training.annotation_on = false;
    }
    if (o.subsample_labeled) cfg.subsample_labeled = *o.subsample_labeled;
    if (o.subsample_unlabeled) cfg.subsample_unlabeled = *o.subsample_unlabeled;
    if (o.out) cfg.paths.checkpoint = *o.out;
    cfg.validate();
    return cfg;
}

inline Checkpoint train_from_config(const RunConfig& cfg, const Dataset& loaded) {
    if (loaded.kind != cfg.dynamics.kind) throw ConfigError("dataset dynamics kind does not match the config");
    const Dataset ds = subsample_pools(loaded, cfg.subsample_labeled, cfg.subsample_unlabeled, cfg.training.seed);
    const InputScaling scaling = InputScaling::for_task(cfg.dynamics, cfg.world.bounds);
    Checkpoint ck = cfg.method == Method::NcbfBc ? train_ncbf_bc(cfg.training, ds, cfg.dynamics, scaling)
                                                 : train_ncbf_baseline(cfg.training, ds, cfg.dynamics, scaling);
    ck.run_config = emit_run_config(cfg);
    return ck;
}

/// Writes the checkpoint, its text sidecar and `<checkpoint>.curve.csv`.
inline std::string cmd_train(const RunConfig& base, const Overrides& o) {
    const RunConfig cfg = effective_train_config(base, o);
    const Dataset ds = load_dataset(cfg.paths.dataset);
    const Checkpoint ck = train_from_config(cfg, ds);
    save_checkpoint(ck, cfg.paths.checkpoint);
    detail::write_file(cfg.paths.checkpoint + ".curve.csv", curve_csv(ck.curve));
    const CurveRow& last = ck.curve.back();
    char buf[160];
    std::snprintf(buf, sizeof buf, "method=%s iterations=%d cbf_loss=%.6g anchor_mean=%.6g",
                  std::string(to_string(ck.method)).c_str(), last.iteration, last.cbf_loss, last.anchor_mean);
    return buf;
}

inline std::string cmd_eval(RunConfig cfg, const Overrides& o) {
    if (o.seed) cfg.evaluation.seed = *o.seed;
    if (o.out) cfg.paths.report = *o.out;
    cfg.validate();
    const Checkpoint ck = load_checkpoint(cfg.paths.checkpoint);
    const EvaluationReport rep = evaluate(ck.models, ck.dynamics, cfg.make_world(), cfg.evaluation, cfg.filter);
    detail::write_file(cfg.paths.report, report_csv(rep));
    return "success_rate=" + format_rate(rep.success_rate) + "% scenarios=" + std::to_string(rep.scenarios.size());
}

inline std::string cmd_landscape(RunConfig cfg, const Overrides& o) {
    if (o.out) cfg.paths.landscape = *o.out;
    cfg.validate();
    const Checkpoint ck = load_checkpoint(cfg.paths.checkpoint);
    LandscapeConfig lc = cfg.landscape;
    lc.region = cfg.world.bounds;
    const RejectionModel* rej = ck.models.rejection ? &*ck.models.rejection : nullptr;
    detail::write_file(cfg.paths.landscape, export_landscape_grid(ck.models.cbf, rej, lc));
    return "cells=" + std::to_string(lc.resolution * lc.resolution);
}

}  // namespace ncbf
