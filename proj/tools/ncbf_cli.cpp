// ncbf: collect demonstrations, train barrier models, evaluate the safe
// control filter and export barrier landscapes.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <iostream>

#include "ncbf/cli.hpp"

namespace {

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string method;
    std::vector<std::string> ablate;
    std::optional<long> subsample_labeled;
    std::optional<long> subsample_unlabeled;
    std::string out;
};

void add_common(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "run config file")->required();
    cmd->add_option("--seed", f.seed, "overrides the stage seed from the config");
    cmd->add_option("--out", f.out, "output path (overrides the config path)");
}

ncbf::Overrides to_overrides(const Flags& f) {
    ncbf::Overrides o;
    o.seed = f.seed;
    if (!f.method.empty()) o.method = ncbf::parse_method(f.method);
    for (const auto& a : f.ablate) o.ablations.push_back(ncbf::parse_ablation(a));
    o.subsample_labeled = f.subsample_labeled;
    o.subsample_unlabeled = f.subsample_unlabeled;
    if (!f.out.empty()) o.out = f.out;
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Neural control barrier functions from offline demonstrations"};
    app.require_subcommand(1);
    Flags f;

    auto* collect = app.add_subcommand("collect", "roll out demonstration controllers and write a labeled dataset");
    add_common(collect, f);

    auto* train = app.add_subcommand("train", "train a barrier checkpoint from the configured dataset");
    add_common(train, f);
    train->add_option("--method", f.method, "ncbf-bc or ncbf");
    train->add_option("--ablate", f.ablate, "no-regularization | no-annotation (repeatable)")->take_all();
    train->add_option("--subsample-labeled", f.subsample_labeled, "keep N labeled states");
    train->add_option("--subsample-unlabeled", f.subsample_unlabeled, "keep N unlabeled states");

    auto* eval = app.add_subcommand("eval", "run the safe control filter over randomized scenarios");
    add_common(eval, f);

    auto* landscape = app.add_subcommand("landscape", "export the barrier value grid over the arena");
    add_common(landscape, f);

    CLI11_PARSE(app, argc, argv);

    try {
        const ncbf::RunConfig cfg = ncbf::load_run_config(f.config);
        const ncbf::Overrides o = to_overrides(f);
        std::string summary;
        if (collect->parsed()) summary = ncbf::cmd_collect(cfg, o);
        else if (train->parsed()) summary = ncbf::cmd_train(cfg, o);
        else if (eval->parsed()) summary = ncbf::cmd_eval(cfg, o);
        else summary = ncbf::cmd_landscape(cfg, o);
        std::cout << summary << "\n";
    } catch (const std::exception& e) {
        std::cerr << "ncbf: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
