#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "avloc/cli.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::string output_dir;
    std::uint64_t seed = 0;
    bool has_config = false, has_output = false, has_seed = false;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "JSON config file")->check(CLI::ExistingFile)
        ->each([&f](const std::string&) { f.has_config = true; });
    cmd->add_option("--seed", f.seed, "global seed")->each([&f](const std::string&) { f.has_seed = true; });
    cmd->add_option("--output-dir", f.output_dir, "run directory")
        ->each([&f](const std::string&) { f.has_output = true; });
    cmd->add_option("--override", f.overrides, "dot-path override, e.g. stage2.lambda=0.8");
}

avloc::cfg::RunConfig resolve(const CommonFlags& f) {
    return avloc::cfg::RunConfig::resolve(
        f.has_config ? std::optional<std::string>(f.config_path) : std::nullopt, f.overrides,
        f.has_seed ? std::optional<std::uint64_t>(f.seed) : std::nullopt,
        f.has_output ? std::optional<std::string>(f.output_dir) : std::nullopt);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"avloc: self-supervised discriminative sounding-object localization"};
    app.require_subcommand(1);

    CommonFlags gen_f, s1_f, s2_f, eval_f, vis_f;
    std::string scene_id;

    CLI::App* gen = app.add_subcommand("gen-data", "generate the toy dataset (solos + cocktail scenes)");
    add_common(gen, gen_f);
    CLI::App* s1 = app.add_subcommand("train-stage1", "single-source matching + dictionary learning");
    add_common(s1, s1_f);
    CLI::App* s2 = app.add_subcommand("train-stage2", "cocktail-party distribution matching");
    add_common(s2, s2_f);
    CLI::App* ev = app.add_subcommand("eval", "predict the test split and report IoU/AUC/CIoU/NSA");
    add_common(ev, eval_f);
    CLI::App* vis = app.add_subcommand("visualize", "write heatmap overlays for one scene");
    add_common(vis, vis_f);
    vis->add_option("--scene", scene_id, "scene id, e.g. cocktail_0061")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return avloc::cliapp::run_gen_data(resolve(gen_f));
        if (s1->parsed()) return avloc::cliapp::run_train_stage1(resolve(s1_f));
        if (s2->parsed()) return avloc::cliapp::run_train_stage2(resolve(s2_f));
        if (ev->parsed()) return avloc::cliapp::run_eval(resolve(eval_f));
        if (vis->parsed()) return avloc::cliapp::run_visualize(resolve(vis_f), scene_id);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return avloc::cliapp::exit_code_for(e);
    }
    return avloc::kExitOk;
}
