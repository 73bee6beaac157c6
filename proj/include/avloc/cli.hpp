#pragma once

#include <string>

#include "avloc/config.hpp"

namespace avloc::cliapp {

// Subcommand implementations. Each echoes the resolved config into the run
// directory before doing any work and returns a process exit code.
int run_gen_data(const cfg::RunConfig& rc);
int run_train_stage1(const cfg::RunConfig& rc);
int run_train_stage2(const cfg::RunConfig& rc);
int run_eval(const cfg::RunConfig& rc);
int run_visualize(const cfg::RunConfig& rc, const std::string& scene_id);

int exit_code_for(const std::exception& e);

// Run-directory layout helpers.
std::string data_dir(const cfg::RunConfig& rc);
std::string manifest_path(const cfg::RunConfig& rc, data::Split split);
std::string stage1_dir(const cfg::RunConfig& rc);
std::string stage2_dir(const cfg::RunConfig& rc);
std::string predictions_dir(const cfg::RunConfig& rc);
std::string eval_dir(const cfg::RunConfig& rc);
std::string vis_dir(const cfg::RunConfig& rc);

} // namespace avloc::cliapp
