#pragma once

#include <optional>
#include <string>
#include <vector>

#include "avloc/data.hpp"
#include "avloc/io.hpp"
#include "avloc/metrics.hpp"
#include "avloc/models.hpp"
#include "avloc/stage1.hpp"
#include "avloc/stage2.hpp"

namespace avloc::cfg {

// Merges `over` into `base` recursively; scalar/array values replace.
void deep_merge(Json& base, const Json& over);

// "a.b.c=value" dot-path override; the value parses as JSON when possible,
// otherwise as a string. The path must exist in the defaults.
void apply_override(Json& tree, const std::string& kv);

struct GenParams {
    int num_solos = 200;
    int num_cocktails = 100;
    double stage2_fraction = 0.6; // cocktail share that trains stage 2; the rest is the test split
    JitterParams jitter;
};

// Resolved run configuration. The full tree is echoed into the output
// directory at the start of every command; a rerun with the same tree and
// seed reproduces logged trajectories.
struct RunConfig {
    Json tree;

    static Json default_tree();
    static RunConfig resolve(const std::optional<std::string>& config_path,
                             const std::vector<std::string>& overrides,
                             const std::optional<std::uint64_t>& seed_flag,
                             const std::optional<std::string>& output_dir_flag);

    std::uint64_t seed() const;
    std::string output_dir() const;
    models::Profile profile() const;
    data::ToyWorldSpec toy_spec() const;
    GenParams gen_params() const;
    stage1::Stage1Config stage1_config() const;
    stage2::Stage2Config stage2_config() const;
    metrics::MetricConfig metric_config() const;
    double viz_alpha() const;

    void echo(const std::string& path) const;
};

} // namespace avloc::cfg
