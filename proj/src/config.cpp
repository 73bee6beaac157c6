#include "avloc/config.hpp"

#include <cmath>

namespace avloc::cfg {

namespace {

// Rejects keys absent from the defaults so typos fail fast.
void check_known_keys(const Json& defaults, const Json& given, const std::string& path) {
    if (!given.is_object()) return;
    for (const auto& [key, value] : given.items()) {
        const std::string here = path.empty() ? key : path + "." + key;
        if (!defaults.is_object() || !defaults.contains(key))
            throw ConfigError("unknown config key: " + here);
        if (value.is_object()) check_known_keys(defaults.at(key), value, here);
    }
}

} // namespace

void deep_merge(Json& base, const Json& over) {
    if (!over.is_object()) {
        base = over;
        return;
    }
    for (const auto& [key, value] : over.items()) {
        if (value.is_object() && base.contains(key) && base.at(key).is_object())
            deep_merge(base.at(key), value);
        else
            base[key] = value;
    }
}

void apply_override(Json& tree, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override must look like key.path=value: " + kv);
    const std::string path = kv.substr(0, eq);
    const std::string raw = kv.substr(eq + 1);
    Json value;
    try {
        value = Json::parse(raw);
    } catch (...) {
        value = raw; // plain string
    }

    Json* node = &tree;
    std::size_t start = 0;
    std::vector<std::string> parts;
    while (start <= path.size()) {
        const auto dot = path.find('.', start);
        parts.push_back(path.substr(start, dot == std::string::npos ? std::string::npos : dot - start));
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->contains(parts[i])) throw ConfigError("override path not found: " + path);
        node = &node->at(parts[i]);
    }
    if (!node->contains(parts.back())) throw ConfigError("override path not found: " + path);
    (*node)[parts.back()] = value;
}

Json RunConfig::default_tree() {
    return Json{
        {"seed", 1},
        {"output_dir", "runs/toy"},
        {"data",
         {{"num_classes", 4},
          {"num_solos", 200},
          {"num_cocktails", 100},
          {"noise_level", 0.02},
          {"frame_size", 112},
          {"stage2_fraction", 0.6},
          {"tones_hz", Json::array()},
          {"jitter", {{"gain_min", 0.5}, {"gain_max", 1.5}, {"max_shift_ms", 100.0}}}}},
        {"model", {{"profile", "toy"}}},
        {"stage1",
         {{"mask_threshold", 0.05},
          {"K", 4},
          {"alt_rounds", 2},
          {"loc_epochs", 4},
          {"batch_size", 16},
          {"lr", 1e-4},
          {"cls_max_epochs", 20},
          {"cls_patience", 3},
          {"cls_min_delta", 0.005},
          {"kmeans_restarts", 10}}},
        {"stage2",
         {{"lambda", 0.5},
          {"lr", 1e-4},
          {"epochs", 8},
          {"batch_size", 8},
          {"enable_product_filter", true},
          {"enable_lc", true},
          {"enable_l1", true}}},
        {"metrics", {{"tau_fraction", 0.10}, {"iou_thresholds", {0.3, 0.5}}, {"auc_step", 0.05}}},
        {"visualize", {{"alpha", 0.5}}},
    };
}

RunConfig RunConfig::resolve(const std::optional<std::string>& config_path,
                             const std::vector<std::string>& overrides,
                             const std::optional<std::uint64_t>& seed_flag,
                             const std::optional<std::string>& output_dir_flag) {
    RunConfig rc;
    rc.tree = default_tree();
    if (config_path) {
        Json file;
        try {
            file = read_json_file(*config_path);
        } catch (const IoError& e) {
            throw ConfigError(std::string("config file: ") + e.what());
        }
        check_known_keys(rc.tree, file, "");
        deep_merge(rc.tree, file);
    }
    for (const auto& kv : overrides) apply_override(rc.tree, kv);
    if (seed_flag) rc.tree["seed"] = *seed_flag;
    if (output_dir_flag) rc.tree["output_dir"] = *output_dir_flag;
    return rc;
}

std::uint64_t RunConfig::seed() const { return tree.at("seed").get<std::uint64_t>(); }

std::string RunConfig::output_dir() const { return tree.at("output_dir").get<std::string>(); }

models::Profile RunConfig::profile() const {
    return models::profile_from_name(tree.at("model").at("profile").get<std::string>());
}

data::ToyWorldSpec RunConfig::toy_spec() const {
    const Json& d = tree.at("data");
    data::ToyWorldSpec spec = data::ToyWorldSpec::make(d.at("num_classes").get<int>(),
                                                       d.at("noise_level").get<double>(), seed(),
                                                       d.at("frame_size").get<int>());
    const auto tones = d.at("tones_hz").get<std::vector<double>>();
    if (!tones.empty()) {
        if (static_cast<int>(tones.size()) != spec.num_classes)
            throw ConfigError("data.tones_hz must list one tone per class");
        spec.tones_hz = tones;
    }
    spec.validate();
    return spec;
}

GenParams RunConfig::gen_params() const {
    const Json& d = tree.at("data");
    GenParams g;
    g.num_solos = d.at("num_solos").get<int>();
    g.num_cocktails = d.at("num_cocktails").get<int>();
    g.stage2_fraction = d.at("stage2_fraction").get<double>();
    g.jitter.gain_min = d.at("jitter").at("gain_min").get<double>();
    g.jitter.gain_max = d.at("jitter").at("gain_max").get<double>();
    g.jitter.max_shift_ms = d.at("jitter").at("max_shift_ms").get<double>();
    if (g.num_solos < 2) throw ConfigError("data.num_solos must be at least 2");
    if (g.num_cocktails < 0) throw ConfigError("data.num_cocktails must be non-negative");
    if (g.stage2_fraction <= 0.0 || g.stage2_fraction >= 1.0)
        throw ConfigError("data.stage2_fraction must lie in (0, 1)");
    if (g.jitter.gain_min > g.jitter.gain_max || g.jitter.gain_min < 0.0)
        throw ConfigError("data.jitter gains invalid");
    return g;
}

stage1::Stage1Config RunConfig::stage1_config() const {
    const Json& s = tree.at("stage1");
    stage1::Stage1Config c;
    c.mask_threshold = s.at("mask_threshold").get<double>();
    c.num_keys = s.at("K").get<int>();
    c.alt_rounds = s.at("alt_rounds").get<int>();
    c.loc_epochs = s.at("loc_epochs").get<int>();
    c.batch_size = s.at("batch_size").get<int>();
    c.lr = s.at("lr").get<double>();
    c.cls.max_epochs = s.at("cls_max_epochs").get<int>();
    c.cls.patience = s.at("cls_patience").get<int>();
    c.cls.min_delta = s.at("cls_min_delta").get<double>();
    c.kmeans_restarts = s.at("kmeans_restarts").get<int>();
    c.seed = seed();
    c.validate();
    return c;
}

stage2::Stage2Config RunConfig::stage2_config() const {
    const Json& s = tree.at("stage2");
    stage2::Stage2Config c;
    c.lambda = s.at("lambda").get<double>();
    c.lr = s.at("lr").get<double>();
    c.epochs = s.at("epochs").get<int>();
    c.batch_size = s.at("batch_size").get<int>();
    c.enable_product_filter = s.at("enable_product_filter").get<bool>();
    c.enable_lc = s.at("enable_lc").get<bool>();
    c.enable_l1 = s.at("enable_l1").get<bool>();
    c.seed = seed();
    c.validate();
    return c;
}

metrics::MetricConfig RunConfig::metric_config() const {
    const Json& m = tree.at("metrics");
    metrics::MetricConfig c;
    c.tau_fraction = m.at("tau_fraction").get<double>();
    c.iou_thresholds = m.at("iou_thresholds").get<std::vector<double>>();
    c.auc_step = m.at("auc_step").get<double>();
    c.validate();
    return c;
}

double RunConfig::viz_alpha() const { return tree.at("visualize").at("alpha").get<double>(); }

void RunConfig::echo(const std::string& path) const { write_json_file(path, tree); }

} // namespace avloc::cfg
