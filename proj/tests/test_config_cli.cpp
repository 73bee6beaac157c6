#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "avloc/cli.hpp"
#include "testutil.hpp"

using namespace avloc;
namespace fs = std::filesystem;

namespace {

std::string read_all(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

cfg::RunConfig tiny_run_config(const std::string& out_dir, std::uint64_t seed = 1) {
    cfg::RunConfig rc;
    rc.tree = cfg::RunConfig::default_tree();
    rc.tree["seed"] = seed;
    rc.tree["output_dir"] = out_dir;
    rc.tree["data"]["num_solos"] = 8;
    rc.tree["data"]["num_cocktails"] = 4;
    return rc;
}

} // namespace

TEST_SUITE("config") {

TEST_CASE("defaults carry the published constants") {
    cfg::RunConfig rc;
    rc.tree = cfg::RunConfig::default_tree();
    CHECK(rc.stage1_config().mask_threshold == 0.05);
    CHECK(rc.stage1_config().lr == 1e-4);
    CHECK(rc.stage2_config().lambda == 0.5);
    CHECK(rc.stage2_config().lr == 1e-4);
    CHECK(rc.metric_config().tau_fraction == 0.10);
    CHECK(rc.metric_config().iou_thresholds == std::vector<double>{0.3, 0.5});
    CHECK(rc.metric_config().auc_sweep().size() == 19);
}

TEST_CASE("config file merge and unknown-key rejection") {
    const std::string dir = testutil::scratch_dir("cfgmerge");
    write_text_file(dir + "/ok.json", R"({"stage2": {"lambda": 0.8}, "seed": 9})");
    const cfg::RunConfig rc = cfg::RunConfig::resolve(dir + "/ok.json", {}, std::nullopt, std::nullopt);
    CHECK(rc.stage2_config().lambda == 0.8);
    CHECK(rc.seed() == 9);
    CHECK(rc.stage2_config().lr == 1e-4); // untouched default

    write_text_file(dir + "/bad.json", R"({"stage2": {"lambdaa": 0.8}})");
    CHECK_THROWS_AS(cfg::RunConfig::resolve(dir + "/bad.json", {}, std::nullopt, std::nullopt), ConfigError);

    write_text_file(dir + "/broken.json", "{nope");
    CHECK_THROWS_AS(cfg::RunConfig::resolve(dir + "/broken.json", {}, std::nullopt, std::nullopt),
                    ConfigError);
}

TEST_CASE("dot-path overrides parse JSON values and reject unknown paths") {
    cfg::RunConfig rc = cfg::RunConfig::resolve(std::nullopt, {"stage2.lambda=1.5", "stage1.alt_rounds=0"},
                                                std::nullopt, std::nullopt);
    CHECK(rc.tree["stage2"]["lambda"] == 1.5);
    CHECK(rc.tree["stage1"]["alt_rounds"] == 0);
    CHECK_THROWS_AS(cfg::apply_override(rc.tree, "stage2.nothere=1"), ConfigError);
    CHECK_THROWS_AS(cfg::apply_override(rc.tree, "malformed"), ConfigError);
    cfg::apply_override(rc.tree, "model.profile=paper");
    CHECK(rc.profile() == models::Profile::paper);
}

TEST_CASE("config echo writes the resolved tree") {
    const std::string dir = testutil::scratch_dir("cfgecho");
    cfg::RunConfig rc = tiny_run_config(dir);
    rc.echo(dir + "/config.json");
    const Json back = read_json_file(dir + "/config.json");
    CHECK(back == rc.tree);
}

TEST_CASE("exit code mapping follows the error taxonomy") {
    CHECK(cliapp::exit_code_for(ConfigError("x")) == kExitConfig);
    CHECK(cliapp::exit_code_for(DomainError("x")) == kExitConfig);
    CHECK(cliapp::exit_code_for(ShapeError("x")) == kExitConfig);
    CHECK(cliapp::exit_code_for(StateError("x")) == kExitMissingArtifact);
    CHECK(cliapp::exit_code_for(IoError("x")) == kExitMissingArtifact);
    CHECK(cliapp::exit_code_for(NumericError("x")) == kExitNumeric);
    CHECK(cliapp::exit_code_for(std::runtime_error("x")) == kExitNumeric);
}

TEST_CASE("gen-data writes samples, three manifests, and honors counts") {
    const std::string dir = testutil::scratch_dir("gendata");
    const cfg::RunConfig rc = tiny_run_config(dir);
    CHECK(cliapp::run_gen_data(rc) == kExitOk);

    const data::DatasetManifest m1 = data::read_manifest(cliapp::manifest_path(rc, data::Split::stage1));
    const data::DatasetManifest m2 = data::read_manifest(cliapp::manifest_path(rc, data::Split::stage2));
    const data::DatasetManifest mt = data::read_manifest(cliapp::manifest_path(rc, data::Split::test));
    CHECK(m1.samples.size() == 4); // first half of 8 solos
    CHECK(m2.samples.size() + mt.samples.size() == 4);
    CHECK(mt.samples.size() >= 1);
    for (const auto& s : m1.samples) CHECK(s.source_count == 1);
    for (const auto& s : m2.samples) {
        CHECK(s.source_count == 2);
        REQUIRE(s.annotation.has_value());
        CHECK(s.annotation->num_sounding() == 2);
    }
    // sample files on disk
    for (const auto& s : m1.samples) {
        CHECK(fs::exists(fs::path(cliapp::data_dir(rc)) / s.audio_path));
        CHECK(fs::exists(fs::path(cliapp::data_dir(rc)) / s.frame_path));
    }
    // config echo present
    CHECK(fs::exists(fs::path(dir) / "config.gen-data.json"));
}

TEST_CASE("gen-data is byte-deterministic in the seed") {
    const std::string dir_a = testutil::scratch_dir("gendet_a");
    const std::string dir_b = testutil::scratch_dir("gendet_b");
    CHECK(cliapp::run_gen_data(tiny_run_config(dir_a, 3)) == kExitOk);
    CHECK(cliapp::run_gen_data(tiny_run_config(dir_b, 3)) == kExitOk);
    for (const char* name : {"manifest_stage1.json", "manifest_stage2.json", "manifest_test.json"}) {
        const std::string a = read_all(dir_a + "/data/" + name);
        const std::string b = read_all(dir_b + "/data/" + name);
        REQUIRE(!a.empty());
        CHECK(a == b);
    }
    // sample payloads too
    CHECK(read_all(dir_a + "/data/audio/solo_0000.wav") == read_all(dir_b + "/data/audio/solo_0000.wav"));
    CHECK(read_all(dir_a + "/data/frames/cocktail_0000.png") ==
          read_all(dir_b + "/data/frames/cocktail_0000.png"));
}

TEST_CASE("gen-data refuses cocktails with fewer than four classes") {
    const std::string dir = testutil::scratch_dir("genk1");
    cfg::RunConfig rc = tiny_run_config(dir);
    rc.tree["data"]["num_classes"] = 1;
    CHECK_THROWS_AS(cliapp::run_gen_data(rc), ConfigError);
}

TEST_CASE("gen-data surfaces an unwritable output directory as an I/O error") {
    cfg::RunConfig rc = tiny_run_config("/proc/avloc_cannot_write_here");
    CHECK_THROWS_AS(cliapp::run_gen_data(rc), IoError);
}

TEST_CASE("visualize writes one overlay per class plus a composite") {
    const std::string dir = testutil::scratch_dir("vizcli");
    cfg::RunConfig rc = tiny_run_config(dir);

    // hand-built artifacts: a frame, a test manifest, and a prediction dump
    fs::create_directories(dir + "/data/frames");
    fs::create_directories(dir + "/predictions");
    Image frame(112, 112, 0.4);
    save_png(dir + "/data/frames/cocktail_0000.png", frame);

    data::ManifestSample ms;
    ms.id = "cocktail_0000";
    ms.audio_path = "audio/cocktail_0000.wav";
    ms.frame_path = "frames/cocktail_0000.png";
    ms.source_count = 2;
    SceneAnnotation ann;
    ann.frame_h = ann.frame_w = 112;
    ann.boxes = {Box{0, 4, 4, 40, 40, true}, Box{1, 60, 4, 40, 40, true}, Box{2, 4, 60, 40, 40, false},
                 Box{3, 60, 60, 40, 40, false}};
    ms.annotation = ann;
    data::write_manifest(data::build_manifest({ms}, data::Split::test, 4),
                         cliapp::manifest_path(rc, data::Split::test));

    stage2::ScenePrediction pred;
    pred.id = "cocktail_0000";
    pred.l = Grid(14, 14, 0.3);
    pred.s = GridStack(4, 14, 14, 0.1);
    pred.viz = GridStack(4, 14, 14, 0.25);
    pred.pv = {0.4, 0.4, 0.1, 0.1};
    pred.pa = {0.5, 0.5, 0.0, 0.0};
    pred.sounding = {true, true, false, false};
    pred.tau = 0.01;
    stage2::save_prediction(pred, dir + "/predictions", std::vector<int>{0, 1, 2, 3});

    CHECK(cliapp::run_visualize(rc, "cocktail_0000") == kExitOk);
    for (int c = 0; c < 4; ++c)
        CHECK(fs::exists(fs::path(dir) / "vis" / ("cocktail_0000_class" + std::to_string(c) + ".png")));
    CHECK(fs::exists(fs::path(dir) / "vis" / "cocktail_0000_composite.png"));

    CHECK_THROWS_AS(cliapp::run_visualize(rc, "no_such_scene"), StateError);
}

TEST_CASE("train-stage2 without stage-1 artifacts names the missing file") {
    const std::string dir = testutil::scratch_dir("nostage1");
    const cfg::RunConfig rc = tiny_run_config(dir);
    try {
        cliapp::run_train_stage2(rc);
        FAIL("expected StateError");
    } catch (const StateError& e) {
        CHECK(std::string(e.what()).find("checkpoint.avta") != std::string::npos);
        CHECK(cliapp::exit_code_for(e) == kExitMissingArtifact);
    }
}

} // TEST_SUITE
