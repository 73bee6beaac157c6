#include "avloc/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>

#include "avloc/visualize.hpp"

namespace fs = std::filesystem;

namespace avloc::cliapp {

namespace {

void ensure_dir(const std::string& path) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) throw IoError("cannot create directory " + path + ": " + ec.message());
}

std::string sample_id(const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%04d", prefix, i);
    return buf;
}

} // namespace

std::string data_dir(const cfg::RunConfig& rc) { return (fs::path(rc.output_dir()) / "data").string(); }

std::string manifest_path(const cfg::RunConfig& rc, data::Split split) {
    return (fs::path(data_dir(rc)) / ("manifest_" + data::split_name(split) + ".json")).string();
}

std::string stage1_dir(const cfg::RunConfig& rc) { return (fs::path(rc.output_dir()) / "stage1").string(); }
std::string stage2_dir(const cfg::RunConfig& rc) { return (fs::path(rc.output_dir()) / "stage2").string(); }
std::string predictions_dir(const cfg::RunConfig& rc) {
    return (fs::path(rc.output_dir()) / "predictions").string();
}
std::string eval_dir(const cfg::RunConfig& rc) { return (fs::path(rc.output_dir()) / "eval").string(); }
std::string vis_dir(const cfg::RunConfig& rc) { return (fs::path(rc.output_dir()) / "vis").string(); }

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
    if (dynamic_cast<const StateError*>(&e) || dynamic_cast<const IoError*>(&e)) return kExitMissingArtifact;
    if (dynamic_cast<const Error*>(&e)) return kExitConfig;
    return kExitNumeric;
}

// ---------------------------------------------------------------------------
// gen-data: toy solos for stage 1, cocktails for stage 2 plus a held-out
// test split. Mirroring the source split convention, the first half of the
// solos trains stage 1 and the second half is the pool the cocktails are
// synthesized from.
// ---------------------------------------------------------------------------
int run_gen_data(const cfg::RunConfig& rc) {
    const data::ToyWorldSpec spec = rc.toy_spec();
    const cfg::GenParams gen = rc.gen_params();
    if (gen.num_cocktails > 0 && spec.num_classes < 4)
        throw ConfigError("gen-data: cocktail synthesis needs at least 4 classes");

    const std::string ddir = data_dir(rc);
    ensure_dir((fs::path(ddir) / "audio").string());
    ensure_dir((fs::path(ddir) / "frames").string());
    rc.echo((fs::path(rc.output_dir()) / "config.gen-data.json").string());

    // --- solos ---
    std::vector<data::SoloSample> solos;
    std::vector<data::ManifestSample> solo_entries;
    solos.reserve(gen.num_solos);
    for (int i = 0; i < gen.num_solos; ++i) {
        const int class_id = i % spec.num_classes;
        data::SoloSample solo = data::make_solo(spec, class_id, static_cast<std::uint64_t>(i));
        const std::string id = sample_id("solo", i);
        solo.pair.pair_id = id;
        data::ManifestSample entry;
        entry.id = id;
        entry.audio_path = "audio/" + id + ".wav";
        entry.frame_path = "frames/" + id + ".png";
        entry.source_count = 1;
        entry.annotation = solo.annotation;
        data::save_pair(solo.pair, (fs::path(ddir) / entry.audio_path).string(),
                        (fs::path(ddir) / entry.frame_path).string());
        solo_entries.push_back(entry);
        solos.push_back(std::move(solo));
    }

    const int n_stage1 = (gen.num_solos + 1) / 2;
    data::write_manifest(
        data::build_manifest(
            std::vector<data::ManifestSample>(solo_entries.begin(), solo_entries.begin() + n_stage1),
            data::Split::stage1, spec.num_classes),
        manifest_path(rc, data::Split::stage1));

    // --- cocktails from the held-out solo pool ---
    std::vector<data::ManifestSample> cocktail_entries;
    if (gen.num_cocktails > 0) {
        std::map<int, std::vector<int>> pool_by_class;
        for (int i = n_stage1; i < gen.num_solos; ++i)
            pool_by_class[i % spec.num_classes].push_back(i);

        Rng rng = derive_rng(rc.seed(), "gen-cocktails");
        for (int j = 0; j < gen.num_cocktails; ++j) {
            std::vector<int> classes(spec.num_classes);
            std::iota(classes.begin(), classes.end(), 0);
            rng.shuffle(classes);
            classes.resize(4);
            std::vector<data::SoloSample> sources;
            for (const int c : classes) {
                const auto& pool = pool_by_class[c];
                if (pool.empty())
                    throw ConfigError("gen-data: held-out solo pool has no sample of class " +
                                      std::to_string(c));
                sources.push_back(solos[pool[rng.uniform_int(0, static_cast<int>(pool.size()) - 1)]]);
            }
            const std::string id = sample_id("cocktail", j);
            data::CocktailScene scene =
                data::synthesize_cocktail(sources, gen.jitter, derive_seed(rc.seed(), "cocktail", j), id);
            data::ManifestSample entry;
            entry.id = id;
            entry.audio_path = "audio/" + id + ".wav";
            entry.frame_path = "frames/" + id + ".png";
            entry.source_count = scene.pair.source_count;
            entry.annotation = scene.annotation;
            data::save_pair(scene.pair, (fs::path(ddir) / entry.audio_path).string(),
                            (fs::path(ddir) / entry.frame_path).string());
            cocktail_entries.push_back(std::move(entry));
        }

        const int n_train = std::max(1, static_cast<int>(std::lround(gen.stage2_fraction * gen.num_cocktails)));
        if (n_train >= gen.num_cocktails)
            throw ConfigError("gen-data: stage2_fraction leaves no test cocktails");
        data::write_manifest(
            data::build_manifest(
                std::vector<data::ManifestSample>(cocktail_entries.begin(), cocktail_entries.begin() + n_train),
                data::Split::stage2, spec.num_classes),
            manifest_path(rc, data::Split::stage2));
        data::write_manifest(
            data::build_manifest(
                std::vector<data::ManifestSample>(cocktail_entries.begin() + n_train, cocktail_entries.end()),
                data::Split::test, spec.num_classes),
            manifest_path(rc, data::Split::test));
    }

    std::cout << "gen-data: wrote " << gen.num_solos << " solos (" << n_stage1 << " in stage1 manifest) and "
              << gen.num_cocktails << " cocktails under " << ddir << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
int run_train_stage1(const cfg::RunConfig& rc) {
    const std::string s1 = stage1_dir(rc);
    ensure_dir(s1);
    rc.echo((fs::path(rc.output_dir()) / "config.train-stage1.json").string());

    const data::Dataset ds = data::load_dataset(manifest_path(rc, data::Split::stage1));
    const stage1::Stage1Config s1cfg = rc.stage1_config();
    models::AVModel model(rc.profile(), s1cfg.num_keys, rc.seed());

    JsonlWriter log((fs::path(s1) / "log.jsonl").string());
    const stage1::Stage1Result result = stage1::alternating_train(ds, model, s1cfg, &log);

    model.save_checkpoint((fs::path(s1) / "checkpoint.avta").string());
    stage1::save_dictionary(result.dictionary, (fs::path(s1) / "dictionary.avta").string());

    Json summary{{"kmeans_objective", result.dictionary.objective},
                 {"empty_mask_skipped", result.empty_mask_skipped},
                 {"num_keys", result.dictionary.num_keys},
                 {"samples", ds.samples.size()}};
    if (result.nmi) summary["nmi"] = *result.nmi;
    write_json_file((fs::path(s1) / "summary.json").string(), summary);

    std::cout << "train-stage1: done";
    if (result.nmi) std::cout << " (pseudo-label NMI " << *result.nmi << ")";
    std::cout << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
int run_train_stage2(const cfg::RunConfig& rc) {
    const std::string s2 = stage2_dir(rc);
    ensure_dir(s2);
    rc.echo((fs::path(rc.output_dir()) / "config.train-stage2.json").string());

    const std::string ckpt = (fs::path(stage1_dir(rc)) / "checkpoint.avta").string();
    const std::string dict_path = (fs::path(stage1_dir(rc)) / "dictionary.avta").string();
    models::AVModel model = models::AVModel::load_checkpoint(ckpt);
    const stage1::ObjectDictionary dict = stage1::load_dictionary(dict_path);

    const data::Dataset ds = data::load_dataset(manifest_path(rc, data::Split::stage2));
    const stage2::Stage2Config s2cfg = rc.stage2_config();

    JsonlWriter log((fs::path(s2) / "log.jsonl").string());
    const stage2::Stage2Result result = stage2::stage2_train(ds, model, dict, s2cfg, &log);

    model.save_checkpoint((fs::path(s2) / "checkpoint.avta").string());
    Json summary{{"epochs", s2cfg.epochs}, {"samples", ds.samples.size()}};
    if (!result.log.empty()) summary["final"] = result.log.back();
    write_json_file((fs::path(s2) / "summary.json").string(), summary);

    std::cout << "train-stage2: done (" << result.log.size() << " epochs)\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
int run_eval(const cfg::RunConfig& rc) {
    ensure_dir(predictions_dir(rc));
    ensure_dir(eval_dir(rc));
    rc.echo((fs::path(rc.output_dir()) / "config.eval.json").string());

    models::AVModel model =
        models::AVModel::load_checkpoint((fs::path(stage2_dir(rc)) / "checkpoint.avta").string());
    const stage1::ObjectDictionary dict =
        stage1::load_dictionary((fs::path(stage1_dir(rc)) / "dictionary.avta").string());

    const data::DatasetManifest manifest = data::read_manifest(manifest_path(rc, data::Split::test));
    const data::Dataset ds = data::load_dataset(manifest_path(rc, data::Split::test));
    const stage2::Stage2Config s2cfg = rc.stage2_config();
    const metrics::MetricConfig mcfg = rc.metric_config();

    for (const auto& sample : ds.samples) {
        const stage2::ScenePrediction pred =
            stage2::predict_scene(model, dict, sample, s2cfg, mcfg.tau_fraction);
        stage2::save_prediction(pred, predictions_dir(rc), dict.alignment);
    }

    const metrics::EvalReport report = metrics::evaluate(predictions_dir(rc), manifest, mcfg);
    write_json_file((fs::path(eval_dir(rc)) / "report.json").string(), metrics::report_to_json(report));

    std::cout << "scenes evaluated " << report.scenes_evaluated << "/" << report.scenes_total
              << " (missing " << report.scenes_missing << ", degenerate " << report.scenes_degenerate << ")\n";
    for (const auto& [t, f] : report.ciou_at) std::printf("  CIoU@%.2f  %.4f\n", t, f);
    for (const auto& [t, f] : report.iou_at) std::printf("  IoU@%.2f   %.4f\n", t, f);
    std::printf("  AUC(CIoU) %.4f\n  AUC(IoU)  %.4f\n  NSA       %.4f\n", report.auc_ciou, report.auc_iou,
                report.nsa_mean);
    return report.complete() ? kExitOk : kExitMissingArtifact;
}

// ---------------------------------------------------------------------------
int run_visualize(const cfg::RunConfig& rc, const std::string& scene_id) {
    ensure_dir(vis_dir(rc));
    const stage2::ScenePrediction pred = [&] {
        try {
            return stage2::load_prediction(predictions_dir(rc), scene_id);
        } catch (const Error&) {
            throw StateError("visualize: no prediction for scene id '" + scene_id + "'");
        }
    }();

    const data::DatasetManifest manifest = data::read_manifest(manifest_path(rc, data::Split::test));
    const data::ManifestSample* found = nullptr;
    for (const auto& s : manifest.samples)
        if (s.id == scene_id) found = &s;
    if (!found) throw StateError("visualize: scene id '" + scene_id + "' not in the test manifest");

    const Image frame = load_png((fs::path(data_dir(rc)) / found->frame_path).string());
    const double alpha = rc.viz_alpha();
    const double norm_max = std::max(pred.s.max(), 1e-12);

    std::vector<int> alignment(pred.s.k);
    for (int k = 0; k < pred.s.k; ++k) alignment[k] = pred.alignment ? (*pred.alignment)[k] : k;

    std::vector<Image> tiles;
    for (int k = 0; k < pred.s.k; ++k) {
        const int class_id = alignment[k];
        std::vector<Box> class_boxes;
        if (found->annotation)
            for (const auto& b : found->annotation->boxes)
                if (b.class_id == class_id) class_boxes.push_back(b);
        Image tile = viz::overlay_map(frame, pred.s.slice(k), norm_max, class_boxes, alpha);
        save_png((fs::path(vis_dir(rc)) / (scene_id + "_class" + std::to_string(class_id) + ".png")).string(),
                 tile);
        tiles.push_back(std::move(tile));
    }
    save_png((fs::path(vis_dir(rc)) / (scene_id + "_composite.png")).string(), viz::compose_tiles(tiles));
    std::cout << "visualize: wrote " << tiles.size() << " class overlays + composite for " << scene_id
              << "\n";
    return kExitOk;
}

} // namespace avloc::cliapp
