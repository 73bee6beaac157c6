#include "avloc/stage2.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

namespace fs = std::filesystem;

namespace avloc::stage2 {

namespace {
constexpr double kKlEps = 1e-8;
}

void Stage2Config::validate() const {
    if (lambda < 0.0) throw ConfigError("stage2: lambda must be non-negative");
    if (!enable_lc && !enable_l1) throw ConfigError("stage2: all loss components disabled, nothing to optimize");
    if (batch_size < 2) throw ConfigError("stage2: batch_size must be at least 2");
    if (epochs < 1) throw ConfigError("stage2: epochs must be positive");
    if (lr <= 0.0) throw ConfigError("stage2: learning rate must be positive");
}

GridStack class_maps(const nn::Tensor& fmap, const stage1::ObjectDictionary& dict) {
    if (fmap.n != 1) throw ShapeError("class_maps: expects one sample");
    if (fmap.c != dict.dim) throw ShapeError("class_maps: dictionary dim does not match feature channels");
    const int spatial = fmap.h * fmap.w;
    GridStack m(dict.num_keys, fmap.h, fmap.w);
    for (int k = 0; k < dict.num_keys; ++k) {
        const double* dk = dict.key(k);
        double* out = m.v.data() + static_cast<std::size_t>(k) * spatial;
        for (int p = 0; p < spatial; ++p) {
            double acc = 0.0;
            for (int c = 0; c < fmap.c; ++c) acc += dk[c] * fmap.v[static_cast<std::size_t>(c) * spatial + p];
            out[p] = acc;
        }
    }
    return m;
}

GridStack sounding_filter(const GridStack& m, const Grid& l) {
    if (m.h != l.h || m.w != l.w) throw ShapeError("sounding_filter: spatial shape mismatch");
    GridStack s = m;
    const int spatial = m.h * m.w;
    for (int k = 0; k < m.k; ++k)
        for (int p = 0; p < spatial; ++p) s.v[static_cast<std::size_t>(k) * spatial + p] *= l.v[p];
    return s;
}

CategoryDistribution sounding_distribution(const GridStack& s) {
    if (s.k < 2) throw DomainError("sounding_distribution: need at least 2 classes");
    std::vector<double> means(s.k);
    for (int k = 0; k < s.k; ++k) means[k] = s.slice(k).mean();
    for (const double v : means)
        if (!std::isfinite(v)) throw NumericError("sounding_distribution: non-finite map");
    CategoryDistribution d;
    d.source = CategoryDistribution::Source::visual;
    d.probs = nn::softmax(means);
    return d;
}

CategoryDistribution audio_distribution(models::AVModel& model, const dsp::Spectrogram& spec) {
    if (!model.cls_trained)
        throw StateError("audio_distribution: audio classifier has not been trained (run stage 1 first)");
    const nn::Tensor in = models::specs_to_tensor({&spec});
    const nn::Tensor emb = model.audio_forward(in);
    const nn::Tensor logits = model.audio_cls.forward(emb);
    CategoryDistribution d;
    d.source = CategoryDistribution::Source::audio;
    d.probs = nn::softmax(std::vector<double>(logits.v.begin(), logits.v.end()));
    return d;
}

double kl_divergence(const CategoryDistribution& pv, const CategoryDistribution& pa) {
    if (pv.probs.size() != pa.probs.size()) throw ShapeError("kl_divergence: distribution sizes differ");
    double acc = 0.0;
    for (std::size_t k = 0; k < pv.probs.size(); ++k)
        acc += pv.probs[k] * (std::log(std::max(pv.probs[k], kKlEps)) - std::log(std::max(pa.probs[k], kKlEps)));
    return acc;
}

StepLosses stage2_forward_backward(models::AVModel& model, models::AVModel& frozen_audio_ref,
                                   const stage1::ObjectDictionary& dict, const nn::Tensor& specs,
                                   const nn::Tensor& frames, const stage1::PairBatch& batch,
                                   const Stage2Config& cfg, bool accumulate_grads) {
    const int bs = specs.n;
    const nn::Tensor aemb = model.audio_forward(specs);
    const nn::Tensor fmap = model.visual_forward(frames);
    const nn::Tensor z = model.head.forward_pairs(aemb, fmap, batch.pairs);
    const int spatial = z.h * z.w;
    const int kk = dict.num_keys;

    StepLosses losses;
    nn::Tensor dz(z.n, 1, z.h, z.w);
    nn::Tensor df_extra(fmap.n, fmap.c, fmap.h, fmap.w);

    // --- L1: matched/mismatched BCE on GMP scores over all pairs ---
    if (cfg.enable_l1) {
        std::vector<int> argmax(z.n, 0);
        std::vector<double> scores(z.n, 0.0);
        for (int p = 0; p < z.n; ++p) {
            const double* zm = z.sample(p);
            int best = 0;
            for (int q = 1; q < spatial; ++q)
                if (zm[q] > zm[best]) best = q;
            argmax[p] = best;
            scores[p] = models::sigmoid(zm[best]);
        }
        losses.l1 = stage1::match_loss(scores, batch.labels);
        if (accumulate_grads)
            for (int p = 0; p < z.n; ++p)
                dz.sample(p)[argmax[p]] +=
                    cfg.lambda * (scores[p] - batch.labels[p]) / static_cast<double>(z.n);
    }

    // --- Lc: audiovisual category-distribution consistency (Eq.4-7) ---
    if (cfg.enable_lc) {
        if (!model.cls_trained) throw StateError("stage2: audio classifier untrained, cannot form p_a");
        if (fmap.c != dict.dim) throw ShapeError("stage2: dictionary dim mismatch");

        // constant targets from the frozen stage-1 audio pathway
        const nn::Tensor ref_emb = frozen_audio_ref.audio_forward(specs);
        const nn::Tensor ref_logits = frozen_audio_ref.audio_cls.forward(ref_emb);

        double lc_sum = 0.0;
        for (int i = 0; i < bs; ++i) {
            // matched pair i is pair index i by construction
            const double* zi = z.sample(i);
            std::vector<double> l(spatial);
            for (int q = 0; q < spatial; ++q) l[q] = models::sigmoid(zi[q]);

            const double* fi = fmap.sample(i);
            std::vector<double> m(static_cast<std::size_t>(kk) * spatial);
            std::vector<double> means(kk, 0.0);
            for (int k = 0; k < kk; ++k) {
                const double* dk = dict.key(k);
                double acc = 0.0;
                for (int q = 0; q < spatial; ++q) {
                    double dot = 0.0;
                    for (int c = 0; c < fmap.c; ++c)
                        dot += dk[c] * fi[static_cast<std::size_t>(c) * spatial + q];
                    const double sv = cfg.enable_product_filter ? dot * l[q] : dot;
                    m[static_cast<std::size_t>(k) * spatial + q] = dot;
                    acc += sv;
                }
                means[k] = acc / spatial;
            }
            const std::vector<double> pv = nn::softmax(means);
            const std::vector<double> pa =
                nn::softmax(std::vector<double>(ref_logits.sample(i), ref_logits.sample(i) + kk));
            double kl = 0.0;
            std::vector<double> g(kk);
            for (int k = 0; k < kk; ++k) {
                const double lpv = std::log(std::max(pv[k], kKlEps));
                const double lpa = std::log(std::max(pa[k], kKlEps));
                kl += pv[k] * (lpv - lpa);
                // inside the clamp the log term is constant, so the product
                // rule's +1 only applies above it
                g[k] = lpv - lpa + (pv[k] > kKlEps ? 1.0 : 0.0);
            }
            lc_sum += kl;

            if (accumulate_grads) {
                double gdot = 0.0;
                for (int k = 0; k < kk; ++k) gdot += pv[k] * g[k];
                double* dzi = dz.sample(i);
                double* dfi = df_extra.sample(i);
                for (int k = 0; k < kk; ++k) {
                    const double dmu = pv[k] * (g[k] - gdot) / static_cast<double>(bs);
                    const double ds = dmu / spatial;
                    const double* dk = dict.key(k);
                    for (int q = 0; q < spatial; ++q) {
                        const double mv = m[static_cast<std::size_t>(k) * spatial + q];
                        const double dm = cfg.enable_product_filter ? ds * l[q] : ds;
                        for (int c = 0; c < fmap.c; ++c)
                            dfi[static_cast<std::size_t>(c) * spatial + q] += dm * dk[c];
                        if (cfg.enable_product_filter) {
                            const double dl = ds * mv;
                            dzi[q] += dl * l[q] * (1.0 - l[q]); // through the sigmoid
                        }
                    }
                }
            }
        }
        losses.lc = lc_sum / bs;
    }

    losses.total = (cfg.enable_lc ? losses.lc : 0.0) + cfg.lambda * (cfg.enable_l1 ? losses.l1 : 0.0);

    if (accumulate_grads) {
        auto [da, df] = model.head.backward_pairs(dz);
        for (std::size_t i = 0; i < df.v.size(); ++i) df.v[i] += df_extra.v[i];
        model.audio_backward(da);
        model.visual_backward(df);
    }
    return losses;
}

Stage2Result stage2_train(const data::Dataset& ds, models::AVModel& model,
                          const stage1::ObjectDictionary& dict, const Stage2Config& cfg, JsonlWriter* jsonl) {
    cfg.validate();
    const int n = static_cast<int>(ds.samples.size());
    if (n < 2) throw DomainError("stage2: need at least 2 samples");
    if (cfg.enable_lc && !model.cls_trained)
        throw StateError("stage2: stage-1 audio classifier missing (cls_trained is false)");
    if (dict.dim != model.vis_cfg.channels) throw ShapeError("stage2: dictionary dim mismatch");

    // Snapshot the stage-1 audio pathway before any stage-2 update; p_a stays
    // a fixed target for the whole run.
    models::AVModel frozen = model;
    frozen.set_training(false);

    model.set_training(true);
    nn::Adam adam(cfg.lr);
    adam.attach(model.localization_params());

    Stage2Result result;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng order_rng = derive_rng(cfg.seed, "s2-order", epoch);
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        order_rng.shuffle(order);

        double sum_total = 0.0, sum_lc = 0.0, sum_l1 = 0.0;
        int batches = 0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int end = std::min(n, start + cfg.batch_size);
            if (end - start < 2) break;
            std::vector<const dsp::Spectrogram*> sp;
            std::vector<const Image*> fr;
            for (int i = start; i < end; ++i) {
                sp.push_back(&ds.samples[order[i]].spec);
                fr.push_back(&ds.samples[order[i]].frame);
            }
            const nn::Tensor specs = models::specs_to_tensor(sp);
            const nn::Tensor frames = models::frames_to_tensor(fr);
            Rng pair_rng = derive_rng(cfg.seed, "s2-derange", static_cast<std::uint64_t>(epoch) * 1000 + batches);
            stage1::PairBatch pb;
            if (cfg.enable_l1) {
                pb = stage1::make_pair_batch(end - start, pair_rng);
            } else {
                for (int i = 0; i < end - start; ++i) {
                    pb.pairs.emplace_back(i, i);
                    pb.labels.push_back(1.0);
                }
            }
            adam.zero_grad();
            const StepLosses losses =
                stage2_forward_backward(model, frozen, dict, specs, frames, pb, cfg, true);
            adam.step();
            sum_total += losses.total;
            sum_lc += losses.lc;
            sum_l1 += losses.l1;
            ++batches;
        }
        Json rec{{"phase", "stage2"},
                 {"epoch", epoch},
                 {"loss", sum_total / std::max(1, batches)},
                 {"lc", sum_lc / std::max(1, batches)},
                 {"l1", sum_l1 / std::max(1, batches)}};
        if (jsonl) jsonl->write(rec);
        result.log.push_back(std::move(rec));
    }
    return result;
}

ScenePrediction predict_scene(models::AVModel& model, const stage1::ObjectDictionary& dict,
                              const data::LoadedSample& sample, const Stage2Config& cfg,
                              double tau_fraction) {
    model.set_training(false);
    const nn::Tensor specs = models::specs_to_tensor({&sample.spec});
    const nn::Tensor frames = models::frames_to_tensor({&sample.frame});
    const nn::Tensor aemb = model.audio_forward(specs);
    const nn::Tensor fmap = model.visual_forward(frames);
    const nn::Tensor z = model.head.forward_pairs(aemb, fmap, {{0, 0}});

    ScenePrediction pred;
    pred.id = sample.id;
    pred.l = Grid(z.h, z.w);
    for (int q = 0; q < z.h * z.w; ++q) pred.l.v[q] = models::sigmoid(z.v[q]);

    const GridStack m = class_maps(fmap, dict);
    pred.s = cfg.enable_product_filter ? sounding_filter(m, pred.l) : m;

    // per-location softmax across classes, for visualization
    pred.viz = GridStack(pred.s.k, pred.s.h, pred.s.w);
    const int spatial = pred.s.h * pred.s.w;
    for (int q = 0; q < spatial; ++q) {
        std::vector<double> col(pred.s.k);
        for (int k = 0; k < pred.s.k; ++k) col[k] = pred.s.v[static_cast<std::size_t>(k) * spatial + q];
        const std::vector<double> sm = nn::softmax(col);
        for (int k = 0; k < pred.s.k; ++k) pred.viz.v[static_cast<std::size_t>(k) * spatial + q] = sm[k];
    }

    pred.pv = sounding_distribution(pred.s).probs;
    pred.pa = audio_distribution(model, sample.spec).probs;

    pred.tau = tau_fraction * pred.s.max();
    pred.sounding.assign(pred.s.k, false);
    for (int k = 0; k < pred.s.k; ++k) pred.sounding[k] = pred.s.slice(k).max() >= pred.tau;
    return pred;
}

void save_prediction(const ScenePrediction& pred, const std::string& dir,
                     const std::optional<std::vector<int>>& alignment) {
    TensorArchive ar;
    ar.meta["format"] = "avloc-prediction";
    ar.meta["id"] = pred.id;
    ar.meta["tau"] = pred.tau;
    if (alignment)
        ar.meta["alignment"] = *alignment;
    else
        ar.meta["alignment"] = nullptr;
    ar.add("l", {pred.l.h, pred.l.w}, pred.l.v, /*f64=*/false);
    ar.add("s", {pred.s.k, pred.s.h, pred.s.w}, pred.s.v, /*f64=*/false);
    ar.add("viz", {pred.viz.k, pred.viz.h, pred.viz.w}, pred.viz.v, /*f64=*/false);
    const fs::path base = fs::path(dir) / pred.id;
    ar.save(base.string() + ".avta");

    Json side{{"id", pred.id},
              {"sounding", pred.sounding},
              {"pv", pred.pv},
              {"pa", pred.pa},
              {"tau", pred.tau}};
    if (alignment) side["alignment"] = *alignment;
    write_json_file(base.string() + ".json", side);
}

ScenePrediction load_prediction(const std::string& dir, const std::string& id) {
    const fs::path base = fs::path(dir) / id;
    const TensorArchive ar = TensorArchive::load(base.string() + ".avta");
    const Json side = read_json_file(base.string() + ".json");
    ScenePrediction pred;
    pred.id = id;
    const ArchiveEntry& le = ar.get("l");
    pred.l = Grid(le.dims.at(0), le.dims.at(1));
    pred.l.v = le.data;
    const ArchiveEntry& se = ar.get("s");
    pred.s = GridStack(se.dims.at(0), se.dims.at(1), se.dims.at(2));
    pred.s.v = se.data;
    const ArchiveEntry& ve = ar.get("viz");
    pred.viz = GridStack(ve.dims.at(0), ve.dims.at(1), ve.dims.at(2));
    pred.viz.v = ve.data;
    pred.pv = side.at("pv").get<std::vector<double>>();
    pred.pa = side.at("pa").get<std::vector<double>>();
    pred.sounding = side.at("sounding").get<std::vector<bool>>();
    pred.tau = side.at("tau").get<double>();
    if (side.contains("alignment")) pred.alignment = side.at("alignment").get<std::vector<int>>();
    return pred;
}

} // namespace avloc::stage2
