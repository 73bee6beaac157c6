#include "avloc/stage1.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "avloc/metrics.hpp"

namespace avloc::stage1 {

namespace {

constexpr double kBceEps = 1e-12;

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

// Min-cost perfect assignment on a square matrix (Hungarian algorithm with
// potentials, O(n^3)). Returns row -> column.
std::vector<int> hungarian_min_cost(const std::vector<std::vector<double>>& cost) {
    const int n = static_cast<int>(cost.size());
    constexpr double kInf = 1e300;
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, kInf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = -1;
            double delta = kInf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

struct LoneRun {
    std::vector<std::vector<double>> centroids;
    std::vector<int> assignments;
    double objective = 0.0;
    std::vector<double> trace;
};

LoneRun kmeans_single(const std::vector<std::vector<double>>& pts, int k, Rng& rng) {
    const int n = static_cast<int>(pts.size());
    const int dim = static_cast<int>(pts[0].size());

    // k-means++ seeding
    std::vector<std::vector<double>> centroids;
    centroids.reserve(k);
    centroids.push_back(pts[rng.uniform_int(0, n - 1)]);
    std::vector<double> d2(n, 0.0);
    while (static_cast<int>(centroids.size()) < k) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            double best = 1e300;
            for (const auto& c : centroids) best = std::min(best, squared_distance(pts[i], c));
            d2[i] = best;
            total += best;
        }
        if (total <= 0.0) {
            centroids.push_back(pts[rng.uniform_int(0, n - 1)]);
            continue;
        }
        double r = rng.uniform() * total;
        int pick = n - 1;
        for (int i = 0; i < n; ++i) {
            r -= d2[i];
            if (r <= 0.0) {
                pick = i;
                break;
            }
        }
        centroids.push_back(pts[pick]);
    }

    LoneRun run;
    run.assignments.assign(n, -1);
    std::vector<int> counts(k, 0);
    for (int iter = 0; iter < 100; ++iter) {
        // assignment step
        bool changed = false;
        double objective = 0.0;
        std::fill(counts.begin(), counts.end(), 0);
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d = squared_distance(pts[i], centroids[0]);
            for (int c = 1; c < k; ++c) {
                const double d = squared_distance(pts[i], centroids[c]);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (run.assignments[i] != best) changed = true;
            run.assignments[i] = best;
            counts[best]++;
            objective += best_d;
        }
        run.trace.push_back(objective);
        run.objective = objective;
        if (!changed && iter > 0) break;

        // update step
        for (int c = 0; c < k; ++c) std::fill(centroids[c].begin(), centroids[c].end(), 0.0);
        for (int i = 0; i < n; ++i) {
            const int c = run.assignments[i];
            for (int d = 0; d < dim; ++d) centroids[c][d] += pts[i][d];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[c] > 0) {
                for (int d = 0; d < dim; ++d) centroids[c][d] /= counts[c];
            } else {
                // re-seed a dead centroid from the farthest point
                int far = 0;
                double far_d = -1.0;
                for (int i = 0; i < n; ++i) {
                    const double d = squared_distance(pts[i], centroids[run.assignments[i]]);
                    if (d > far_d) {
                        far_d = d;
                        far = i;
                    }
                }
                centroids[c] = pts[far];
            }
        }
    }
    run.centroids = std::move(centroids);
    return run;
}

} // namespace

double match_loss(const std::vector<double>& scores, const std::vector<double>& labels) {
    if (scores.size() != labels.size()) throw ShapeError("match_loss: size mismatch");
    if (scores.size() < 2) throw ConfigError("match_loss: need at least 2 pairs to form mismatches");
    double acc = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double s = std::clamp(scores[i], kBceEps, 1.0 - kBceEps);
        acc += -(labels[i] * std::log(s) + (1.0 - labels[i]) * std::log(1.0 - s));
    }
    return acc / static_cast<double>(scores.size());
}

ExtractResult extract_object_repr(const nn::Tensor& fmap, const Grid& lmap, double threshold) {
    if (fmap.n != 1) throw ShapeError("extract_object_repr: expects one sample");
    if (fmap.h != lmap.h || fmap.w != lmap.w) throw ShapeError("extract_object_repr: spatial shape mismatch");

    ExtractResult res;
    res.mask.h = lmap.h;
    res.mask.w = lmap.w;
    res.mask.threshold_used = threshold;
    res.mask.v.assign(lmap.size(), 0);
    int count = 0;
    for (std::size_t i = 0; i < lmap.v.size(); ++i) {
        if (lmap.v[i] >= threshold) {
            res.mask.v[i] = 1;
            ++count;
        }
    }
    if (count == 0) return res;

    ObjectRepresentation repr;
    repr.values.assign(fmap.c, 0.0);
    const int spatial = fmap.h * fmap.w;
    for (int c = 0; c < fmap.c; ++c) {
        const double* src = fmap.v.data() + static_cast<std::size_t>(c) * spatial;
        double acc = 0.0;
        for (int p = 0; p < spatial; ++p)
            if (res.mask.v[p]) acc += src[p];
        repr.values[c] = acc / count;
    }
    res.repr = std::move(repr);
    return res;
}

KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k, std::uint64_t seed, int restarts) {
    if (k < 1) throw DomainError("kmeans: k must be positive");
    if (static_cast<int>(points.size()) < k)
        throw DomainError("kmeans: fewer points (" + std::to_string(points.size()) + ") than clusters (" +
                          std::to_string(k) + ")");
    if (restarts < 1) restarts = 1;

    KMeansResult best;
    best.k = k;
    best.objective = 1e300;
    for (int r = 0; r < restarts; ++r) {
        Rng rng = derive_rng(seed, "kmeans", static_cast<std::uint64_t>(r));
        LoneRun run = kmeans_single(points, k, rng);
        best.objective_traces.push_back(run.trace);
        if (run.objective < best.objective) {
            best.objective = run.objective;
            best.centroids = std::move(run.centroids);
            best.assignments = std::move(run.assignments);
        }
    }
    return best;
}

ObjectDictionary build_dictionary(const std::vector<ObjectRepresentation>& reprs, int k, std::uint64_t seed,
                                  int restarts) {
    if (reprs.empty()) throw DomainError("build_dictionary: no representations");
    std::vector<std::vector<double>> pts;
    pts.reserve(reprs.size());
    for (const auto& r : reprs) pts.push_back(r.values);
    const KMeansResult km = kmeans(pts, k, seed, restarts);

    ObjectDictionary dict;
    dict.num_keys = k;
    dict.dim = static_cast<int>(pts[0].size());
    dict.keys.resize(static_cast<std::size_t>(k) * dict.dim);
    for (int c = 0; c < k; ++c)
        std::copy(km.centroids[c].begin(), km.centroids[c].end(),
                  dict.keys.begin() + static_cast<std::ptrdiff_t>(c) * dict.dim);
    dict.objective = km.objective;
    for (std::size_t i = 0; i < reprs.size(); ++i)
        dict.assignments.emplace_back(reprs[i].source_pair_id, km.assignments[i]);
    return dict;
}

void save_dictionary(const ObjectDictionary& dict, const std::string& path) {
    TensorArchive ar;
    ar.meta["format"] = "avloc-dictionary";
    ar.meta["format_version"] = 1;
    ar.meta["num_keys"] = dict.num_keys;
    ar.meta["dim"] = dict.dim;
    ar.meta["objective"] = dict.objective;
    Json assign = Json::array();
    for (const auto& [id, k] : dict.assignments) assign.push_back(Json{{"id", id}, {"key", k}});
    ar.meta["assignments"] = assign;
    if (dict.alignment) ar.meta["alignment"] = *dict.alignment;
    ar.add("keys", {dict.num_keys, dict.dim}, dict.keys, /*f64=*/false);
    ar.save(path);
}

ObjectDictionary load_dictionary(const std::string& path) {
    const TensorArchive ar = TensorArchive::load(path);
    if (ar.meta.value("format", "") != "avloc-dictionary")
        throw StateError("load_dictionary: not a dictionary file: " + path);
    ObjectDictionary dict;
    dict.num_keys = ar.meta.at("num_keys").get<int>();
    dict.dim = ar.meta.at("dim").get<int>();
    dict.objective = ar.meta.at("objective").get<double>();
    dict.keys = ar.get("keys").data;
    for (const auto& a : ar.meta.at("assignments"))
        dict.assignments.emplace_back(a.at("id").get<std::string>(), a.at("key").get<int>());
    if (ar.meta.contains("alignment")) dict.alignment = ar.meta.at("alignment").get<std::vector<int>>();
    return dict;
}

std::vector<int> align_semantics(const std::vector<int>& key_assignments, const std::vector<int>& labels,
                                 int num_keys, int num_classes) {
    if (key_assignments.size() != labels.size() || key_assignments.empty())
        throw DomainError("align_semantics: assignment/label size mismatch");
    std::set<int> seen(labels.begin(), labels.end());
    for (int c = 0; c < num_classes; ++c)
        if (!seen.count(c)) throw DomainError("align_semantics: labeled sample misses class " + std::to_string(c));

    std::vector<std::vector<double>> counts(num_keys, std::vector<double>(num_classes, 0.0));
    double max_count = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        counts[key_assignments[i]][labels[i]] += 1.0;
        max_count = std::max(max_count, counts[key_assignments[i]][labels[i]]);
    }

    std::vector<int> alignment(num_keys, -1);
    if (num_keys <= num_classes) {
        // one distinct class per key
        const int n = num_classes;
        std::vector<std::vector<double>> cost(n, std::vector<double>(n, max_count + 1.0));
        for (int k = 0; k < num_keys; ++k)
            for (int c = 0; c < num_classes; ++c) cost[k][c] = max_count - counts[k][c];
        const std::vector<int> row_to_col = hungarian_min_cost(cost);
        for (int k = 0; k < num_keys; ++k) alignment[k] = row_to_col[k];
    } else {
        // anchor one key per class, then aggregate the rest to their majority
        const int n = num_keys;
        std::vector<std::vector<double>> cost(n, std::vector<double>(n, max_count + 1.0));
        for (int c = 0; c < num_classes; ++c)
            for (int k = 0; k < num_keys; ++k) cost[c][k] = max_count - counts[k][c];
        const std::vector<int> class_to_key = hungarian_min_cost(cost);
        for (int c = 0; c < num_classes; ++c) alignment[class_to_key[c]] = c;
        for (int k = 0; k < num_keys; ++k) {
            if (alignment[k] >= 0) continue;
            int best = 0;
            for (int c = 1; c < num_classes; ++c)
                if (counts[k][c] > counts[k][best]) best = c;
            alignment[k] = best;
        }
    }
    return alignment;
}

PairBatch make_pair_batch(int batch_size, Rng& rng) {
    if (batch_size < 2) throw ConfigError("make_pair_batch: batch must have at least 2 samples");
    PairBatch b;
    for (int i = 0; i < batch_size; ++i) {
        b.pairs.emplace_back(i, i);
        b.labels.push_back(1.0);
    }
    std::vector<int> order(batch_size);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (int j = 0; j < batch_size; ++j) {
        b.pairs.emplace_back(order[j], order[(j + 1) % batch_size]);
        b.labels.push_back(0.0);
    }
    return b;
}

double matching_forward_backward(models::AVModel& model, const nn::Tensor& specs, const nn::Tensor& frames,
                                 const PairBatch& batch, bool accumulate_grads) {
    const nn::Tensor aemb = model.audio_forward(specs);
    const nn::Tensor fmap = model.visual_forward(frames);
    const nn::Tensor z = model.head.forward_pairs(aemb, fmap, batch.pairs);

    const int np = z.n;
    const int spatial = z.h * z.w;
    std::vector<int> argmax(np, 0);
    std::vector<double> scores(np, 0.0);
    for (int p = 0; p < np; ++p) {
        const double* zm = z.sample(p);
        int best = 0;
        for (int q = 1; q < spatial; ++q)
            if (zm[q] > zm[best]) best = q;
        argmax[p] = best;
        scores[p] = models::sigmoid(zm[best]);
    }
    const double loss = match_loss(scores, batch.labels);

    if (accumulate_grads) {
        nn::Tensor dz(np, 1, z.h, z.w);
        for (int p = 0; p < np; ++p)
            dz.sample(p)[argmax[p]] = (scores[p] - batch.labels[p]) / static_cast<double>(np);
        auto [da, df] = model.head.backward_pairs(dz);
        model.audio_backward(da);
        model.visual_backward(df);
    }
    return loss;
}

void Stage1Config::validate() const {
    if (mask_threshold <= 0.0 || mask_threshold >= 1.0)
        throw ConfigError("stage1: mask_threshold must lie in (0, 1)");
    if (num_keys < 2) throw ConfigError("stage1: K must be at least 2");
    if (batch_size < 2) throw ConfigError("stage1: batch_size must be at least 2");
    if (loc_epochs < 1) throw ConfigError("stage1: loc_epochs must be positive");
    if (alt_rounds < 0) throw ConfigError("stage1: alt_rounds must be non-negative");
    if (lr <= 0.0) throw ConfigError("stage1: learning rate must be positive");
}

namespace {

struct BatchTensors {
    nn::Tensor specs, frames;
};

BatchTensors gather(const data::Dataset& ds, const std::vector<int>& idxs) {
    std::vector<const dsp::Spectrogram*> sp;
    std::vector<const Image*> fr;
    for (const int i : idxs) {
        sp.push_back(&ds.samples[i].spec);
        fr.push_back(&ds.samples[i].frame);
    }
    return {models::specs_to_tensor(sp), models::frames_to_tensor(fr)};
}

std::vector<std::vector<int>> make_batches(int n, int batch_size, Rng& rng) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::vector<std::vector<int>> batches;
    for (int start = 0; start < n; start += batch_size) {
        const int end = std::min(n, start + batch_size);
        if (end - start < 2) break; // a lone trailing sample cannot form a mismatch
        batches.emplace_back(order.begin() + start, order.begin() + end);
    }
    return batches;
}

} // namespace

Stage1Result alternating_train(const data::Dataset& ds, models::AVModel& model, const Stage1Config& cfg,
                               JsonlWriter* jsonl, const Observer& observer) {
    cfg.validate();
    const int n = static_cast<int>(ds.samples.size());
    if (n < 2) throw DomainError("stage1: need at least 2 samples");
    for (const auto& s : ds.samples)
        if (s.source_count != 1) throw DomainError("stage1: sample " + s.id + " is not single-source");

    Stage1Result result;
    auto log = [&](Json rec) {
        if (jsonl) jsonl->write(rec);
        result.log.push_back(std::move(rec));
    };
    auto notify = [&](const std::string& tag, int round) {
        if (observer) observer(tag, round, model);
    };

    model.set_training(true);
    nn::Adam adam_loc(cfg.lr);
    adam_loc.attach(model.localization_params());

    auto run_loc_epochs = [&](int round, int epochs) {
        for (int epoch = 0; epoch < epochs; ++epoch) {
            Rng order_rng = derive_rng(cfg.seed, "s1-loc-order",
                                       static_cast<std::uint64_t>(round) * 100000 + epoch);
            const auto batches = make_batches(n, cfg.batch_size, order_rng);
            double loss_sum = 0.0;
            for (std::size_t b = 0; b < batches.size(); ++b) {
                const BatchTensors t = gather(ds, batches[b]);
                Rng pair_rng = derive_rng(cfg.seed, "s1-derange",
                                          (static_cast<std::uint64_t>(round) * 100000 + epoch) * 1000 + b);
                const PairBatch pb = make_pair_batch(static_cast<int>(batches[b].size()), pair_rng);
                adam_loc.zero_grad();
                loss_sum += matching_forward_backward(model, t.specs, t.frames, pb, true);
                adam_loc.step();
            }
            log(Json{{"phase", "loc"},
                     {"round", round},
                     {"epoch", epoch},
                     {"loss", loss_sum / std::max<std::size_t>(1, batches.size())}});
        }
    };

    // Extraction pass: matched-pair maps in eval mode, masked averages.
    std::vector<std::optional<int>> pseudo(n);
    std::vector<ObjectRepresentation> reprs;
    auto run_extraction = [&](int round) {
        model.set_training(false);
        reprs.clear();
        int empty = 0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int end = std::min(n, start + cfg.batch_size);
            std::vector<int> idxs(end - start);
            std::iota(idxs.begin(), idxs.end(), start);
            const BatchTensors t = gather(ds, idxs);
            const nn::Tensor aemb = model.audio_forward(t.specs);
            const nn::Tensor fmap = model.visual_forward(t.frames);
            std::vector<std::pair<int, int>> matched;
            for (int i = 0; i < end - start; ++i) matched.emplace_back(i, i);
            const nn::Tensor z = model.head.forward_pairs(aemb, fmap, matched);
            for (int i = 0; i < end - start; ++i) {
                Grid l(z.h, z.w);
                for (int q = 0; q < z.h * z.w; ++q) l.v[q] = models::sigmoid(z.sample(i)[q]);
                nn::Tensor f1(1, fmap.c, fmap.h, fmap.w);
                std::copy_n(fmap.sample(i), f1.size(), f1.v.begin());
                ExtractResult ex = extract_object_repr(f1, l, cfg.mask_threshold);
                if (ex.repr) {
                    ex.repr->source_pair_id = ds.samples[idxs[i]].id;
                    reprs.push_back(std::move(*ex.repr));
                } else {
                    ++empty;
                }
            }
        }
        model.set_training(true);
        result.empty_mask_skipped = empty;
        if (empty * 2 > n)
            throw NumericError("stage1: localization collapsed in round " + std::to_string(round) + " (" +
                               std::to_string(empty) + "/" + std::to_string(n) + " empty masks at threshold " +
                               std::to_string(cfg.mask_threshold) + ")");
    };

    ObjectDictionary dict;
    std::vector<int> clustered_idx; // dataset indices of clustered samples
    auto run_kmeans = [&](int round) {
        dict = build_dictionary(reprs, cfg.num_keys, derive_seed(cfg.seed, "s1-kmeans", round),
                                cfg.kmeans_restarts);
        clustered_idx.clear();
        std::fill(pseudo.begin(), pseudo.end(), std::nullopt);
        std::size_t r = 0;
        for (int i = 0; i < n && r < reprs.size(); ++i) {
            if (reprs[r].source_pair_id == ds.samples[i].id) {
                pseudo[i] = dict.assignments[r].second;
                clustered_idx.push_back(i);
                ++r;
            }
        }
        log(Json{{"phase", "kmeans"}, {"round", round}, {"kmeans_objective", dict.objective}});
    };

    auto run_cls_phase = [&](int round, bool train_backbones) {
        model.reinit_classifiers(derive_seed(cfg.seed, "s1-reinit", round));
        notify("cls_start", round);
        nn::Adam adam_cls(cfg.lr);
        adam_cls.attach(model.classification_params(train_backbones));

        double best_acc = -1.0;
        int stall = 0;
        const int m = static_cast<int>(clustered_idx.size());
        for (int epoch = 0; epoch < cfg.cls.max_epochs; ++epoch) {
            Rng order_rng = derive_rng(cfg.seed, "s1-cls-order",
                                       static_cast<std::uint64_t>(round) * 100000 + epoch);
            auto batches = make_batches(m, cfg.batch_size, order_rng);
            double loss_sum = 0.0;
            int correct_a = 0, correct_v = 0, seen = 0;
            for (const auto& local : batches) {
                std::vector<int> idxs, targets;
                for (const int li : local) {
                    idxs.push_back(clustered_idx[li]);
                    targets.push_back(*pseudo[clustered_idx[li]]);
                }
                const BatchTensors t = gather(ds, idxs);
                adam_cls.zero_grad();

                const nn::Tensor aemb = model.audio_forward(t.specs);
                const nn::Tensor a_logits = model.audio_cls.forward(aemb);
                const nn::Tensor fmap = model.visual_forward(t.frames);
                const nn::Tensor vgap = model.visual_gap.forward(fmap);
                const nn::Tensor v_logits = model.visual_cls.forward(vgap);

                const int bs = static_cast<int>(idxs.size());
                std::vector<std::vector<double>> la(bs), lv(bs);
                for (int i = 0; i < bs; ++i) {
                    la[i].assign(a_logits.sample(i), a_logits.sample(i) + model.num_classes);
                    lv[i].assign(v_logits.sample(i), v_logits.sample(i) + model.num_classes);
                    const auto amax = std::max_element(la[i].begin(), la[i].end()) - la[i].begin();
                    const auto vmax = std::max_element(lv[i].begin(), lv[i].end()) - lv[i].begin();
                    correct_a += amax == targets[i];
                    correct_v += vmax == targets[i];
                }
                seen += bs;
                std::vector<std::vector<double>> dla, dlv;
                const double ce_a = nn::softmax_cross_entropy(la, targets, &dla);
                const double ce_v = nn::softmax_cross_entropy(lv, targets, &dlv);
                loss_sum += 0.5 * (ce_a + ce_v);

                nn::Tensor da(bs, model.num_classes, 1, 1), dv(bs, model.num_classes, 1, 1);
                for (int i = 0; i < bs; ++i)
                    for (int k = 0; k < model.num_classes; ++k) {
                        da.at(i, k, 0, 0) = dla[i][k];
                        dv.at(i, k, 0, 0) = dlv[i][k];
                    }
                model.audio_backward(model.audio_cls.backward(da));
                model.visual_backward(model.visual_gap.backward(model.visual_cls.backward(dv)));
                adam_cls.step();
            }
            const double acc = seen > 0 ? 0.5 * (correct_a + correct_v) / seen : 0.0;
            log(Json{{"phase", "cls"},
                     {"round", round},
                     {"epoch", epoch},
                     {"loss", loss_sum / std::max<std::size_t>(1, batches.size())},
                     {"acc", acc}});
            if (acc > best_acc + cfg.cls.min_delta) {
                best_acc = acc;
                stall = 0;
            } else if (++stall >= cfg.cls.patience) {
                break;
            }
        }
        model.cls_trained = true;
        notify("cls_end", round);
    };

    if (cfg.alt_rounds == 0) {
        // Ablation arm: the backbones see only the matching objective. The
        // classifier heads still fit once at the end (frozen backbones) so
        // the stage-2 audio distribution remains available.
        run_loc_epochs(0, cfg.loc_epochs);
        run_extraction(0);
        run_kmeans(0);
        run_cls_phase(0, /*train_backbones=*/false);
    } else {
        for (int round = 0; round < cfg.alt_rounds; ++round) {
            run_loc_epochs(round, cfg.loc_epochs);
            run_extraction(round);
            run_kmeans(round);
            run_cls_phase(round, /*train_backbones=*/true);
        }
        // Classification just moved the features the keys were built from.
        // One more centroid update with assignments held fixed keeps the
        // dictionary aligned with the final features without reshuffling the
        // key order the classifiers were trained against.
        run_extraction(cfg.alt_rounds);
        std::map<std::string, int> pseudo_by_id;
        for (const int i : clustered_idx) pseudo_by_id[ds.samples[i].id] = *pseudo[i];
        std::vector<std::vector<double>> sums(cfg.num_keys, std::vector<double>(dict.dim, 0.0));
        std::vector<int> counts(cfg.num_keys, 0);
        for (const auto& repr : reprs) {
            const auto it = pseudo_by_id.find(repr.source_pair_id);
            if (it == pseudo_by_id.end()) continue;
            for (int c = 0; c < dict.dim; ++c) sums[it->second][c] += repr.values[c];
            counts[it->second]++;
        }
        for (int k = 0; k < cfg.num_keys; ++k) {
            if (counts[k] == 0) continue; // keep the stale key rather than a hole
            for (int c = 0; c < dict.dim; ++c)
                dict.keys[static_cast<std::size_t>(k) * dict.dim + c] = sums[k][c] / counts[k];
        }
    }

    // Evaluation-only extras: NMI against generator labels and the semantic
    // alignment, when ground truth is present.
    std::vector<int> truth, assigned;
    for (const int i : clustered_idx) {
        if (!ds.samples[i].class_id) continue;
        truth.push_back(*ds.samples[i].class_id);
        assigned.push_back(*pseudo[i]);
    }
    if (!truth.empty() && truth.size() == clustered_idx.size()) {
        result.nmi = metrics::nmi(assigned, truth);
        try {
            dict.alignment = align_semantics(assigned, truth, cfg.num_keys, ds.num_classes);
        } catch (const DomainError&) {
            // labeled sample does not cover every class; leave unaligned
        }
        log(Json{{"phase", "summary"},
                 {"nmi", *result.nmi},
                 {"kmeans_objective", dict.objective},
                 {"empty_mask_skipped", result.empty_mask_skipped}});
    } else {
        log(Json{{"phase", "summary"},
                 {"kmeans_objective", dict.objective},
                 {"empty_mask_skipped", result.empty_mask_skipped}});
    }

    result.dictionary = std::move(dict);
    return result;
}

} // namespace avloc::stage1
