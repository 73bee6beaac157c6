// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Criteria 1-4 exercise the library in-process; criteria
// 5-7 drive the installed CLI end to end on the toy world.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "avloc/cli.hpp"
#include "avloc/metrics.hpp"
#include "avloc/stage1.hpp"
#include "avloc/stage2.hpp"

namespace fs = std::filesystem;
using namespace avloc;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

struct Criterion {
    std::string detail;
    bool ok = true;

    void require(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
};

void report(int index, const std::string& name, const Criterion& c, double seconds, double limit_s = 0.0) {
    bool ok = c.ok;
    std::string detail = c.detail;
    if (limit_s > 0.0 && seconds > limit_s) {
        ok = false;
        detail += (detail.empty() ? "" : "; ") + std::string("over time limit");
    }
    std::printf("[%s] criterion %d: %s (%.1f s)%s%s\n", ok ? "PASS" : "FAIL", index, name.c_str(), seconds,
                detail.empty() ? "" : " — ", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

double now_seconds(const Clock::time_point& t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// shared helpers
// ---------------------------------------------------------------------------

GridStack random_stack(int k, int h, int w, Rng& rng, double lo = 0.0, double hi = 1.0) {
    GridStack s(k, h, w);
    for (auto& v : s.v) v = rng.uniform(lo, hi);
    return s;
}

Grid random_grid(int h, int w, Rng& rng, double lo = 0.0, double hi = 1.0) {
    Grid g(h, w);
    for (auto& v : g.v) v = rng.uniform(lo, hi);
    return g;
}

double oracle_bilinear_at(const Grid& src, int oh, int ow, int y, int x) {
    const double sy = static_cast<double>(src.h) / oh;
    const double sx = static_cast<double>(src.w) / ow;
    double fy = std::min(std::max((y + 0.5) * sy - 0.5, 0.0), static_cast<double>(src.h - 1));
    double fx = std::min(std::max((x + 0.5) * sx - 0.5, 0.0), static_cast<double>(src.w - 1));
    const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
    const int y1 = std::min(y0 + 1, src.h - 1), x1 = std::min(x0 + 1, src.w - 1);
    const double wy = fy - y0, wx = fx - x0;
    return src.at(y0, x0) * (1 - wy) * (1 - wx) + src.at(y0, x1) * (1 - wy) * wx +
           src.at(y1, x0) * wy * (1 - wx) + src.at(y1, x1) * wy * wx;
}

double oracle_iou(const Grid& map, const std::vector<Box>& boxes, int fh, int fw, double frac) {
    double mx = -1e300;
    for (int y = 0; y < fh; ++y)
        for (int x = 0; x < fw; ++x) mx = std::max(mx, oracle_bilinear_at(map, fh, fw, y, x));
    const double tau = frac * mx;
    long inter = 0, uni = 0;
    for (int y = 0; y < fh; ++y)
        for (int x = 0; x < fw; ++x) {
            bool gt = false;
            for (const auto& b : boxes)
                gt |= x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h;
            const bool pred = oracle_bilinear_at(map, fh, fw, y, x) >= tau;
            inter += pred && gt;
            uni += pred || gt;
        }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

SceneAnnotation random_annotation(Rng& rng, int k, int fh, int fw) {
    SceneAnnotation ann;
    ann.frame_h = fh;
    ann.frame_w = fw;
    while (true) {
        ann.boxes.clear();
        for (int c = 0; c < k; ++c) {
            Box b;
            b.class_id = c;
            b.w = rng.uniform_int(2, fw / 2);
            b.h = rng.uniform_int(2, fh / 2);
            b.x = rng.uniform_int(0, fw - b.w);
            b.y = rng.uniform_int(0, fh - b.h);
            b.sounding = rng.uniform() < 0.5;
            ann.boxes.push_back(b);
        }
        const int sounding = ann.num_sounding();
        if (sounding >= 1 && sounding < k) return ann;
    }
}

// ---------------------------------------------------------------------------
// criterion 1: metric oracles
// ---------------------------------------------------------------------------
Criterion criterion_metric_oracles() {
    Criterion c;
    Rng rng(1001);
    metrics::MetricConfig cfg;
    double worst = 0.0;
    for (int inst = 0; inst < 120; ++inst) {
        const int k = rng.uniform_int(2, 4);
        const int mh = rng.uniform_int(3, 7), mw = rng.uniform_int(3, 7);
        const int fh = rng.uniform_int(12, 22), fw = rng.uniform_int(12, 22);
        const SceneAnnotation ann = random_annotation(rng, k, fh, fw);
        const GridStack s = random_stack(k, mh, mw, rng);

        // CIoU
        double want_ciou = 0.0;
        {
            int n = 0;
            std::set<int> done;
            for (const auto& b : ann.boxes) {
                if (!b.sounding || done.count(b.class_id)) continue;
                done.insert(b.class_id);
                std::vector<Box> cls;
                for (const auto& bb : ann.boxes)
                    if (bb.sounding && bb.class_id == b.class_id) cls.push_back(bb);
                want_ciou += oracle_iou(s.slice(b.class_id), cls, fh, fw, cfg.tau_fraction);
                ++n;
            }
            want_ciou /= n;
        }
        worst = std::max(worst, std::abs(metrics::ciou(s, ann, cfg) - want_ciou));

        // NSA
        double want_nsa = 0.0;
        {
            double mx = -1e300;
            for (const double v : s.v) mx = std::max(mx, v);
            const double tau = cfg.tau_fraction * mx;
            std::set<int> silent;
            for (const auto& b : ann.boxes)
                if (!b.sounding) silent.insert(b.class_id);
            for (const int cid : silent) {
                long below = 0;
                for (int y = 0; y < s.h; ++y)
                    for (int x = 0; x < s.w; ++x) below += s.at(cid, y, x) < tau;
                want_nsa += static_cast<double>(below) / (s.h * s.w);
            }
            want_nsa /= silent.size();
        }
        worst = std::max(worst, std::abs(metrics::nsa(s, ann, cfg) - want_nsa));

        // IoU on the category-agnostic map
        std::vector<Box> sounding;
        for (const auto& b : ann.boxes)
            if (b.sounding) sounding.push_back(b);
        const Grid l = random_grid(mh, mw, rng);
        worst = std::max(worst, std::abs(metrics::iou(l, sounding, fh, fw, cfg) -
                                         oracle_iou(l, sounding, fh, fw, cfg.tau_fraction)));
    }

    // AUC vs an explicit trapezoid
    std::vector<double> values;
    for (int i = 0; i < 64; ++i) values.push_back(rng.uniform());
    {
        const std::vector<double> ts = cfg.auc_sweep();
        double area = 0.0;
        for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
            double f0 = 0, f1 = 0;
            for (const double v : values) {
                f0 += v >= ts[i];
                f1 += v >= ts[i + 1];
            }
            area += (ts[i + 1] - ts[i]) * 0.5 * (f0 + f1) / values.size();
        }
        worst = std::max(worst, std::abs(metrics::auc(values, cfg) - area / (ts.back() - ts.front())));
    }

    char buf[64];
    std::snprintf(buf, sizeof(buf), "max |delta| = %.2e", worst);
    c.detail = buf;
    c.require(worst <= 1e-9, "oracle disagreement above 1e-9");
    return c;
}

// ---------------------------------------------------------------------------
// criterion 2: formula unit suite
// ---------------------------------------------------------------------------
Criterion criterion_formulas() {
    Criterion c;
    Rng rng(2002);

    // masked-average extraction vs brute force
    for (int trial = 0; trial < 30; ++trial) {
        nn::Tensor f(1, 6, 5, 7);
        for (auto& v : f.v) v = rng.normal(0.0, 1.0);
        const Grid l = random_grid(5, 7, rng);
        const auto res = stage1::extract_object_repr(f, l, 0.4);
        int count = 0;
        std::vector<double> want(6, 0.0);
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 7; ++x) {
                if (l.at(y, x) < 0.4) continue;
                ++count;
                for (int ch = 0; ch < 6; ++ch) want[ch] += f.at(0, ch, y, x);
            }
        if (count == 0) {
            c.require(!res.repr.has_value(), "empty mask should yield no representation");
            continue;
        }
        for (int ch = 0; ch < 6; ++ch)
            c.require(std::abs(res.repr->values[ch] - want[ch] / count) <= 1e-9, "masked average mismatch");
    }

    // class-map dot products vs triple loop
    for (int trial = 0; trial < 20; ++trial) {
        nn::Tensor f(1, 5, 4, 6);
        for (auto& v : f.v) v = rng.normal(0.0, 1.0);
        stage1::ObjectDictionary dict;
        dict.num_keys = 3;
        dict.dim = 5;
        dict.keys.resize(15);
        for (auto& v : dict.keys) v = rng.normal(0.0, 1.0);
        const GridStack m = stage2::class_maps(f, dict);
        for (int k = 0; k < 3; ++k)
            for (int y = 0; y < 4; ++y)
                for (int x = 0; x < 6; ++x) {
                    double acc = 0.0;
                    for (int ch = 0; ch < 5; ++ch) acc += dict.key(k)[ch] * f.at(0, ch, y, x);
                    c.require(std::abs(m.at(k, y, x) - acc) <= 1e-9, "class-map dot product mismatch");
                }
    }

    // sounding filter: annihilation, identity, monotonicity
    {
        const GridStack m = random_stack(3, 4, 4, rng);
        const GridStack zero = stage2::sounding_filter(m, Grid(4, 4, 0.0));
        for (const double v : zero.v) c.require(v == 0.0, "zero filter must annihilate");
        const GridStack same = stage2::sounding_filter(m, Grid(4, 4, 1.0));
        c.require(same.v == m.v, "unit filter must be identity");
        Grid l = random_grid(4, 4, rng, 0.2, 1.0);
        const GridStack before = stage2::sounding_filter(m, l);
        l.at(1, 1) -= 0.1;
        const GridStack after = stage2::sounding_filter(m, l);
        for (std::size_t i = 0; i < before.v.size(); ++i)
            c.require(after.v[i] <= before.v[i] + 1e-12, "filter monotonicity violated");
    }

    // distribution: normalization + shift invariance
    {
        GridStack s = random_stack(4, 5, 5, rng);
        const auto base = stage2::sounding_distribution(s).probs;
        double sum = 0.0;
        for (const double p : base) sum += p;
        c.require(std::abs(sum - 1.0) <= 1e-6, "distribution does not normalize");
        for (auto& v : s.v) v += 2.5;
        const auto shifted = stage2::sounding_distribution(s).probs;
        for (std::size_t k = 0; k < base.size(); ++k)
            c.require(std::abs(shifted[k] - base[k]) <= 1e-9, "distribution not shift-invariant");
    }

    // KL: identity at zero, non-negative
    for (int trial = 0; trial < 30; ++trial) {
        stage2::CategoryDistribution a, b;
        double sa = 0, sb = 0;
        for (int k = 0; k < 4; ++k) {
            a.probs.push_back(rng.uniform(0.01, 1.0));
            b.probs.push_back(rng.uniform(0.01, 1.0));
            sa += a.probs.back();
            sb += b.probs.back();
        }
        for (int k = 0; k < 4; ++k) {
            a.probs[k] /= sa;
            b.probs[k] /= sb;
        }
        c.require(std::abs(stage2::kl_divergence(a, a)) <= 1e-12, "KL(p||p) must be 0");
        c.require(stage2::kl_divergence(a, b) >= -1e-12, "KL must be non-negative");
    }
    return c;
}

// ---------------------------------------------------------------------------
// criterion 3: gradient checks (Eq.1 and the combined objective)
// ---------------------------------------------------------------------------
Criterion criterion_gradients() {
    Criterion c;
    const data::ToyWorldSpec spec = data::ToyWorldSpec::make(4, 0.02, 777);

    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        data::Dataset solos;
        solos.num_classes = 4;
        for (int i = 0; i < 2; ++i) {
            const data::SoloSample s = data::make_solo(spec, static_cast<int>(seed + i) % 4, 900 + seed * 10 + i);
            data::LoadedSample ls;
            ls.id = "g" + std::to_string(i);
            ls.spec = dsp::log_mel(s.pair.audio);
            ls.frame = s.pair.frame.pixels;
            solos.samples.push_back(std::move(ls));
        }
        const nn::Tensor specs =
            models::specs_to_tensor({&solos.samples[0].spec, &solos.samples[1].spec});
        const nn::Tensor frames =
            models::frames_to_tensor({&solos.samples[0].frame, &solos.samples[1].frame});
        stage1::PairBatch pb;
        pb.pairs = {{0, 0}, {1, 1}, {0, 1}, {1, 0}};
        pb.labels = {1.0, 1.0, 0.0, 0.0};

        auto check = [&](const std::function<double(bool)>& loss_fn, std::vector<nn::Param*> params,
                         std::uint64_t pick_seed) {
            for (nn::Param* p : params) p->zero_grad();
            loss_fn(true);
            std::vector<nn::Param*> trainable;
            for (nn::Param* p : params)
                if (p->trainable) trainable.push_back(p);
            Rng pick(pick_seed);
            // eps sized for the sharp curvature in batch-norm scales;
            // differences at the 1e-7 central-difference noise floor carry
            // no signal either way
            const double eps = 1e-7;
            for (int s = 0; s < 14; ++s) {
                nn::Param* p = trainable[s % trainable.size()];
                const std::size_t idx = pick.next() % p->count();
                const double saved = p->value[idx];
                const double analytic = p->grad[idx];
                p->value[idx] = saved + eps;
                const double lp = loss_fn(false);
                p->value[idx] = saved - eps;
                const double lm = loss_fn(false);
                p->value[idx] = saved;
                const double fd = (lp - lm) / (2 * eps);
                if (std::abs(analytic - fd) <= 1e-7) continue;
                worst = std::max(worst,
                                 std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-8}));
            }
        };

        // Eq.1 matching loss
        {
            models::AVModel model(models::Profile::toy, 4, 100 + seed);
            model.set_training(true);
            model.set_bn_tracking(false);
            auto loss_fn = [&](bool acc) {
                return stage1::matching_forward_backward(model, specs, frames, pb, acc);
            };
            check(loss_fn, model.localization_params(), seed * 3 + 1);
        }
        // combined stage-2 objective
        {
            models::AVModel model(models::Profile::toy, 4, 200 + seed);
            model.cls_trained = true;
            model.set_training(true);
            model.set_bn_tracking(false);
            models::AVModel frozen = model;
            frozen.set_training(false);
            Rng drng(300 + seed);
            stage1::ObjectDictionary dict;
            dict.num_keys = 4;
            dict.dim = 64;
            dict.keys.resize(256);
            for (auto& v : dict.keys) v = drng.uniform(0.0, 1.0);
            stage2::Stage2Config cfg;
            auto loss_fn = [&](bool acc) {
                return stage2::stage2_forward_backward(model, frozen, dict, specs, frames, pb, cfg, acc)
                    .total;
            };
            check(loss_fn, model.localization_params(), seed * 3 + 2);
        }
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "max rel err = %.2e over 5 seeds", worst);
    c.detail = buf;
    c.require(worst < 1e-4, "gradient mismatch above 1e-4");
    return c;
}

// ---------------------------------------------------------------------------
// criterion 4: K-means contract
// ---------------------------------------------------------------------------
Criterion criterion_kmeans() {
    Criterion c;
    Rng rng(4004);

    // two-blob recovery within 0.05 sigma
    const double sigma = 1.0;
    const std::vector<std::vector<double>> means = {{0.0, 0.0}, {12.0, -4.0}};
    std::vector<std::vector<double>> pts;
    for (int i = 0; i < 4000; ++i) {
        const auto& mu = means[i % 2];
        pts.push_back({mu[0] + rng.normal(0.0, sigma), mu[1] + rng.normal(0.0, sigma)});
    }
    const stage1::KMeansResult blob = stage1::kmeans(pts, 2, 17, 10);
    for (const auto& mu : means) {
        double best = 1e300;
        for (const auto& cc : blob.centroids) best = std::min(best, std::hypot(cc[0] - mu[0], cc[1] - mu[1]));
        c.require(best < 0.05 * sigma, "blob centroid off by more than 0.05 sigma");
    }

    // objective non-increasing on every restart of several runs
    for (int rep = 0; rep < 5; ++rep) {
        std::vector<std::vector<double>> cloud;
        for (int i = 0; i < 80; ++i) cloud.push_back({rng.normal(0, 2), rng.normal(0, 2), rng.normal(0, 2)});
        const stage1::KMeansResult km = stage1::kmeans(cloud, 6, 100 + rep, 10);
        for (const auto& trace : km.objective_traces)
            for (std::size_t i = 1; i < trace.size(); ++i)
                c.require(trace[i] <= trace[i - 1] + 1e-9, "objective increased within a run");
    }

    // K == N reaches zero objective
    std::vector<std::vector<double>> tiny;
    for (int i = 0; i < 10; ++i) tiny.push_back({rng.uniform(-3, 3), rng.uniform(-3, 3)});
    const stage1::KMeansResult exact = stage1::kmeans(tiny, 10, 5, 10);
    c.require(std::abs(exact.objective) <= 1e-12, "K == N should reach zero objective");
    return c;
}

// ---------------------------------------------------------------------------
// criteria 5-7: toy pipeline through the CLI
// ---------------------------------------------------------------------------

int run_cli(const std::string& args, const std::string& log_path) {
    const std::string cmd = std::string(AVLOC_CLI_PATH) + " " + args + " >> " + log_path + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (status == -1) return -1;
    return WIFEXITED(status) ? WEXITSTATUS(status) : -2;
}

std::string toy_config() { return std::string(AVLOC_CONFIG_DIR) + "/toy.json"; }

bool run_pipeline(const std::string& out_dir, const std::string& log_path, std::string extra_stage1 = "",
                  std::string extra_stage2 = "", bool with_eval = true) {
    const std::string common = "--config " + toy_config() + " --output-dir " + out_dir;
    if (run_cli("gen-data " + common, log_path) != 0) return false;
    if (run_cli("train-stage1 " + common + " " + extra_stage1, log_path) != 0) return false;
    if (run_cli("train-stage2 " + common + " " + extra_stage2, log_path) != 0) return false;
    if (with_eval && run_cli("eval " + common + " " + extra_stage2, log_path) != 0) return false;
    return true;
}

double report_value(const std::string& report_path, const std::string& key, const std::string& subkey = "") {
    const Json j = read_json_file(report_path);
    const Json& agg = j.at("aggregate");
    if (subkey.empty()) return agg.at(key).get<double>();
    return agg.at(key).at(subkey).get<double>();
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

struct PipelineScores {
    bool ok = false;
    double nmi = 0.0, ciou03 = 0.0, nsa = 0.0;
};

PipelineScores read_scores(const std::string& out_dir) {
    PipelineScores s;
    const Json summary = read_json_file(out_dir + "/stage1/summary.json");
    if (summary.contains("nmi")) s.nmi = summary.at("nmi").get<double>();
    s.ciou03 = report_value(out_dir + "/eval/report.json", "ciou_at", "0.30");
    s.nsa = report_value(out_dir + "/eval/report.json", "nsa_mean");
    s.ok = true;
    return s;
}

} // namespace

int main() {
    std::printf("avloc acceptance suite\n");
    const std::string work = fs::absolute("acceptance_work").string();
    fs::remove_all(work);
    fs::create_directories(work);
    const std::string cli_log = work + "/cli.log";

    // 1. metric oracles
    {
        const auto t0 = Clock::now();
        const Criterion c = criterion_metric_oracles();
        report(1, "IoU/AUC/CIoU/NSA match brute-force oracles (<= 1e-9, 100+ instances)", c,
               now_seconds(t0), 30.0);
    }
    // 2. formula unit suite
    {
        const auto t0 = Clock::now();
        const Criterion c = criterion_formulas();
        report(2, "masked average, class maps, filter, distribution, KL exactness", c, now_seconds(t0),
               30.0);
    }
    // 3. gradient checks
    {
        const auto t0 = Clock::now();
        const Criterion c = criterion_gradients();
        report(3, "matching + combined loss vs central finite differences (5 seeds)", c, now_seconds(t0),
               300.0);
    }
    // 4. K-means contract
    {
        const auto t0 = Clock::now();
        const Criterion c = criterion_kmeans();
        report(4, "K-means monotonic objective, blob recovery, K==N", c, now_seconds(t0), 60.0);
    }

    // 5. toy end-to-end
    const std::string base = work + "/baseline";
    PipelineScores base_scores;
    {
        const auto t0 = Clock::now();
        Criterion c;
        if (!run_pipeline(base, cli_log)) {
            c.require(false, "pipeline command failed (see " + cli_log + ")");
        } else {
            base_scores = read_scores(base);
            char buf[128];
            std::snprintf(buf, sizeof(buf), "NMI %.3f, CIoU@0.3 %.3f, NSA %.3f", base_scores.nmi,
                          base_scores.ciou03, base_scores.nsa);
            c.detail = buf;
            c.require(base_scores.nmi >= 0.8, "NMI below 0.8");
            c.require(base_scores.ciou03 >= 0.7, "CIoU@0.3 below 0.7");
            c.require(base_scores.nsa >= 0.9, "NSA below 0.9");
        }
        report(5, "toy pipeline: gen-data -> stage1 -> stage2 -> eval", c, now_seconds(t0), 2700.0);
    }

    // 6. ablation directions
    {
        const auto t0 = Clock::now();
        Criterion c;
        if (!base_scores.ok) {
            c.require(false, "baseline unavailable");
        } else {
            // (a) no product filter: reuse the baseline stage-1 artifacts
            const std::string noprod = work + "/noprod";
            fs::create_directories(noprod);
            fs::copy(base + "/data", noprod + "/data", fs::copy_options::recursive);
            fs::copy(base + "/stage1", noprod + "/stage1", fs::copy_options::recursive);
            const std::string common = "--config " + toy_config() + " --output-dir " + noprod +
                                       " --override stage2.enable_product_filter=false";
            bool ok = run_cli("train-stage2 " + common, cli_log) == 0 &&
                      run_cli("eval " + common, cli_log) == 0;
            double noprod_ciou = 0.0;
            if (ok) noprod_ciou = report_value(noprod + "/eval/report.json", "ciou_at", "0.30");
            c.require(ok, "no-prod arm failed to run");

            // (b) no alternating optimization, same localization budget
            const cfg::RunConfig toy = cfg::RunConfig::resolve(toy_config(), {}, std::nullopt, std::nullopt);
            const int total_loc =
                toy.stage1_config().alt_rounds * toy.stage1_config().loc_epochs;
            const std::string noalt = work + "/noalt";
            fs::create_directories(noalt);
            fs::copy(base + "/data", noalt + "/data", fs::copy_options::recursive);
            const std::string s1args = "--override stage1.alt_rounds=0 --override stage1.loc_epochs=" +
                                       std::to_string(total_loc);
            const std::string common_b = "--config " + toy_config() + " --output-dir " + noalt;
            bool ok_b = run_cli("train-stage1 " + common_b + " " + s1args, cli_log) == 0 &&
                        run_cli("train-stage2 " + common_b, cli_log) == 0 &&
                        run_cli("eval " + common_b, cli_log) == 0;
            double noalt_ciou = 0.0;
            if (ok_b) noalt_ciou = report_value(noalt + "/eval/report.json", "ciou_at", "0.30");
            c.require(ok_b, "no-alternation arm failed to run");

            char buf[160];
            std::snprintf(buf, sizeof(buf), "baseline %.3f, w/o Prod %.3f, w/o alternation %.3f",
                          base_scores.ciou03, noprod_ciou, noalt_ciou);
            c.detail = buf;
            if (ok) c.require(noprod_ciou <= 0.5 * base_scores.ciou03, "no-prod drop under 50% relative");
            if (ok_b) c.require(noalt_ciou < base_scores.ciou03, "no-alternation arm did not drop");
        }
        report(6, "ablation directions: w/o Prod >= 50% CIoU drop; w/o alternation drops", c,
               now_seconds(t0));
    }

    // 7. determinism
    {
        const auto t0 = Clock::now();
        Criterion c;
        if (!base_scores.ok) {
            c.require(false, "baseline unavailable");
        } else {
            const std::string repeat = work + "/repeat";
            if (!run_pipeline(repeat, cli_log, "", "", /*with_eval=*/false)) {
                c.require(false, "repeat pipeline failed");
            } else {
                for (const char* name :
                     {"manifest_stage1.json", "manifest_stage2.json", "manifest_test.json"}) {
                    const std::string a = slurp(base + "/data/" + std::string(name));
                    const std::string b = slurp(repeat + "/data/" + std::string(name));
                    c.require(!a.empty() && a == b, std::string(name) + " not bit-identical");
                }
                for (const char* log_name : {"stage1/log.jsonl", "stage2/log.jsonl"}) {
                    const auto la = read_jsonl(base + "/" + log_name);
                    const auto lb = read_jsonl(repeat + "/" + log_name);
                    c.require(la.size() == lb.size(), std::string(log_name) + " lengths differ");
                    double worst = 0.0;
                    for (std::size_t i = 0; i < std::min(la.size(), lb.size()); ++i)
                        for (const char* key : {"loss", "acc", "kmeans_objective", "lc", "l1", "nmi"}) {
                            if (!la[i].contains(key) || !lb[i].contains(key)) continue;
                            worst = std::max(worst, std::abs(la[i].at(key).get<double>() -
                                                             lb[i].at(key).get<double>()));
                        }
                    c.require(worst <= 1e-6, std::string(log_name) + " trajectories differ beyond 1e-6");
                }
            }
        }
        report(7, "repeat run: bit-identical manifests, loss trajectories within 1e-6", c, now_seconds(t0));
    }

    std::printf("%d criterion(s) failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
