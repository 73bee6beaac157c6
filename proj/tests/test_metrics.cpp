#include <doctest.h>

#include <cmath>
#include <set>

#include "avloc/metrics.hpp"
#include "testutil.hpp"

using namespace avloc;

namespace {

// ---------------------------------------------------------------------------
// Independent brute-force oracles: per-pixel point-in-box tests and explicit
// loops, no shared code with the implementations they check.
// ---------------------------------------------------------------------------

double oracle_bilinear_at(const Grid& src, int oh, int ow, int y, int x) {
    const double sy = static_cast<double>(src.h) / oh;
    const double sx = static_cast<double>(src.w) / ow;
    double fy = (y + 0.5) * sy - 0.5;
    double fx = (x + 0.5) * sx - 0.5;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(src.h - 1));
    fx = std::min(std::max(fx, 0.0), static_cast<double>(src.w - 1));
    const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
    const int y1 = std::min(y0 + 1, src.h - 1), x1 = std::min(x0 + 1, src.w - 1);
    const double wy = fy - y0, wx = fx - x0;
    return src.at(y0, x0) * (1 - wy) * (1 - wx) + src.at(y0, x1) * (1 - wy) * wx +
           src.at(y1, x0) * wy * (1 - wx) + src.at(y1, x1) * wy * wx;
}

bool oracle_in_any_box(const std::vector<Box>& boxes, int y, int x) {
    for (const auto& b : boxes)
        if (x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h) return true;
    return false;
}

double oracle_iou(const Grid& map, const std::vector<Box>& boxes, int fh, int fw, double frac) {
    double mx = -1e300;
    for (int y = 0; y < fh; ++y)
        for (int x = 0; x < fw; ++x) mx = std::max(mx, oracle_bilinear_at(map, fh, fw, y, x));
    const double tau = frac * mx;
    long inter = 0, uni = 0;
    for (int y = 0; y < fh; ++y)
        for (int x = 0; x < fw; ++x) {
            const bool pred = oracle_bilinear_at(map, fh, fw, y, x) >= tau;
            const bool gt = oracle_in_any_box(boxes, y, x);
            inter += pred && gt;
            uni += pred || gt;
        }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

double oracle_auc(const std::vector<double>& values, double step) {
    std::vector<double> ts;
    for (double t = step; t < 1.0 - 1e-9; t += step) ts.push_back(t);
    double area = 0.0;
    for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
        double f0 = 0, f1 = 0;
        for (const double v : values) {
            f0 += v >= ts[i];
            f1 += v >= ts[i + 1];
        }
        f0 /= values.size();
        f1 /= values.size();
        area += (ts[i + 1] - ts[i]) * 0.5 * (f0 + f1);
    }
    return area / (ts.back() - ts.front());
}

double oracle_ciou(const GridStack& s, const SceneAnnotation& ann, double frac) {
    double acc = 0.0;
    int n = 0;
    std::set<int> done;
    for (const auto& b : ann.boxes) {
        if (!b.sounding || done.count(b.class_id)) continue;
        done.insert(b.class_id);
        std::vector<Box> class_boxes;
        for (const auto& bb : ann.boxes)
            if (bb.sounding && bb.class_id == b.class_id) class_boxes.push_back(bb);
        acc += oracle_iou(s.slice(b.class_id), class_boxes, ann.frame_h, ann.frame_w, frac);
        ++n;
    }
    return acc / n;
}

double oracle_nsa(const GridStack& s, const SceneAnnotation& ann, double frac) {
    double mx = -1e300;
    for (const double v : s.v) mx = std::max(mx, v);
    if (mx <= 0.0) return 1.0;
    const double tau = frac * mx;
    std::set<int> silent;
    for (const auto& b : ann.boxes)
        if (!b.sounding) silent.insert(b.class_id);
    double acc = 0.0;
    for (const int c : silent) {
        long below = 0;
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x) below += s.at(c, y, x) < tau;
        acc += static_cast<double>(below) / (s.h * s.w);
    }
    return acc / silent.size();
}

SceneAnnotation random_annotation(Rng& rng, int k, int fh, int fw, int min_sounding, int min_silent) {
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
        if (ann.num_sounding() >= min_sounding &&
            static_cast<int>(ann.boxes.size()) - ann.num_sounding() >= min_silent)
            return ann;
    }
}

} // namespace

TEST_SUITE("metrics") {

TEST_CASE("iou: exact cover is 1, disjoint is 0, left-vs-top quarter case is 1/3") {
    metrics::MetricConfig cfg;
    Grid exact(8, 8, 0.0);
    for (int y = 2; y < 6; ++y)
        for (int x = 2; x < 6; ++x) exact.at(y, x) = 1.0;
    CHECK(metrics::iou(exact, {Box{0, 2, 2, 4, 4, true}}, 8, 8, cfg) == doctest::Approx(1.0));

    CHECK(metrics::iou(exact, {Box{0, 6, 6, 2, 2, true}}, 8, 8, cfg) == doctest::Approx(0.0));

    // 4x4 grid: mask = left half, box = top half -> 4 / 12
    Grid half(4, 4, 0.0);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 2; ++x) half.at(y, x) = 1.0;
    CHECK(metrics::iou(half, {Box{0, 0, 0, 4, 2, true}}, 4, 4, cfg) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    CHECK_THROWS_AS(metrics::iou(half, {}, 4, 4, cfg), DomainError);
}

TEST_CASE("binary IoU is symmetric") {
    Rng rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        Grid a(6, 6), b(6, 6);
        for (auto& v : a.v) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
        for (auto& v : b.v) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
        CHECK(metrics::binary_iou(a, b) == metrics::binary_iou(b, a));
    }
}

TEST_CASE("auc: degenerate cases and the two-scene step curve") {
    metrics::MetricConfig cfg;
    CHECK(metrics::auc({1.0, 1.0, 1.0}, cfg) == doctest::Approx(1.0));
    CHECK(metrics::auc({0.0, 0.0}, cfg) == doctest::Approx(0.0));
    CHECK(metrics::auc({1.0, 0.0}, cfg) == doctest::Approx(0.5));
}

TEST_CASE("ciou: forced arithmetic on hand-built masks") {
    metrics::MetricConfig cfg;
    const int fh = 20, fw = 20;
    SceneAnnotation ann;
    ann.frame_h = fh;
    ann.frame_w = fw;
    ann.boxes = {Box{0, 0, 0, 10, 10, true}, Box{1, 0, 0, 10, 10, true}, Box{2, 10, 10, 5, 5, false}};

    GridStack s(3, fh, fw);
    for (int y = 0; y < 6; ++y) // class 0: 60 of 100 box pixels -> IoU 0.6
        for (int x = 0; x < 10; ++x) s.at(0, y, x) = 1.0;
    for (int y = 0; y < 4; ++y) // class 1: IoU 0.4
        for (int x = 0; x < 10; ++x) s.at(1, y, x) = 1.0;
    for (int y = 0; y < fh; ++y) // silent class 2: arbitrary junk must not matter
        for (int x = 0; x < fw; ++x) s.at(2, y, x) = 0.123;

    CHECK(metrics::ciou(s, ann, cfg) == doctest::Approx(0.5).epsilon(1e-12));

    SceneAnnotation solo = ann;
    solo.boxes[1].sounding = false;
    CHECK(metrics::ciou(s, solo, cfg) == doctest::Approx(0.6).epsilon(1e-12));

    SceneAnnotation none = ann;
    for (auto& b : none.boxes) b.sounding = false;
    CHECK_THROWS_AS(metrics::ciou(s, none, cfg), DomainError);
}

TEST_CASE("ciou ignores silent-class maps entirely") {
    Rng rng(42);
    metrics::MetricConfig cfg;
    const SceneAnnotation ann = random_annotation(rng, 4, 16, 16, 1, 1);
    GridStack s = testutil::random_stack(4, 8, 8, rng);
    const double base = metrics::ciou(s, ann, cfg);
    for (const auto& b : ann.boxes)
        if (!b.sounding)
            for (int y = 0; y < s.h; ++y)
                for (int x = 0; x < s.w; ++x) s.at(b.class_id, y, x) = rng.uniform(0.0, 5.0);
    CHECK(metrics::ciou(s, ann, cfg) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("nsa: suppressed silence scores 1, saturated silence scores 0, half is half") {
    metrics::MetricConfig cfg;
    SceneAnnotation ann;
    ann.frame_h = ann.frame_w = 16;
    ann.boxes = {Box{0, 0, 0, 4, 4, true}, Box{1, 4, 4, 4, 4, false}};

    GridStack s(2, 4, 4);
    for (int p = 0; p < 16; ++p) s.v[p] = 1.0; // sounding map sets the scene max -> tau = 0.1
    CHECK(metrics::nsa(s, ann, cfg) == doctest::Approx(1.0));

    for (int p = 0; p < 16; ++p) s.v[16 + p] = 0.5; // silent map saturated above tau
    CHECK(metrics::nsa(s, ann, cfg) == doctest::Approx(0.0));

    for (int p = 0; p < 16; ++p) s.v[16 + p] = p < 8 ? 0.2 : 0.0; // exactly half the cells above
    CHECK(metrics::nsa(s, ann, cfg) == doctest::Approx(0.5));

    SceneAnnotation no_silent = ann;
    no_silent.boxes[1].sounding = true;
    CHECK_THROWS_AS(metrics::nsa(s, no_silent, cfg), DomainError);
}

TEST_CASE("nsa ignores sounding-class maps and rises with tau") {
    Rng rng(43);
    metrics::MetricConfig cfg;
    const SceneAnnotation ann = random_annotation(rng, 4, 16, 16, 1, 1);
    GridStack s = testutil::random_stack(4, 8, 8, rng);

    // scene max must stay fixed while sounding maps vary below it
    s.v[0] = 10.0;
    const double base = metrics::nsa(s, ann, cfg);
    GridStack t = s;
    for (const auto& b : ann.boxes)
        if (b.sounding)
            for (int y = 0; y < t.h; ++y)
                for (int x = 0; x < t.w; ++x) t.at(b.class_id, y, x) = rng.uniform(0.0, 1.0);
    t.v[0] = 10.0;
    CHECK(metrics::nsa(t, ann, cfg) == doctest::Approx(base).epsilon(1e-12));

    metrics::MetricConfig higher = cfg;
    higher.tau_fraction = 0.3;
    CHECK(metrics::nsa(s, ann, higher) >= base - 1e-12);
}

TEST_CASE("metric-oracle suite: 100+ random instances match brute force to 1e-9") {
    Rng rng(44);
    metrics::MetricConfig cfg;
    for (int inst = 0; inst < 110; ++inst) {
        const int k = rng.uniform_int(2, 4);
        const int mh = rng.uniform_int(3, 7), mw = rng.uniform_int(3, 7);
        const int fh = rng.uniform_int(12, 24), fw = rng.uniform_int(12, 24);
        const SceneAnnotation ann = random_annotation(rng, k, fh, fw, 1, 1);
        const GridStack s = testutil::random_stack(k, mh, mw, rng);

        const double got_ciou = metrics::ciou(s, ann, cfg);
        const double want_ciou = oracle_ciou(s, ann, cfg.tau_fraction);
        CHECK(std::abs(got_ciou - want_ciou) <= 1e-9);
        CHECK(got_ciou >= 0.0);
        CHECK(got_ciou <= 1.0);

        const double got_nsa = metrics::nsa(s, ann, cfg);
        const double want_nsa = oracle_nsa(s, ann, cfg.tau_fraction);
        CHECK(std::abs(got_nsa - want_nsa) <= 1e-9);
        CHECK(got_nsa >= 0.0);
        CHECK(got_nsa <= 1.0);

        std::vector<Box> sounding;
        for (const auto& b : ann.boxes)
            if (b.sounding) sounding.push_back(b);
        const Grid l = testutil::random_grid(mh, mw, rng);
        const double got_iou = metrics::iou(l, sounding, fh, fw, cfg);
        CHECK(std::abs(got_iou - oracle_iou(l, sounding, fh, fw, cfg.tau_fraction)) <= 1e-9);
        CHECK(got_iou >= 0.0);
        CHECK(got_iou <= 1.0);
    }

    std::vector<double> values;
    for (int i = 0; i < 40; ++i) values.push_back(rng.uniform());
    CHECK(std::abs(metrics::auc(values, cfg) - oracle_auc(values, cfg.auc_step)) <= 1e-9);
}

TEST_CASE("nmi: perfect agreement, permutation, and a constant partition") {
    std::vector<int> a = {0, 0, 1, 1, 2, 2};
    CHECK(metrics::nmi(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<int> permuted = {2, 2, 0, 0, 1, 1};
    CHECK(metrics::nmi(a, permuted) == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<int> constant = {0, 0, 0, 0, 0, 0};
    CHECK(metrics::nmi(a, constant) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("evaluate: oracle predictions score CIoU 1.0 and NSA 1.0") {
    const std::string dir = testutil::scratch_dir("evaloracle");
    const int fh = 32, fw = 32;

    data::DatasetManifest manifest;
    manifest.split = data::Split::test;
    manifest.num_classes = 3;
    Rng rng(45);
    for (int i = 0; i < 4; ++i) {
        data::ManifestSample ms;
        ms.id = "scene_" + std::to_string(i);
        ms.audio_path = ms.id + ".wav";
        ms.frame_path = ms.id + ".png";
        ms.source_count = 2;
        SceneAnnotation ann = random_annotation(rng, 3, fh, fw, 1, 1);
        ms.annotation = ann;
        manifest.samples.push_back(ms);

        // oracle prediction at annotation resolution: indicator maps
        TensorArchive ar;
        ar.meta["alignment"] = std::vector<int>{0, 1, 2};
        Grid l(fh, fw, 0.0);
        GridStack s(3, fh, fw, 0.0);
        for (const auto& b : ann.boxes) {
            if (!b.sounding) continue;
            for (int y = b.y; y < b.y + b.h; ++y)
                for (int x = b.x; x < b.x + b.w; ++x) {
                    l.at(y, x) = 1.0;
                    s.at(b.class_id, y, x) = 1.0;
                }
        }
        ar.add("l", {fh, fw}, l.v, false);
        ar.add("s", {3, fh, fw}, s.v, false);
        ar.add("viz", {3, fh, fw}, s.v, false);
        ar.save(dir + "/" + ms.id + ".avta");
    }

    metrics::MetricConfig cfg;
    const metrics::EvalReport report = metrics::evaluate(dir, manifest, cfg);
    CHECK(report.scenes_evaluated == 4);
    CHECK(report.scenes_missing == 0);
    CHECK(report.complete());
    for (const auto& [t, f] : report.ciou_at) CHECK(f == doctest::Approx(1.0));
    CHECK(report.nsa_mean == doctest::Approx(1.0));
    CHECK(report.auc_ciou == doctest::Approx(1.0));

    // aggregate equals a per-scene recomputation
    std::vector<double> cious;
    for (const auto& se : report.per_scene) {
        REQUIRE(se.ok);
        cious.push_back(se.ciou);
    }
    CHECK(report.auc_ciou == doctest::Approx(metrics::auc(cious, cfg)).epsilon(1e-12));
}

TEST_CASE("evaluate: missing predictions are reported and fail completeness") {
    const std::string dir = testutil::scratch_dir("evalmissing");
    data::DatasetManifest manifest;
    manifest.split = data::Split::test;
    manifest.num_classes = 2;
    data::ManifestSample ms;
    ms.id = "scene_missing";
    ms.audio_path = "a.wav";
    ms.frame_path = "f.png";
    ms.source_count = 2;
    manifest.samples.push_back(ms);

    metrics::MetricConfig cfg;
    const metrics::EvalReport report = metrics::evaluate(dir, manifest, cfg);
    CHECK(report.scenes_missing == 1);
    CHECK_FALSE(report.complete());
    REQUIRE(report.per_scene.size() == 1);
    CHECK_FALSE(report.per_scene[0].ok);
    CHECK(report.per_scene[0].error == "missing prediction");
}

} // TEST_SUITE
