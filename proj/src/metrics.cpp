#include "avloc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <set>

#include "avloc/io.hpp"

namespace fs = std::filesystem;

namespace avloc::metrics {

std::vector<double> MetricConfig::auc_sweep() const {
    std::vector<double> sweep;
    const int steps = static_cast<int>(std::floor(1.0 / auc_step + 1e-9));
    for (int i = 1; i < steps; ++i) sweep.push_back(i * auc_step);
    return sweep;
}

void MetricConfig::validate() const {
    if (tau_fraction <= 0.0 || tau_fraction >= 1.0) throw ConfigError("metrics: tau_fraction must lie in (0, 1)");
    if (auc_step <= 0.0 || auc_step >= 1.0) throw ConfigError("metrics: auc_step must lie in (0, 1)");
    if (!std::is_sorted(iou_thresholds.begin(), iou_thresholds.end()))
        throw ConfigError("metrics: iou_thresholds must be sorted");
}

Grid upsample_bilinear(const Grid& src, int out_h, int out_w) {
    if (src.h <= 0 || src.w <= 0) throw ShapeError("upsample_bilinear: empty map");
    Grid out(out_h, out_w);
    const double sy = static_cast<double>(src.h) / out_h;
    const double sx = static_cast<double>(src.w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.h - 1));
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, src.h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.w - 1));
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, src.w - 1);
            const double wx = fx - x0;
            const double top = src.at(y0, x0) * (1.0 - wx) + src.at(y0, x1) * wx;
            const double bot = src.at(y1, x0) * (1.0 - wx) + src.at(y1, x1) * wx;
            out.at(y, x) = top * (1.0 - wy) + bot * wy;
        }
    }
    return out;
}

Grid binarize(const Grid& map, double tau) {
    Grid out(map.h, map.w);
    for (std::size_t i = 0; i < map.v.size(); ++i) out.v[i] = map.v[i] >= tau ? 1.0 : 0.0;
    return out;
}

double binary_iou(const Grid& a, const Grid& b) {
    if (a.h != b.h || a.w != b.w) throw ShapeError("binary_iou: shape mismatch");
    long inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.v.size(); ++i) {
        const bool pa = a.v[i] != 0.0, pb = b.v[i] != 0.0;
        inter += pa && pb;
        uni += pa || pb;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

Grid boxes_union_mask(const std::vector<Box>& boxes, int h, int w) {
    Grid mask(h, w);
    for (const auto& b : boxes)
        for (int y = std::max(0, b.y); y < std::min(h, b.y + b.h); ++y)
            for (int x = std::max(0, b.x); x < std::min(w, b.x + b.w); ++x) mask.at(y, x) = 1.0;
    return mask;
}

double iou(const Grid& map, const std::vector<Box>& boxes, int frame_h, int frame_w, const MetricConfig& cfg) {
    if (boxes.empty()) throw DomainError("iou: no boxes");
    const Grid up = (map.h == frame_h && map.w == frame_w) ? map : upsample_bilinear(map, frame_h, frame_w);
    const double tau = cfg.tau_fraction * up.max();
    return binary_iou(binarize(up, tau), boxes_union_mask(boxes, frame_h, frame_w));
}

double auc(const std::vector<double>& per_scene_values, const MetricConfig& cfg) {
    const std::vector<double> sweep = cfg.auc_sweep();
    if (sweep.size() < 2) throw ConfigError("auc: sweep too coarse");
    if (per_scene_values.empty()) return 0.0;
    auto frac_at = [&](double t) {
        int n = 0;
        for (const double v : per_scene_values) n += v >= t;
        return static_cast<double>(n) / static_cast<double>(per_scene_values.size());
    };
    double area = 0.0;
    for (std::size_t i = 0; i + 1 < sweep.size(); ++i)
        area += (sweep[i + 1] - sweep[i]) * 0.5 * (frac_at(sweep[i]) + frac_at(sweep[i + 1]));
    return area / (sweep.back() - sweep.front());
}

double ciou(const GridStack& s, const SceneAnnotation& ann, const MetricConfig& cfg) {
    if (ann.num_sounding() == 0) throw DomainError("ciou: no sounding classes in annotation");
    std::map<int, std::vector<Box>> by_class;
    for (const auto& b : ann.boxes)
        if (b.sounding) by_class[b.class_id].push_back(b);
    double acc = 0.0;
    for (const auto& [class_id, boxes] : by_class) {
        if (class_id < 0 || class_id >= s.k)
            throw DomainError("ciou: annotation class " + std::to_string(class_id) + " has no map");
        acc += iou(s.slice(class_id), boxes, ann.frame_h, ann.frame_w, cfg);
    }
    return acc / static_cast<double>(by_class.size());
}

double nsa(const GridStack& s, const SceneAnnotation& ann, const MetricConfig& cfg) {
    std::set<int> silent;
    for (const auto& b : ann.boxes)
        if (!b.sounding) silent.insert(b.class_id);
    if (silent.empty()) throw DomainError("nsa: no silent classes in annotation");
    const double scene_max = s.max();
    if (scene_max <= 0.0) return 1.0; // nothing activated anywhere
    const double tau = cfg.tau_fraction * scene_max;
    const double area = static_cast<double>(s.h) * s.w;
    double acc = 0.0;
    for (const int class_id : silent) {
        if (class_id < 0 || class_id >= s.k)
            throw DomainError("nsa: annotation class " + std::to_string(class_id) + " has no map");
        long below = 0;
        const Grid g = s.slice(class_id);
        for (const double v : g.v) below += v < tau;
        acc += static_cast<double>(below) / area;
    }
    return acc / static_cast<double>(silent.size());
}

double nmi(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size() || a.empty()) throw DomainError("nmi: size mismatch or empty input");
    const double n = static_cast<double>(a.size());
    std::map<int, double> pa, pb;
    std::map<std::pair<int, int>, double> pab;
    for (std::size_t i = 0; i < a.size(); ++i) {
        pa[a[i]] += 1.0;
        pb[b[i]] += 1.0;
        pab[{a[i], b[i]}] += 1.0;
    }
    double ha = 0.0, hb = 0.0, mi = 0.0;
    for (auto& [k, c] : pa) ha -= (c / n) * std::log(c / n);
    for (auto& [k, c] : pb) hb -= (c / n) * std::log(c / n);
    for (auto& [kk, c] : pab) {
        const double pxy = c / n;
        mi += pxy * std::log(pxy / ((pa[kk.first] / n) * (pb[kk.second] / n)));
    }
    if (ha <= 0.0 && hb <= 0.0) return 1.0; // both partitions constant
    if (ha <= 0.0 || hb <= 0.0) return 0.0;
    return mi / std::sqrt(ha * hb);
}

Json report_to_json(const EvalReport& r) {
    Json agg;
    Json iou_at = Json::object(), ciou_at = Json::object();
    char buf[16];
    for (const auto& [t, f] : r.iou_at) {
        std::snprintf(buf, sizeof(buf), "%.2f", t);
        iou_at[buf] = f;
    }
    for (const auto& [t, f] : r.ciou_at) {
        std::snprintf(buf, sizeof(buf), "%.2f", t);
        ciou_at[buf] = f;
    }
    agg["iou_at"] = iou_at;
    agg["ciou_at"] = ciou_at;
    agg["auc_iou"] = r.auc_iou;
    agg["auc_ciou"] = r.auc_ciou;
    agg["nsa_mean"] = r.nsa_mean;
    agg["scenes_total"] = r.scenes_total;
    agg["scenes_evaluated"] = r.scenes_evaluated;
    agg["scenes_missing"] = r.scenes_missing;
    agg["scenes_degenerate"] = r.scenes_degenerate;

    Json scenes = Json::array();
    for (const auto& s : r.per_scene) {
        Json js{{"id", s.id}, {"ok", s.ok}};
        if (s.ok) {
            js["iou"] = s.iou;
            js["ciou"] = s.ciou;
            if (s.has_nsa) js["nsa"] = s.nsa;
        } else {
            js["error"] = s.error;
        }
        scenes.push_back(js);
    }
    return Json{{"version", r.version}, {"aggregate", agg}, {"per_scene", scenes}};
}

EvalReport evaluate(const std::string& predictions_dir, const data::DatasetManifest& manifest,
                    const MetricConfig& cfg) {
    cfg.validate();
    EvalReport report;
    report.scenes_total = static_cast<int>(manifest.samples.size());

    std::vector<double> ious, cious, nsas;
    for (const auto& sample : manifest.samples) {
        SceneEval se;
        se.id = sample.id;
        const fs::path base = fs::path(predictions_dir) / sample.id;
        if (!fs::exists(base.string() + ".avta")) {
            se.error = "missing prediction";
            report.scenes_missing++;
            report.per_scene.push_back(se);
            continue;
        }
        if (!sample.annotation) {
            se.error = "missing annotation";
            report.scenes_degenerate++;
            report.per_scene.push_back(se);
            continue;
        }
        try {
            const TensorArchive ar = TensorArchive::load(base.string() + ".avta");
            const ArchiveEntry& le = ar.get("l");
            const ArchiveEntry& ss = ar.get("s");
            Grid l(le.dims.at(0), le.dims.at(1));
            l.v = le.data;
            GridStack keys(ss.dims.at(0), ss.dims.at(1), ss.dims.at(2));
            keys.v = ss.data;

            // key space -> class space; multiple keys per class aggregate by max
            std::vector<int> alignment(keys.k);
            if (ar.meta.contains("alignment") && !ar.meta.at("alignment").is_null()) {
                alignment = ar.meta.at("alignment").get<std::vector<int>>();
            } else {
                for (int k = 0; k < keys.k; ++k) alignment[k] = k;
            }
            const int num_classes = std::max(manifest.num_classes,
                                             1 + *std::max_element(alignment.begin(), alignment.end()));
            GridStack s(num_classes, keys.h, keys.w, -1e300);
            std::vector<bool> seen(num_classes, false);
            for (int k = 0; k < keys.k; ++k) {
                const int c = alignment[k];
                for (int y = 0; y < keys.h; ++y)
                    for (int x = 0; x < keys.w; ++x)
                        s.at(c, y, x) = seen[c] ? std::max(s.at(c, y, x), keys.at(k, y, x)) : keys.at(k, y, x);
                seen[c] = true;
            }
            for (int c = 0; c < num_classes; ++c)
                if (!seen[c])
                    for (int y = 0; y < keys.h; ++y)
                        for (int x = 0; x < keys.w; ++x) s.at(c, y, x) = 0.0;

            const SceneAnnotation& ann = *sample.annotation;
            std::vector<Box> sounding_boxes;
            for (const auto& b : ann.boxes)
                if (b.sounding) sounding_boxes.push_back(b);
            if (sounding_boxes.empty()) {
                se.error = "no sounding class";
                report.scenes_degenerate++;
                report.per_scene.push_back(se);
                continue;
            }
            se.iou = iou(l, sounding_boxes, ann.frame_h, ann.frame_w, cfg);
            se.ciou = ciou(s, ann, cfg);
            bool any_silent = false;
            for (const auto& b : ann.boxes) any_silent |= !b.sounding;
            if (any_silent) {
                se.nsa = nsa(s, ann, cfg);
                se.has_nsa = true;
                nsas.push_back(se.nsa);
            }
            se.ok = true;
            ious.push_back(se.iou);
            cious.push_back(se.ciou);
            report.scenes_evaluated++;
        } catch (const Error& e) {
            se.error = e.what();
            report.scenes_degenerate++;
        }
        report.per_scene.push_back(se);
    }

    auto frac_at = [](const std::vector<double>& vals, double t) {
        if (vals.empty()) return 0.0;
        int n = 0;
        for (const double v : vals) n += v >= t;
        return static_cast<double>(n) / static_cast<double>(vals.size());
    };
    for (const double t : cfg.iou_thresholds) {
        report.iou_at.emplace_back(t, frac_at(ious, t));
        report.ciou_at.emplace_back(t, frac_at(cious, t));
    }
    report.auc_iou = ious.empty() ? 0.0 : auc(ious, cfg);
    report.auc_ciou = cious.empty() ? 0.0 : auc(cious, cfg);
    report.nsa_mean = nsas.empty() ? 0.0 : std::accumulate(nsas.begin(), nsas.end(), 0.0) / nsas.size();
    return report;
}

} // namespace avloc::metrics
