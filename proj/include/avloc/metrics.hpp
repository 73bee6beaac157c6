#pragma once

#include <optional>
#include <string>
#include <vector>

#include "avloc/data.hpp"
#include "avloc/tensor.hpp"

namespace avloc::metrics {

struct MetricConfig {
    double tau_fraction = 0.10;                 // binarization: 10% of the map maximum
    std::vector<double> iou_thresholds{0.3, 0.5};
    double auc_step = 0.05;

    std::vector<double> auc_sweep() const; // thresholds in (0, 1), step auc_step
    void validate() const;
};

// Pixel-center bilinear upsampling (maps are scored at annotation resolution).
Grid upsample_bilinear(const Grid& src, int out_h, int out_w);

// Cells >= tau become 1.
Grid binarize(const Grid& map, double tau);

double binary_iou(const Grid& a, const Grid& b);

Grid boxes_union_mask(const std::vector<Box>& boxes, int h, int w);

// IoU of a localization map against the union of the given boxes: upsample to
// the annotation frame, binarize at tau_fraction * max(map), count pixels.
double iou(const Grid& map, const std::vector<Box>& boxes, int frame_h, int frame_w, const MetricConfig& cfg);

// Area under the (threshold -> fraction of scenes with value >= threshold)
// curve, trapezoidal, normalized to [0, 1] over the sweep span.
double auc(const std::vector<double>& per_scene_values, const MetricConfig& cfg);

// Class-aware IoU: mean of per-class IoU over sounding classes only. Map
// index k must correspond to annotation class k (apply any dictionary
// alignment before calling).
double ciou(const GridStack& s, const SceneAnnotation& ann, const MetricConfig& cfg);

// No-sounding-area: fraction of cells below tau across silent-class maps,
// measured at native map resolution. tau is tau_fraction times the maximum
// over all K maps of the scene; a scene with no activation at all scores 1.
double nsa(const GridStack& s, const SceneAnnotation& ann, const MetricConfig& cfg);

// Normalized mutual information (sqrt normalization, natural logs).
double nmi(const std::vector<int>& a, const std::vector<int>& b);

// ---------------------------------------------------------------------------
// Directory-level evaluation over prediction dumps written by the stage-2
// pipeline (<id>.avta archives with "l" and "s" entries plus a JSON sidecar
// carrying the key->class alignment).
// ---------------------------------------------------------------------------
struct SceneEval {
    std::string id;
    bool ok = false;
    std::string error;
    double iou = 0.0;
    double ciou = 0.0;
    double nsa = 0.0;
    bool has_nsa = false;
};

struct EvalReport {
    int version = 1;
    int scenes_total = 0;
    int scenes_evaluated = 0;
    int scenes_missing = 0;
    int scenes_degenerate = 0;
    std::vector<std::pair<double, double>> iou_at;  // threshold -> fraction
    std::vector<std::pair<double, double>> ciou_at; // threshold -> fraction
    double auc_iou = 0.0;
    double auc_ciou = 0.0;
    double nsa_mean = 0.0;
    std::vector<SceneEval> per_scene;

    bool complete() const { return scenes_missing == 0 && scenes_total > 0; }
};

Json report_to_json(const EvalReport& r);

EvalReport evaluate(const std::string& predictions_dir, const data::DatasetManifest& manifest,
                    const MetricConfig& cfg);

} // namespace avloc::metrics
