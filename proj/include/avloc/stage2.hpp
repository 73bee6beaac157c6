#pragma once

#include <optional>
#include <string>
#include <vector>

#include "avloc/data.hpp"
#include "avloc/models.hpp"
#include "avloc/stage1.hpp"

namespace avloc::stage2 {

struct Stage2Config {
    double lambda = 0.5; // weight of the matching term in L2 = Lc + lambda * L1
    double lr = 1e-4;
    int epochs = 8;
    int batch_size = 8;
    bool enable_product_filter = true; // Eq.5 ablation arm when false
    bool enable_lc = true;
    bool enable_l1 = true;
    std::uint64_t seed = 1;

    void validate() const;
};

struct CategoryDistribution {
    enum class Source { visual, audio };
    std::vector<double> probs;
    Source source = Source::visual;
};

// m^k[h,w] = <d^k, f[:,h,w]> for every dictionary key.
GridStack class_maps(const nn::Tensor& fmap, const stage1::ObjectDictionary& dict);

// s^k = m^k elementwise* l (the localization map gates silent objects out).
GridStack sounding_filter(const GridStack& m, const Grid& l);

// softmax over the spatial means of the K sounding maps.
CategoryDistribution sounding_distribution(const GridStack& s);

// softmax over the stage-1 audio classifier logits for one spectrogram.
CategoryDistribution audio_distribution(models::AVModel& model, const dsp::Spectrogram& spec);

// KL(pv || pa) with 1e-8 clamping inside the logs; pa is the (constant)
// audio-side target.
double kl_divergence(const CategoryDistribution& pv, const CategoryDistribution& pa);

// ---------------------------------------------------------------------------
// Combined objective L2 = Lc + lambda * L1 over one batch. The dictionary is
// frozen reference knowledge; pa comes from a frozen snapshot of the stage-1
// audio pathway and receives no gradient.
// ---------------------------------------------------------------------------
struct StepLosses {
    double total = 0.0, lc = 0.0, l1 = 0.0;
};

StepLosses stage2_forward_backward(models::AVModel& model, models::AVModel& frozen_audio_ref,
                                   const stage1::ObjectDictionary& dict, const nn::Tensor& specs,
                                   const nn::Tensor& frames, const stage1::PairBatch& batch,
                                   const Stage2Config& cfg, bool accumulate_grads);

struct Stage2Result {
    std::vector<Json> log;
};

Stage2Result stage2_train(const data::Dataset& ds, models::AVModel& model,
                          const stage1::ObjectDictionary& dict, const Stage2Config& cfg,
                          JsonlWriter* jsonl = nullptr);

// ---------------------------------------------------------------------------
// Per-scene prediction: sounding maps, a per-location softmax over classes
// for visualization, both category distributions, and sounding/silent
// decisions at tau = tau_fraction * max over all K maps.
// ---------------------------------------------------------------------------
struct ScenePrediction {
    std::string id;
    Grid l;
    GridStack s;   // key space
    GridStack viz; // per-location softmax across keys
    std::vector<double> pv, pa;
    std::vector<bool> sounding;
    double tau = 0.0;
    std::optional<std::vector<int>> alignment; // key -> class, as dumped
};

ScenePrediction predict_scene(models::AVModel& model, const stage1::ObjectDictionary& dict,
                              const data::LoadedSample& sample, const Stage2Config& cfg,
                              double tau_fraction);

// Writes <dir>/<id>.avta (float32 maps; archive meta carries the key->class
// alignment) plus a <dir>/<id>.json sidecar with decisions and distributions.
void save_prediction(const ScenePrediction& pred, const std::string& dir,
                     const std::optional<std::vector<int>>& alignment);
ScenePrediction load_prediction(const std::string& dir, const std::string& id);

} // namespace avloc::stage2
