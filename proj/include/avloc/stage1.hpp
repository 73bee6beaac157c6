#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "avloc/data.hpp"
#include "avloc/models.hpp"

namespace avloc::stage1 {

// ---------------------------------------------------------------------------
// Matching objective: mean binary cross-entropy between match indicators and
// the global-max-pooled localization score.
// ---------------------------------------------------------------------------
double match_loss(const std::vector<double>& scores, const std::vector<double>& labels);

// ---------------------------------------------------------------------------
// Masked object representation. The mask is (l >= threshold); the
// representation averages features over the masked support (dividing by the
// mask cell count, not the full area, so small objects keep their scale).
// An empty mask yields no representation; callers skip the sample.
// ---------------------------------------------------------------------------
struct BinaryMask {
    int h = 0, w = 0;
    std::vector<std::uint8_t> v;
    double threshold_used = 0.0;

    int count() const {
        int n = 0;
        for (const auto b : v) n += b;
        return n;
    }
    std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

struct ObjectRepresentation {
    std::vector<double> values;
    std::string source_pair_id;
};

struct ExtractResult {
    BinaryMask mask;
    std::optional<ObjectRepresentation> repr; // empty iff the mask is empty
};

ExtractResult extract_object_repr(const nn::Tensor& fmap, const Grid& lmap, double threshold);

// ---------------------------------------------------------------------------
// Dictionary learning: Lloyd's K-means with k-means++ seeding and restarts;
// the best final objective wins. Empty clusters are re-seeded from the point
// farthest from its centroid.
// ---------------------------------------------------------------------------
struct KMeansResult {
    int k = 0;
    std::vector<std::vector<double>> centroids;
    std::vector<int> assignments;
    double objective = 0.0;
    std::vector<std::vector<double>> objective_traces; // per restart, per iteration
};

KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k, std::uint64_t seed,
                    int restarts = 10);

struct ObjectDictionary {
    int num_keys = 0;  // K
    int dim = 0;       // C
    std::vector<double> keys; // K x C, row-major
    std::vector<std::pair<std::string, int>> assignments; // pair id -> key index
    std::optional<std::vector<int>> alignment;            // key index -> class id (evaluation only)
    double objective = 0.0;

    const double* key(int k) const { return keys.data() + static_cast<std::size_t>(k) * dim; }
};

ObjectDictionary build_dictionary(const std::vector<ObjectRepresentation>& reprs, int k, std::uint64_t seed,
                                  int restarts = 10);

// Keys are stored as float32 (spec'd file width); assignments and the
// optional alignment ride in the archive metadata.
void save_dictionary(const ObjectDictionary& dict, const std::string& path);
ObjectDictionary load_dictionary(const std::string& path);

// Maps each dictionary key to a semantic class using a small labeled sample
// (evaluation only). With exactly as many keys as classes this is a Hungarian
// assignment; with more keys than classes every class anchors at least one
// key and the remaining keys join their majority class.
std::vector<int> align_semantics(const std::vector<int>& key_assignments, const std::vector<int>& labels,
                                 int num_keys, int num_classes);

// ---------------------------------------------------------------------------
// Shared Eq.1 step: forward both backbones and the head over a batch of
// matched + deranged pairs, compute the BCE loss, and (optionally) accumulate
// gradients. Reused by the stage-1 trainer, the stage-2 objective and the
// gradient checks.
// ---------------------------------------------------------------------------
struct PairBatch {
    std::vector<std::pair<int, int>> pairs; // (audio index, visual index)
    std::vector<double> labels;             // 1 matched, 0 mismatched
};

// Derangement pairing: every audio keeps its matched frame (label 1) and
// additionally pairs with another sample's frame (label 0).
PairBatch make_pair_batch(int batch_size, Rng& rng);

double matching_forward_backward(models::AVModel& model, const nn::Tensor& specs, const nn::Tensor& frames,
                                 const PairBatch& batch, bool accumulate_grads);

// ---------------------------------------------------------------------------
// Alternating optimization (localization <-> pseudo-label classification).
// ---------------------------------------------------------------------------
struct ClsCriteria {
    int max_epochs = 20;
    int patience = 3;       // epochs without min_delta improvement before stopping
    double min_delta = 0.005;
};

struct Stage1Config {
    double mask_threshold = 0.05;
    int num_keys = 4; // K
    int alt_rounds = 2;
    int loc_epochs = 4; // per round; total when alt_rounds == 0
    int batch_size = 16;
    double lr = 1e-4;
    ClsCriteria cls;
    int kmeans_restarts = 10;
    std::uint64_t seed = 1;

    void validate() const;
};

struct Stage1Result {
    ObjectDictionary dictionary;
    std::vector<Json> log;
    std::optional<double> nmi; // pseudo labels vs. generator labels, when labels exist
    int empty_mask_skipped = 0;
};

// Observer receives (tag, round, model) at phase boundaries; used by tests.
using Observer = std::function<void(const std::string&, int, const models::AVModel&)>;

Stage1Result alternating_train(const data::Dataset& ds, models::AVModel& model, const Stage1Config& cfg,
                               JsonlWriter* jsonl = nullptr, const Observer& observer = {});

} // namespace avloc::stage1
