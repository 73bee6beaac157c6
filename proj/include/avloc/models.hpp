#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "avloc/dsp.hpp"
#include "avloc/image.hpp"
#include "avloc/nn.hpp"

namespace avloc::models {

// "paper": residual-18 trunk with the last-stage stride removed, 512x14x14
// features from 224x224 inputs (shape-contract profile). "toy": 4-stage
// trunk, 64 channels, 14x14 features from 112x112 inputs; small enough to
// train on a CPU in minutes.
enum class Profile { paper, toy };
std::string profile_name(Profile p);
Profile profile_from_name(const std::string& name);

struct BackboneConfig {
    Profile profile = Profile::toy;
    int input_channels = 3; // 3 visual, 1 audio (spectrogram as image)
    int channels = 64;      // output feature channels
    int stages = 4;

    static BackboneConfig visual(Profile p);
    static BackboneConfig audio(Profile p);
    bool is_audio() const { return input_channels == 1; }
    int visual_input_size() const { return profile == Profile::paper ? 224 : 112; }
};

struct ResBlock {
    nn::Conv2d conv1, conv2;
    nn::BatchNorm2d bn1, bn2;
    nn::ReLU relu1, relu2;
    bool has_proj = false;
    nn::Conv2d proj;
    nn::BatchNorm2d proj_bn;

    ResBlock(int in_ch, int out_ch, int stride_h, int stride_w);
    void init(Rng& rng);
    nn::Tensor forward(const nn::Tensor& x);
    nn::Tensor backward(const nn::Tensor& dy);
    void collect(nn::NamedParams& out, const std::string& prefix);
    void set_training(bool training);
};

struct Backbone {
    BackboneConfig cfg;
    nn::Conv2d stem;
    nn::BatchNorm2d stem_bn;
    nn::ReLU stem_relu;
    bool has_pool = false;
    nn::MaxPool2d pool;
    std::vector<ResBlock> blocks;

    explicit Backbone(const BackboneConfig& config);
    void init(std::uint64_t seed);
    nn::Tensor forward(const nn::Tensor& x);
    nn::Tensor backward(const nn::Tensor& dy);
    void collect(nn::NamedParams& out, const std::string& prefix);
    void set_training(bool training);
};

// ---------------------------------------------------------------------------
// Audiovisual localization head. Audio and visual features each pass two
// bias-free 128-d projections with a ReLU in between, are L2-normalized
// (audio per sample, visual per position), combined by per-position cosine
// similarity, then scaled by a learned scalar affine and squashed by a
// sigmoid. Bias-free projections keep the map invariant to positive scaling
// of either input. A zero-norm vector at a position yields similarity 0 and
// receives no gradient.
// ---------------------------------------------------------------------------
struct LocalizationHead {
    int in_ch = 0, proj_dim = 128;
    nn::Linear a1, a2;
    nn::ReLU a_relu;
    nn::Conv2d v1, v2;
    nn::ReLU v_relu;
    nn::Param affine_w, affine_b;

    LocalizationHead() = default;
    LocalizationHead(int in_channels, int proj = 128);
    void init(std::uint64_t seed);

    // Pre-sigmoid maps z = w*cos + b for each (audio index, visual index)
    // pair; output is (P, 1, H, W). The localization map is sigmoid(z) and
    // the scene score is sigmoid(max z) == max sigmoid(z).
    nn::Tensor forward_pairs(const nn::Tensor& audio_emb, const nn::Tensor& fmap,
                             const std::vector<std::pair<int, int>>& pairs);
    // dz is the gradient w.r.t. the pre-sigmoid maps. Returns gradients
    // w.r.t. (audio_emb, fmap), accumulating parameter gradients.
    std::pair<nn::Tensor, nn::Tensor> backward_pairs(const nn::Tensor& dz);

    void collect(nn::NamedParams& out, const std::string& prefix);

    nn::Tensor za_, zv_, cos_cache_;
    std::vector<double> a_inv_norm_, v_inv_norm_;
    std::vector<std::pair<int, int>> pairs_;
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct LocalizeResult {
    Grid map;     // sigmoid values in (0, 1)
    double score; // spatial max of the map
};

// Single-pair convenience wrapper over the head.
LocalizeResult localize(LocalizationHead& head, const nn::Tensor& audio_emb, const nn::Tensor& fmap);

// ---------------------------------------------------------------------------
// Full model bundle: both backbones, localization head and the classifier
// heads used during alternating optimization.
// ---------------------------------------------------------------------------
struct AVModel {
    Profile profile = Profile::toy;
    int num_classes = 0;
    bool cls_trained = false;

    BackboneConfig vis_cfg, aud_cfg;
    Backbone visual;
    Backbone audio;
    nn::GlobalMaxPool audio_gmp;
    nn::GlobalAvgPool visual_gap;
    LocalizationHead head;
    nn::Linear audio_cls, visual_cls;

    AVModel(Profile p, int K, std::uint64_t seed);

    // (N, 3, S, S) -> (N, C, H, W); validates the profile's input size.
    nn::Tensor visual_forward(const nn::Tensor& frames);
    nn::Tensor visual_backward(const nn::Tensor& dfmap);
    // (N, 1, 201, 64) -> (N, C, 1, 1) global-max-pooled embedding.
    nn::Tensor audio_forward(const nn::Tensor& specs);
    nn::Tensor audio_backward(const nn::Tensor& demb);

    void set_training(bool training);
    void set_bn_tracking(bool tracking);
    nn::NamedParams named_params();
    std::vector<nn::Param*> localization_params();
    std::vector<nn::Param*> classification_params(bool include_backbones);
    void reinit_classifiers(std::uint64_t seed);

    void save_checkpoint(const std::string& path) const;
    static AVModel load_checkpoint(const std::string& path);
};

// Frame/spectrogram batching into model input tensors.
nn::Tensor frames_to_tensor(const std::vector<const Image*>& frames);
nn::Tensor specs_to_tensor(const std::vector<const dsp::Spectrogram*>& specs);

// Paper-profile preprocessing: resize to 256, then crop 224 (random when an
// Rng is supplied, centered otherwise).
Image preprocess_frame_paper(const Image& frame, Rng* rng = nullptr);

} // namespace avloc::models
