#include "avloc/models.hpp"

#include <algorithm>
#include <cmath>

#include "avloc/io.hpp"

namespace avloc::models {

std::string profile_name(Profile p) { return p == Profile::paper ? "paper" : "toy"; }

Profile profile_from_name(const std::string& name) {
    if (name == "paper") return Profile::paper;
    if (name == "toy") return Profile::toy;
    throw ConfigError("unknown model profile: " + name);
}

BackboneConfig BackboneConfig::visual(Profile p) {
    BackboneConfig c;
    c.profile = p;
    c.input_channels = 3;
    c.channels = p == Profile::paper ? 512 : 64;
    return c;
}

BackboneConfig BackboneConfig::audio(Profile p) {
    BackboneConfig c = visual(p);
    c.input_channels = 1;
    return c;
}

// ---------------------------------------------------------------------------
// ResBlock
// ---------------------------------------------------------------------------

ResBlock::ResBlock(int in_ch, int out_ch, int stride_h, int stride_w)
    : conv1(in_ch, out_ch, 3, stride_h, stride_w, 1, false),
      conv2(out_ch, out_ch, 3, 1, 1, false),
      bn1(out_ch),
      bn2(out_ch),
      has_proj(in_ch != out_ch || stride_h != 1 || stride_w != 1),
      proj(in_ch, out_ch, 1, stride_h, stride_w, 0, false),
      proj_bn(out_ch) {}

void ResBlock::init(Rng& rng) {
    conv1.init(rng);
    conv2.init(rng);
    if (has_proj) proj.init(rng);
}

nn::Tensor ResBlock::forward(const nn::Tensor& x) {
    nn::Tensor h = relu1.forward(bn1.forward(conv1.forward(x)));
    h = bn2.forward(conv2.forward(h));
    nn::Tensor skip = has_proj ? proj_bn.forward(proj.forward(x)) : x;
    for (std::size_t i = 0; i < h.v.size(); ++i) h.v[i] += skip.v[i];
    return relu2.forward(h);
}

nn::Tensor ResBlock::backward(const nn::Tensor& dy) {
    const nn::Tensor d_add = relu2.backward(dy);
    nn::Tensor dx = conv1.backward(bn1.backward(relu1.backward(conv2.backward(bn2.backward(d_add)))));
    if (has_proj) {
        const nn::Tensor d_skip = proj.backward(proj_bn.backward(d_add));
        for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += d_skip.v[i];
    } else {
        for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += d_add.v[i];
    }
    return dx;
}

void ResBlock::collect(nn::NamedParams& out, const std::string& prefix) {
    conv1.collect(out, prefix + ".conv1");
    bn1.collect(out, prefix + ".bn1");
    conv2.collect(out, prefix + ".conv2");
    bn2.collect(out, prefix + ".bn2");
    if (has_proj) {
        proj.collect(out, prefix + ".proj");
        proj_bn.collect(out, prefix + ".proj_bn");
    }
}

void ResBlock::set_training(bool training) {
    bn1.training = training;
    bn2.training = training;
    proj_bn.training = training;
}

// ---------------------------------------------------------------------------
// Backbone
// ---------------------------------------------------------------------------

Backbone::Backbone(const BackboneConfig& config) : cfg(config) {
    struct StageSpec {
        int width, stride_h, stride_w, blocks;
    };
    std::vector<StageSpec> plan;
    int stem_ch;
    if (cfg.profile == Profile::paper) {
        stem_ch = 64;
        stem = nn::Conv2d(cfg.input_channels, stem_ch, 7, 2, 3, false);
        has_pool = true;
        pool = nn::MaxPool2d{3, 2, 1};
        // Last stage keeps stride 1 so 224 inputs land on 14x14 features.
        plan = {{64, 1, 1, 2}, {128, 2, 2, 2}, {256, 2, 2, 2}, {512, 1, 1, 2}};
    } else if (cfg.is_audio()) {
        stem_ch = 8;
        stem = nn::Conv2d(cfg.input_channels, stem_ch, 3, 2, 1, false);
        has_pool = false;
        plan = {{16, 2, 2, 1}, {32, 2, 2, 1}, {64, 2, 2, 1}, {64, 1, 1, 1}};
    } else {
        stem_ch = 8;
        stem = nn::Conv2d(cfg.input_channels, stem_ch, 3, 2, 1, false);
        has_pool = false;
        plan = {{16, 2, 2, 1}, {32, 2, 2, 1}, {64, 1, 1, 1}, {64, 1, 1, 1}};
    }
    stem_bn = nn::BatchNorm2d(stem_ch);
    int in_ch = stem_ch;
    for (const auto& st : plan) {
        for (int b = 0; b < st.blocks; ++b) {
            blocks.emplace_back(in_ch, st.width, b == 0 ? st.stride_h : 1, b == 0 ? st.stride_w : 1);
            in_ch = st.width;
        }
    }
}

void Backbone::init(std::uint64_t seed) {
    Rng rng(seed);
    stem.init(rng);
    for (auto& b : blocks) b.init(rng);
}

nn::Tensor Backbone::forward(const nn::Tensor& x) {
    if (x.c != cfg.input_channels) throw ShapeError("Backbone: input channel mismatch");
    nn::Tensor h = stem_relu.forward(stem_bn.forward(stem.forward(x)));
    if (has_pool) h = pool.forward(h);
    for (auto& b : blocks) h = b.forward(h);
    return h;
}

nn::Tensor Backbone::backward(const nn::Tensor& dy) {
    nn::Tensor d = dy;
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) d = it->backward(d);
    if (has_pool) d = pool.backward(d);
    return stem.backward(stem_bn.backward(stem_relu.backward(d)));
}

void Backbone::collect(nn::NamedParams& out, const std::string& prefix) {
    stem.collect(out, prefix + ".stem");
    stem_bn.collect(out, prefix + ".stem_bn");
    for (std::size_t i = 0; i < blocks.size(); ++i)
        blocks[i].collect(out, prefix + ".block" + std::to_string(i));
}

void Backbone::set_training(bool training) {
    stem_bn.training = training;
    for (auto& b : blocks) b.set_training(training);
}

// ---------------------------------------------------------------------------
// LocalizationHead
// ---------------------------------------------------------------------------

// The scalar affine stretches cosine similarity ([-1, 1]) to a logit range
// wide enough for the binary matching supervision; it stays learnable.
constexpr double kAffineInitScale = 8.0;

LocalizationHead::LocalizationHead(int in_channels, int proj)
    : in_ch(in_channels),
      proj_dim(proj),
      a1(in_channels, proj, false),
      a2(proj, proj, false),
      v1(in_channels, proj, 1, 1, 0, false),
      v2(proj, proj, 1, 1, 0, false) {
    affine_w.resize({1}, kAffineInitScale);
    affine_b.resize({1}, 0.0);
}

void LocalizationHead::init(std::uint64_t seed) {
    Rng rng(seed);
    a1.init(rng);
    a2.init(rng);
    v1.init(rng);
    v2.init(rng);
    affine_w.value[0] = kAffineInitScale;
    affine_b.value[0] = 0.0;
}

nn::Tensor LocalizationHead::forward_pairs(const nn::Tensor& audio_emb, const nn::Tensor& fmap,
                                           const std::vector<std::pair<int, int>>& pairs) {
    if (audio_emb.c != in_ch || fmap.c != in_ch) throw ShapeError("LocalizationHead: channel mismatch");
    pairs_ = pairs;

    const nn::Tensor pa = a2.forward(a_relu.forward(a1.forward(audio_emb)));
    const nn::Tensor pv = v2.forward(v_relu.forward(v1.forward(fmap)));
    const int na = pa.n, nv = pv.n, h = pv.h, w = pv.w, d = proj_dim;

    za_ = pa;
    a_inv_norm_.assign(na, 0.0);
    for (int i = 0; i < na; ++i) {
        double norm2 = 0.0;
        const double* src = pa.sample(i);
        for (int c = 0; c < d; ++c) norm2 += src[c] * src[c];
        const double inv = norm2 > 0.0 ? 1.0 / std::sqrt(norm2) : 0.0;
        a_inv_norm_[i] = inv;
        double* dst = za_.sample(i);
        for (int c = 0; c < d; ++c) dst[c] *= inv;
    }

    zv_ = pv;
    const int spatial = h * w;
    v_inv_norm_.assign(static_cast<std::size_t>(nv) * spatial, 0.0);
    for (int i = 0; i < nv; ++i) {
        double* base = zv_.sample(i);
        for (int p = 0; p < spatial; ++p) {
            double norm2 = 0.0;
            for (int c = 0; c < d; ++c) {
                const double v = base[static_cast<std::size_t>(c) * spatial + p];
                norm2 += v * v;
            }
            const double inv = norm2 > 0.0 ? 1.0 / std::sqrt(norm2) : 0.0;
            v_inv_norm_[static_cast<std::size_t>(i) * spatial + p] = inv;
            for (int c = 0; c < d; ++c) base[static_cast<std::size_t>(c) * spatial + p] *= inv;
        }
    }

    const int np = static_cast<int>(pairs.size());
    cos_cache_ = nn::Tensor(np, 1, h, w);
    nn::Tensor z(np, 1, h, w);
    const double aw = affine_w.value[0], ab = affine_b.value[0];
    for (int p = 0; p < np; ++p) {
        const double* av = za_.sample(pairs[p].first);
        const double* vv = zv_.sample(pairs[p].second);
        double* cm = cos_cache_.sample(p);
        double* zm = z.sample(p);
        for (int q = 0; q < spatial; ++q) {
            double acc = 0.0;
            for (int c = 0; c < d; ++c) acc += av[c] * vv[static_cast<std::size_t>(c) * spatial + q];
            cm[q] = acc;
            zm[q] = aw * acc + ab;
        }
    }
    return z;
}

std::pair<nn::Tensor, nn::Tensor> LocalizationHead::backward_pairs(const nn::Tensor& dz) {
    const int np = dz.n, h = dz.h, w = dz.w, d = proj_dim;
    const int spatial = h * w;
    const int na = za_.n, nv = zv_.n;
    const double aw = affine_w.value[0];

    double dw = 0.0, db = 0.0;
    nn::Tensor dza(na, d, 1, 1), dzv(nv, d, h, w);
    for (int p = 0; p < np; ++p) {
        const auto [ai, vi] = pairs_[p];
        const double* dzm = dz.sample(p);
        const double* cm = cos_cache_.sample(p);
        const double* av = za_.sample(ai);
        const double* vv = zv_.sample(vi);
        double* dav = dza.sample(ai);
        double* dvv = dzv.sample(vi);
        for (int q = 0; q < spatial; ++q) {
            const double g = dzm[q];
            if (g == 0.0) continue;
            dw += g * cm[q];
            db += g;
            const double gc = aw * g;
            for (int c = 0; c < d; ++c) {
                dav[c] += gc * vv[static_cast<std::size_t>(c) * spatial + q];
                dvv[static_cast<std::size_t>(c) * spatial + q] += gc * av[c];
            }
        }
    }
    affine_w.grad[0] += dw;
    affine_b.grad[0] += db;

    // Through the L2 normalization: du = inv * (dz - z * (z . dz)).
    nn::Tensor dpa(na, d, 1, 1);
    for (int i = 0; i < na; ++i) {
        const double inv = a_inv_norm_[i];
        const double* zi = za_.sample(i);
        const double* dzi = dza.sample(i);
        double dot = 0.0;
        for (int c = 0; c < d; ++c) dot += zi[c] * dzi[c];
        double* out = dpa.sample(i);
        for (int c = 0; c < d; ++c) out[c] = inv * (dzi[c] - zi[c] * dot);
    }
    nn::Tensor dpv(nv, d, h, w);
    for (int i = 0; i < nv; ++i) {
        const double* zb = zv_.sample(i);
        const double* dzb = dzv.sample(i);
        double* ob = dpv.sample(i);
        for (int q = 0; q < spatial; ++q) {
            const double inv = v_inv_norm_[static_cast<std::size_t>(i) * spatial + q];
            double dot = 0.0;
            for (int c = 0; c < d; ++c)
                dot += zb[static_cast<std::size_t>(c) * spatial + q] * dzb[static_cast<std::size_t>(c) * spatial + q];
            for (int c = 0; c < d; ++c) {
                const std::size_t idx = static_cast<std::size_t>(c) * spatial + q;
                ob[idx] = inv * (dzb[idx] - zb[idx] * dot);
            }
        }
    }

    nn::Tensor d_aemb = a1.backward(a_relu.backward(a2.backward(dpa)));
    nn::Tensor d_fmap = v1.backward(v_relu.backward(v2.backward(dpv)));
    return {std::move(d_aemb), std::move(d_fmap)};
}

void LocalizationHead::collect(nn::NamedParams& out, const std::string& prefix) {
    a1.collect(out, prefix + ".a1");
    a2.collect(out, prefix + ".a2");
    v1.collect(out, prefix + ".v1");
    v2.collect(out, prefix + ".v2");
    affine_w.name = prefix + ".affine_w";
    affine_b.name = prefix + ".affine_b";
    out.emplace_back(affine_w.name, &affine_w);
    out.emplace_back(affine_b.name, &affine_b);
}

LocalizeResult localize(LocalizationHead& head, const nn::Tensor& audio_emb, const nn::Tensor& fmap) {
    if (audio_emb.n != 1 || fmap.n != 1) throw ShapeError("localize: expects single-sample tensors");
    const nn::Tensor z = head.forward_pairs(audio_emb, fmap, {{0, 0}});
    LocalizeResult res;
    res.map = Grid(z.h, z.w);
    res.score = 0.0;
    for (int y = 0; y < z.h; ++y)
        for (int x = 0; x < z.w; ++x) {
            const double s = sigmoid(z.at(0, 0, y, x));
            res.map.at(y, x) = s;
            res.score = std::max(res.score, s);
        }
    return res;
}

// ---------------------------------------------------------------------------
// AVModel
// ---------------------------------------------------------------------------

AVModel::AVModel(Profile p, int K, std::uint64_t seed)
    : profile(p),
      num_classes(K),
      vis_cfg(BackboneConfig::visual(p)),
      aud_cfg(BackboneConfig::audio(p)),
      visual(vis_cfg),
      audio(aud_cfg),
      head(vis_cfg.channels),
      audio_cls(aud_cfg.channels, K),
      visual_cls(vis_cfg.channels, K) {
    visual.init(derive_seed(seed, "visual-backbone"));
    audio.init(derive_seed(seed, "audio-backbone"));
    head.init(derive_seed(seed, "loc-head"));
    audio_cls.reinit(derive_seed(seed, "audio-cls"));
    visual_cls.reinit(derive_seed(seed, "visual-cls"));
}

nn::Tensor AVModel::visual_forward(const nn::Tensor& frames) {
    const int expect = vis_cfg.visual_input_size();
    if (frames.h != expect || frames.w != expect)
        throw ShapeError("visual_forward: expected " + std::to_string(expect) + "x" + std::to_string(expect) +
                         " input for the " + profile_name(profile) + " profile");
    return visual.forward(frames);
}

nn::Tensor AVModel::visual_backward(const nn::Tensor& dfmap) { return visual.backward(dfmap); }

nn::Tensor AVModel::audio_forward(const nn::Tensor& specs) {
    if (specs.c != 1 || specs.h != dsp::kFrames || specs.w != dsp::kMelBins)
        throw ShapeError("audio_forward: expected (N, 1, 201, 64) spectrogram input");
    return audio_gmp.forward(audio.forward(specs));
}

nn::Tensor AVModel::audio_backward(const nn::Tensor& demb) {
    return audio.backward(audio_gmp.backward(demb));
}

void AVModel::set_training(bool training) {
    visual.set_training(training);
    audio.set_training(training);
}

void AVModel::set_bn_tracking(bool tracking) {
    auto walk = [tracking](Backbone& b) {
        b.stem_bn.track_running = tracking;
        for (auto& blk : b.blocks) {
            blk.bn1.track_running = tracking;
            blk.bn2.track_running = tracking;
            blk.proj_bn.track_running = tracking;
        }
    };
    walk(visual);
    walk(audio);
}

nn::NamedParams AVModel::named_params() {
    nn::NamedParams out;
    visual.collect(out, "visual");
    audio.collect(out, "audio");
    head.collect(out, "head");
    audio_cls.collect(out, "audio_cls");
    visual_cls.collect(out, "visual_cls");
    return out;
}

std::vector<nn::Param*> AVModel::localization_params() {
    nn::NamedParams named;
    visual.collect(named, "visual");
    audio.collect(named, "audio");
    head.collect(named, "head");
    std::vector<nn::Param*> out;
    for (auto& [name, p] : named) out.push_back(p);
    return out;
}

std::vector<nn::Param*> AVModel::classification_params(bool include_backbones) {
    nn::NamedParams named;
    if (include_backbones) {
        visual.collect(named, "visual");
        audio.collect(named, "audio");
    }
    audio_cls.collect(named, "audio_cls");
    visual_cls.collect(named, "visual_cls");
    std::vector<nn::Param*> out;
    for (auto& [name, p] : named) out.push_back(p);
    return out;
}

void AVModel::reinit_classifiers(std::uint64_t seed) {
    audio_cls.reinit(derive_seed(seed, "audio-cls-reinit"));
    visual_cls.reinit(derive_seed(seed, "visual-cls-reinit"));
}

void AVModel::save_checkpoint(const std::string& path) const {
    TensorArchive ar;
    ar.meta["format"] = "avloc-checkpoint";
    ar.meta["format_version"] = 1;
    ar.meta["profile"] = profile_name(profile);
    ar.meta["num_classes"] = num_classes;
    ar.meta["cls_trained"] = cls_trained;
    nn::NamedParams named = const_cast<AVModel*>(this)->named_params();
    for (auto& [name, p] : named) ar.add(name, p->shape, p->value, /*f64=*/true);
    ar.save(path);
}

AVModel AVModel::load_checkpoint(const std::string& path) {
    const TensorArchive ar = TensorArchive::load(path);
    if (ar.meta.value("format", "") != "avloc-checkpoint")
        throw StateError("load_checkpoint: not a checkpoint file: " + path);
    AVModel model(profile_from_name(ar.meta.at("profile").get<std::string>()),
                  ar.meta.at("num_classes").get<int>(), /*seed=*/0);
    model.cls_trained = ar.meta.at("cls_trained").get<bool>();
    nn::NamedParams named = model.named_params();
    for (auto& [name, p] : named) {
        const ArchiveEntry& e = ar.get(name);
        if (e.data.size() != p->value.size())
            throw StateError("load_checkpoint: shape mismatch for " + name + " in " + path);
        p->value = e.data;
    }
    return model;
}

// ---------------------------------------------------------------------------
// Input adapters
// ---------------------------------------------------------------------------

nn::Tensor frames_to_tensor(const std::vector<const Image*>& frames) {
    if (frames.empty()) throw ShapeError("frames_to_tensor: empty batch");
    const int h = frames[0]->h, w = frames[0]->w;
    nn::Tensor t(static_cast<int>(frames.size()), 3, h, w);
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const Image& img = *frames[i];
        if (img.h != h || img.w != w) throw ShapeError("frames_to_tensor: inconsistent frame sizes");
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c) t.at(static_cast<int>(i), c, y, x) = img.at(y, x, c);
    }
    return t;
}

nn::Tensor specs_to_tensor(const std::vector<const dsp::Spectrogram*>& specs) {
    if (specs.empty()) throw ShapeError("specs_to_tensor: empty batch");
    const int h = specs[0]->frames, w = specs[0]->bins;
    nn::Tensor t(static_cast<int>(specs.size()), 1, h, w);
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const dsp::Spectrogram& s = *specs[i];
        if (s.frames != h || s.bins != w) throw ShapeError("specs_to_tensor: inconsistent spectrogram sizes");
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) t.at(static_cast<int>(i), 0, y, x) = s.at(y, x);
    }
    return t;
}

Image preprocess_frame_paper(const Image& frame, Rng* rng) {
    const Image resized = resize_bilinear(frame, 256, 256);
    if (!rng) return center_crop(resized, 224, 224);
    const int y0 = rng->uniform_int(0, 256 - 224);
    const int x0 = rng->uniform_int(0, 256 - 224);
    Image out(224, 224);
    for (int y = 0; y < 224; ++y)
        for (int x = 0; x < 224; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = resized.at(y0 + y, x0 + x, c);
    return out;
}

} // namespace avloc::models
