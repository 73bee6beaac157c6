#include "avloc/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "avloc/rng.hpp"

namespace fs = std::filesystem;

namespace avloc::data {

namespace {

constexpr double kGlyphScaleMin = 0.55;
constexpr double kGlyphScaleMax = 0.85;
constexpr int kGlyphMargin = 2;
constexpr int kBgGrid = 9;

const GlyphStyle kBaseStyles[4] = {
    {0, 0.90, 0.12, 0.10}, // disc, red
    {1, 0.95, 0.80, 0.08}, // square, yellow
    {2, 0.10, 0.25, 0.90}, // triangle, blue
    {3, 0.10, 0.80, 0.25}, // cross, green
};

void hsv_to_rgb(double hue, double s, double v, double& r, double& g, double& b) {
    const double c = v * s;
    const double hp = hue * 6.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double rr = 0, gg = 0, bb = 0;
    switch (static_cast<int>(hp) % 6) {
        case 0: rr = c; gg = x; break;
        case 1: rr = x; gg = c; break;
        case 2: gg = c; bb = x; break;
        case 3: gg = x; bb = c; break;
        case 4: rr = x; bb = c; break;
        default: rr = c; bb = x; break;
    }
    const double m = v - c;
    r = rr + m;
    g = gg + m;
    b = bb + m;
}

bool glyph_covers(int shape, int dy, int dx, int g) {
    const double c = (g - 1) / 2.0;
    switch (shape) {
        case 0: { // disc
            const double r = g / 2.0;
            return (dx - c) * (dx - c) + (dy - c) * (dy - c) <= r * r;
        }
        case 1: // square
            return true;
        case 2: // triangle pointing up
            return std::abs(dx - c) <= c * (dy + 1.0) / g;
        default: { // cross
            const double arm = g / 6.0;
            return std::abs(dx - c) <= arm || std::abs(dy - c) <= arm;
        }
    }
}

std::vector<double> circular_shift(const std::vector<double>& x, int shift) {
    const int n = static_cast<int>(x.size());
    std::vector<double> out(x.size());
    for (int i = 0; i < n; ++i) {
        int j = (i - shift) % n;
        if (j < 0) j += n;
        out[i] = x[j];
    }
    return out;
}

} // namespace

ToyWorldSpec ToyWorldSpec::make(int num_classes, double noise_level, std::uint64_t seed, int frame_size) {
    ToyWorldSpec spec;
    spec.num_classes = num_classes;
    spec.noise_level = noise_level;
    spec.seed = seed;
    spec.frame_size = frame_size;
    spec.tones_hz.resize(num_classes);
    // Fundamentals spread wide on the mel axis, chosen so that no class's
    // second partial lands near another class's fundamental and so that the
    // mel-scale f -> 2f spacing (a shift-invariant timbre cue for the conv
    // trunk) differs per class. Larger K needs an explicit tones_hz list.
    static const double kToneTable[4] = {240.0, 850.0, 1300.0, 3500.0};
    for (int k = 0; k < num_classes; ++k)
        spec.tones_hz[k] = k < 4 ? kToneTable[k] : 3500.0 * std::pow(1.15, k - 3);
    return spec;
}

void ToyWorldSpec::validate() const {
    if (num_classes < 1) throw DomainError("ToyWorldSpec: need at least one class");
    if (static_cast<int>(tones_hz.size()) != num_classes)
        throw DomainError("ToyWorldSpec: tones_hz size must equal num_classes");
    for (const double f : tones_hz)
        if (f <= 0.0 || 2.0 * f >= sample_rate / 2.0)
            throw DomainError("ToyWorldSpec: tone harmonics must stay below Nyquist");
    if (frame_size < 16 || frame_size % 2 != 0) throw DomainError("ToyWorldSpec: frame_size must be even and >= 16");
    if (noise_level < 0.0) throw DomainError("ToyWorldSpec: negative noise_level");
}

GlyphStyle glyph_style(int class_id) {
    if (class_id < 4) return kBaseStyles[class_id];
    GlyphStyle st;
    st.shape = class_id % 4;
    const double hue = std::fmod(0.61803398875 * (class_id - 3), 1.0);
    hsv_to_rgb(hue, 0.85, 0.9, st.r, st.g, st.b);
    return st;
}

Image render_background(const ToyWorldSpec& spec, int class_id, std::uint64_t rng_seed) {
    Rng rng = derive_rng(spec.seed, "solo-bg", rng_seed * 1000003ull + static_cast<std::uint64_t>(class_id));
    const int s = spec.frame_size;
    Image coarse(kBgGrid, kBgGrid);
    for (int y = 0; y < kBgGrid; ++y)
        for (int x = 0; x < kBgGrid; ++x) {
            const double v = rng.uniform(0.35, 0.62);
            coarse.set_pixel(y, x, v, v, v);
        }
    Image bg = resize_bilinear(coarse, s, s);
    const double tint[3] = {rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03)};
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
            for (int ch = 0; ch < 3; ++ch) bg.at(y, x, ch) = std::clamp(bg.at(y, x, ch) + tint[ch], 0.0, 1.0);
    return bg;
}

SoloSample make_solo(const ToyWorldSpec& spec, int class_id, std::uint64_t rng_seed) {
    spec.validate();
    if (class_id < 0 || class_id >= spec.num_classes) throw DomainError("make_solo: class_id out of range");

    const std::uint64_t mixed = rng_seed * 1000003ull + static_cast<std::uint64_t>(class_id);

    // --- audio: fundamental + two harmonics, mild tremolo, seeded phases ---
    Rng rng_a = derive_rng(spec.seed, "solo-audio", mixed);
    const int n = static_cast<int>(std::lround(spec.sample_rate * spec.duration_s));
    const double f0 = spec.tones_hz[class_id];
    // fundamental + one strong octave partial: the mel-spacing of the pair is
    // the class's shift-invariant signature
    const double partial_amp[2] = {1.0, 0.4};
    double phase[2], trem_rate, trem_phase;
    for (double& p : phase) p = rng_a.uniform(0.0, 2.0 * M_PI);
    trem_rate = rng_a.uniform(3.0, 7.0);
    trem_phase = rng_a.uniform(0.0, 2.0 * M_PI);

    AudioClip clip;
    clip.sample_rate = spec.sample_rate;
    clip.duration_s = spec.duration_s;
    clip.class_id = class_id;
    clip.samples.resize(n);
    double peak = 0.0;
    for (int i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / spec.sample_rate;
        double v = 0.0;
        for (int p = 0; p < 2; ++p) v += partial_amp[p] * std::sin(2.0 * M_PI * f0 * (p + 1) * t + phase[p]);
        v *= 1.0 - 0.15 * (0.5 + 0.5 * std::sin(2.0 * M_PI * trem_rate * t + trem_phase));
        clip.samples[i] = v;
        peak = std::max(peak, std::abs(v));
    }
    // seeded loudness variation so downstream consumers see amplitude range
    const double target_peak = rng_a.uniform(0.55, 0.9);
    for (double& v : clip.samples) v *= target_peak / peak;
    if (spec.noise_level > 0.0)
        for (double& v : clip.samples) v = std::clamp(v + rng_a.normal(0.0, spec.noise_level), -1.0, 1.0);

    // --- frame: glyph at a seeded position/scale over a textured background ---
    Image frame = render_background(spec, class_id, rng_seed);
    Rng rng_v = derive_rng(spec.seed, "solo-glyph", mixed);
    const int s = spec.frame_size;
    const int g = static_cast<int>(std::lround(rng_v.uniform(kGlyphScaleMin, kGlyphScaleMax) * s));
    const int x0 = rng_v.uniform_int(kGlyphMargin, s - kGlyphMargin - g);
    const int y0 = rng_v.uniform_int(kGlyphMargin, s - kGlyphMargin - g);
    const double brightness = rng_v.uniform(0.85, 1.10);
    const GlyphStyle st = glyph_style(class_id);
    const double col[3] = {std::clamp(st.r * brightness, 0.0, 1.0), std::clamp(st.g * brightness, 0.0, 1.0),
                           std::clamp(st.b * brightness, 0.0, 1.0)};
    for (int dy = 0; dy < g; ++dy)
        for (int dx = 0; dx < g; ++dx)
            if (glyph_covers(st.shape, dy, dx, g)) frame.set_pixel(y0 + dy, x0 + dx, col[0], col[1], col[2]);

    if (spec.noise_level > 0.0) {
        const double sigma = 0.5 * spec.noise_level;
        for (double& v : frame.rgb) v = std::clamp(v + rng_v.normal(0.0, sigma), 0.0, 1.0);
    }

    SoloSample out;
    out.pair.audio = std::move(clip);
    out.pair.frame.pixels = std::move(frame);
    out.pair.frame.class_ids_present = std::set<int>{class_id};
    out.pair.pair_id = "solo_c" + std::to_string(class_id) + "_s" + std::to_string(rng_seed);
    out.pair.source_count = 1;
    out.annotation.frame_h = s;
    out.annotation.frame_w = s;
    out.annotation.boxes.push_back(Box{class_id, x0, y0, g, g, true});
    return out;
}

AVPair make_solo_pair(const ToyWorldSpec& spec, int class_id, std::uint64_t rng_seed) {
    return make_solo(spec, class_id, rng_seed).pair;
}

CocktailScene synthesize_cocktail(const std::vector<SoloSample>& solos, const JitterParams& jitter,
                                  std::uint64_t rng_seed, const std::string& pair_id) {
    if (solos.size() != 4) throw DomainError("synthesize_cocktail: needs exactly 4 solo samples");
    std::set<int> classes;
    for (const auto& s : solos) {
        if (!s.pair.audio.class_id) throw DomainError("synthesize_cocktail: solo without class id");
        classes.insert(*s.pair.audio.class_id);
        if (s.pair.audio.sample_rate != solos[0].pair.audio.sample_rate)
            throw DomainError("synthesize_cocktail: mismatched sample rates");
        if (s.pair.audio.samples.size() != solos[0].pair.audio.samples.size())
            throw DomainError("synthesize_cocktail: mismatched durations");
        if (s.pair.frame.pixels.h != solos[0].pair.frame.pixels.h ||
            s.pair.frame.pixels.w != solos[0].pair.frame.pixels.w)
            throw DomainError("synthesize_cocktail: mismatched frame sizes");
    }
    if (classes.size() != 4) throw DomainError("synthesize_cocktail: class ids must be pairwise distinct");

    Rng rng = derive_rng(0x4c0c47a1ull, "cocktail", rng_seed);

    // Quadrant order and the sounding pair are drawn independently so the
    // grid position carries no information about which classes sound.
    std::vector<int> quadrant_of = {0, 1, 2, 3};
    rng.shuffle(quadrant_of);
    std::vector<int> pick = {0, 1, 2, 3};
    rng.shuffle(pick);
    const int a = pick[0], b = pick[1];

    const int sr = solos[0].pair.audio.sample_rate;
    const int n = static_cast<int>(solos[0].pair.audio.samples.size());
    const int max_shift = static_cast<int>(std::lround(jitter.max_shift_ms / 1000.0 * sr));

    std::vector<double> mix(n, 0.0);
    for (const int idx : {a, b}) {
        const double gain = rng.uniform(jitter.gain_min, jitter.gain_max);
        const int shift = max_shift > 0 ? rng.uniform_int(-max_shift, max_shift) : 0;
        const std::vector<double> shifted = circular_shift(solos[idx].pair.audio.samples, shift);
        for (int i = 0; i < n; ++i) mix[i] += gain * shifted[i];
    }
    double peak = 0.0;
    for (const double v : mix) peak = std::max(peak, std::abs(v));
    if (peak > 1.0)
        for (double& v : mix) v /= peak;

    // 2x2 frame grid in quadrant order, then exact half downscale.
    const int s = solos[0].pair.frame.pixels.h;
    Image grid(2 * s, 2 * s);
    for (int q = 0; q < 4; ++q) {
        const int oy = (q / 2) * s, ox = (q % 2) * s;
        const Image& src = solos[quadrant_of[q]].pair.frame.pixels;
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x)
                for (int ch = 0; ch < 3; ++ch) grid.at(oy + y, ox + x, ch) = src.at(y, x, ch);
    }

    CocktailScene scene;
    scene.pair.frame.pixels = downscale_half(grid);
    std::set<int> present;
    for (const auto& so : solos) present.insert(*so.pair.audio.class_id);
    scene.pair.frame.class_ids_present = present;
    scene.pair.audio.samples = std::move(mix);
    scene.pair.audio.sample_rate = sr;
    scene.pair.audio.duration_s = solos[0].pair.audio.duration_s;
    scene.pair.pair_id = pair_id;
    scene.pair.source_count = 2;

    const std::set<int> sounding_classes = {*solos[a].pair.audio.class_id, *solos[b].pair.audio.class_id};
    scene.annotation.frame_h = s;
    scene.annotation.frame_w = s;
    for (int q = 0; q < 4; ++q) {
        const SoloSample& src = solos[quadrant_of[q]];
        const Box& sb = src.annotation.boxes.at(0);
        Box out;
        out.class_id = sb.class_id;
        out.x = (q % 2) * (s / 2) + sb.x / 2;
        out.y = (q / 2) * (s / 2) + sb.y / 2;
        out.w = std::max(1, (sb.w + 1) / 2);
        out.h = std::max(1, (sb.h + 1) / 2);
        out.sounding = sounding_classes.count(sb.class_id) > 0;
        scene.annotation.boxes.push_back(out);
    }
    scene.annotation.validate();
    return scene;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

std::string split_name(Split s) {
    switch (s) {
        case Split::stage1: return "stage1";
        case Split::stage2: return "stage2";
        default: return "test";
    }
}

Split split_from_name(const std::string& name) {
    if (name == "stage1") return Split::stage1;
    if (name == "stage2") return Split::stage2;
    if (name == "test") return Split::test;
    throw DomainError("unknown split name: " + name);
}

bool operator==(const ManifestSample& a, const ManifestSample& b) {
    auto ann_eq = [](const std::optional<SceneAnnotation>& x, const std::optional<SceneAnnotation>& y) {
        if (x.has_value() != y.has_value()) return false;
        if (!x) return true;
        if (x->frame_h != y->frame_h || x->frame_w != y->frame_w || x->boxes.size() != y->boxes.size())
            return false;
        for (std::size_t i = 0; i < x->boxes.size(); ++i) {
            const Box &p = x->boxes[i], &q = y->boxes[i];
            if (p.class_id != q.class_id || p.x != q.x || p.y != q.y || p.w != q.w || p.h != q.h ||
                p.sounding != q.sounding)
                return false;
        }
        return true;
    };
    return a.id == b.id && a.audio_path == b.audio_path && a.frame_path == b.frame_path &&
           a.source_count == b.source_count && ann_eq(a.annotation, b.annotation);
}

bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
    return a.version == b.version && a.split == b.split && a.num_classes == b.num_classes &&
           a.samples == b.samples;
}

DatasetManifest build_manifest(const std::vector<ManifestSample>& samples, Split split, int num_classes) {
    if (samples.empty()) throw DomainError("build_manifest: no samples");
    for (const auto& s : samples) {
        if (split == Split::stage1 && s.source_count != 1)
            throw DomainError("build_manifest: stage1 split requires single-source samples (got " + s.id + ")");
        if (s.source_count < 1) throw DomainError("build_manifest: source_count must be >= 1");
        if (s.annotation) s.annotation->validate();
    }
    DatasetManifest m;
    m.split = split;
    m.num_classes = num_classes;
    m.samples = samples;
    return m;
}

Json annotation_to_json(const SceneAnnotation& a) {
    Json boxes = Json::array();
    for (const auto& b : a.boxes)
        boxes.push_back(Json{{"class_id", b.class_id}, {"bbox", {b.x, b.y, b.w, b.h}}, {"sounding", b.sounding}});
    return Json{{"boxes", boxes}, {"frame_size", {a.frame_h, a.frame_w}}};
}

SceneAnnotation annotation_from_json(const Json& j) {
    SceneAnnotation a;
    a.frame_h = j.at("frame_size").at(0).get<int>();
    a.frame_w = j.at("frame_size").at(1).get<int>();
    for (const auto& bj : j.at("boxes")) {
        Box b;
        b.class_id = bj.at("class_id").get<int>();
        b.x = bj.at("bbox").at(0).get<int>();
        b.y = bj.at("bbox").at(1).get<int>();
        b.w = bj.at("bbox").at(2).get<int>();
        b.h = bj.at("bbox").at(3).get<int>();
        b.sounding = bj.at("sounding").get<bool>();
        a.boxes.push_back(b);
    }
    return a;
}

Json manifest_to_json(const DatasetManifest& m) {
    Json samples = Json::array();
    for (const auto& s : m.samples) {
        Json js{{"id", s.id},
                {"audio_path", s.audio_path},
                {"frame_path", s.frame_path},
                {"source_count", s.source_count}};
        if (s.annotation) js["annotation"] = annotation_to_json(*s.annotation);
        samples.push_back(js);
    }
    return Json{{"version", m.version},
                {"split", split_name(m.split)},
                {"num_classes", m.num_classes},
                {"samples", samples}};
}

DatasetManifest manifest_from_json(const Json& j) {
    DatasetManifest m;
    m.version = j.at("version").get<int>();
    m.split = split_from_name(j.at("split").get<std::string>());
    m.num_classes = j.at("num_classes").get<int>();
    for (const auto& js : j.at("samples")) {
        ManifestSample s;
        s.id = js.at("id").get<std::string>();
        s.audio_path = js.at("audio_path").get<std::string>();
        s.frame_path = js.at("frame_path").get<std::string>();
        s.source_count = js.at("source_count").get<int>();
        if (js.contains("annotation")) s.annotation = annotation_from_json(js.at("annotation"));
        m.samples.push_back(std::move(s));
    }
    return m;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
    write_json_file(path, manifest_to_json(m));
}

DatasetManifest read_manifest(const std::string& path) { return manifest_from_json(read_json_file(path)); }

Dataset load_dataset(const std::string& manifest_path) {
    const DatasetManifest m = read_manifest(manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();

    Dataset ds;
    ds.split = m.split;
    ds.num_classes = m.num_classes;
    ds.samples.reserve(m.samples.size());
    for (const auto& s : m.samples) {
        LoadedSample ls;
        ls.id = s.id;
        ls.source_count = s.source_count;
        ls.annotation = s.annotation;
        if (s.annotation && s.annotation->boxes.size() == 1 && s.source_count == 1)
            ls.class_id = s.annotation->boxes[0].class_id;

        int rate = 0;
        AudioClip clip;
        clip.samples = load_wav((base / s.audio_path).string(), rate);
        clip.sample_rate = rate;
        clip.duration_s = static_cast<double>(clip.samples.size()) / rate;
        if (rate != kCanonicalSampleRate) clip = dsp::resample(clip, kCanonicalSampleRate);
        ls.spec = dsp::log_mel(clip);
        ls.frame = load_png((base / s.frame_path).string());
        ds.samples.push_back(std::move(ls));
    }
    return ds;
}

void save_pair(const AVPair& pair, const std::string& audio_path, const std::string& frame_path) {
    save_wav(audio_path, pair.audio.samples, pair.audio.sample_rate);
    save_png(frame_path, pair.frame.pixels);
}

} // namespace avloc::data
