#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "avloc/av_types.hpp"
#include "avloc/dsp.hpp"
#include "avloc/io.hpp"

namespace avloc::data {

// ---------------------------------------------------------------------------
// Procedural toy audiovisual world. Every class owns a harmonic tone and a
// colored glyph; generation is a pure function of (spec, class, seed), so
// repeated calls are bit-identical.
// ---------------------------------------------------------------------------
struct ToyWorldSpec {
    int num_classes = 4;
    std::vector<double> tones_hz;  // fundamental per class
    double noise_level = 0.02;     // audio noise sigma; frame noise uses half of it
    int frame_size = 112;
    int sample_rate = kCanonicalSampleRate;
    double duration_s = kCanonicalDurationS;
    std::uint64_t seed = 1;

    static ToyWorldSpec make(int num_classes, double noise_level, std::uint64_t seed, int frame_size = 112);
    void validate() const;
};

// Shape/color assigned to a class by the glyph renderer.
struct GlyphStyle {
    int shape = 0; // 0 disc, 1 square, 2 triangle, 3 cross
    double r = 0, g = 0, b = 0;
};
GlyphStyle glyph_style(int class_id);

struct SoloSample {
    AVPair pair;
    SceneAnnotation annotation; // single box around the glyph, sounding=true
};

SoloSample make_solo(const ToyWorldSpec& spec, int class_id, std::uint64_t rng_seed);
AVPair make_solo_pair(const ToyWorldSpec& spec, int class_id, std::uint64_t rng_seed);

// Background texture as composed into the frame (glyph-free), same stream.
Image render_background(const ToyWorldSpec& spec, int class_id, std::uint64_t rng_seed);

// ---------------------------------------------------------------------------
// Cocktail-scene synthesis: mixes two of four solo clips (amplitude jitter +
// circular time shift, then peak normalization to <= 1) and tiles the four
// frames into a 2x2 grid resized back to the canonical frame size. Exactly
// two classes end up sounding, two silent.
// ---------------------------------------------------------------------------
struct CocktailScene {
    AVPair pair;
    SceneAnnotation annotation;
};

CocktailScene synthesize_cocktail(const std::vector<SoloSample>& solos, const JitterParams& jitter,
                                  std::uint64_t rng_seed, const std::string& pair_id = "cocktail");

// ---------------------------------------------------------------------------
// Dataset manifest (JSON). Paths are relative to the manifest directory.
// ---------------------------------------------------------------------------
enum class Split { stage1, stage2, test };
std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct ManifestSample {
    std::string id;
    std::string audio_path;
    std::string frame_path;
    int source_count = 1;
    std::optional<SceneAnnotation> annotation;
};

struct DatasetManifest {
    int version = 1;
    Split split = Split::stage1;
    int num_classes = 0;
    std::vector<ManifestSample> samples;
};

bool operator==(const ManifestSample& a, const ManifestSample& b);
bool operator==(const DatasetManifest& a, const DatasetManifest& b);

// Validates and assembles a manifest: samples nonempty, boxes within frame
// bounds, and a stage1 split may only contain single-source samples.
DatasetManifest build_manifest(const std::vector<ManifestSample>& samples, Split split, int num_classes);

Json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const Json& j);
void write_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest read_manifest(const std::string& path);

Json annotation_to_json(const SceneAnnotation& a);
SceneAnnotation annotation_from_json(const Json& j);

// ---------------------------------------------------------------------------
// In-memory dataset for training/evaluation: audio already as Log-Mel.
// ---------------------------------------------------------------------------
struct LoadedSample {
    std::string id;
    int source_count = 1;
    dsp::Spectrogram spec;
    Image frame;
    std::optional<SceneAnnotation> annotation;
    std::optional<int> class_id; // solo ground truth (evaluation only)
};

struct Dataset {
    Split split = Split::stage1;
    int num_classes = 0;
    std::vector<LoadedSample> samples;
};

Dataset load_dataset(const std::string& manifest_path);

// Writes one AVPair to disk (16-bit PCM WAV + 8-bit PNG).
void save_pair(const AVPair& pair, const std::string& audio_path, const std::string& frame_path);

} // namespace avloc::data
