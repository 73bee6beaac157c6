#pragma once

#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "avloc/common.hpp"
#include "avloc/image.hpp"

namespace avloc {

inline constexpr int kCanonicalSampleRate = 16000;
inline constexpr double kCanonicalDurationS = 1.0;

// Mono audio clip, amplitude in [-1, 1]. class_id carries the generator's
// ground truth and is only consumed by evaluation code.
struct AudioClip {
    std::vector<double> samples;
    int sample_rate = kCanonicalSampleRate;
    double duration_s = kCanonicalDurationS;
    std::optional<int> class_id;

    int expected_length() const { return static_cast<int>(std::lround(sample_rate * duration_s)); }
};

struct FrameImage {
    Image pixels;
    std::optional<std::set<int>> class_ids_present; // evaluation only
};

// One audio clip + one frame; the atomic training sample.
struct AVPair {
    AudioClip audio;
    FrameImage frame;
    std::string pair_id;
    int source_count = 1; // 1 <=> member of the single-source split
};

struct Box {
    int class_id = 0;
    int x = 0, y = 0, w = 0, h = 0; // pixels
    bool sounding = false;          // delta_k
};

struct SceneAnnotation {
    std::vector<Box> boxes;
    int frame_h = 0, frame_w = 0;

    int num_sounding() const {
        int n = 0;
        for (const auto& b : boxes) n += b.sounding ? 1 : 0;
        return n;
    }
    void validate() const {
        for (const auto& b : boxes) {
            if (b.w <= 0 || b.h <= 0 || b.x < 0 || b.y < 0 || b.x + b.w > frame_w || b.y + b.h > frame_h)
                throw DomainError("SceneAnnotation: box outside frame bounds");
        }
    }
};

struct JitterParams {
    double gain_min = 0.5;
    double gain_max = 1.5;
    double max_shift_ms = 100.0;
};

} // namespace avloc
