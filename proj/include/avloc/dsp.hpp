#pragma once

#include <complex>
#include <string>
#include <vector>

#include "avloc/av_types.hpp"

namespace avloc::dsp {

// Log-Mel front-end constants. The window/hop pair on a 1 s, 16 kHz clip
// with centered padding yields exactly 201 frames; 64 mel bins over
// [0, 8000] Hz give the canonical 201 x 64 spectrogram.
inline constexpr int kWindow = 160;
inline constexpr int kHop = 80;
inline constexpr int kFftSize = 256; // next power of two >= window
inline constexpr int kMelBins = 64;
inline constexpr double kMelFmax = 8000.0;
inline constexpr double kLogEps = 1e-10;
inline constexpr int kFrames = 201;

struct Spectrogram {
    int frames = 0, bins = 0; // T x F, row-major
    std::vector<double> values;
    int sample_rate = kCanonicalSampleRate;
    int window = kWindow;
    int hop = kHop;

    double& at(int t, int f) { return values[static_cast<std::size_t>(t) * bins + f]; }
    double at(int t, int f) const { return values[static_cast<std::size_t>(t) * bins + f]; }
};

// In-place iterative radix-2 FFT; size must be a power of two.
void fft(std::vector<std::complex<double>>& a, bool inverse = false);

// Band-limited resampling (Hann-windowed sinc interpolation). Returns the
// input unchanged when target_rate equals the source rate.
AudioClip resample(const AudioClip& clip, int target_rate);

// STFT (Hann 160 / hop 80 / FFT 256, reflection-padded by window/2) followed
// by a 64-bin HTK mel projection of the power spectrum and log(x + 1e-10)
// compression. Input must be a 16 kHz, 1.0 s clip.
Spectrogram log_mel(const AudioClip& clip);

// Mel filter center frequencies in Hz (HTK scale), one per output bin.
std::vector<double> mel_center_frequencies_hz();

// Optional on-disk cache: u32 frames, u32 bins (little-endian), then
// frames*bins float32 values, row-major.
void save_spectrogram_cache(const std::string& path, const Spectrogram& s);
Spectrogram load_spectrogram_cache(const std::string& path);

} // namespace avloc::dsp
