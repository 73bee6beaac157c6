#include "avloc/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>

namespace avloc::dsp {

namespace {

double hann_periodic(int n, int length) {
    return 0.5 - 0.5 * std::cos(2.0 * M_PI * n / length);
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// 64 triangular filters over FFT bins 0..128; edges equally spaced on the
// HTK mel scale between 0 and kMelFmax.
std::vector<std::vector<double>> mel_filterbank() {
    const int n_bins = kFftSize / 2 + 1;
    const double bin_hz = static_cast<double>(kCanonicalSampleRate) / kFftSize;
    std::vector<double> edges(kMelBins + 2);
    const double mel_max = hz_to_mel(kMelFmax);
    for (int i = 0; i < kMelBins + 2; ++i) edges[i] = mel_to_hz(mel_max * i / (kMelBins + 1));

    std::vector<std::vector<double>> fb(kMelBins, std::vector<double>(n_bins, 0.0));
    for (int m = 0; m < kMelBins; ++m) {
        const double lo = edges[m], center = edges[m + 1], hi = edges[m + 2];
        for (int k = 0; k < n_bins; ++k) {
            const double f = k * bin_hz;
            double w = 0.0;
            if (f > lo && f < center)
                w = (f - lo) / (center - lo);
            else if (f >= center && f < hi)
                w = (hi - f) / (hi - center);
            fb[m][k] = w;
        }
    }
    return fb;
}

// Mirror padding without edge repetition: [x2 x1 | x0 x1 x2 ...].
std::vector<double> reflect_pad(const std::vector<double>& x, int pad) {
    const int n = static_cast<int>(x.size());
    std::vector<double> out(static_cast<std::size_t>(n) + 2 * pad);
    for (int i = 0; i < pad; ++i) out[i] = x[std::min(pad - i, n - 1)];
    std::copy(x.begin(), x.end(), out.begin() + pad);
    for (int i = 0; i < pad; ++i) out[static_cast<std::size_t>(pad) + n + i] = x[std::max(n - 2 - i, 0)];
    return out;
}

double sinc(double x) {
    if (std::abs(x) < 1e-12) return 1.0;
    return std::sin(M_PI * x) / (M_PI * x);
}

} // namespace

void fft(std::vector<std::complex<double>>& a, bool inverse) {
    const std::size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0) throw DomainError("fft: size must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (inverse)
        for (auto& x : a) x /= static_cast<double>(n);
}

AudioClip resample(const AudioClip& clip, int target_rate) {
    if (target_rate <= 0) throw DomainError("resample: target rate must be positive");
    if (clip.samples.empty()) throw DomainError("resample: empty clip");
    if (target_rate == clip.sample_rate) return clip;

    const int n_in = static_cast<int>(clip.samples.size());
    const double ratio = static_cast<double>(target_rate) / clip.sample_rate;
    const int n_out = static_cast<int>(std::lround(n_in * ratio));

    // Cutoff relative to the input Nyquist; slight rolloff margin keeps the
    // transition band inside the filter's reach.
    const double cut = std::min(1.0, ratio) * 0.97;
    const int taps = static_cast<int>(std::ceil(24.0 / cut));

    AudioClip out;
    out.sample_rate = target_rate;
    out.duration_s = static_cast<double>(n_out) / target_rate;
    out.class_id = clip.class_id;
    out.samples.resize(n_out);
    for (int n = 0; n < n_out; ++n) {
        const double t = n / ratio;
        const int k0 = static_cast<int>(std::floor(t)) - taps + 1;
        const int k1 = static_cast<int>(std::floor(t)) + taps;
        double acc = 0.0;
        for (int k = std::max(0, k0); k <= std::min(n_in - 1, k1); ++k) {
            const double u = t - k;
            const double window = 0.5 + 0.5 * std::cos(M_PI * u / (taps + 1));
            acc += clip.samples[k] * cut * sinc(cut * u) * window;
        }
        out.samples[n] = acc;
    }
    return out;
}

Spectrogram log_mel(const AudioClip& clip) {
    if (clip.sample_rate != kCanonicalSampleRate)
        throw DomainError("log_mel: clip must be 16 kHz");
    if (static_cast<int>(clip.samples.size()) != clip.expected_length() ||
        static_cast<int>(clip.samples.size()) != kCanonicalSampleRate)
        throw DomainError("log_mel: clip must be exactly 1.0 s at 16 kHz");

    static const std::vector<std::vector<double>> fb = mel_filterbank();
    const std::vector<double> padded = reflect_pad(clip.samples, kWindow / 2);
    const int n_frames = (static_cast<int>(padded.size()) - kWindow) / kHop + 1;

    Spectrogram s;
    s.frames = n_frames;
    s.bins = kMelBins;
    s.values.assign(static_cast<std::size_t>(n_frames) * kMelBins, 0.0);

    std::vector<std::complex<double>> buf(kFftSize);
    const int n_bins = kFftSize / 2 + 1;
    std::vector<double> power(n_bins);
    for (int t = 0; t < n_frames; ++t) {
        std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
        for (int i = 0; i < kWindow; ++i)
            buf[i] = padded[static_cast<std::size_t>(t) * kHop + i] * hann_periodic(i, kWindow);
        fft(buf);
        for (int k = 0; k < n_bins; ++k) power[k] = std::norm(buf[k]);
        for (int m = 0; m < kMelBins; ++m) {
            double acc = 0.0;
            const auto& w = fb[m];
            for (int k = 0; k < n_bins; ++k) acc += w[k] * power[k];
            s.at(t, m) = std::log(acc + kLogEps);
        }
    }
    return s;
}

std::vector<double> mel_center_frequencies_hz() {
    const double mel_max = hz_to_mel(kMelFmax);
    std::vector<double> centers(kMelBins);
    for (int m = 0; m < kMelBins; ++m) centers[m] = mel_to_hz(mel_max * (m + 1) / (kMelBins + 1));
    return centers;
}

void save_spectrogram_cache(const std::string& path, const Spectrogram& s) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("save_spectrogram_cache: cannot open " + path);
    const std::uint32_t dims[2] = {static_cast<std::uint32_t>(s.frames), static_cast<std::uint32_t>(s.bins)};
    os.write(reinterpret_cast<const char*>(dims), 8);
    for (const double v : s.values) {
        const float f = static_cast<float>(v);
        os.write(reinterpret_cast<const char*>(&f), 4);
    }
    if (!os) throw IoError("save_spectrogram_cache: write failed for " + path);
}

Spectrogram load_spectrogram_cache(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw StateError("load_spectrogram_cache: missing file " + path);
    std::uint32_t dims[2];
    is.read(reinterpret_cast<char*>(dims), 8);
    Spectrogram s;
    s.frames = static_cast<int>(dims[0]);
    s.bins = static_cast<int>(dims[1]);
    s.values.resize(static_cast<std::size_t>(s.frames) * s.bins);
    for (auto& v : s.values) {
        float f;
        is.read(reinterpret_cast<char*>(&f), 4);
        v = f;
    }
    if (!is) throw IoError("load_spectrogram_cache: truncated file " + path);
    return s;
}

} // namespace avloc::dsp
