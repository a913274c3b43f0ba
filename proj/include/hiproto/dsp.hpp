#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "hiproto/wav.hpp"

namespace hiproto {

constexpr int kSampleRate = 16000;
constexpr int kSegmentSamples = 16000;  // 1 s analysis segments
constexpr int kFftSize = 512;           // 32 ms window
constexpr int kHopSize = 160;           // 10 ms hop
constexpr int kMelBins = 64;
constexpr int kNumFrames = 97;  // floor((16000 - 512) / 160) + 1
constexpr double kLogFloor = 1e-10;

// Log-energy features, kMelBins x kNumFrames, row-major by mel bin.
struct LogMelSpectrogram {
    std::vector<double> values;

    LogMelSpectrogram() : values(static_cast<std::size_t>(kMelBins) * kNumFrames, 0.0) {}

    double& at(int bin, int frame) {
        return values[static_cast<std::size_t>(bin) * kNumFrames + frame];
    }
    double at(int bin, int frame) const {
        return values[static_cast<std::size_t>(bin) * kNumFrames + frame];
    }
};

namespace fft {
// In-place iterative radix-2 transform; size must be a power of two.
void transform(std::vector<std::complex<double>>& a, bool inverse);

// Real-input transforms via half-size complex packing; n must be a power of
// two. rfft returns bins 0..n/2; irfft expects the same layout.
std::vector<std::complex<double>> rfft(const std::vector<double>& x);
std::vector<double> irfft(const std::vector<std::complex<double>>& half, std::size_t n);

// |X[k]|^2 for k = 0..n/2, written to power_out; allocation-free hot path.
void rfft_power(const std::vector<double>& x, double* power_out);
}  // namespace fft

// Decode + downmix to mono + windowed-sinc resample to 16 kHz + scale to [-1, 1].
Waveform load_and_normalize(const std::uint8_t* data, std::size_t len);
Waveform load_and_normalize_file(const std::string& path);
Waveform normalize_pcm(const PcmData& pcm);

// Resample a mono signal between arbitrary rates (windowed-sinc interpolation).
// Output length is round(n * to_rate / from_rate).
std::vector<double> resample(const std::vector<double>& x, int from_rate, int to_rate);

// One analysis segment plus where it came from. `gated` is set when no window
// passed the silence gate and the loudest candidate was returned instead.
struct Segment {
    Waveform wav;
    std::size_t offset = 0;
    bool gated = false;
};

// RMS threshold of the silence gate: -50 dBFS.
constexpr double kSilenceGateRms = 0.0031622776601683794;

// Randomly sample a 1 s window whose RMS exceeds the silence gate; after 32
// draws, fall back to the loudest candidate seen.
Segment sample_segment(const Waveform& w, std::uint64_t seed);

// signal + g * noise with g chosen so the signal-to-noise ratio is snr_db;
// peak-normalized when the mix exceeds full scale.
Waveform mix_noise(const Waveform& signal, const Waveform& noise, double snr_db);

// Parameter ranges for on-the-fly augmentation draws.
struct AugmentationSpec {
    double snr_db_lo = 10.0;
    double snr_db_hi = 20.0;
    double decay_lo = 0.2;  // seconds
    double decay_hi = 1.0;
    double wet_lo = 0.0;
    double wet_hi = 0.5;

    void validate() const;
};

struct ReverbDraw {
    double decay_s = 0.0;
    double wet = 0.0;
    std::vector<double> ir;  // effective impulse response including the dry path
};

// Deterministic draw of reverb parameters and impulse response from a seed.
ReverbDraw reverb_draw(const AugmentationSpec& spec, std::uint64_t seed);

// Convolve with the drawn impulse response; output length equals input length.
Waveform apply_reverb(const Waveform& w, const AugmentationSpec& spec, std::uint64_t seed);

// Ambient-like noise (low-pass filtered white noise) for augmentation mixes.
Waveform synth_ambient_noise(std::size_t samples, std::uint64_t seed);

class MelFilterbank {
public:
    MelFilterbank(int bins = kMelBins, int fft_size = kFftSize, double fmin_hz = 0.0,
                  double fmax_hz = 8000.0, int sample_rate = kSampleRate);

    int bins() const { return bins_; }
    double center_hz(int m) const { return centers_hz_[static_cast<std::size_t>(m)]; }

    // power: fft_size/2 + 1 values; mel_out: bins() values
    void apply(const double* power, double* mel_out) const;

    static double hz_to_mel(double hz);
    static double mel_to_hz(double mel);

private:
    int bins_;
    int spectrum_size_;
    std::vector<double> centers_hz_;
    std::vector<int> start_bin_;
    std::vector<std::vector<double>> weights_;
};

// 64-bin log-mel features of a 1 s segment: Hann window of 512 samples,
// hop 160, power spectrum, HTK-style triangular filters over 0-8 kHz,
// natural log with floor 1e-10.
LogMelSpectrogram log_mel(const Waveform& w);

// Feature cache files: 8-byte magic, u32 version, then 64x97 float32 LE.
std::vector<std::uint8_t> encode_features(const LogMelSpectrogram& f);
LogMelSpectrogram decode_features(const std::uint8_t* data, std::size_t len);
void write_features_file(const std::string& path, const LogMelSpectrogram& f);
LogMelSpectrogram read_features_file(const std::string& path);

}  // namespace hiproto
