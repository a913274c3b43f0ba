#include "hiproto/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_map>

#include "hiproto/rng.hpp"

namespace hiproto {

namespace fft {

namespace {

struct Plan {
    std::vector<std::size_t> rev;
    std::vector<std::complex<double>> twiddle;  // forward twiddles, one per half-span
};

const Plan& plan_for(std::size_t n) {
    thread_local std::unordered_map<std::size_t, Plan> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;

    Plan p;
    p.rev.resize(n);
    std::size_t j = 0;
    for (std::size_t i = 1; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        p.rev[i] = j;
    }
    p.twiddle.resize(n / 2);
    for (std::size_t i = 0; i < n / 2; ++i) {
        const double ang = -2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
        p.twiddle[i] = {std::cos(ang), std::sin(ang)};
    }
    return cache.emplace(n, std::move(p)).first->second;
}

}  // namespace

namespace {

template <bool Inverse>
void transform_impl(std::complex<double>* a, std::size_t n, const Plan& plan) {
    for (std::size_t i = 1; i < n; ++i)
        if (i < plan.rev[i]) std::swap(a[i], a[plan.rev[i]]);
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t half = len >> 1;
        const std::size_t step = n / len;
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t k = 0; k < half; ++k) {
                const std::complex<double> tw = plan.twiddle[k * step];
                const double wr = tw.real();
                const double wi = Inverse ? -tw.imag() : tw.imag();
                const double vr = a[i + k + half].real();
                const double vi = a[i + k + half].imag();
                const double xr = vr * wr - vi * wi;
                const double xi = vr * wi + vi * wr;
                const double ur = a[i + k].real();
                const double ui = a[i + k].imag();
                a[i + k] = {ur + xr, ui + xi};
                a[i + k + half] = {ur - xr, ui - xi};
            }
        }
    }
    if (Inverse) {
        const double scale = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) a[i] *= scale;
    }
}

}  // namespace

void transform(std::vector<std::complex<double>>& a, bool inverse) {
    const std::size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0) throw Error("fft size must be a power of two");
    if (n == 1) return;
    const Plan& plan = plan_for(n);
    if (inverse)
        transform_impl<true>(a.data(), n, plan);
    else
        transform_impl<false>(a.data(), n, plan);
}

namespace {

const std::vector<std::complex<double>>& untangle_table(std::size_t n) {
    thread_local std::unordered_map<std::size_t, std::vector<std::complex<double>>> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    std::vector<std::complex<double>> t(n / 2 + 1);
    for (std::size_t k = 0; k <= n / 2; ++k) {
        const double ang =
            -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
        t[k] = {std::cos(ang), std::sin(ang)};
    }
    return cache.emplace(n, std::move(t)).first->second;
}

// packed half-size transform shared by the real-input entry points
void packed_forward(const std::vector<double>& x, std::vector<std::complex<double>>& z) {
    const std::size_t n = x.size();
    if (n < 2 || (n & (n - 1)) != 0) throw Error("rfft size must be a power of two");
    const std::size_t half = n / 2;
    z.resize(half);
    for (std::size_t k = 0; k < half; ++k) z[k] = {x[2 * k], x[2 * k + 1]};
    transform(z, false);
}

std::complex<double> untangle_bin(const std::vector<std::complex<double>>& z, std::size_t k,
                                  std::size_t n, const std::complex<double>& tw) {
    const std::size_t half = n / 2;
    const std::complex<double> zk = k == half ? z[0] : z[k];
    const std::complex<double> zm = std::conj(z[(half - k) % half]);
    const std::complex<double> even = 0.5 * (zk + zm);
    const std::complex<double> odd = std::complex<double>(0.0, -0.5) * (zk - zm);
    return even + tw * odd;
}

}  // namespace

std::vector<std::complex<double>> rfft(const std::vector<double>& x) {
    thread_local std::vector<std::complex<double>> z;
    packed_forward(x, z);
    const std::size_t n = x.size();
    const auto& tw = untangle_table(n);
    std::vector<std::complex<double>> out(n / 2 + 1);
    for (std::size_t k = 0; k <= n / 2; ++k) out[k] = untangle_bin(z, k, n, tw[k]);
    return out;
}

void rfft_power(const std::vector<double>& x, double* power_out) {
    thread_local std::vector<std::complex<double>> z;
    packed_forward(x, z);
    const std::size_t n = x.size();
    const auto& tw = untangle_table(n);
    for (std::size_t k = 0; k <= n / 2; ++k)
        power_out[k] = std::norm(untangle_bin(z, k, n, tw[k]));
}

std::vector<double> irfft(const std::vector<std::complex<double>>& spec, std::size_t n) {
    if (n < 2 || (n & (n - 1)) != 0) throw Error("irfft size must be a power of two");
    const std::size_t half = n / 2;
    if (spec.size() != half + 1) throw Error("irfft: spectrum length must be n/2 + 1");
    const auto& tw = untangle_table(n);
    std::vector<std::complex<double>> z(half);
    for (std::size_t k = 0; k < half; ++k) {
        const std::complex<double> xk = spec[k];
        const std::complex<double> xm = std::conj(spec[half - k]);
        const std::complex<double> even = 0.5 * (xk + xm);
        const std::complex<double> odd = 0.5 * (xk - xm) * std::conj(tw[k]);
        z[k] = even + std::complex<double>(0.0, 1.0) * odd;
    }
    transform(z, true);
    std::vector<double> out(n);
    for (std::size_t k = 0; k < half; ++k) {
        out[2 * k] = z[k].real();
        out[2 * k + 1] = z[k].imag();
    }
    return out;
}

}  // namespace fft

namespace {

std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// Linear convolution via real FFT, truncated to out_len.
std::vector<double> convolve_truncated(const std::vector<double>& x, const std::vector<double>& h,
                                       std::size_t out_len) {
    const std::size_t n = next_pow2(x.size() + h.size() - 1);
    std::vector<double> px(n, 0.0), ph(n, 0.0);
    std::copy(x.begin(), x.end(), px.begin());
    std::copy(h.begin(), h.end(), ph.begin());
    auto fx = fft::rfft(px);
    const auto fh = fft::rfft(ph);
    for (std::size_t i = 0; i < fx.size(); ++i) fx[i] *= fh[i];
    const auto full = fft::irfft(fx, n);
    return {full.begin(), full.begin() + static_cast<std::ptrdiff_t>(out_len)};
}

double rms_of(const std::vector<double>& v) {
    double acc = 0.0;
    for (double s : v) acc += s * s;
    return std::sqrt(acc / static_cast<double>(v.size()));
}

}  // namespace

std::vector<double> resample(const std::vector<double>& x, int from_rate, int to_rate) {
    if (from_rate <= 0 || to_rate <= 0) throw Error("resample: rates must be positive");
    if (from_rate == to_rate) return x;
    const double ratio = static_cast<double>(to_rate) / static_cast<double>(from_rate);
    const std::size_t out_len =
        static_cast<std::size_t>(std::lround(static_cast<double>(x.size()) * ratio));
    std::vector<double> out(out_len, 0.0);
    // anti-alias cutoff at the narrower Nyquist; widen the kernel when decimating
    const double cut = std::min(1.0, ratio);
    const double half_width = 32.0 / cut;
    const int iw = static_cast<int>(half_width);
    for (std::size_t n = 0; n < out_len; ++n) {
        const double t = static_cast<double>(n) / ratio;
        const int center = static_cast<int>(std::floor(t));
        double acc = 0.0;
        for (int k = center - iw; k <= center + iw + 1; ++k) {
            if (k < 0 || k >= static_cast<int>(x.size())) continue;
            const double u = t - static_cast<double>(k);
            if (std::abs(u) > half_width) continue;
            double kern;
            if (u == 0.0) {
                kern = cut;
            } else {
                const double a = std::numbers::pi * cut * u;
                kern = cut * std::sin(a) / a;
            }
            const double win = 0.5 * (1.0 + std::cos(std::numbers::pi * u / half_width));
            acc += x[static_cast<std::size_t>(k)] * kern * win;
        }
        out[n] = acc;
    }
    return out;
}

Waveform normalize_pcm(const PcmData& pcm) {
    const std::size_t frames = pcm.interleaved.size() / static_cast<std::size_t>(pcm.channels);
    std::vector<double> mono(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (int c = 0; c < pcm.channels; ++c)
            acc += pcm.interleaved[i * static_cast<std::size_t>(pcm.channels) +
                                   static_cast<std::size_t>(c)];
        mono[i] = acc / (32768.0 * pcm.channels);
    }
    Waveform w;
    w.sample_rate = kSampleRate;
    w.samples = resample(mono, pcm.sample_rate, kSampleRate);
    return w;
}

Waveform load_and_normalize(const std::uint8_t* data, std::size_t len) {
    return normalize_pcm(read_wav(data, len));
}

Waveform load_and_normalize_file(const std::string& path) {
    return normalize_pcm(read_wav_file(path));
}

Segment sample_segment(const Waveform& w, std::uint64_t seed) {
    if (w.sample_rate != kSampleRate) throw Error("sample_segment: waveform must be 16 kHz");
    const std::size_t n = w.samples.size();
    if (n < kSegmentSamples) throw Error("sample_segment: input shorter than 1 s");

    // prefix sums of squared samples give O(1) window energy
    std::vector<double> prefix(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + w.samples[i] * w.samples[i];
    const auto window_rms = [&](std::size_t off) {
        return std::sqrt((prefix[off + kSegmentSamples] - prefix[off]) / kSegmentSamples);
    };
    const auto make = [&](std::size_t off, bool gated) {
        Segment s;
        s.wav.sample_rate = kSampleRate;
        s.wav.samples.assign(w.samples.begin() + static_cast<std::ptrdiff_t>(off),
                             w.samples.begin() + static_cast<std::ptrdiff_t>(off) + kSegmentSamples);
        s.offset = off;
        s.gated = gated;
        return s;
    };

    const std::size_t positions = n - kSegmentSamples + 1;
    Rng rng(seed);
    std::size_t best_off = 0;
    double best_rms = -1.0;
    for (int draw = 0; draw < 32; ++draw) {
        const std::size_t off = rng.index(positions);
        const double r = window_rms(off);
        if (r > kSilenceGateRms) return make(off, false);
        if (r > best_rms) {
            best_rms = r;
            best_off = off;
        }
    }
    return make(best_off, true);
}

Waveform mix_noise(const Waveform& signal, const Waveform& noise, double snr_db) {
    if (signal.samples.size() != noise.samples.size())
        throw Error("mix_noise: signal and noise lengths differ");
    if (!std::isfinite(snr_db)) throw Error("mix_noise: snr_db must be finite");
    const double rms_n = rms_of(noise.samples);
    if (rms_n <= 0.0) throw Error("mix_noise: zero-power noise");
    const double rms_s = rms_of(signal.samples);
    const double gain = rms_s / rms_n * std::pow(10.0, -snr_db / 20.0);

    Waveform out;
    out.sample_rate = signal.sample_rate;
    out.samples.resize(signal.samples.size());
    double peak = 0.0;
    for (std::size_t i = 0; i < out.samples.size(); ++i) {
        out.samples[i] = signal.samples[i] + gain * noise.samples[i];
        peak = std::max(peak, std::abs(out.samples[i]));
    }
    if (peak > 1.0)
        for (auto& s : out.samples) s /= peak;
    return out;
}

void AugmentationSpec::validate() const {
    if (snr_db_lo > snr_db_hi) throw Error("augmentation: snr range inverted");
    if (decay_lo <= 0.0 || decay_lo > decay_hi) throw Error("augmentation: bad decay range");
    if (wet_lo < 0.0 || wet_lo > wet_hi || wet_hi > 1.0) throw Error("augmentation: bad wet range");
}

ReverbDraw reverb_draw(const AugmentationSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    ReverbDraw d;
    d.decay_s = rng.uniform(spec.decay_lo, spec.decay_hi);
    d.wet = rng.uniform(spec.wet_lo, spec.wet_hi);

    const auto len = static_cast<std::size_t>(std::clamp(
        std::lround(d.decay_s * kSampleRate), long{1}, long{kSegmentSamples}));
    d.ir.assign(len, 0.0);
    if (d.wet > 0.0) {
        // noise burst with an exponential envelope reaching -60 dB at decay_s
        double energy = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const double env = std::exp(-6.907755278982137 * static_cast<double>(i) /
                                        static_cast<double>(len));
            d.ir[i] = rng.normal() * env;
            energy += d.ir[i] * d.ir[i];
        }
        const double scale = d.wet / std::sqrt(energy);
        for (auto& v : d.ir) v *= scale;
    }
    d.ir[0] += 1.0 - d.wet;
    return d;
}

Waveform apply_reverb(const Waveform& w, const AugmentationSpec& spec, std::uint64_t seed) {
    const ReverbDraw d = reverb_draw(spec, seed);
    if (d.wet == 0.0) return w;  // dry passthrough
    Waveform out;
    out.sample_rate = w.sample_rate;
    out.samples = convolve_truncated(w.samples, d.ir, w.samples.size());
    return out;
}

Waveform synth_ambient_noise(std::size_t samples, std::uint64_t seed) {
    Rng rng(seed);
    Waveform w;
    w.sample_rate = kSampleRate;
    w.samples.resize(samples);
    // one-pole lowpass over white noise approximates an ambient spectrum
    double state = 0.0;
    for (std::size_t i = 0; i < samples; ++i) {
        state = 0.97 * state + 0.2 * rng.normal();
        w.samples[i] = state;
    }
    const double r = rms_of(w.samples);
    if (r > 0.0)
        for (auto& s : w.samples) s *= 0.1 / r;
    return w;
}

double MelFilterbank::hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double MelFilterbank::mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank::MelFilterbank(int bins, int fft_size, double fmin_hz, double fmax_hz,
                             int sample_rate)
    : bins_(bins), spectrum_size_(fft_size / 2 + 1) {
    const double mel_lo = hz_to_mel(fmin_hz);
    const double mel_hi = hz_to_mel(fmax_hz);
    std::vector<double> edges_hz(static_cast<std::size_t>(bins) + 2);
    for (int i = 0; i < bins + 2; ++i)
        edges_hz[static_cast<std::size_t>(i)] =
            mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (bins + 1));
    centers_hz_.assign(edges_hz.begin() + 1, edges_hz.end() - 1);

    const double bin_hz = static_cast<double>(sample_rate) / fft_size;
    start_bin_.resize(static_cast<std::size_t>(bins));
    weights_.resize(static_cast<std::size_t>(bins));
    for (int m = 0; m < bins; ++m) {
        const double left = edges_hz[static_cast<std::size_t>(m)];
        const double center = edges_hz[static_cast<std::size_t>(m) + 1];
        const double right = edges_hz[static_cast<std::size_t>(m) + 2];
        std::vector<double> w;
        int first = -1;
        for (int k = 0; k < spectrum_size_; ++k) {
            const double f = k * bin_hz;
            double v = 0.0;
            if (f > left && f < center)
                v = (f - left) / (center - left);
            else if (f >= center && f < right)
                v = (right - f) / (right - center);
            if (v > 0.0) {
                if (first < 0) first = k;
                w.push_back(v);
            } else if (first >= 0) {
                break;
            }
        }
        if (first < 0) first = 0;
        start_bin_[static_cast<std::size_t>(m)] = first;
        weights_[static_cast<std::size_t>(m)] = std::move(w);
    }
}

void MelFilterbank::apply(const double* power, double* mel_out) const {
    for (int m = 0; m < bins_; ++m) {
        const auto& w = weights_[static_cast<std::size_t>(m)];
        const int start = start_bin_[static_cast<std::size_t>(m)];
        double acc = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i)
            acc += w[i] * power[start + static_cast<int>(i)];
        mel_out[m] = acc;
    }
}

LogMelSpectrogram log_mel(const Waveform& w) {
    if (w.sample_rate != kSampleRate || w.samples.size() != kSegmentSamples)
        throw Error("log_mel: expected exactly 1 s of 16 kHz audio");

    static const MelFilterbank bank;
    static const std::vector<double> hann = [] {
        std::vector<double> h(kFftSize);
        for (int i = 0; i < kFftSize; ++i)
            h[static_cast<std::size_t>(i)] =
                0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / kFftSize));
        return h;
    }();

    LogMelSpectrogram out;
    std::vector<double> windowed(kFftSize);
    std::vector<double> power(kFftSize / 2 + 1);
    std::vector<double> mel(kMelBins);
    for (int frame = 0; frame < kNumFrames; ++frame) {
        const std::size_t off = static_cast<std::size_t>(frame) * kHopSize;
        for (int i = 0; i < kFftSize; ++i)
            windowed[static_cast<std::size_t>(i)] =
                w.samples[off + static_cast<std::size_t>(i)] * hann[static_cast<std::size_t>(i)];
        fft::rfft_power(windowed, power.data());
        bank.apply(power.data(), mel.data());
        for (int m = 0; m < kMelBins; ++m)
            out.at(m, frame) = std::log(std::max(mel[static_cast<std::size_t>(m)], kLogFloor));
    }
    return out;
}

namespace {
constexpr char kFeatureMagic[8] = {'H', 'P', 'R', 'F', 'E', 'A', 'T', '1'};
constexpr std::uint32_t kFeatureVersion = 1;
}  // namespace

std::vector<std::uint8_t> encode_features(const LogMelSpectrogram& f) {
    ByteWriter b;
    b.bytes(kFeatureMagic, 8);
    b.u32(kFeatureVersion);
    for (double v : f.values) b.f32(static_cast<float>(v));
    return b.data();
}

LogMelSpectrogram decode_features(const std::uint8_t* data, std::size_t len) {
    ByteReader r(data, len);
    char magic[8];
    r.raw(magic, 8);
    if (std::memcmp(magic, kFeatureMagic, 8) != 0) throw Error("feature file: bad magic");
    if (r.u32() != kFeatureVersion) throw Error("feature file: unsupported version");
    LogMelSpectrogram f;
    for (auto& v : f.values) v = r.f32();
    if (!r.at_end()) throw Error("feature file: trailing bytes");
    return f;
}

void write_features_file(const std::string& path, const LogMelSpectrogram& f) {
    write_file(path, encode_features(f));
}

LogMelSpectrogram read_features_file(const std::string& path) {
    const auto bytes = read_file(path);
    return decode_features(bytes.data(), bytes.size());
}

}  // namespace hiproto
