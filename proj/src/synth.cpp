#include "hiproto/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <future>
#include <numbers>

#include "hiproto/rng.hpp"

namespace hiproto {

namespace {

constexpr int kRate = 16000;

struct LeafPlan {
    ClassId id;
    ClassId mid;
    ClassId top;
    bool speech = false;
    int style_index = 0;  // index among leaves of the same style
};

std::vector<LeafPlan> plan_leaves(const SynthSpec& spec) {
    std::vector<LeafPlan> leaves;
    int alarm_count = 0;
    int speech_count = 0;
    for (int t = 0; t < spec.top_classes; ++t) {
        const bool speech = (t % 2) == 1;
        const std::string suffix = t < 2 ? "" : std::to_string(t);
        const std::string top = (speech ? "speech" : "alarms") + suffix;
        for (int m = 0; m < spec.mid_per_top; ++m) {
            const std::string mid = top + "_g" + std::to_string(m);
            for (int l = 0; l < spec.leaves_per_mid; ++l) {
                LeafPlan p;
                p.id = mid + "_c" + std::to_string(l);
                p.mid = mid;
                p.top = top;
                p.speech = speech;
                p.style_index = speech ? speech_count++ : alarm_count++;
                leaves.push_back(std::move(p));
            }
        }
    }
    return leaves;
}

// two-pole resonator, used to shape speech-like formants
struct Resonator {
    double a1, a2, gain;
    double y1 = 0.0, y2 = 0.0;

    Resonator(double freq_hz, double bandwidth_hz) {
        const double r = std::exp(-std::numbers::pi * bandwidth_hz / kRate);
        a1 = 2.0 * r * std::cos(2.0 * std::numbers::pi * freq_hz / kRate);
        a2 = -r * r;
        gain = 1.0 - r;
    }

    double step(double x) {
        const double y = gain * x + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        return y;
    }
};

std::vector<double> synth_alarm(const LeafPlan& plan, Rng& rng, std::size_t n) {
    // tone chord: per-class fundamental with two partials and a class-specific
    // beeping envelope
    const int a = plan.style_index;
    const double f0 = 400.0 * std::pow(2.0, 0.25 * a) * (1.0 + rng.uniform(-0.01, 0.01));
    const double beep_rate = 1.5 + 0.7 * (a % 4);
    const double duty = 0.6;
    const double phases[3] = {rng.uniform(0.0, 2.0 * std::numbers::pi),
                              rng.uniform(0.0, 2.0 * std::numbers::pi),
                              rng.uniform(0.0, 2.0 * std::numbers::pi)};
    const double amps[3] = {1.0, 0.5, 0.25};
    const double beep_phase = rng.uniform(0.0, 1.0);

    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / kRate;
        double s = 0.0;
        for (int p = 0; p < 3; ++p)
            s += amps[p] * std::sin(2.0 * std::numbers::pi * f0 * (p + 1) * t + phases[p]);
        // raised-cosine gated beeps
        const double cycle = std::fmod(t * beep_rate + beep_phase, 1.0);
        double env = 0.0;
        if (cycle < duty) {
            const double edge = 0.05;
            env = 1.0;
            if (cycle < edge) env = 0.5 * (1.0 - std::cos(std::numbers::pi * cycle / edge));
            if (cycle > duty - edge)
                env = 0.5 * (1.0 - std::cos(std::numbers::pi * (duty - cycle) / edge));
        }
        out[i] = s * env;
    }
    return out;
}

std::vector<double> synth_speech(const LeafPlan& plan, Rng& rng, std::size_t n) {
    // filtered-noise-excited periodic source: sawtooth-ish glottal pulse train
    // at a per-class pitch, shaped by two per-class formant resonators
    const int b = plan.style_index;
    const double pitch = 100.0 * std::pow(2.0, 0.18 * b) * (1.0 + rng.uniform(-0.02, 0.02));
    const double f1 = 350.0 + 150.0 * (b % 3);
    const double f2 = 1100.0 + 600.0 * ((b / 3) % 3);
    Resonator r1(f1, 90.0), r2(f2, 140.0);
    const double vib_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

    std::vector<double> out(n);
    double phase = rng.uniform(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / kRate;
        const double f = pitch * (1.0 + 0.02 * std::sin(2.0 * std::numbers::pi * 5.0 * t + vib_phase));
        phase += f / kRate;
        if (phase >= 1.0) phase -= 1.0;
        const double saw = 2.0 * phase - 1.0;
        const double src = saw * saw * saw + 0.05 * rng.normal();  // softened pulse + aspiration
        out[i] = r1.step(src) + 0.7 * r2.step(src);
    }
    return out;
}

Waveform synth_leaf_file(const SynthSpec& spec, const std::vector<LeafPlan>& leaves,
                         int leaf_index, int file_index) {
    const LeafPlan& plan = leaves[static_cast<std::size_t>(leaf_index)];
    Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(leaf_index),
                     static_cast<std::uint64_t>(file_index)));
    const double dur = rng.uniform(1.0, 2.0);
    const auto n = static_cast<std::size_t>(std::lround(dur * kRate));
    std::vector<double> raw =
        plan.speech ? synth_speech(plan, rng, n) : synth_alarm(plan, rng, n);

    double peak = 0.0;
    for (double v : raw) peak = std::max(peak, std::abs(v));
    const double target = 0.5 * (1.0 + rng.uniform(-0.2, 0.2));
    const double scale = peak > 0.0 ? target / peak : 0.0;
    Waveform w;
    w.sample_rate = kRate;
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) w.samples[i] = raw[i] * scale;
    return w;
}

}  // namespace

TaxonomyTree synth_taxonomy(const SynthSpec& spec) {
    std::string text;
    for (const LeafPlan& p : plan_leaves(spec)) {
        text += p.id + "\t" + p.mid + "\t" + p.top;
        if (p.speech) text += "\tsid";
        text += "\n";
    }
    return TaxonomyTree::parse(text);
}

Waveform synth_waveform(const SynthSpec& spec, int leaf_index, int file_index) {
    const auto leaves = plan_leaves(spec);
    if (leaf_index < 0 || leaf_index >= static_cast<int>(leaves.size()))
        throw Error("synth_waveform: leaf index out of range");
    return synth_leaf_file(spec, leaves, leaf_index, file_index);
}

SynthResult synth_generate(const SynthSpec& spec, const std::string& out_dir, int jobs) {
    if (spec.top_classes < 1 || spec.mid_per_top < 1 || spec.leaves_per_mid < 1 ||
        spec.files_per_class < 1)
        throw Error("synth_generate: all shape counts must be positive");
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "wav", ec);
    if (ec) throw Error("synth_generate: cannot create output directory: " + out_dir);

    const auto leaves = plan_leaves(spec);
    const auto generate_class = [&](int leaf_index) {
        std::vector<ManifestEntry> entries;
        char name[160];
        for (int f = 0; f < spec.files_per_class; ++f) {
            const Waveform w = synth_leaf_file(spec, leaves, leaf_index, f);
            std::snprintf(name, sizeof name, "wav/%s_%03d.wav",
                          leaves[static_cast<std::size_t>(leaf_index)].id.c_str(), f);
            write_wav_file((fs::path(out_dir) / name).string(), w);
            ManifestEntry e;
            e.path = name;
            e.leaf = leaves[static_cast<std::size_t>(leaf_index)].id;
            e.duration_s = w.duration();
            entries.push_back(std::move(e));
        }
        return entries;
    };

    SynthResult result;
    result.tree = synth_taxonomy(spec);
    if (jobs <= 1) {
        for (int i = 0; i < static_cast<int>(leaves.size()); ++i)
            for (auto& e : generate_class(i)) result.manifest.entries.push_back(std::move(e));
    } else {
        // classes are independent and seeded individually, so any schedule
        // produces identical files; results are collected in class order
        std::vector<std::future<std::vector<ManifestEntry>>> futures;
        for (int i = 0; i < static_cast<int>(leaves.size()); ++i) {
            if (static_cast<int>(futures.size()) >= jobs) {
                for (auto& e : futures.front().get())
                    result.manifest.entries.push_back(std::move(e));
                futures.erase(futures.begin());
            }
            futures.push_back(std::async(std::launch::async, generate_class, i));
        }
        for (auto& fut : futures)
            for (auto& e : fut.get()) result.manifest.entries.push_back(std::move(e));
    }

    result.taxonomy_path = (fs::path(out_dir) / "taxonomy.tsv").string();
    result.manifest_path = (fs::path(out_dir) / "manifest.tsv").string();
    write_text_file(result.taxonomy_path, result.tree.serialize());
    result.manifest.save(result.manifest_path);
    return result;
}

}  // namespace hiproto
