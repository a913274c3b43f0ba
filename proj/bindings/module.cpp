// Python bindings for the core pipeline: taxonomy queries, the DSP front end,
// episodic training, prototype banks, classification and evaluation metrics.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>

#include "hiproto/classifier.hpp"
#include "hiproto/corpus.hpp"
#include "hiproto/dsp.hpp"
#include "hiproto/encoder.hpp"
#include "hiproto/evaluator.hpp"
#include "hiproto/gradcheck.hpp"
#include "hiproto/protostore.hpp"
#include "hiproto/rng.hpp"
#include "hiproto/synth.hpp"
#include "hiproto/taxonomy.hpp"
#include "hiproto/trainer.hpp"

namespace py = pybind11;
using namespace hiproto;

namespace {

Waveform waveform_from(const py::array_t<double>& samples) {
    Waveform w;
    w.sample_rate = kSampleRate;
    const auto buf = samples.request();
    if (buf.ndim != 1) throw Error("expected a 1-d sample array");
    const auto* p = static_cast<const double*>(buf.ptr);
    w.samples.assign(p, p + buf.shape[0]);
    return w;
}

py::array_t<double> array_from(const std::vector<double>& v) {
    py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

py::array_t<double> features_to_array(const LogMelSpectrogram& f) {
    py::array_t<double> out({kMelBins, kNumFrames});
    std::copy(f.values.begin(), f.values.end(), out.mutable_data());
    return out;
}

LogMelSpectrogram features_from_array(const py::array_t<double>& a) {
    const auto buf = a.request();
    if (buf.ndim != 2 || buf.shape[0] != kMelBins || buf.shape[1] != kNumFrames)
        throw Error("expected a (64, 97) feature array");
    LogMelSpectrogram f;
    const auto* p = static_cast<const double*>(buf.ptr);
    std::copy(p, p + f.values.size(), f.values.begin());
    return f;
}

DistanceKind kind_from(const EncoderParams& params, const std::string& name) {
    if (name == "euclid") return DistanceKind::squared_euclidean();
    if (name == "angular") return distance_kind_for(params, DistanceKind::Variant::Angular);
    throw Error("unknown distance kind: " + name);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "hierarchical few-shot audio classification engine";
    m.attr("__version__") = "0.1.0";

    py::register_exception<Error>(m, "HiprotoError");

    py::class_<TaxonomyTree>(m, "TaxonomyTree")
        .def_static("parse", [](const std::string& text) { return TaxonomyTree::parse(text); },
                    py::arg("text"))
        .def_static("load",
                    [](const std::string& path) {
                        return TaxonomyTree::parse(read_text_file(path));
                    },
                    py::arg("path"))
        .def_property_readonly("height", &TaxonomyTree::height)
        .def("contains", &TaxonomyTree::contains)
        .def("level_of", &TaxonomyTree::level_of)
        .def("is_speaker_leaf", &TaxonomyTree::is_speaker_leaf)
        .def("ancestor_at", &TaxonomyTree::ancestor_at)
        .def("lca_depth", &TaxonomyTree::lca_depth)
        .def("level_classes", &TaxonomyTree::level_classes)
        .def("leaves", &TaxonomyTree::leaves)
        .def("serialize", &TaxonomyTree::serialize)
        .def("digest", [](const TaxonomyTree& t) { return to_hex(t.digest()); });

    m.def(
        "synth_corpus",
        [](const std::string& out_dir, std::uint64_t seed, int files_per_class, int tops,
           int mids, int leaves) {
            SynthSpec spec;
            spec.seed = seed;
            spec.files_per_class = files_per_class;
            spec.top_classes = tops;
            spec.mid_per_top = mids;
            spec.leaves_per_mid = leaves;
            const SynthResult r = synth_generate(spec, out_dir);
            return py::make_tuple(r.taxonomy_path, r.manifest_path,
                                  r.manifest.entries.size());
        },
        py::arg("out_dir"), py::arg("seed"), py::arg("files_per_class") = 20,
        py::arg("tops") = 2, py::arg("mids") = 2, py::arg("leaves") = 3,
        "Generate the deterministic synthetic toy corpus; returns (taxonomy_path, "
        "manifest_path, file_count).");

    m.def(
        "load_wav",
        [](const std::string& path) {
            const Waveform w = load_and_normalize_file(path);
            return array_from(w.samples);
        },
        py::arg("path"), "Decode, downmix and resample a WAV file to 16 kHz mono in [-1, 1].");

    m.def(
        "log_mel",
        [](const py::array_t<double>& samples) {
            return features_to_array(log_mel(waveform_from(samples)));
        },
        py::arg("samples"), "64x97 log-mel features of a 1 s, 16 kHz segment.");

    m.def(
        "sample_segment",
        [](const py::array_t<double>& samples, std::uint64_t seed) {
            const Segment s = sample_segment(waveform_from(samples), seed);
            return py::make_tuple(array_from(s.wav.samples), s.offset, s.gated);
        },
        py::arg("samples"), py::arg("seed"),
        "Draw a 1 s window passing the silence gate; returns (samples, offset, gated).");

    m.def(
        "mix_noise",
        [](const py::array_t<double>& signal, const py::array_t<double>& noise, double snr_db) {
            return array_from(mix_noise(waveform_from(signal), waveform_from(noise), snr_db)
                                  .samples);
        },
        py::arg("signal"), py::arg("noise"), py::arg("snr_db"));

    m.def("stratified_split",
          [](const std::string& manifest_path, int folds, std::uint64_t seed) {
              return stratified_split(Manifest::load(manifest_path), folds, seed);
          },
          py::arg("manifest_path"), py::arg("folds"), py::arg("seed"));

    m.def(
        "gradcheck",
        [](std::uint64_t seed, double alpha, const std::string& mode,
           const std::string& distance, int samples, double epsilon) {
            GradCheckOptions opt;
            opt.seed = seed;
            opt.loss.alpha = alpha;
            opt.loss.mode = mode == "flat" ? LossSpec::Mode::Flat : LossSpec::Mode::Hierarchical;
            opt.distance = distance == "angular" ? DistanceKind::Variant::Angular
                                                 : DistanceKind::Variant::SquaredEuclidean;
            opt.param_samples = samples;
            opt.epsilon = epsilon;
            const GradCheckResult r = gradcheck_episode(opt);
            return py::make_tuple(r.max_rel_error, r.samples);
        },
        py::arg("seed"), py::arg("alpha") = 1.0, py::arg("mode") = "hier",
        py::arg("distance") = "euclid", py::arg("samples") = 200, py::arg("epsilon") = 1e-4,
        "Finite-difference check of the full objective; returns (max_rel_error, samples).");

    m.def(
        "fit",
        [](const std::string& manifest_path, const std::string& taxonomy_path,
           const std::string& out_dir, std::uint64_t seed, double alpha,
           const std::string& mode, const std::string& distance, int epochs,
           int episodes_per_epoch, int ways, int shots, int queries,
           const std::vector<int>& config_weights, const std::string& arch, int embed_dim,
           double lr, double l2, bool noise_aug, bool reverb_aug, double stop_top_acc,
           double stop_leaf_acc) {
            FitConfig config;
            config.arch = arch == "small" ? ArchConfig::gradcheck_small() : ArchConfig{};
            if (embed_dim > 0) config.arch.embed_dim = embed_dim;
            config.episode.epochs = epochs;
            config.episode.episodes_per_epoch = episodes_per_epoch;
            config.episode.ways = ways;
            config.episode.shots = shots;
            config.episode.queries = queries;
            if (config_weights.size() != 3) throw Error("config_weights must have 3 entries");
            std::copy(config_weights.begin(), config_weights.end(),
                      config.episode.config_weights.begin());
            config.loss.alpha = alpha;
            config.loss.mode =
                mode == "flat" ? LossSpec::Mode::Flat : LossSpec::Mode::Hierarchical;
            config.distance = distance == "angular" ? DistanceKind::Variant::Angular
                                                    : DistanceKind::Variant::SquaredEuclidean;
            config.seed = seed;
            config.lr = lr;
            config.l2 = l2;
            config.augment.noise = noise_aug;
            config.augment.reverb = reverb_aug;
            config.out_dir = out_dir;
            config.stop_top_acc = stop_top_acc;
            config.stop_leaf_acc = stop_leaf_acc;

            const TaxonomyTree tree = TaxonomyTree::parse(read_text_file(taxonomy_path));
            const Manifest manifest = Manifest::load(manifest_path);
            const std::string base =
                std::filesystem::path(manifest_path).parent_path().string();
            const FitResult result = fit(manifest, base, tree, config);
            const std::string weights_path =
                (std::filesystem::path(out_dir) / "weights.hpw").string();
            write_weights_file(weights_path, result.params);

            py::list log;
            for (const auto& row : result.log) {
                py::dict d;
                d["epoch"] = row.epoch;
                d["loss"] = row.mean_loss;
                d["accuracy"] = row.level_accuracy;
                log.append(d);
            }
            py::dict out;
            out["weights"] = weights_path;
            out["log"] = log;
            out["steps"] = result.total_steps;
            return out;
        },
        py::arg("manifest_path"), py::arg("taxonomy_path"), py::arg("out_dir"), py::arg("seed"),
        py::arg("alpha") = 1.0, py::arg("mode") = "hier", py::arg("distance") = "euclid",
        py::arg("epochs") = 1000, py::arg("episodes_per_epoch") = 100, py::arg("ways") = 12,
        py::arg("shots") = 5, py::arg("queries") = 5,
        py::arg("config_weights") = std::vector<int>{60, 20, 20}, py::arg("arch") = "default",
        py::arg("embed_dim") = 0, py::arg("lr") = 1e-3, py::arg("l2") = 1e-4,
        py::arg("noise_aug") = true, py::arg("reverb_aug") = true,
        py::arg("stop_top_acc") = 0.0, py::arg("stop_leaf_acc") = 0.0,
        "Episodic training; writes weights under out_dir and returns the epoch log.");

    m.def(
        "embed_wav",
        [](const std::string& weights_path, const std::string& wav_path, std::uint64_t seed) {
            const EncoderParams params = read_weights_file(weights_path);
            const Segment seg = sample_segment(load_and_normalize_file(wav_path), seed);
            return array_from(encoder_forward(params, log_mel(seg.wav)));
        },
        py::arg("weights_path"), py::arg("wav_path"), py::arg("seed") = 0,
        "Embedding of one recording's sampled segment.");

    m.def(
        "build_bank",
        [](const std::string& weights_path, const std::string& manifest_path,
           const std::string& taxonomy_path, const std::string& out_path, std::uint64_t seed,
           int shots_per_class, bool compact) {
            const EncoderParams params = read_weights_file(weights_path);
            const TaxonomyTree tree = TaxonomyTree::parse(read_text_file(taxonomy_path));
            const Manifest manifest = Manifest::load(manifest_path);
            const std::string base =
                std::filesystem::path(manifest_path).parent_path().string();
            const PrototypeBank bank =
                build_bank(params, manifest, base, tree, shots_per_class, seed);
            write_bank_file(out_path, bank, compact);
            return out_path;
        },
        py::arg("weights_path"), py::arg("manifest_path"), py::arg("taxonomy_path"),
        py::arg("out_path"), py::arg("seed"), py::arg("shots_per_class") = 0,
        py::arg("compact") = false);

    m.def(
        "classify_wav",
        [](const std::string& weights_path, const std::string& bank_path,
           const std::string& taxonomy_path, const std::string& wav_path,
           const std::string& distance, const std::vector<double>& reject_thresholds,
           std::uint64_t seed) {
            const EncoderParams params = read_weights_file(weights_path);
            const TaxonomyTree tree = TaxonomyTree::parse(read_text_file(taxonomy_path));
            const PrototypeBank bank = read_bank_file(bank_path, tree);
            const DistanceKind kind = kind_from(params, distance);
            PredictOptions options;
            if (reject_thresholds.size() == 1)
                options.reject_thresholds.assign(static_cast<std::size_t>(tree.height()) + 1,
                                                 reject_thresholds[0]);
            else if (!reject_thresholds.empty())
                options.reject_thresholds = reject_thresholds;
            const Segment seg = sample_segment(load_and_normalize_file(wav_path), seed);
            const Embedding emb = encoder_forward(params, log_mel(seg.wav));
            const Prediction pred = predict(emb, bank, tree, kind, options);
            py::list out;
            for (const auto& lp : pred.per_level) {
                py::dict d;
                d["label"] = lp.unknown ? py::object(py::none()) : py::cast(lp.label);
                d["posterior"] = lp.posterior;
                d["distance"] = lp.min_distance;
                out.append(d);
            }
            return out;
        },
        py::arg("weights_path"), py::arg("bank_path"), py::arg("taxonomy_path"),
        py::arg("wav_path"), py::arg("distance") = "euclid",
        py::arg("reject_thresholds") = std::vector<double>{}, py::arg("seed") = 0,
        "Per-level prediction for one recording; label is None when rejected as unknown.");

    m.def(
        "eval_accuracy",
        [](const std::string& weights_path, const std::string& manifest_path,
           const std::string& taxonomy_path, std::uint64_t seed, int episodes, int ways,
           int shots, int queries, const std::string& pool, const std::string& distance,
           bool augment) {
            const EncoderParams params = read_weights_file(weights_path);
            const TaxonomyTree tree = TaxonomyTree::parse(read_text_file(taxonomy_path));
            const Manifest manifest = Manifest::load(manifest_path);
            const std::string base =
                std::filesystem::path(manifest_path).parent_path().string();
            EvalSpec spec;
            spec.episodes = episodes;
            spec.ways = ways;
            spec.shots = shots;
            spec.queries = queries;
            spec.pool = pool == "sed"   ? BatchConfig::SedOnly
                        : pool == "sid" ? BatchConfig::SidOnly
                                        : BatchConfig::SedAndSid;
            AugmentConfig aug;
            aug.reverb = false;
            const EvalRun run = run_eval(params, manifest, base, tree, spec,
                                         distance == "angular"
                                             ? DistanceKind::Variant::Angular
                                             : DistanceKind::Variant::SquaredEuclidean,
                                         augment ? &aug : nullptr, seed);
            const auto acc = per_level_accuracy(run);
            const auto hm = hierarchical_mistake(run, tree);
            py::dict out;
            py::list acc_list;
            for (const auto& a : acc) acc_list.append(py::make_tuple(a.mean, a.sem));
            out["accuracy"] = acc_list;
            out["hierarchical_mistake"] =
                hm ? py::object(py::make_tuple(hm->mean, hm->sem)) : py::object(py::none());
            return out;
        },
        py::arg("weights_path"), py::arg("manifest_path"), py::arg("taxonomy_path"),
        py::arg("seed"), py::arg("episodes") = 100, py::arg("ways") = 12, py::arg("shots") = 5,
        py::arg("queries") = 5, py::arg("pool") = "both", py::arg("distance") = "euclid",
        py::arg("augment") = false);

    m.def("eer", &eer, py::arg("genuine_scores"), py::arg("impostor_scores"),
          "Equal error rate from verification scores (higher = more genuine).");

    m.def(
        "eer_protocol",
        [](const std::string& weights_path, const std::string& manifest_path,
           const std::string& taxonomy_path, std::uint64_t seed, int trials, int pairs) {
            const EncoderParams params = read_weights_file(weights_path);
            const TaxonomyTree tree = TaxonomyTree::parse(read_text_file(taxonomy_path));
            const Manifest manifest = Manifest::load(manifest_path);
            const std::string base =
                std::filesystem::path(manifest_path).parent_path().string();
            const MeanSem r = eer_protocol(params, manifest, base, tree, trials, pairs, seed);
            return py::make_tuple(r.mean, r.sem);
        },
        py::arg("weights_path"), py::arg("manifest_path"), py::arg("taxonomy_path"),
        py::arg("seed"), py::arg("trials") = 100, py::arg("pairs") = 1000);

    m.def(
        "describe",
        [](const std::string& arch, int embed_dim) {
            ArchConfig config = arch == "small" ? ArchConfig::gradcheck_small() : ArchConfig{};
            if (embed_dim > 0) config.embed_dim = embed_dim;
            const DescribeResult r = describe(config);
            py::list layers;
            for (const auto& l : r.layers)
                layers.append(py::make_tuple(l.name, l.shape, l.params, l.macs));
            py::dict out;
            out["layers"] = layers;
            out["total_params"] = r.total_params;
            out["total_macs"] = r.total_macs;
            return out;
        },
        py::arg("arch") = "default", py::arg("embed_dim") = 0);
}
