// hiproto: hierarchical few-shot audio classification pipeline.
// Batch commands over taxonomies, corpora, encoders, prototype banks and
// evaluation reports. All randomized commands take an explicit --seed so runs
// can be replayed exactly.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

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

namespace fs = std::filesystem;
using namespace hiproto;

namespace {

std::string dir_of(const std::string& path) { return fs::path(path).parent_path().string(); }

void echo_config(CLI::App& app, const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_text_file((fs::path(out_dir) / "config.ini").string(),
                    app.config_to_str(true, false));
}

ArchConfig arch_from(const std::string& name, int embed_dim,
                     const std::vector<int>& channels) {
    ArchConfig arch = name == "small" ? ArchConfig::gradcheck_small() : ArchConfig{};
    if (embed_dim > 0) arch.embed_dim = embed_dim;
    if (!channels.empty()) arch.channels = channels;
    return arch;
}

DistanceKind::Variant variant_from(const std::string& name) {
    if (name == "euclid") return DistanceKind::Variant::SquaredEuclidean;
    if (name == "angular") return DistanceKind::Variant::Angular;
    throw Error("unknown distance kind: " + name + " (expected euclid or angular)");
}

LossSpec loss_from(const std::string& mode, double alpha) {
    LossSpec spec;
    spec.alpha = alpha;
    if (mode == "hier") {
        spec.mode = LossSpec::Mode::Hierarchical;
    } else if (mode == "flat") {
        spec.mode = LossSpec::Mode::Flat;
    } else {
        throw Error("unknown loss mode: " + mode + " (expected hier or flat)");
    }
    return spec;
}

std::string level_name(int level) { return "L" + std::to_string(level + 1); }

void print_report(const std::vector<std::array<std::string, 4>>& rows, const std::string& format) {
    if (format == "pretty") {
        std::printf("%-10s %-6s %10s %10s\n", "metric", "level", "mean", "sem");
        for (const auto& r : rows)
            std::printf("%-10s %-6s %10s %10s\n", r[0].c_str(), r[1].c_str(), r[2].c_str(),
                        r[3].c_str());
    } else {
        for (const auto& r : rows)
            std::printf("%s\t%s\t%s\t%s\n", r[0].c_str(), r[1].c_str(), r[2].c_str(),
                        r[3].c_str());
    }
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

struct GateViolation {
    bool any = false;
    void check(bool ok, const std::string& what) {
        if (!ok) {
            std::fprintf(stderr, "gate failed: %s\n", what.c_str());
            any = true;
        }
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hierarchical few-shot audio classification engine"};
    app.require_subcommand(1);
    app.set_config("--config", "", "read option defaults from an INI file");
    int jobs = 1;
    app.add_option("--jobs", jobs, "worker cap for parallel steps")->capture_default_str();

    // ---- taxonomy validate
    auto* taxonomy_cmd = app.add_subcommand("taxonomy", "taxonomy file operations");
    taxonomy_cmd->require_subcommand(1);
    auto* validate_cmd = taxonomy_cmd->add_subcommand("validate", "parse and validate a taxonomy file");
    std::string tax_path;
    validate_cmd->add_option("--tax", tax_path, "taxonomy file")->required();

    // ---- corpus synth / split
    auto* corpus_cmd = app.add_subcommand("corpus", "dataset generation and folds");
    corpus_cmd->require_subcommand(1);
    auto* synth_cmd = corpus_cmd->add_subcommand("synth", "generate the synthetic toy corpus");
    std::string out_dir;
    std::uint64_t seed = 0;
    SynthSpec synth_spec;
    synth_cmd->add_option("--out", out_dir, "output directory")->required();
    synth_cmd->add_option("--seed", seed, "master seed")->required();
    synth_cmd->add_option("--per-class", synth_spec.files_per_class, "files per leaf class")
        ->capture_default_str();
    synth_cmd->add_option("--tops", synth_spec.top_classes, "level-0 classes")
        ->capture_default_str();
    synth_cmd->add_option("--mids", synth_spec.mid_per_top, "children per level-0 class")
        ->capture_default_str();
    synth_cmd->add_option("--leaves", synth_spec.leaves_per_mid, "leaves per mid class")
        ->capture_default_str();

    auto* split_cmd = corpus_cmd->add_subcommand("split", "stratified fold assignment");
    std::string manifest_path, out_file;
    int folds = 10;
    split_cmd->add_option("--manifest", manifest_path, "manifest file")->required();
    split_cmd->add_option("--folds", folds, "fold count")->capture_default_str();
    split_cmd->add_option("--seed", seed, "split seed")->required();
    split_cmd->add_option("--out", out_file, "fold assignment output file")->required();

    // ---- features extract
    auto* features_cmd = app.add_subcommand("features", "feature extraction");
    features_cmd->require_subcommand(1);
    auto* extract_cmd = features_cmd->add_subcommand("extract", "log-mel features per manifest row");
    extract_cmd->add_option("--manifest", manifest_path, "manifest file")->required();
    extract_cmd->add_option("--out", out_dir, "output directory")->required();
    extract_cmd->add_option("--seed", seed, "segment sampling seed")->required();

    // ---- train
    auto* train_cmd = app.add_subcommand("train", "episodic training");
    std::string tax_opt, mode = "hier", distance = "euclid", arch_name = "default";
    double alpha = 1.0, lr = 1e-3, l2 = 1e-4;
    double stop_top = 0.0, stop_leaf = 0.0;
    int embed_dim = 0;
    std::vector<int> channels;
    EpisodeSpec episode_spec;
    std::vector<int> config_weights{60, 20, 20};
    bool no_noise = false, no_reverb = false;
    double snr_lo = 10.0, snr_hi = 20.0;
    int checkpoint_every = 0;
    train_cmd->add_option("--manifest", manifest_path)->required();
    train_cmd->add_option("--tax", tax_opt)->required();
    train_cmd->add_option("--out", out_dir, "output directory")->required();
    train_cmd->add_option("--seed", seed, "master seed")->required();
    train_cmd->add_option("--alpha", alpha, "level weight exponent")->capture_default_str();
    train_cmd->add_option("--mode", mode, "hier | flat")->capture_default_str();
    train_cmd->add_option("--distance", distance, "euclid | angular")->capture_default_str();
    train_cmd->add_option("--epochs", episode_spec.epochs)->capture_default_str();
    train_cmd->add_option("--episodes-per-epoch", episode_spec.episodes_per_epoch)
        ->capture_default_str();
    train_cmd->add_option("--ways", episode_spec.ways)->capture_default_str();
    train_cmd->add_option("--shots", episode_spec.shots)->capture_default_str();
    train_cmd->add_option("--queries", episode_spec.queries)->capture_default_str();
    train_cmd->add_option("--config-weights", config_weights,
                          "SED-only / SED&SID / SID-only draw weights")
        ->expected(3);
    train_cmd->add_option("--lr", lr)->capture_default_str();
    train_cmd->add_option("--l2", l2)->capture_default_str();
    train_cmd->add_flag("--no-noise-aug", no_noise, "disable noise mixing");
    train_cmd->add_flag("--no-reverb-aug", no_reverb, "disable reverb");
    train_cmd->add_option("--snr-lo", snr_lo)->capture_default_str();
    train_cmd->add_option("--snr-hi", snr_hi)->capture_default_str();
    train_cmd->add_option("--checkpoint-every", checkpoint_every, "epochs between checkpoints")
        ->capture_default_str();
    train_cmd->add_option("--stop-top-acc", stop_top, "early stop threshold, level 0")
        ->capture_default_str();
    train_cmd->add_option("--stop-leaf-acc", stop_leaf, "early stop threshold, leaf level")
        ->capture_default_str();
    train_cmd->add_option("--arch", arch_name, "default | small")->capture_default_str();
    train_cmd->add_option("--embed-dim", embed_dim, "embedding dimension override");
    train_cmd->add_option("--channels", channels, "conv widths override");

    // ---- bank build
    auto* bank_cmd = app.add_subcommand("bank", "prototype bank operations");
    bank_cmd->require_subcommand(1);
    auto* bank_build_cmd = bank_cmd->add_subcommand("build", "build a bank from a manifest");
    std::string weights_path, bank_path;
    int bank_shots = 0;
    bool compact = false;
    bank_build_cmd->add_option("--manifest", manifest_path)->required();
    bank_build_cmd->add_option("--tax", tax_opt)->required();
    bank_build_cmd->add_option("--weights", weights_path)->required();
    bank_build_cmd->add_option("--out", out_file, "bank output file")->required();
    bank_build_cmd->add_option("--seed", seed)->required();
    bank_build_cmd->add_option("--shots", bank_shots, "recordings per class (0 = all)")
        ->capture_default_str();
    bank_build_cmd->add_flag("--compact", compact, "drop support counts in the file");

    // ---- enroll
    auto* enroll_cmd = app.add_subcommand("enroll", "add recordings of a leaf class to a bank");
    std::string leaf_id;
    std::vector<std::string> wav_paths;
    enroll_cmd->add_option("--bank", bank_path)->required();
    enroll_cmd->add_option("--tax", tax_opt)->required();
    enroll_cmd->add_option("--weights", weights_path)->required();
    enroll_cmd->add_option("--leaf", leaf_id)->required();
    enroll_cmd->add_option("--wav", wav_paths, "recordings to enroll")->required();
    enroll_cmd->add_option("--out", out_file, "updated bank file")->required();
    enroll_cmd->add_option("--seed", seed, "segment sampling seed")->capture_default_str();

    // ---- classify
    auto* classify_cmd = app.add_subcommand("classify", "per-level prediction for one recording");
    std::vector<double> thresholds;
    bool consistent = false;
    classify_cmd->add_option("--bank", bank_path)->required();
    classify_cmd->add_option("--tax", tax_opt)->required();
    classify_cmd->add_option("--weights", weights_path)->required();
    classify_cmd->add_option("--wav", wav_paths, "recording to classify")->required();
    classify_cmd->add_option("--distance", distance, "euclid | angular")->capture_default_str();
    classify_cmd->add_option("--threshold", thresholds,
                             "open-set distance cutoff per level (one value or H+1 values)");
    classify_cmd->add_flag("--consistent", consistent,
                           "snap upper levels onto the leaf prediction's ancestors");
    classify_cmd->add_option("--seed", seed, "segment sampling seed")->capture_default_str();

    // ---- eval accuracy / eer
    auto* eval_cmd = app.add_subcommand("eval", "post-training metrics");
    eval_cmd->require_subcommand(1);
    auto* acc_cmd = eval_cmd->add_subcommand("accuracy", "episodic per-level accuracy and HM");
    EvalSpec eval_spec;
    std::string pool = "both", format = "tsv";
    std::vector<std::string> min_acc;
    double max_hm = 0.0;
    bool eval_augment = false;
    acc_cmd->add_option("--manifest", manifest_path)->required();
    acc_cmd->add_option("--tax", tax_opt)->required();
    acc_cmd->add_option("--weights", weights_path)->required();
    acc_cmd->add_option("--seed", seed)->required();
    acc_cmd->add_option("--episodes", eval_spec.episodes)->capture_default_str();
    acc_cmd->add_option("--ways", eval_spec.ways)->capture_default_str();
    acc_cmd->add_option("--shots", eval_spec.shots)->capture_default_str();
    acc_cmd->add_option("--queries", eval_spec.queries)->capture_default_str();
    acc_cmd->add_option("--pool", pool, "sed | sid | both")->capture_default_str();
    acc_cmd->add_option("--distance", distance)->capture_default_str();
    acc_cmd->add_flag("--augment", eval_augment, "evaluate on augmented segments");
    acc_cmd->add_option("--snr-lo", snr_lo)->capture_default_str();
    acc_cmd->add_option("--snr-hi", snr_hi)->capture_default_str();
    acc_cmd->add_flag("--no-reverb-aug", no_reverb, "disable reverb when augmenting");
    acc_cmd->add_option("--format", format, "tsv | pretty")->capture_default_str();
    acc_cmd->add_option("--out", out_dir, "optional output directory for the report");
    acc_cmd->add_option("--min-acc", min_acc,
                        "acceptance gate LEVEL:VALUE (e.g. 1:0.9), repeatable");
    acc_cmd->add_option("--max-hm", max_hm, "acceptance gate on the hierarchical mistake");

    auto* eer_cmd = eval_cmd->add_subcommand("eer", "speaker-verification equal error rate");
    int trials = 100, pairs = 1000;
    double max_eer = 0.0;
    eer_cmd->add_option("--manifest", manifest_path)->required();
    eer_cmd->add_option("--tax", tax_opt)->required();
    eer_cmd->add_option("--weights", weights_path)->required();
    eer_cmd->add_option("--seed", seed)->required();
    eer_cmd->add_option("--trials", trials)->capture_default_str();
    eer_cmd->add_option("--pairs", pairs)->capture_default_str();
    eer_cmd->add_option("--format", format, "tsv | pretty")->capture_default_str();
    eer_cmd->add_option("--max-eer", max_eer, "acceptance gate");

    // ---- gradcheck
    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    GradCheckOptions grad_opt;
    grad_cmd->add_option("--seed", grad_opt.seed)->required();
    grad_cmd->add_option("--alpha", grad_opt.loss.alpha)->capture_default_str();
    grad_cmd->add_option("--distance", distance)->capture_default_str();
    grad_cmd->add_option("--mode", mode, "hier | flat")->capture_default_str();
    grad_cmd->add_option("--samples", grad_opt.param_samples)->capture_default_str();
    grad_cmd->add_option("--epsilon", grad_opt.epsilon)->capture_default_str();

    // ---- describe
    auto* describe_cmd = app.add_subcommand("describe", "parameter and MAC counts");
    describe_cmd->add_option("--weights", weights_path, "describe the file's architecture");
    describe_cmd->add_option("--arch", arch_name, "default | small")->capture_default_str();
    describe_cmd->add_option("--embed-dim", embed_dim);
    describe_cmd->add_option("--channels", channels);
    describe_cmd->add_option("--format", format, "tsv | pretty")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*validate_cmd) {
            const TaxonomyTree tree = TaxonomyTree::parse(read_text_file(tax_path));
            std::printf("height\t%d\n", tree.height());
            for (int level = 0; level <= tree.height(); ++level)
                std::printf("level %d\t%zu classes\n", level, tree.level_size(level));
            int speakers = 0;
            for (const auto& leaf : tree.leaves())
                if (tree.is_speaker_leaf(leaf)) ++speakers;
            std::printf("speaker leaves\t%d\n", speakers);
            std::printf("digest\t%s\n", to_hex(tree.digest()).c_str());
            return 0;
        }

        if (*synth_cmd) {
            synth_spec.seed = seed;
            const SynthResult result = synth_generate(synth_spec, out_dir, jobs);
            echo_config(app, out_dir);
            std::printf("taxonomy\t%s\n", result.taxonomy_path.c_str());
            std::printf("manifest\t%s\n", result.manifest_path.c_str());
            std::printf("files\t%zu\n", result.manifest.entries.size());
            return 0;
        }

        if (*split_cmd) {
            const Manifest manifest = Manifest::load(manifest_path);
            const FoldAssignment assignment = stratified_split(manifest, folds, seed);
            write_text_file(out_file, serialize_folds(manifest, assignment));
            std::printf("folds\t%d\nentries\t%zu\n", folds, assignment.size());
            return 0;
        }

        if (*extract_cmd) {
            const Manifest manifest = Manifest::load(manifest_path);
            const std::string base = dir_of(manifest_path);
            fs::create_directories(out_dir);
            std::string index;
            WaveformCache cache;
            for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
                const auto& entry = manifest.entries[i];
                const Segment seg =
                    sample_segment(cache.get(resolve_path(base, entry.path)), mix_seed(seed, i));
                char name[48];
                std::snprintf(name, sizeof name, "feat_%06zu.fea", i);
                write_features_file((fs::path(out_dir) / name).string(), log_mel(seg.wav));
                index += entry.path;
                index += '\t';
                index += name;
                index += '\t';
                index += entry.leaf;
                index += '\n';
            }
            write_text_file((fs::path(out_dir) / "features.tsv").string(), index);
            echo_config(app, out_dir);
            std::printf("features\t%zu\n", manifest.entries.size());
            return 0;
        }

        if (*train_cmd) {
            const Manifest manifest = Manifest::load(manifest_path);
            const TaxonomyTree tree = TaxonomyTree::parse(read_text_file(tax_opt));
            FitConfig config;
            config.arch = arch_from(arch_name, embed_dim, channels);
            config.episode = episode_spec;
            std::copy(config_weights.begin(), config_weights.end(),
                      config.episode.config_weights.begin());
            config.loss = loss_from(mode, alpha);
            config.distance = variant_from(distance);
            config.seed = seed;
            config.lr = lr;
            config.l2 = l2;
            config.augment.noise = !no_noise;
            config.augment.reverb = !no_reverb;
            config.augment.spec.snr_db_lo = snr_lo;
            config.augment.spec.snr_db_hi = snr_hi;
            config.checkpoint_every = checkpoint_every;
            config.out_dir = out_dir;
            config.stop_top_acc = stop_top;
            config.stop_leaf_acc = stop_leaf;
            echo_config(app, out_dir);
            const FitResult result = fit(manifest, dir_of(manifest_path), tree, config);
            write_weights_file((fs::path(out_dir) / "weights.hpw").string(), result.params);
            const EpochRow& last = result.log.back();
            std::printf("epochs\t%zu\nsteps\t%d\nloss\t%s\n", result.log.size(),
                        result.total_steps, fmt(last.mean_loss).c_str());
            for (std::size_t h = 0; h < last.level_accuracy.size(); ++h)
                std::printf("acc_%s\t%s\n", level_name(static_cast<int>(h)).c_str(),
                            fmt(last.level_accuracy[h]).c_str());
            return 0;
        }

        if (*bank_build_cmd) {
            const Manifest manifest = Manifest::load(manifest_path);
            const TaxonomyTree tree = TaxonomyTree::parse(read_text_file(tax_opt));
            const EncoderParams params = read_weights_file(weights_path);
            const PrototypeBank bank =
                build_bank(params, manifest, dir_of(manifest_path), tree, bank_shots, seed);
            write_bank_file(out_file, bank, compact);
            std::printf("bank\t%s\nlevels\t%d\ndim\t%d\n", out_file.c_str(), bank.levels(),
                        bank.dim());
            return 0;
        }

        if (*enroll_cmd) {
            const TaxonomyTree tree = TaxonomyTree::parse(read_text_file(tax_opt));
            const EncoderParams params = read_weights_file(weights_path);
            PrototypeBank bank = read_bank_file(bank_path, tree);
            std::vector<Embedding> embeddings;
            for (std::size_t i = 0; i < wav_paths.size(); ++i) {
                const Waveform w = load_and_normalize_file(wav_paths[i]);
                const Segment seg = sample_segment(w, mix_seed(seed, i));
                embeddings.push_back(encoder_forward(params, log_mel(seg.wav)));
            }
            bank = enroll(bank, tree, leaf_id, embeddings);
            write_bank_file(out_file, bank);
            std::printf("enrolled\t%zu\nleaf\t%s\n", embeddings.size(), leaf_id.c_str());
            return 0;
        }

        if (*classify_cmd) {
            const TaxonomyTree tree = TaxonomyTree::parse(read_text_file(tax_opt));
            const EncoderParams params = read_weights_file(weights_path);
            const PrototypeBank bank = read_bank_file(bank_path, tree);
            const DistanceKind kind = distance_kind_for(params, variant_from(distance));
            PredictOptions options;
            options.ancestor_consistency = consistent;
            if (thresholds.size() == 1)
                options.reject_thresholds.assign(static_cast<std::size_t>(tree.height()) + 1,
                                                 thresholds[0]);
            else if (!thresholds.empty())
                options.reject_thresholds = thresholds;
            const Waveform w = load_and_normalize_file(wav_paths.at(0));
            const Segment seg = sample_segment(w, seed);
            const Embedding emb = encoder_forward(params, log_mel(seg.wav));
            const Prediction pred = predict(emb, bank, tree, kind, options);
            for (std::size_t h = 0; h < pred.per_level.size(); ++h) {
                const auto& lp = pred.per_level[h];
                std::printf("%s\t%s\t%s\t%s\n", level_name(static_cast<int>(h)).c_str(),
                            lp.unknown ? "UNKNOWN" : lp.label.c_str(),
                            lp.unknown ? "-" : fmt(lp.posterior).c_str(),
                            fmt(lp.min_distance).c_str());
            }
            return 0;
        }

        if (*acc_cmd) {
            const Manifest manifest = Manifest::load(manifest_path);
            const TaxonomyTree tree = TaxonomyTree::parse(read_text_file(tax_opt));
            const EncoderParams params = read_weights_file(weights_path);
            if (pool == "sed")
                eval_spec.pool = BatchConfig::SedOnly;
            else if (pool == "sid")
                eval_spec.pool = BatchConfig::SidOnly;
            else if (pool == "both")
                eval_spec.pool = BatchConfig::SedAndSid;
            else
                throw Error("unknown pool: " + pool);
            AugmentConfig augment;
            augment.noise = true;
            augment.reverb = !no_reverb;
            augment.spec.snr_db_lo = snr_lo;
            augment.spec.snr_db_hi = snr_hi;
            const EvalRun run =
                run_eval(params, manifest, dir_of(manifest_path), tree, eval_spec,
                         variant_from(distance), eval_augment ? &augment : nullptr, seed);
            const auto acc = per_level_accuracy(run);
            const auto hm = hierarchical_mistake(run, tree);

            std::vector<std::array<std::string, 4>> rows;
            for (std::size_t h = 0; h < acc.size(); ++h)
                rows.push_back({"acc", level_name(static_cast<int>(h)), fmt(acc[h].mean),
                                fmt(acc[h].sem)});
            if (hm)
                rows.push_back({"hmistake", level_name(tree.height()), fmt(hm->mean),
                                fmt(hm->sem)});
            else
                rows.push_back({"hmistake", level_name(tree.height()), "-", "-"});
            print_report(rows, format);
            if (!out_dir.empty()) {
                std::string text;
                for (const auto& r : rows)
                    text += r[0] + "\t" + r[1] + "\t" + r[2] + "\t" + r[3] + "\n";
                fs::create_directories(out_dir);
                write_text_file((fs::path(out_dir) / "accuracy.tsv").string(), text);
                echo_config(app, out_dir);
            }

            GateViolation gate;
            for (const auto& spec_str : min_acc) {
                const auto colon = spec_str.find(':');
                if (colon == std::string::npos)
                    throw Error("bad --min-acc value, expected LEVEL:VALUE");
                const int level = std::stoi(spec_str.substr(0, colon)) - 1;
                const double want = std::stod(spec_str.substr(colon + 1));
                if (level < 0 || level > tree.height())
                    throw Error("--min-acc level out of range");
                gate.check(acc[static_cast<std::size_t>(level)].mean >= want,
                           "acc " + level_name(level) + " >= " + fmt(want));
            }
            if (max_hm > 0.0 && hm) gate.check(hm->mean <= max_hm, "hmistake <= " + fmt(max_hm));
            return gate.any ? 1 : 0;
        }

        if (*eer_cmd) {
            const Manifest manifest = Manifest::load(manifest_path);
            const TaxonomyTree tree = TaxonomyTree::parse(read_text_file(tax_opt));
            const EncoderParams params = read_weights_file(weights_path);
            const MeanSem result =
                eer_protocol(params, manifest, dir_of(manifest_path), tree, trials, pairs, seed);
            print_report({{"eer", "-", fmt(result.mean), fmt(result.sem)}}, format);
            if (max_eer > 0.0 && result.mean > max_eer) {
                std::fprintf(stderr, "gate failed: eer <= %s\n", fmt(max_eer).c_str());
                return 1;
            }
            return 0;
        }

        if (*grad_cmd) {
            grad_opt.distance = variant_from(distance);
            grad_opt.loss.mode = loss_from(mode, grad_opt.loss.alpha).mode;
            const GradCheckResult result = gradcheck_episode(grad_opt);
            std::printf("samples\t%d\nmax_rel_error\t%.3e\n", result.samples,
                        result.max_rel_error);
            return result.max_rel_error < 1e-3 ? 0 : 1;
        }

        if (*describe_cmd) {
            ArchConfig arch;
            if (!weights_path.empty())
                arch = read_weights_file(weights_path).arch;
            else
                arch = arch_from(arch_name, embed_dim, channels);
            const DescribeResult r = describe(arch);
            if (format == "pretty") {
                std::printf("%-16s %-14s %12s %14s\n", "layer", "shape", "params", "macs");
                for (const auto& l : r.layers)
                    std::printf("%-16s %-14s %12zu %14zu\n", l.name.c_str(), l.shape.c_str(),
                                l.params, l.macs);
                std::printf("%-16s %-14s %12zu %14zu\n", "total", "", r.total_params,
                            r.total_macs);
            } else {
                for (const auto& l : r.layers)
                    std::printf("%s\t%s\t%zu\t%zu\n", l.name.c_str(), l.shape.c_str(), l.params,
                                l.macs);
                std::printf("total\t\t%zu\t%zu\n", r.total_params, r.total_macs);
            }
            return 0;
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
