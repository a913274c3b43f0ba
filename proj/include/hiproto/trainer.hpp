#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "hiproto/classifier.hpp"
#include "hiproto/corpus.hpp"
#include "hiproto/dsp.hpp"
#include "hiproto/encoder.hpp"
#include "hiproto/protostore.hpp"
#include "hiproto/taxonomy.hpp"

namespace hiproto {

// Which leaf pool an episode draws from. Speaker-identity classes are the
// `sid`-tagged taxonomy leaves; sound-event classes are the rest.
enum class BatchConfig { SedOnly = 0, SedAndSid = 1, SidOnly = 2 };

struct EpisodeSpec {
    int ways = 12;
    int shots = 5;
    int queries = 5;
    // draw weights for SED-only / SED&SID / SID-only batches
    std::array<int, 3> config_weights{60, 20, 20};
    int episodes_per_epoch = 100;
    int epochs = 1000;

    void validate() const;
};

// One drawn recording plus the seed that determines its segment and
// augmentation draws.
struct EpisodeItem {
    std::size_t entry_index = 0;
    std::uint64_t draw_seed = 0;
};

struct EpisodePlan {
    BatchConfig config = BatchConfig::SedAndSid;
    std::vector<ClassId> classes;
    std::vector<std::vector<EpisodeItem>> support;  // [class][shot]
    std::vector<std::vector<EpisodeItem>> query;    // [class][query]
};

// Draw an episode: batch configuration by weight, then `ways` classes without
// replacement from the configuration's pool, then disjoint support/query
// recordings per class. Deterministic given the seed.
EpisodePlan sample_episode(const Manifest& manifest, const TaxonomyTree& tree,
                           const EpisodeSpec& spec, std::uint64_t seed);

struct AugmentConfig {
    bool noise = true;
    bool reverb = true;
    AugmentationSpec spec;
};

// Decoded-waveform cache keyed by resolved path.
class WaveformCache {
public:
    const Waveform& get(const std::string& path);

private:
    std::unordered_map<std::string, Waveform> cache_;
};

std::string resolve_path(const std::string& base_dir, const std::string& relative);

struct Episode {
    std::vector<ClassId> classes;
    std::vector<std::vector<LogMelSpectrogram>> support;
    std::vector<std::vector<LogMelSpectrogram>> query;
};

// Run the DSP pipeline for every item in the plan: segment draw, optional
// noise mix and reverb, then log-mel features.
Episode materialize_episode(const EpisodePlan& plan, const Manifest& manifest,
                            const std::string& base_dir, const AugmentConfig* augment,
                            WaveformCache& cache);

struct LossSpec {
    enum class Mode { Hierarchical, Flat };
    Mode mode = Mode::Hierarchical;
    double alpha = 1.0;  // level weight exponent; > 0 emphasizes specific classes

    void validate() const;
};

// Per-level classification task extracted from an episode: candidate classes,
// per-query posteriors and per-query truth index.
struct LevelTask {
    int level = 0;
    std::vector<ClassId> classes;
    std::vector<std::vector<double>> probabilities;  // [query][class]
    std::vector<int> truth_index;                    // [query]
};

struct LossResult {
    double loss = 0.0;
    // d loss / d logit, shape-matched to LevelTask::probabilities
    std::vector<std::vector<std::vector<double>>> dlogits;
    std::vector<double> level_mean_ce;  // per level
};

// Level-weighted cross-entropy: sum over levels of e^(alpha*level) times the
// query-mean cross-entropy. Flat mode scores only the leaf level, weight 1.
LossResult hierarchical_loss(const std::vector<LevelTask>& tasks, int height,
                             const LossSpec& spec);

// Adam state with an L2 penalty folded into the gradients.
struct OptState {
    std::vector<Tensor> m, v;
    std::int64_t step = 0;
    double lr = 1e-3;
    double l2 = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static OptState init(const EncoderParams& params, double lr = 1e-3, double l2 = 1e-4);
};

void adam_step(EncoderParams& params, OptState& opt, const GradientSet& grads);

struct StepMetrics {
    double loss = 0.0;
    std::vector<double> level_accuracy;  // index = level
};

// Forward pass of an episode: embeddings -> episode-local prototype bank ->
// per-level posteriors; returns the tasks plus everything backward needs.
struct EpisodeForward {
    std::vector<LevelTask> tasks;
    PrototypeBank bank;
    std::vector<ClassId> leaf_order;           // episode classes, sorted
    std::vector<int> support_leaf;             // leaf index per support item
    std::vector<ActivationTape> support_tapes;
    std::vector<ActivationTape> query_tapes;
    std::vector<Embedding> support_embeddings;
    std::vector<Embedding> query_embeddings;
};

EpisodeForward episode_forward(const EncoderParams& params, const Episode& episode,
                               const TaxonomyTree& tree, const DistanceKind& kind);

// Analytic gradients of the loss w.r.t. every encoder parameter, including the
// prototype-mean path (each support embedding receives 1/|S| of every
// containing prototype's gradient) and the angular scale/bias when enabled.
GradientSet episode_backward(const EncoderParams& params, const EpisodeForward& fwd,
                             const TaxonomyTree& tree, const DistanceKind& kind,
                             const LossResult& loss);

std::vector<double> episode_accuracy(const EpisodeForward& fwd);

// One optimization step on a materialized episode; params/opt updated in place.
StepMetrics train_step(EncoderParams& params, OptState& opt, const Episode& episode,
                       const TaxonomyTree& tree, DistanceKind::Variant distance,
                       const LossSpec& loss_spec);

struct FitConfig {
    ArchConfig arch;
    EpisodeSpec episode;
    LossSpec loss;
    DistanceKind::Variant distance = DistanceKind::Variant::SquaredEuclidean;
    std::uint64_t seed = 0;
    double lr = 1e-3;
    double l2 = 1e-4;
    AugmentConfig augment;
    int checkpoint_every = 0;          // epochs; 0 disables
    std::string out_dir;               // when set: train_log.tsv + checkpoints
    double stop_top_acc = 0.0;         // both > 0: stop once reached
    double stop_leaf_acc = 0.0;
};

struct EpochRow {
    int epoch = 0;
    double mean_loss = 0.0;
    std::vector<double> level_accuracy;
};

struct FitResult {
    EncoderParams params;
    std::vector<EpochRow> log;
    int total_steps = 0;
};

std::string serialize_train_log(const std::vector<EpochRow>& log);

FitResult fit(const Manifest& manifest, const std::string& base_dir, const TaxonomyTree& tree,
              const FitConfig& config);

// Checkpoints: weight payload plus optimizer state under one header.
std::vector<std::uint8_t> save_checkpoint(const EncoderParams& params, const OptState& opt);
std::pair<EncoderParams, OptState> load_checkpoint(const std::uint8_t* data, std::size_t len);

// Build a persistent bank by embedding `shots_per_class` segments of every
// manifest class (0 = use every recording once), without augmentation.
PrototypeBank build_bank(const EncoderParams& params, const Manifest& manifest,
                         const std::string& base_dir, const TaxonomyTree& tree,
                         int shots_per_class, std::uint64_t seed);

DistanceKind distance_kind_for(const EncoderParams& params, DistanceKind::Variant variant);

}  // namespace hiproto
