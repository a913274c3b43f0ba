#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hiproto/trainer.hpp"

namespace hiproto {

struct MeanSem {
    double mean = 0.0;
    double sem = 0.0;
};

// Episodic evaluation mirrors the training batch settings; the pool is fixed
// per run so sound-event and speaker metrics can be reported separately.
struct EvalSpec {
    int episodes = 100;
    int ways = 12;
    int shots = 5;
    int queries = 5;
    BatchConfig pool = BatchConfig::SedAndSid;
};

struct EpisodeRecord {
    std::vector<int> correct;  // per level
    int total = 0;
    std::vector<std::pair<ClassId, ClassId>> leaf_mistakes;  // (predicted, truth)
};

struct EvalRun {
    int height = 0;
    std::vector<EpisodeRecord> episodes;
};

EvalRun run_eval(const EncoderParams& params, const Manifest& manifest,
                 const std::string& base_dir, const TaxonomyTree& tree, const EvalSpec& spec,
                 DistanceKind::Variant distance, const AugmentConfig* augment,
                 std::uint64_t seed);

// mean +- standard error over episodes, one value per level
std::vector<MeanSem> per_level_accuracy(const EvalRun& run);

// Height to the lowest common ancestor of (prediction, truth) for every
// misclassified leaf prediction; 1..height+1 (the +1 is the implicit root).
// Episodes without mistakes are excluded; absent when nothing was misclassified.
std::optional<MeanSem> hierarchical_mistake(const EvalRun& run, const TaxonomyTree& tree);

int hierarchical_mistake_of(const TaxonomyTree& tree, const ClassId& predicted,
                            const ClassId& truth);

// Equal error rate from verification scores (higher = more likely genuine).
// Thresholds sweep the union of scores; a score equal to the threshold counts
// as correct on both sides; the FAR/FRR crossing is linearly interpolated
// between adjacent thresholds when not hit exactly.
double eer(const std::vector<double>& genuine_scores, const std::vector<double>& impostor_scores);

// Speaker-verification protocol: per trial, `pairs` balanced genuine/impostor
// segment pairs scored by negated squared Euclidean embedding distance.
MeanSem eer_protocol(const EncoderParams& params, const Manifest& manifest,
                     const std::string& base_dir, const TaxonomyTree& tree, int trials, int pairs,
                     std::uint64_t seed);

}  // namespace hiproto
