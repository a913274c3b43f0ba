#include "hiproto/classifier.hpp"

#include <algorithm>
#include <cmath>

namespace hiproto {

double distance(const std::vector<double>& a, const std::vector<double>& b,
                const DistanceKind& kind) {
    if (a.size() != b.size()) throw Error("distance: embedding lengths differ");
    if (kind.variant == DistanceKind::Variant::SquaredEuclidean) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = a[i] - b[i];
            acc += d * d;
        }
        return acc;
    }
    if (kind.angular_scale <= 0.0) throw Error("distance: angular scale must be positive");
    double na = 0.0, nb = 0.0, dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        na += a[i] * a[i];
        nb += b[i] * b[i];
        dot += a[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw Error("distance: zero vector under angular distance");
    const double cos = dot / (std::sqrt(na) * std::sqrt(nb));
    return -(kind.angular_scale * cos + kind.angular_bias);
}

LevelPosterior level_posterior(const std::vector<double>& query, const PrototypeBank& bank,
                               int level, const DistanceKind& kind) {
    const auto& entries = bank.entries(level);
    if (entries.empty())
        throw Error("level_posterior: no prototypes at level " + std::to_string(level));

    LevelPosterior out;
    out.level = level;
    std::vector<std::pair<const ClassId*, double>> logits;
    logits.reserve(entries.size());
    double max_logit = -std::numeric_limits<double>::infinity();
    for (const auto& [id, entry] : entries) {
        const double logit = -distance(query, entry.prototype(), kind);
        logits.emplace_back(&id, logit);
        max_logit = std::max(max_logit, logit);
    }
    // max-subtraction keeps exp() in range for arbitrarily large distances
    double z = 0.0;
    for (auto& [id, logit] : logits) {
        logit = std::exp(logit - max_logit);
        z += logit;
    }
    for (const auto& [id, p] : logits) out.probabilities.emplace(*id, p / z);
    return out;
}

Prediction predict(const std::vector<double>& query, const PrototypeBank& bank,
                   const TaxonomyTree& tree, const DistanceKind& kind,
                   const PredictOptions& options) {
    const int levels = tree.height() + 1;
    if (!options.reject_thresholds.empty() &&
        static_cast<int>(options.reject_thresholds.size()) != levels)
        throw Error("predict: expected one reject threshold per level");

    Prediction pred;
    pred.per_level.resize(static_cast<std::size_t>(levels));
    for (int level = 0; level < levels; ++level) {
        if (!bank.has_level(level))
            throw Error("predict: bank is missing level " + std::to_string(level));
        const auto& entries = bank.entries(level);

        const ClassId* best = nullptr;
        double best_dist = std::numeric_limits<double>::infinity();
        for (const auto& [id, entry] : entries) {
            const double d = distance(query, entry.prototype(), kind);
            // map iteration is id-ordered, so strict < breaks ties toward the
            // lexicographically smaller id
            if (d < best_dist) {
                best_dist = d;
                best = &id;
            }
        }

        LevelPrediction& lp = pred.per_level[static_cast<std::size_t>(level)];
        lp.min_distance = best_dist;
        const double threshold = options.reject_thresholds.empty()
                                     ? std::numeric_limits<double>::infinity()
                                     : options.reject_thresholds[static_cast<std::size_t>(level)];
        if (best_dist > threshold) {
            lp.unknown = true;
            continue;
        }
        lp.label = *best;
        lp.posterior = level_posterior(query, bank, level, kind).probabilities.at(*best);
    }

    if (options.ancestor_consistency) {
        const LevelPrediction& leaf = pred.per_level.back();
        if (!leaf.unknown) {
            for (int level = 0; level < levels - 1; ++level) {
                LevelPrediction& lp = pred.per_level[static_cast<std::size_t>(level)];
                if (!lp.unknown) lp.label = tree.ancestor_at(leaf.label, level);
            }
        }
    }
    return pred;
}

}  // namespace hiproto
