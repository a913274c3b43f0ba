#pragma once

#include <limits>
#include <map>
#include <string>
#include <vector>

#include "hiproto/protostore.hpp"
#include "hiproto/taxonomy.hpp"

namespace hiproto {

// Distance between an embedding and a prototype. Squared Euclidean is the
// default; angular combines cosine similarity with a learnable scale and bias
// (and can therefore be negative).
struct DistanceKind {
    enum class Variant { SquaredEuclidean, Angular };
    Variant variant = Variant::SquaredEuclidean;
    double angular_scale = 10.0;
    double angular_bias = -5.0;

    static DistanceKind squared_euclidean() { return {}; }
    static DistanceKind angular(double scale, double bias) {
        if (scale <= 0.0) throw Error("angular scale must be strictly positive");
        DistanceKind k;
        k.variant = Variant::Angular;
        k.angular_scale = scale;
        k.angular_bias = bias;
        return k;
    }
};

double distance(const std::vector<double>& a, const std::vector<double>& b,
                const DistanceKind& kind);

struct LevelPosterior {
    int level = 0;
    std::map<ClassId, double> probabilities;
};

// softmax over negated distances to every prototype present at the level
LevelPosterior level_posterior(const std::vector<double>& query, const PrototypeBank& bank,
                               int level, const DistanceKind& kind);

struct LevelPrediction {
    ClassId label;  // empty when rejected as unknown
    bool unknown = false;
    double posterior = 0.0;
    double min_distance = 0.0;
};

struct Prediction {
    std::vector<LevelPrediction> per_level;  // index = level
};

struct PredictOptions {
    // per-level distance cutoffs; a query farther than the cutoff from every
    // prototype at a level is reported unknown there. Empty = no rejection.
    std::vector<double> reject_thresholds;
    // snap upper-level outputs onto the leaf prediction's ancestors
    bool ancestor_consistency = false;
};

// Independent per-level argmax prediction with optional open-set rejection.
// Distance ties break to the lexicographically smaller class id.
Prediction predict(const std::vector<double>& query, const PrototypeBank& bank,
                   const TaxonomyTree& tree, const DistanceKind& kind,
                   const PredictOptions& options = {});

}  // namespace hiproto
