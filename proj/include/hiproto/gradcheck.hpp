#pragma once

#include <cstdint>
#include <functional>

#include "hiproto/trainer.hpp"

namespace hiproto {

struct GradCheckOptions {
    ArchConfig arch = ArchConfig::gradcheck_small();
    DistanceKind::Variant distance = DistanceKind::Variant::SquaredEuclidean;
    LossSpec loss;
    int param_samples = 200;
    double epsilon = 1e-4;
    std::uint64_t seed = 1;
    int ways = 4;
    int shots = 2;  // classes alternate between shots and shots + 1 examples
    int queries = 2;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    int samples = 0;
};

// Compare analytic gradients against central finite differences of `loss_fn`
// over randomly sampled scalar parameters.
GradCheckResult gradcheck(EncoderParams& params,
                          const std::function<double(const EncoderParams&)>& loss_fn,
                          const GradientSet& analytic, int param_samples, double epsilon,
                          std::uint64_t seed);

// End-to-end check of the full objective: encoder, prototype means, distance,
// level softmax and the level-weighted loss, on a synthetic episode with
// unequal class counts.
GradCheckResult gradcheck_episode(const GradCheckOptions& options);

}  // namespace hiproto
