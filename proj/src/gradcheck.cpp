#include "hiproto/gradcheck.hpp"

#include <cmath>
#include <set>

#include "hiproto/rng.hpp"

namespace hiproto {

GradCheckResult gradcheck(EncoderParams& params,
                          const std::function<double(const EncoderParams&)>& loss_fn,
                          const GradientSet& analytic, int param_samples, double epsilon,
                          std::uint64_t seed) {
    if (epsilon <= 0.0) throw Error("gradcheck: epsilon must be positive");
    std::size_t total = 0;
    for (const auto& t : params.tensors) total += t.size();
    if (total == 0) throw Error("gradcheck: no parameters");

    // distinct flat indices, uniform across all tensors
    Rng rng(seed);
    std::set<std::size_t> picked;
    const auto want = std::min<std::size_t>(static_cast<std::size_t>(param_samples), total);
    while (picked.size() < want) picked.insert(rng.index(total));

    GradCheckResult res;
    res.samples = static_cast<int>(picked.size());
    for (std::size_t flat : picked) {
        std::size_t ti = 0, off = flat;
        while (off >= params.tensors[ti].size()) {
            off -= params.tensors[ti].size();
            ++ti;
        }
        double& slot = params.tensors[ti].v[off];
        const double saved = slot;
        slot = saved + epsilon;
        const double up = loss_fn(params);
        slot = saved - epsilon;
        const double down = loss_fn(params);
        slot = saved;
        if (!std::isfinite(up) || !std::isfinite(down))
            throw Error("gradcheck: non-finite loss during finite differencing");
        const double numeric = (up - down) / (2.0 * epsilon);
        const double exact = analytic[ti].v[off];
        const double scale = std::max({std::abs(numeric), std::abs(exact), 1e-6});
        res.max_rel_error = std::max(res.max_rel_error, std::abs(numeric - exact) / scale);
    }
    return res;
}

namespace {

// ways leaves under ceil(ways/2) mid classes under 2 top classes
TaxonomyTree gradcheck_tree(int ways) {
    std::string text;
    for (int i = 0; i < ways; ++i) {
        const int mid = i / 2;
        const int top = mid % 2;
        text += "leaf" + std::to_string(i) + "\tmid" + std::to_string(mid) + "\ttop" +
                std::to_string(top) + "\n";
    }
    return TaxonomyTree::parse(text);
}

// Central differences at epsilon 1e-4 are only exact where the rectifier does
// not change slope inside the probe radius. White-noise features scatter
// pre-activations densely around zero, which biases the numeric gradient by
// O(1%) at any seed. The check therefore runs on step-envelope features (two
// levels per sample, constant over time) whose pre-activations take few
// distinct values, and every sample is accepted only after measuring that its
// pre-activations clear the kink by a safety margin. A 1e-4 parameter
// perturbation moves pre-activations by under 1e-3 on this configuration, so
// the margin keeps both probe points on one side of every kink.
constexpr double kKinkMargin = 3e-3;

LogMelSpectrogram step_features(Rng& rng) {
    LogMelSpectrogram f;
    const double level = rng.uniform(2.0, 4.0);
    const double offset = rng.uniform(-1.0, 1.0);
    const int split = 16 * (1 + static_cast<int>(rng.index(3)));
    for (int m = 0; m < kMelBins; ++m)
        for (int t = 0; t < kNumFrames; ++t)
            f.at(m, t) = (m < split ? level : -level) + offset;
    return f;
}

// smallest |pre-activation| across every block for one sample
double kink_margin(const EncoderParams& params, const LogMelSpectrogram& f) {
    double margin = std::numeric_limits<double>::infinity();
    ActivationTape tape;
    encoder_forward(params, f, &tape);
    for (std::size_t b = 0; b < tape.conv_out.size(); ++b) {
        const Tensor& u = tape.conv_out[b];
        const Tensor& scale = params.tensors[3 * b + 1];
        const Tensor& offset = params.tensors[3 * b + 2];
        const std::size_t spatial = u.size() / static_cast<std::size_t>(u.shape[0]);
        for (int c = 0; c < u.shape[0]; ++c) {
            const double g = scale.v[static_cast<std::size_t>(c)];
            const double o = offset.v[static_cast<std::size_t>(c)];
            for (std::size_t i = 0; i < spatial; ++i) {
                const double v = g * u.v[static_cast<std::size_t>(c) * spatial + i] + o;
                margin = std::min(margin, std::abs(v));
            }
        }
    }
    return margin;
}

Episode gradcheck_episode_data(const GradCheckOptions& opt, const TaxonomyTree& tree,
                               const EncoderParams& params) {
    const auto safe_sample = [&](std::uint64_t sample_seed) {
        for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
            Rng rng(mix_seed(sample_seed, attempt));
            LogMelSpectrogram f = step_features(rng);
            if (kink_margin(params, f) > kKinkMargin) return f;
        }
        throw Error("gradcheck: no sample with a safe kink margin found");
    };

    Rng rng(mix_seed(opt.seed, 0xFEA7));
    Episode ep;
    ep.classes = tree.leaves();
    for (std::size_t c = 0; c < ep.classes.size(); ++c) {
        // alternate class sizes so the count-weighted mean path is exercised
        const int shots = opt.shots + static_cast<int>(c % 2);
        std::vector<LogMelSpectrogram> sup, qry;
        for (int i = 0; i < shots; ++i) sup.push_back(safe_sample(rng.next_u64()));
        for (int i = 0; i < opt.queries; ++i) qry.push_back(safe_sample(rng.next_u64()));
        ep.support.push_back(std::move(sup));
        ep.query.push_back(std::move(qry));
    }
    return ep;
}

}  // namespace

GradCheckResult gradcheck_episode(const GradCheckOptions& options) {
    if (options.ways < 2) throw Error("gradcheck: need at least 2 ways");
    ArchConfig arch = options.arch;
    if (options.distance == DistanceKind::Variant::Angular) arch.angular_head = true;

    const TaxonomyTree tree = gradcheck_tree(options.ways);

    // some parameter draws leave a channel pinned near its kink for the whole
    // feature family; fall through to a fresh deterministic init when no safe
    // sample exists
    EncoderParams params;
    Episode episode;
    for (std::uint64_t attempt = 0;; ++attempt) {
        params = init_params(arch, mix_seed(options.seed, 0x9A7A + attempt));
        try {
            episode = gradcheck_episode_data(options, tree, params);
            break;
        } catch (const Error&) {
            if (attempt >= 7) throw;
        }
    }

    const auto loss_fn = [&](const EncoderParams& p) {
        const DistanceKind kind = distance_kind_for(p, options.distance);
        const EpisodeForward fwd = episode_forward(p, episode, tree, kind);
        return hierarchical_loss(fwd.tasks, tree.height(), options.loss).loss;
    };

    const DistanceKind kind = distance_kind_for(params, options.distance);
    const EpisodeForward fwd = episode_forward(params, episode, tree, kind);
    const LossResult loss = hierarchical_loss(fwd.tasks, tree.height(), options.loss);
    const GradientSet analytic = episode_backward(params, fwd, tree, kind, loss);

    return gradcheck(params, loss_fn, analytic, options.param_samples, options.epsilon,
                     mix_seed(options.seed, 0x5A3));
}

}  // namespace hiproto
