#include "hiproto/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "hiproto/rng.hpp"

namespace hiproto {

namespace {

MeanSem mean_sem(const std::vector<double>& values) {
    MeanSem out;
    const auto n = static_cast<double>(values.size());
    if (values.empty()) return out;
    double sum = 0.0;
    for (double v : values) sum += v;
    out.mean = sum / n;
    if (values.size() < 2) return out;
    double sq = 0.0;
    for (double v : values) sq += (v - out.mean) * (v - out.mean);
    out.sem = std::sqrt(sq / (n - 1.0)) / std::sqrt(n);
    return out;
}

}  // namespace

EvalRun run_eval(const EncoderParams& params, const Manifest& manifest,
                 const std::string& base_dir, const TaxonomyTree& tree, const EvalSpec& spec,
                 DistanceKind::Variant distance, const AugmentConfig* augment,
                 std::uint64_t seed) {
    if (spec.episodes < 1) throw Error("run_eval: need at least one episode");
    EpisodeSpec episode_spec;
    episode_spec.ways = spec.ways;
    episode_spec.shots = spec.shots;
    episode_spec.queries = spec.queries;
    episode_spec.config_weights = {0, 0, 0};
    episode_spec.config_weights[static_cast<std::size_t>(spec.pool)] = 100;

    const DistanceKind kind = distance_kind_for(params, distance);
    WaveformCache cache;
    EvalRun run;
    run.height = tree.height();
    for (int e = 0; e < spec.episodes; ++e) {
        const std::uint64_t episode_seed = mix_seed(seed, 0xEA1, static_cast<std::uint64_t>(e));
        const EpisodePlan plan = sample_episode(manifest, tree, episode_spec, episode_seed);
        const Episode episode = materialize_episode(plan, manifest, base_dir, augment, cache);
        const EpisodeForward fwd = episode_forward(params, episode, tree, kind);

        EpisodeRecord rec;
        rec.correct.assign(static_cast<std::size_t>(tree.height()) + 1, 0);
        rec.total = static_cast<int>(fwd.query_embeddings.size());
        for (std::size_t h = 0; h < fwd.tasks.size(); ++h) {
            const LevelTask& task = fwd.tasks[h];
            for (std::size_t q = 0; q < task.probabilities.size(); ++q) {
                const auto& p = task.probabilities[q];
                int best = 0;
                for (std::size_t k = 1; k < p.size(); ++k)
                    if (p[k] > p[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
                if (best == task.truth_index[q]) {
                    rec.correct[h] += 1;
                } else if (static_cast<int>(h) == tree.height()) {
                    rec.leaf_mistakes.emplace_back(
                        task.classes[static_cast<std::size_t>(best)],
                        task.classes[static_cast<std::size_t>(task.truth_index[q])]);
                }
            }
        }
        run.episodes.push_back(std::move(rec));
    }
    return run;
}

std::vector<MeanSem> per_level_accuracy(const EvalRun& run) {
    if (run.episodes.empty()) throw Error("per_level_accuracy: empty run");
    const std::size_t levels = run.episodes[0].correct.size();
    std::vector<MeanSem> out;
    for (std::size_t h = 0; h < levels; ++h) {
        std::vector<double> per_episode;
        per_episode.reserve(run.episodes.size());
        for (const auto& rec : run.episodes) {
            if (rec.total == 0) throw Error("per_level_accuracy: episode with no queries");
            per_episode.push_back(static_cast<double>(rec.correct[h]) / rec.total);
        }
        out.push_back(mean_sem(per_episode));
    }
    return out;
}

int hierarchical_mistake_of(const TaxonomyTree& tree, const ClassId& predicted,
                            const ClassId& truth) {
    return tree.height() - tree.lca_depth(predicted, truth);
}

std::optional<MeanSem> hierarchical_mistake(const EvalRun& run, const TaxonomyTree& tree) {
    std::vector<double> per_episode;
    for (const auto& rec : run.episodes) {
        if (rec.leaf_mistakes.empty()) continue;
        double sum = 0.0;
        for (const auto& [pred, truth] : rec.leaf_mistakes)
            sum += hierarchical_mistake_of(tree, pred, truth);
        per_episode.push_back(sum / static_cast<double>(rec.leaf_mistakes.size()));
    }
    if (per_episode.empty()) return std::nullopt;
    return mean_sem(per_episode);
}

double eer(const std::vector<double>& genuine_scores,
           const std::vector<double>& impostor_scores) {
    if (genuine_scores.empty() || impostor_scores.empty())
        throw Error("eer: score lists must be non-empty");
    std::vector<double> gen = genuine_scores;
    std::vector<double> imp = impostor_scores;
    std::sort(gen.begin(), gen.end());
    std::sort(imp.begin(), imp.end());

    // one shared constant score carries no information: chance level
    if (gen.front() == gen.back() && imp.front() == imp.back() && gen.front() == imp.front())
        return 0.5;

    std::vector<double> thresholds;
    thresholds.reserve(gen.size() + imp.size() + 2);
    thresholds.push_back(std::min(gen.front(), imp.front()) - 1.0);
    std::merge(gen.begin(), gen.end(), imp.begin(), imp.end(), std::back_inserter(thresholds));
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    thresholds.push_back(std::max(gen.back(), imp.back()) + 1.0);

    const auto far_at = [&](double t) {
        // impostors strictly above the threshold are falsely accepted
        const auto above = imp.end() - std::upper_bound(imp.begin(), imp.end(), t);
        return static_cast<double>(above) / static_cast<double>(imp.size());
    };
    const auto frr_at = [&](double t) {
        // genuines strictly below the threshold are falsely rejected
        const auto below = std::lower_bound(gen.begin(), gen.end(), t) - gen.begin();
        return static_cast<double>(below) / static_cast<double>(gen.size());
    };

    double prev_far = far_at(thresholds[0]);
    double prev_frr = frr_at(thresholds[0]);
    if (prev_far <= prev_frr) return (prev_far + prev_frr) / 2.0;
    for (std::size_t i = 1; i < thresholds.size(); ++i) {
        const double far = far_at(thresholds[i]);
        const double frr = frr_at(thresholds[i]);
        const double diff = far - frr;
        if (diff == 0.0) return far;
        if (diff < 0.0) {
            // crossing lies between the previous and current operating points
            const double d_prev = prev_far - prev_frr;
            const double s = d_prev / (d_prev - diff);
            return prev_far + s * (far - prev_far);
        }
        prev_far = far;
        prev_frr = frr;
    }
    return (prev_far + prev_frr) / 2.0;  // unreachable: sentinels bracket a crossing
}

MeanSem eer_protocol(const EncoderParams& params, const Manifest& manifest,
                     const std::string& base_dir, const TaxonomyTree& tree, int trials, int pairs,
                     std::uint64_t seed) {
    if (trials < 1 || pairs < 2) throw Error("eer_protocol: bad trial settings");

    // speaker classes with their recordings
    std::vector<std::pair<ClassId, std::vector<std::size_t>>> speakers;
    for (auto& [leaf, indices] : manifest.by_class())
        if (tree.is_speaker_leaf(leaf)) speakers.emplace_back(leaf, indices);
    if (speakers.size() < 2)
        throw Error("eer_protocol: need at least 2 speaker classes");
    for (const auto& [leaf, indices] : speakers)
        if (indices.size() < 2)
            throw Error("eer_protocol: speaker '" + leaf + "' needs at least 2 recordings");

    WaveformCache cache;
    std::vector<double> trial_eers;
    for (int t = 0; t < trials; ++t) {
        Rng rng(mix_seed(seed, 0xEE2, static_cast<std::uint64_t>(t)));
        std::map<std::size_t, Embedding> embedded;
        const auto embed = [&](std::size_t entry_index) -> const Embedding& {
            auto it = embedded.find(entry_index);
            if (it != embedded.end()) return it->second;
            const auto& wave =
                cache.get(resolve_path(base_dir, manifest.entries[entry_index].path));
            const Segment seg = sample_segment(
                wave, mix_seed(seed, static_cast<std::uint64_t>(t), entry_index));
            return embedded.emplace(entry_index, encoder_forward(params, log_mel(seg.wav)))
                .first->second;
        };
        const auto pair_score = [&](std::size_t a, std::size_t b) {
            const Embedding& ea = embed(a);
            const Embedding& eb = embed(b);
            return -distance(ea, eb, DistanceKind::squared_euclidean());
        };

        std::vector<double> genuine, impostor;
        const int genuine_pairs = pairs / 2;
        for (int p = 0; p < genuine_pairs; ++p) {
            const auto& [leaf, indices] = speakers[rng.index(speakers.size())];
            const auto picks = rng.sample_without_replacement(indices.size(), 2);
            genuine.push_back(pair_score(indices[picks[0]], indices[picks[1]]));
        }
        for (int p = 0; p < pairs - genuine_pairs; ++p) {
            const auto spk = rng.sample_without_replacement(speakers.size(), 2);
            const auto& ia = speakers[spk[0]].second;
            const auto& ib = speakers[spk[1]].second;
            impostor.push_back(pair_score(ia[rng.index(ia.size())], ib[rng.index(ib.size())]));
        }
        trial_eers.push_back(eer(genuine, impostor));
    }
    return mean_sem(trial_eers);
}

}  // namespace hiproto
