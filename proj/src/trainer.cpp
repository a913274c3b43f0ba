#include "hiproto/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "hiproto/rng.hpp"

namespace hiproto {

void EpisodeSpec::validate() const {
    if (ways < 2) throw Error("episode spec: ways must be at least 2");
    if (shots < 1) throw Error("episode spec: shots must be at least 1");
    if (queries < 1) throw Error("episode spec: queries must be at least 1");
    int total = 0;
    for (int w : config_weights) {
        if (w < 0) throw Error("episode spec: negative configuration weight");
        total += w;
    }
    if (total != 100) throw Error("episode spec: configuration weights must sum to 100");
    if (episodes_per_epoch < 1 || epochs < 1) throw Error("episode spec: bad epoch settings");
}

void LossSpec::validate() const {
    if (!std::isfinite(alpha)) throw Error("loss spec: alpha must be finite");
}

EpisodePlan sample_episode(const Manifest& manifest, const TaxonomyTree& tree,
                           const EpisodeSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);

    std::vector<double> weights(spec.config_weights.begin(), spec.config_weights.end());
    const auto config = static_cast<BatchConfig>(rng.weighted_index(weights));

    // pool = manifest classes allowed by the configuration, sorted by id
    std::vector<std::pair<ClassId, std::vector<std::size_t>>> pool;
    for (auto& [leaf, indices] : manifest.by_class()) {
        const bool speaker = tree.is_speaker_leaf(leaf);
        if ((config == BatchConfig::SedOnly && speaker) ||
            (config == BatchConfig::SidOnly && !speaker))
            continue;
        pool.emplace_back(leaf, indices);
    }
    if (static_cast<int>(pool.size()) < spec.ways)
        throw Error("sample_episode: insufficient classes in the batch-configuration pool (" +
                    std::to_string(pool.size()) + " < " + std::to_string(spec.ways) + ")");
    const std::size_t needed = static_cast<std::size_t>(spec.shots + spec.queries);
    for (const auto& [leaf, indices] : pool)
        if (indices.size() < needed)
            throw Error("sample_episode: class '" + leaf + "' has " +
                        std::to_string(indices.size()) + " recordings, needs " +
                        std::to_string(needed));

    EpisodePlan plan;
    plan.config = config;
    for (std::size_t pick : rng.sample_without_replacement(pool.size(), spec.ways))
        plan.classes.push_back(pool[pick].first);

    std::map<ClassId, const std::vector<std::size_t>*> pool_index;
    for (const auto& [leaf, indices] : pool) pool_index.emplace(leaf, &indices);

    for (const ClassId& leaf : plan.classes) {
        const auto& indices = *pool_index.at(leaf);
        const auto picks = rng.sample_without_replacement(indices.size(), needed);
        std::vector<EpisodeItem> support, query;
        for (std::size_t j = 0; j < picks.size(); ++j) {
            EpisodeItem item;
            item.entry_index = indices[picks[j]];
            item.draw_seed = rng.next_u64();
            (j < static_cast<std::size_t>(spec.shots) ? support : query).push_back(item);
        }
        plan.support.push_back(std::move(support));
        plan.query.push_back(std::move(query));
    }
    return plan;
}

const Waveform& WaveformCache::get(const std::string& path) {
    auto it = cache_.find(path);
    if (it != cache_.end()) return it->second;
    if (cache_.size() > 4096) cache_.clear();  // crude bound for large corpora
    return cache_.emplace(path, load_and_normalize_file(path)).first->second;
}

std::string resolve_path(const std::string& base_dir, const std::string& relative) {
    namespace fs = std::filesystem;
    fs::path p(relative);
    if (p.is_absolute() || base_dir.empty()) return relative;
    return (fs::path(base_dir) / p).string();
}

namespace {

// fixed ambient-scene pool shared by every run, sliced at random offsets;
// stands in for a background-noise dataset
const Waveform& ambient_scene(std::size_t index) {
    static const std::vector<Waveform> pool = [] {
        std::vector<Waveform> p;
        for (std::size_t i = 0; i < 16; ++i)
            p.push_back(synth_ambient_noise(2 * kSegmentSamples, mix_seed(0xA0B1, i)));
        return p;
    }();
    return pool[index % pool.size()];
}

LogMelSpectrogram materialize_item(const EpisodeItem& item, const Manifest& manifest,
                                   const std::string& base_dir, const AugmentConfig* augment,
                                   WaveformCache& cache) {
    const auto& entry = manifest.entries[item.entry_index];
    const Waveform& wave = cache.get(resolve_path(base_dir, entry.path));

    // fixed seed schedule so a draw is reproducible in isolation
    const std::uint64_t seg_seed = mix_seed(item.draw_seed, 1);
    const std::uint64_t noise_seed = mix_seed(item.draw_seed, 2);
    const std::uint64_t reverb_seed = mix_seed(item.draw_seed, 3);

    Segment seg = sample_segment(wave, seg_seed);
    Waveform w = std::move(seg.wav);
    if (augment) {
        if (augment->noise) {
            Rng rng(noise_seed);
            const double snr = rng.uniform(augment->spec.snr_db_lo, augment->spec.snr_db_hi);
            const Waveform& scene = ambient_scene(rng.index(16));
            const std::size_t offset = rng.index(scene.samples.size() - w.samples.size() + 1);
            Waveform noise;
            noise.sample_rate = kSampleRate;
            noise.samples.assign(
                scene.samples.begin() + static_cast<std::ptrdiff_t>(offset),
                scene.samples.begin() + static_cast<std::ptrdiff_t>(offset + w.samples.size()));
            w = mix_noise(w, noise, snr);
        }
        if (augment->reverb) w = apply_reverb(w, augment->spec, reverb_seed);
    }
    return log_mel(w);
}

}  // namespace

Episode materialize_episode(const EpisodePlan& plan, const Manifest& manifest,
                            const std::string& base_dir, const AugmentConfig* augment,
                            WaveformCache& cache) {
    Episode ep;
    ep.classes = plan.classes;
    for (std::size_t c = 0; c < plan.classes.size(); ++c) {
        std::vector<LogMelSpectrogram> sup, qry;
        for (const auto& item : plan.support[c])
            sup.push_back(materialize_item(item, manifest, base_dir, augment, cache));
        for (const auto& item : plan.query[c])
            qry.push_back(materialize_item(item, manifest, base_dir, augment, cache));
        ep.support.push_back(std::move(sup));
        ep.query.push_back(std::move(qry));
    }
    return ep;
}

LossResult hierarchical_loss(const std::vector<LevelTask>& tasks, int height,
                             const LossSpec& spec) {
    spec.validate();
    if (static_cast<int>(tasks.size()) != height + 1)
        throw Error("hierarchical_loss: expected one task per level 0.." + std::to_string(height));

    LossResult res;
    res.dlogits.resize(tasks.size());
    res.level_mean_ce.assign(tasks.size(), 0.0);
    for (std::size_t h = 0; h < tasks.size(); ++h) {
        const LevelTask& task = tasks[h];
        const std::size_t nq = task.probabilities.size();
        res.dlogits[h].assign(nq, {});
        if (task.truth_index.size() != nq)
            throw Error("hierarchical_loss: truth/posterior count mismatch");

        const bool active = spec.mode == LossSpec::Mode::Hierarchical ||
                            static_cast<int>(h) == height;
        const double weight = spec.mode == LossSpec::Mode::Hierarchical
                                  ? std::exp(spec.alpha * static_cast<double>(h))
                                  : 1.0;
        double ce_sum = 0.0;
        for (std::size_t q = 0; q < nq; ++q) {
            const auto& p = task.probabilities[q];
            const int y = task.truth_index[q];
            if (y < 0 || y >= static_cast<int>(p.size()))
                throw Error("hierarchical_loss: truth class missing from the level posterior");
            ce_sum += -std::log(std::max(p[static_cast<std::size_t>(y)], 1e-300));
            res.dlogits[h][q].assign(p.size(), 0.0);
            if (active) {
                const double scale = weight / static_cast<double>(nq);
                for (std::size_t k = 0; k < p.size(); ++k) {
                    const double indicator = static_cast<int>(k) == y ? 1.0 : 0.0;
                    res.dlogits[h][q][k] = scale * (p[k] - indicator);
                }
            }
        }
        const double mean_ce = nq > 0 ? ce_sum / static_cast<double>(nq) : 0.0;
        res.level_mean_ce[h] = mean_ce;
        if (active) res.loss += weight * mean_ce;
    }
    if (!std::isfinite(res.loss)) throw Error("hierarchical_loss: non-finite loss");
    return res;
}

OptState OptState::init(const EncoderParams& params, double lr, double l2) {
    OptState s;
    s.lr = lr;
    s.l2 = l2;
    for (const auto& t : params.tensors) {
        s.m.push_back(t.zeros_like());
        s.v.push_back(t.zeros_like());
    }
    return s;
}

void adam_step(EncoderParams& params, OptState& opt, const GradientSet& grads) {
    if (grads.size() != params.tensors.size() || opt.m.size() != params.tensors.size())
        throw Error("adam_step: state shape mismatch");
    opt.step += 1;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        auto& theta = params.tensors[i].v;
        auto& m = opt.m[i].v;
        auto& v = opt.v[i].v;
        const auto& g = grads[i].v;
        for (std::size_t j = 0; j < theta.size(); ++j) {
            const double grad = g[j] + opt.l2 * theta[j];
            m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * grad;
            v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * grad * grad;
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            theta[j] -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.epsilon);
        }
    }
    // the angular scale must stay strictly positive
    if (params.arch.angular_head) {
        double& w = params.tensors[params.tensors.size() - 2].v[0];
        w = std::max(w, 1e-3);
    }
}

DistanceKind distance_kind_for(const EncoderParams& params, DistanceKind::Variant variant) {
    if (variant == DistanceKind::Variant::SquaredEuclidean)
        return DistanceKind::squared_euclidean();
    if (!params.arch.angular_head)
        throw Error("angular distance requested but the encoder has no angular head");
    return DistanceKind::angular(params.angular_scale(), params.angular_bias());
}

EpisodeForward episode_forward(const EncoderParams& params, const Episode& episode,
                               const TaxonomyTree& tree, const DistanceKind& kind) {
    if (episode.classes.size() < 2) throw Error("episode_forward: need at least 2 classes");

    EpisodeForward fwd;
    fwd.leaf_order = episode.classes;
    std::sort(fwd.leaf_order.begin(), fwd.leaf_order.end());

    std::map<ClassId, std::size_t> class_pos;
    for (std::size_t i = 0; i < episode.classes.size(); ++i)
        class_pos.emplace(episode.classes[i], i);

    // embed all support and query items
    SupportSet support;
    for (std::size_t li = 0; li < fwd.leaf_order.size(); ++li) {
        const ClassId& leaf = fwd.leaf_order[li];
        const std::size_t c = class_pos.at(leaf);
        for (const auto& feat : episode.support[c]) {
            ActivationTape tape;
            Embedding emb = encoder_forward(params, feat, &tape);
            support.by_class[leaf].push_back(emb);
            fwd.support_embeddings.push_back(std::move(emb));
            fwd.support_tapes.push_back(std::move(tape));
            fwd.support_leaf.push_back(static_cast<int>(li));
        }
    }
    std::vector<int> query_leaf;
    for (std::size_t li = 0; li < fwd.leaf_order.size(); ++li) {
        const std::size_t c = class_pos.at(fwd.leaf_order[li]);
        for (const auto& feat : episode.query[c]) {
            ActivationTape tape;
            Embedding emb = encoder_forward(params, feat, &tape);
            fwd.query_embeddings.push_back(std::move(emb));
            fwd.query_tapes.push_back(std::move(tape));
            query_leaf.push_back(static_cast<int>(li));
        }
    }

    fwd.bank = aggregate_meta(tree, support);

    // per-level tasks over the episode's candidate sets
    for (int level = 0; level <= tree.height(); ++level) {
        LevelTask task;
        task.level = level;
        for (const auto& [id, entry] : fwd.bank.entries(level)) task.classes.push_back(id);
        std::map<ClassId, int> class_index;
        for (std::size_t i = 0; i < task.classes.size(); ++i)
            class_index.emplace(task.classes[i], static_cast<int>(i));

        std::vector<std::vector<double>> prototypes;
        prototypes.reserve(task.classes.size());
        for (const auto& id : task.classes) prototypes.push_back(fwd.bank.prototype_of(level, id));

        for (std::size_t q = 0; q < fwd.query_embeddings.size(); ++q) {
            const auto& emb = fwd.query_embeddings[q];
            std::vector<double> logits(task.classes.size());
            double max_logit = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < prototypes.size(); ++k) {
                logits[k] = -distance(emb, prototypes[k], kind);
                max_logit = std::max(max_logit, logits[k]);
            }
            double z = 0.0;
            for (auto& l : logits) {
                l = std::exp(l - max_logit);
                z += l;
            }
            for (auto& l : logits) l /= z;
            task.probabilities.push_back(std::move(logits));
            const ClassId& truth_leaf = fwd.leaf_order[static_cast<std::size_t>(
                query_leaf[q])];
            task.truth_index.push_back(class_index.at(tree.ancestor_at(truth_leaf, level)));
        }
        fwd.tasks.push_back(std::move(task));
    }
    return fwd;
}

std::vector<double> episode_accuracy(const EpisodeForward& fwd) {
    std::vector<double> acc(fwd.tasks.size(), 0.0);
    for (std::size_t h = 0; h < fwd.tasks.size(); ++h) {
        const LevelTask& task = fwd.tasks[h];
        int correct = 0;
        for (std::size_t q = 0; q < task.probabilities.size(); ++q) {
            const auto& p = task.probabilities[q];
            // classes are sorted, so the first strict maximum is the
            // lexicographic tie-break
            int best = 0;
            for (std::size_t k = 1; k < p.size(); ++k)
                if (p[k] > p[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
            if (best == task.truth_index[q]) ++correct;
        }
        acc[h] = task.probabilities.empty()
                     ? 0.0
                     : static_cast<double>(correct) / static_cast<double>(task.probabilities.size());
    }
    return acc;
}

GradientSet episode_backward(const EncoderParams& params, const EpisodeForward& fwd,
                             const TaxonomyTree& tree, const DistanceKind& kind,
                             const LossResult& loss) {
    const std::size_t dim = fwd.query_embeddings.empty() ? 0 : fwd.query_embeddings[0].size();
    std::vector<std::vector<double>> d_query(fwd.query_embeddings.size(),
                                             std::vector<double>(dim, 0.0));
    std::vector<std::vector<double>> d_support(fwd.support_embeddings.size(),
                                               std::vector<double>(dim, 0.0));
    double d_ang_scale = 0.0, d_ang_bias = 0.0;
    const bool angular = kind.variant == DistanceKind::Variant::Angular;

    // gradient w.r.t. each level's prototypes, keyed by (level, class index)
    std::vector<std::vector<std::vector<double>>> d_proto(fwd.tasks.size());
    std::vector<std::vector<std::vector<double>>> prototypes(fwd.tasks.size());
    for (std::size_t h = 0; h < fwd.tasks.size(); ++h) {
        const LevelTask& task = fwd.tasks[h];
        d_proto[h].assign(task.classes.size(), std::vector<double>(dim, 0.0));
        for (const auto& id : task.classes)
            prototypes[h].push_back(fwd.bank.prototype_of(task.level, id));
    }

    for (std::size_t h = 0; h < fwd.tasks.size(); ++h) {
        const LevelTask& task = fwd.tasks[h];
        for (std::size_t q = 0; q < task.probabilities.size(); ++q) {
            const auto& emb = fwd.query_embeddings[q];
            for (std::size_t k = 0; k < task.classes.size(); ++k) {
                const double dz = loss.dlogits[h][q][k];
                if (dz == 0.0) continue;
                const auto& proto = prototypes[h][k];
                if (!angular) {
                    // z = -sum (e - c)^2
                    for (std::size_t i = 0; i < dim; ++i) {
                        const double diff = emb[i] - proto[i];
                        d_query[q][i] += dz * (-2.0) * diff;
                        d_proto[h][k][i] += dz * 2.0 * diff;
                    }
                } else {
                    // z = w * cos(e, c) + b
                    double ne = 0.0, nc = 0.0, dot = 0.0;
                    for (std::size_t i = 0; i < dim; ++i) {
                        ne += emb[i] * emb[i];
                        nc += proto[i] * proto[i];
                        dot += emb[i] * proto[i];
                    }
                    ne = std::sqrt(ne);
                    nc = std::sqrt(nc);
                    if (ne == 0.0 || nc == 0.0)
                        throw Error("episode_backward: zero vector under angular distance");
                    const double cos = dot / (ne * nc);
                    d_ang_scale += dz * cos;
                    d_ang_bias += dz;
                    const double w = kind.angular_scale;
                    for (std::size_t i = 0; i < dim; ++i) {
                        const double eh = emb[i] / ne;
                        const double ch = proto[i] / nc;
                        d_query[q][i] += dz * w * (ch - cos * eh) / ne;
                        d_proto[h][k][i] += dz * w * (eh - cos * ch) / nc;
                    }
                }
            }
        }
    }

    // prototype means: each member support embedding receives 1/|S| of the
    // prototype's gradient, summed over every level containing it
    for (std::size_t s = 0; s < fwd.support_embeddings.size(); ++s) {
        const ClassId& leaf = fwd.leaf_order[static_cast<std::size_t>(fwd.support_leaf[s])];
        for (std::size_t h = 0; h < fwd.tasks.size(); ++h) {
            const LevelTask& task = fwd.tasks[h];
            const ClassId& node = tree.ancestor_at(leaf, task.level);
            const auto it = std::lower_bound(task.classes.begin(), task.classes.end(), node);
            if (it == task.classes.end() || *it != node) continue;
            const auto k = static_cast<std::size_t>(it - task.classes.begin());
            const auto count = static_cast<double>(
                fwd.bank.entries(task.level).at(node).count);
            for (std::size_t i = 0; i < dim; ++i)
                d_support[s][i] += d_proto[h][k][i] / count;
        }
    }

    GradientSet grads = zero_gradients(params);
    for (std::size_t q = 0; q < fwd.query_tapes.size(); ++q) {
        const auto res = encoder_backward(params, fwd.query_tapes[q], d_query[q]);
        accumulate(grads, res.grads);
    }
    for (std::size_t s = 0; s < fwd.support_tapes.size(); ++s) {
        const auto res = encoder_backward(params, fwd.support_tapes[s], d_support[s]);
        accumulate(grads, res.grads);
    }
    if (params.arch.angular_head && angular) {
        grads[grads.size() - 2].v[0] += d_ang_scale;
        grads.back().v[0] += d_ang_bias;
    }
    return grads;
}

StepMetrics train_step(EncoderParams& params, OptState& opt, const Episode& episode,
                       const TaxonomyTree& tree, DistanceKind::Variant distance,
                       const LossSpec& loss_spec) {
    const DistanceKind kind = distance_kind_for(params, distance);
    const EpisodeForward fwd = episode_forward(params, episode, tree, kind);
    const LossResult loss = hierarchical_loss(fwd.tasks, tree.height(), loss_spec);
    const GradientSet grads = episode_backward(params, fwd, tree, kind, loss);
    adam_step(params, opt, grads);

    StepMetrics m;
    m.loss = loss.loss;
    m.level_accuracy = episode_accuracy(fwd);
    return m;
}

std::string serialize_train_log(const std::vector<EpochRow>& log) {
    std::string out = "# epoch\tloss";
    if (!log.empty())
        for (std::size_t h = 0; h < log[0].level_accuracy.size(); ++h)
            out += "\tacc_L" + std::to_string(h + 1);
    out += "\n";
    char buf[64];
    for (const auto& row : log) {
        out += std::to_string(row.epoch);
        std::snprintf(buf, sizeof buf, "\t%.6f", row.mean_loss);
        out += buf;
        for (double a : row.level_accuracy) {
            std::snprintf(buf, sizeof buf, "\t%.4f", a);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

FitResult fit(const Manifest& manifest, const std::string& base_dir, const TaxonomyTree& tree,
              const FitConfig& config) {
    config.episode.validate();
    config.loss.validate();
    manifest.validate(tree);

    ArchConfig arch = config.arch;
    if (config.distance == DistanceKind::Variant::Angular) arch.angular_head = true;

    FitResult result;
    result.params = init_params(arch, mix_seed(config.seed, 0xA11C));
    OptState opt = OptState::init(result.params, config.lr, config.l2);
    WaveformCache cache;

    namespace fs = std::filesystem;
    if (!config.out_dir.empty()) fs::create_directories(config.out_dir);

    for (int epoch = 0; epoch < config.episode.epochs; ++epoch) {
        double loss_sum = 0.0;
        std::vector<double> acc_sum(static_cast<std::size_t>(tree.height()) + 1, 0.0);
        for (int e = 0; e < config.episode.episodes_per_epoch; ++e) {
            const std::uint64_t episode_seed =
                mix_seed(config.seed, static_cast<std::uint64_t>(epoch),
                         static_cast<std::uint64_t>(e));
            const EpisodePlan plan = sample_episode(manifest, tree, config.episode, episode_seed);
            const Episode episode = materialize_episode(
                plan, manifest, base_dir,
                (config.augment.noise || config.augment.reverb) ? &config.augment : nullptr,
                cache);
            StepMetrics m;
            try {
                m = train_step(result.params, opt, episode, tree, config.distance, config.loss);
            } catch (const Error& err) {
                throw Error(std::string(err.what()) + " (episode seed " +
                            std::to_string(episode_seed) + ")");
            }
            loss_sum += m.loss;
            for (std::size_t h = 0; h < acc_sum.size(); ++h) acc_sum[h] += m.level_accuracy[h];
            result.total_steps += 1;
        }

        EpochRow row;
        row.epoch = epoch;
        row.mean_loss = loss_sum / config.episode.episodes_per_epoch;
        for (double a : acc_sum) row.level_accuracy.push_back(a / config.episode.episodes_per_epoch);
        result.log.push_back(row);

        if (!config.out_dir.empty()) {
            write_text_file((fs::path(config.out_dir) / "train_log.tsv").string(),
                            serialize_train_log(result.log));
            if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0) {
                char name[64];
                std::snprintf(name, sizeof name, "checkpoint_epoch%04d.hpc", epoch);
                write_file((fs::path(config.out_dir) / name).string(),
                           save_checkpoint(result.params, opt));
            }
        }

        if (config.stop_top_acc > 0.0 && config.stop_leaf_acc > 0.0 &&
            row.level_accuracy.front() >= config.stop_top_acc &&
            row.level_accuracy.back() >= config.stop_leaf_acc)
            break;
    }
    return result;
}

namespace {
constexpr char kCheckpointTag[4] = {'O', 'P', 'T', '1'};
}

std::vector<std::uint8_t> save_checkpoint(const EncoderParams& params, const OptState& opt) {
    ByteWriter b;
    const auto weights = save_weights(params);
    b.u64(weights.size());
    b.bytes(weights.data(), weights.size());
    b.bytes(kCheckpointTag, 4);
    b.u64(static_cast<std::uint64_t>(opt.step));
    const double hyper[5] = {opt.lr, opt.l2, opt.beta1, opt.beta2, opt.epsilon};
    for (double h : hyper) {
        std::uint64_t bits;
        std::memcpy(&bits, &h, 8);
        b.u64(bits);
    }
    for (const auto& t : opt.m)
        for (double v : t.v) b.f32(static_cast<float>(v));
    for (const auto& t : opt.v)
        for (double v : t.v) b.f32(static_cast<float>(v));
    return b.data();
}

std::pair<EncoderParams, OptState> load_checkpoint(const std::uint8_t* data, std::size_t len) {
    ByteReader r(data, len);
    const std::uint64_t wlen = r.u64();
    std::vector<std::uint8_t> weights(wlen);
    r.raw(weights.data(), wlen);
    EncoderParams params = load_weights(weights.data(), weights.size());
    char tag[4];
    r.raw(tag, 4);
    if (std::memcmp(tag, kCheckpointTag, 4) != 0) throw Error("checkpoint: bad optimizer tag");
    OptState opt = OptState::init(params);
    opt.step = static_cast<std::int64_t>(r.u64());
    double hyper[5];
    for (double& h : hyper) {
        const std::uint64_t bits = r.u64();
        std::memcpy(&h, &bits, 8);
    }
    opt.lr = hyper[0];
    opt.l2 = hyper[1];
    opt.beta1 = hyper[2];
    opt.beta2 = hyper[3];
    opt.epsilon = hyper[4];
    for (auto& t : opt.m)
        for (auto& v : t.v) v = r.f32();
    for (auto& t : opt.v)
        for (auto& v : t.v) v = r.f32();
    if (!r.at_end()) throw Error("checkpoint: trailing bytes");
    return {std::move(params), std::move(opt)};
}

PrototypeBank build_bank(const EncoderParams& params, const Manifest& manifest,
                         const std::string& base_dir, const TaxonomyTree& tree,
                         int shots_per_class, std::uint64_t seed) {
    manifest.validate(tree);
    WaveformCache cache;
    SupportSet support;
    for (const auto& [leaf, indices] : manifest.by_class()) {
        std::vector<std::size_t> chosen = indices;
        if (shots_per_class > 0 && static_cast<int>(chosen.size()) > shots_per_class) {
            Rng rng(mix_seed(seed, static_cast<std::uint64_t>(support.by_class.size())));
            const auto picks =
                rng.sample_without_replacement(chosen.size(),
                                               static_cast<std::size_t>(shots_per_class));
            std::vector<std::size_t> subset;
            for (std::size_t p : picks) subset.push_back(chosen[p]);
            chosen = std::move(subset);
        }
        for (std::size_t idx : chosen) {
            const auto& wave = cache.get(resolve_path(base_dir, manifest.entries[idx].path));
            const Segment seg = sample_segment(wave, mix_seed(seed, idx, 0x5E6));
            support.by_class[leaf].push_back(encoder_forward(params, log_mel(seg.wav)));
        }
    }
    return aggregate_meta(tree, support);
}

}  // namespace hiproto
