#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "hiproto/gradcheck.hpp"
#include "hiproto/rng.hpp"
#include "hiproto/synth.hpp"
#include "hiproto/trainer.hpp"

using namespace hiproto;

namespace {

LogMelSpectrogram random_features(Rng& rng, double scale = 1.0) {
    LogMelSpectrogram f;
    for (auto& v : f.values) v = rng.normal() * scale;
    return f;
}

TaxonomyTree four_leaf_tree() {
    return TaxonomyTree::parse(
        "l0\tm0\tt0\n"
        "l1\tm0\tt0\n"
        "l2\tm1\tt1\n"
        "l3\tm1\tt1\n");
}

// synthetic episode whose classes have distinct feature means
Episode clustered_episode(const TaxonomyTree& tree, int shots, int queries, std::uint64_t seed) {
    Rng rng(seed);
    Episode ep;
    ep.classes = tree.leaves();
    for (std::size_t c = 0; c < ep.classes.size(); ++c) {
        const double offset = 3.0 * static_cast<double>(c) - 4.5;
        std::vector<LogMelSpectrogram> sup(static_cast<std::size_t>(shots)),
            qry(static_cast<std::size_t>(queries));
        for (auto& f : sup)
            for (auto& v : f.values) v = offset + 0.3 * rng.normal();
        for (auto& f : qry)
            for (auto& v : f.values) v = offset + 0.3 * rng.normal();
        ep.support.push_back(std::move(sup));
        ep.query.push_back(std::move(qry));
    }
    return ep;
}

}  // namespace

TEST_CASE("init_params: size, determinism, embedding dim") {
    const EncoderParams def = init_params(ArchConfig{}, 7);
    CHECK(def.param_count() < 100000);
    CHECK(describe(ArchConfig{}).total_params == def.param_count());

    const EncoderParams again = init_params(ArchConfig{}, 7);
    for (std::size_t i = 0; i < def.tensors.size(); ++i)
        CHECK(def.tensors[i].v == again.tensors[i].v);
    const EncoderParams other = init_params(ArchConfig{}, 8);
    CHECK(def.tensors[0].v != other.tensors[0].v);

    ArchConfig d8;
    d8.embed_dim = 8;
    const EncoderParams small = init_params(d8, 1);
    Rng rng(3);
    const Embedding e = encoder_forward(small, random_features(rng));
    CHECK(e.size() == 8);

    ArchConfig bad;
    bad.embed_dim = 1;
    CHECK_THROWS_AS(init_params(bad, 0), Error);
    ArchConfig none;
    none.channels.clear();
    CHECK_THROWS_AS(init_params(none, 0), Error);
}

TEST_CASE("forward: zero network maps anything to zero") {
    ArchConfig arch = ArchConfig::gradcheck_small();
    EncoderParams p = init_params(arch, 1);
    for (auto& t : p.tensors) std::fill(t.v.begin(), t.v.end(), 0.0);
    Rng rng(5);
    const Embedding e = encoder_forward(p, random_features(rng));
    for (double v : e) CHECK(v == 0.0);
}

TEST_CASE("forward is bitwise deterministic") {
    const EncoderParams p = init_params(ArchConfig::gradcheck_small(), 11);
    Rng rng(2);
    const LogMelSpectrogram x = random_features(rng);
    const Embedding a = encoder_forward(p, x);
    const Embedding b = encoder_forward(p, x);
    CHECK(a == b);
}

TEST_CASE("backward: zero upstream gradient gives zero everywhere") {
    const EncoderParams p = init_params(ArchConfig::gradcheck_small(), 3);
    Rng rng(4);
    ActivationTape tape;
    encoder_forward(p, random_features(rng), &tape);
    const auto res = encoder_backward(p, tape, std::vector<double>(8, 0.0));
    for (const auto& g : res.grads)
        for (double v : g.v) CHECK(v == 0.0);
    for (double v : res.grad_input.v) CHECK(v == 0.0);
}

TEST_CASE("backward through a linear configuration matches the transpose map") {
    // leak = 1 turns the rectifier into the identity, making the whole
    // encoder linear in its input
    ArchConfig arch = ArchConfig::gradcheck_small();
    arch.leak = 1.0;
    EncoderParams p = init_params(arch, 9);
    Rng rng(6);
    const LogMelSpectrogram x = random_features(rng);

    ActivationTape tape;
    encoder_forward(p, x, &tape);
    std::vector<double> g(8);
    for (auto& v : g) v = rng.normal();
    const auto res = encoder_backward(p, tape, g);

    // for a linear map f: dot(grad_input, v) == dot(g, f(x + v) - f(x))
    LogMelSpectrogram dir;
    Rng rng2(7);
    for (auto& v : dir.values) v = rng2.normal();
    LogMelSpectrogram xv = x;
    for (std::size_t i = 0; i < xv.values.size(); ++i) xv.values[i] += dir.values[i];
    const Embedding fx = encoder_forward(p, x);
    const Embedding fxv = encoder_forward(p, xv);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < dir.values.size(); ++i)
        lhs += res.grad_input.v[i] * dir.values[i];
    for (std::size_t i = 0; i < g.size(); ++i) rhs += g[i] * (fxv[i] - fx[i]);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-9));
}

TEST_CASE("gradcheck: analytic gradients match finite differences") {
    for (const double alpha : {-1.0, 0.0, 1.0}) {
        GradCheckOptions opt;
        opt.loss.alpha = alpha;
        opt.param_samples = 60;
        opt.seed = 1;
        const GradCheckResult res = gradcheck_episode(opt);
        INFO("alpha=", alpha, " max_rel_error=", res.max_rel_error);
        CHECK(res.max_rel_error < 1e-3);
        CHECK(res.samples == 60);
    }
}

TEST_CASE("gradcheck: angular distance head") {
    GradCheckOptions opt;
    opt.distance = DistanceKind::Variant::Angular;
    opt.loss.alpha = 1.0;
    opt.param_samples = 60;
    opt.seed = 2;
    const GradCheckResult res = gradcheck_episode(opt);
    INFO("max_rel_error=", res.max_rel_error);
    CHECK(res.max_rel_error < 1e-3);
}

TEST_CASE("gradcheck: flat loss mode") {
    GradCheckOptions opt;
    opt.loss.mode = LossSpec::Mode::Flat;
    opt.param_samples = 40;
    opt.seed = 3;
    CHECK(gradcheck_episode(opt).max_rel_error < 1e-3);
}

TEST_CASE("gradcheck: halving epsilon stays second order") {
    GradCheckOptions opt;
    opt.param_samples = 40;
    opt.seed = 4;
    const double e1 = gradcheck_episode(opt).max_rel_error;
    opt.epsilon /= 2.0;
    const double e2 = gradcheck_episode(opt).max_rel_error;
    CHECK(e2 <= 4.0 * e1 + 1e-9);
}

TEST_CASE("gradcheck: zero loss head is vacuously exact") {
    EncoderParams p = init_params(ArchConfig::gradcheck_small(), 5);
    const auto zero = [](const EncoderParams&) { return 0.0; };
    const GradientSet analytic = zero_gradients(p);
    const GradCheckResult res = gradcheck(p, zero, analytic, 50, 1e-4, 9);
    CHECK(res.max_rel_error == 0.0);
}

TEST_CASE("hierarchical loss closed forms") {
    // three levels, one query, point mass on the truth -> zero loss
    std::vector<LevelTask> tasks(3);
    for (int h = 0; h < 3; ++h) {
        tasks[static_cast<std::size_t>(h)].level = h;
        tasks[static_cast<std::size_t>(h)].classes = {"a", "b"};
        tasks[static_cast<std::size_t>(h)].probabilities = {{1.0, 0.0}};
        tasks[static_cast<std::size_t>(h)].truth_index = {0};
    }
    LossSpec spec;
    spec.alpha = 1.0;
    CHECK(hierarchical_loss(tasks, 2, spec).loss == doctest::Approx(0.0).epsilon(1e-12));

    // known per-level cross-entropies c_h combine as sum e^(alpha h) c_h
    const double p0 = 0.7, p1 = 0.4, p2 = 0.9;
    tasks[0].probabilities = {{p0, 1 - p0}};
    tasks[1].probabilities = {{p1, 1 - p1}};
    tasks[2].probabilities = {{p2, 1 - p2}};
    const double c0 = -std::log(p0), c1 = -std::log(p1), c2 = -std::log(p2);

    for (const double alpha : {-1.0, 0.0, 1.0}) {
        spec.alpha = alpha;
        const double expected = c0 + std::exp(alpha) * c1 + std::exp(2.0 * alpha) * c2;
        CHECK(hierarchical_loss(tasks, 2, spec).loss ==
              doctest::Approx(expected).epsilon(1e-12));
    }

    // alpha = 0 is the plain unweighted sum
    spec.alpha = 0.0;
    CHECK(hierarchical_loss(tasks, 2, spec).loss ==
          doctest::Approx(c0 + c1 + c2).epsilon(1e-12));

    // flat mode equals the level-H term alone, independent of alpha
    spec.mode = LossSpec::Mode::Flat;
    spec.alpha = -3.0;
    CHECK(hierarchical_loss(tasks, 2, spec).loss == doctest::Approx(c2).epsilon(1e-12));

    // missing truth index errors
    auto broken = tasks;
    broken[1].truth_index = {5};
    CHECK_THROWS_AS(hierarchical_loss(broken, 2, spec), Error);
}

TEST_CASE("hierarchical loss: closed form on random posteriors, mean over queries") {
    Rng rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        const int height = 1 + static_cast<int>(rng.index(3));
        const int queries = 1 + static_cast<int>(rng.index(4));
        const int classes = 2 + static_cast<int>(rng.index(4));
        std::vector<LevelTask> tasks(static_cast<std::size_t>(height) + 1);
        std::vector<double> mean_ce(static_cast<std::size_t>(height) + 1, 0.0);
        for (int h = 0; h <= height; ++h) {
            auto& task = tasks[static_cast<std::size_t>(h)];
            task.level = h;
            for (int c = 0; c < classes; ++c) task.classes.push_back("c" + std::to_string(c));
            for (int q = 0; q < queries; ++q) {
                std::vector<double> p(static_cast<std::size_t>(classes));
                double z = 0.0;
                for (auto& v : p) {
                    v = rng.uniform() + 0.05;
                    z += v;
                }
                for (auto& v : p) v /= z;
                const int y = static_cast<int>(rng.index(static_cast<std::size_t>(classes)));
                mean_ce[static_cast<std::size_t>(h)] +=
                    -std::log(p[static_cast<std::size_t>(y)]) / queries;
                task.probabilities.push_back(std::move(p));
                task.truth_index.push_back(y);
            }
        }
        const double alpha = rng.uniform(-1.5, 1.5);
        LossSpec spec;
        spec.alpha = alpha;
        double expected = 0.0;
        for (int h = 0; h <= height; ++h)
            expected += std::exp(alpha * h) * mean_ce[static_cast<std::size_t>(h)];
        const LossResult res = hierarchical_loss(tasks, height, spec);
        CHECK(std::abs(res.loss - expected) < 1e-9);

        // flat equals hierarchical restricted to the leaf level
        LossSpec flat;
        flat.mode = LossSpec::Mode::Flat;
        flat.alpha = alpha;
        CHECK(std::abs(hierarchical_loss(tasks, height, flat).loss -
                       mean_ce[static_cast<std::size_t>(height)]) < 1e-12);

        // cross-entropies are non-negative
        for (double ce : res.level_mean_ce) CHECK(ce >= 0.0);
    }
}

TEST_CASE("adam converges on a quadratic") {
    EncoderParams p;
    p.arch.angular_head = false;
    p.tensors.push_back(Tensor({1}));
    p.names.push_back("x");
    OptState opt = OptState::init(p, 0.1, 0.0);
    for (int step = 0; step < 1000; ++step) {
        GradientSet g;
        g.push_back(Tensor({1}));
        g[0].v[0] = 2.0 * (p.tensors[0].v[0] - 3.0);
        adam_step(p, opt, g);
    }
    CHECK(p.tensors[0].v[0] == doctest::Approx(3.0).epsilon(1e-4));
}

TEST_CASE("episode sampling: counts, determinism, pools") {
    // 16 sound-event + 16 speaker classes, 10 recordings each
    std::string tax;
    Manifest manifest;
    for (int c = 0; c < 16; ++c) {
        tax += "sed" + std::to_string(c) + "\tsm" + std::to_string(c / 4) + "\tSounds\n";
        tax += "spk" + std::to_string(c) + "\tvm" + std::to_string(c / 4) + "\tSpeech\tsid\n";
        for (int i = 0; i < 10; ++i) {
            manifest.entries.push_back(
                {"sed" + std::to_string(c) + "_" + std::to_string(i), "sed" + std::to_string(c),
                 1.0});
            manifest.entries.push_back(
                {"spk" + std::to_string(c) + "_" + std::to_string(i), "spk" + std::to_string(c),
                 1.0});
        }
    }
    const TaxonomyTree tree = TaxonomyTree::parse(tax);
    EpisodeSpec spec;

    const EpisodePlan plan = sample_episode(manifest, tree, spec, 99);
    CHECK(plan.classes.size() == 12);
    std::size_t support = 0, query = 0;
    for (const auto& s : plan.support) support += s.size();
    for (const auto& q : plan.query) query += q.size();
    CHECK(support == 60);
    CHECK(query == 60);
    // support and query never share a recording within a class
    for (std::size_t c = 0; c < plan.classes.size(); ++c)
        for (const auto& s : plan.support[c])
            for (const auto& q : plan.query[c]) CHECK(s.entry_index != q.entry_index);

    const EpisodePlan again = sample_episode(manifest, tree, spec, 99);
    CHECK(again.classes == plan.classes);
    for (std::size_t c = 0; c < plan.classes.size(); ++c) {
        for (std::size_t i = 0; i < plan.support[c].size(); ++i) {
            CHECK(again.support[c][i].entry_index == plan.support[c][i].entry_index);
            CHECK(again.support[c][i].draw_seed == plan.support[c][i].draw_seed);
        }
    }

    SUBCASE("configuration frequencies match the 60/20/20 weights") {
        int counts[3] = {0, 0, 0};
        for (int i = 0; i < 10000; ++i) {
            const EpisodePlan p = sample_episode(manifest, tree, spec, 1000 + i);
            counts[static_cast<int>(p.config)] += 1;
            // pool restrictions hold
            for (const auto& leaf : p.classes) {
                if (p.config == BatchConfig::SedOnly) CHECK_FALSE(tree.is_speaker_leaf(leaf));
                if (p.config == BatchConfig::SidOnly) CHECK(tree.is_speaker_leaf(leaf));
            }
        }
        CHECK(std::abs(counts[0] / 10000.0 - 0.60) < 0.02);
        CHECK(std::abs(counts[1] / 10000.0 - 0.20) < 0.02);
        CHECK(std::abs(counts[2] / 10000.0 - 0.20) < 0.02);
    }

    SUBCASE("insufficient classes or recordings error") {
        EpisodeSpec wide;
        wide.ways = 40;
        CHECK_THROWS_AS(sample_episode(manifest, tree, wide, 1), Error);
        EpisodeSpec deep;
        deep.shots = 8;
        deep.queries = 8;
        CHECK_THROWS_AS(sample_episode(manifest, tree, deep, 1), Error);
    }
}

TEST_CASE("train_step: zero learning rate leaves parameters unchanged") {
    const TaxonomyTree tree = four_leaf_tree();
    const Episode ep = clustered_episode(tree, 2, 2, 21);
    ArchConfig arch = ArchConfig::gradcheck_small();
    EncoderParams params = init_params(arch, 31);
    const EncoderParams before = params;
    OptState opt = OptState::init(params, 0.0, 0.0);
    LossSpec spec;
    const StepMetrics m = train_step(params, opt, ep, tree,
                                     DistanceKind::Variant::SquaredEuclidean, spec);
    CHECK(std::isfinite(m.loss));
    CHECK(m.level_accuracy.size() == 3);
    for (std::size_t i = 0; i < params.tensors.size(); ++i)
        CHECK(params.tensors[i].v == before.tensors[i].v);
}

TEST_CASE("train_step: single-class episode is rejected") {
    const TaxonomyTree tree = four_leaf_tree();
    Episode ep = clustered_episode(tree, 2, 2, 22);
    ep.classes.resize(1);
    ep.support.resize(1);
    ep.query.resize(1);
    EncoderParams params = init_params(ArchConfig::gradcheck_small(), 1);
    OptState opt = OptState::init(params);
    LossSpec spec;
    CHECK_THROWS_AS(
        train_step(params, opt, ep, tree, DistanceKind::Variant::SquaredEuclidean, spec), Error);
}

TEST_CASE("train_step: loss decreases when overfitting one episode") {
    const TaxonomyTree tree = four_leaf_tree();
    const Episode ep = clustered_episode(tree, 2, 2, 23);
    EncoderParams params = init_params(ArchConfig::gradcheck_small(), 41);
    OptState opt = OptState::init(params, 1e-3, 1e-4);
    LossSpec spec;
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 50; ++step) {
        const StepMetrics m = train_step(params, opt, ep, tree,
                                         DistanceKind::Variant::SquaredEuclidean, spec);
        if (step == 0) first = m.loss;
        last = m.loss;
    }
    INFO("first=", first, " last=", last);
    CHECK(last < first);
    CHECK(last < 0.5 * first);
}

TEST_CASE("weights: bitwise round-trip and digest rejection") {
    const EncoderParams p = init_params(ArchConfig{}, 77);
    const auto bytes = save_weights(p);
    const EncoderParams loaded = load_weights(bytes.data(), bytes.size());
    CHECK(save_weights(loaded) == bytes);
    // loading quantizes to the stored 32-bit values
    for (std::size_t i = 0; i < p.tensors.size(); ++i)
        for (std::size_t j = 0; j < p.tensors[i].v.size(); ++j)
            CHECK(loaded.tensors[i].v[j] ==
                  static_cast<double>(static_cast<float>(p.tensors[i].v[j])));

    CHECK_THROWS_AS(load_weights(bytes.data(), bytes.size() - 2), Error);
    auto corrupted = bytes;
    corrupted[9] ^= 0xff;  // inside the arch digest
    CHECK_THROWS_AS(load_weights(corrupted.data(), corrupted.size()), Error);
}

TEST_CASE("checkpoints carry optimizer state") {
    EncoderParams p = init_params(ArchConfig::gradcheck_small(), 2);
    OptState opt = OptState::init(p, 5e-4, 1e-5);
    // advance the state a little
    GradientSet g = zero_gradients(p);
    for (auto& t : g)
        for (auto& v : t.v) v = 0.01;
    adam_step(p, opt, g);
    adam_step(p, opt, g);

    const auto bytes = save_checkpoint(p, opt);
    const auto [p2, opt2] = load_checkpoint(bytes.data(), bytes.size());
    CHECK(opt2.step == 2);
    CHECK(opt2.lr == 5e-4);
    CHECK(opt2.l2 == 1e-5);
    CHECK(save_weights(p2) == save_weights(p));
    for (std::size_t i = 0; i < opt.m.size(); ++i)
        for (std::size_t j = 0; j < opt.m[i].v.size(); ++j)
            CHECK(opt2.m[i].v[j] == static_cast<double>(static_cast<float>(opt.m[i].v[j])));
}

TEST_CASE("fit on a tiny synthetic corpus is deterministic") {
    namespace fs = std::filesystem;
    const std::string dir = "hiproto_test_fit";
    fs::remove_all(dir);
    SynthSpec sspec;
    sspec.files_per_class = 10;  // 12 leaves x 10 files
    sspec.seed = 3;
    const SynthResult corpus = synth_generate(sspec, dir);

    FitConfig config;
    config.arch = ArchConfig::gradcheck_small();
    config.episode.ways = 4;
    config.episode.shots = 3;
    config.episode.queries = 2;
    config.episode.config_weights = {0, 100, 0};
    config.episode.episodes_per_epoch = 3;
    config.episode.epochs = 2;
    config.seed = 5;
    config.augment.noise = true;
    config.augment.reverb = false;

    const FitResult a = fit(corpus.manifest, dir, corpus.tree, config);
    CHECK(a.total_steps == 6);
    CHECK(a.log.size() == 2);
    CHECK(a.log[0].level_accuracy.size() == 3);

    const FitResult b = fit(corpus.manifest, dir, corpus.tree, config);
    REQUIRE(b.log.size() == a.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].mean_loss == b.log[i].mean_loss);
        CHECK(a.log[i].level_accuracy == b.log[i].level_accuracy);
    }
    CHECK(save_weights(a.params) == save_weights(b.params));

    fs::remove_all(dir);
}

TEST_CASE("describe reports layer table") {
    const DescribeResult r = describe(ArchConfig{});
    CHECK(r.layers.size() == 9);  // 4 conv + 4 affine + projection
    CHECK(r.total_params > 0);
    CHECK(r.total_macs > r.total_params);
    ArchConfig ang;
    ang.angular_head = true;
    CHECK(describe(ang).total_params == r.total_params + 2);
}
