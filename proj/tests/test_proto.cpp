#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hiproto/classifier.hpp"
#include "hiproto/protostore.hpp"
#include "hiproto/rng.hpp"

using namespace hiproto;

namespace {

const char* kTree =
    "l0\tm0\tt0\n"
    "l1\tm0\tt0\n"
    "l2\tm1\tt0\n"
    "l3\tm2\tt1\n";

TaxonomyTree tree() { return TaxonomyTree::parse(kTree); }

Embedding emb(std::initializer_list<double> v) { return Embedding(v); }

// random (tree, support) instance with unequal class counts
struct RandomInstance {
    TaxonomyTree tree;
    SupportSet support;
};

RandomInstance random_instance(Rng& rng, int dim) {
    const int tops = 1 + static_cast<int>(rng.index(2));
    const int mids = 1 + static_cast<int>(rng.index(3));
    const int leaves = 1 + static_cast<int>(rng.index(3));
    std::string text;
    for (int t = 0; t < tops; ++t)
        for (int m = 0; m < mids; ++m)
            for (int l = 0; l < leaves; ++l)
                text += "L" + std::to_string(t) + std::to_string(m) + std::to_string(l) + "\tM" +
                        std::to_string(t) + std::to_string(m) + "\tT" + std::to_string(t) + "\n";
    RandomInstance inst{TaxonomyTree::parse(text), {}};
    for (const ClassId& leaf : inst.tree.leaves()) {
        const std::size_t n = 1 + rng.index(5);
        for (std::size_t i = 0; i < n; ++i) {
            Embedding e(static_cast<std::size_t>(dim));
            for (auto& v : e) v = rng.normal();
            inst.support.by_class[leaf].push_back(std::move(e));
        }
    }
    return inst;
}

// brute-force flat mean over all support embeddings of descendant leaves
Embedding flat_mean(const TaxonomyTree& t, const SupportSet& s, const ClassId& node, int level) {
    Embedding sum;
    std::size_t count = 0;
    for (const auto& [leaf, embs] : s.by_class) {
        if (t.ancestor_at(leaf, level) != node) continue;
        for (const auto& e : embs) {
            if (sum.empty()) sum.assign(e.size(), 0.0);
            for (std::size_t i = 0; i < e.size(); ++i) sum[i] += e[i];
            ++count;
        }
    }
    for (auto& v : sum) v /= static_cast<double>(count);
    return sum;
}

}  // namespace

TEST_CASE("leaf prototypes are arithmetic means") {
    SupportSet s;
    s.by_class["a"] = {emb({1, 3}), emb({3, 5})};
    s.by_class["b"] = {emb({7, 7})};
    const auto protos = leaf_prototypes(s);
    CHECK(protos.at("a") == emb({2, 4}));
    CHECK(protos.at("b") == emb({7, 7}));

    // five random embeddings against an independent summation oracle
    Rng rng(11);
    SupportSet r;
    for (int i = 0; i < 5; ++i) {
        Embedding e(6);
        for (auto& v : e) v = rng.normal();
        r.by_class["x"].push_back(e);
    }
    Embedding oracle(6, 0.0);
    for (const auto& e : r.by_class["x"])
        for (std::size_t i = 0; i < e.size(); ++i) oracle[i] += e[i] / 5.0;
    const auto p = leaf_prototypes(r).at("x");
    for (std::size_t i = 0; i < oracle.size(); ++i)
        CHECK(p[i] == doctest::Approx(oracle[i]).epsilon(1e-12));

    SupportSet bad;
    bad.by_class["a"] = {emb({1, 2}), emb({1, 2, 3})};
    CHECK_THROWS_AS(leaf_prototypes(bad), Error);
}

TEST_CASE("meta-prototypes weight by support count, not by child") {
    const TaxonomyTree t = tree();
    SupportSet s;
    s.by_class["l0"] = {emb({1, 0})};                                  // one embedding
    s.by_class["l1"] = {emb({0, 2}), emb({0, 4}), emb({0, 6})};        // three, mean (0,4)
    const PrototypeBank bank = aggregate_meta(t, s);

    // (e1 + 3m) / 4, NOT (e1 + m) / 2
    const auto m0 = bank.prototype_of(1, "m0");
    CHECK(m0[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(m0[1] == doctest::Approx(3.0).epsilon(1e-12));
    const auto wrong = emb({0.5, 2.0});  // mean of child prototypes
    CHECK(m0[0] != doctest::Approx(wrong[0]));

    CHECK(bank.entries(1).at("m0").count == 4);
    // level-H entries equal leaf prototypes
    CHECK(bank.prototype_of(2, "l0") == emb({1, 0}));
    // single-leaf parent inherits the leaf prototype
    SupportSet solo;
    solo.by_class["l3"] = {emb({5, 5}), emb({7, 7})};
    const PrototypeBank b2 = aggregate_meta(t, solo);
    CHECK(b2.prototype_of(1, "m2") == b2.prototype_of(2, "l3"));
    CHECK(b2.prototype_of(0, "t1") == b2.prototype_of(2, "l3"));
}

TEST_CASE("balanced parents equal the mean of leaf prototypes") {
    const TaxonomyTree t = tree();
    SupportSet s;
    s.by_class["l0"] = {emb({0, 0}), emb({2, 0})};
    s.by_class["l1"] = {emb({0, 4}), emb({2, 4})};
    const PrototypeBank bank = aggregate_meta(t, s);
    CHECK(bank.prototype_of(1, "m0") == emb({1, 2}));
}

TEST_CASE("aggregate_meta matches the flat-mean oracle on random instances") {
    Rng rng(123);
    for (int trial = 0; trial < 50; ++trial) {
        const auto inst = random_instance(rng, 3 + static_cast<int>(rng.index(5)));
        const PrototypeBank bank = aggregate_meta(inst.tree, inst.support);
        for (int level = 0; level <= inst.tree.height(); ++level) {
            for (const auto& [id, entry] : bank.entries(level)) {
                const Embedding oracle = flat_mean(inst.tree, inst.support, id, level);
                const auto p = entry.prototype();
                REQUIRE(p.size() == oracle.size());
                for (std::size_t i = 0; i < p.size(); ++i)
                    CHECK(std::abs(p[i] - oracle[i]) < 1e-9);
            }
        }
        bank.check_consistency(inst.tree);
    }
}

TEST_CASE("aggregate_meta rejects support leaves missing from the tree") {
    SupportSet s;
    s.by_class["ghost"] = {emb({1, 2})};
    CHECK_THROWS_AS(aggregate_meta(tree(), s), Error);
}

TEST_CASE("enroll updates counts and ancestors functionally") {
    const TaxonomyTree t = tree();
    SupportSet s;
    s.by_class["l0"] = {emb({2, 2})};
    const PrototypeBank base = aggregate_meta(t, s);

    const PrototypeBank grown = enroll(base, t, "l1", {emb({4, 4})});
    CHECK(grown.prototype_of(2, "l1") == emb({4, 4}));
    CHECK(grown.entries(2).at("l1").count == 1);
    CHECK(grown.prototype_of(1, "m0") == emb({3, 3}));
    // the original bank is untouched
    CHECK_FALSE(base.has_entry(2, "l1"));
    CHECK(base.prototype_of(1, "m0") == emb({2, 2}));

    CHECK_THROWS_AS(enroll(base, t, "l1", {}), Error);
    CHECK_THROWS_AS(enroll(base, t, "m0", {emb({1, 1})}), Error);
    CHECK_THROWS_AS(enroll(base, t, "l1", {emb({1, 1, 1})}), Error);

    // enrolling against a different taxonomy is refused
    const TaxonomyTree other = TaxonomyTree::parse("l1\tm9\tt9\n");
    CHECK_THROWS_AS(enroll(base, other, "l1", {emb({1, 1})}), Error);
}

TEST_CASE("enroll equals a from-scratch rebuild") {
    Rng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        auto inst = random_instance(rng, 4);
        PrototypeBank bank = aggregate_meta(inst.tree, inst.support);

        // enroll extra embeddings one batch at a time
        const auto leaves = inst.tree.leaves();
        for (int batch = 0; batch < 3; ++batch) {
            const ClassId leaf = leaves[rng.index(leaves.size())];
            std::vector<Embedding> extra;
            for (std::size_t i = 0, n = 1 + rng.index(3); i < n; ++i) {
                Embedding e(4);
                for (auto& v : e) v = rng.normal();
                extra.push_back(e);
                inst.support.by_class[leaf].push_back(e);
            }
            bank = enroll(bank, inst.tree, leaf, extra);
        }

        const PrototypeBank rebuilt = aggregate_meta(inst.tree, inst.support);
        for (int level = 0; level <= inst.tree.height(); ++level) {
            REQUIRE(bank.entries(level).size() == rebuilt.entries(level).size());
            for (const auto& [id, entry] : bank.entries(level)) {
                const auto a = entry.prototype();
                const auto b = rebuilt.prototype_of(level, id);
                CHECK(entry.count == rebuilt.entries(level).at(id).count);
                for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-9);
            }
        }
        bank.check_consistency(inst.tree);
    }
}

TEST_CASE("enroll order does not matter") {
    const TaxonomyTree t = tree();
    SupportSet s;
    s.by_class["l0"] = {emb({1, 1})};
    const PrototypeBank base = aggregate_meta(t, s);
    const Embedding e1 = emb({2.345, -0.5});
    const Embedding e2 = emb({-7.25, 3.125});
    const PrototypeBank ab = enroll(enroll(base, t, "l0", {e1}), t, "l0", {e2});
    const PrototypeBank ba = enroll(enroll(base, t, "l0", {e2}), t, "l0", {e1});
    for (int level = 0; level <= t.height(); ++level)
        for (const auto& [id, entry] : ab.entries(level)) {
            const auto a = entry.prototype();
            const auto b = ba.prototype_of(level, id);
            for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-9);
        }
}

TEST_CASE("Eq-style count consistency on random banks") {
    // count * prototype of a parent equals the sum of descendant-leaf
    // count * prototype, up to accumulation order
    Rng rng(55);
    for (int trial = 0; trial < 20; ++trial) {
        const auto inst = random_instance(rng, 5);
        const PrototypeBank bank = aggregate_meta(inst.tree, inst.support);
        for (int level = 0; level < inst.tree.height(); ++level) {
            for (const auto& [id, entry] : bank.entries(level)) {
                Embedding weighted(5, 0.0);
                std::uint64_t count = 0;
                for (const auto& [leaf, le] : bank.entries(inst.tree.height())) {
                    if (inst.tree.ancestor_at(leaf, level) != id) continue;
                    const auto p = le.prototype();
                    for (std::size_t i = 0; i < p.size(); ++i)
                        weighted[i] += static_cast<double>(le.count) * p[i];
                    count += le.count;
                }
                CHECK(count == entry.count);
                const auto parent = entry.prototype();
                for (std::size_t i = 0; i < parent.size(); ++i)
                    CHECK(std::abs(static_cast<double>(entry.count) * parent[i] - weighted[i]) <
                          1e-9 * std::max(1.0, std::abs(weighted[i])));
            }
        }
    }
}

TEST_CASE("bank file round-trip is bitwise stable") {
    Rng rng(31);
    const auto inst = random_instance(rng, 6);
    const PrototypeBank bank = aggregate_meta(inst.tree, inst.support);
    const auto bytes = save_bank(bank);
    const PrototypeBank loaded = load_bank(bytes.data(), bytes.size(), inst.tree);

    // stored vectors identical bit for bit, counts preserved
    for (int level = 0; level <= inst.tree.height(); ++level) {
        REQUIRE(loaded.entries(level).size() == bank.entries(level).size());
        for (const auto& [id, entry] : bank.entries(level)) {
            const auto& le = loaded.entries(level).at(id);
            CHECK(le.count == entry.count);
            CHECK(le.stored() == entry.stored());
        }
    }
    // a second save reproduces the file exactly
    CHECK(save_bank(loaded) == bytes);

    // truncation and digest mismatch are rejected
    CHECK_THROWS_AS(load_bank(bytes.data(), bytes.size() - 1, inst.tree), Error);
    const TaxonomyTree other = tree();
    CHECK_THROWS_AS(load_bank(bytes.data(), bytes.size(), other), Error);
    auto broken = bytes;
    broken[1] = 'x';
    CHECK_THROWS_AS(load_bank(broken.data(), broken.size(), inst.tree), Error);
}

TEST_CASE("compact banks drop counts and refuse enrollment") {
    const TaxonomyTree t = tree();
    SupportSet s;
    s.by_class["l0"] = {emb({1, 2}), emb({3, 4})};
    const PrototypeBank bank = aggregate_meta(t, s);
    const auto bytes = save_bank(bank, /*compact=*/true);
    const PrototypeBank loaded = load_bank(bytes.data(), bytes.size(), t);
    CHECK_FALSE(loaded.counts_known());
    CHECK(loaded.prototype_of(2, "l0")[0] == doctest::Approx(2.0).epsilon(1e-6));
    CHECK_THROWS_AS(enroll(loaded, t, "l0", {emb({1, 1})}), Error);
}

TEST_CASE("distance functions") {
    const DistanceKind euclid = DistanceKind::squared_euclidean();
    CHECK(distance(emb({0, 0}), emb({3, 4}), euclid) == 25.0);
    CHECK(distance(emb({1.5, -2}), emb({1.5, -2}), euclid) == 0.0);

    const DistanceKind ang = DistanceKind::angular(1.0, 0.0);
    CHECK(distance(emb({2, 0}), emb({2, 0}), ang) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(distance(emb({1, 0}), emb({0, 1}), ang) == doctest::Approx(0.0).epsilon(1e-12));

    CHECK_THROWS_AS(distance(emb({1}), emb({1, 2}), euclid), Error);
    CHECK_THROWS_AS(distance(emb({0, 0}), emb({1, 1}), ang), Error);
    CHECK_THROWS_AS(DistanceKind::angular(0.0, 0.0), Error);
}

namespace {

PrototypeBank bank_from(const TaxonomyTree& t,
                        const std::map<ClassId, std::vector<Embedding>>& support) {
    SupportSet s;
    s.by_class = support;
    return aggregate_meta(t, s);
}

}  // namespace

TEST_CASE("level posterior values and properties") {
    const TaxonomyTree t = tree();
    // place l0/l1 prototypes equidistant from the origin query
    const PrototypeBank eq = bank_from(t, {{"l0", {emb({1, 0})}}, {"l1", {emb({-1, 0})}}});
    const auto post = level_posterior(emb({0, 0}), eq, 2, DistanceKind::squared_euclidean());
    CHECK(post.probabilities.at("l0") == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(post.probabilities.at("l1") == doctest::Approx(0.5).epsilon(1e-12));

    // distances (0, 2) evaluate to a known softmax
    const PrototypeBank d02 =
        bank_from(t, {{"l0", {emb({0, 0})}}, {"l1", {emb({std::sqrt(2.0), 0})}}});
    const auto p = level_posterior(emb({0, 0}), d02, 2, DistanceKind::squared_euclidean());
    CHECK(std::abs(p.probabilities.at("l0") - 0.880797) < 1e-6);
    CHECK(std::abs(p.probabilities.at("l1") - 0.119203) < 1e-6);

    // adding a constant to every distance leaves the posterior unchanged
    const PrototypeBank shifted =
        bank_from(t, {{"l0", {emb({2.0, 0})}}, {"l1", {emb({std::sqrt(6.0), 0})}}});
    const auto ps = level_posterior(emb({0, 0}), shifted, 2, DistanceKind::squared_euclidean());
    CHECK(ps.probabilities.at("l0") == doctest::Approx(p.probabilities.at("l0")).epsilon(1e-9));

    // empty level errors
    PrototypeBank sparse(2, 3, t.digest());
    sparse.mutable_entries(2)["l0"] = eq.entries(2).at("l0");
    CHECK_THROWS_AS(level_posterior(emb({0, 0}), sparse, 1, DistanceKind::squared_euclidean()),
                    Error);
}

TEST_CASE("posterior sums to one and argmax equals argmin distance") {
    Rng rng(9);
    for (int trial = 0; trial < 1000; ++trial) {
        const int dim = 2 + static_cast<int>(rng.index(6));
        const int classes = 2 + static_cast<int>(rng.index(5));
        std::string text;
        for (int c = 0; c < classes; ++c)
            text += "lf" + std::to_string(c) + "\ttop\n";
        const TaxonomyTree t2 = TaxonomyTree::parse(text);
        SupportSet s;
        for (int c = 0; c < classes; ++c) {
            Embedding e(static_cast<std::size_t>(dim));
            for (auto& v : e) v = rng.normal() * (trial % 7 == 0 ? 500.0 : 2.0);
            s.by_class["lf" + std::to_string(c)].push_back(e);
        }
        const PrototypeBank bank = aggregate_meta(t2, s);
        Embedding q(static_cast<std::size_t>(dim));
        for (auto& v : q) v = rng.normal() * (trial % 7 == 0 ? 500.0 : 2.0);

        const DistanceKind kind = (trial % 2) ? DistanceKind::angular(4.0, -1.0)
                                              : DistanceKind::squared_euclidean();
        const auto post = level_posterior(q, bank, 1, kind);
        double sum = 0.0;
        ClassId argmax;
        double best_p = -1.0;
        for (const auto& [id, prob] : post.probabilities) {
            CHECK(prob >= 0.0);
            CHECK(prob <= 1.0);
            CHECK(std::isfinite(prob));
            sum += prob;
            if (prob > best_p) {
                best_p = prob;
                argmax = id;
            }
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);

        ClassId argmin;
        double best_d = std::numeric_limits<double>::infinity();
        for (const auto& [id, entry] : bank.entries(1)) {
            const double d = distance(q, entry.prototype(), kind);
            if (d < best_d) {
                best_d = d;
                argmin = id;
            }
        }
        CHECK(argmax == argmin);
    }
}

TEST_CASE("squared-euclid posterior is rotation invariant") {
    Rng rng(17);
    const int dim = 4;
    // random orthogonal matrix via Gram-Schmidt
    std::vector<Embedding> basis;
    while (basis.size() < dim) {
        Embedding v(dim);
        for (auto& x : v) x = rng.normal();
        for (const auto& b : basis) {
            double dot = 0.0;
            for (int i = 0; i < dim; ++i) dot += v[static_cast<std::size_t>(i)] * b[static_cast<std::size_t>(i)];
            for (int i = 0; i < dim; ++i) v[static_cast<std::size_t>(i)] -= dot * b[static_cast<std::size_t>(i)];
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        if (norm < 1e-6) continue;
        for (auto& x : v) x /= std::sqrt(norm);
        basis.push_back(v);
    }
    const auto rotate = [&](const Embedding& v) {
        Embedding out(dim, 0.0);
        for (int r = 0; r < dim; ++r)
            for (int c = 0; c < dim; ++c)
                out[static_cast<std::size_t>(r)] +=
                    basis[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] *
                    v[static_cast<std::size_t>(c)];
        return out;
    };

    std::string text = "a\ttop\nb\ttop\nc\ttop\n";
    const TaxonomyTree t2 = TaxonomyTree::parse(text);
    SupportSet plain, rotated;
    for (const ClassId leaf : {"a", "b", "c"}) {
        Embedding e(dim);
        for (auto& v : e) v = rng.normal() * 3.0;
        plain.by_class[leaf].push_back(e);
        rotated.by_class[leaf].push_back(rotate(e));
    }
    Embedding q(dim);
    for (auto& v : q) v = rng.normal() * 3.0;

    const auto p1 = level_posterior(q, aggregate_meta(t2, plain), 1,
                                    DistanceKind::squared_euclidean());
    const auto p2 = level_posterior(rotate(q), aggregate_meta(t2, rotated), 1,
                                    DistanceKind::squared_euclidean());
    for (const auto& [id, prob] : p1.probabilities)
        CHECK(std::abs(prob - p2.probabilities.at(id)) < 1e-6);
}

TEST_CASE("posterior is stable for huge distances") {
    const TaxonomyTree t2 = TaxonomyTree::parse("a\ttop\nb\ttop\n");
    const PrototypeBank bank =
        bank_from(t2, {{"a", {emb({1000.0, 0})}}, {"b", {emb({-1000.0, 0})}}});
    const auto post = level_posterior(emb({0, 0}), bank, 1, DistanceKind::squared_euclidean());
    double sum = 0.0;
    for (const auto& [id, p] : post.probabilities) {
        CHECK(std::isfinite(p));
        sum += p;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
}

TEST_CASE("predict: balanced bank sends a leaf prototype to its own chain") {
    const TaxonomyTree t = tree();
    const PrototypeBank bank = bank_from(t, {
        {"l0", {emb({0, 0}), emb({0, 2})}},
        {"l1", {emb({4, 0}), emb({4, 2})}},
        {"l2", {emb({20, 0}), emb({20, 2})}},
        {"l3", {emb({40, 0}), emb({40, 2})}},
    });
    const Embedding q = bank.prototype_of(2, "l0");
    const Prediction pred = predict(q, bank, t, DistanceKind::squared_euclidean());
    REQUIRE(pred.per_level.size() == 3);
    CHECK(pred.per_level[2].label == "l0");
    CHECK(pred.per_level[1].label == t.ancestor_at("l0", 1));
    CHECK(pred.per_level[0].label == t.ancestor_at("l0", 0));
    CHECK(pred.per_level[2].min_distance == 0.0);
    CHECK_FALSE(pred.per_level[0].unknown);

    SUBCASE("zero thresholds reject everything") {
        PredictOptions opt;
        opt.reject_thresholds = {0.0, 0.0, 0.0};
        const Embedding off = emb({1.0, 1.0});
        const Prediction rejected = predict(off, bank, t, DistanceKind::squared_euclidean(), opt);
        for (const auto& lp : rejected.per_level) {
            CHECK(lp.unknown);
            CHECK(lp.label.empty());
        }
    }

    SUBCASE("equidistant prototypes break ties lexicographically") {
        const Embedding mid = emb({2.0, 1.0});  // equidistant from l0 and l1 clusters
        const Prediction p2 = predict(mid, bank, t, DistanceKind::squared_euclidean());
        CHECK(p2.per_level[2].label == "l0");
    }

    SUBCASE("ancestor consistency snaps upper levels") {
        PredictOptions opt;
        opt.ancestor_consistency = true;
        const Prediction p3 = predict(q, bank, t, DistanceKind::squared_euclidean(), opt);
        CHECK(p3.per_level[0].label == "t0");
        CHECK(p3.per_level[1].label == "m0");
    }

    SUBCASE("missing level errors") {
        PrototypeBank partial(2, 3, t.digest());
        partial.mutable_entries(2)["l0"] = bank.entries(2).at("l0");
        CHECK_THROWS_AS(predict(q, partial, t, DistanceKind::squared_euclidean()), Error);
    }
}
