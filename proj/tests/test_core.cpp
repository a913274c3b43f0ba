#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <set>

#include "hiproto/corpus.hpp"
#include "hiproto/io.hpp"
#include "hiproto/rng.hpp"
#include "hiproto/taxonomy.hpp"

using namespace hiproto;

TEST_CASE("sha256 known vectors") {
    CHECK(to_hex(sha256(std::string(""))) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(to_hex(sha256(std::string("abc"))) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    // multi-block input
    CHECK(to_hex(sha256(std::string("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq"))) ==
          "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST_CASE("byte writer/reader round-trip and truncation") {
    ByteWriter w;
    w.u32(0xdeadbeef);
    w.u64(0x0123456789abcdefull);
    w.f32(3.25f);
    w.str("hi");
    ByteReader r(w.data());
    CHECK(r.u32() == 0xdeadbeef);
    CHECK(r.u64() == 0x0123456789abcdefull);
    CHECK(r.f32() == 3.25f);
    CHECK(r.str(2) == "hi");
    CHECK(r.at_end());

    ByteReader r2(w.data().data(), 3);
    CHECK_THROWS_AS(r2.u32(), Error);
}

TEST_CASE("rng determinism and ranges") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c(7);
    for (int i = 0; i < 1000; ++i) {
        const double u = c.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(c.index(10) < 10);
    }
    // sample_without_replacement yields distinct values
    Rng d(3);
    const auto picks = d.sample_without_replacement(50, 20);
    std::set<std::size_t> distinct(picks.begin(), picks.end());
    CHECK(distinct.size() == 20);
}

namespace {

const char* kSmallTaxonomy =
    "alarm_clock\tAlarm\tAlarms\n"
    "door_bell\tBell\tAlarms\n";

}  // namespace

TEST_CASE("taxonomy parse basics") {
    const TaxonomyTree tree = TaxonomyTree::parse(kSmallTaxonomy);
    CHECK(tree.height() == 2);
    CHECK(tree.level_size(0) == 1);
    CHECK(tree.level_size(1) == 2);
    CHECK(tree.level_size(2) == 2);
    CHECK(tree.ancestor_at("door_bell", 1) == "Bell");
    CHECK(tree.ancestor_at("door_bell", 0) == "Alarms");
    CHECK(tree.ancestor_at("door_bell", 2) == "door_bell");
}

TEST_CASE("taxonomy single chain") {
    const TaxonomyTree tree = TaxonomyTree::parse("spkr_7\tSpeakerX\tSpeech\n");
    CHECK(tree.height() == 2);
    CHECK(tree.level_size(0) == 1);
    CHECK(tree.leaves() == std::vector<ClassId>{"spkr_7"});
}

TEST_CASE("taxonomy parse errors") {
    // two different parents for one leaf
    CHECK_THROWS_AS(TaxonomyTree::parse("x\ta\tTop\nx\tb\tTop\n"), Error);
    // duplicate leaf with same parent is still a duplicate
    CHECK_THROWS_AS(TaxonomyTree::parse("x\ta\tTop\nx\ta\tTop\n"), Error);
    // ragged row
    CHECK_THROWS_AS(TaxonomyTree::parse("a\tb\tc\nd\te\n"), Error);
    // empty file
    CHECK_THROWS_AS(TaxonomyTree::parse(""), Error);
    CHECK_THROWS_AS(TaxonomyTree::parse("# only a comment\n"), Error);
    // inconsistent mid-level parent
    CHECK_THROWS_AS(TaxonomyTree::parse("l1\tMid\tTopA\nl2\tMid\tTopB\n"), Error);
    // id reused across levels
    CHECK_THROWS_AS(TaxonomyTree::parse("x\tx\tTop\n"), Error);
    // whitespace in id
    CHECK_THROWS_AS(TaxonomyTree::parse("a b\tMid\tTop\n"), Error);
}

TEST_CASE("taxonomy comments and crlf") {
    const TaxonomyTree tree =
        TaxonomyTree::parse("# header\r\nalarm_clock\tAlarm\tAlarms\r\ndoor_bell\tBell\tAlarms");
    CHECK(tree.height() == 2);
    CHECK(tree.level_size(2) == 2);
}

TEST_CASE("taxonomy sid tag") {
    const TaxonomyTree tree = TaxonomyTree::parse(
        "beep\tBeeps\tAlarms\n"
        "spk_a\tVoices\tSpeech\tsid\n");
    CHECK(tree.is_speaker_leaf("spk_a"));
    CHECK_FALSE(tree.is_speaker_leaf("beep"));
    // tag survives the round-trip
    const TaxonomyTree again = TaxonomyTree::parse(tree.serialize());
    CHECK(again.is_speaker_leaf("spk_a"));
}

TEST_CASE("lca_depth identities and root case") {
    const TaxonomyTree tree = TaxonomyTree::parse(
        "a\tm1\tt1\n"
        "b\tm1\tt1\n"
        "c\tm2\tt1\n"
        "d\tm3\tt2\n");
    CHECK(tree.lca_depth("a", "a") == 2);
    CHECK(tree.lca_depth("a", "b") == 1);  // siblings
    CHECK(tree.lca_depth("a", "c") == 0);  // same top only
    CHECK(tree.lca_depth("a", "d") == -1); // implicit root
    CHECK(tree.lca_depth("a", "b") == tree.lca_depth("b", "a"));
    CHECK_THROWS_AS(tree.lca_depth("a", "nope"), Error);
    CHECK_THROWS_AS(tree.lca_depth("a", "m1"), Error);
}

TEST_CASE("ancestor chain property on random trees") {
    // brute-force chain walk: ancestor_at(a, h) must be an ancestor of
    // ancestor_at(a, h') for h <= h'
    Rng rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        std::string text;
        const int tops = 1 + static_cast<int>(rng.index(3));
        const int mids = 1 + static_cast<int>(rng.index(3));
        const int leaves = 1 + static_cast<int>(rng.index(3));
        for (int t = 0; t < tops; ++t)
            for (int m = 0; m < mids; ++m)
                for (int l = 0; l < leaves; ++l)
                    text += "L" + std::to_string(t) + "_" + std::to_string(m) + "_" +
                            std::to_string(l) + "\tM" + std::to_string(t) + "_" +
                            std::to_string(m) + "\tT" + std::to_string(t) + "\n";
        const TaxonomyTree tree = TaxonomyTree::parse(text);
        for (const ClassId& leaf : tree.leaves()) {
            for (int h = 0; h <= tree.height(); ++h) {
                const ClassId anc = tree.ancestor_at(leaf, h);
                // walk the parent chain from the leaf and confirm we meet anc at level h
                ClassId walk = leaf;
                for (int level = tree.height(); level > h; --level) walk = tree.parent_of(walk);
                CHECK(walk == anc);
            }
        }
    }
}

TEST_CASE("taxonomy serialize round-trip") {
    const TaxonomyTree tree = TaxonomyTree::parse(kSmallTaxonomy);
    const TaxonomyTree again = TaxonomyTree::parse(tree.serialize());
    CHECK(tree.serialize() == again.serialize());
    CHECK(tree.digest() == again.digest());
}

TEST_CASE("manifest parse/serialize and validation") {
    const TaxonomyTree tree = TaxonomyTree::parse(kSmallTaxonomy);
    Manifest m = Manifest::parse("wav/a.wav\talarm_clock\t1.500000\nwav/b.wav\tdoor_bell\t2\n");
    CHECK(m.entries.size() == 2);
    CHECK(m.entries[0].duration_s == doctest::Approx(1.5));
    m.validate(tree);

    const Manifest again = Manifest::parse(m.serialize());
    CHECK(again.entries.size() == 2);
    CHECK(again.entries[1].leaf == "door_bell");

    Manifest bad = m;
    bad.entries.push_back({"wav/a.wav", "alarm_clock", 1.0});
    CHECK_THROWS_AS(bad.validate(tree), Error);  // duplicate path
    Manifest unknown = m;
    unknown.entries.push_back({"wav/c.wav", "not_a_class", 1.0});
    CHECK_THROWS_AS(unknown.validate(tree), Error);
    // ancestors are not valid manifest classes
    Manifest midlevel = m;
    midlevel.entries.push_back({"wav/d.wav", "Bell", 1.0});
    CHECK_THROWS_AS(midlevel.validate(tree), Error);

    CHECK_THROWS_AS(Manifest::parse("onlyonecolumn\n"), Error);
    CHECK_THROWS_AS(Manifest::parse("a\tb\tnotanumber\n"), Error);
}

namespace {

Manifest synthetic_manifest(const std::vector<std::pair<ClassId, int>>& counts) {
    Manifest m;
    int idx = 0;
    for (const auto& [leaf, n] : counts)
        for (int i = 0; i < n; ++i)
            m.entries.push_back({"wav/file" + std::to_string(idx++) + ".wav", leaf, 1.0});
    return m;
}

}  // namespace

TEST_CASE("stratified split balance and determinism") {
    const Manifest m = synthetic_manifest({{"a", 10}, {"b", 23}, {"c", 7}});
    const FoldAssignment folds = stratified_split(m, 10, 123);
    REQUIRE(folds.size() == m.entries.size());

    std::map<ClassId, std::map<int, int>> per_class;
    for (std::size_t i = 0; i < folds.size(); ++i) {
        CHECK(folds[i] >= 0);
        CHECK(folds[i] < 10);
        per_class[m.entries[i].leaf][folds[i]] += 1;
    }
    // class a: exactly 1 per fold
    for (int f = 0; f < 10; ++f) CHECK(per_class["a"][f] == 1);
    // class b: 23 entries over 10 folds -> 2 or 3 per fold
    for (int f = 0; f < 10; ++f) {
        CHECK(per_class["b"][f] >= 2);
        CHECK(per_class["b"][f] <= 3);
    }
    // class c: 0 or 1 per fold
    for (int f = 0; f < 10; ++f) CHECK(per_class["c"][f] <= 1);

    CHECK(stratified_split(m, 10, 123) == folds);
    CHECK(stratified_split(m, 10, 124) != folds);

    CHECK_THROWS_AS(stratified_split(Manifest{}, 10, 1), Error);
    CHECK_THROWS_AS(stratified_split(m, 1, 1), Error);
}
