#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hiproto/encoder.hpp"
#include "hiproto/taxonomy.hpp"

namespace hiproto {

// Embedded support set: leaf class -> embeddings of its support examples.
struct SupportSet {
    std::map<ClassId, std::vector<Embedding>> by_class;

    int dim() const;  // throws when empty or inconsistent
};

// Per-class running sums; a prototype is sum / count. Sums accumulate in
// 64-bit so incremental enrollment matches a from-scratch rebuild.
// count == 0 marks an entry loaded from a compact bank (mean only).
struct PrototypeEntry {
    std::uint64_t count = 0;
    std::vector<double> sum;

    std::vector<double> prototype() const;
    std::vector<float> stored() const;  // 32-bit storage form
};

// Class prototypes and meta-prototypes for every taxonomy level.
class PrototypeBank {
public:
    PrototypeBank() = default;
    PrototypeBank(int dim, int levels, const Digest& taxonomy_digest);

    int dim() const { return dim_; }
    int levels() const { return levels_; }  // tree height + 1
    const Digest& taxonomy_digest() const { return taxonomy_digest_; }

    bool has_level(int level) const;
    bool has_entry(int level, const ClassId& id) const;
    const std::map<ClassId, PrototypeEntry>& entries(int level) const;
    std::map<ClassId, PrototypeEntry>& mutable_entries(int level);
    std::vector<double> prototype_of(int level, const ClassId& id) const;

    // true when every entry carries a support count
    bool counts_known() const;

    // count * prototype equals the descendant-leaf sums (built banks only)
    void check_consistency(const TaxonomyTree& tree) const;

private:
    int dim_ = 0;
    int levels_ = 0;
    Digest taxonomy_digest_{};
    std::vector<std::map<ClassId, PrototypeEntry>> by_level_;
};

// Mean of each class's support embeddings (the leaf-level prototypes).
std::map<ClassId, Embedding> leaf_prototypes(const SupportSet& support);

// Full bank: at every level, a node's prototype is the mean over all support
// embeddings of its descendant leaves.
PrototypeBank aggregate_meta(const TaxonomyTree& tree, const SupportSet& support);

// Functional update: add embeddings to a leaf class and propagate the
// count-weighted means through all ancestor entries.
PrototypeBank enroll(const PrototypeBank& bank, const TaxonomyTree& tree, const ClassId& leaf,
                     const std::vector<Embedding>& new_embeddings);

// Bank file: magic HPB1, taxonomy digest, dim, level count, then one record
// per entry (level, id, count, float32 values). compact drops the counts.
std::vector<std::uint8_t> save_bank(const PrototypeBank& bank, bool compact = false);
PrototypeBank load_bank(const std::uint8_t* data, std::size_t len, const TaxonomyTree& tree);
void write_bank_file(const std::string& path, const PrototypeBank& bank, bool compact = false);
PrototypeBank read_bank_file(const std::string& path, const TaxonomyTree& tree);

}  // namespace hiproto
