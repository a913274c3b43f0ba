#include "hiproto/protostore.hpp"

#include <cmath>

namespace hiproto {

int SupportSet::dim() const {
    int dim = -1;
    for (const auto& [id, embs] : by_class) {
        if (embs.empty()) throw Error("support set: class '" + id + "' has no embeddings");
        for (const auto& e : embs) {
            if (dim < 0) dim = static_cast<int>(e.size());
            if (static_cast<int>(e.size()) != dim)
                throw Error("support set: embedding dimension mismatch in class '" + id + "'");
        }
    }
    if (dim <= 0) throw Error("support set: empty");
    return dim;
}

std::vector<double> PrototypeEntry::prototype() const {
    if (count == 0) return sum;  // compact entry: mean stored directly
    std::vector<double> p(sum.size());
    for (std::size_t i = 0; i < sum.size(); ++i) p[i] = sum[i] / static_cast<double>(count);
    return p;
}

std::vector<float> PrototypeEntry::stored() const {
    const auto p = prototype();
    std::vector<float> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = static_cast<float>(p[i]);
    return out;
}

PrototypeBank::PrototypeBank(int dim, int levels, const Digest& taxonomy_digest)
    : dim_(dim), levels_(levels), taxonomy_digest_(taxonomy_digest),
      by_level_(static_cast<std::size_t>(levels)) {
    if (dim < 1 || levels < 1) throw Error("prototype bank: bad dimensions");
}

bool PrototypeBank::has_level(int level) const {
    return level >= 0 && level < levels_ && !by_level_[static_cast<std::size_t>(level)].empty();
}

bool PrototypeBank::has_entry(int level, const ClassId& id) const {
    return level >= 0 && level < levels_ &&
           by_level_[static_cast<std::size_t>(level)].count(id) != 0;
}

const std::map<ClassId, PrototypeEntry>& PrototypeBank::entries(int level) const {
    if (level < 0 || level >= levels_)
        throw Error("prototype bank: level " + std::to_string(level) + " out of range");
    return by_level_[static_cast<std::size_t>(level)];
}

std::map<ClassId, PrototypeEntry>& PrototypeBank::mutable_entries(int level) {
    if (level < 0 || level >= levels_)
        throw Error("prototype bank: level " + std::to_string(level) + " out of range");
    return by_level_[static_cast<std::size_t>(level)];
}

std::vector<double> PrototypeBank::prototype_of(int level, const ClassId& id) const {
    const auto& m = entries(level);
    auto it = m.find(id);
    if (it == m.end())
        throw Error("prototype bank: no entry for '" + id + "' at level " + std::to_string(level));
    return it->second.prototype();
}

bool PrototypeBank::counts_known() const {
    for (const auto& level : by_level_)
        for (const auto& [id, e] : level)
            if (e.count == 0) return false;
    return true;
}

void PrototypeBank::check_consistency(const TaxonomyTree& tree) const {
    if (levels_ != tree.height() + 1)
        throw Error("prototype bank: level count does not match the taxonomy");
    for (int level = 0; level < levels_; ++level) {
        for (const auto& [id, e] : by_level_[static_cast<std::size_t>(level)]) {
            if (!tree.contains(id) || tree.level_of(id) != level)
                throw Error("prototype bank: '" + id + "' is not a level-" +
                            std::to_string(level) + " class");
            if (static_cast<int>(e.sum.size()) != dim_)
                throw Error("prototype bank: dimension mismatch for '" + id + "'");
        }
    }
    // parent counts must equal the sum of their present children
    for (int level = 1; level < levels_; ++level) {
        std::map<ClassId, std::uint64_t> child_totals;
        for (const auto& [id, e] : by_level_[static_cast<std::size_t>(level)])
            child_totals[tree.parent_of(id)] += e.count;
        for (const auto& [parent, total] : child_totals) {
            auto it = by_level_[static_cast<std::size_t>(level) - 1].find(parent);
            if (it == by_level_[static_cast<std::size_t>(level) - 1].end())
                throw Error("prototype bank: children present but parent '" + parent +
                            "' missing");
            if (it->second.count != total)
                throw Error("prototype bank: count mismatch at '" + parent + "'");
        }
    }
}

std::map<ClassId, Embedding> leaf_prototypes(const SupportSet& support) {
    const int dim = support.dim();
    std::map<ClassId, Embedding> out;
    for (const auto& [id, embs] : support.by_class) {
        std::vector<double> sum(static_cast<std::size_t>(dim), 0.0);
        for (const auto& e : embs)
            for (std::size_t i = 0; i < e.size(); ++i) sum[i] += e[i];
        for (auto& v : sum) v /= static_cast<double>(embs.size());
        out.emplace(id, std::move(sum));
    }
    return out;
}

PrototypeBank aggregate_meta(const TaxonomyTree& tree, const SupportSet& support) {
    const int dim = support.dim();
    PrototypeBank bank(dim, tree.height() + 1, tree.digest());
    for (const auto& [leaf, embs] : support.by_class) {
        if (!tree.contains(leaf) || !tree.is_leaf(leaf))
            throw Error("aggregate_meta: support class '" + leaf + "' is not a leaf of the tree");
        std::vector<double> class_sum(static_cast<std::size_t>(dim), 0.0);
        for (const auto& e : embs) {
            if (static_cast<int>(e.size()) != dim)
                throw Error("aggregate_meta: embedding dimension mismatch");
            for (std::size_t i = 0; i < e.size(); ++i) class_sum[i] += e[i];
        }
        // a leaf's support contributes to its entry at every level
        for (int level = 0; level <= tree.height(); ++level) {
            const ClassId& node = tree.ancestor_at(leaf, level);
            auto& entry = bank.mutable_entries(level)[node];
            if (entry.sum.empty()) entry.sum.assign(static_cast<std::size_t>(dim), 0.0);
            for (std::size_t i = 0; i < class_sum.size(); ++i) entry.sum[i] += class_sum[i];
            entry.count += embs.size();
        }
    }
    return bank;
}

PrototypeBank enroll(const PrototypeBank& bank, const TaxonomyTree& tree, const ClassId& leaf,
                     const std::vector<Embedding>& new_embeddings) {
    if (new_embeddings.empty()) throw Error("enroll: need at least one embedding");
    if (!tree.contains(leaf) || !tree.is_leaf(leaf))
        throw Error("enroll: '" + leaf + "' is not a leaf of the tree");
    if (tree.digest() != bank.taxonomy_digest())
        throw Error("enroll: bank was built against a different taxonomy");
    if (!bank.counts_known())
        throw Error("enroll: bank was saved compact; support counts are unavailable");

    std::vector<double> add(static_cast<std::size_t>(bank.dim()), 0.0);
    for (const auto& e : new_embeddings) {
        if (static_cast<int>(e.size()) != bank.dim())
            throw Error("enroll: embedding dimension mismatch");
        for (std::size_t i = 0; i < e.size(); ++i) add[i] += e[i];
    }

    PrototypeBank out = bank;
    for (int level = 0; level <= tree.height(); ++level) {
        const ClassId& node = tree.ancestor_at(leaf, level);
        auto& entry = out.mutable_entries(level)[node];
        if (entry.sum.empty()) entry.sum.assign(static_cast<std::size_t>(bank.dim()), 0.0);
        for (std::size_t i = 0; i < add.size(); ++i) entry.sum[i] += add[i];
        entry.count += new_embeddings.size();
    }
    return out;
}

namespace {
constexpr char kBankMagic[4] = {'H', 'P', 'B', '1'};
}

std::vector<std::uint8_t> save_bank(const PrototypeBank& bank, bool compact) {
    ByteWriter b;
    b.bytes(kBankMagic, 4);
    b.bytes(bank.taxonomy_digest().data(), bank.taxonomy_digest().size());
    b.u32(static_cast<std::uint32_t>(bank.dim()));
    b.u32(static_cast<std::uint32_t>(bank.levels()));
    for (int level = 0; level < bank.levels(); ++level) {
        for (const auto& [id, entry] : bank.entries(level)) {
            b.u32(static_cast<std::uint32_t>(level));
            b.u32(static_cast<std::uint32_t>(id.size()));
            b.str(id);
            b.u64(compact ? 0 : entry.count);
            for (float v : entry.stored()) b.f32(v);
        }
    }
    return b.data();
}

PrototypeBank load_bank(const std::uint8_t* data, std::size_t len, const TaxonomyTree& tree) {
    ByteReader r(data, len);
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kBankMagic, 4) != 0) throw Error("bank file: bad magic");
    Digest digest;
    r.raw(digest.data(), digest.size());
    if (digest != tree.digest())
        throw Error("bank file: taxonomy digest mismatch");
    const int dim = static_cast<int>(r.u32());
    const int levels = static_cast<int>(r.u32());
    if (levels != tree.height() + 1)
        throw Error("bank file: level count does not match the taxonomy");

    PrototypeBank bank(dim, levels, digest);
    while (!r.at_end()) {
        const int level = static_cast<int>(r.u32());
        if (level < 0 || level >= levels) throw Error("bank file: entry level out of range");
        const std::uint32_t id_len = r.u32();
        const std::string id = r.str(id_len);
        if (!tree.contains(id) || tree.level_of(id) != level)
            throw Error("bank file: '" + id + "' is not a level-" + std::to_string(level) +
                        " class of the taxonomy");
        PrototypeEntry e;
        e.count = r.u64();
        std::vector<double> mean(static_cast<std::size_t>(dim));
        for (auto& v : mean) v = r.f32();
        if (e.count == 0) {
            e.sum = std::move(mean);
        } else {
            e.sum.resize(mean.size());
            for (std::size_t i = 0; i < mean.size(); ++i)
                e.sum[i] = mean[i] * static_cast<double>(e.count);
        }
        auto& m = bank.mutable_entries(level);
        if (!m.emplace(id, std::move(e)).second)
            throw Error("bank file: duplicate entry for '" + id + "'");
    }
    return bank;
}

void write_bank_file(const std::string& path, const PrototypeBank& bank, bool compact) {
    write_file(path, save_bank(bank, compact));
}

PrototypeBank read_bank_file(const std::string& path, const TaxonomyTree& tree) {
    const auto bytes = read_file(path);
    return load_bank(bytes.data(), bytes.size(), tree);
}

}  // namespace hiproto
