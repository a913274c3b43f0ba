#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hiproto/taxonomy.hpp"

namespace hiproto {

// Dataset description: one row per audio file.
// File format: UTF-8 TSV, columns path, leaf class id, duration seconds;
// '#' lines ignored.
struct ManifestEntry {
    std::string path;
    ClassId leaf;
    double duration_s = 0.0;
};

struct Manifest {
    std::vector<ManifestEntry> entries;

    static Manifest parse(std::string_view text);
    static Manifest load(const std::string& path);
    std::string serialize() const;
    void save(const std::string& path) const;

    // every leaf id exists as a leaf of the tree; paths unique
    void validate(const TaxonomyTree& tree) const;

    // entry indices grouped by leaf id, classes in sorted order
    std::vector<std::pair<ClassId, std::vector<std::size_t>>> by_class() const;
};

// fold index per manifest entry
using FoldAssignment = std::vector<int>;

// Deterministic stratified split: per leaf class, fold sizes differ by at
// most one. Fold `folds - 1` is the conventional post-training evaluation fold.
FoldAssignment stratified_split(const Manifest& manifest, int folds, std::uint64_t seed);

std::string serialize_folds(const Manifest& manifest, const FoldAssignment& folds);

}  // namespace hiproto
