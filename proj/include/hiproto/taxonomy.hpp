#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hiproto/io.hpp"

namespace hiproto {

// Class labels are opaque case-sensitive tokens, unique within one tree.
using ClassId = std::string;

// Immutable class ontology with levels 0 (most general) .. height() (leaves).
// An implicit root sits above level 0; it is part of the model but never
// stored, which is why lca_depth can return -1.
//
// File format: one leaf per line, tab-separated columns ordered
// leaf, parent, ..., level-0 ancestor. Lines starting with '#' are ignored.
// A trailing extra column equal to "sid" tags the leaf as a speaker-identity
// class (used to split episode pools into sound-event vs speaker classes).
class TaxonomyTree {
public:
    static TaxonomyTree parse(std::string_view text);

    int height() const { return height_; }

    bool contains(const ClassId& id) const { return index_.count(id) != 0; }
    // level of a known id; throws on unknown
    int level_of(const ClassId& id) const;
    bool is_leaf(const ClassId& id) const { return level_of(id) == height_; }
    bool is_speaker_leaf(const ClassId& leaf) const;

    // unique level-h ancestor of a leaf; ancestor_at(leaf, height()) == leaf
    const ClassId& ancestor_at(const ClassId& leaf, int level) const;

    // parent of any node; throws for level-0 classes (implicit root)
    const ClassId& parent_of(const ClassId& id) const;

    // deepest level at which the two leaves share an ancestor; -1 when they
    // split already at level 0 (their lowest common ancestor is the implicit
    // root); lca_depth(x, x) == height()
    int lca_depth(const ClassId& a, const ClassId& b) const;

    // ids present at a level, sorted
    std::vector<ClassId> level_classes(int level) const;
    std::size_t level_size(int level) const;
    std::vector<ClassId> leaves() const { return level_classes(height_); }

    // canonical text form; parse(serialize()) reproduces the tree
    std::string serialize() const;
    Digest digest() const { return sha256(serialize()); }

private:
    struct Node {
        ClassId id;
        int level = 0;
        int parent = -1;  // -1 = implicit root (level 0 only)
        bool sid = false;
    };

    int node_index(const ClassId& id) const;

    int height_ = 0;
    std::vector<Node> nodes_;
    std::unordered_map<std::string, int> index_;
    std::vector<std::vector<int>> by_level_;
};

}  // namespace hiproto
