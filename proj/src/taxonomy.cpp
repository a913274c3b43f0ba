#include "hiproto/taxonomy.hpp"

#include <algorithm>

namespace hiproto {

namespace {

std::vector<std::string> split_tabs(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t tab = line.find('\t', start);
        if (tab == std::string_view::npos) {
            out.emplace_back(line.substr(start));
            return out;
        }
        out.emplace_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

void check_token(const std::string& id, std::size_t line_no) {
    if (id.empty())
        throw Error("taxonomy line " + std::to_string(line_no) + ": empty class id");
    for (char c : id)
        if (c == ' ' || c == '\t' || c == '\r' || c == '\n')
            throw Error("taxonomy line " + std::to_string(line_no) +
                        ": class id contains whitespace: '" + id + "'");
}

}  // namespace

TaxonomyTree TaxonomyTree::parse(std::string_view text) {
    TaxonomyTree tree;
    tree.height_ = -1;

    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool any_row = false;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        std::string_view line =
            text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
        pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty() || line.front() == '#') continue;

        std::vector<std::string> cols = split_tabs(line);
        bool sid = false;
        if (cols.size() >= 2 && cols.back() == "sid") {
            sid = true;
            cols.pop_back();
        }
        if (cols.size() < 2)
            throw Error("taxonomy line " + std::to_string(line_no) +
                        ": expected at least 2 columns (leaf and one ancestor)");
        if (tree.height_ < 0) {
            tree.height_ = static_cast<int>(cols.size()) - 1;
        } else if (static_cast<int>(cols.size()) != tree.height_ + 1) {
            throw Error("taxonomy line " + std::to_string(line_no) + ": ragged row, expected " +
                        std::to_string(tree.height_ + 1) + " columns, got " +
                        std::to_string(cols.size()));
        }
        const int h = tree.height_;
        for (const auto& id : cols) check_token(id, line_no);

        // columns are leaf .. level-0; walk from the top down so parents exist
        int parent = -1;
        for (int level = 0; level <= h; ++level) {
            const std::string& id = cols[static_cast<std::size_t>(h - level)];
            auto it = tree.index_.find(id);
            if (it == tree.index_.end()) {
                Node n;
                n.id = id;
                n.level = level;
                n.parent = parent;
                n.sid = (level == h) && sid;
                tree.nodes_.push_back(n);
                const int idx = static_cast<int>(tree.nodes_.size()) - 1;
                tree.index_.emplace(id, idx);
                parent = idx;
            } else {
                Node& n = tree.nodes_[static_cast<std::size_t>(it->second)];
                if (n.level != level)
                    throw Error("taxonomy line " + std::to_string(line_no) + ": class '" + id +
                                "' appears at level " + std::to_string(n.level) + " and level " +
                                std::to_string(level));
                if (level == h)
                    throw Error("taxonomy line " + std::to_string(line_no) +
                                ": duplicate leaf id '" + id + "'");
                if (n.parent != parent)
                    throw Error("taxonomy line " + std::to_string(line_no) + ": class '" + id +
                                "' assigned two different parents");
                parent = it->second;
            }
        }
        any_row = true;
    }
    if (!any_row) throw Error("taxonomy file contains no class rows");

    tree.by_level_.assign(static_cast<std::size_t>(tree.height_) + 1, {});
    for (int i = 0; i < static_cast<int>(tree.nodes_.size()); ++i)
        tree.by_level_[static_cast<std::size_t>(tree.nodes_[i].level)].push_back(i);
    return tree;
}

int TaxonomyTree::node_index(const ClassId& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw Error("unknown class id: '" + id + "'");
    return it->second;
}

int TaxonomyTree::level_of(const ClassId& id) const {
    return nodes_[static_cast<std::size_t>(node_index(id))].level;
}

bool TaxonomyTree::is_speaker_leaf(const ClassId& leaf) const {
    const Node& n = nodes_[static_cast<std::size_t>(node_index(leaf))];
    if (n.level != height_) throw Error("not a leaf class: '" + leaf + "'");
    return n.sid;
}

const ClassId& TaxonomyTree::ancestor_at(const ClassId& leaf, int level) const {
    const int idx = node_index(leaf);
    const Node* n = &nodes_[static_cast<std::size_t>(idx)];
    if (n->level != height_) throw Error("not a leaf class: '" + leaf + "'");
    if (level < 0 || level > height_)
        throw Error("level " + std::to_string(level) + " out of range 0.." +
                    std::to_string(height_));
    while (n->level > level) n = &nodes_[static_cast<std::size_t>(n->parent)];
    return n->id;
}

const ClassId& TaxonomyTree::parent_of(const ClassId& id) const {
    const Node& n = nodes_[static_cast<std::size_t>(node_index(id))];
    if (n.parent < 0) throw Error("class '" + id + "' is at level 0 (parent is the implicit root)");
    return nodes_[static_cast<std::size_t>(n.parent)].id;
}

int TaxonomyTree::lca_depth(const ClassId& a, const ClassId& b) const {
    const Node* na = &nodes_[static_cast<std::size_t>(node_index(a))];
    const Node* nb = &nodes_[static_cast<std::size_t>(node_index(b))];
    if (na->level != height_ || nb->level != height_)
        throw Error("lca_depth requires leaf classes");
    int level = height_;
    while (na != nb && level >= 0) {
        if (na->parent < 0 || nb->parent < 0) return -1;
        na = &nodes_[static_cast<std::size_t>(na->parent)];
        nb = &nodes_[static_cast<std::size_t>(nb->parent)];
        --level;
    }
    return level;
}

std::vector<ClassId> TaxonomyTree::level_classes(int level) const {
    if (level < 0 || level > height_)
        throw Error("level " + std::to_string(level) + " out of range 0.." +
                    std::to_string(height_));
    std::vector<ClassId> out;
    out.reserve(by_level_[static_cast<std::size_t>(level)].size());
    for (int idx : by_level_[static_cast<std::size_t>(level)])
        out.push_back(nodes_[static_cast<std::size_t>(idx)].id);
    std::sort(out.begin(), out.end());
    return out;
}

std::size_t TaxonomyTree::level_size(int level) const {
    if (level < 0 || level > height_)
        throw Error("level " + std::to_string(level) + " out of range 0.." +
                    std::to_string(height_));
    return by_level_[static_cast<std::size_t>(level)].size();
}

std::string TaxonomyTree::serialize() const {
    std::string out;
    for (const ClassId& leaf : leaves()) {
        const Node& n = nodes_[static_cast<std::size_t>(index_.at(leaf))];
        out += leaf;
        for (int level = height_ - 1; level >= 0; --level) {
            out += '\t';
            out += ancestor_at(leaf, level);
        }
        if (n.sid) out += "\tsid";
        out += '\n';
    }
    return out;
}

}  // namespace hiproto
