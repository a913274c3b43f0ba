#include "hiproto/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <set>

#include "hiproto/rng.hpp"

namespace hiproto {

Manifest Manifest::parse(std::string_view text) {
    Manifest m;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        std::string_view line =
            text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
        pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty() || line.front() == '#') continue;

        const std::size_t t1 = line.find('\t');
        const std::size_t t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
        if (t1 == std::string_view::npos || t2 == std::string_view::npos ||
            line.find('\t', t2 + 1) != std::string_view::npos)
            throw Error("manifest line " + std::to_string(line_no) + ": expected 3 columns");
        ManifestEntry e;
        e.path = std::string(line.substr(0, t1));
        e.leaf = std::string(line.substr(t1 + 1, t2 - t1 - 1));
        const std::string_view dur = line.substr(t2 + 1);
        const auto res = std::from_chars(dur.data(), dur.data() + dur.size(), e.duration_s);
        if (res.ec != std::errc{} || res.ptr != dur.data() + dur.size() || e.duration_s < 0.0)
            throw Error("manifest line " + std::to_string(line_no) + ": bad duration");
        if (e.path.empty() || e.leaf.empty())
            throw Error("manifest line " + std::to_string(line_no) + ": empty field");
        m.entries.push_back(std::move(e));
    }
    return m;
}

Manifest Manifest::load(const std::string& path) { return parse(read_text_file(path)); }

std::string Manifest::serialize() const {
    std::string out;
    char buf[64];
    for (const auto& e : entries) {
        out += e.path;
        out += '\t';
        out += e.leaf;
        out += '\t';
        const int n = std::snprintf(buf, sizeof buf, "%.6f", e.duration_s);
        out.append(buf, static_cast<std::size_t>(n));
        out += '\n';
    }
    return out;
}

void Manifest::save(const std::string& path) const { write_text_file(path, serialize()); }

void Manifest::validate(const TaxonomyTree& tree) const {
    std::set<std::string> paths;
    for (const auto& e : entries) {
        if (!tree.contains(e.leaf) || !tree.is_leaf(e.leaf))
            throw Error("manifest: class '" + e.leaf + "' is not a leaf of the taxonomy");
        if (!paths.insert(e.path).second) throw Error("manifest: duplicate path '" + e.path + "'");
    }
}

std::vector<std::pair<ClassId, std::vector<std::size_t>>> Manifest::by_class() const {
    std::map<ClassId, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < entries.size(); ++i) groups[entries[i].leaf].push_back(i);
    return {groups.begin(), groups.end()};
}

FoldAssignment stratified_split(const Manifest& manifest, int folds, std::uint64_t seed) {
    if (manifest.entries.empty()) throw Error("stratified_split: empty manifest");
    if (folds < 2) throw Error("stratified_split: need at least 2 folds");

    FoldAssignment out(manifest.entries.size(), -1);
    // per-class shuffle then round-robin deal from a random starting fold,
    // so per-class fold counts differ by at most one
    for (const auto& [leaf, indices] : manifest.by_class()) {
        const Digest d = sha256(leaf);
        std::uint64_t h = 0;
        for (int i = 0; i < 8; ++i) h |= std::uint64_t(d[static_cast<std::size_t>(i)]) << (8 * i);
        Rng rng(mix_seed(seed, h));
        std::vector<std::size_t> order = indices;
        rng.shuffle(order);
        const int start = static_cast<int>(rng.index(static_cast<std::size_t>(folds)));
        for (std::size_t j = 0; j < order.size(); ++j)
            out[order[j]] = (start + static_cast<int>(j)) % folds;
    }
    return out;
}

std::string serialize_folds(const Manifest& manifest, const FoldAssignment& folds) {
    if (manifest.entries.size() != folds.size())
        throw Error("serialize_folds: size mismatch");
    std::string out;
    for (std::size_t i = 0; i < folds.size(); ++i) {
        out += manifest.entries[i].path;
        out += '\t';
        out += std::to_string(folds[i]);
        out += '\n';
    }
    return out;
}

}  // namespace hiproto
