#include "hiersev/hierarchy.hpp"

#include <algorithm>
#include <mutex>
#include <set>

#include <json.hpp>

#include "hiersev/error.hpp"
#include "io_util.hpp"

namespace hiersev {

namespace detail {

struct GreaterMaskCache {
    GreaterMaskCache(int num_leaves, int num_levels)
        : stride(num_levels),
          slots(static_cast<std::size_t>(num_leaves) * num_levels),
          flags(std::make_unique<std::once_flag[]>(slots.size())) {}

    int stride;
    std::vector<std::vector<int>> slots;
    std::unique_ptr<std::once_flag[]> flags;
};

}  // namespace detail

namespace {

std::string node_str(int h, int i) { return std::to_string(h) + ":" + std::to_string(i); }

}  // namespace

Hierarchy Hierarchy::build(int num_levels, std::span<const ParentEdge> edges) {
    if (num_levels < 2) {
        throw Error(Errc::HeightOutOfRange, "num_levels must be >= 2, got " + std::to_string(num_levels));
    }
    const int top = num_levels - 1;

    // parent_of[h][i] = parent index, -1 if the node has no edge.
    std::vector<std::vector<int>> parent_of(top);
    std::vector<std::set<int>> referenced(num_levels);
    for (const auto& e : edges) {
        if (e.height < 0 || e.height >= top) {
            throw Error(Errc::InvalidEdge, "edge for node " + node_str(e.height, e.index) +
                                               " has height outside [0, " + std::to_string(top - 1) + "]");
        }
        if (e.index < 0 || e.parent < 0) {
            throw Error(Errc::InvalidEdge, "negative index in edge for node " + node_str(e.height, e.index));
        }
        auto& level = parent_of[e.height];
        if (static_cast<int>(level.size()) <= e.index) level.resize(e.index + 1, -1);
        if (level[e.index] != -1) {
            throw Error(Errc::InvalidEdge, "node " + node_str(e.height, e.index) + " listed twice");
        }
        level[e.index] = e.parent;
        referenced[e.height + 1].insert(e.parent);
    }

    if (referenced[top].size() > 1) {
        std::string who;
        for (int r : referenced[top]) who += (who.empty() ? "" : ", ") + node_str(top, r);
        throw Error(Errc::MultipleRoots, "stratum " + std::to_string(top) + " holds " + who);
    }
    if (referenced[top].empty()) {
        throw Error(Errc::OrphanNode, "stratum " + std::to_string(top - 1) + " is empty; no root is reachable");
    }
    if (*referenced[top].begin() != 0) {
        throw Error(Errc::InvalidEdge, "root must have index 0, got " + node_str(top, *referenced[top].begin()));
    }

    Hierarchy tree;
    tree.level_sizes_.assign(num_levels, 0);
    tree.level_sizes_[top] = 1;
    for (int h = 0; h < top; ++h) {
        int size = static_cast<int>(parent_of[h].size());
        if (!referenced[h].empty()) size = std::max(size, *referenced[h].rbegin() + 1);
        parent_of[h].resize(size, -1);
        for (int i = 0; i < size; ++i) {
            if (parent_of[h][i] == -1) {
                throw Error(Errc::OrphanNode, "node " + node_str(h, i) + " has no parent");
            }
        }
        tree.level_sizes_[h] = size;
    }
    for (int h = 1; h < top; ++h) {
        for (int i = 0; i < tree.level_sizes_[h]; ++i) {
            if (!referenced[h].contains(i)) {
                throw Error(Errc::UnbalancedLeaves, "node " + node_str(h, i) + " is a leaf above height 0");
            }
        }
    }
    // A parent index past the end of its stratum would have grown that stratum
    // above, so every parent link now resolves.

    tree.parent_ = std::move(parent_of);
    tree.children_.resize(num_levels);
    for (int h = 1; h < num_levels; ++h) {
        tree.children_[h].resize(tree.level_sizes_[h]);
        for (int i = 0; i < tree.level_sizes_[h - 1]; ++i) {
            tree.children_[h][tree.parent_[h - 1][i]].push_back(i);
        }
    }
    tree.leaves_.resize(num_levels);
    tree.leaves_[0].resize(tree.level_sizes_[0]);
    for (int i = 0; i < tree.level_sizes_[0]; ++i) tree.leaves_[0][i] = {i};
    for (int h = 1; h < num_levels; ++h) {
        tree.leaves_[h].resize(tree.level_sizes_[h]);
        for (int i = 0; i < tree.level_sizes_[h]; ++i) {
            auto& out = tree.leaves_[h][i];
            for (int c : tree.children_[h][i]) {
                const auto& sub = tree.leaves_[h - 1][c];
                out.insert(out.end(), sub.begin(), sub.end());
            }
            std::sort(out.begin(), out.end());
        }
    }
    tree.greater_cache_ = std::make_shared<detail::GreaterMaskCache>(tree.num_leaves(), num_levels);
    return tree;
}

Hierarchy Hierarchy::from_parent_array(std::span<const int> parent) {
    const int n = static_cast<int>(parent.size());
    std::vector<int> roots;
    for (int i = 0; i < n; ++i) {
        if (parent[i] == -1) {
            roots.push_back(i);
        } else if (parent[i] < 0 || parent[i] >= n || parent[i] == i) {
            if (parent[i] == i) throw Error(Errc::CycleDetected, "node " + std::to_string(i) + " is its own parent");
            throw Error(Errc::InvalidEdge, "node " + std::to_string(i) + " has out-of-range parent " +
                                               std::to_string(parent[i]));
        }
    }
    if (roots.size() > 1) {
        std::string who;
        for (int r : roots) who += (who.empty() ? "" : ", ") + std::to_string(r);
        throw Error(Errc::MultipleRoots, "nodes " + who + " have no parent");
    }
    if (roots.empty()) {
        throw Error(Errc::CycleDetected, "no root; every node has a parent");
    }

    // depth[i] = -1 unvisited, -2 on the current walk.
    std::vector<int> depth(n, -1);
    depth[roots.front()] = 0;
    std::vector<int> path;
    for (int start = 0; start < n; ++start) {
        path.clear();
        int v = start;
        while (depth[v] == -1) {
            depth[v] = -2;
            path.push_back(v);
            v = parent[v];
        }
        if (depth[v] == -2) {
            throw Error(Errc::CycleDetected, "node " + std::to_string(v) + " lies on a cycle");
        }
        int d = depth[v];
        for (auto it = path.rbegin(); it != path.rend(); ++it) depth[*it] = ++d;
    }

    std::vector<int> child_count(n, 0);
    for (int i = 0; i < n; ++i)
        if (parent[i] >= 0) ++child_count[parent[i]];
    int leaf_depth = -1;
    for (int i = 0; i < n; ++i) {
        if (child_count[i] != 0) continue;
        if (leaf_depth == -1) leaf_depth = depth[i];
        if (depth[i] != leaf_depth) {
            throw Error(Errc::UnbalancedLeaves, "leaf " + std::to_string(i) + " at depth " + std::to_string(depth[i]) +
                                                    ", expected " + std::to_string(leaf_depth));
        }
    }
    const int num_levels = leaf_depth + 1;

    std::vector<int> local(n);
    std::vector<int> counter(num_levels, 0);
    for (int i = 0; i < n; ++i) local[i] = counter[leaf_depth - depth[i]]++;
    std::vector<ParentEdge> edges;
    for (int i = 0; i < n; ++i) {
        if (parent[i] == -1) continue;
        edges.push_back({leaf_depth - depth[i], local[i], local[parent[i]]});
    }
    return build(num_levels, edges);
}

int Hierarchy::level_size(int height) const {
    if (height < 0 || height >= num_levels()) {
        throw Error(Errc::HeightOutOfRange, "height " + std::to_string(height));
    }
    return level_sizes_[height];
}

void Hierarchy::check_node(NodeRef node) const {
    if (node.height < 0 || node.height >= num_levels() || node.index < 0 ||
        node.index >= level_sizes_[node.height]) {
        throw Error(Errc::HeightOutOfRange, "no node " + node_str(node.height, node.index));
    }
}

void Hierarchy::check_leaf(int leaf) const {
    if (leaf < 0 || leaf >= num_leaves()) {
        throw Error(Errc::NotALeaf, "leaf index " + std::to_string(leaf) + " outside [0, " +
                                        std::to_string(num_leaves()) + ")");
    }
}

int Hierarchy::parent_index(NodeRef node) const {
    check_node(node);
    if (node.height == num_levels() - 1) throw Error(Errc::HeightOutOfRange, "the root has no parent");
    return parent_[node.height][node.index];
}

std::span<const int> Hierarchy::children(NodeRef node) const {
    check_node(node);
    return children_[node.height][node.index];
}

std::vector<int> Hierarchy::offspring(NodeRef node, int target_height) const {
    check_node(node);
    if (target_height < 0 || target_height >= node.height) {
        throw Error(Errc::HeightOutOfRange, "offspring of " + node_str(node.height, node.index) + " at height " +
                                                std::to_string(target_height));
    }
    std::vector<int> frontier{node.index};
    for (int h = node.height; h > target_height; --h) {
        std::vector<int> next;
        for (int i : frontier) {
            const auto& c = children_[h][i];
            next.insert(next.end(), c.begin(), c.end());
        }
        frontier = std::move(next);
    }
    std::sort(frontier.begin(), frontier.end());
    return frontier;
}

std::span<const int> Hierarchy::leaves_under(NodeRef node) const {
    check_node(node);
    return leaves_[node.height][node.index];
}

int Hierarchy::ancestor_index(int leaf, int height) const {
    check_leaf(leaf);
    if (height < 0 || height >= num_levels()) {
        throw Error(Errc::HeightOutOfRange, "ancestor height " + std::to_string(height));
    }
    int v = leaf;
    for (int h = 0; h < height; ++h) v = parent_[h][v];
    return v;
}

NodeRef Hierarchy::ancestor_at(NodeRef leaf, int height) const {
    if (leaf.height != 0) throw Error(Errc::HeightOutOfRange, "ancestor_at needs a leaf, got height " +
                                                                   std::to_string(leaf.height));
    return {height, ancestor_index(leaf.index, height)};
}

int Hierarchy::hdist(NodeRef a, NodeRef b) const {
    if (a.height != 0 || b.height != 0) throw Error(Errc::NotALeaf, "hdist is defined on leaves only");
    return hdist(a.index, b.index);
}

int Hierarchy::hdist(int a, int b) const {
    check_leaf(a);
    check_leaf(b);
    int h = 0;
    while (a != b) {
        a = parent_[h][a];
        b = parent_[h][b];
        ++h;
    }
    return h;
}

std::span<const int> Hierarchy::lower_mask(int y, int h) const {
    if (h < 1 || h >= num_levels()) throw Error(Errc::HeightOutOfRange, "lower_mask height " + std::to_string(h));
    return leaves_[h][ancestor_index(y, h)];
}

std::span<const int> Hierarchy::greater_mask(int y, int h) const {
    if (h < 1 || h >= num_levels()) throw Error(Errc::HeightOutOfRange, "greater_mask height " + std::to_string(h));
    check_leaf(y);
    auto& cache = *greater_cache_;
    const auto slot = static_cast<std::size_t>(y) * cache.stride + h;
    std::call_once(cache.flags[slot], [&] {
        // Leaves within distance h-1 of y are exactly the leaves under y's
        // ancestor at height h-1.
        const auto& near = leaves_[h - 1][ancestor_index(y, h - 1)];
        std::vector<int> out;
        out.reserve(num_leaves() - near.size() + 1);
        auto it = near.begin();
        for (int k = 0; k < num_leaves(); ++k) {
            while (it != near.end() && *it < k) ++it;
            const bool is_near = it != near.end() && *it == k;
            if (!is_near || k == y) out.push_back(k);
        }
        cache.slots[slot] = std::move(out);
    });
    return cache.slots[slot];
}

int Hierarchy::max_leaf_fanout(int height) const {
    level_size(height);
    std::size_t best = 0;
    for (const auto& l : leaves_[height]) best = std::max(best, l.size());
    return static_cast<int>(best);
}

std::vector<ParentEdge> Hierarchy::edges() const {
    std::vector<ParentEdge> out;
    for (int h = 0; h + 1 < num_levels(); ++h)
        for (int i = 0; i < level_sizes_[h]; ++i) out.push_back({h, i, parent_[h][i]});
    return out;
}

void Hierarchy::set_name(NodeRef node, std::string label) {
    check_node(node);
    names_[{node.height, node.index}] = std::move(label);
}

Hierarchy tree_from_json_text(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(Errc::ParseError, std::string("tree file: ") + e.what());
    }
    try {
        const int num_levels = doc.at("num_levels").get<int>();
        std::vector<ParentEdge> edges;
        for (const auto& e : doc.at("edges")) {
            if (!e.is_array() || e.size() != 3) throw Error(Errc::ParseError, "edge entries must be [height, index, parent]");
            edges.push_back({e[0].get<int>(), e[1].get<int>(), e[2].get<int>()});
        }
        auto tree = Hierarchy::build(num_levels, edges);
        if (auto it = doc.find("names"); it != doc.end()) {
            for (const auto& [key, value] : it->items()) {
                const auto colon = key.find(':');
                if (colon == std::string::npos) throw Error(Errc::ParseError, "name key '" + key + "' is not h:i");
                NodeRef node{std::stoi(key.substr(0, colon)), std::stoi(key.substr(colon + 1))};
                tree.set_name(node, value.get<std::string>());
            }
        }
        return tree;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::ParseError, std::string("tree file: ") + e.what());
    } catch (const std::invalid_argument&) {
        throw Error(Errc::ParseError, "tree file: malformed name key");
    }
}

std::string tree_to_json_text(const Hierarchy& tree) {
    nlohmann::json doc;
    doc["num_levels"] = tree.num_levels();
    auto edges = nlohmann::json::array();
    for (const auto& e : tree.edges()) edges.push_back({e.height, e.index, e.parent});
    doc["edges"] = std::move(edges);
    if (!tree.names().empty()) {
        auto names = nlohmann::json::object();
        for (const auto& [key, label] : tree.names()) names[node_str(key.first, key.second)] = label;
        doc["names"] = std::move(names);
    }
    return doc.dump() + "\n";
}

Hierarchy load_tree(const std::filesystem::path& path) { return tree_from_json_text(detail::read_file(path)); }

void save_tree(const Hierarchy& tree, const std::filesystem::path& path) {
    detail::write_file(path, tree_to_json_text(tree));
}

}  // namespace hiersev
