#pragma once

#include <compare>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace hiersev {

/// A node addressed by its stratum (0 = leaves, H-1 = root) and its 0-based
/// index within that stratum.
struct NodeRef {
    int height = 0;
    int index = 0;

    friend auto operator<=>(const NodeRef&, const NodeRef&) = default;
};

/// One non-root node together with the index of its parent at `height + 1`.
struct ParentEdge {
    int height = 0;
    int index = 0;
    int parent = 0;
};

namespace detail {
struct GreaterMaskCache;
}

/// Stratified label tree with a single root and every leaf at height 0.
///
/// Immutable after construction. The greater-mask cache fills lazily and is
/// safe under concurrent first access; copies share it.
class Hierarchy {
public:
    /// Validates and builds a tree from per-stratum parent links. Throws
    /// Error with MultipleRoots, OrphanNode, UnbalancedLeaves, InvalidEdge or
    /// HeightOutOfRange, naming the offending node.
    static Hierarchy build(int num_levels, std::span<const ParentEdge> edges);

    /// Builds from a flat parent array (`parent[i] == -1` marks the root).
    /// Strata are derived from depth, so this form can also report
    /// CycleDetected. Nodes keep their relative order within a stratum.
    static Hierarchy from_parent_array(std::span<const int> parent);

    [[nodiscard]] int num_levels() const noexcept { return static_cast<int>(level_sizes_.size()); }
    [[nodiscard]] const std::vector<int>& level_sizes() const noexcept { return level_sizes_; }
    [[nodiscard]] int level_size(int height) const;
    [[nodiscard]] int num_leaves() const noexcept { return level_sizes_.front(); }

    [[nodiscard]] int parent_index(NodeRef node) const;
    [[nodiscard]] std::span<const int> children(NodeRef node) const;

    /// Descendants of `node` at stratum `target_height < node.height`, sorted.
    [[nodiscard]] std::vector<int> offspring(NodeRef node, int target_height) const;

    /// Leaf offspring of any node (a leaf maps to itself), sorted ascending.
    [[nodiscard]] std::span<const int> leaves_under(NodeRef node) const;

    [[nodiscard]] NodeRef ancestor_at(NodeRef leaf, int height) const;
    [[nodiscard]] int ancestor_index(int leaf, int height) const;

    /// Height of the least common ancestor of two leaves.
    [[nodiscard]] int hdist(NodeRef a, NodeRef b) const;
    [[nodiscard]] int hdist(int leaf_a, int leaf_b) const;

    /// {j : hdist(y, j) <= h}, sorted. Valid for 1 <= h <= H-1.
    [[nodiscard]] std::span<const int> lower_mask(int y, int h) const;
    /// {k : hdist(y, k) >= h} plus y, sorted. Valid for 1 <= h <= H-1.
    [[nodiscard]] std::span<const int> greater_mask(int y, int h) const;

    /// Largest leaf-offspring count over the nodes of stratum `height`.
    [[nodiscard]] int max_leaf_fanout(int height) const;

    [[nodiscard]] std::vector<ParentEdge> edges() const;

    void set_name(NodeRef node, std::string label);
    [[nodiscard]] const std::map<std::pair<int, int>, std::string>& names() const noexcept { return names_; }

private:
    Hierarchy() = default;
    void check_leaf(int leaf) const;
    void check_node(NodeRef node) const;

    std::vector<int> level_sizes_;
    std::vector<std::vector<int>> parent_;                    // [h][i] -> index at h+1
    std::vector<std::vector<std::vector<int>>> children_;     // [h][i] -> indices at h-1
    std::vector<std::vector<std::vector<int>>> leaves_;       // [h][i] -> leaf indices
    std::map<std::pair<int, int>, std::string> names_;
    std::shared_ptr<detail::GreaterMaskCache> greater_cache_;
};

/// Tree file (JSON): {"num_levels": H, "edges": [[h, i, parent], ...], "names": {"h:i": "label"}}.
[[nodiscard]] Hierarchy tree_from_json_text(const std::string& text);
[[nodiscard]] std::string tree_to_json_text(const Hierarchy& tree);
[[nodiscard]] Hierarchy load_tree(const std::filesystem::path& path);
void save_tree(const Hierarchy& tree, const std::filesystem::path& path);

}  // namespace hiersev
