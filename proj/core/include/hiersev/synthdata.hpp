#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hiersev/hierarchy.hpp"

namespace hiersev {

/// Row-major feature matrix with one leaf label per row.
struct Dataset {
    int dim = 0;
    std::vector<double> features;
    std::vector<int> labels;

    [[nodiscard]] std::size_t size() const noexcept { return labels.size(); }
    [[nodiscard]] std::span<const double> row(std::size_t i) const {
        return std::span<const double>(features).subspan(i * dim, dim);
    }
    void push_back(std::span<const double> x, int label);
};

struct DatasetSplits {
    Dataset train;
    Dataset val;
    Dataset test;
};

/// Per-leaf counts drawn from a Pareto law, rescaled to `total` samples and
/// floored at `min_samples`. Leaf 0 receives the largest count.
struct LongTail {
    double pareto_alpha = 1.5;
    int min_samples = 1;
    int total = 0;  // 0 means samples_per_leaf * n_leaves
};

struct SynthConfig {
    std::vector<int> branching;        // children per node, coarse -> fine
    int dim = 2;
    std::vector<double> sigma_levels;  // center offset scale per stratum, coarse -> fine
    double noise_sigma = 0.02;
    int samples_per_leaf = 100;
    std::optional<LongTail> long_tail;
    std::uint64_t seed = 0;
};

/// Balanced tree; leaves under one parent get contiguous indices.
[[nodiscard]] Hierarchy gen_tree(std::span<const int> branching);

/// Non-fatal findings about a config (e.g. sigma_levels not decreasing).
[[nodiscard]] std::vector<std::string> synth_warnings(const SynthConfig& cfg);

/// Leaf centers by hierarchical diffusion from 0.5*1, samples around them,
/// clipped to [0,1]^dim. Rows are grouped by leaf in index order.
[[nodiscard]] Dataset gen_data(const SynthConfig& cfg);
/// Same generator over an existing tree; cfg.branching is ignored and
/// sigma_levels must have one entry per non-root stratum.
[[nodiscard]] Dataset gen_data(const SynthConfig& cfg, const Hierarchy& tree);

[[nodiscard]] std::vector<int> leaf_sample_counts(const SynthConfig& cfg);

/// Leaf centers as generated by gen_data (n_leaves x dim).
[[nodiscard]] std::vector<double> leaf_centers(const SynthConfig& cfg);
[[nodiscard]] std::vector<double> leaf_centers(const SynthConfig& cfg, const Hierarchy& tree);

/// 70/15/15 split by seeded shuffle.
[[nodiscard]] DatasetSplits split_dataset(const Dataset& data, std::uint64_t seed);

/// `manifest.json` plus train.csv / val.csv / test.csv; rows are
/// f_1,...,f_dim,label with shortest round-trip decimals.
void save_dataset_dir(const std::filesystem::path& dir, const DatasetSplits& splits, const std::string& tree_path,
                      const SynthConfig& cfg);

struct LoadedDataset {
    DatasetSplits splits;
    std::string tree_path;
};
[[nodiscard]] LoadedDataset load_dataset_dir(const std::filesystem::path& dir);

[[nodiscard]] std::string dataset_to_csv(const Dataset& data);
[[nodiscard]] Dataset dataset_from_csv(const std::string& text, int dim);

}  // namespace hiersev
