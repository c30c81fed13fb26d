#include "hiersev/synthdata.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "hiersev/error.hpp"
#include "hiersev/rng.hpp"
#include "io_util.hpp"

namespace hiersev {

namespace {

constexpr std::uint64_t kCenterStream = 1;
constexpr std::uint64_t kSampleStream = 2;
constexpr std::uint64_t kCountStream = 3;
constexpr std::uint64_t kSplitStream = 4;

int leaf_count(std::span<const int> branching) {
    int n = 1;
    for (int b : branching) n *= b;
    return n;
}

void validate(const SynthConfig& cfg, const Hierarchy& tree) {
    if (cfg.dim < 2) throw Error(Errc::DimTooSmall, "dim must be >= 2, got " + std::to_string(cfg.dim));
    if (cfg.sigma_levels.size() != static_cast<std::size_t>(tree.num_levels() - 1)) {
        throw Error(Errc::ConfigInvalid, "sigma_levels needs one entry per non-root stratum (" +
                                             std::to_string(tree.num_levels() - 1) + ")");
    }
    for (double s : cfg.sigma_levels)
        if (!(s >= 0.0)) throw Error(Errc::ConfigInvalid, "sigma_levels must be non-negative");
    if (!(cfg.noise_sigma >= 0.0)) throw Error(Errc::ConfigInvalid, "noise_sigma must be non-negative");
    if (cfg.long_tail) {
        if (cfg.long_tail->min_samples < 1) throw Error(Errc::ConfigInvalid, "min_samples must be >= 1");
        if (!(cfg.long_tail->pareto_alpha > 0.0)) throw Error(Errc::ConfigInvalid, "pareto_alpha must be > 0");
    } else if (cfg.samples_per_leaf < 1) {
        throw Error(Errc::ConfigInvalid, "samples_per_leaf must be >= 1");
    }
}

}  // namespace

void Dataset::push_back(std::span<const double> x, int label) {
    features.insert(features.end(), x.begin(), x.end());
    labels.push_back(label);
}

Hierarchy gen_tree(std::span<const int> branching) {
    if (branching.empty()) throw Error(Errc::ConfigInvalid, "branching must name at least one stratum");
    const int num_levels = static_cast<int>(branching.size()) + 1;
    std::vector<ParentEdge> edges;
    int nodes_above = 1;
    for (std::size_t depth = 0; depth < branching.size(); ++depth) {
        const int b = branching[depth];
        if (b < 1) throw Error(Errc::ConfigInvalid, "branching factors must be >= 1");
        const int height = num_levels - 2 - static_cast<int>(depth);
        for (int p = 0; p < nodes_above; ++p)
            for (int c = 0; c < b; ++c) edges.push_back({height, p * b + c, p});
        nodes_above *= b;
    }
    return Hierarchy::build(num_levels, edges);
}

std::vector<std::string> synth_warnings(const SynthConfig& cfg) {
    std::vector<std::string> out;
    for (std::size_t i = 1; i < cfg.sigma_levels.size(); ++i) {
        if (cfg.sigma_levels[i] > cfg.sigma_levels[i - 1]) {
            out.push_back("sigma_levels increase from stratum " + std::to_string(i - 1) + " to " + std::to_string(i) +
                          "; finer strata will not nest inside coarser ones");
            break;
        }
    }
    return out;
}

std::vector<double> leaf_centers(const SynthConfig& cfg, const Hierarchy& tree) {
    validate(cfg, tree);
    Rng rng(derive_seed({cfg.seed, kCenterStream}));
    const int top = tree.num_levels() - 1;
    std::vector<double> level(cfg.dim, 0.5);
    for (int h = top - 1; h >= 0; --h) {
        const double sigma = cfg.sigma_levels[top - 1 - h];
        const int n = tree.level_size(h);
        std::vector<double> next(static_cast<std::size_t>(n) * cfg.dim);
        for (int i = 0; i < n; ++i) {
            const auto p = static_cast<std::size_t>(tree.parent_index({h, i}));
            for (int d = 0; d < cfg.dim; ++d) {
                next[static_cast<std::size_t>(i) * cfg.dim + d] = level[p * cfg.dim + d] + sigma * rng.normal();
            }
        }
        level = std::move(next);
    }
    return level;
}

std::vector<double> leaf_centers(const SynthConfig& cfg) { return leaf_centers(cfg, gen_tree(cfg.branching)); }

std::vector<int> leaf_sample_counts(const SynthConfig& cfg, int n_leaves) {
    if (!cfg.long_tail) return std::vector<int>(n_leaves, cfg.samples_per_leaf);

    const auto& lt = *cfg.long_tail;
    const double total = lt.total > 0 ? lt.total : static_cast<double>(cfg.samples_per_leaf) * n_leaves;
    Rng rng(derive_seed({cfg.seed, kCountStream}));
    std::vector<double> w(n_leaves);
    for (auto& v : w) v = std::pow(1.0 - rng.uniform(), -1.0 / lt.pareto_alpha);
    const double sum = std::accumulate(w.begin(), w.end(), 0.0);
    std::vector<int> counts(n_leaves);
    for (int i = 0; i < n_leaves; ++i) {
        counts[i] = std::max(lt.min_samples, static_cast<int>(std::llround(total * w[i] / sum)));
    }
    std::sort(counts.begin(), counts.end(), std::greater<>());
    return counts;
}

std::vector<int> leaf_sample_counts(const SynthConfig& cfg) {
    validate(cfg, gen_tree(cfg.branching));
    return leaf_sample_counts(cfg, leaf_count(cfg.branching));
}

Dataset gen_data(const SynthConfig& cfg) { return gen_data(cfg, gen_tree(cfg.branching)); }

Dataset gen_data(const SynthConfig& cfg, const Hierarchy& tree) {
    const auto centers = leaf_centers(cfg, tree);
    const auto counts = leaf_sample_counts(cfg, tree.num_leaves());
    Dataset data;
    data.dim = cfg.dim;
    std::vector<double> x(cfg.dim);
    for (std::size_t leaf = 0; leaf < counts.size(); ++leaf) {
        Rng rng(derive_seed({cfg.seed, kSampleStream, leaf}));
        for (int s = 0; s < counts[leaf]; ++s) {
            for (int d = 0; d < cfg.dim; ++d) {
                const double v = centers[leaf * cfg.dim + d] + cfg.noise_sigma * rng.normal();
                x[d] = std::clamp(v, 0.0, 1.0);
            }
            data.push_back(x, static_cast<int>(leaf));
        }
    }
    return data;
}

DatasetSplits split_dataset(const Dataset& data, std::uint64_t seed) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed({seed, kSplitStream}));
    rng.shuffle(order.begin(), order.end());
    const auto n = data.size();
    const auto n_train = n * 70 / 100;
    const auto n_val = n * 15 / 100;
    DatasetSplits out;
    out.train.dim = out.val.dim = out.test.dim = data.dim;
    for (std::size_t k = 0; k < n; ++k) {
        auto& dst = k < n_train ? out.train : (k < n_train + n_val ? out.val : out.test);
        dst.push_back(data.row(order[k]), data.labels[order[k]]);
    }
    return out;
}

std::string dataset_to_csv(const Dataset& data) {
    std::string out;
    out.reserve(data.features.size() * 20);
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (double v : data.row(i)) {
            detail::append_double(out, v);
            out.push_back(',');
        }
        out += std::to_string(data.labels[i]);
        out.push_back('\n');
    }
    return out;
}

Dataset dataset_from_csv(const std::string& text, int dim) {
    Dataset data;
    data.dim = dim;
    std::vector<double> x(dim);
    const char* p = text.data();
    const char* end = p + text.size();
    std::size_t line = 0;
    while (p < end) {
        ++line;
        if (*p == '\n') {
            ++p;
            continue;
        }
        for (int d = 0; d < dim; ++d) {
            auto res = std::from_chars(p, end, x[d]);
            if (res.ec != std::errc{} || res.ptr == end || *res.ptr != ',') {
                throw Error(Errc::ParseError, "csv line " + std::to_string(line) + ": expected " +
                                                  std::to_string(dim) + " features and a label");
            }
            p = res.ptr + 1;
        }
        int label = 0;
        auto res = std::from_chars(p, end, label);
        if (res.ec != std::errc{}) throw Error(Errc::ParseError, "csv line " + std::to_string(line) + ": bad label");
        p = res.ptr;
        if (p < end && *p == '\r') ++p;
        if (p < end && *p != '\n') throw Error(Errc::ParseError, "csv line " + std::to_string(line) + ": trailing data");
        if (p < end) ++p;
        data.push_back(x, label);
    }
    return data;
}

void save_dataset_dir(const std::filesystem::path& dir, const DatasetSplits& splits, const std::string& tree_path,
                      const SynthConfig& cfg) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(Errc::IoError, "cannot create " + dir.string() + ": " + ec.message());

    nlohmann::ordered_json config{{"branching", cfg.branching},
                                  {"dim", cfg.dim},
                                  {"sigma_levels", cfg.sigma_levels},
                                  {"noise_sigma", cfg.noise_sigma},
                                  {"samples_per_leaf", cfg.samples_per_leaf},
                                  {"seed", cfg.seed}};
    if (cfg.long_tail) {
        config["long_tail"] = {{"pareto_alpha", cfg.long_tail->pareto_alpha},
                               {"min_samples", cfg.long_tail->min_samples},
                               {"total", cfg.long_tail->total}};
    }
    const auto n = splits.train.size() + splits.val.size() + splits.test.size();
    nlohmann::ordered_json manifest{
        {"dim", splits.train.dim},
        {"n", n},
        {"splits", {{"train", splits.train.size()}, {"val", splits.val.size()}, {"test", splits.test.size()}}},
        {"tree_path", tree_path},
        {"config", config}};
    detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
    detail::write_file(dir / "train.csv", dataset_to_csv(splits.train));
    detail::write_file(dir / "val.csv", dataset_to_csv(splits.val));
    detail::write_file(dir / "test.csv", dataset_to_csv(splits.test));
}

LoadedDataset load_dataset_dir(const std::filesystem::path& dir) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(detail::read_file(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::ParseError, std::string("manifest: ") + e.what());
    }
    LoadedDataset out;
    int dim = 0;
    try {
        dim = manifest.at("dim").get<int>();
        out.tree_path = manifest.value("tree_path", std::string{});
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::ParseError, std::string("manifest: ") + e.what());
    }
    out.splits.train = dataset_from_csv(detail::read_file(dir / "train.csv"), dim);
    out.splits.val = dataset_from_csv(detail::read_file(dir / "val.csv"), dim);
    out.splits.test = dataset_from_csv(detail::read_file(dir / "test.csv"), dim);
    return out;
}

}  // namespace hiersev
