#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace hiersev {

enum class Activation { Relu, Identity };

/// Fully connected layer; `weight` is out x in, row-major.
struct Dense {
    int in = 0;
    int out = 0;
    std::vector<double> weight;
    std::vector<double> bias;
    Activation activation = Activation::Identity;
};

/// Feature extractor. The last layer is always identity so features are
/// unbounded reals.
struct Mlp {
    int input_dim = 0;
    std::vector<Dense> layers;

    [[nodiscard]] int output_dim() const noexcept { return layers.empty() ? input_dim : layers.back().out; }
};

/// Linear classifier over extracted features: z = W g(x) + b.
struct LinearHead {
    int n_classes = 0;
    int feature_dim = 0;
    std::vector<double> weight;  // n_classes x feature_dim, row-major
    std::vector<double> bias;

    [[nodiscard]] std::span<const double> row(int i) const {
        return std::span<const double>(weight).subspan(static_cast<std::size_t>(i) * feature_dim, feature_dim);
    }
};

struct Classifier {
    Mlp extractor;
    LinearHead head;

    [[nodiscard]] int input_dim() const noexcept { return extractor.input_dim; }
    [[nodiscard]] int n_classes() const noexcept { return head.n_classes; }
};

/// Hidden widths are ReLU layers; a final identity layer of width
/// `feature_dim` follows. With no hidden widths and feature_dim == 0 the
/// extractor is the identity map.
struct ClassifierShape {
    int input_dim = 0;
    std::vector<int> hidden;
    int feature_dim = 0;
    int n_classes = 0;
};

/// Scaled-uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] from a seeded stream.
[[nodiscard]] Classifier make_classifier(const ClassifierShape& shape, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Numerics

[[nodiscard]] double logsumexp(std::span<const double> z);
/// Stable log-softmax. Throws NonFiniteInput on NaN/inf entries.
[[nodiscard]] std::vector<double> log_softmax(std::span<const double> z);
[[nodiscard]] std::vector<double> softmax(std::span<const double> z);
/// Lowest index among maximal entries.
[[nodiscard]] int argmax(std::span<const double> z);

// ---------------------------------------------------------------------------
// Forward / backward

/// Per-layer pre-activations and outputs retained for the backward pass.
struct ForwardCache {
    std::vector<double> input;
    std::vector<std::vector<double>> pre;   // per extractor layer
    std::vector<std::vector<double>> post;  // per extractor layer
    std::vector<double> logits;

    [[nodiscard]] std::span<const double> features() const {
        return post.empty() ? std::span<const double>(input) : std::span<const double>(post.back());
    }
};

[[nodiscard]] std::vector<double> forward(const Classifier& c, std::span<const double> x);
[[nodiscard]] ForwardCache forward_cached(const Classifier& c, std::span<const double> x);

/// Parameter-shaped buffers in the order: each extractor layer's weight then
/// bias, followed by the head weight then bias.
struct Gradients {
    std::vector<std::vector<double>> tensors;

    [[nodiscard]] static Gradients zeros_like(const Classifier& c);
    [[nodiscard]] bool all_zero() const;
};

[[nodiscard]] std::vector<std::span<double>> parameter_views(Classifier& c);
[[nodiscard]] std::vector<std::span<const double>> parameter_views(const Classifier& c);

/// One backward pass from dL/dz. Adds `scale` times the parameter gradient
/// to `acc` when given, and returns dL/dx.
std::vector<double> backward(const Classifier& c, const ForwardCache& cache, std::span<const double> dlogits,
                             Gradients* acc, double scale = 1.0);

[[nodiscard]] std::vector<double> input_gradient(const Classifier& c, std::span<const double> x,
                                                 std::span<const double> dlogits);

struct GradientSample {
    std::span<const double> x;
    std::span<const double> dlogits;
};

/// Batch-averaged parameter gradient.
[[nodiscard]] Gradients param_gradient(const Classifier& c, std::span<const GradientSample> batch);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::int64_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;

    [[nodiscard]] static AdamState for_classifier(const Classifier& c, AdamConfig config = {});
    /// Re-zeroes the moment buffers of tensors [first, end) and re-sizes them
    /// to the classifier's current shapes. Used after a head swap.
    void reset_from(const Classifier& c, std::size_t first);
};

/// Bias-corrected Adam update without weight decay.
void adam_step(AdamState& state, std::span<const std::span<double>> params, const Gradients& grads);
void adam_step(AdamState& state, Classifier& c, const Gradients& grads);

// ---------------------------------------------------------------------------
// Head replacement

struct ZeroInit {};
struct ScaledUniformInit {
    std::uint64_t seed = 0;
};
struct ExplicitInit {
    std::vector<double> weight;
    std::vector<double> bias;
};
using InitSpec = std::variant<ZeroInit, ScaledUniformInit, ExplicitInit>;

/// Same extractor parameters, freshly initialized head with `n_classes` rows.
[[nodiscard]] Classifier resize_head(const Classifier& c, int n_classes, const InitSpec& init);

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
    Classifier model;
    std::string tree_path;
    int height = 0;  // stratum the head currently classifies
};

[[nodiscard]] std::string checkpoint_to_json_text(const Checkpoint& ckpt);
[[nodiscard]] Checkpoint checkpoint_from_json_text(const std::string& text);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
[[nodiscard]] Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hiersev
