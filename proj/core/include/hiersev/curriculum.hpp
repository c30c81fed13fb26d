#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "hiersev/hierarchy.hpp"
#include "hiersev/netcore.hpp"
#include "hiersev/synthdata.hpp"

namespace hiersev {

// ---------------------------------------------------------------------------
// Stage schedule

enum class ScheduleMode { Exponential, Linear };

[[nodiscard]] std::string_view schedule_mode_name(ScheduleMode m) noexcept;
[[nodiscard]] ScheduleMode parse_schedule_mode(std::string_view name);

/// Iteration indices at which training moves one stratum closer to the
/// leaves. Stage s runs on [boundaries[s-1], boundaries[s]).
struct StageSchedule {
    int total_iterations = 0;
    std::vector<int> boundaries;
    ScheduleMode mode = ScheduleMode::Exponential;

    [[nodiscard]] int num_stages() const noexcept { return static_cast<int>(boundaries.size()) + 1; }
    [[nodiscard]] std::vector<int> stage_lengths() const;
};

/// Boundary fractions for seven stages in exponential mode.
inline constexpr double kSevenStageFractions[] = {0.02, 0.04, 0.06, 0.15, 0.25, 0.35};
/// Stage-length growth ratio used for other stage counts.
inline constexpr double kExponentialRatio = 1.67;

/// `num_stages` trained strata need num_stages - 1 boundaries. Requires
/// total_iterations >= 10 * (num_stages - 1); throws TooFewIterations.
[[nodiscard]] StageSchedule make_schedule(int total_iterations, int num_stages, ScheduleMode mode);

// ---------------------------------------------------------------------------
// Head transfer

/// Copies every parent row and bias of a head at height h to each of its
/// children at height h-1. Throws HeadSizeMismatch.
[[nodiscard]] LinearHead warm_up(const LinearHead& head, int height, const Hierarchy& tree);

[[nodiscard]] std::vector<int> coarsen_labels(std::span<const int> leaf_labels, int height, const Hierarchy& tree);

// ---------------------------------------------------------------------------
// Trainers

struct CleanConfig {
    int minibatch_size = 128;
};

/// Free adversarial training. `replays` is how many times each minibatch is
/// reused; every replay is one optimizer step.
struct FatConfig {
    int replays = 4;
    double epsilon = 8.0 / 255.0;
    double alpha_train = 8.0 / 255.0;
    int minibatch_size = 128;
};

struct TradesConfig {
    double beta = 6.0;
    int inner_steps = 5;
    double inner_alpha = 2.0 / 255.0;
    double epsilon = 8.0 / 255.0;
    int minibatch_size = 128;
};

using TrainerConfig = std::variant<CleanConfig, FatConfig, TradesConfig>;

[[nodiscard]] std::string_view trainer_name(const TrainerConfig& cfg) noexcept;
void validate_trainer(const TrainerConfig& cfg);

/// Hooks for inspecting training from tests and tools. All optional.
struct TrainObserver {
    std::function<void(std::int64_t step, double loss)> on_step;
    /// (clean batch inputs, perturbation buffer, batch size) after each replay.
    std::function<void(std::span<const double>, std::span<const double>, int)> on_fat_replay;
    /// (model before, model after, new height) around each warm-up.
    std::function<void(const Classifier&, const Classifier&, int)> on_warm_up;
};

struct StageStats {
    int iterations = 0;
    double final_loss = 0.0;
};

/// Runs exactly `iterations` optimizer steps of `cfg`'s trainer on
/// (data, labels). Labels must index the model's current head.
StageStats train_iterations(Classifier& model, AdamState& optimizer, const Dataset& data, std::span<const int> labels,
                            const TrainerConfig& cfg, int iterations, std::uint64_t seed,
                            const TrainObserver* observer = nullptr);

StageStats fat_train(Classifier& model, AdamState& optimizer, const Dataset& data, std::span<const int> labels,
                     const FatConfig& cfg, int iterations, std::uint64_t seed, const TrainObserver* observer = nullptr);

StageStats trades_train(Classifier& model, AdamState& optimizer, const Dataset& data, std::span<const int> labels,
                        const TradesConfig& cfg, int iterations, std::uint64_t seed,
                        const TrainObserver* observer = nullptr);

/// KL(softmax(z) || softmax(z_adv)) and its gradients with respect to both
/// logit vectors.
struct KlResult {
    double value = 0.0;
    std::vector<double> grad_clean;
    std::vector<double> grad_adv;
};
[[nodiscard]] KlResult kl_divergence(std::span<const double> z, std::span<const double> z_adv);

/// CE(f(x), y) + beta * KL(f(x) || f(x_adv)) for one sample, with the
/// parameter gradient added into `acc` (scaled) when given.
double trades_objective(const Classifier& model, std::span<const double> x, std::span<const double> x_adv, int y,
                        double beta, Gradients* acc = nullptr, double scale = 1.0);

/// Mean CE of the model over (data, labels).
[[nodiscard]] double mean_cross_entropy(const Classifier& model, const Dataset& data, std::span<const int> labels);

// ---------------------------------------------------------------------------
// Curriculum

enum class Curriculum { None, Chat, Scratch };

[[nodiscard]] std::string_view curriculum_name(Curriculum c) noexcept;
[[nodiscard]] Curriculum parse_curriculum(std::string_view name);

struct StageLog {
    int stage = 0;
    int height = 0;
    int n_classes = 0;
    int iterations = 0;
    double final_loss = 0.0;
};

struct TrainResult {
    Classifier model;
    std::vector<StageLog> stages;
    std::int64_t optimizer_steps = 0;
};

/// Coarse-to-fine training from stratum H-2 down to the leaves. At each
/// schedule boundary the head is warmed up from its parents (or re-drawn for
/// the scratch ablation) before training continues on the finer labels.
/// `model`'s head must have n_{H-2} rows.
[[nodiscard]] TrainResult chat_train(Classifier model, const Dataset& data, const Hierarchy& tree,
                                     const StageSchedule& schedule, const TrainerConfig& trainer, AdamConfig adam,
                                     std::uint64_t seed, bool scratch = false, const TrainObserver* observer = nullptr);

/// Everything needed to reproduce a training run.
struct TrainJob {
    TrainerConfig trainer = FatConfig{};
    Curriculum curriculum = Curriculum::Chat;
    ScheduleMode schedule = ScheduleMode::Exponential;
    int total_iterations = 3000;
    std::vector<int> hidden = {32};
    int feature_dim = 32;
    AdamConfig adam{.lr = 1e-3};
    std::uint64_t seed = 0;
    std::string data_path;
    std::string tree_path;
    std::string out_path;
};

[[nodiscard]] std::string train_job_to_json_text(const TrainJob& job);
[[nodiscard]] TrainJob train_job_from_json_text(const std::string& text);

/// Builds the classifier for `job` and trains it (plain training at the
/// leaves when curriculum is None).
[[nodiscard]] TrainResult run_train_job(const TrainJob& job, const Dataset& train, const Hierarchy& tree,
                                        const TrainObserver* observer = nullptr);

[[nodiscard]] std::string stage_log_to_jsonl(std::span<const StageLog> stages);

}  // namespace hiersev
