#include "hiersev/curriculum.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "hiersev/attacks.hpp"
#include "hiersev/error.hpp"
#include "hiersev/rng.hpp"

namespace hiersev {

std::string_view schedule_mode_name(ScheduleMode m) noexcept {
    return m == ScheduleMode::Exponential ? "exp" : "linear";
}

ScheduleMode parse_schedule_mode(std::string_view name) {
    if (name == "exp" || name == "exponential") return ScheduleMode::Exponential;
    if (name == "linear") return ScheduleMode::Linear;
    throw Error(Errc::ConfigInvalid, "unknown schedule mode '" + std::string(name) + "'");
}

std::vector<int> StageSchedule::stage_lengths() const {
    std::vector<int> out;
    int prev = 0;
    for (int b : boundaries) {
        out.push_back(b - prev);
        prev = b;
    }
    out.push_back(total_iterations - prev);
    return out;
}

StageSchedule make_schedule(int total_iterations, int num_stages, ScheduleMode mode) {
    if (num_stages < 1) throw Error(Errc::ConfigInvalid, "a schedule needs at least one stage");
    if (total_iterations < 1 || total_iterations < 10 * (num_stages - 1)) {
        throw Error(Errc::TooFewIterations, std::to_string(total_iterations) + " iterations cannot cover " +
                                                std::to_string(num_stages) + " stages");
    }
    StageSchedule s;
    s.total_iterations = total_iterations;
    s.mode = mode;
    const int n_bounds = num_stages - 1;
    if (n_bounds == 0) return s;

    std::vector<double> fractions(n_bounds);
    if (mode == ScheduleMode::Linear) {
        for (int k = 0; k < n_bounds; ++k) fractions[k] = static_cast<double>(k + 1) / num_stages;
    } else if (num_stages == 7) {
        std::copy(std::begin(kSevenStageFractions), std::end(kSevenStageFractions), fractions.begin());
    } else {
        // Stage lengths grow geometrically; boundaries are their running sums.
        double total = 0.0;
        for (int k = 0; k < num_stages; ++k) total += std::pow(kExponentialRatio, k);
        double run = 0.0;
        for (int k = 0; k < n_bounds; ++k) {
            run += std::pow(kExponentialRatio, k);
            fractions[k] = run / total;
        }
    }

    int prev = 0;
    for (int k = 0; k < n_bounds; ++k) {
        const double exact = fractions[k] * total_iterations;
        int b = static_cast<int>(std::llround(exact));
        b = std::max(b, prev + 1);
        b = std::min(b, total_iterations - (n_bounds - k));
        s.boundaries.push_back(b);
        prev = b;
    }
    return s;
}

LinearHead warm_up(const LinearHead& head, int height, const Hierarchy& tree) {
    if (height < 1 || height >= tree.num_levels()) {
        throw Error(Errc::HeightOutOfRange, "cannot warm up from height " + std::to_string(height));
    }
    if (head.n_classes != tree.level_size(height)) {
        throw Error(Errc::HeadSizeMismatch, "head has " + std::to_string(head.n_classes) + " rows but stratum " +
                                                std::to_string(height) + " has " +
                                                std::to_string(tree.level_size(height)) + " nodes");
    }
    const int n_child = tree.level_size(height - 1);
    const int m = head.feature_dim;
    LinearHead out;
    out.n_classes = n_child;
    out.feature_dim = m;
    out.weight.resize(static_cast<std::size_t>(n_child) * m);
    out.bias.resize(n_child);
    for (int i = 0; i < n_child; ++i) {
        const int parent = tree.parent_index({height - 1, i});
        const auto row = head.row(parent);
        std::copy(row.begin(), row.end(), out.weight.begin() + static_cast<std::ptrdiff_t>(i) * m);
        out.bias[i] = head.bias[parent];
    }
    return out;
}

std::vector<int> coarsen_labels(std::span<const int> leaf_labels, int height, const Hierarchy& tree) {
    std::vector<int> out(leaf_labels.size());
    for (std::size_t i = 0; i < leaf_labels.size(); ++i) out[i] = tree.ancestor_index(leaf_labels[i], height);
    return out;
}

std::string_view trainer_name(const TrainerConfig& cfg) noexcept {
    switch (cfg.index()) {
        case 0: return "clean";
        case 1: return "fat";
        default: return "trades";
    }
}

void validate_trainer(const TrainerConfig& cfg) {
    std::visit(
        [](const auto& c) {
            using T = std::decay_t<decltype(c)>;
            if (c.minibatch_size < 1) throw Error(Errc::ConfigInvalid, "minibatch_size must be >= 1");
            if constexpr (std::is_same_v<T, FatConfig>) {
                if (c.replays < 1) throw Error(Errc::ConfigInvalid, "FAT replays must be >= 1");
                if (!(c.epsilon >= 0.0) || !(c.alpha_train >= 0.0)) {
                    throw Error(Errc::ConfigInvalid, "FAT epsilon and alpha must be non-negative");
                }
            } else if constexpr (std::is_same_v<T, TradesConfig>) {
                if (!(c.beta >= 0.0)) throw Error(Errc::ConfigInvalid, "TRADES beta must be >= 0");
                if (c.inner_steps < 1) throw Error(Errc::ConfigInvalid, "TRADES inner_steps must be >= 1");
                if (!(c.epsilon >= 0.0) || !(c.inner_alpha >= 0.0)) {
                    throw Error(Errc::ConfigInvalid, "TRADES epsilon and inner_alpha must be non-negative");
                }
            }
        },
        cfg);
}

namespace {

/// Cycles through seeded permutations of the training set.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        rng_.shuffle(order_.begin(), order_.end());
    }

    std::vector<std::size_t> next(int size) {
        std::vector<std::size_t> out;
        out.reserve(size);
        while (static_cast<int>(out.size()) < size) {
            if (cursor_ == order_.size()) {
                rng_.shuffle(order_.begin(), order_.end());
                cursor_ = 0;
            }
            out.push_back(order_[cursor_++]);
        }
        return out;
    }

private:
    std::vector<std::size_t> order_;
    Rng rng_;
    std::size_t cursor_ = 0;
};

void check_training_inputs(const Classifier& model, const Dataset& data, std::span<const int> labels) {
    if (data.size() == 0) throw Error(Errc::ConfigInvalid, "empty training set");
    if (labels.size() != data.size()) throw Error(Errc::ConfigInvalid, "one label per training row required");
    if (data.dim != model.input_dim()) throw Error(Errc::DimensionMismatch, "data and model dimensions differ");
    for (int l : labels)
        if (l < 0 || l >= model.n_classes()) {
            throw Error(Errc::LabelOutOfRange, "label " + std::to_string(l) + " outside head of " +
                                                   std::to_string(model.n_classes()));
        }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

StageStats clean_train(Classifier& model, AdamState& optimizer, const Dataset& data, std::span<const int> labels,
                       const CleanConfig& cfg, int iterations, std::uint64_t seed, const TrainObserver* observer) {
    check_training_inputs(model, data, labels);
    BatchSampler sampler(data.size(), seed);
    StageStats stats;
    for (int step = 0; step < iterations; ++step) {
        const auto batch = sampler.next(cfg.minibatch_size);
        const double scale = 1.0 / static_cast<double>(batch.size());
        auto grads = Gradients::zeros_like(model);
        double loss = 0.0;
        for (auto i : batch) {
            const auto cache = forward_cached(model, data.row(i));
            const auto ce = cross_entropy(cache.logits, labels[i]);
            loss += scale * ce.loss;
            backward(model, cache, ce.grad, &grads, scale);
        }
        adam_step(optimizer, model, grads);
        ++stats.iterations;
        stats.final_loss = loss;
        if (observer && observer->on_step) observer->on_step(optimizer.step, loss);
    }
    return stats;
}

}  // namespace

StageStats fat_train(Classifier& model, AdamState& optimizer, const Dataset& data, std::span<const int> labels,
                     const FatConfig& cfg, int iterations, std::uint64_t seed, const TrainObserver* observer) {
    validate_trainer(cfg);
    check_training_inputs(model, data, labels);
    BatchSampler sampler(data.size(), seed);
    const int dim = data.dim;
    StageStats stats;
    std::vector<double> clean;
    std::vector<double> delta;
    std::vector<double> xin(dim);
    while (stats.iterations < iterations) {
        const auto batch = sampler.next(cfg.minibatch_size);
        const int bsz = static_cast<int>(batch.size());
        const double scale = 1.0 / bsz;
        clean.clear();
        for (auto i : batch) {
            const auto r = data.row(i);
            clean.insert(clean.end(), r.begin(), r.end());
        }
        // The perturbation buffer starts at zero for every minibatch.
        delta.assign(clean.size(), 0.0);
        for (int replay = 0; replay < cfg.replays && stats.iterations < iterations; ++replay) {
            auto grads = Gradients::zeros_like(model);
            double loss = 0.0;
            for (int b = 0; b < bsz; ++b) {
                const std::size_t off = static_cast<std::size_t>(b) * dim;
                for (int d = 0; d < dim; ++d) xin[d] = std::clamp(clean[off + d] + delta[off + d], 0.0, 1.0);
                const auto cache = forward_cached(model, xin);
                const auto ce = cross_entropy(cache.logits, labels[batch[b]]);
                loss += scale * ce.loss;
                const auto gx = backward(model, cache, ce.grad, &grads, scale);
                for (int d = 0; d < dim; ++d) {
                    double v = std::clamp(delta[off + d] + cfg.alpha_train * sign(gx[d]), -cfg.epsilon, cfg.epsilon);
                    v = std::clamp(clean[off + d] + v, 0.0, 1.0) - clean[off + d];
                    delta[off + d] = std::clamp(v, -cfg.epsilon, cfg.epsilon);
                }
            }
            adam_step(optimizer, model, grads);
            ++stats.iterations;
            stats.final_loss = loss;
            if (observer && observer->on_fat_replay) observer->on_fat_replay(clean, delta, bsz);
            if (observer && observer->on_step) observer->on_step(optimizer.step, loss);
        }
    }
    return stats;
}

KlResult kl_divergence(std::span<const double> z, std::span<const double> z_adv) {
    if (z.size() != z_adv.size()) throw Error(Errc::DimensionMismatch, "KL over logit vectors of different length");
    const auto lp = log_softmax(z);
    const auto lq = log_softmax(z_adv);
    KlResult out;
    out.grad_clean.resize(z.size());
    out.grad_adv.resize(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) out.value += std::exp(lp[j]) * (lp[j] - lq[j]);
    for (std::size_t j = 0; j < z.size(); ++j) {
        const double p = std::exp(lp[j]);
        const double q = std::exp(lq[j]);
        out.grad_clean[j] = p * ((lp[j] - lq[j]) - out.value);
        out.grad_adv[j] = q - p;
    }
    return out;
}

double trades_objective(const Classifier& model, std::span<const double> x, std::span<const double> x_adv, int y,
                        double beta, Gradients* acc, double scale) {
    const auto cache = forward_cached(model, x);
    const auto cache_adv = forward_cached(model, x_adv);
    const auto ce = cross_entropy(cache.logits, y);
    const auto kl = kl_divergence(cache.logits, cache_adv.logits);
    if (acc) {
        std::vector<double> g_clean(ce.grad);
        std::vector<double> g_adv(kl.grad_adv.size());
        for (std::size_t j = 0; j < g_clean.size(); ++j) {
            g_clean[j] += beta * kl.grad_clean[j];
            g_adv[j] = beta * kl.grad_adv[j];
        }
        backward(model, cache, g_clean, acc, scale);
        backward(model, cache_adv, g_adv, acc, scale);
    }
    return ce.loss + beta * kl.value;
}

StageStats trades_train(Classifier& model, AdamState& optimizer, const Dataset& data, std::span<const int> labels,
                        const TradesConfig& cfg, int iterations, std::uint64_t seed, const TrainObserver* observer) {
    validate_trainer(cfg);
    check_training_inputs(model, data, labels);
    BatchSampler sampler(data.size(), seed);
    Rng noise(derive_seed({seed, 0x7ade5}));
    const int dim = data.dim;
    StageStats stats;
    std::vector<double> xadv(dim);
    for (int step = 0; step < iterations; ++step) {
        const auto batch = sampler.next(cfg.minibatch_size);
        const double scale = 1.0 / static_cast<double>(batch.size());
        auto grads = Gradients::zeros_like(model);
        double loss = 0.0;
        for (auto i : batch) {
            const auto x = data.row(i);
            const auto clean_logits = forward(model, x);
            for (int d = 0; d < dim; ++d) {
                const double v = x[d] + 0.001 * noise.normal();
                xadv[d] = std::clamp(std::clamp(v, x[d] - cfg.epsilon, x[d] + cfg.epsilon), 0.0, 1.0);
            }
            if (cfg.beta > 0.0) {
                for (int k = 0; k < cfg.inner_steps; ++k) {
                    const auto cache = forward_cached(model, xadv);
                    const auto kl = kl_divergence(clean_logits, cache.logits);
                    const auto gx = backward(model, cache, kl.grad_adv, nullptr);
                    for (int d = 0; d < dim; ++d) {
                        const double v = xadv[d] + cfg.inner_alpha * sign(gx[d]);
                        xadv[d] = std::clamp(std::clamp(v, x[d] - cfg.epsilon, x[d] + cfg.epsilon), 0.0, 1.0);
                    }
                }
                loss += scale * trades_objective(model, x, xadv, labels[i], cfg.beta, &grads, scale);
            } else {
                const auto cache = forward_cached(model, x);
                const auto ce = cross_entropy(cache.logits, labels[i]);
                loss += scale * ce.loss;
                backward(model, cache, ce.grad, &grads, scale);
            }
        }
        adam_step(optimizer, model, grads);
        ++stats.iterations;
        stats.final_loss = loss;
        if (observer && observer->on_step) observer->on_step(optimizer.step, loss);
    }
    return stats;
}

StageStats train_iterations(Classifier& model, AdamState& optimizer, const Dataset& data, std::span<const int> labels,
                            const TrainerConfig& cfg, int iterations, std::uint64_t seed,
                            const TrainObserver* observer) {
    validate_trainer(cfg);
    if (iterations < 0) throw Error(Errc::ConfigInvalid, "negative iteration count");
    return std::visit(
        [&](const auto& c) -> StageStats {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, CleanConfig>) {
                return clean_train(model, optimizer, data, labels, c, iterations, seed, observer);
            } else if constexpr (std::is_same_v<T, FatConfig>) {
                return fat_train(model, optimizer, data, labels, c, iterations, seed, observer);
            } else {
                return trades_train(model, optimizer, data, labels, c, iterations, seed, observer);
            }
        },
        cfg);
}

double mean_cross_entropy(const Classifier& model, const Dataset& data, std::span<const int> labels) {
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) total += cross_entropy(forward(model, data.row(i)), labels[i]).loss;
    return data.size() == 0 ? 0.0 : total / static_cast<double>(data.size());
}

std::string_view curriculum_name(Curriculum c) noexcept {
    switch (c) {
        case Curriculum::None: return "none";
        case Curriculum::Chat: return "chat";
        case Curriculum::Scratch: return "scratch";
    }
    return "none";
}

Curriculum parse_curriculum(std::string_view name) {
    if (name == "none") return Curriculum::None;
    if (name == "chat") return Curriculum::Chat;
    if (name == "scratch") return Curriculum::Scratch;
    throw Error(Errc::ConfigInvalid, "unknown curriculum '" + std::string(name) + "'");
}

TrainResult chat_train(Classifier model, const Dataset& data, const Hierarchy& tree, const StageSchedule& schedule,
                       const TrainerConfig& trainer, AdamConfig adam, std::uint64_t seed, bool scratch,
                       const TrainObserver* observer) {
    const int coarsest = tree.num_levels() - 2;
    if (schedule.num_stages() != coarsest + 1) {
        throw Error(Errc::ConfigInvalid, "schedule has " + std::to_string(schedule.num_stages()) +
                                             " stages but the tree trains " + std::to_string(coarsest + 1) + " strata");
    }
    if (model.n_classes() != tree.level_size(coarsest)) {
        throw Error(Errc::HeadSizeMismatch, "initial head must classify stratum " + std::to_string(coarsest));
    }
    const auto lengths = schedule.stage_lengths();
    const std::size_t head_tensor = 2 * model.extractor.layers.size();

    TrainResult result;
    auto optimizer = AdamState::for_classifier(model, adam);
    for (int stage = 0; stage < schedule.num_stages(); ++stage) {
        const int height = coarsest - stage;
        if (stage > 0) {
            const Classifier before = observer && observer->on_warm_up ? model : Classifier{};
            const int n = tree.level_size(height);
            if (scratch) {
                model = resize_head(model, n, ScaledUniformInit{derive_seed({seed, 0x5c7a, std::uint64_t(stage)})});
            } else {
                auto head = warm_up(model.head, height + 1, tree);
                model = resize_head(model, n, ExplicitInit{std::move(head.weight), std::move(head.bias)});
            }
            // Extractor moments carry over; the new head starts with fresh moments.
            optimizer.reset_from(model, head_tensor);
            if (observer && observer->on_warm_up) observer->on_warm_up(before, model, height);
        }
        const auto labels = coarsen_labels(data.labels, height, tree);
        const auto stats = train_iterations(model, optimizer, data, labels, trainer, lengths[stage],
                                            derive_seed({seed, std::uint64_t(stage)}), observer);
        result.stages.push_back({stage, height, model.n_classes(), stats.iterations, stats.final_loss});
        result.optimizer_steps += stats.iterations;
    }
    result.model = std::move(model);
    return result;
}

TrainResult run_train_job(const TrainJob& job, const Dataset& train, const Hierarchy& tree,
                          const TrainObserver* observer) {
    validate_trainer(job.trainer);
    const bool curriculum = job.curriculum != Curriculum::None;
    const int start_height = curriculum ? tree.num_levels() - 2 : 0;
    ClassifierShape shape{train.dim, job.hidden, job.feature_dim, tree.level_size(start_height)};
    auto model = make_classifier(shape, derive_seed({job.seed, 0x1417}));
    if (curriculum) {
        const auto schedule = make_schedule(job.total_iterations, tree.num_levels() - 1, job.schedule);
        return chat_train(std::move(model), train, tree, schedule, job.trainer, job.adam, job.seed,
                          job.curriculum == Curriculum::Scratch, observer);
    }
    auto optimizer = AdamState::for_classifier(model, job.adam);
    const auto stats = train_iterations(model, optimizer, train, train.labels, job.trainer, job.total_iterations,
                                        derive_seed({job.seed, 0}), observer);
    TrainResult result;
    result.stages.push_back({0, 0, model.n_classes(), stats.iterations, stats.final_loss});
    result.optimizer_steps = stats.iterations;
    result.model = std::move(model);
    return result;
}

std::string train_job_to_json_text(const TrainJob& job) {
    nlohmann::ordered_json j;
    j["trainer"] = trainer_name(job.trainer);
    std::visit(
        [&](const auto& c) {
            using T = std::decay_t<decltype(c)>;
            j["minibatch_size"] = c.minibatch_size;
            if constexpr (std::is_same_v<T, FatConfig>) {
                j["replays"] = c.replays;
                j["eps"] = c.epsilon;
                j["alpha"] = c.alpha_train;
            } else if constexpr (std::is_same_v<T, TradesConfig>) {
                j["beta"] = c.beta;
                j["inner_steps"] = c.inner_steps;
                j["alpha"] = c.inner_alpha;
                j["eps"] = c.epsilon;
            }
        },
        job.trainer);
    j["curriculum"] = curriculum_name(job.curriculum);
    j["schedule"] = schedule_mode_name(job.schedule);
    j["iters"] = job.total_iterations;
    j["hidden"] = job.hidden;
    j["feature_dim"] = job.feature_dim;
    j["lr"] = job.adam.lr;
    j["seed"] = job.seed;
    j["data"] = job.data_path;
    j["tree"] = job.tree_path;
    j["out"] = job.out_path;
    return j.dump(2) + "\n";
}

TrainJob train_job_from_json_text(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        TrainJob job;
        const auto kind = j.value("trainer", std::string("fat"));
        const int mb = j.value("minibatch_size", 128);
        if (kind == "clean") {
            job.trainer = CleanConfig{mb};
        } else if (kind == "fat") {
            FatConfig c;
            c.minibatch_size = mb;
            c.replays = j.value("replays", c.replays);
            c.epsilon = j.value("eps", c.epsilon);
            c.alpha_train = j.value("alpha", c.epsilon);
            job.trainer = c;
        } else if (kind == "trades") {
            TradesConfig c;
            c.minibatch_size = mb;
            c.beta = j.value("beta", c.beta);
            c.inner_steps = j.value("inner_steps", c.inner_steps);
            c.inner_alpha = j.value("alpha", c.inner_alpha);
            c.epsilon = j.value("eps", c.epsilon);
            job.trainer = c;
        } else {
            throw Error(Errc::ConfigInvalid, "unknown trainer '" + kind + "'");
        }
        job.curriculum = parse_curriculum(j.value("curriculum", std::string("chat")));
        job.schedule = parse_schedule_mode(j.value("schedule", std::string("exp")));
        job.total_iterations = j.value("iters", job.total_iterations);
        job.hidden = j.value("hidden", job.hidden);
        job.feature_dim = j.value("feature_dim", job.feature_dim);
        job.adam.lr = j.value("lr", job.adam.lr);
        job.seed = j.value("seed", job.seed);
        job.data_path = j.value("data", std::string{});
        job.tree_path = j.value("tree", std::string{});
        job.out_path = j.value("out", std::string{});
        validate_trainer(job.trainer);
        return job;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::ParseError, std::string("training config: ") + e.what());
    }
}

std::string stage_log_to_jsonl(std::span<const StageLog> stages) {
    std::string out;
    for (const auto& s : stages) {
        nlohmann::ordered_json j{{"stage", s.stage},
                                 {"height", s.height},
                                 {"n_classes", s.n_classes},
                                 {"iterations", s.iterations},
                                 {"final_loss", s.final_loss}};
        out += j.dump() + "\n";
    }
    return out;
}

}  // namespace hiersev
