#include "hiersev/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "hiersev/error.hpp"
#include "hiersev/rng.hpp"

namespace hiersev {

std::string_view attack_kind_name(AttackKind kind) noexcept {
    switch (kind) {
        case AttackKind::PGD: return "PGD";
        case AttackKind::LHA: return "LHA";
        case AttackKind::GHA: return "GHA";
        case AttackKind::NHA: return "NHA";
    }
    return "PGD";
}

AttackKind parse_attack_kind(std::string_view name) {
    if (name == "PGD") return AttackKind::PGD;
    if (name == "LHA") return AttackKind::LHA;
    if (name == "GHA") return AttackKind::GHA;
    if (name == "NHA") return AttackKind::NHA;
    throw Error(Errc::InvalidAttackSpec, "unknown attack kind '" + std::string(name) + "'");
}

std::string_view nha_variant_name(NhaVariant v) noexcept { return v == NhaVariant::Max ? "max" : "exact"; }

NhaVariant parse_nha_variant(std::string_view name) {
    if (name == "max") return NhaVariant::Max;
    if (name == "exact") return NhaVariant::Exact;
    throw Error(Errc::InvalidAttackSpec, "unknown NHA variant '" + std::string(name) + "'");
}

void AttackSpec::validate(const Hierarchy& tree) const {
    if (!(eps >= 0.0) || !(alpha > 0.0) || steps < 1) {
        throw Error(Errc::InvalidAttackSpec, label() + ": need eps >= 0, alpha > 0, steps >= 1");
    }
    const int top = tree.num_levels() - 1;
    switch (kind) {
        case AttackKind::PGD: break;
        case AttackKind::LHA:
        case AttackKind::GHA:
            if (height < 1 || height > top) {
                throw Error(Errc::HeightOutOfRange, label() + ": height must lie in [1, " + std::to_string(top) + "]");
            }
            break;
        case AttackKind::NHA:
            if (height < 0 || height > top - 1) {
                throw Error(Errc::HeightOutOfRange,
                            label() + ": height must lie in [0, " + std::to_string(top - 1) + "]");
            }
            break;
    }
}

std::string AttackSpec::label() const {
    std::string out(attack_kind_name(kind));
    out += std::to_string(steps);
    if (kind != AttackKind::PGD) out += "@" + std::to_string(height);
    return out;
}

std::string attack_spec_to_json_text(const AttackSpec& spec) {
    nlohmann::json j{{"kind", attack_kind_name(spec.kind)},
                     {"h", spec.height},
                     {"eps", spec.eps},
                     {"alpha", spec.alpha},
                     {"steps", spec.steps},
                     {"nha_variant", nha_variant_name(spec.nha_variant)}};
    return j.dump();
}

AttackSpec attack_spec_from_json_text(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        AttackSpec spec;
        spec.kind = parse_attack_kind(j.at("kind").get<std::string>());
        spec.height = j.value("h", 0);
        spec.eps = j.at("eps").get<double>();
        spec.alpha = j.value("alpha", 1.0 / 255.0);
        spec.steps = j.at("steps").get<int>();
        spec.nha_variant = parse_nha_variant(j.value("nha_variant", std::string("max")));
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::ParseError, std::string("attack spec: ") + e.what());
    }
}

LossResult masked_ce(std::span<const double> z, int y, std::span<const int> mask) {
    if (!std::binary_search(mask.begin(), mask.end(), y)) {
        throw Error(Errc::TargetNotInMask, "label " + std::to_string(y) + " is not in the class mask");
    }
    double m = -INFINITY;
    for (int j : mask) {
        if (!std::isfinite(z[j])) throw Error(Errc::NonFiniteInput, "non-finite logit");
        m = std::max(m, z[j]);
    }
    double s = 0.0;
    for (int j : mask) s += std::exp(z[j] - m);
    const double lse = m + std::log(s);

    LossResult out;
    out.loss = lse - z[y];
    out.grad.assign(z.size(), 0.0);
    for (int j : mask) out.grad[j] = std::exp(z[j] - m) / s;
    out.grad[y] -= 1.0;
    return out;
}

LossResult cross_entropy(std::span<const double> z, int y) {
    if (y < 0 || y >= static_cast<int>(z.size())) {
        throw Error(Errc::LabelOutOfRange, "label " + std::to_string(y) + " outside the logit vector");
    }
    std::vector<int> all(z.size());
    std::iota(all.begin(), all.end(), 0);
    return masked_ce(z, y, all);
}

LossResult loss_lha(std::span<const double> z, int y, int h, const Hierarchy& tree) {
    const auto mask = tree.lower_mask(y, h);
    if (mask.size() == 1) {
        throw Error(Errc::DegenerateMask, "LHA@" + std::to_string(h) + " mask of leaf " + std::to_string(y) +
                                              " holds only the label");
    }
    return masked_ce(z, y, mask);
}

LossResult loss_gha(std::span<const double> z, int y, int h, const Hierarchy& tree) {
    const auto mask = tree.greater_mask(y, h);
    if (mask.size() == 1) {
        throw Error(Errc::DegenerateMask, "GHA@" + std::to_string(h) + " mask of leaf " + std::to_string(y) +
                                              " holds only the label");
    }
    return masked_ce(z, y, mask);
}

namespace {

void check_logits(std::span<const double> z, const Hierarchy& tree) {
    if (static_cast<int>(z.size()) != tree.num_leaves()) {
        throw Error(Errc::DimensionMismatch, "expected " + std::to_string(tree.num_leaves()) + " leaf logits, got " +
                                                 std::to_string(z.size()));
    }
}

}  // namespace

std::vector<double> node_logits_exact(std::span<const double> z, int h, const Hierarchy& tree) {
    check_logits(z, tree);
    const int n = tree.level_size(h);
    std::vector<double> out(n);
    std::vector<double> buf;
    for (int j = 0; j < n; ++j) {
        const auto leaves = tree.leaves_under({h, j});
        buf.clear();
        for (int i : leaves) buf.push_back(z[i]);
        out[j] = logsumexp(buf);
    }
    return out;
}

NodeMaxLogits node_logits_max(std::span<const double> z, int h, const Hierarchy& tree) {
    check_logits(z, tree);
    const int n = tree.level_size(h);
    NodeMaxLogits out;
    out.logits.resize(n);
    out.argmax_leaf.resize(n);
    for (int j = 0; j < n; ++j) {
        const auto leaves = tree.leaves_under({h, j});
        int best = leaves.front();
        for (int i : leaves)
            if (z[i] > z[best]) best = i;
        out.logits[j] = z[best];
        out.argmax_leaf[j] = best;
    }
    return out;
}

LossResult loss_nha(std::span<const double> z, int y, int h, const Hierarchy& tree, NhaVariant variant) {
    if (h < 0 || h > tree.num_levels() - 2) {
        throw Error(Errc::HeightOutOfRange, "NHA height " + std::to_string(h) + " outside [0, " +
                                                std::to_string(tree.num_levels() - 2) + "]");
    }
    check_logits(z, tree);
    const int target = tree.ancestor_index(y, h);

    LossResult out;
    out.grad.assign(z.size(), 0.0);
    if (variant == NhaVariant::Max) {
        const auto nodes = node_logits_max(z, h, tree);
        auto node_loss = cross_entropy(nodes.logits, target);
        out.loss = node_loss.loss;
        for (std::size_t j = 0; j < nodes.logits.size(); ++j) out.grad[nodes.argmax_leaf[j]] = node_loss.grad[j];
    } else {
        const auto nodes = node_logits_exact(z, h, tree);
        auto node_loss = cross_entropy(nodes, target);
        out.loss = node_loss.loss;
        for (std::size_t j = 0; j < nodes.size(); ++j) {
            for (int i : tree.leaves_under({h, static_cast<int>(j)})) {
                out.grad[i] = node_loss.grad[j] * std::exp(z[i] - nodes[j]);
            }
        }
    }
    return out;
}

LossResult attack_loss(const AttackSpec& spec, std::span<const double> z, int y, const Hierarchy& tree) {
    switch (spec.kind) {
        case AttackKind::PGD: return cross_entropy(z, y);
        case AttackKind::LHA: return loss_lha(z, y, spec.height, tree);
        case AttackKind::GHA: return loss_gha(z, y, spec.height, tree);
        case AttackKind::NHA: return loss_nha(z, y, spec.height, tree, spec.nha_variant);
    }
    return cross_entropy(z, y);
}

bool is_degenerate(const AttackSpec& spec, int y, const Hierarchy& tree) {
    switch (spec.kind) {
        case AttackKind::LHA: return tree.lower_mask(y, spec.height).size() == 1;
        case AttackKind::GHA: return tree.greater_mask(y, spec.height).size() == 1;
        default: return false;
    }
}

std::uint64_t instance_seed(std::uint64_t master_seed, std::uint64_t instance, std::uint64_t stream) {
    return derive_seed({master_seed, instance, stream});
}

namespace {

void project(std::vector<double>& xt, std::span<const double> x, double eps) {
    for (std::size_t i = 0; i < xt.size(); ++i) {
        double v = std::clamp(xt[i], x[i] - eps, x[i] + eps);
        xt[i] = std::clamp(v, 0.0, 1.0);
    }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

AdversarialOutcome pgd(const Classifier& model, const Hierarchy& tree, std::span<const double> x, int y,
                       const AttackSpec& spec, std::uint64_t seed, const IterateObserver& observer) {
    spec.validate(tree);
    if (static_cast<int>(x.size()) != model.input_dim()) {
        throw Error(Errc::DimensionMismatch, "attack input has wrong dimension");
    }
    if (model.n_classes() != tree.num_leaves()) {
        throw Error(Errc::DimensionMismatch, "model must classify leaves to be attacked");
    }
    if (y < 0 || y >= tree.num_leaves()) throw Error(Errc::LabelOutOfRange, "label " + std::to_string(y));

    AdversarialOutcome out;
    if (is_degenerate(spec, y, tree)) {
        out.degenerate = true;
        out.x_adv.assign(x.begin(), x.end());
        out.final_prediction = argmax(forward(model, x));
        out.final_success = out.final_prediction != y;
        out.final_mistake = tree.hdist(out.final_prediction, y);
        return out;
    }

    Rng rng(seed);
    std::vector<double> xt(x.begin(), x.end());
    for (auto& v : xt) v += rng.uniform(-spec.eps, spec.eps);
    project(xt, x, spec.eps);

    for (int t = 0;; ++t) {
        if (observer) observer(t, xt);
        const auto cache = forward_cached(model, xt);
        const int pred = argmax(cache.logits);
        ++out.iterates_checked;
        if (pred != y) {
            const int d = tree.hdist(pred, y);
            if (!out.success || d > out.mistake) {
                out.success = true;
                out.mistake = d;
                out.adv_prediction = pred;
                out.worst_iterate = t;
            }
        }
        if (t == spec.steps) {
            out.final_prediction = pred;
            out.final_success = pred != y;
            out.final_mistake = tree.hdist(pred, y);
            break;
        }
        const auto loss = attack_loss(spec, cache.logits, y, tree);
        const auto g = backward(model, cache, loss.grad, nullptr);
        for (std::size_t i = 0; i < xt.size(); ++i) xt[i] += spec.alpha * sign(g[i]);
        project(xt, x, spec.eps);
    }
    out.x_adv = std::move(xt);
    if (!out.success) out.adv_prediction = y;
    return out;
}

}  // namespace hiersev
