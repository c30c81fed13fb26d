#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hiersev/hierarchy.hpp"
#include "hiersev/netcore.hpp"

namespace hiersev {

enum class AttackKind { PGD, LHA, GHA, NHA };
enum class NhaVariant { Max, Exact };

[[nodiscard]] std::string_view attack_kind_name(AttackKind kind) noexcept;
[[nodiscard]] AttackKind parse_attack_kind(std::string_view name);
[[nodiscard]] std::string_view nha_variant_name(NhaVariant v) noexcept;
[[nodiscard]] NhaVariant parse_nha_variant(std::string_view name);

/// An n-step l-inf attack. `height` is ignored for PGD. eps and alpha are
/// in [0,1] pixel units, e.g. 4/255.
struct AttackSpec {
    AttackKind kind = AttackKind::PGD;
    int height = 0;
    double eps = 4.0 / 255.0;
    double alpha = 1.0 / 255.0;
    int steps = 50;
    NhaVariant nha_variant = NhaVariant::Max;

    /// Throws InvalidAttackSpec (bad eps/alpha/steps) or HeightOutOfRange.
    void validate(const Hierarchy& tree) const;
    /// e.g. "PGD50", "GHA50@2".
    [[nodiscard]] std::string label() const;

    friend bool operator==(const AttackSpec&, const AttackSpec&) = default;
};

[[nodiscard]] std::string attack_spec_to_json_text(const AttackSpec& spec);
[[nodiscard]] AttackSpec attack_spec_from_json_text(const std::string& text);

struct LossResult {
    double loss = 0.0;
    std::vector<double> grad;  // d loss / d logits
};

/// -(z_y - logsumexp_{j in mask} z_j). Gradient is zero outside the mask.
/// `mask` must be sorted; throws TargetNotInMask when y is absent.
[[nodiscard]] LossResult masked_ce(std::span<const double> z, int y, std::span<const int> mask);
[[nodiscard]] LossResult cross_entropy(std::span<const double> z, int y);

/// Masked CE over leaves within distance h of y. Throws DegenerateMask when
/// only y itself qualifies.
[[nodiscard]] LossResult loss_lha(std::span<const double> z, int y, int h, const Hierarchy& tree);
/// Masked CE over y plus the leaves at distance >= h. Throws DegenerateMask
/// when only y itself qualifies.
[[nodiscard]] LossResult loss_gha(std::span<const double> z, int y, int h, const Hierarchy& tree);

/// Node logit = logsumexp of the node's leaf logits; its softmax reproduces
/// the summed leaf probabilities.
[[nodiscard]] std::vector<double> node_logits_exact(std::span<const double> z, int h, const Hierarchy& tree);

struct NodeMaxLogits {
    std::vector<double> logits;
    std::vector<int> argmax_leaf;  // lowest leaf index on ties
};
[[nodiscard]] NodeMaxLogits node_logits_max(std::span<const double> z, int h, const Hierarchy& tree);

/// CE over node logits at height h, targeting y's ancestor. Valid for
/// 0 <= h <= H-2.
[[nodiscard]] LossResult loss_nha(std::span<const double> z, int y, int h, const Hierarchy& tree,
                                  NhaVariant variant = NhaVariant::Max);

/// The loss the attack ascends, selected by spec.kind.
[[nodiscard]] LossResult attack_loss(const AttackSpec& spec, std::span<const double> z, int y, const Hierarchy& tree);

/// True when LHA/GHA at spec.height has a singleton mask for leaf y.
[[nodiscard]] bool is_degenerate(const AttackSpec& spec, int y, const Hierarchy& tree);

struct AdversarialOutcome {
    std::vector<double> x_adv;   // final iterate
    bool success = false;        // some iterate (x_0 included) misclassifies
    int adv_prediction = -1;     // from the misclassifying iterate with max hdist; earliest on ties
    int mistake = 0;             // hdist(adv_prediction, y) when success
    int worst_iterate = -1;
    bool final_success = false;  // final iterate misclassifies
    int final_prediction = -1;
    int final_mistake = 0;
    int iterates_checked = 0;    // steps + 1
    bool degenerate = false;     // singleton mask; no attack was run
};

/// Observer called with (t, x_t) after each projected iterate.
using IterateObserver = std::function<void(int, std::span<const double>)>;

/// Per-instance random-start seed. `stream` separates independent restarts;
/// it does not depend on the attack kind so attacks sharing a master seed
/// share their random start.
[[nodiscard]] std::uint64_t instance_seed(std::uint64_t master_seed, std::uint64_t instance, std::uint64_t stream = 0);

/// Projected sign-gradient ascent from a uniform random start inside
/// B_inf(x, eps) intersected with [0,1]^d.
[[nodiscard]] AdversarialOutcome pgd(const Classifier& model, const Hierarchy& tree, std::span<const double> x, int y,
                                     const AttackSpec& spec, std::uint64_t seed, const IterateObserver& observer = {});

}  // namespace hiersev
