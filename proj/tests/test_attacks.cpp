#include <doctest.h>

#include <cmath>
#include <numeric>

#include "hiersev/attacks.hpp"
#include "hiersev/synthdata.hpp"
#include "support.hpp"

using namespace hiersev;
using testsupport::error_code_of;
using testsupport::ld;

namespace {

Hierarchy tree_of(std::vector<int> b) { return gen_tree(b); }

std::vector<int> iota_vec(int n) {
    std::vector<int> v(static_cast<std::size_t>(n));
    std::iota(v.begin(), v.end(), 0);
    return v;
}

std::vector<int> to_vec(std::span<const int> s) { return {s.begin(), s.end()}; }

/// Max relative error between an analytic logit gradient and extended-precision
/// central differences of `loss`.
double logit_grad_error(const std::vector<double>& z, const std::vector<double>& grad,
                        const std::function<ld(const std::vector<ld>&)>& loss) {
    auto zl = testsupport::widen(z);
    double worst = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const ld fd = testsupport::central_diff_ld(zl, i, 1e-4L, [&] { return loss(zl); });
        worst = std::max(worst, testsupport::rel_err_ld(grad[i], fd));
    }
    return worst;
}

}  // namespace

TEST_CASE("masked cross-entropy examples") {
    const std::vector<double> z{1, 2, 3};
    SUBCASE("singleton mask") {
        const std::vector<int> S{1};
        const auto r = masked_ce(z, 1, S);
        CHECK(r.loss == 0.0);
        for (double g : r.grad) CHECK(g == 0.0);
    }
    SUBCASE("full mask is standard CE") {
        const auto all = iota_vec(3);
        for (int y = 0; y < 3; ++y) {
            const auto a = masked_ce(z, y, all);
            const auto b = cross_entropy(z, y);
            CHECK(a.loss == b.loss);
            CHECK(a.grad == b.grad);
            CHECK(a.loss == doctest::Approx(std::log(std::exp(1) + std::exp(2) + std::exp(3)) - z[y]));
        }
    }
    SUBCASE("two-class mask") {
        const std::vector<int> S{0, 2};
        const auto r = masked_ce(z, 0, S);
        const double direct = -(1.0 - std::log(std::exp(1.0) + std::exp(3.0)));
        CHECK(r.loss == doctest::Approx(direct).epsilon(1e-15));
        const double p0 = std::exp(1.0) / (std::exp(1.0) + std::exp(3.0));
        CHECK(r.grad[0] == doctest::Approx(p0 - 1.0).epsilon(1e-15));
        CHECK(r.grad[1] == 0.0);
        CHECK(r.grad[2] == doctest::Approx(1.0 - p0).epsilon(1e-15));
    }
    SUBCASE("target outside the mask") {
        const std::vector<int> S{0, 2};
        CHECK(error_code_of([&] { (void)masked_ce(z, 1, S); }) == Errc::TargetNotInMask);
    }
}

TEST_CASE("hierarchical losses on T1") {
    const auto t = tree_of({2, 2, 2});
    const std::vector<double> z{0.3, -1.2, 2.0, 0.1, 0.7, -0.4, 1.1, 0.0};

    const auto lha = loss_lha(z, 0, 1, t);
    const double direct = std::log(std::exp(0.3) + std::exp(-1.2)) - 0.3;
    CHECK(lha.loss == doctest::Approx(direct).epsilon(1e-15));
    for (int j = 2; j < 8; ++j) CHECK(lha.grad[j] == 0.0);

    const auto gha = loss_gha(z, 0, 3, t);
    CHECK(gha.grad[1] == 0.0);
    CHECK(gha.grad[2] == 0.0);
    CHECK(gha.grad[3] == 0.0);
    CHECK(gha.grad[4] != 0.0);
    CHECK(gha.loss == doctest::Approx(std::log(std::exp(0.3) + std::exp(0.7) + std::exp(-0.4) + std::exp(1.1) +
                                               std::exp(0.0)) -
                                      0.3)
                          .epsilon(1e-15));

    const std::vector<double> flat(8, 0.7);
    CHECK(loss_nha(flat, 5, 1, t).loss == doctest::Approx(std::log(4.0)).epsilon(1e-15));
    CHECK(loss_nha(flat, 5, 1, t, NhaVariant::Exact).loss == doctest::Approx(std::log(4.0)).epsilon(1e-15));
}

TEST_CASE("degenerate masks") {
    const auto only_children = tree_of({2, 1});  // every parent has one leaf
    const std::vector<double> z{0.1, 0.2};
    CHECK(error_code_of([&] { (void)loss_lha(z, 0, 1, only_children); }) == Errc::DegenerateMask);
    CHECK(is_degenerate({AttackKind::LHA, 1}, 0, only_children));

    const auto single_branch = tree_of({1, 2});  // root has one child
    CHECK(error_code_of([&] { (void)loss_gha(z, 1, 2, single_branch); }) == Errc::DegenerateMask);
    CHECK_FALSE(is_degenerate({AttackKind::GHA, 1}, 1, single_branch));
}

TEST_CASE("node logits") {
    const auto t = tree_of({2, 2});
    const std::vector<double> z{1, 2, 3, 3};
    CHECK(node_logits_exact(z, 0, t) == z);
    const auto ex = node_logits_exact(z, 1, t);
    CHECK(ex[0] == doctest::Approx(std::log(std::exp(1.0) + std::exp(2.0))).epsilon(1e-15));
    CHECK(ex[0] == doctest::Approx(2.31326).epsilon(1e-6));

    const auto mx = node_logits_max(z, 1, t);
    CHECK(mx.logits == std::vector<double>{2, 3});
    CHECK(mx.argmax_leaf == std::vector<int>{1, 2});
    const auto m0 = node_logits_max(z, 0, t);
    CHECK(m0.logits == z);
    CHECK(m0.argmax_leaf == iota_vec(4));

    const std::vector<double> c(9, -0.25);
    const auto t3 = tree_of({3, 3});
    for (double v : node_logits_exact(c, 1, t3)) CHECK(v == doctest::Approx(-0.25 + std::log(3.0)).epsilon(1e-15));
    CHECK(error_code_of([&] { (void)node_logits_exact(z, 3, t); }) == Errc::HeightOutOfRange);
    CHECK(error_code_of([&] { (void)loss_nha(z, 0, 2, t); }) == Errc::HeightOutOfRange);
}

TEST_CASE("loss gradients match finite differences on logits") {
    Rng rng(77);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto t = gen_tree(testsupport::random_branching(rng));
        const int n = t.num_leaves(), H = t.num_levels();
        // The max-variant loss is only differentiable away from ties inside a node.
        auto well_separated = [&](const std::vector<double>& v) {
            for (int h = 1; h < H; ++h)
                for (int j = 0; j < t.level_size(h); ++j) {
                    std::vector<double> sub;
                    for (int leaf : t.leaves_under({h, j})) sub.push_back(v[leaf]);
                    std::sort(sub.rbegin(), sub.rend());
                    if (sub[0] - sub[1] < 1e-3) return false;
                }
            return true;
        };
        auto z = testsupport::uniform_vec(rng, static_cast<std::size_t>(n), -3, 3);
        while (!well_separated(z)) z = testsupport::uniform_vec(rng, static_cast<std::size_t>(n), -3, 3);
        const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));

        const auto ce = cross_entropy(z, y);
        worst = std::max(worst, logit_grad_error(z, ce.grad, [&](auto& zl) { return testsupport::ref_ce(zl, y); }));
        for (int h = 1; h < H; ++h) {
            const auto lm = to_vec(t.lower_mask(y, h));
            if (lm.size() > 1) {
                const auto r = loss_lha(z, y, h, t);
                worst = std::max(worst, logit_grad_error(z, r.grad, [&](auto& zl) {
                                     return testsupport::ref_masked_ce(zl, y, lm);
                                 }));
            }
            const auto gm = to_vec(t.greater_mask(y, h));
            if (gm.size() > 1) {
                const auto r = loss_gha(z, y, h, t);
                worst = std::max(worst, logit_grad_error(z, r.grad, [&](auto& zl) {
                                     return testsupport::ref_masked_ce(zl, y, gm);
                                 }));
            }
        }
        for (int h = 0; h <= H - 2; ++h)
            for (bool exact : {false, true}) {
                const auto r = loss_nha(z, y, h, t, exact ? NhaVariant::Exact : NhaVariant::Max);
                CHECK(r.loss == doctest::Approx(static_cast<double>(
                                                    testsupport::ref_nha(testsupport::widen(z), y, h, t, exact)))
                                    .epsilon(1e-13));
                worst = std::max(worst, logit_grad_error(z, r.grad, [&](auto& zl) {
                                     return testsupport::ref_nha(zl, y, h, t, exact);
                                 }));
            }
    }
    CHECK(worst < 1e-8);
}

TEST_CASE("identities with standard cross-entropy") {
    Rng rng(4);
    double worst = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const auto t = gen_tree(testsupport::random_branching(rng));
        const int n = t.num_leaves(), H = t.num_levels();
        const auto z = testsupport::uniform_vec(rng, static_cast<std::size_t>(n), -5, 5);
        const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        const auto ce = cross_entropy(z, y);
        for (const auto& r : {loss_gha(z, y, 1, t), loss_lha(z, y, H - 1, t), loss_nha(z, y, 0, t),
                              loss_nha(z, y, 0, t, NhaVariant::Exact)}) {
            worst = std::max(worst, std::abs(r.loss - ce.loss));
            for (int j = 0; j < n; ++j) worst = std::max(worst, std::abs(r.grad[j] - ce.grad[j]));
        }
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("node logit sandwich and node probabilities") {
    Rng rng(19);
    for (int trial = 0; trial < 200; ++trial) {
        const auto t = gen_tree(testsupport::random_branching(rng));
        const int n = t.num_leaves();
        const auto z = testsupport::uniform_vec(rng, static_cast<std::size_t>(n), -10, 10);
        const auto p_leaf = softmax(z);
        for (int h = 0; h < t.num_levels(); ++h) {
            const auto ex = node_logits_exact(z, h, t);
            const auto mx = node_logits_max(z, h, t);
            const auto p_node = softmax(ex);
            for (int j = 0; j < t.level_size(h); ++j) {
                const double k = static_cast<double>(t.leaves_under({h, j}).size());
                CHECK(mx.logits[j] <= ex[j]);
                CHECK(ex[j] <= mx.logits[j] + std::log(k));
                double summed = 0;
                for (int leaf : t.leaves_under({h, j})) summed += p_leaf[leaf];
                CHECK(std::abs(summed - p_node[j]) <= 1e-12);
            }
        }
    }
}

TEST_CASE("attack spec") {
    const auto t = tree_of({4, 4});
    CHECK(AttackSpec{AttackKind::GHA, 2, 4 / 255.0, 1 / 255.0, 50}.label() == "GHA50@2");
    CHECK(AttackSpec{AttackKind::PGD, 0, 4 / 255.0, 1 / 255.0, 20}.label() == "PGD20");
    CHECK(error_code_of([&] { AttackSpec{AttackKind::LHA, 3}.validate(t); }) == Errc::HeightOutOfRange);
    CHECK(error_code_of([&] { AttackSpec{AttackKind::LHA, 0}.validate(t); }) == Errc::HeightOutOfRange);
    CHECK(error_code_of([&] { AttackSpec{AttackKind::NHA, 2}.validate(t); }) == Errc::HeightOutOfRange);
    CHECK(error_code_of([&] { AttackSpec{AttackKind::PGD, 0, 0.1, 0.0}.validate(t); }) == Errc::InvalidAttackSpec);
    CHECK(error_code_of([&] { AttackSpec{AttackKind::PGD, 0, 0.1, 0.1, 0}.validate(t); }) == Errc::InvalidAttackSpec);
    CHECK_NOTHROW(AttackSpec{AttackKind::NHA, 0}.validate(t));

    const AttackSpec s{AttackKind::NHA, 1, 8 / 255.0, 2 / 255.0, 7, NhaVariant::Exact};
    CHECK(attack_spec_from_json_text(attack_spec_to_json_text(s)) == s);
    const auto parsed = attack_spec_from_json_text(
        R"({"kind":"GHA","h":2,"eps":0.03137,"alpha":0.00392,"steps":50,"nha_variant":"max"})");
    CHECK(parsed.kind == AttackKind::GHA);
    CHECK(parsed.height == 2);
    CHECK(parsed.eps == 0.03137);
    CHECK(error_code_of([] { (void)attack_spec_from_json_text(R"({"kind":"XYZ"})"); }) ==
          Errc::InvalidAttackSpec);
}

TEST_CASE("pgd keeps every iterate inside the box") {
    Rng rng(123);
    for (int run = 0; run < 60; ++run) {
        const auto t = gen_tree(testsupport::random_branching(rng, 2));
        const int d = 4;
        const auto net = testsupport::random_classifier(rng, d, {6}, 4, t.num_leaves());
        const auto x = testsupport::uniform_vec(rng, d, 0, 1);
        const AttackSpec spec{AttackKind::PGD, 0, rng.uniform(0.0, 0.3), 0.05, 10};
        int calls = 0;
        const auto o = pgd(net, t, x, 0, spec, rng.next_u64(), [&](int, std::span<const double> xt) {
            ++calls;
            for (int i = 0; i < d; ++i) {
                REQUIRE(std::abs(xt[i] - x[i]) <= spec.eps + 1e-12);
                REQUIRE(xt[i] >= 0.0);
                REQUIRE(xt[i] <= 1.0);
            }
        });
        CHECK(calls == spec.steps + 1);
        CHECK(o.iterates_checked == spec.steps + 1);
        if (o.success) CHECK(o.mistake >= 1);
    }
}

TEST_CASE("pgd edge cases") {
    const auto t = tree_of({2, 2});
    Rng rng(5);
    const auto net = testsupport::random_classifier(rng, 3, {4}, 3, 4);
    const std::vector<double> x{0.2, 0.5, 0.9};
    const int y = argmax(forward(net, x));

    SUBCASE("zero budget") {
        const auto o = pgd(net, t, x, y, {AttackKind::PGD, 0, 0.0, 0.01, 10}, 1);
        CHECK(o.x_adv == x);
        CHECK_FALSE(o.success);
    }
    SUBCASE("constant logits give zero steps") {
        const auto flat = resize_head(net, 4, ExplicitInit{std::vector<double>(12, 0.0), {0.0, 1.0, 0.0, 0.0}});
        const AttackSpec spec{AttackKind::PGD, 0, 0.1, 0.05, 5};
        std::vector<std::vector<double>> seen;
        const auto o = pgd(flat, t, x, 1, spec, 9,
                           [&](int, std::span<const double> xt) { seen.emplace_back(xt.begin(), xt.end()); });
        for (const auto& s : seen) CHECK(s == seen.front());
        CHECK_FALSE(o.success);
        const auto o2 = pgd(flat, t, x, 2, spec, 9);
        CHECK(o2.success);
        CHECK(o2.mistake == 2);
    }
    SUBCASE("GHA at height 1 replays PGD exactly") {
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            std::vector<std::vector<double>> a, b;
            const auto oa = pgd(net, t, x, y, {AttackKind::PGD, 0, 0.2, 0.02, 30}, seed,
                                [&](int, std::span<const double> xt) { a.emplace_back(xt.begin(), xt.end()); });
            const auto ob = pgd(net, t, x, y, {AttackKind::GHA, 1, 0.2, 0.02, 30}, seed,
                                [&](int, std::span<const double> xt) { b.emplace_back(xt.begin(), xt.end()); });
            CHECK(a == b);
            CHECK(oa.x_adv == ob.x_adv);
            CHECK(oa.success == ob.success);
            CHECK(oa.adv_prediction == ob.adv_prediction);
            CHECK(oa.worst_iterate == ob.worst_iterate);
        }
    }
    SUBCASE("degenerate mask skips the attack") {
        const auto t2 = tree_of({4, 1});
        const auto o = pgd(net, t2, x, 0, {AttackKind::LHA, 1, 0.1, 0.01, 5}, 3);
        CHECK(o.degenerate);
        CHECK_FALSE(o.success);
        CHECK(o.x_adv == x);
    }
    SUBCASE("seeded runs repeat bit for bit") {
        const AttackSpec spec{AttackKind::NHA, 1, 0.3, 0.03, 20};
        const auto a = pgd(net, t, x, y, spec, 77);
        const auto b = pgd(net, t, x, y, spec, 77);
        CHECK(a.x_adv == b.x_adv);
        CHECK(a.adv_prediction == b.adv_prediction);
    }
    SUBCASE("worst iterate carries the largest mistake") {
        int recorded = 0;
        const AttackSpec spec{AttackKind::PGD, 0, 0.5, 0.1, 20};
        const auto o = pgd(net, t, x, y, spec, 4, [&](int, std::span<const double> xt) {
            const int p = argmax(forward(net, xt));
            recorded = std::max(recorded, t.hdist(p, y));
        });
        CHECK(o.mistake == recorded);
        CHECK(o.success == (recorded > 0));
    }
}
