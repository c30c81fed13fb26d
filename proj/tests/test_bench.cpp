#include <doctest.h>

#include <algorithm>

#include "hiersev/bench.hpp"
#include "hiersev/synthdata.hpp"
#include "support.hpp"

using namespace hiersev;
using testsupport::error_code_of;

namespace {

Hierarchy tree_of(std::vector<int> b) { return gen_tree(b); }

// One input feature on a (2,2) tree. Leaf 0 wins below x = 0.5, leaf 2 above;
// leaves 1 and 3 never win.
Classifier threshold_model() {
    Classifier c;
    c.extractor.input_dim = 1;
    c.head.n_classes = 4;
    c.head.feature_dim = 1;
    c.head.weight = {0.0, 0.0, 10.0, 0.0};
    c.head.bias = {0.0, -100.0, -5.0, -100.0};
    return c;
}

Dataset rows(std::initializer_list<std::pair<double, int>> items) {
    Dataset d;
    d.dim = 1;
    for (auto [x, y] : items) d.push_back(std::vector<double>{x}, y);
    return d;
}

void check_same_metrics(const EvalRecord& a, const EvalRecord& b) {
    auto copy = b;
    copy.attack = a.attack;
    CHECK(a == copy);
    CHECK(eval_record_to_json_text(a, false) == eval_record_to_json_text(b, false));
}

struct Fixture {
    Hierarchy tree = tree_of({2, 3});
    Dataset data;
    Classifier model;
    Fixture() {
        SynthConfig cfg;
        cfg.branching = {2, 3};
        cfg.dim = 4;
        cfg.sigma_levels = {0.3, 0.1};
        cfg.noise_sigma = 0.05;
        cfg.samples_per_leaf = 15;
        cfg.seed = 1;
        data = gen_data(cfg);
        // Nearest-center linear classifier: z_k = 2 c_k.x - |c_k|^2.
        const auto centers = leaf_centers(cfg);
        model.extractor.input_dim = 4;
        model.head.n_classes = 6;
        model.head.feature_dim = 4;
        for (int k = 0; k < 6; ++k) {
            double sq = 0;
            for (int d = 0; d < 4; ++d) {
                model.head.weight.push_back(2 * 20 * centers[k * 4 + d]);
                sq += centers[k * 4 + d] * centers[k * 4 + d];
            }
            model.head.bias.push_back(-20 * sq);
        }
    }
};

}  // namespace

TEST_CASE("average mistake") {
    const std::vector<int> m{2, 0, 3};
    CHECK(average_mistake(m) == 2.5);
    CHECK(average_mistake(std::vector<int>{0, 0}) == 0.0);
}

TEST_CASE("clean evaluation") {
    const auto t = tree_of({4});
    Classifier c;
    c.extractor.input_dim = 4;
    c.head = {4, 4, {10, 0, 0, 0, 0, 10, 0, 0, 0, 0, 10, 0, 0, 0, 0, 10}, {0, 0, 0, 0}};
    Dataset d;
    d.dim = 4;
    for (int i = 0; i < 8; ++i) {
        std::vector<double> x(4, 0.0);
        x[i % 4] = 1.0;
        d.push_back(x, i % 4);
    }
    const auto perfect = evaluate_clean(c, d, t);
    CHECK(perfect.accuracy == 1.0);
    CHECK(perfect.average_mistake == 0.0);

    const auto constant = resize_head(c, 4, ExplicitInit{std::vector<double>(16, 0.0), {1, 0, 0, 0}});
    const auto r = evaluate_clean(constant, d, t);
    CHECK(r.accuracy == 0.25);
    CHECK(r.average_mistake == 1.0);

    d.labels[0] = 7;
    CHECK(error_code_of([&] { (void)evaluate_clean(c, d, t); }) == Errc::LabelOutOfRange);
}

TEST_CASE("attack records on a threshold model") {
    const auto t = tree_of({2, 2});
    const auto c = threshold_model();
    const AttackSpec pgd50{AttackKind::PGD, 0, 0.05, 0.01, 50};

    SUBCASE("every attack flips to the far subtree") {
        const auto d = rows({{0.49, 0}, {0.48, 0}, {0.47, 0}});
        const auto r = evaluate_attack(c, d, t, pgd50, {});
        CHECK(r.clean_accuracy == 1.0);
        CHECK(r.robust_accuracy == 0.0);
        CHECK(r.n_flipped == 3);
        CHECK(r.flipped_average_mistake == 2.0);
        CHECK(r.accuracy_drop == 1.0);
    }
    SUBCASE("seven clean-correct, three flipped") {
        const auto d = rows({{0.49, 0},
                             {0.48, 0},
                             {0.47, 0},
                             {0.2, 0},
                             {0.1, 0},
                             {0.3, 0},
                             {0.25, 0},
                             {0.8, 0},
                             {0.9, 0},
                             {0.7, 0}});
        const auto r = evaluate_attack(c, d, t, pgd50, {});
        CHECK(r.n_evaluated == 10);
        CHECK(r.n_clean_correct == 7);
        CHECK(r.n_flipped == 3);
        CHECK(r.robust_accuracy == doctest::Approx(0.4).epsilon(1e-15));
        CHECK(r.clean_accuracy == doctest::Approx(0.7).epsilon(1e-15));
        CHECK(r.accuracy_drop == r.clean_accuracy - r.robust_accuracy);
        CHECK(r.average_mistake == 2.0);
    }
    SUBCASE("zero budget") {
        const auto d = rows({{0.49, 0}, {0.2, 0}, {0.8, 0}});
        const auto r = evaluate_attack(c, d, t, {AttackKind::PGD, 0, 0.0, 0.01, 10}, {});
        CHECK(r.robust_accuracy == r.clean_accuracy);
        CHECK(r.n_flipped == 0);
        CHECK(r.flipped_average_mistake == 0.0);
    }
}

TEST_CASE("suites") {
    const Fixture f;
    const auto clean = evaluate_clean(f.model, f.data, f.tree);
    REQUIRE(clean.accuracy > 0.5);
    const double eps = 0.15;

    SUBCASE("GHA at height 1 reproduces PGD") {
        const std::vector<AttackSpec> suite{{AttackKind::PGD, 0, eps, 0.01, 20}, {AttackKind::GHA, 1, eps, 0.01, 20}};
        const auto rep = run_suite(f.model, f.data, f.tree, suite, {.master_seed = 5});
        check_same_metrics(rep.records[0], rep.records[1]);
        CHECK(rep.records[0].n_flipped > 0);
    }
    SUBCASE("LHA at the top height reproduces PGD") {
        const auto pgd = evaluate_attack(f.model, f.data, f.tree, {AttackKind::PGD, 0, eps, 0.01, 20}, {.master_seed = 2});
        const auto lha = evaluate_attack(f.model, f.data, f.tree, {AttackKind::LHA, 2, eps, 0.01, 20}, {.master_seed = 2});
        check_same_metrics(pgd, lha);
    }
    SUBCASE("summary is the per-instance worst case") {
        const auto suite = default_suite(3, eps, 20);
        const auto rep = run_suite(f.model, f.data, f.tree, suite, {.master_seed = 1});
        REQUIRE(rep.records.size() == 4);
        for (const auto& r : rep.records) {
            CHECK(rep.summary.robust_accuracy <= r.robust_accuracy);
            CHECK(r.accuracy_drop == r.clean_accuracy - r.robust_accuracy);
            CHECK(r.robust_accuracy <= r.clean_accuracy);
            if (r.n_flipped > 0) {
                CHECK(r.flipped_average_mistake >= 1.0);
                CHECK(r.flipped_average_mistake <= 2.0);
            }
        }
        const auto one = run_suite(f.model, f.data, f.tree, std::span(suite).first(1), {.master_seed = 1});
        const auto& r = one.records[0];
        CHECK(one.summary.robust_accuracy == r.robust_accuracy);
        CHECK(one.summary.clean_accuracy == r.clean_accuracy);
        CHECK(one.summary.average_mistake == r.average_mistake);
        CHECK(one.summary.flipped_average_mistake == r.flipped_average_mistake);
        CHECK(one.summary.n_flipped == r.n_flipped);
    }
    SUBCASE("worker count does not change the report") {
        const auto suite = default_suite(3, eps, 10);
        const auto a = run_suite(f.model, f.data, f.tree, suite, {.master_seed = 3, .workers = 1});
        const auto b = run_suite(f.model, f.data, f.tree, suite, {.master_seed = 3, .workers = 3});
        CHECK(suite_report_to_json_text(a) == suite_report_to_json_text(b));
        CHECK(suite_report_to_csv(a) == suite_report_to_csv(b));
    }
    SUBCASE("errors") {
        CHECK(error_code_of([&] { (void)run_suite(f.model, f.data, f.tree, {}, {}); }) == Errc::EmptySuite);
        const std::vector<AttackSpec> bad{{AttackKind::NHA, 2}};
        CHECK(error_code_of([&] { (void)run_suite(f.model, f.data, f.tree, bad, {}); }) == Errc::HeightOutOfRange);
    }
}

TEST_CASE("degenerate masks are counted robust") {
    const auto t = tree_of({3, 1});
    Classifier c;
    c.extractor.input_dim = 1;
    c.head = {3, 1, {0, 0, 0}, {1, 0, 0}};
    const auto d = rows({{0.5, 0}, {0.5, 0}});
    const auto r = evaluate_attack(c, d, t, {AttackKind::LHA, 1, 0.1, 0.01, 5}, {.log_degenerate = false});
    CHECK(r.n_degenerate == 2);
    CHECK(r.robust_accuracy == 1.0);
}

TEST_CASE("default suites") {
    CHECK(default_suite(8, 4 / 255.0, 50).size() == 19);
    CHECK(default_suite(3, 4 / 255.0, 50).size() == 4);
    CHECK(default_suite(4, 4 / 255.0, 50).size() == 7);
    const auto two = default_suite(2, 4 / 255.0, 50);
    REQUIRE(two.size() == 1);
    CHECK(two[0].kind == AttackKind::PGD);
    for (const auto& s : default_suite(5, 8 / 255.0, 30)) {
        CHECK(s.alpha == 1 / 255.0);
        CHECK(s.steps == 30);
        CHECK(s.eps == 8 / 255.0);
    }
}

TEST_CASE("report formats") {
    const Fixture f;
    const auto rep = run_suite(f.model, f.data, f.tree, default_suite(3, 0.1, 5), {.master_seed = 1});
    const auto json = suite_report_to_json_text(rep);
    CHECK(json.find("\"convention\": \"worst-iterate\"") != std::string::npos);
    CHECK(json.find("\"summary\"") != std::string::npos);
    CHECK(json.find("\"final_iterate\"") != std::string::npos);
    const auto csv = suite_report_to_csv(rep);
    CHECK(csv.rfind("kind,h,eps,alpha,steps,clean_acc,robust_acc,am,flipped_am,acc_drop,n_flipped,n_degenerate\n", 0) ==
          0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);

    const auto specs = suite_from_json_text(
        R"([{"kind":"PGD","h":0,"eps":0.1,"alpha":0.01,"steps":5},{"kind":"NHA","h":1,"eps":0.1,"alpha":0.01,"steps":5,"nha_variant":"exact"}])");
    REQUIRE(specs.size() == 2);
    CHECK(specs[1].nha_variant == NhaVariant::Exact);
    CHECK(error_code_of([] { (void)suite_from_json_text("{}"); }) == Errc::ParseError);
}
