#include "hiersev/bench.hpp"

#include <algorithm>
#include <iostream>
#include <thread>

#include <json.hpp>

#include "hiersev/error.hpp"
#include "io_util.hpp"

namespace hiersev {

namespace {

// Runs body(i) for i in [0, n) on up to `workers` threads. Each index is
// handled by exactly one thread; callers write results by index.
template <class F>
void parallel_for(std::size_t n, int workers, F&& body) {
    const auto w = static_cast<std::size_t>(std::max(1, workers));
    if (w == 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(w);
    for (std::size_t t = 0; t < w; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n; i += w) body(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

void check_labels(const Dataset& data, const Hierarchy& tree) {
    for (int l : data.labels)
        if (l < 0 || l >= tree.num_leaves()) {
            throw Error(Errc::LabelOutOfRange, "label " + std::to_string(l) + " is not a leaf of the tree");
        }
}

double fraction(int num, int den) { return den == 0 ? 0.0 : static_cast<double>(num) / den; }

}  // namespace

double average_mistake(std::span<const int> mistakes) {
    long sum = 0;
    int count = 0;
    for (int m : mistakes)
        if (m > 0) {
            sum += m;
            ++count;
        }
    return count == 0 ? 0.0 : static_cast<double>(sum) / count;
}

CleanEval evaluate_clean(const Classifier& model, const Dataset& data, const Hierarchy& tree, int workers) {
    check_labels(data, tree);
    if (model.n_classes() != tree.num_leaves()) {
        throw Error(Errc::DimensionMismatch, "model head does not classify the tree's leaves");
    }
    CleanEval out;
    out.predictions.resize(data.size());
    out.mistakes.resize(data.size());
    parallel_for(data.size(), workers, [&](std::size_t i) {
        const int pred = argmax(forward(model, data.row(i)));
        out.predictions[i] = pred;
        out.mistakes[i] = tree.hdist(pred, data.labels[i]);
    });
    int correct = 0;
    for (int m : out.mistakes) correct += m == 0;
    out.accuracy = fraction(correct, static_cast<int>(data.size()));
    out.average_mistake = average_mistake(out.mistakes);
    return out;
}

AttackRun run_attack(const Classifier& model, const Dataset& data, const Hierarchy& tree, const AttackSpec& spec,
                     const CleanEval& clean, const EvalOptions& opts) {
    spec.validate(tree);
    const auto n = data.size();
    std::vector<AdversarialOutcome> outcomes(n);
    parallel_for(n, opts.workers, [&](std::size_t i) {
        if (clean.mistakes[i] != 0) return;
        auto o = pgd(model, tree, data.row(i), data.labels[i], spec, instance_seed(opts.master_seed, i));
        o.x_adv.clear();
        outcomes[i] = std::move(o);
    });

    AttackRun run;
    auto& r = run.record;
    r.attack = spec;
    r.n_evaluated = static_cast<int>(n);
    run.flipped_mistake.assign(n, 0);
    long am_sum = 0, flip_sum = 0, final_am_sum = 0, final_flip_sum = 0;
    int am_count = 0, final_am_count = 0, robust = 0, final_robust = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (clean.mistakes[i] != 0) {
            am_sum += clean.mistakes[i];
            final_am_sum += clean.mistakes[i];
            ++am_count;
            ++final_am_count;
            continue;
        }
        ++r.n_clean_correct;
        const auto& o = outcomes[i];
        if (o.degenerate) ++r.n_degenerate;
        if (o.success && !o.degenerate) {
            ++r.n_flipped;
            flip_sum += o.mistake;
            am_sum += o.mistake;
            ++am_count;
            run.flipped_mistake[i] = o.mistake;
        } else {
            ++robust;
        }
        if (o.final_success && !o.degenerate) {
            ++r.final_n_flipped;
            final_flip_sum += o.final_mistake;
            final_am_sum += o.final_mistake;
            ++final_am_count;
        } else {
            ++final_robust;
        }
    }
    const int total = static_cast<int>(n);
    r.clean_accuracy = fraction(r.n_clean_correct, total);
    r.robust_accuracy = fraction(robust, total);
    r.accuracy_drop = r.clean_accuracy - r.robust_accuracy;
    r.average_mistake = am_count == 0 ? 0.0 : static_cast<double>(am_sum) / am_count;
    r.flipped_average_mistake = r.n_flipped == 0 ? 0.0 : static_cast<double>(flip_sum) / r.n_flipped;
    r.final_robust_accuracy = fraction(final_robust, total);
    r.final_average_mistake = final_am_count == 0 ? 0.0 : static_cast<double>(final_am_sum) / final_am_count;
    r.final_flipped_average_mistake =
        r.final_n_flipped == 0 ? 0.0 : static_cast<double>(final_flip_sum) / r.final_n_flipped;

    if (opts.log_degenerate && r.n_degenerate > 0) {
        std::cerr << "warning: " << spec.label() << " has a singleton class mask for " << r.n_degenerate
                  << " instance(s); counted robust\n";
    }
    return run;
}

EvalRecord evaluate_attack(const Classifier& model, const Dataset& data, const Hierarchy& tree,
                           const AttackSpec& spec, const EvalOptions& opts) {
    const auto clean = evaluate_clean(model, data, tree, opts.workers);
    return run_attack(model, data, tree, spec, clean, opts).record;
}

SuiteReport run_suite(const Classifier& model, const Dataset& data, const Hierarchy& tree,
                      std::span<const AttackSpec> suite, const EvalOptions& opts) {
    if (suite.empty()) throw Error(Errc::EmptySuite, "attack suite is empty");
    for (const auto& spec : suite) spec.validate(tree);
    const auto clean = evaluate_clean(model, data, tree, opts.workers);
    const auto n = data.size();

    SuiteReport report;
    std::vector<int> worst(n, 0);
    for (const auto& spec : suite) {
        auto run = run_attack(model, data, tree, spec, clean, opts);
        for (std::size_t i = 0; i < n; ++i) worst[i] = std::max(worst[i], run.flipped_mistake[i]);
        report.records.push_back(run.record);
    }

    auto& s = report.summary;
    s.n_evaluated = static_cast<int>(n);
    int clean_correct = 0, robust = 0, am_count = 0;
    long am_sum = 0, flip_sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (clean.mistakes[i] != 0) {
            am_sum += clean.mistakes[i];
            ++am_count;
            continue;
        }
        ++clean_correct;
        if (worst[i] > 0) {
            ++s.n_flipped;
            flip_sum += worst[i];
            am_sum += worst[i];
            ++am_count;
        } else {
            ++robust;
        }
    }
    s.clean_accuracy = fraction(clean_correct, s.n_evaluated);
    s.robust_accuracy = fraction(robust, s.n_evaluated);
    s.accuracy_drop = s.clean_accuracy - s.robust_accuracy;
    s.average_mistake = am_count == 0 ? 0.0 : static_cast<double>(am_sum) / am_count;
    s.flipped_average_mistake = s.n_flipped == 0 ? 0.0 : static_cast<double>(flip_sum) / s.n_flipped;
    return report;
}

std::vector<AttackSpec> default_suite(int num_levels, double eps, int steps) {
    const double alpha = 1.0 / 255.0;
    std::vector<AttackSpec> suite{{AttackKind::PGD, 0, eps, alpha, steps, NhaVariant::Max}};
    if (num_levels <= 2) {
        std::cerr << "note: a " << num_levels << "-level tree has no hierarchical attack heights; suite is PGD only\n";
        return suite;
    }
    for (int h = 1; h <= num_levels - 2; ++h) {
        for (auto kind : {AttackKind::LHA, AttackKind::GHA, AttackKind::NHA}) {
            suite.push_back({kind, h, eps, alpha, steps, NhaVariant::Max});
        }
    }
    return suite;
}

namespace {

nlohmann::ordered_json spec_json(const AttackSpec& s) {
    return {{"kind", attack_kind_name(s.kind)}, {"h", s.height},     {"eps", s.eps},
            {"alpha", s.alpha},                 {"steps", s.steps}, {"nha_variant", nha_variant_name(s.nha_variant)}};
}

nlohmann::ordered_json record_json(const EvalRecord& r, bool include_attack = true) {
    nlohmann::ordered_json j;
    if (include_attack) {
        j["attack"] = spec_json(r.attack);
        j["label"] = r.attack.label();
    }
    nlohmann::ordered_json metrics{
            {"convention", kWorstIterate},
            {"clean_accuracy", r.clean_accuracy},
            {"robust_accuracy", r.robust_accuracy},
            {"average_mistake", r.average_mistake},
            {"flipped_average_mistake", r.flipped_average_mistake},
            {"accuracy_drop", r.accuracy_drop},
            {"n_evaluated", r.n_evaluated},
            {"n_clean_correct", r.n_clean_correct},
            {"n_flipped", r.n_flipped},
            {"n_degenerate", r.n_degenerate},
            {"final_iterate",
             {{"robust_accuracy", r.final_robust_accuracy},
              {"average_mistake", r.final_average_mistake},
              {"flipped_average_mistake", r.final_flipped_average_mistake},
              {"n_flipped", r.final_n_flipped}}}};
    j.update(metrics);
    return j;
}

}  // namespace

std::string eval_record_to_json_text(const EvalRecord& record, bool include_attack) {
    return record_json(record, include_attack).dump(2) + "\n";
}

std::string suite_report_to_json_text(const SuiteReport& report) {
    nlohmann::ordered_json doc;
    doc["convention"] = kWorstIterate;
    auto records = nlohmann::ordered_json::array();
    for (const auto& r : report.records) records.push_back(record_json(r));
    doc["records"] = std::move(records);
    const auto& s = report.summary;
    doc["summary"] = {{"clean_accuracy", s.clean_accuracy},
                      {"robust_accuracy", s.robust_accuracy},
                      {"average_mistake", s.average_mistake},
                      {"flipped_average_mistake", s.flipped_average_mistake},
                      {"accuracy_drop", s.accuracy_drop},
                      {"n_evaluated", s.n_evaluated},
                      {"n_flipped", s.n_flipped}};
    return doc.dump(2) + "\n";
}

std::string suite_report_to_csv(const SuiteReport& report) {
    std::string out = "kind,h,eps,alpha,steps,clean_acc,robust_acc,am,flipped_am,acc_drop,n_flipped,n_degenerate\n";
    for (const auto& r : report.records) {
        out += attack_kind_name(r.attack.kind);
        out += ',' + std::to_string(r.attack.height) + ',';
        detail::append_double(out, r.attack.eps);
        out += ',';
        detail::append_double(out, r.attack.alpha);
        out += ',' + std::to_string(r.attack.steps);
        for (double v : {r.clean_accuracy, r.robust_accuracy, r.average_mistake, r.flipped_average_mistake,
                         r.accuracy_drop}) {
            out += ',';
            detail::append_double(out, v);
        }
        out += ',' + std::to_string(r.n_flipped) + ',' + std::to_string(r.n_degenerate) + '\n';
    }
    return out;
}

std::vector<AttackSpec> suite_from_json_text(const std::string& text) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::ParseError, std::string("suite file: ") + e.what());
    }
    const auto& list = doc.is_object() && doc.contains("attacks") ? doc["attacks"] : doc;
    if (!list.is_array()) throw Error(Errc::ParseError, "suite file must be an array of attack specs");
    std::vector<AttackSpec> out;
    for (const auto& item : list) out.push_back(attack_spec_from_json_text(item.dump()));
    return out;
}

}  // namespace hiersev
