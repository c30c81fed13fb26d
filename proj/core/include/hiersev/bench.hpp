#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hiersev/attacks.hpp"
#include "hiersev/hierarchy.hpp"
#include "hiersev/netcore.hpp"
#include "hiersev/synthdata.hpp"

namespace hiersev {

/// Convention tag written into reports: an instance counts as flipped when
/// any PGD iterate misclassifies, and its severity is the worst such iterate.
inline constexpr const char* kWorstIterate = "worst-iterate";

struct CleanEval {
    double accuracy = 0.0;
    std::vector<int> predictions;
    std::vector<int> mistakes;  // hdist(prediction, label)
    double average_mistake = 0.0;  // over misclassified instances, 0 if none
};

[[nodiscard]] CleanEval evaluate_clean(const Classifier& model, const Dataset& data, const Hierarchy& tree,
                                       int workers = 1);

/// Mean of the non-zero entries; 0 when every entry is zero.
[[nodiscard]] double average_mistake(std::span<const int> mistakes);

struct EvalRecord {
    AttackSpec attack;
    double clean_accuracy = 0.0;
    double robust_accuracy = 0.0;
    double average_mistake = 0.0;
    double flipped_average_mistake = 0.0;
    double accuracy_drop = 0.0;
    int n_evaluated = 0;
    int n_clean_correct = 0;
    int n_flipped = 0;
    int n_degenerate = 0;
    // Same figures read from the last iterate only.
    double final_robust_accuracy = 0.0;
    double final_average_mistake = 0.0;
    double final_flipped_average_mistake = 0.0;
    int final_n_flipped = 0;

    friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

/// Per-instance results of one attack run over a dataset.
struct AttackRun {
    EvalRecord record;
    std::vector<int> flipped_mistake;  // 0 unless the instance was flipped
};

struct EvalOptions {
    std::uint64_t master_seed = 0;
    int workers = 1;
    bool log_degenerate = true;  // one stderr line per attack run with degenerate masks
};

[[nodiscard]] AttackRun run_attack(const Classifier& model, const Dataset& data, const Hierarchy& tree,
                                   const AttackSpec& spec, const CleanEval& clean, const EvalOptions& opts);

[[nodiscard]] EvalRecord evaluate_attack(const Classifier& model, const Dataset& data, const Hierarchy& tree,
                                         const AttackSpec& spec, const EvalOptions& opts);

/// Per-instance worst case over every attack of a suite.
struct SuiteSummary {
    double clean_accuracy = 0.0;
    double robust_accuracy = 0.0;
    double average_mistake = 0.0;
    double flipped_average_mistake = 0.0;
    double accuracy_drop = 0.0;
    int n_evaluated = 0;
    int n_flipped = 0;
};

struct SuiteReport {
    std::vector<EvalRecord> records;
    SuiteSummary summary;
};

[[nodiscard]] SuiteReport run_suite(const Classifier& model, const Dataset& data, const Hierarchy& tree,
                                    std::span<const AttackSpec> suite, const EvalOptions& opts);

/// PGD plus LHA, GHA and NHA at each height 1..H-2, alpha = 1/255.
[[nodiscard]] std::vector<AttackSpec> default_suite(int num_levels, double eps, int steps);

/// With include_attack = false the attack identity is left out, so records of
/// attacks that coincide (e.g. GHA@1 and PGD) compare byte for byte.
[[nodiscard]] std::string eval_record_to_json_text(const EvalRecord& record, bool include_attack = true);
[[nodiscard]] std::string suite_report_to_json_text(const SuiteReport& report);
/// kind,h,eps,alpha,steps,clean_acc,robust_acc,am,flipped_am,acc_drop,n_flipped,n_degenerate
[[nodiscard]] std::string suite_report_to_csv(const SuiteReport& report);
[[nodiscard]] std::vector<AttackSpec> suite_from_json_text(const std::string& text);

}  // namespace hiersev
