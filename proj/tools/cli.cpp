#include "cli.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hiersev/attacks.hpp"
#include "hiersev/bench.hpp"
#include "hiersev/curriculum.hpp"
#include "hiersev/error.hpp"
#include "hiersev/hierarchy.hpp"
#include "hiersev/netcore.hpp"
#include "hiersev/synthdata.hpp"

namespace fs = std::filesystem;

namespace hiersev::cli {

namespace {

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(text);
    while (std::getline(in, cur, ',')) out.push_back(cur);
    return out;
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    for (const auto& item : split_list(text)) {
        int v = 0;
        auto res = std::from_chars(item.data(), item.data() + item.size(), v);
        if (res.ec != std::errc{} || res.ptr != item.data() + item.size()) {
            throw Error(Errc::ParseError, "'" + item + "' is not an integer");
        }
        out.push_back(v);
    }
    return out;
}

std::vector<double> parse_fraction_list(const std::string& text) {
    std::vector<double> out;
    for (const auto& item : split_list(text)) out.push_back(parse_fraction(item));
    return out;
}

void write_output(const std::string& path, const std::string& content, std::ostream& out) {
    if (path.empty() || path == "-") {
        out << content;
        return;
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(Errc::IoError, "cannot write " + path);
    f << content;
    if (!f) throw Error(Errc::IoError, "short write to " + path);
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Relative tree paths recorded in manifests/checkpoints are tried as given,
/// then relative to the file that recorded them.
fs::path resolve_tree(const std::string& explicit_path, const std::string& recorded, const fs::path& recorded_in) {
    if (!explicit_path.empty()) return explicit_path;
    if (recorded.empty()) throw Error(Errc::IoError, "no tree given and none recorded in " + recorded_in.string());
    fs::path p(recorded);
    if (p.is_relative() && !fs::exists(p)) {
        auto alt = recorded_in.parent_path() / p;
        if (fs::exists(alt)) return alt;
    }
    return p;
}

const Dataset& pick_split(const DatasetSplits& splits, const std::string& name) {
    if (name == "train") return splits.train;
    if (name == "val") return splits.val;
    if (name == "test") return splits.test;
    throw Error(Errc::ConfigInvalid, "unknown split '" + name + "'");
}

struct ModelBundle {
    Checkpoint ckpt;
    Hierarchy tree;
};

ModelBundle load_model(const std::string& model_path, const std::string& tree_flag) {
    auto ckpt = load_checkpoint(model_path);
    auto tree = load_tree(resolve_tree(tree_flag, ckpt.tree_path, model_path));
    if (ckpt.height != 0 || ckpt.model.n_classes() != tree.num_leaves()) {
        throw Error(Errc::DimensionMismatch, "model classifies stratum " + std::to_string(ckpt.height) +
                                                 "; attacks need a leaf-level head");
    }
    return {std::move(ckpt), std::move(tree)};
}

}  // namespace

double parse_fraction(const std::string& text) {
    const auto slash = text.find('/');
    auto parse = [&](std::string_view s) {
        double v = 0.0;
        auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
            throw Error(Errc::ParseError, "'" + text + "' is not a decimal or k/n fraction");
        }
        return v;
    };
    if (slash == std::string::npos) return parse(text);
    const double num = parse(std::string_view(text).substr(0, slash));
    const double den = parse(std::string_view(text).substr(slash + 1));
    if (den == 0.0) throw Error(Errc::ParseError, "'" + text + "' divides by zero");
    return num / den;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Hierarchy-aware adversarial attacks, curriculum training and severity benchmarks", "hiersev"};
    app.require_subcommand(1);
    app.set_help_flag("--help", "Print this help message and exit");

    // gen-tree
    auto* gen_tree_cmd = app.add_subcommand("gen-tree", "Write a balanced tree file");
    std::string branching_flag, tree_out;
    gen_tree_cmd->add_option("--branching", branching_flag, "Children per node, coarse to fine, e.g. 2,2,2")->required();
    gen_tree_cmd->add_option("--out", tree_out, "Output tree JSON")->required();

    // gen-data
    auto* gen_data_cmd = app.add_subcommand("gen-data", "Generate a synthetic hierarchical Gaussian dataset");
    std::string data_tree, sigma_flag, longtail_flag, out_dir;
    int dim = 16, samples = 200;
    std::string noise_flag = "0.02";
    std::uint64_t data_seed = 0;
    gen_data_cmd->add_option("--tree", data_tree, "Tree JSON")->required();
    gen_data_cmd->add_option("--dim", dim, "Feature dimension");
    gen_data_cmd->add_option("--sigma-levels", sigma_flag, "Center offset scale per stratum, coarse to fine")
        ->required();
    gen_data_cmd->add_option("--noise", noise_flag, "Within-leaf noise sigma");
    auto* samples_opt = gen_data_cmd->add_option("--samples", samples, "Samples per leaf");
    auto* longtail_opt =
        gen_data_cmd->add_option("--longtail", longtail_flag, "Pareto long tail: alpha[,min_samples[,total]]");
    samples_opt->excludes(longtail_opt);
    gen_data_cmd->add_option("--seed", data_seed, "Generator seed");
    gen_data_cmd->add_option("--out-dir", out_dir, "Dataset directory")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a classifier");
    std::string train_data, train_tree, trainer = "fat", curriculum = "chat", schedule = "exp", train_out, config_path,
                                        log_path;
    std::string train_eps = "8/255", train_alpha, lr_flag = "1e-3", hidden_flag = "32";
    int iters = 3000, replays = 4, batch = 128, inner_steps = 5, feature_dim = 32;
    std::string beta_flag = "6";
    std::uint64_t train_seed = 0;
    train_cmd->add_option("--config", config_path, "Training config JSON; flags given explicitly override it");
    train_cmd->add_option("--data", train_data, "Dataset directory");
    train_cmd->add_option("--tree", train_tree, "Tree JSON (default: the dataset's)");
    train_cmd->add_option("--trainer", trainer, "clean | fat | trades")->check(CLI::IsMember({"clean", "fat", "trades"}));
    train_cmd->add_option("--curriculum", curriculum, "none | chat | scratch")
        ->check(CLI::IsMember({"none", "chat", "scratch"}));
    train_cmd->add_option("--schedule", schedule, "exp | linear")->check(CLI::IsMember({"exp", "linear"}));
    train_cmd->add_option("--iters", iters, "Total optimizer steps");
    train_cmd->add_option("--eps", train_eps, "Training perturbation budget");
    train_cmd->add_option("--alpha", train_alpha, "Training perturbation step (default: eps for FAT, 2/255 for TRADES)");
    train_cmd->add_option("--replays", replays, "FAT minibatch replays");
    train_cmd->add_option("--beta", beta_flag, "TRADES KL weight");
    train_cmd->add_option("--inner-steps", inner_steps, "TRADES inner maximization steps");
    train_cmd->add_option("--batch", batch, "Minibatch size");
    train_cmd->add_option("--lr", lr_flag, "Adam learning rate");
    train_cmd->add_option("--hidden", hidden_flag, "Hidden ReLU widths, e.g. 32 or 64,32");
    train_cmd->add_option("--feature-dim", feature_dim, "Extractor output width");
    train_cmd->add_option("--seed", train_seed, "Training seed");
    train_cmd->add_option("--out", train_out, "Checkpoint output");
    train_cmd->add_option("--log", log_path, "Stage log (JSON lines); default standard output");

    // attack
    auto* attack_cmd = app.add_subcommand("attack", "Run one attack and write its record");
    attack_cmd->set_help_flag("--help", "Print this help message and exit");
    std::string atk_model, atk_data, atk_tree, atk_kind = "PGD", atk_eps = "4/255", atk_alpha = "1/255",
                                                atk_variant = "max", atk_out, atk_split = "test";
    int atk_h = 0, atk_steps = 50, atk_workers = 1;
    std::uint64_t atk_seed = 0;
    attack_cmd->add_option("--model", atk_model, "Checkpoint")->required();
    attack_cmd->add_option("--data", atk_data, "Dataset directory")->required();
    attack_cmd->add_option("--tree", atk_tree, "Tree JSON (default: the checkpoint's)");
    attack_cmd->add_option("--attack", atk_kind, "PGD | LHA | GHA | NHA")->check(CLI::IsMember({"PGD", "LHA", "GHA", "NHA"}));
    attack_cmd->add_option("--h", atk_h, "Target height");
    attack_cmd->add_option("--eps", atk_eps, "Budget, decimal or k/255");
    attack_cmd->add_option("--alpha", atk_alpha, "Step size, decimal or k/255");
    attack_cmd->add_option("--steps", atk_steps, "Iterations");
    attack_cmd->add_option("--nha-variant", atk_variant, "max | exact")->check(CLI::IsMember({"max", "exact"}));
    attack_cmd->add_option("--seed", atk_seed, "Master seed");
    attack_cmd->add_option("--split", atk_split, "train | val | test");
    attack_cmd->add_option("--workers", atk_workers, "Worker threads");
    attack_cmd->add_option("--out", atk_out, "Record output (default standard output)");

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "Run an attack suite and write a report");
    std::string b_model, b_data, b_tree, b_suite = "default", b_eps = "4/255", b_out, b_csv, b_split = "test";
    int b_steps = 50, b_workers = 1;
    std::uint64_t b_seed = 0;
    bench_cmd->add_option("--model", b_model, "Checkpoint")->required();
    bench_cmd->add_option("--data", b_data, "Dataset directory")->required();
    bench_cmd->add_option("--tree", b_tree, "Tree JSON (default: the checkpoint's)");
    bench_cmd->add_option("--suite", b_suite, "'default' or a suite JSON file");
    bench_cmd->add_option("--eps", b_eps, "Budget for the default suite");
    bench_cmd->add_option("--steps", b_steps, "Iterations for the default suite");
    bench_cmd->add_option("--seed", b_seed, "Master seed");
    bench_cmd->add_option("--split", b_split, "train | val | test");
    bench_cmd->add_option("--workers", b_workers, "Worker threads");
    bench_cmd->add_option("--out", b_out, "Report JSON (default standard output)");
    bench_cmd->add_option("--csv", b_csv, "Also write a CSV flattening");

    // validate-tree
    auto* validate_cmd = app.add_subcommand("validate-tree", "Check a tree file");
    std::string v_tree;
    validate_cmd->add_option("--tree", v_tree, "Tree JSON")->required();

    // inspect-model
    auto* inspect_cmd = app.add_subcommand("inspect-model", "Describe a checkpoint");
    std::string i_model;
    inspect_cmd->add_option("--model", i_model, "Checkpoint")->required();

    std::vector<const char*> argv{"hiersev"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        err << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        err << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitValidation;
    }

    try {
        if (gen_tree_cmd->parsed()) {
            const auto branching = parse_int_list(branching_flag);
            const auto tree = gen_tree(branching);
            save_tree(tree, tree_out);
            err << "wrote " << tree_out << " with " << tree.num_leaves() << " leaves\n";
        } else if (gen_data_cmd->parsed()) {
            const auto tree = load_tree(data_tree);
            SynthConfig cfg;
            cfg.dim = dim;
            cfg.sigma_levels = parse_fraction_list(sigma_flag);
            cfg.noise_sigma = parse_fraction(noise_flag);
            cfg.samples_per_leaf = samples;
            cfg.seed = data_seed;
            if (!longtail_flag.empty()) {
                const auto parts = parse_fraction_list(longtail_flag);
                LongTail lt;
                if (parts.empty() || parts.size() > 3) throw Error(Errc::ParseError, "--longtail alpha[,min[,total]]");
                lt.pareto_alpha = parts[0];
                if (parts.size() > 1) lt.min_samples = static_cast<int>(parts[1]);
                if (parts.size() > 2) lt.total = static_cast<int>(parts[2]);
                cfg.long_tail = lt;
            }
            for (const auto& w : synth_warnings(cfg)) err << "warning: " << w << "\n";
            const auto data = gen_data(cfg, tree);
            const auto splits = split_dataset(data, cfg.seed);
            save_dataset_dir(out_dir, splits, data_tree, cfg);
            err << "wrote " << data.size() << " samples to " << out_dir << "\n";
        } else if (train_cmd->parsed()) {
            TrainJob job;
            if (!config_path.empty()) job = train_job_from_json_text(read_text(config_path));
            auto given = [&](const char* name) { return train_cmd->count(name) > 0; };
            if (config_path.empty() || given("--trainer") || given("--eps") || given("--alpha") ||
                given("--replays") || given("--beta") || given("--batch") || given("--inner-steps")) {
                const std::string kind = config_path.empty() || given("--trainer") ? trainer
                                                                                 : std::string(trainer_name(job.trainer));
                const double eps = parse_fraction(train_eps);
                if (kind == "clean") {
                    job.trainer = CleanConfig{batch};
                } else if (kind == "fat") {
                    job.trainer = FatConfig{replays, eps, train_alpha.empty() ? eps : parse_fraction(train_alpha), batch};
                } else {
                    job.trainer = TradesConfig{parse_fraction(beta_flag), inner_steps,
                                               train_alpha.empty() ? 2.0 / 255.0 : parse_fraction(train_alpha), eps,
                                               batch};
                }
            }
            if (config_path.empty() || given("--curriculum")) job.curriculum = parse_curriculum(curriculum);
            if (config_path.empty() || given("--schedule")) job.schedule = parse_schedule_mode(schedule);
            if (config_path.empty() || given("--iters")) job.total_iterations = iters;
            if (config_path.empty() || given("--lr")) job.adam.lr = parse_fraction(lr_flag);
            if (config_path.empty() || given("--hidden")) job.hidden = parse_int_list(hidden_flag);
            if (config_path.empty() || given("--feature-dim")) job.feature_dim = feature_dim;
            if (config_path.empty() || given("--seed")) job.seed = train_seed;
            if (given("--data")) job.data_path = train_data;
            if (given("--tree")) job.tree_path = train_tree;
            if (given("--out")) job.out_path = train_out;
            if (job.data_path.empty()) throw Error(Errc::ConfigInvalid, "--data is required");
            if (job.out_path.empty()) throw Error(Errc::ConfigInvalid, "--out is required");

            const auto loaded = load_dataset_dir(job.data_path);
            const auto tree_path = resolve_tree(job.tree_path, loaded.tree_path, fs::path(job.data_path) / "manifest.json");
            const auto tree = load_tree(tree_path);
            const auto result = run_train_job(job, loaded.splits.train, tree);
            save_checkpoint({result.model, tree_path.string(), 0}, job.out_path);
            write_output(log_path, stage_log_to_jsonl(result.stages), out);
            err << "trained " << result.optimizer_steps << " steps over " << result.stages.size()
                << " stage(s); wrote " << job.out_path << "\n";
        } else if (attack_cmd->parsed()) {
            const auto bundle = load_model(atk_model, atk_tree);
            const auto loaded = load_dataset_dir(atk_data);
            AttackSpec spec{parse_attack_kind(atk_kind), atk_h, parse_fraction(atk_eps), parse_fraction(atk_alpha),
                            atk_steps, parse_nha_variant(atk_variant)};
            EvalOptions opts{atk_seed, atk_workers, true};
            const auto record =
                evaluate_attack(bundle.ckpt.model, pick_split(loaded.splits, atk_split), bundle.tree, spec, opts);
            err << spec.label() << " eps=" << spec.eps << " alpha=" << spec.alpha << ": robust accuracy "
                << record.robust_accuracy << ", average mistake " << record.average_mistake << "\n";
            write_output(atk_out, eval_record_to_json_text(record, false), out);
        } else if (bench_cmd->parsed()) {
            const auto bundle = load_model(b_model, b_tree);
            const auto loaded = load_dataset_dir(b_data);
            const auto suite = b_suite == "default" ? default_suite(bundle.tree.num_levels(), parse_fraction(b_eps), b_steps)
                                                    : suite_from_json_text(read_text(b_suite));
            EvalOptions opts{b_seed, b_workers, true};
            const auto report = run_suite(bundle.ckpt.model, pick_split(loaded.splits, b_split), bundle.tree, suite, opts);
            for (const auto& r : report.records) {
                err << r.attack.label() << ": robust " << r.robust_accuracy << ", AM " << r.average_mistake
                    << ", flipped AM " << r.flipped_average_mistake << "\n";
            }
            write_output(b_out, suite_report_to_json_text(report), out);
            if (!b_csv.empty()) write_output(b_csv, suite_report_to_csv(report), out);
        } else if (validate_cmd->parsed()) {
            const auto tree = load_tree(v_tree);
            err << "OK level sizes [";
            for (std::size_t h = 0; h < tree.level_sizes().size(); ++h) err << (h ? "," : "") << tree.level_sizes()[h];
            err << "]\n";
        } else if (inspect_cmd->parsed()) {
            const auto ckpt = load_checkpoint(i_model);
            nlohmann::ordered_json j;
            j["input_dim"] = ckpt.model.input_dim();
            auto widths = nlohmann::ordered_json::array();
            std::size_t n_params = 0;
            for (const auto& l : ckpt.model.extractor.layers) {
                widths.push_back({{"out", l.out}, {"activation", l.activation == Activation::Relu ? "relu" : "identity"}});
                n_params += l.weight.size() + l.bias.size();
            }
            n_params += ckpt.model.head.weight.size() + ckpt.model.head.bias.size();
            j["layers"] = std::move(widths);
            j["n_classes"] = ckpt.model.n_classes();
            j["height"] = ckpt.height;
            j["parameters"] = n_params;
            j["tree_path"] = ckpt.tree_path;
            out << j.dump(2) << "\n";
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return e.code() == Errc::IoError ? kExitIo : kExitValidation;
    }
    return kExitOk;
}

}  // namespace hiersev::cli
