#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mtpatcher/dataset.hpp"
#include "mtpatcher/pipeline.hpp"

namespace {

using mtpatcher::ErrorCode;
using mtpatcher::error_code_name;
namespace pipeline = mtpatcher::pipeline;
namespace dataset = mtpatcher::dataset;

int fail(const mtpatcher::Error& e) {
    pipeline::log_kv({{"fatal", std::string(error_code_name(e.code))}, {"error", e.message}});
    return e.code == ErrorCode::MissingInput ? 2 : 1;
}

nlohmann::json result_json(const pipeline::StageResult& r) {
    nlohmann::json j{{"stage", r.stage},     {"in", r.in},
                     {"out", r.out},         {"failures", r.failures},
                     {"shortfall", r.shortfall}, {"complete", r.complete}};
    if (r.extra.is_object())
        for (const auto& [key, value] : r.extra.items()) j[key] = value;
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Teacher-driven patching pipeline for machine translation systems"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "mtpatcher 0.1.0");

    std::string config_path;
    std::optional<std::int64_t> seed;
    std::optional<int> parallelism;
    std::optional<std::string> mode;
    std::optional<std::string> workdir;
    std::optional<std::int64_t> limit;
    bool dry_run = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "pipeline config JSON")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "override the config seed");
        sub->add_option("--parallelism", parallelism, "worker threads for backend calls");
        sub->add_option("--mode", mode, "dataset mode: pe, pe_pds, or pe_pds_wa");
        sub->add_option("--workdir", workdir, "override the config workdir");
        sub->add_option("--limit", limit,
                        "process at most N records this run, then stop for later resume");
        sub->add_flag("--dry-run", dry_run,
                      "render prompts to <stage>.prompts.jsonl without calling backends");
    };

    auto* run_cmd = app.add_subcommand("run", "full pipeline: sample through build-dataset");
    add_common(run_cmd);
    for (const char* name : {"sample", "translate", "feedback", "select", "extend"}) {
        add_common(app.add_subcommand(
            name, std::string("run the ") + name + " stage and stop"));
    }
    add_common(app.add_subcommand("build-dataset",
                                  "assemble the finetuning dataset from stage outputs"));

    pipeline::SplitsArgs splits_args;
    auto* splits_cmd =
        app.add_subcommand("splits", "deterministic seen/unseen split of a word list");
    add_common(splits_cmd);
    splits_cmd->add_option("--words", splits_args.words_tsv, "word list TSV")->required();
    splits_cmd->add_option("--seen-n", splits_args.seen_n, "seen split size");
    splits_cmd->add_option("--unseen-n", splits_args.unseen_n, "unseen split size");

    add_common(app.add_subcommand(
        "forge-sets", "generate monolingual and held-out test sets from the splits"));

    pipeline::EvaluateArgs evaluate_args;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "BLEU and term accuracy reports");
    add_common(evaluate_cmd);
    evaluate_cmd->add_option("--bleu-hyp", evaluate_args.bleu_hyp,
                             "hypotheses, one per line");
    evaluate_cmd->add_option("--bleu-ref", evaluate_args.bleu_ref,
                             "references, one per line");
    evaluate_cmd->add_option("--term-items", evaluate_args.term_items,
                             "TSV: source_phrase, target_phrase, hypothesis");

    pipeline::JudgeArgs judge_args;
    auto* judge_cmd = app.add_subcommand("judge", "score idiom translations 0..5");
    add_common(judge_cmd);
    judge_cmd->add_option("--items", judge_args.items_path,
                          "JSONL: idiom, definition, source, hypothesis")
        ->required();

    pipeline::CompareArgs compare_args;
    auto* compare_cmd = app.add_subcommand("compare", "pairwise translation comparison");
    add_common(compare_cmd);
    compare_cmd->add_option("--items", compare_args.items_path,
                            "JSONL: source, word, translation_a, translation_b")
        ->required();
    compare_cmd->add_flag("--debias", compare_args.debias,
                          "judge each item twice with operands swapped and reconcile");

    CLI11_PARSE(app, argc, argv);

    auto config = pipeline::PipelineConfig::load(config_path);
    if (!config) return fail(config.error());
    if (seed) config->seed = *seed;
    if (parallelism) config->parallelism = *parallelism;
    if (mode) {
        auto parsed = dataset::dataset_mode_from_name(*mode);
        if (!parsed) return fail(parsed.error());
        config->mode = *parsed;
    }
    if (workdir) config->workdir = *workdir;
    if (limit) config->limit = *limit;
    if (dry_run) config->dry_run = true;
    if (config->cache_dir.empty() && !config->workdir.empty())
        config->cache_dir = config->workdir + "/cache";

    pipeline::Runner runner(std::move(*config));
    runner.set_splits_args(splits_args);
    runner.set_evaluate_args(evaluate_args);
    runner.set_judge_args(judge_args);
    runner.set_compare_args(compare_args);

    CLI::App* sub = app.get_subcommands().front();
    if (sub->get_name() == "run") {
        auto manifest = runner.run_pipeline();
        if (!manifest) return fail(manifest.error());
        if (*manifest) std::cout << (*manifest)->to_json().dump(2) << '\n';
        return 0;
    }
    auto result = runner.run_stage(sub->get_name());
    if (!result) return fail(result.error());
    std::cout << result_json(*result).dump(2) << '\n';
    return 0;
}
