#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "region_r1/region_r1.hpp"

namespace rr = region_r1;

namespace {

struct CommonOpts {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "out";
    std::string format = "csv";
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "JSON experiment config");
    cmd->add_option("--seed", opts.seed, "master seed (overrides config)");
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_option("--format", opts.format, "report format")
        ->check(CLI::IsMember({"csv", "md", "jsonl"}));
}

rr::ExperimentConfig resolve_config(const CommonOpts& opts) {
    rr::ExperimentConfig cfg;
    if (!opts.config_path.empty()) cfg = rr::load_experiment_config(opts.config_path);
    if (opts.seed) rr::override_seed(cfg, *opts.seed);
    cfg.output_dir = opts.out_dir;
    return cfg;
}

std::vector<rr::QueryContext> eval_contexts_for(const rr::ExperimentConfig& cfg,
                                                const rr::AnchorSet& anchors) {
    if (cfg.dataset) {
        std::vector<rr::QueryContext> contexts;
        for (const auto& rec : rr::load_pools(*cfg.dataset))
            contexts.push_back(rr::make_context(rec));
        return contexts;
    }
    return rr::make_contexts(rr::make_eval_instances(cfg.env, cfg.eval_instances), anchors);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw rr::IoError("cannot write " + path);
    out << text;
}

void write_reports(const rr::NamedReports& reports, const std::string& dir,
                   const std::string& stem) {
    rr::emit_report(reports, "csv", dir + "/" + stem + ".csv");
    rr::emit_report(reports, "md", dir + "/" + stem + ".md");
    rr::emit_report(reports, "jsonl", dir + "/" + stem + ".jsonl");
}

int cmd_gen(const CommonOpts& opts, int count, const std::string& split) {
    const auto cfg = resolve_config(opts);
    rr::OutputDirLock lock(cfg.output_dir);
    const auto anchors = rr::build_anchors(cfg.env.height, cfg.env.width, cfg.anchors);
    const auto tag = split == "train" ? rr::kTrainInstanceTag : rr::kEvalInstanceTag;
    rr::CounterRng seeds = rr::CounterRng(cfg.env.seed).fork(tag);

    std::vector<rr::PoolRecord> records;
    records.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        records.push_back(
            rr::to_pool_record(rr::generate_instance(cfg.env, seeds.next_u64()), anchors));
    const std::string path = cfg.output_dir + "/dataset.jsonl";
    rr::save_pools(records, path);
    std::cout << "wrote " << records.size() << " records to " << path << "\n";
    return 0;
}

int cmd_train(const CommonOpts& opts) {
    const auto cfg = resolve_config(opts);
    rr::OutputDirLock lock(cfg.output_dir);
    const auto anchors = rr::build_anchors(cfg.env.height, cfg.env.width, cfg.anchors);

    rr::ContextStream stream;
    std::vector<rr::QueryContext> eval_set;
    if (cfg.dataset) {
        auto [kept, dropped] = rr::filter_training_pools(rr::load_pools(*cfg.dataset));
        std::cout << "training pools: " << kept.size() << " kept, " << dropped
                  << " dropped (no positive)\n";
        std::vector<rr::QueryContext> contexts;
        contexts.reserve(kept.size());
        for (const auto& rec : kept) contexts.push_back(rr::make_context(rec));
        stream = rr::dataset_stream(std::move(contexts));
    } else {
        stream = rr::synthetic_stream(cfg.env, anchors);
    }
    if (cfg.train.eval_every > 0) eval_set = eval_contexts_for(cfg, anchors);

    const rr::TrainResult result =
        rr::train(stream, cfg.train, eval_set.empty() ? nullptr : &eval_set);
    rr::save_params(result.params, cfg.output_dir + "/policy.txt");
    rr::save_curve(result.curve, cfg.output_dir + "/curve.csv");
    std::cout << "trained " << cfg.train.steps << " steps; policy -> " << cfg.output_dir
              << "/policy.txt\n";
    return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& policy_path, const std::string& mode) {
    const auto cfg = resolve_config(opts);
    rr::OutputDirLock lock(cfg.output_dir);
    const auto anchors = rr::build_anchors(cfg.env.height, cfg.env.width, cfg.anchors);
    const auto contexts = eval_contexts_for(cfg, anchors);

    const std::string path =
        policy_path.empty() ? cfg.output_dir + "/policy.txt" : policy_path;
    const rr::PolicyParams params = rr::load_params(path);
    const auto eval_mode =
        mode == "stochastic" ? rr::EvalMode::Stochastic : rr::EvalMode::Greedy;
    const rr::EvalResult result = rr::evaluate(params, contexts, eval_mode, cfg.env.seed,
                                               cfg.eval_ks, cfg.cond_ks);

    // FULL baseline over the same contexts for a side-by-side row.
    std::vector<rr::LabeledRanking> base_rankings;
    base_rankings.reserve(contexts.size());
    for (const auto& ctx : contexts) base_rankings.push_back(ctx.base.ranking);
    const rr::MetricsReport base_report =
        rr::aggregate(base_rankings, cfg.eval_ks, cfg.cond_ks);

    const rr::NamedReports reports = {{"full", base_report}, {"policy", result.report}};
    write_reports(reports, cfg.output_dir, "report");
    rr::save_records(result.records, cfg.output_dir + "/records.csv");
    const auto area_rows =
        rr::export_area_distribution(params, contexts, cfg.output_dir + "/areas.txt");
    if (area_rows == 0)
        std::cerr << "warning: policy chose FULL everywhere; areas.txt is empty\n";

    if (opts.format == "md")
        std::cout << rr::render_report_markdown(reports);
    else if (opts.format == "jsonl")
        std::cout << rr::render_report_jsonl(reports);
    else
        std::cout << rr::render_report_csv(reports);
    return 0;
}

int cmd_baselines(const CommonOpts& opts) {
    const auto cfg = resolve_config(opts);
    if (cfg.dataset) {
        std::cerr << "baselines require the synthetic environment (crops need images)\n";
        return 1;
    }
    rr::OutputDirLock lock(cfg.output_dir);
    const auto instances = rr::make_eval_instances(cfg.env, cfg.eval_instances);
    const auto reports = rr::run_baselines(cfg, instances);

    rr::NamedReports named;
    for (const auto& [name, report] : reports) named.emplace_back(name, report);
    write_reports(named, cfg.output_dir, "baselines");
    std::cout << rr::render_report_csv(named);
    return 0;
}

int cmd_ablate(const CommonOpts& opts) {
    const auto cfg = resolve_config(opts);
    rr::OutputDirLock lock(cfg.output_dir);
    const auto anchors = rr::build_anchors(cfg.env.height, cfg.env.width, cfg.anchors);
    const auto eval_contexts = eval_contexts_for(cfg, anchors);
    const auto rows = rr::run_ablation(cfg, anchors, eval_contexts, cfg.output_dir);
    const std::string table = rr::render_ablation_csv(rows);
    write_text(cfg.output_dir + "/ablation.csv", table);
    std::cout << table;
    return 0;
}

int cmd_analyze(const CommonOpts& opts, const std::string& records_path) {
    const auto cfg = resolve_config(opts);
    rr::OutputDirLock lock(cfg.output_dir);
    const std::string path =
        records_path.empty() ? cfg.output_dir + "/records.csv" : records_path;
    const auto records = rr::load_records(path);
    const auto splits = rr::behavior_analysis(records);
    const std::string table = rr::render_behavior_csv(splits);
    write_text(cfg.output_dir + "/behavior.csv", table);
    const std::size_t rows = rr::margin_scatter(records, cfg.output_dir + "/margin_scatter.csv");
    std::cout << table;
    if (rows == 0)
        std::cerr << "warning: no REGION decisions; margin scatter is empty\n";
    return 0;
}

int cmd_parse(const CommonOpts& opts, const std::string& input_path) {
    const auto cfg = resolve_config(opts);
    rr::OutputDirLock lock(cfg.output_dir);
    std::ifstream in(input_path);
    if (!in) throw rr::IoError("cannot open " + input_path);
    std::ofstream out(cfg.output_dir + "/parsed.jsonl");
    if (!out) throw rr::IoError("cannot write parsed.jsonl");

    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        nlohmann::json result;
        result["row"] = row;
        try {
            const auto obj = nlohmann::json::parse(line);
            const auto parsed = rr::parse_decision(obj.at("text").get<std::string>(),
                                                   obj.at("image_w").get<int>(),
                                                   obj.at("image_h").get<int>());
            result["decision"] = rr::to_string(parsed.action.decision);
            if (parsed.action.box) {
                const auto& b = *parsed.action.box;
                result["box"] = {b.x1, b.y1, b.x2, b.y2};
                result["malformed"] = b.malformed();
            }
            if (parsed.label) result["label"] = *parsed.label;
        } catch (const rr::NoDecisionFieldError&) {
            result["error"] = "NoDecisionField";
        } catch (const rr::UnknownDecisionValueError&) {
            result["error"] = "UnknownDecisionValue";
        } catch (const rr::MissingToolCallError&) {
            result["error"] = "MissingToolCall";
        } catch (const rr::BadBBoxArityError&) {
            result["error"] = "BadBBoxArity";
        } catch (const rr::MalformedJsonError&) {
            result["error"] = "MalformedJson";
        } catch (const nlohmann::json::exception& e) {
            result["error"] = std::string("BadInputRow: ") + e.what();
        }
        out << result.dump() << "\n";
    }
    std::cout << "parsed " << row << " rows -> " << cfg.output_dir << "/parsed.jsonl\n";
    return 0;
}

int cmd_report(const CommonOpts& opts, const std::string& input_path) {
    const auto cfg = resolve_config(opts);
    rr::OutputDirLock lock(cfg.output_dir);
    const std::string path =
        input_path.empty() ? cfg.output_dir + "/report.jsonl" : input_path;
    const auto reports = rr::load_report_jsonl(path);
    std::string rendered;
    if (opts.format == "md")
        rendered = rr::render_report_markdown(reports);
    else if (opts.format == "jsonl")
        rendered = rr::render_report_jsonl(reports);
    else
        rendered = rr::render_report_csv(reports);
    write_text(cfg.output_dir + "/report_formatted." + opts.format, rendered);
    std::cout << rendered;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"query-side region cropping lab: synthetic env, r-GRPO trainer, rank metrics"};
    app.require_subcommand(1);

    CommonOpts opts;
    int gen_count = 100;
    std::string gen_split = "eval";
    std::string policy_path;
    std::string eval_mode = "greedy";
    std::string records_path;
    std::string parse_input;
    std::string report_input;

    auto* gen = app.add_subcommand("gen", "emit a synthetic dataset as ndjson pool records");
    add_common(gen, opts);
    gen->add_option("--count", gen_count, "number of records");
    gen->add_option("--split", gen_split, "seed stream: train or eval")
        ->check(CLI::IsMember({"train", "eval"}));

    auto* train = app.add_subcommand("train", "train the cropping policy with r-GRPO");
    add_common(train, opts);

    auto* eval = app.add_subcommand("eval", "evaluate a trained policy");
    add_common(eval, opts);
    eval->add_option("--policy", policy_path, "policy file (default <out>/policy.txt)");
    eval->add_option("--mode", eval_mode, "greedy or stochastic")
        ->check(CLI::IsMember({"greedy", "stochastic"}));

    auto* baselines = app.add_subcommand("baselines", "run full/center/random baselines");
    add_common(baselines, opts);

    auto* ablate = app.add_subcommand("ablate", "train one policy per reward mask");
    add_common(ablate, opts);

    auto* analyze = app.add_subcommand("analyze", "behavior splits + margin scatter from records");
    add_common(analyze, opts);
    analyze->add_option("--records", records_path, "records csv (default <out>/records.csv)");

    auto* parse = app.add_subcommand("parse", "parse raw policy outputs (ndjson with text/image_w/image_h)");
    add_common(parse, opts);
    parse->add_option("--input", parse_input, "ndjson input file")->required();

    auto* report = app.add_subcommand("report", "re-emit a jsonl report as csv/md/jsonl");
    add_common(report, opts);
    report->add_option("--input", report_input, "report jsonl (default <out>/report.jsonl)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen(opts, gen_count, gen_split);
        if (train->parsed()) return cmd_train(opts);
        if (eval->parsed()) return cmd_eval(opts, policy_path, eval_mode);
        if (baselines->parsed()) return cmd_baselines(opts);
        if (ablate->parsed()) return cmd_ablate(opts);
        if (analyze->parsed()) return cmd_analyze(opts, records_path);
        if (parse->parsed()) return cmd_parse(opts, parse_input);
        if (report->parsed()) return cmd_report(opts, report_input);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
