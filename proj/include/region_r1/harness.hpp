#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "region_r1/crop_env.hpp"
#include "region_r1/dataset.hpp"
#include "region_r1/errors.hpp"
#include "region_r1/policy.hpp"
#include "region_r1/reports.hpp"
#include "region_r1/reward.hpp"
#include "region_r1/rgrpo.hpp"
#include "region_r1/rng.hpp"

namespace region_r1 {

struct ExperimentConfig {
    EnvConfig env;
    TrainConfig train;
    AnchorSchedule anchors;
    std::vector<int> eval_ks = {1, 5, 10, 20};
    std::vector<int> cond_ks = {1, 5, 10};
    int eval_instances = 500;
    bool baseline_full = true;
    bool baseline_center = true;
    bool baseline_random = true;
    double center_fraction = 0.2;
    int random_draws = 8;
    std::optional<std::string> area_file;  // learned-policy area distribution
    std::vector<std::string> ablation_masks = {"mrr", "mrr+ndcg", "mrr+ndcg+rank", "full"};
    std::optional<std::string> dataset;    // ndjson PoolRecords; overrides the synthetic env
    std::string output_dir = "out";
};

namespace detail {

template <typename T>
void maybe_get(const nlohmann::json& obj, const char* key, T& value) {
    if (obj.contains(key)) value = obj.at(key).get<T>();
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& obj) {
    ExperimentConfig cfg;
    if (obj.contains("env")) {
        const auto& env = obj.at("env");
        detail::maybe_get(env, "height", cfg.env.height);
        detail::maybe_get(env, "width", cfg.env.width);
        detail::maybe_get(env, "dim", cfg.env.dim);
        detail::maybe_get(env, "pool_size", cfg.env.pool_size);
        detail::maybe_get(env, "noise_in", cfg.env.noise_in);
        detail::maybe_get(env, "noise_emb", cfg.env.noise_emb);
        detail::maybe_get(env, "noise_q", cfg.env.noise_q);
        detail::maybe_get(env, "n_distractor_regions", cfg.env.n_distractor_regions);
        detail::maybe_get(env, "seed", cfg.env.seed);
    }
    if (obj.contains("train")) {
        const auto& train = obj.at("train");
        detail::maybe_get(train, "group_size", cfg.train.group_size);
        detail::maybe_get(train, "learning_rate", cfg.train.learning_rate);
        detail::maybe_get(train, "steps", cfg.train.steps);
        detail::maybe_get(train, "batch_size", cfg.train.batch_size);
        detail::maybe_get(train, "eps", cfg.train.eps);
        detail::maybe_get(train, "eta", cfg.train.eta);
        detail::maybe_get(train, "per_decision_norm", cfg.train.per_decision_norm);
        detail::maybe_get(train, "eval_every", cfg.train.eval_every);
        detail::maybe_get(train, "seed", cfg.train.seed);
        if (train.contains("weights")) {
            const auto& w = train.at("weights");
            detail::maybe_get(w, "mrr", cfg.train.weights.w_mrr);
            detail::maybe_get(w, "ndcg", cfg.train.weights.w_ndcg);
            detail::maybe_get(w, "rank", cfg.train.weights.w_rank);
            detail::maybe_get(w, "margin", cfg.train.weights.w_margin);
        }
    }
    if (obj.contains("anchors")) {
        const auto& anchors = obj.at("anchors");
        detail::maybe_get(anchors, "scales", cfg.anchors.scales);
        detail::maybe_get(anchors, "stride", cfg.anchors.stride);
    }
    detail::maybe_get(obj, "eval_ks", cfg.eval_ks);
    detail::maybe_get(obj, "cond_ks", cfg.cond_ks);
    detail::maybe_get(obj, "eval_instances", cfg.eval_instances);
    if (obj.contains("baselines")) {
        const auto& b = obj.at("baselines");
        detail::maybe_get(b, "full", cfg.baseline_full);
        detail::maybe_get(b, "center", cfg.baseline_center);
        detail::maybe_get(b, "random", cfg.baseline_random);
    }
    detail::maybe_get(obj, "center_fraction", cfg.center_fraction);
    detail::maybe_get(obj, "random_draws", cfg.random_draws);
    if (obj.contains("area_file") && !obj.at("area_file").is_null())
        cfg.area_file = obj.at("area_file").get<std::string>();
    detail::maybe_get(obj, "ablation_masks", cfg.ablation_masks);
    if (obj.contains("dataset") && !obj.at("dataset").is_null())
        cfg.dataset = obj.at("dataset").get<std::string>();
    detail::maybe_get(obj, "output_dir", cfg.output_dir);
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    nlohmann::json obj;
    try {
        in >> obj;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("config is not valid JSON: " + std::string(e.what()));
    }
    return parse_experiment_config(obj);
}

// Single --seed flag re-keys both the environment stream and the trainer.
inline void override_seed(ExperimentConfig& cfg, std::uint64_t seed) {
    cfg.env.seed = seed;
    cfg.train.seed = seed;
}

// Stream tags: training and evaluation instances never share seeds.
constexpr std::uint64_t kTrainInstanceTag = 0x7261;
constexpr std::uint64_t kEvalInstanceTag = 0x6576;

inline std::vector<SyntheticInstance> make_eval_instances(const EnvConfig& env, int count) {
    CounterRng seeds = CounterRng(env.seed).fork(kEvalInstanceTag);
    std::vector<SyntheticInstance> instances;
    instances.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) instances.push_back(generate_instance(env, seeds.next_u64()));
    return instances;
}

inline std::vector<QueryContext> make_contexts(const std::vector<SyntheticInstance>& instances,
                                               const AnchorSet& anchors) {
    std::vector<QueryContext> contexts(instances.size());
    parallel_for(instances.size(),
                 [&](std::size_t i) { contexts[i] = make_context(instances[i], anchors); });
    return contexts;
}

// On-the-fly synthetic training stream: a fresh seeded instance per call.
inline ContextStream synthetic_stream(const EnvConfig& env, const AnchorSet& anchors) {
    auto seeds = std::make_shared<CounterRng>(CounterRng(env.seed).fork(kTrainInstanceTag));
    return [env, anchors, seeds]() {
        return make_context(generate_instance(env, seeds->next_u64()), anchors);
    };
}

// Dataset-backed stream cycling through training-eligible records.
inline ContextStream dataset_stream(std::vector<QueryContext> contexts) {
    if (contexts.empty()) throw EmptyDatasetError("dataset stream has no records");
    auto index = std::make_shared<std::size_t>(0);
    auto shared = std::make_shared<std::vector<QueryContext>>(std::move(contexts));
    return [shared, index]() {
        const QueryContext& ctx = (*shared)[*index % shared->size()];
        ++*index;
        return ctx;
    };
}

// ---- baselines -------------------------------------------------------------

// FULL (no crop), center crop, and random crop with the area distribution
// matched to the learned policy when available. Random pools rankings over
// all draws into one report.
inline std::map<std::string, MetricsReport> run_baselines(
    const ExperimentConfig& cfg, const std::vector<SyntheticInstance>& instances) {
    if (instances.empty()) throw EmptyDatasetError("run_baselines: no instances");
    std::map<std::string, MetricsReport> reports;

    auto rank_with_action = [](const SyntheticInstance& inst, const Action& a) {
        const auto [grid, malformed] = apply_action(inst.image, a);
        (void)malformed;  // baseline boxes are valid by construction
        return rank_pool(embed_image(grid), inst.pool);
    };

    if (cfg.baseline_full) {
        std::vector<LabeledRanking> rankings(instances.size());
        parallel_for(instances.size(), [&](std::size_t i) {
            rankings[i] = rank_pool(embed_image(instances[i].image), instances[i].pool).ranking;
        });
        reports["full"] = aggregate(rankings, cfg.eval_ks, cfg.cond_ks);
    }
    if (cfg.baseline_center) {
        std::vector<LabeledRanking> rankings(instances.size());
        parallel_for(instances.size(), [&](std::size_t i) {
            const Action a = center_crop(instances[i].image, cfg.center_fraction);
            rankings[i] = rank_with_action(instances[i], a).ranking;
        });
        reports["center"] = aggregate(rankings, cfg.eval_ks, cfg.cond_ks);
    }
    if (cfg.baseline_random) {
        const AreaSampler sampler = cfg.area_file
                                        ? empirical_area_sampler(load_area_distribution(*cfg.area_file))
                                        : uniform_area_sampler();
        std::vector<LabeledRanking> rankings(instances.size() *
                                             static_cast<std::size_t>(cfg.random_draws));
        parallel_for(rankings.size(), [&](std::size_t slot) {
            const std::size_t draw = slot / instances.size();
            const std::size_t i = slot % instances.size();
            CounterRng rng = CounterRng(cfg.env.seed).fork(0xba5e).fork(draw).fork(i);
            const Action a = random_crop(instances[i].image, sampler, rng);
            rankings[slot] = rank_with_action(instances[i], a).ranking;
        });
        reports["random"] = aggregate(rankings, cfg.eval_ks, cfg.cond_ks);
    }
    return reports;
}

// ---- reward ablation ---------------------------------------------------------

struct AblationRow {
    std::string mask;
    double eval_mrr = 0.0;
    double above_diagonal = 0.0;  // share of REGION evals that improved the margin
    std::size_t scatter_rows = 0;
};

// Trains one policy per weight mask on identical seeds and instance streams,
// then evaluates each greedily on the shared held-out set. Scatter files land
// in out_dir as margin_scatter_<mask>.csv.
inline std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg,
                                             const AnchorSet& anchors,
                                             const std::vector<QueryContext>& eval_contexts,
                                             const std::string& out_dir) {
    std::vector<AblationRow> rows;
    for (const auto& mask : cfg.ablation_masks) {
        TrainConfig train_cfg = cfg.train;
        train_cfg.weights = mask_weights(cfg.train.weights, mask);
        const TrainResult trained = train(synthetic_stream(cfg.env, anchors), train_cfg);
        const EvalResult eval =
            evaluate(trained.params, eval_contexts, EvalMode::Greedy, 0, cfg.eval_ks, cfg.cond_ks);

        AblationRow row;
        row.mask = mask;
        row.eval_mrr = eval.report.mrr;
        const std::string scatter_path = out_dir + "/margin_scatter_" + mask + ".csv";
        row.scatter_rows = margin_scatter(eval.records, scatter_path);
        if (row.scatter_rows > 0) row.above_diagonal = above_diagonal_fraction(scatter_path);
        rows.push_back(row);
    }
    return rows;
}

inline std::string render_ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "mask,eval_mrr,above_diagonal,scatter_rows\n";
    for (const auto& row : rows) {
        out += row.mask + "," + detail::fmt(row.eval_mrr) + "," +
               detail::fmt(row.above_diagonal) + "," + std::to_string(row.scatter_rows) + "\n";
    }
    return out;
}

// ---- output directory ownership ---------------------------------------------

// Exclusive-create lock file; a second process targeting the same directory
// fails fast instead of interleaving writes.
class OutputDirLock {
public:
    explicit OutputDirLock(const std::string& dir) {
        std::filesystem::create_directories(dir);
        path_ = dir + "/.lock";
        const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0)
            throw IoError("output directory is locked (remove " + path_ + " if stale)");
        ::close(fd);
    }
    ~OutputDirLock() { std::filesystem::remove(path_); }
    OutputDirLock(const OutputDirLock&) = delete;
    OutputDirLock& operator=(const OutputDirLock&) = delete;

private:
    std::string path_;
};

}  // namespace region_r1
