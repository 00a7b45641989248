#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "region_r1/errors.hpp"
#include "region_r1/ir_metrics.hpp"
#include "region_r1/parallel.hpp"
#include "region_r1/policy.hpp"
#include "region_r1/reward.hpp"
#include "region_r1/rng.hpp"

namespace region_r1 {

struct SampleRecord {
    std::size_t action_index = 0;
    Action action;
    double log_prob = 0.0;
    std::vector<double> grad;  // grad ln pi under the unmodified policy
    RewardBreakdown reward;
};

struct GroupSample {
    std::string query_id;
    std::vector<SampleRecord> samples;
    std::vector<double> advantages;
    std::vector<std::size_t> forced_indices;
};

struct TrainConfig {
    int group_size = 8;
    double learning_rate = 0.05;
    int steps = 2000;
    int batch_size = 4;
    double eps = 1e-8;
    RewardWeights weights;
    double eta = 1.0;  // malformed-box penalty
    bool per_decision_norm = true;
    int eval_every = 0;  // 0 = no periodic evaluation
    std::uint64_t seed = 42;
};

struct CurvePoint {
    int step = 0;
    double mean_reward = 0.0;
    double full_rate = 0.0;
    std::optional<double> eval_mrr;
};

using TrainingCurve = std::vector<CurvePoint>;

// Draw group_size actions i.i.d.; when one decision is missing, the
// lowest-probability draw is replaced by a forced sample of the missing
// decision (FULL directly; REGION from the anchor mass renormalized).
// Forced samples keep their log-prob and gradient under the unmodified
// policy, which leaves the estimator biased but well-defined.
inline GroupSample sample_group(const PolicyParams& params, const QueryContext& ctx,
                                int group_size, CounterRng& rng) {
    if (group_size < 2) throw ConfigInfeasibleError("group size must be >= 2");
    if (ctx.boxes.empty())
        throw ConfigInfeasibleError(
            "decision-balanced sampling needs at least one REGION action (query " + ctx.id +
            " has no region embeddings)");
    const ActionDistribution dist = distribution(params, ctx);

    GroupSample group;
    group.query_id = ctx.id;
    group.samples.resize(static_cast<std::size_t>(group_size));
    bool has_full = false;
    bool has_region = false;
    for (auto& sample : group.samples) {
        const auto [index, log_prob] = sample_action(dist, rng);
        sample.action_index = index;
        sample.log_prob = log_prob;
        (index == 0 ? has_full : has_region) = true;
    }

    if (!has_full || !has_region) {
        std::size_t replace = 0;
        for (std::size_t i = 1; i < group.samples.size(); ++i)
            if (group.samples[i].log_prob < group.samples[replace].log_prob) replace = i;

        std::size_t forced_index = 0;
        if (!has_region) {
            // Renormalized draw over REGION actions; uniform if they carry no mass.
            double region_mass = 0.0;
            for (std::size_t i = 1; i < dist.probs.size(); ++i) region_mass += dist.probs[i];
            if (region_mass > 0.0) {
                const double u = rng.uniform() * region_mass;
                double cum = 0.0;
                forced_index = dist.probs.size() - 1;
                for (std::size_t i = 1; i < dist.probs.size(); ++i) {
                    cum += dist.probs[i];
                    if (u < cum) {
                        forced_index = i;
                        break;
                    }
                }
            } else {
                forced_index = 1 + rng.uniform_int(ctx.boxes.size());
            }
        }
        group.samples[replace].action_index = forced_index;
        group.samples[replace].log_prob = std::log(dist.probs[forced_index]);
        group.forced_indices.push_back(replace);
    }

    for (auto& sample : group.samples) {
        sample.action = ctx.action(sample.action_index);
        sample.grad = log_prob_grad(params, ctx, sample.action_index);
    }
    return group;
}

// Fill rewards: REGION samples score their crop against the FULL baseline,
// FULL samples get the rank-1 indicator.
inline void score_group(GroupSample& group, const QueryContext& ctx,
                        const RewardWeights& weights, double eta = 1.0) {
    for (auto& sample : group.samples) {
        if (sample.action.decision == Decision::Full) {
            sample.reward = full_reward(ctx.base);
        } else {
            const RankOutcome after = ctx.outcome(sample.action_index);
            // Context boxes are valid by construction; penalty stays 0 here.
            const double penalty = box_penalty(sample.action.box, false, eta);
            sample.reward = region_reward(ctx.base, after, weights, penalty);
        }
    }
}

// Group-relative advantages, normalized within each decision subgroup
// (population std; singleton subgroups get advantage 0). The eps guard only
// takes over when the spread is below it, so normalized subgroups keep unit
// standard deviation whenever the rewards vary. Setting per_decision = false
// reproduces plain whole-group normalization.
inline void normalize_advantages(GroupSample& group, double eps,
                                 bool per_decision = true) {
    group.advantages.assign(group.samples.size(), 0.0);
    auto normalize_subset = [&](const std::vector<std::size_t>& idx) {
        if (idx.size() < 2) return;  // singleton: advantage stays 0
        double mean = 0.0;
        for (const auto i : idx) mean += group.samples[i].reward.total;
        mean /= static_cast<double>(idx.size());
        double var = 0.0;
        for (const auto i : idx) {
            const double d = group.samples[i].reward.total - mean;
            var += d * d;
        }
        var /= static_cast<double>(idx.size());
        const double sigma = std::max(std::sqrt(var), eps);
        for (const auto i : idx)
            group.advantages[i] = (group.samples[i].reward.total - mean) / sigma;
    };

    if (per_decision) {
        std::vector<std::size_t> full_idx, region_idx;
        for (std::size_t i = 0; i < group.samples.size(); ++i)
            (group.samples[i].action.decision == Decision::Full ? full_idx : region_idx)
                .push_back(i);
        normalize_subset(full_idx);
        normalize_subset(region_idx);
    } else {
        std::vector<std::size_t> all(group.samples.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        normalize_subset(all);
    }
}

// theta <- theta + lr * mean over all samples of A * grad ln pi.
inline PolicyParams update_step(const PolicyParams& params,
                                const std::vector<GroupSample>& groups, double lr) {
    std::vector<double> step(params.theta.size(), 0.0);
    std::size_t n_samples = 0;
    for (const auto& group : groups) {
        for (std::size_t i = 0; i < group.samples.size(); ++i) {
            const auto& grad = group.samples[i].grad;
            for (std::size_t k = 0; k < step.size(); ++k)
                step[k] += group.advantages[i] * grad[k];
            ++n_samples;
        }
    }
    PolicyParams next = params;
    for (std::size_t k = 0; k < step.size(); ++k) {
        const double delta = lr * step[k] / static_cast<double>(n_samples);
        if (!std::isfinite(delta))
            throw NonFiniteGradientError("update_step: non-finite component " +
                                         std::to_string(k));
        next.theta[k] += delta;
    }
    return next;
}

struct TrainResult {
    PolicyParams params;
    TrainingCurve curve;
};

struct EvalRecord {
    std::string query_id;
    Action action;
    std::optional<int> base_rank;
    std::optional<int> post_rank;
    std::optional<double> base_margin;
    std::optional<double> post_margin;
    double area_fraction = 1.0;
};

struct EvalResult {
    MetricsReport report;
    std::vector<EvalRecord> records;
};

enum class EvalMode { Greedy, Stochastic };

inline EvalResult evaluate(const PolicyParams& params,
                           const std::vector<QueryContext>& contexts, EvalMode mode,
                           std::uint64_t seed = 0,
                           const std::vector<int>& eval_ks = {1, 5, 10, 20},
                           const std::vector<int>& cond_ks = {1, 5, 10});

// Streams one query context per call; the trainer pulls batch_size per step.
using ContextStream = std::function<QueryContext()>;

inline TrainResult train(const ContextStream& stream, const TrainConfig& cfg,
                         const std::vector<QueryContext>* eval_set = nullptr) {
    validate_weights(cfg.weights);
    TrainResult result;
    result.params = PolicyParams::zeros(kFeatureDim);
    CounterRng sample_rng = CounterRng(cfg.seed).fork(0x5a3f);

    for (int step = 1; step <= cfg.steps; ++step) {
        std::vector<GroupSample> groups;
        groups.reserve(static_cast<std::size_t>(cfg.batch_size));
        double reward_sum = 0.0;
        double full_count = 0.0;
        std::size_t sample_count = 0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const QueryContext ctx = stream();
            GroupSample group = sample_group(result.params, ctx, cfg.group_size, sample_rng);
            score_group(group, ctx, cfg.weights, cfg.eta);
            normalize_advantages(group, cfg.eps, cfg.per_decision_norm);
            for (const auto& sample : group.samples) {
                reward_sum += sample.reward.total;
                if (sample.action.decision == Decision::Full) full_count += 1.0;
                ++sample_count;
            }
            groups.push_back(std::move(group));
        }
        result.params = update_step(result.params, groups, cfg.learning_rate);

        CurvePoint point;
        point.step = step;
        point.mean_reward = reward_sum / static_cast<double>(sample_count);
        point.full_rate = full_count / static_cast<double>(sample_count);
        if (eval_set && cfg.eval_every > 0 &&
            (step % cfg.eval_every == 0 || step == cfg.steps)) {
            point.eval_mrr =
                evaluate(result.params, *eval_set, EvalMode::Greedy).report.mrr;
        }
        result.curve.push_back(point);
    }
    return result;
}

inline EvalResult evaluate(const PolicyParams& params,
                           const std::vector<QueryContext>& contexts, EvalMode mode,
                           std::uint64_t seed,
                           const std::vector<int>& eval_ks,
                           const std::vector<int>& cond_ks) {
    if (contexts.empty()) throw EmptyDatasetError("evaluate: no query contexts");
    std::size_t max_k = 0;
    for (const int k : eval_ks) max_k = std::max(max_k, static_cast<std::size_t>(k));
    for (const auto& ctx : contexts)
        if (ctx.cand_units.size() < max_k)
            throw ConfigInfeasibleError("evaluate: pool of query " + ctx.id + " has " +
                                        std::to_string(ctx.cand_units.size()) +
                                        " candidates, below eval K " + std::to_string(max_k));

    std::vector<LabeledRanking> rankings(contexts.size());
    EvalResult result;
    result.records.resize(contexts.size());
    parallel_for(contexts.size(), [&](std::size_t i) {
        const auto& ctx = contexts[i];
        const ActionDistribution dist = distribution(params, ctx);
        std::size_t index;
        if (mode == EvalMode::Greedy) {
            index = argmax_action(dist);
        } else {
            CounterRng rng = CounterRng(seed).fork(0xe7a1).fork(i);
            index = sample_action(dist, rng).first;
        }
        const RankOutcome after = index == 0 ? ctx.base : ctx.outcome(index);
        rankings[i] = after.ranking;

        auto& rec = result.records[i];
        rec.query_id = ctx.id;
        rec.action = ctx.action(index);
        rec.base_rank = ctx.base.rank;
        rec.post_rank = after.rank;
        rec.base_margin = ctx.base.margin;
        rec.post_margin = after.margin;
        rec.area_fraction = ctx.area_fraction(index);
    });
    result.report = aggregate(rankings, eval_ks, cond_ks);
    return result;
}

}  // namespace region_r1
