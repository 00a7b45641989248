#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "region_r1/crop_env.hpp"
#include "region_r1/errors.hpp"
#include "region_r1/ir_metrics.hpp"
#include "region_r1/scoring.hpp"

namespace region_r1 {

struct RewardWeights {
    double w_mrr = 0.25;
    double w_ndcg = 0.25;
    double w_rank = 0.25;
    double w_margin = 0.25;

    double sum() const { return w_mrr + w_ndcg + w_rank + w_margin; }
};

inline void validate_weights(const RewardWeights& w) {
    if (std::abs(w.sum() - 1.0) > 1e-12)
        throw ConfigInfeasibleError("reward weights must sum to 1, got " +
                                    std::to_string(w.sum()));
    if (w.w_mrr < 0 || w.w_ndcg < 0 || w.w_rank < 0 || w.w_margin < 0)
        throw ConfigInfeasibleError("reward weights must be non-negative");
}

// Ablation rows are weight masks over the base weights, renormalized so the
// active components still sum to 1. Names: mrr, mrr+ndcg, mrr+ndcg+rank, full.
inline RewardWeights mask_weights(const RewardWeights& base, const std::string& mask) {
    RewardWeights w = base;
    if (mask == "mrr") {
        w.w_ndcg = w.w_rank = w.w_margin = 0.0;
    } else if (mask == "mrr+ndcg") {
        w.w_rank = w.w_margin = 0.0;
    } else if (mask == "mrr+ndcg+rank") {
        w.w_margin = 0.0;
    } else if (mask != "full") {
        throw ConfigInfeasibleError("unknown reward mask: " + mask);
    }
    const double total = w.sum();
    if (total == 0.0)
        throw ConfigInfeasibleError("reward mask leaves no active component");
    w.w_mrr /= total;
    w.w_ndcg /= total;
    w.w_rank /= total;
    w.w_margin /= total;
    return w;
}

struct RewardBreakdown {
    double d_mrr = 0.0;
    double d_ndcg = 0.0;
    double d_rank = 0.0;
    double d_margin = 0.0;
    double penalty = 0.0;
    double total = 0.0;
    Decision decision = Decision::Full;
};

inline double delta_mrr(const RankOutcome& base, const RankOutcome& act) {
    return reciprocal_rank(act.ranking) - reciprocal_rank(base.ranking);
}

inline double delta_ndcg(const RankOutcome& base, const RankOutcome& act) {
    return ndcg(act.ranking) - ndcg(base.ranking);
}

// log((rank_full + 1) / (rank_act + 1)), natural log. Computed as a log
// difference so identity and antisymmetry hold exactly.
inline double delta_rank(std::optional<int> base_rank, std::optional<int> act_rank) {
    if (!base_rank || !act_rank)
        throw MissingPositiveError("delta_rank: rank undefined (no positive in pool)");
    return std::log(static_cast<double>(*base_rank + 1)) -
           std::log(static_cast<double>(*act_rank + 1));
}

inline double delta_margin(const RankOutcome& base, const RankOutcome& act) {
    if (!base.margin || !act.margin)
        throw MissingClassError("delta_margin: pool lacks a positive or negative");
    return *act.margin - *base.margin;
}

// eta(b): flat penalty for malformed or out-of-bounds boxes, else 0.
inline double box_penalty(const std::optional<BBox>&, bool malformed_flag,
                          double eta = 1.0) {
    return malformed_flag ? eta : 0.0;
}

inline RewardBreakdown region_reward(const RankOutcome& base, const RankOutcome& act,
                                     const RewardWeights& weights, double penalty) {
    RewardBreakdown r;
    r.decision = Decision::Region;
    r.d_mrr = delta_mrr(base, act);
    r.d_ndcg = delta_ndcg(base, act);
    r.d_rank = delta_rank(base.rank, act.rank);
    r.d_margin = delta_margin(base, act);
    r.penalty = penalty;
    r.total = weights.w_mrr * r.d_mrr + weights.w_ndcg * r.d_ndcg +
              weights.w_rank * r.d_rank + weights.w_margin * r.d_margin - penalty;
    return r;
}

// FULL earns 1 only when the baseline already ranks the positive first.
inline RewardBreakdown full_reward(const RankOutcome& base) {
    if (!base.rank)
        throw MissingPositiveError("full_reward: baseline rank undefined");
    RewardBreakdown r;
    r.decision = Decision::Full;
    r.total = *base.rank == 1 ? 1.0 : 0.0;
    return r;
}

}  // namespace region_r1
