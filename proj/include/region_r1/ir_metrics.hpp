#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <vector>

#include "region_r1/errors.hpp"

namespace region_r1 {

// A ranking over one candidate pool. `order` lists candidate indices best
// first; `labels` stays aligned to the original candidate indices.
struct LabeledRanking {
    std::vector<int> order;
    std::vector<int> labels;

    std::size_t size() const { return order.size(); }
};

struct MetricsReport {
    double mrr = 0.0;
    double ndcg = 0.0;
    std::map<int, double> recall_at;       // K -> mean hit@K
    std::map<int, double> cond_recall_at;  // K -> E[hit@K | hit@20 = 1]
    std::size_t n_queries = 0;
};

// 1-based position of the best-ranked positive; empty when none exists.
inline std::optional<int> first_positive_rank(const LabeledRanking& r) {
    for (std::size_t p = 0; p < r.order.size(); ++p) {
        if (r.labels[static_cast<std::size_t>(r.order[p])] == 1)
            return static_cast<int>(p + 1);
    }
    return std::nullopt;
}

inline double reciprocal_rank(const LabeledRanking& r) {
    const auto rank = first_positive_rank(r);
    return rank ? 1.0 / static_cast<double>(*rank) : 0.0;
}

// Binary-gain NDCG with 1/log2(p+1) discount; the ideal ordering places all
// positives first. Pools without a positive score 0.
inline double ndcg(const LabeledRanking& r) {
    double dcg = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t p = 0; p < r.order.size(); ++p) {
        if (r.labels[static_cast<std::size_t>(r.order[p])] == 1)
            dcg += 1.0 / std::log2(static_cast<double>(p + 2));
    }
    for (const int y : r.labels) n_pos += static_cast<std::size_t>(y);
    if (n_pos == 0) return 0.0;
    double idcg = 0.0;
    for (std::size_t p = 0; p < n_pos; ++p)
        idcg += 1.0 / std::log2(static_cast<double>(p + 2));
    return dcg / idcg;
}

inline int hit_at_k(const LabeledRanking& r, int k) {
    const auto rank = first_positive_rank(r);
    return (rank && *rank <= k) ? 1 : 0;
}

// E[hit@K | hit@20 = 1]: mean of hits_k over queries with hits_20 = 1.
inline double cond_recall_at_k(const std::vector<int>& hits_k,
                               const std::vector<int>& hits_20) {
    std::size_t conditioned = 0;
    std::size_t successes = 0;
    for (std::size_t i = 0; i < hits_20.size(); ++i) {
        if (hits_20[i] == 1) {
            ++conditioned;
            successes += static_cast<std::size_t>(hits_k[i]);
        }
    }
    if (conditioned == 0)
        throw EmptyConditioningSetError("no query has hit@20 = 1");
    return static_cast<double>(successes) / static_cast<double>(conditioned);
}

inline MetricsReport aggregate(const std::vector<LabeledRanking>& rankings,
                               const std::vector<int>& eval_ks = {1, 5, 10, 20},
                               const std::vector<int>& cond_ks = {1, 5, 10},
                               int cond_on = 20) {
    if (rankings.empty()) throw EmptyDatasetError("aggregate over empty ranking set");

    MetricsReport report;
    report.n_queries = rankings.size();
    std::map<int, std::vector<int>> hits;
    for (const int k : eval_ks) hits[k] = {};
    for (const int k : cond_ks) hits[k] = {};
    hits[cond_on] = {};

    for (const auto& r : rankings) {
        report.mrr += reciprocal_rank(r);
        report.ndcg += ndcg(r);
        for (auto& [k, h] : hits) h.push_back(hit_at_k(r, k));
    }
    report.mrr /= static_cast<double>(rankings.size());
    report.ndcg /= static_cast<double>(rankings.size());

    for (const int k : eval_ks) {
        double sum = 0.0;
        for (const int h : hits[k]) sum += h;
        report.recall_at[k] = sum / static_cast<double>(rankings.size());
    }
    for (const int k : cond_ks)
        report.cond_recall_at[k] = cond_recall_at_k(hits[k], hits[cond_on]);
    return report;
}

}  // namespace region_r1
