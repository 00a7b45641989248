#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "region_r1/errors.hpp"
#include "region_r1/ir_metrics.hpp"

namespace region_r1 {

using Embedding = std::vector<double>;

inline double dot(const Embedding& a, const Embedding& b) {
    if (a.size() != b.size())
        throw DimensionMismatchError("dot: " + std::to_string(a.size()) + " vs " +
                                     std::to_string(b.size()));
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double l2_norm(const Embedding& e) { return std::sqrt(dot(e, e)); }

inline Embedding normalize(const Embedding& e) {
    const double norm = l2_norm(e);
    if (norm == 0.0) throw ZeroVectorError("normalize: zero vector");
    // Idempotent on unit vectors: re-normalizing must not drift by an ulp,
    // or round-tripped embeddings stop comparing equal.
    if (std::abs(norm - 1.0) <= 1e-9) return e;
    Embedding unit(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) unit[i] = e[i] / norm;
    return unit;
}

// Zero vectors pass through; used where a featureless view is valid data.
inline Embedding normalize_or_zero(const Embedding& e) {
    return l2_norm(e) == 0.0 ? e : normalize(e);
}

// Cosine similarity, clamped into [-1, 1] against round-off.
inline double cosine(const Embedding& a, const Embedding& b) {
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) throw ZeroVectorError("cosine: zero vector");
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

struct Candidate {
    std::string id;
    Embedding image_emb;                // raw, pre-normalization
    std::optional<Embedding> text_emb;  // raw, optional
    int label = 0;
};

using CandidatePool = std::vector<Candidate>;

// Candidate embedding: image plus text (when present), normalized after the sum.
inline Embedding fuse_candidate(const Candidate& c) {
    if (!c.text_emb) return normalize(c.image_emb);
    if (c.text_emb->size() != c.image_emb.size())
        throw DimensionMismatchError("fuse_candidate: text/image dimension mismatch");
    Embedding sum = c.image_emb;
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += (*c.text_emb)[i];
    return normalize(sum);
}

// Induced ranking plus the rank statistics the reward needs.
struct RankOutcome {
    LabeledRanking ranking;
    std::vector<double> scores;
    std::optional<int> rank;       // first positive, 1-based
    std::optional<double> pos;     // max score over positives
    std::optional<double> neg;     // max score over negatives
    std::optional<double> margin;  // pos - neg, when both exist
};

inline std::vector<double> score_pool(const Embedding& query, const CandidatePool& pool) {
    std::vector<double> scores;
    scores.reserve(pool.size());
    for (const auto& c : pool) scores.push_back(cosine(query, fuse_candidate(c)));
    return scores;
}

// Descending by score, exact-equality ties broken by ascending candidate index.
inline RankOutcome induce_ranking(const std::vector<double>& scores,
                                  const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw DimensionMismatchError("induce_ranking: scores/labels length mismatch");

    RankOutcome out;
    out.scores = scores;
    out.ranking.labels = labels;
    out.ranking.order.resize(scores.size());
    std::iota(out.ranking.order.begin(), out.ranking.order.end(), 0);
    std::sort(out.ranking.order.begin(), out.ranking.order.end(), [&](int a, int b) {
        const double sa = scores[static_cast<std::size_t>(a)];
        const double sb = scores[static_cast<std::size_t>(b)];
        if (sa != sb) return sa > sb;
        return a < b;
    });

    out.rank = first_positive_rank(out.ranking);
    for (std::size_t j = 0; j < scores.size(); ++j) {
        auto& best = labels[j] == 1 ? out.pos : out.neg;
        if (!best || scores[j] > *best) best = scores[j];
    }
    if (out.pos && out.neg) out.margin = *out.pos - *out.neg;
    return out;
}

inline RankOutcome rank_pool(const Embedding& query, const CandidatePool& pool) {
    std::vector<int> labels;
    labels.reserve(pool.size());
    for (const auto& c : pool) labels.push_back(c.label);
    return induce_ranking(score_pool(query, pool), labels);
}

}  // namespace region_r1
