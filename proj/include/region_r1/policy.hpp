#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "region_r1/crop_env.hpp"
#include "region_r1/errors.hpp"
#include "region_r1/rng.hpp"
#include "region_r1/scoring.hpp"

namespace region_r1 {

struct AnchorSet {
    std::vector<BBox> boxes;
};

struct AnchorSchedule {
    std::vector<double> scales = {0.3, 0.5, 0.7, 1.0};
    int stride = 4;
};

// Boxes of size round(scale*W) x round(scale*H) on a stride grid, with the
// trailing offset clamped so every scale reaches the right/bottom edge.
// Duplicates (across offsets or scales) are dropped; order is deterministic.
inline AnchorSet build_anchors(int height, int width, const std::vector<double>& scales,
                               int stride) {
    if (stride < 1) throw ConfigInfeasibleError("anchor stride must be >= 1");
    AnchorSet anchors;
    std::set<std::tuple<int, int, int, int>> seen;
    auto offsets = [stride](int edge, int box_edge) {
        std::vector<int> out;
        for (int o = 0;; o += stride) {
            const int clamped = std::min(o, edge - box_edge);
            if (out.empty() || out.back() != clamped) out.push_back(clamped);
            if (o >= edge - box_edge) break;
        }
        return out;
    };
    for (const double scale : scales) {
        if (scale <= 0.0 || scale > 1.0)
            throw ConfigInfeasibleError("anchor scale must be in (0, 1]");
        const int bw = static_cast<int>(std::clamp(std::lround(scale * width), 1L,
                                                   static_cast<long>(width)));
        const int bh = static_cast<int>(std::clamp(std::lround(scale * height), 1L,
                                                   static_cast<long>(height)));
        for (const int y1 : offsets(height, bh))
            for (const int x1 : offsets(width, bw)) {
                const BBox box{x1, y1, x1 + bw, y1 + bh};
                if (seen.insert({box.x1, box.y1, box.x2, box.y2}).second)
                    anchors.boxes.push_back(box);
            }
    }
    if (anchors.boxes.empty()) throw ConfigInfeasibleError("anchor set is empty");
    return anchors;
}

inline AnchorSet build_anchors(int height, int width,
                               const AnchorSchedule& schedule = {}) {
    return build_anchors(height, width, schedule.scales, schedule.stride);
}

struct PolicyParams {
    std::vector<double> theta;

    static PolicyParams zeros(std::size_t dim) { return {std::vector<double>(dim, 0.0)}; }
};

constexpr std::size_t kFeatureDim = 4;

// Everything the policy and trainer need about one query, with per-action
// query embeddings and features precomputed. Action 0 is FULL; actions
// 1..n map to boxes[0..n-1].
struct QueryContext {
    std::string id;
    int image_width = 0;
    int image_height = 0;
    Embedding question_vec;            // unit; drives the cosine feature
    Embedding full_query;              // unit; scores the FULL action
    std::vector<BBox> boxes;
    std::vector<Embedding> box_query;  // unit, aligned with boxes
    std::vector<double> features;      // (1 + boxes.size()) x kFeatureDim
    std::vector<Embedding> cand_units; // fused candidate embeddings
    std::vector<int> labels;
    RankOutcome base;                  // FULL baseline outcome

    std::size_t n_actions() const { return 1 + boxes.size(); }
    std::span<const double> feature_row(std::size_t action_index) const {
        return {features.data() + action_index * kFeatureDim, kFeatureDim};
    }
    Action action(std::size_t action_index) const {
        return action_index == 0 ? Action::full() : Action::region(boxes[action_index - 1]);
    }
    double area_fraction(std::size_t action_index) const {
        if (action_index == 0) return 1.0;
        return static_cast<double>(boxes[action_index - 1].area()) /
               (static_cast<double>(image_width) * image_height);
    }
    RankOutcome outcome(std::size_t action_index) const {
        const Embedding& q = action_index == 0 ? full_query : box_query[action_index - 1];
        std::vector<double> scores(cand_units.size());
        for (std::size_t j = 0; j < cand_units.size(); ++j)
            scores[j] = std::clamp(dot(q, cand_units[j]), -1.0, 1.0);
        return induce_ranking(scores, labels);
    }
};

namespace detail {

// Feature layout: [question-cosine, area fraction, FULL indicator, bias].
inline void fill_feature_row(double* row, const Embedding& question,
                             const Embedding& action_query, double area_frac,
                             bool is_full) {
    row[0] = std::clamp(dot(question, action_query), -1.0, 1.0);
    row[1] = area_frac;
    row[2] = is_full ? 1.0 : 0.0;
    row[3] = 1.0;
}

}  // namespace detail

inline QueryContext make_context(const SyntheticInstance& inst, const AnchorSet& anchors) {
    QueryContext ctx;
    ctx.id = "q" + std::to_string(inst.seed);
    ctx.image_width = inst.image.width;
    ctx.image_height = inst.image.height;
    ctx.question_vec = inst.question_vec;
    ctx.full_query = embed_image(inst.image);
    ctx.boxes = anchors.boxes;
    ctx.box_query.reserve(ctx.boxes.size());
    for (const auto& box : ctx.boxes) ctx.box_query.push_back(embed_image_or_zero(crop(inst.image, box)));

    ctx.cand_units.reserve(inst.pool.size());
    ctx.labels.reserve(inst.pool.size());
    for (const auto& cand : inst.pool) {
        ctx.cand_units.push_back(fuse_candidate(cand));
        ctx.labels.push_back(cand.label);
    }

    ctx.features.resize(ctx.n_actions() * kFeatureDim);
    for (std::size_t i = 0; i < ctx.n_actions(); ++i)
        detail::fill_feature_row(ctx.features.data() + i * kFeatureDim, ctx.question_vec,
                                 i == 0 ? ctx.full_query : ctx.box_query[i - 1],
                                 ctx.area_fraction(i), i == 0);
    ctx.base = ctx.outcome(0);
    return ctx;
}

// Per-action features for a synthetic instance, matching the context rows.
inline std::vector<double> action_features(const SyntheticInstance& inst, const Action& a) {
    std::vector<double> row(kFeatureDim);
    const auto [grid, malformed] = apply_action(inst.image, a);
    const bool is_full = a.decision == Decision::Full;
    const double area_frac =
        is_full || malformed
            ? 1.0
            : static_cast<double>(a.box->area()) /
                  (static_cast<double>(inst.image.width) * inst.image.height);
    detail::fill_feature_row(row.data(), inst.question_vec, embed_image_or_zero(grid), area_frac,
                             is_full);
    return row;
}

struct ActionDistribution {
    std::vector<double> probs;  // index 0 = FULL, then boxes in context order

    double full_prob() const { return probs.empty() ? 0.0 : probs[0]; }
};

// Softmax over theta . features(a), stabilized by max subtraction.
inline ActionDistribution distribution(const PolicyParams& params, const QueryContext& ctx) {
    if (params.theta.size() != kFeatureDim)
        throw DimensionMismatchError("policy params dim != feature dim");
    ActionDistribution dist;
    dist.probs.resize(ctx.n_actions());
    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < ctx.n_actions(); ++i) {
        const auto row = ctx.feature_row(i);
        double logit = 0.0;
        for (std::size_t k = 0; k < kFeatureDim; ++k) logit += params.theta[k] * row[k];
        dist.probs[i] = logit;
        max_logit = std::max(max_logit, logit);
    }
    double total = 0.0;
    for (auto& p : dist.probs) {
        p = std::exp(p - max_logit);
        total += p;
    }
    for (auto& p : dist.probs) p /= total;
    return dist;
}

// Categorical draw by inverse CDF; returns (action index, ln prob).
inline std::pair<std::size_t, double> sample_action(const ActionDistribution& dist,
                                                    CounterRng& rng) {
    const double u = rng.uniform();
    double cum = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < dist.probs.size(); ++i) {
        if (dist.probs[i] <= 0.0) continue;
        cum += dist.probs[i];
        last_positive = i;
        if (u < cum) return {i, std::log(dist.probs[i])};
    }
    return {last_positive, std::log(dist.probs[last_positive])};
}

inline std::size_t argmax_action(const ActionDistribution& dist) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < dist.probs.size(); ++i)
        if (dist.probs[i] > dist.probs[best]) best = i;
    return best;
}

// grad ln pi(a | x) = f(a) - sum_a' pi(a') f(a').
inline std::vector<double> log_prob_grad(const PolicyParams& params, const QueryContext& ctx,
                                         std::size_t action_index) {
    const ActionDistribution dist = distribution(params, ctx);
    std::vector<double> grad(kFeatureDim, 0.0);
    for (std::size_t i = 0; i < ctx.n_actions(); ++i) {
        const auto row = ctx.feature_row(i);
        for (std::size_t k = 0; k < kFeatureDim; ++k) grad[k] -= dist.probs[i] * row[k];
    }
    const auto chosen = ctx.feature_row(action_index);
    for (std::size_t k = 0; k < kFeatureDim; ++k) grad[k] += chosen[k];
    return grad;
}

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace detail

// Flat decimal-text vector with a version header.
inline void save_params(const PolicyParams& params, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write policy file: " + path);
    out << "region-r1-policy v1 dim=" << params.theta.size() << "\n";
    for (const double v : params.theta) out << detail::format_double(v) << "\n";
}

inline PolicyParams load_params(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open policy file: " + path);
    std::string header;
    std::getline(in, header);
    const std::string prefix = "region-r1-policy v1 dim=";
    if (header.rfind(prefix, 0) != 0)
        throw IoError("bad policy file header: " + header);
    const std::size_t dim = std::stoul(header.substr(prefix.size()));
    PolicyParams params;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        params.theta.push_back(std::stod(line));
    }
    if (params.theta.size() != dim)
        throw IoError("policy file dim mismatch: header says " + std::to_string(dim) +
                      ", found " + std::to_string(params.theta.size()));
    return params;
}

}  // namespace region_r1
