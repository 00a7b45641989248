#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "region_r1/errors.hpp"
#include "region_r1/rng.hpp"
#include "region_r1/scoring.hpp"

namespace region_r1 {

// Half-open integer box: cells [x1, x2) x [y1, y2).
struct BBox {
    int x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    bool malformed() const { return x2 <= x1 || y2 <= y1; }
    bool in_bounds(int width, int height) const {
        return x1 >= 0 && y1 >= 0 && x2 <= width && y2 <= height;
    }
    bool valid(int width, int height) const { return !malformed() && in_bounds(width, height); }
    long area() const { return static_cast<long>(x2 - x1) * (y2 - y1); }

    bool operator==(const BBox&) const = default;
};

enum class Decision { Full, Region };

inline const char* to_string(Decision d) { return d == Decision::Full ? "FULL" : "REGION"; }

struct Action {
    Decision decision = Decision::Full;
    std::optional<BBox> box;

    static Action full() { return {Decision::Full, std::nullopt}; }
    static Action region(BBox b) { return {Decision::Region, b}; }
};

// H x W grid of D-dimensional feature cells, row-major.
struct FeatureGrid {
    int height = 0;
    int width = 0;
    int dim = 0;
    std::vector<double> data;  // height * width * dim

    FeatureGrid() = default;
    FeatureGrid(int h, int w, int d)
        : height(h), width(w), dim(d),
          data(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) *
               static_cast<std::size_t>(d)) {}

    std::span<double> cell(int y, int x) {
        return {data.data() + (static_cast<std::size_t>(y) * width + x) * dim,
                static_cast<std::size_t>(dim)};
    }
    std::span<const double> cell(int y, int x) const {
        return {data.data() + (static_cast<std::size_t>(y) * width + x) * dim,
                static_cast<std::size_t>(dim)};
    }

    bool operator==(const FeatureGrid&) const = default;
};

inline FeatureGrid crop(const FeatureGrid& img, const BBox& b) {
    if (b.malformed())
        throw MalformedBoxError("crop: x2 <= x1 or y2 <= y1");
    if (!b.in_bounds(img.width, img.height))
        throw OutOfBoundsError("crop: box exceeds grid bounds");
    FeatureGrid out(b.y2 - b.y1, b.x2 - b.x1, img.dim);
    for (int y = b.y1; y < b.y2; ++y) {
        for (int x = b.x1; x < b.x2; ++x) {
            const auto src = img.cell(y, x);
            auto dst = out.cell(y - b.y1, x - b.x1);
            std::copy(src.begin(), src.end(), dst.begin());
        }
    }
    return out;
}

inline Embedding mean_cell(const FeatureGrid& img) {
    if (img.data.empty()) throw EmptyDatasetError("mean_cell: empty grid");
    Embedding mean(static_cast<std::size_t>(img.dim), 0.0);
    const std::size_t n_cells =
        static_cast<std::size_t>(img.height) * static_cast<std::size_t>(img.width);
    for (std::size_t c = 0; c < n_cells; ++c)
        for (int d = 0; d < img.dim; ++d)
            mean[static_cast<std::size_t>(d)] += img.data[c * img.dim + d];
    for (auto& v : mean) v /= static_cast<double>(n_cells);
    return mean;
}

// Mean cell vector, normalized. The grid-scale stand-in for an image encoder.
inline Embedding embed_image(const FeatureGrid& img) { return normalize(mean_cell(img)); }

// Context building tolerates featureless crops: a zero-mean view keeps a zero
// vector, which scores every candidate 0 and has question-cosine 0.
inline Embedding embed_image_or_zero(const FeatureGrid& img) {
    Embedding mean = mean_cell(img);
    const double norm = l2_norm(mean);
    if (norm == 0.0) return mean;
    for (auto& v : mean) v /= norm;
    return mean;
}

// FULL keeps the image; REGION crops. A malformed or out-of-bounds box falls
// back to the full image and raises the flag so the reward can penalize it.
inline std::pair<FeatureGrid, bool> apply_action(const FeatureGrid& img, const Action& a) {
    if (a.decision == Decision::Full) return {img, false};
    const BBox& b = *a.box;
    if (!b.valid(img.width, img.height)) return {img, true};
    return {crop(img, b), false};
}

struct EnvConfig {
    int height = 16;
    int width = 16;
    int dim = 16;
    int pool_size = 20;
    double noise_in = 0.3;
    double noise_emb = 0.1;
    double noise_q = 0.2;
    int n_distractor_regions = 3;
    std::uint64_t seed = 42;
};

struct SyntheticInstance {
    FeatureGrid image;
    Embedding question_vec;  // unit
    CandidatePool pool;      // exactly one positive
    BBox target_box;
    std::uint64_t seed = 0;
};

namespace detail {

inline Embedding random_unit(CounterRng& rng, int dim) {
    Embedding v(static_cast<std::size_t>(dim));
    do {
        for (auto& x : v) x = rng.normal();
    } while (l2_norm(v) == 0.0);
    return normalize(v);
}

inline Embedding with_noise(const Embedding& base, double sigma, CounterRng& rng) {
    Embedding v = base;
    for (auto& x : v) x += sigma * rng.normal();
    return v;
}

// All boxes whose area lies in [lo, hi] fractions of the grid area.
inline std::vector<BBox> boxes_in_area_range(int width, int height, double lo, double hi) {
    std::vector<BBox> boxes;
    const double total = static_cast<double>(width) * height;
    for (int y1 = 0; y1 < height; ++y1)
        for (int y2 = y1 + 1; y2 <= height; ++y2)
            for (int x1 = 0; x1 < width; ++x1)
                for (int x2 = x1 + 1; x2 <= width; ++x2) {
                    const double frac = static_cast<double>(x2 - x1) * (y2 - y1) / total;
                    if (frac >= lo && frac <= hi) boxes.push_back({x1, y1, x2, y2});
                }
    return boxes;
}

}  // namespace detail

// Deterministic in (cfg, seed). Plants one entity region, a few distractor
// regions, and a matching candidate pool with exactly one positive.
inline SyntheticInstance generate_instance(const EnvConfig& cfg, std::uint64_t seed) {
    if (cfg.pool_size < 2) throw ConfigInfeasibleError("pool_size must be >= 2");
    if (cfg.height < 1 || cfg.width < 1 || cfg.dim < 1)
        throw ConfigInfeasibleError("grid dimensions must be positive");

    CounterRng rng(seed);
    SyntheticInstance inst;
    inst.seed = seed;

    const Embedding entity = detail::random_unit(rng, cfg.dim);
    std::vector<Embedding> distractors;
    distractors.reserve(static_cast<std::size_t>(cfg.pool_size - 1));
    for (int j = 0; j < cfg.pool_size - 1; ++j)
        distractors.push_back(detail::random_unit(rng, cfg.dim));

    const auto eligible = detail::boxes_in_area_range(cfg.width, cfg.height, 0.10, 0.60);
    if (eligible.empty())
        throw ConfigInfeasibleError("no box with area in [10%, 60%] fits the grid");
    inst.target_box = eligible[rng.uniform_int(eligible.size())];

    // Background noise, then distractor regions, then the target on top so a
    // crop of target_box sees only entity cells.
    inst.image = FeatureGrid(cfg.height, cfg.width, cfg.dim);
    for (auto& v : inst.image.data) v = cfg.noise_in * rng.normal();

    for (int r = 0; r < cfg.n_distractor_regions; ++r) {
        BBox box = eligible[rng.uniform_int(eligible.size())];
        for (int tries = 0; box == inst.target_box && tries < 64; ++tries)
            box = eligible[rng.uniform_int(eligible.size())];
        if (box == inst.target_box) continue;
        const Embedding& source = distractors[rng.uniform_int(distractors.size())];
        for (int y = box.y1; y < box.y2; ++y)
            for (int x = box.x1; x < box.x2; ++x) {
                auto cell = inst.image.cell(y, x);
                for (int d = 0; d < cfg.dim; ++d)
                    cell[static_cast<std::size_t>(d)] =
                        source[static_cast<std::size_t>(d)] + cfg.noise_in * rng.normal();
            }
    }
    for (int y = inst.target_box.y1; y < inst.target_box.y2; ++y)
        for (int x = inst.target_box.x1; x < inst.target_box.x2; ++x) {
            auto cell = inst.image.cell(y, x);
            for (int d = 0; d < cfg.dim; ++d)
                cell[static_cast<std::size_t>(d)] =
                    entity[static_cast<std::size_t>(d)] + cfg.noise_in * rng.normal();
        }

    // One positive candidate per pool; text present with probability 1/2.
    inst.pool.resize(static_cast<std::size_t>(cfg.pool_size));
    for (int j = 0; j < cfg.pool_size; ++j) {
        auto& cand = inst.pool[static_cast<std::size_t>(j)];
        const bool positive = j == 0;
        const Embedding& source =
            positive ? entity : distractors[static_cast<std::size_t>(j - 1)];
        cand.label = positive ? 1 : 0;
        cand.image_emb = detail::with_noise(source, cfg.noise_emb, rng);
        if (rng.uniform() < 0.5)
            cand.text_emb = detail::with_noise(source, cfg.noise_emb, rng);
    }
    // Shuffle so the positive does not sit at a fixed index.
    for (std::size_t j = inst.pool.size(); j > 1; --j)
        std::swap(inst.pool[j - 1], inst.pool[rng.uniform_int(j)]);
    for (std::size_t j = 0; j < inst.pool.size(); ++j)
        inst.pool[j].id = "c" + std::to_string(j);

    inst.question_vec = normalize(detail::with_noise(entity, cfg.noise_q, rng));
    return inst;
}

// Box edge for an area fraction: round(edge * sqrt(fraction)), at least 1 cell.
inline int scaled_edge(int edge, double fraction) {
    const long rounded = std::lround(static_cast<double>(edge) * std::sqrt(fraction));
    return static_cast<int>(std::clamp(rounded, 1L, static_cast<long>(edge)));
}

inline Action center_crop(const FeatureGrid& img, double fraction) {
    const int w = scaled_edge(img.width, fraction);
    const int h = scaled_edge(img.height, fraction);
    const int x1 = (img.width - w) / 2;
    const int y1 = (img.height - h) / 2;
    return Action::region({x1, y1, x1 + w, y1 + h});
}

// Draws an area fraction in (0, 1]. Empirical samplers replay recorded
// fractions; the fallback is uniform on [0.1, 0.9].
using AreaSampler = std::function<double(CounterRng&)>;

inline AreaSampler uniform_area_sampler(double lo = 0.1, double hi = 0.9) {
    return [lo, hi](CounterRng& rng) { return rng.uniform(lo, hi); };
}

inline AreaSampler empirical_area_sampler(std::vector<double> fractions) {
    if (fractions.empty())
        throw EmptyDatasetError("empirical_area_sampler: no fractions");
    return [fractions = std::move(fractions)](CounterRng& rng) {
        return fractions[rng.uniform_int(fractions.size())];
    };
}

// Newline-delimited decimal fractions, as written by the area-distribution export.
inline std::vector<double> load_area_distribution(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open area distribution file: " + path);
    std::vector<double> fractions;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        fractions.push_back(std::stod(line));
    }
    return fractions;
}

inline Action random_crop(const FeatureGrid& img, const AreaSampler& sampler,
                          CounterRng& rng) {
    const double fraction = sampler(rng);
    if (fraction >= 1.0) return Action::region({0, 0, img.width, img.height});
    const int w = scaled_edge(img.width, fraction);
    const int h = scaled_edge(img.height, fraction);
    const int x1 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(img.width - w + 1)));
    const int y1 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(img.height - h + 1)));
    return Action::region({x1, y1, x1 + w, y1 + h});
}

}  // namespace region_r1
