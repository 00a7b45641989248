#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <set>

#include "oracles.hpp"
#include "region_r1/policy.hpp"

using namespace region_r1;

namespace {

SyntheticInstance clean_instance(std::uint64_t seed, int distractors = 3) {
    EnvConfig cfg;
    cfg.noise_in = cfg.noise_emb = cfg.noise_q = 0.0;
    cfg.n_distractor_regions = distractors;
    return generate_instance(cfg, seed);
}

}  // namespace

TEST_CASE("build_anchors") {
    const auto full_only = build_anchors(4, 4, {1.0}, 2);
    REQUIRE(full_only.boxes.size() == 1);
    CHECK(full_only.boxes[0] == BBox{0, 0, 4, 4});

    const auto grid = build_anchors(4, 4, {0.5}, 2);
    const std::vector<BBox> expect = {
        {0, 0, 2, 2}, {2, 0, 4, 2}, {0, 2, 2, 4}, {2, 2, 4, 4}};
    CHECK(grid.boxes == expect);

    CHECK_THROWS_AS(build_anchors(4, 4, {1.5}, 2), ConfigInfeasibleError);
    CHECK_THROWS_AS(build_anchors(4, 4, {0.5}, 0), ConfigInfeasibleError);

    // default schedule vs an independent enumeration with dedup
    const auto anchors = build_anchors(16, 16, AnchorSchedule{});
    std::set<std::tuple<int, int, int, int>> expected;
    for (const double scale : {0.3, 0.5, 0.7, 1.0}) {
        const int edge = static_cast<int>(std::lround(scale * 16.0));
        std::set<int> offs;
        for (int o = 0; o <= 16 - edge; o += 4) offs.insert(o);
        offs.insert(16 - edge);
        for (const int y : offs)
            for (const int x : offs) expected.insert({x, y, x + edge, y + edge});
    }
    REQUIRE(anchors.boxes.size() == expected.size());
    for (const auto& b : anchors.boxes) REQUIRE(expected.count({b.x1, b.y1, b.x2, b.y2}) == 1);

    // duplicates removed across scales
    const auto dup = build_anchors(4, 4, {0.5, 0.5, 1.0}, 2);
    CHECK(dup.boxes.size() == 5);
}

TEST_CASE("action_features") {
    const auto inst = clean_instance(11);
    const auto full_row = action_features(inst, Action::full());
    REQUIRE(full_row.size() == kFeatureDim);
    CHECK(full_row[1] == 1.0);  // area fraction
    CHECK(full_row[2] == 1.0);  // FULL indicator
    CHECK(full_row[3] == 1.0);  // bias

    // zero-noise limit: question vector equals the planted entity
    const auto target_row = action_features(inst, Action::region(inst.target_box));
    CHECK_THAT(target_row[0], Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK(target_row[2] == 0.0);
    CHECK_THAT(target_row[1],
               Catch::Matchers::WithinAbs(inst.target_box.area() / 256.0, 1e-15));

    CHECK(action_features(inst, Action::region(inst.target_box)) == target_row);
}

TEST_CASE("context rows match per-action features") {
    EnvConfig cfg;
    const auto inst = generate_instance(cfg, 909);
    const auto anchors = build_anchors(cfg.height, cfg.width, AnchorSchedule{});
    const auto ctx = make_context(inst, anchors);
    REQUIRE(ctx.n_actions() == anchors.boxes.size() + 1);

    const auto full_row = action_features(inst, Action::full());
    for (std::size_t k = 0; k < kFeatureDim; ++k) REQUIRE(ctx.feature_row(0)[k] == full_row[k]);
    for (std::size_t i = 0; i < anchors.boxes.size(); ++i) {
        const auto row = action_features(inst, Action::region(anchors.boxes[i]));
        for (std::size_t k = 0; k < kFeatureDim; ++k)
            REQUIRE(ctx.feature_row(i + 1)[k] == row[k]);
    }
}

TEST_CASE("distribution") {
    EnvConfig cfg;
    const auto inst = generate_instance(cfg, 5150);
    const auto anchors = build_anchors(cfg.height, cfg.width, AnchorSchedule{});
    const auto ctx = make_context(inst, anchors);

    const auto uniform = distribution(PolicyParams::zeros(kFeatureDim), ctx);
    double total = 0.0;
    for (const double p : uniform.probs) {
        CHECK_THAT(p, Catch::Matchers::WithinAbs(1.0 / ctx.n_actions(), 1e-12));
        total += p;
    }
    CHECK_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-9));

    // adding a constant to every logit through the bias feature changes nothing
    PolicyParams params{{0.7, -0.3, 0.2, 0.0}};
    PolicyParams shifted{{0.7, -0.3, 0.2, 13.0}};
    const auto base_dist = distribution(params, ctx);
    const auto shifted_dist = distribution(shifted, ctx);
    for (std::size_t i = 0; i < base_dist.probs.size(); ++i)
        REQUIRE_THAT(shifted_dist.probs[i],
                     Catch::Matchers::WithinAbs(base_dist.probs[i], 1e-12));

    CHECK_THROWS_AS(distribution(PolicyParams{{1.0, 2.0}}, ctx), DimensionMismatchError);
}

TEST_CASE("large question-cosine weight selects the planted region") {
    const auto inst = clean_instance(21, 0);
    const auto anchors = build_anchors(16, 16, AnchorSchedule{});
    const auto ctx = make_context(inst, anchors);
    PolicyParams params{{200.0, 0.0, -200.0, 0.0}};  // chase cosine, shun FULL
    const auto dist = distribution(params, ctx);
    const std::size_t best = argmax_action(dist);
    REQUIRE(best > 0);

    // exhaustive logit check: the argmax matches the best cosine row
    std::size_t expect = 1;
    for (std::size_t i = 1; i < ctx.n_actions(); ++i)
        if (ctx.feature_row(i)[0] > ctx.feature_row(expect)[0]) expect = i;
    CHECK(best == expect);
    // and that anchor embeds the planted entity direction exactly
    CHECK_THAT(ctx.feature_row(best)[0], Catch::Matchers::WithinAbs(1.0, 1e-12));
}

TEST_CASE("sample_action") {
    ActionDistribution degenerate;
    degenerate.probs = {1.0, 0.0, 0.0};
    CounterRng rng(3);
    const auto [index, log_prob] = sample_action(degenerate, rng);
    CHECK(index == 0);
    CHECK(log_prob == 0.0);

    ActionDistribution dist;
    dist.probs = {0.25, 0.5, 0.25};
    CounterRng a(7), b(7);
    for (int i = 0; i < 20; ++i) REQUIRE(sample_action(dist, a) == sample_action(dist, b));

    // multinomial check: 100k draws within 3 sigma of expectation
    CounterRng rng2(99);
    std::vector<int> counts(3, 0);
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) ++counts[sample_action(dist, rng2).first];
    for (std::size_t j = 0; j < 3; ++j) {
        const double expect = draws * dist.probs[j];
        const double sigma = std::sqrt(draws * dist.probs[j] * (1.0 - dist.probs[j]));
        REQUIRE(std::abs(counts[j] - expect) <= 3.0 * sigma);
    }
}

TEST_CASE("log_prob_grad") {
    EnvConfig cfg;
    const auto anchors = build_anchors(cfg.height, cfg.width, AnchorSchedule{});
    CounterRng rng(1515);

    // uniform policy: gradient is f(a) - mean feature vector
    const auto inst = generate_instance(cfg, 71);
    const auto ctx = make_context(inst, anchors);
    const auto grad0 = log_prob_grad(PolicyParams::zeros(kFeatureDim), ctx, 0);
    std::vector<double> mean(kFeatureDim, 0.0);
    for (std::size_t i = 0; i < ctx.n_actions(); ++i)
        for (std::size_t k = 0; k < kFeatureDim; ++k)
            mean[k] += ctx.feature_row(i)[k] / static_cast<double>(ctx.n_actions());
    for (std::size_t k = 0; k < kFeatureDim; ++k)
        REQUIRE_THAT(grad0[k], Catch::Matchers::WithinAbs(ctx.feature_row(0)[k] - mean[k], 1e-12));
    // the bias feature is constant 1, so its gradient component cancels
    REQUIRE_THAT(grad0[3], Catch::Matchers::WithinAbs(0.0, 1e-12));

    // finite-difference agreement on random triples
    for (int trial = 0; trial < 25; ++trial) {
        const auto x = make_context(generate_instance(cfg, rng.next_u64()), anchors);
        PolicyParams params{{rng.normal(), rng.normal(), rng.normal(), rng.normal()}};
        const std::size_t action = rng.uniform_int(x.n_actions());
        const auto analytic = log_prob_grad(params, x, action);
        const auto fd = oracle::fd_gradient(
            [&](const std::vector<double>& theta) {
                return std::log(distribution(PolicyParams{theta}, x).probs[action]);
            },
            params.theta);
        for (std::size_t k = 0; k < kFeatureDim; ++k)
            REQUIRE_THAT(fd[k], Catch::Matchers::WithinAbs(
                                    analytic[k], 1e-5 * std::max(1.0, std::abs(analytic[k]))));
    }

    // prob -> 1 limit: gradient vanishes
    const PolicyParams cert{{0.0, 0.0, 700.0, 0.0}};
    const auto grad1 = log_prob_grad(cert, ctx, 0);
    for (const double g : grad1) REQUIRE_THAT(g, Catch::Matchers::WithinAbs(0.0, 1e-9));
}

TEST_CASE("policy params file round-trip") {
    PolicyParams params{{0.1, -2.5e-7, 3.14159265358979, 42.0}};
    const std::string path = "policy_test.txt";
    save_params(params, path);

    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "region-r1-policy v1 dim=4");
    in.close();

    const auto loaded = load_params(path);
    CHECK(loaded.theta == params.theta);
    std::remove(path.c_str());

    CHECK_THROWS_AS(load_params("no_such_policy.txt"), IoError);
    {
        std::ofstream bad("bad_policy.txt");
        bad << "not-a-policy\n1.0\n";
    }
    CHECK_THROWS_AS(load_params("bad_policy.txt"), IoError);
    std::remove("bad_policy.txt");
}
