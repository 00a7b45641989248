// Minimal tour: generate a synthetic instance, score it, train a small
// policy, and compare against the no-cropping baseline.

#include <cstdio>

#include "region_r1/region_r1.hpp"

int main() {
    using namespace region_r1;

    EnvConfig env;
    env.seed = 7;
    const AnchorSet anchors = build_anchors(env.height, env.width, AnchorSchedule{});

    // One instance: a planted entity region inside a noisy feature grid,
    // plus a 20-candidate pool with a single positive.
    const SyntheticInstance inst = generate_instance(env, 1);
    const RankOutcome baseline = rank_pool(embed_image(inst.image), inst.pool);
    const RankOutcome cropped =
        rank_pool(embed_image(crop(inst.image, inst.target_box)), inst.pool);
    std::printf("positive rank: full image %d, target crop %d\n", *baseline.rank,
                *cropped.rank);

    // Train the cropping policy for a short run.
    TrainConfig train_cfg;
    train_cfg.steps = 300;
    train_cfg.seed = env.seed;
    const TrainResult trained = train(synthetic_stream(env, anchors), train_cfg);

    // Held-out evaluation, greedy decisions.
    const auto contexts = make_contexts(make_eval_instances(env, 100), anchors);
    std::vector<LabeledRanking> base_rankings;
    for (const auto& ctx : contexts) base_rankings.push_back(ctx.base.ranking);
    const double base_mrr = aggregate(base_rankings).mrr;
    const EvalResult result = evaluate(trained.params, contexts, EvalMode::Greedy);

    std::printf("held-out MRR: policy %.4f vs full-image baseline %.4f\n",
                result.report.mrr, base_mrr);
    const auto splits = behavior_analysis(result.records);
    std::printf("rank>1 queries: help %.2f, hurt %.2f, region rate %.2f\n",
                splits.second.help, splits.second.hurt, splits.second.rc_rate);
    return 0;
}
