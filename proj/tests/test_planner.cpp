#include <doctest.h>

#include <stdexcept>
#include <vector>

#include "oracles.hpp"
#include "ordlab/planner.hpp"

using namespace ordlab;

namespace {

const Metric kMetric{};

QuantCurve tight_curve() {
  // Hand curve whose whole range sits above any real op's performance, so
  // every inversion extrapolates.
  QuantCurve c;
  QuantCurvePoint a, b;
  a.ratio = 1.0;
  a.perf_raw = a.perf = 300.0;
  b.ratio = 1.2;
  b.perf_raw = b.perf = 200.0;
  c.points = {a, b};
  return c;
}

}  // namespace

TEST_CASE("exhaustive search scores every permutation") {
  const LayeredModel m = LayeredModel::synthetic({6, 8, 8, 6}, 91, 10);
  const CompressionOp q = quant_uniform(5);
  const CompressionOp p = prune_row(0.3);
  const BruteForceResult r = brute_force_order(m, kMetric, {q, p});
  REQUIRE(r.table.size() == 2);
  CHECK(r.table[0].order == std::vector<int>{0, 1});
  CHECK(r.table[1].order == std::vector<int>{1, 0});
  CHECK(r.table[0].score == run_pipeline(m, kMetric, {q, p}).score);
  CHECK(r.table[1].score == run_pipeline(m, kMetric, {p, q}).score);
  // The table difference IS the order advantage.
  CHECK(r.table[0].score - r.table[1].score ==
        doctest::Approx(coa(m, kMetric, q, p)));
  CHECK(r.best_score == std::max(r.table[0].score, r.table[1].score));

  // Identical ops tie; the lexicographically smallest sequence wins.
  const BruteForceResult tie = brute_force_order(m, kMetric, {q, q});
  CHECK(tie.best.steps.size() == 2);
  CHECK(tie.best_score == tie.table[0].score);

  CHECK_THROWS_AS(brute_force_order(m, kMetric, {}), std::invalid_argument);
  CHECK_THROWS_AS(
      brute_force_order(m, kMetric, std::vector<CompressionOp>(7, q)),
      std::invalid_argument);
}

TEST_CASE("three ops yield the full six-row table") {
  const LayeredModel m = LayeredModel::synthetic({6, 8, 8, 6}, 97, 10);
  const std::vector<CompressionOp> ops = {quant_uniform(6), prune_layer(0.4),
                                          prune_unstructured(0.1)};
  const BruteForceResult r = brute_force_order(m, kMetric, ops);
  CHECK(r.table.size() == 6);
  for (const PermutationRow& row : r.table)
    CHECK(row.score <= r.best_score);
}

TEST_CASE("the heuristic orders weakest first by equivalent ratio") {
  const LayeredModel m = LayeredModel::synthetic({6, 10, 8, 6}, 101, 12);
  const QuantCurve curve = build_quant_curve(m, kMetric);
  const CompressionOp weak = prune_unstructured(0.05);
  const CompressionOp strong = quant_uniform(4);
  const Plan plan = progressive_order(m, kMetric, {strong, weak}, curve);
  REQUIRE(plan.steps.size() == 2);
  CHECK(plan.steps[0].family == OpFamily::PruneUnstructured);
  CHECK(plan.steps[1].family == OpFamily::QuantUniform);
  CHECK(plan.predicted_rank[0] <= plan.predicted_rank[1]);

  // Equal CER, equal nominal, equal family: input position breaks the tie.
  CompressionOp q1 = quant_uniform(6);
  q1.seed = 1;
  CompressionOp q2 = quant_uniform(6);
  q2.seed = 2;
  const Plan tied = progressive_order(m, kMetric, {q1, q2}, curve);
  CHECK(tied.steps[0].seed == 1);
  CHECK(tied.steps[1].seed == 2);
  CHECK_FALSE(tied.cer_warning);

  const Plan flagged = progressive_order(m, kMetric, {weak}, tight_curve());
  CHECK(flagged.cer_warning);

  CHECK_THROWS_AS(progressive_order(m, kMetric, {}, curve),
                  std::invalid_argument);
}

TEST_CASE("a disjoint pair ties both orders so the heuristic matches search") {
  const LayeredModel m = LayeredModel::synthetic({6, 8, 8, 6}, 103, 10);
  const QuantCurve curve = build_quant_curve(m, kMetric);
  const std::vector<CompressionOp> ops = {quant_uniform(6), prune_layer(0.4)};
  const BruteForceResult bf = brute_force_order(m, kMetric, ops);
  const Plan prog = progressive_order(m, kMetric, ops, curve);
  const double prog_score = run_pipeline(m, kMetric, prog.steps).score;
  CHECK(prog_score == doctest::Approx(bf.best_score).epsilon(1e-12));
}

TEST_CASE("split schedules are memoized into exact antisymmetry") {
  const LayeredModel m = LayeredModel::synthetic({6, 8, 8, 6}, 107, 10);
  const CompressionOp quant = quant_uniform(6);
  const std::vector<std::pair<double, double>> splits = {
      {0.1, 0.2}, {0.2, 0.1}, {0.15, 0.15}};
  const auto rows = multi_stage(m, kMetric, 0.3, splits, quant);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].advantage == -rows[1].advantage);  // exact, memoized
  CHECK(rows[2].advantage == 0.0);                 // symmetric split

  CompressionOp first = prune_unstructured(0.5), second = prune_unstructured(0.5);
  first.p = 0.1;
  second.p = 0.3;  // stage two re-selects the full cumulative budget
  CHECK(rows[0].score ==
        run_pipeline(m, kMetric, {first, quant, second}).score);

  CHECK_THROWS_AS(multi_stage(m, kMetric, 0.3, {{0.1, 0.15}}, quant),
                  std::invalid_argument);
  CHECK_THROWS_AS(multi_stage(m, kMetric, 0.3, {{0.3, 0.0}}, quant),
                  std::invalid_argument);
  CHECK_THROWS_AS(multi_stage(m, kMetric, 0.3, {}, quant),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      multi_stage(m, kMetric, 0.3, {{0.1, 0.2}}, quant, quant_uniform(8)),
      std::invalid_argument);
}

TEST_CASE("bit allocation meets the budget and steps down the sturdiest layer") {
  LayeredModel m = LayeredModel::synthetic({6, 8, 8, 6}, 109, 10);
  // Shrink the final layer: its inputs are untouched, so its quantization
  // error alone collapses and the greedy must step it down first.
  m.layer(2).weights *= 0.01;
  m.finalize();

  const MpqResult r = mpq_orderings(m, kMetric, 20.0 / 3.0, {8, 4});
  long long total = 0;
  for (int b : r.allocation) total += b;
  CHECK(total == 20);
  CHECK(r.allocation[2] == 4);
  CHECK(r.disjoint);

  // A single-width menu makes both orders the same pipeline.
  const MpqResult flat = mpq_orderings(m, kMetric, 8.0, {8});
  CHECK(flat.coa == 0.0);
  CHECK(flat.progressive_score == flat.regressive_score);
  CHECK(flat.disjoint);

  CHECK_THROWS_AS(mpq_orderings(m, kMetric, 5.5, {8, 4}),
                  std::invalid_argument);  // 16.5 bits total is not integral
  CHECK_THROWS_AS(mpq_orderings(m, kMetric, 6.0, {8, 4}),
                  std::invalid_argument);  // 18 is unreachable in steps of 4
  CHECK_THROWS_AS(mpq_orderings(m, kMetric, 10.0, {8, 4}),
                  std::invalid_argument);
  CHECK_THROWS_AS(mpq_orderings(m, kMetric, 8.0, {}), std::invalid_argument);
  CHECK_THROWS_AS(mpq_orderings(m, kMetric, 8.0, {8, 1}),
                  std::invalid_argument);
}

TEST_CASE("storage accounting matches nominal ratios on clean pipelines") {
  const LayeredModel m = LayeredModel::synthetic({6, 8, 8, 6}, 113, 10);
  const RatioCheck quant_only = plan_ratio_check(m, {quant_uniform(4)});
  CHECK(quant_only.ok);
  CHECK(quant_only.realized == doctest::Approx(4.0));
  CHECK(quant_only.exception.empty());

  const RatioCheck both =
      plan_ratio_check(m, {prune_unstructured(0.25), quant_uniform(4)});
  CHECK(both.ok);
  CHECK(both.realized == doctest::Approx(both.nominal).epsilon(1e-12));

  const LayeredModel eq = LayeredModel::synthetic({8, 8, 8}, 127, 10);
  const RatioCheck shared = plan_ratio_check(eq, {share_layers(2)});
  CHECK(shared.ok);
  CHECK(shared.realized == doctest::Approx(2.0));
}

TEST_CASE("storage accounting names every distortion instead of judging it") {
  const LayeredModel m = LayeredModel::synthetic({6, 8, 8, 6}, 131, 10);
  CompressionOp scoped = quant_uniform(4);
  scoped.layers = {0};
  const RatioCheck part = plan_ratio_check(m, {scoped});
  CHECK_FALSE(part.ok);
  CHECK(part.exception == "step scoped to a subset of layers");

  const LayeredModel eq3 = LayeredModel::synthetic({8, 8, 8, 8}, 137, 10);
  const RatioCheck leftover = plan_ratio_check(eq3, {share_layers(2)});
  CHECK_FALSE(leftover.ok);
  CHECK(leftover.exception == "incomplete share group");

  const LayeredModel eq2 = LayeredModel::synthetic({8, 8, 8}, 139, 10);
  const RatioCheck diverged =
      plan_ratio_check(eq2, {share_layers(2), prune_row(0.2)});
  CHECK_FALSE(diverged.ok);
  CHECK(diverged.exception == "share group diverged downstream");

  CHECK_THROWS_AS(plan_ratio_check(m, {}), std::invalid_argument);
}
