#pragma once
// Order planning: exhaustive permutation search, the weakest-first
// heuristic, split pruning schedules, and mixed-precision bit allocation.

#include <string>
#include <utility>
#include <vector>

#include "ordlab/compressors.hpp"
#include "ordlab/metrics.hpp"
#include "ordlab/model.hpp"

namespace ordlab {

struct Plan {
  std::vector<CompressionOp> steps;
  std::vector<double> predicted_rank;  // per-step CER when CER-ordered
  bool cer_warning = false;  // some step's CER left the measured curve range
};

struct PermutationRow {
  std::vector<int> order;  // indices into the input op list
  double score = 0.0;
};

struct BruteForceResult {
  Plan best;
  double best_score = 0.0;
  std::vector<PermutationRow> table;  // lexicographic by index sequence
};

// Scores every permutation of up to six ops. Ties resolve to the
// lexicographically smallest index sequence; more than six ops is refused
// in favour of progressive_order.
BruteForceResult brute_force_order(const LayeredModel& m, const Metric& metric,
                                   const std::vector<CompressionOp>& ops);

// Weakest op first: ascending CER measured on the original model, ties by
// smaller nominal ratio, then family declaration order, then input
// position. The plan carries a warning when any CER was extrapolated.
Plan progressive_order(const LayeredModel& m, const Metric& metric,
                       const std::vector<CompressionOp>& ops,
                       const QuantCurve& curve);

struct MultiStageRow {
  double p1 = 0.0, p2 = 0.0;
  double score = 0.0;      // prune(p1) -> quant -> prune(p2)
  double advantage = 0.0;  // score(p1,p2) - score(p2,p1)
};

// Split pruning around a quantization stage. The second stage re-scores on
// the model as it stands and selects among surviving units only; each
// directed score is computed once, so the advantage is exactly
// antisymmetric in the split.
std::vector<MultiStageRow> multi_stage(
    const LayeredModel& m, const Metric& metric, double total_p,
    const std::vector<std::pair<double, double>>& splits,
    const CompressionOp& quant,
    const CompressionOp& prune_proto = prune_unstructured(0.5));

struct MpqResult {
  std::vector<int> allocation;     // bits per layer
  double progressive_score = 0.0;  // fine-to-coarse group order
  double regressive_score = 0.0;   // coarse-to-fine group order
  double coa = 0.0;                // progressive minus regressive
  bool disjoint = false;           // every layer in exactly one bit group
};

// Greedy mixed-precision allocation meeting an exact average-bit budget,
// then the two group orderings compared. Group calibration is frozen at
// application time, which is what makes the orders differ.
MpqResult mpq_orderings(const LayeredModel& m, const Metric& metric,
                        double avg_bits, const std::vector<int>& bit_menu);

inline constexpr double kRatioTolerance = 0.05;

struct RatioCheck {
  double realized = 0.0;
  double nominal = 0.0;  // product of per-step nominal ratios
  bool ok = false;
  std::string exception;  // nonempty when the comparison is not meaningful
};

// Storage accounting for a finished pipeline: surviving entries times
// stored bit-width, consecutive identical matrices stored once. Known
// distortions (overlapping prune selections, diverged or incomplete share
// groups, steps scoped to a subset of layers) are named instead of judged.
RatioCheck plan_ratio_check(const LayeredModel& m,
                            const std::vector<CompressionOp>& steps);

}  // namespace ordlab
