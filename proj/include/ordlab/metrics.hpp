#pragma once

// Order-sensitivity quantities: performance gap, compression-equivalent
// ratio against a quantization reference curve, order advantage, disjoint
// selectivity, the four-group unit partition, and interference.

#include "ordlab/compressors.hpp"
#include "ordlab/model.hpp"

#include <optional>
#include <vector>

namespace ordlab {

struct QuantCurvePoint {
  int bits = 0;           // 0 for hand-built curves
  double ratio = 1.0;     // 16 / bits for built curves
  double perf_raw = 0.0;  // measured performance
  double perf = 0.0;      // after lower monotone envelope repair
};

// Performance of quantization across bit-widths, ratios strictly ascending.
// perf is non-increasing after repair; inversion runs on perf, raw points
// are kept for reports.
struct QuantCurve {
  std::vector<QuantCurvePoint> points;
};

inline const std::vector<int> kCurveBits = {16, 12, 10, 8, 7, 6, 5, 4, 3, 2};

QuantCurve build_quant_curve(const LayeredModel& m, const Metric& metric,
                             const std::vector<int>& bits = kCurveBits,
                             Rounding rounding = Rounding::Nearest,
                             ScaleScope scope = ScaleScope::PerTensor,
                             std::uint64_t seed = 0);

struct CerResult {
  double value = 1.0;
  bool extrapolated = false;  // target below the worst curve point
  bool ambiguous = false;     // target sat on a flat segment
  bool clamped = false;       // target above the best curve point
};

// Invert the curve: the ratio whose interpolated performance equals
// `performance`. Piecewise linear between points; above the best point
// clamps to the smallest ratio, below the worst extrapolates from the last
// segment. Flags are never silent.
CerResult cer_for_performance(const QuantCurve& curve, double performance);

CerResult cer_detail(const LayeredModel& m, const Metric& metric,
                     const CompressionOp& f, const QuantCurve& curve);

// The headline scalar: equivalent quantization ratio of f on this model.
double cer(const LayeredModel& m, const Metric& metric, const CompressionOp& f,
           const QuantCurve& curve);

// M(f1(phi)) - M(f2(phi)).
double performance_gap(const LayeredModel& m, const Metric& metric,
                       const CompressionOp& f1, const CompressionOp& f2);

// M((f2 o f1)(phi)) - M((f1 o f2)(phi)): positive means f1-first wins.
double coa(const LayeredModel& m, const Metric& metric,
           const CompressionOp& f1, const CompressionOp& f2);

struct PipelineResult {
  LayeredModel model;
  std::vector<ApplicationMask> masks;  // one per op, application order
  double score = 0.0;
};

PipelineResult run_pipeline(const LayeredModel& m, const Metric& metric,
                            const std::vector<CompressionOp>& ops);

// Which pipeline the two masks came from (f1 applied first or second).
enum class Orientation { F1First, F2First };

// True iff at the joined granularity every unit is modified by exactly one
// of the two ops. Lifting counts a coarse unit as modified when any
// constituent is; a fully pruned unit erases quantization's footprint
// (absorption), in either order.
bool check_disjoint(const ApplicationMask& mask_f1,
                    const ApplicationMask& mask_f2, Orientation orientation,
                    const LayeredModel& m);

struct UnitPartition {
  Level level = Level::Layer;
  std::vector<Unit> g1;  // f1-modified only when f1 runs first
  std::vector<Unit> g2;  // f1-modified only when f1 runs second
  std::vector<Unit> g3;  // f1-modified in neither order
  std::vector<Unit> g4;  // f1-modified in both orders
};

// Classify every unit at the joined granularity by f1's footprint under the
// two orders. Requires disjoint selectivity in both orders; throws
// domain_error otherwise (interference is the tool for that regime).
UnitPartition partition_units(const LayeredModel& m, const CompressionOp& f1,
                              const CompressionOp& f2);

// Same, from pipeline masks already in hand (first-index op ran first).
UnitPartition partition_from_masks(const LayeredModel& m,
                                   const ApplicationMask& f1_when_first,
                                   const ApplicationMask& f2_when_second,
                                   const ApplicationMask& f2_when_first,
                                   const ApplicationMask& f1_when_second);

struct InterferenceDetail {
  double sum_norms = 0.0;  // canonical: sum over units of squared norms
  double norm_sum = 0.0;   // per-layer squared norm of the summed deltas
};

// How much running f1 beforehand changes f2's own error footprint:
// sum over f2's selected units u (under the f1-then-f2 pipeline) of
// || e_{f2 o f1}(u) - e_{f2}(u) ||_F^2, errors taken against the original.
InterferenceDetail interference_detail(const LayeredModel& m,
                                       const Metric& metric,
                                       const CompressionOp& f1,
                                       const CompressionOp& f2);

double interference(const LayeredModel& m, const Metric& metric,
                    const CompressionOp& f1, const CompressionOp& f2);

struct OrderReport {
  double m_f1_first = 0.0;  // M((f2 o f1)(phi))
  double m_f2_first = 0.0;  // M((f1 o f2)(phi))
  double pg = 0.0;
  double coa = 0.0;         // m_f1_first - m_f2_first
  CerResult cer_f1;
  CerResult cer_f2;
  double interference_forward = 0.0;   // f1 first
  double interference_backward = 0.0;  // f2 first
  std::optional<UnitPartition> partition;
  bool disjoint = false;
};

OrderReport order_report(const LayeredModel& m, const Metric& metric,
                         const CompressionOp& f1, const CompressionOp& f2,
                         const QuantCurve& curve);

}  // namespace ordlab
