#include "ordlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace ordlab {

QuantCurve build_quant_curve(const LayeredModel& m, const Metric& metric,
                             const std::vector<int>& bits, Rounding rounding,
                             ScaleScope scope, std::uint64_t seed) {
  if (bits.size() < 2)
    throw std::invalid_argument("quant curve needs at least two bit-widths");
  QuantCurve curve;
  for (int b : bits) {
    const CompressionOp op = quant_uniform(b, rounding, scope, seed);
    const Applied a = apply(op, m, m);
    QuantCurvePoint pt;
    pt.bits = b;
    pt.ratio = 16.0 / b;
    pt.perf_raw = evaluate(a.model, m, metric);
    curve.points.push_back(pt);
  }
  std::sort(curve.points.begin(), curve.points.end(),
            [](const QuantCurvePoint& a, const QuantCurvePoint& b) {
              return a.ratio < b.ratio;
            });
  for (std::size_t k = 0; k + 1 < curve.points.size(); ++k) {
    if (curve.points[k].ratio == curve.points[k + 1].ratio)
      throw std::invalid_argument("quant curve has duplicate bit-widths");
  }
  // Lower monotone envelope: performance may not rise with the ratio.
  double floor_perf = curve.points.front().perf_raw;
  for (QuantCurvePoint& pt : curve.points) {
    floor_perf = std::min(floor_perf, pt.perf_raw);
    pt.perf = floor_perf;
  }
  return curve;
}

CerResult cer_for_performance(const QuantCurve& curve, double performance) {
  const auto& pts = curve.points;
  if (pts.size() < 2)
    throw std::invalid_argument("cer: curve needs at least two points");
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    if (!(pts[k].ratio < pts[k + 1].ratio))
      throw std::invalid_argument("cer: curve ratios must be strictly ascending");
    if (pts[k].perf < pts[k + 1].perf)
      throw std::invalid_argument("cer: curve must be monotone; repair it first");
  }

  CerResult r;
  if (performance > pts.front().perf) {
    r.value = pts.front().ratio;
    r.clamped = true;
    return r;
  }
  if (performance < pts.back().perf) {
    // Below the worst point: extend the last segment.
    const QuantCurvePoint& a = pts[pts.size() - 2];
    const QuantCurvePoint& b = pts.back();
    r.extrapolated = true;
    if (a.perf == b.perf) {
      r.ambiguous = true;
      r.value = b.ratio;
      return r;
    }
    const double slope = (b.perf - a.perf) / (b.ratio - a.ratio);
    r.value = b.ratio + (performance - b.perf) / slope;
    return r;
  }
  std::size_t k = 0;
  while (pts[k].perf > performance) ++k;
  if (pts[k].perf == performance) {
    // Knot hit. A flat run at this value maps a whole ratio interval to the
    // target; report its midpoint and say so.
    std::size_t last = k;
    while (last + 1 < pts.size() && pts[last + 1].perf == performance) ++last;
    r.value = 0.5 * (pts[k].ratio + pts[last].ratio);
    r.ambiguous = last > k;
    return r;
  }
  r.value = pts[k - 1].ratio + (pts[k].ratio - pts[k - 1].ratio) *
                                   (pts[k - 1].perf - performance) /
                                   (pts[k - 1].perf - pts[k].perf);
  return r;
}

CerResult cer_detail(const LayeredModel& m, const Metric& metric,
                     const CompressionOp& f, const QuantCurve& curve) {
  const Applied a = apply(f, m, m);
  return cer_for_performance(curve, evaluate(a.model, m, metric));
}

double cer(const LayeredModel& m, const Metric& metric, const CompressionOp& f,
           const QuantCurve& curve) {
  return cer_detail(m, metric, f, curve).value;
}

double performance_gap(const LayeredModel& m, const Metric& metric,
                       const CompressionOp& f1, const CompressionOp& f2) {
  const Applied a1 = apply(f1, m, m);
  const Applied a2 = apply(f2, m, m);
  return evaluate(a1.model, m, metric) - evaluate(a2.model, m, metric);
}

PipelineResult run_pipeline(const LayeredModel& m, const Metric& metric,
                            const std::vector<CompressionOp>& ops) {
  PipelineResult r{m, {}, 0.0};
  for (const CompressionOp& op : ops) {
    Applied a = apply(op, r.model, m);
    r.model = std::move(a.model);
    r.masks.push_back(std::move(a.mask));
  }
  r.score = evaluate(r.model, m, metric);
  return r;
}

double coa(const LayeredModel& m, const Metric& metric,
           const CompressionOp& f1, const CompressionOp& f2) {
  const PipelineResult f1_first = run_pipeline(m, metric, {f1, f2});
  const PipelineResult f2_first = run_pipeline(m, metric, {f2, f1});
  return f1_first.score - f2_first.score;
}

namespace {

// Effective per-order indicators at `level`: lifted masks with pruning
// absorption (a fully pruned unit erases the quantization footprint).
struct EffectivePair {
  std::vector<std::uint8_t> a;
  std::vector<std::uint8_t> b;
};

EffectivePair effective_masks(const ApplicationMask& ma,
                              const ApplicationMask& mb,
                              const LayeredModel& m, Level level) {
  EffectivePair e{lift_mask(ma, m, level), lift_mask(mb, m, level)};
  if (is_prune(ma.family) && mb.family == OpFamily::QuantUniform) {
    const std::vector<std::uint8_t> gone = fully_covered(ma, m, level);
    for (std::size_t j = 0; j < e.b.size(); ++j)
      if (gone[j]) e.b[j] = 0;
  }
  if (is_prune(mb.family) && ma.family == OpFamily::QuantUniform) {
    const std::vector<std::uint8_t> gone = fully_covered(mb, m, level);
    for (std::size_t j = 0; j < e.a.size(); ++j)
      if (gone[j]) e.a[j] = 0;
  }
  return e;
}

}  // namespace

bool check_disjoint(const ApplicationMask& mask_f1,
                    const ApplicationMask& mask_f2, Orientation,
                    const LayeredModel& m) {
  const Level level = lut_level(mask_f1.level, mask_f2.level);
  const EffectivePair e = effective_masks(mask_f1, mask_f2, m, level);
  for (std::size_t j = 0; j < e.a.size(); ++j)
    if (e.a[j] + e.b[j] != 1) return false;
  return true;
}

UnitPartition partition_from_masks(const LayeredModel& m,
                                   const ApplicationMask& f1_when_first,
                                   const ApplicationMask& f2_when_second,
                                   const ApplicationMask& f2_when_first,
                                   const ApplicationMask& f1_when_second) {
  if (!check_disjoint(f1_when_first, f2_when_second, Orientation::F1First, m) ||
      !check_disjoint(f1_when_second, f2_when_first, Orientation::F2First, m)) {
    throw std::domain_error(
        "partition_units: pair is not disjoint at the joined granularity; "
        "use interference() for overlapping pairs");
  }
  const Level level = lut_level(f1_when_first.level, f2_when_second.level);
  const EffectivePair o1 =
      effective_masks(f1_when_first, f2_when_second, m, level);
  const EffectivePair o2 =
      effective_masks(f1_when_second, f2_when_first, m, level);

  UnitPartition part;
  part.level = level;
  const std::vector<Unit> units = units_at(m, level);
  for (std::size_t j = 0; j < units.size(); ++j) {
    const bool first = o1.a[j] != 0;   // f1's footprint when it runs first
    const bool second = o2.a[j] != 0;  // and when it runs second
    if (first && !second) part.g1.push_back(units[j]);
    else if (!first && second) part.g2.push_back(units[j]);
    else if (!first && !second) part.g3.push_back(units[j]);
    else part.g4.push_back(units[j]);
  }
  return part;
}

UnitPartition partition_units(const LayeredModel& m, const CompressionOp& f1,
                              const CompressionOp& f2) {
  const Applied a1 = apply(f1, m, m);
  const Applied b1 = apply(f2, a1.model, m);
  const Applied a2 = apply(f2, m, m);
  const Applied b2 = apply(f1, a2.model, m);
  return partition_from_masks(m, a1.mask, b1.mask, a2.mask, b2.mask);
}

InterferenceDetail interference_detail(const LayeredModel& m,
                                       const Metric& metric,
                                       const CompressionOp& f1,
                                       const CompressionOp& f2) {
  (void)metric;  // errors are compared directly; no score is involved
  const Applied first = apply(f1, m, m);
  const Applied both = apply(f2, first.model, m);
  const Applied solo = apply(f2, m, m);

  const Level level = both.mask.level;
  std::vector<std::uint8_t> selected = both.mask.on;
  if (is_prune(f1.family) && f2.family == OpFamily::QuantUniform) {
    const std::vector<std::uint8_t> gone = fully_covered(first.mask, m, level);
    for (std::size_t j = 0; j < selected.size(); ++j)
      if (gone[j]) selected[j] = 0;
  }

  InterferenceDetail out;
  const std::vector<Unit> units = units_at(m, level);
  std::map<int, Matrix> layer_sums;
  for (std::size_t j = 0; j < units.size(); ++j) {
    if (!selected[j]) continue;
    const Matrix delta = unit_error(m, both.model, units[j]) -
                         unit_error(m, solo.model, units[j]);
    out.sum_norms += frob_norm_sq(delta);
    auto [it, fresh] = layer_sums.try_emplace(units[j].layer, delta);
    if (!fresh) it->second += delta;
  }
  for (const auto& [layer, sum] : layer_sums) out.norm_sum += frob_norm_sq(sum);
  return out;
}

double interference(const LayeredModel& m, const Metric& metric,
                    const CompressionOp& f1, const CompressionOp& f2) {
  return interference_detail(m, metric, f1, f2).sum_norms;
}

OrderReport order_report(const LayeredModel& m, const Metric& metric,
                         const CompressionOp& f1, const CompressionOp& f2,
                         const QuantCurve& curve) {
  OrderReport r;
  const PipelineResult p1 = run_pipeline(m, metric, {f1, f2});
  const PipelineResult p2 = run_pipeline(m, metric, {f2, f1});
  r.m_f1_first = p1.score;
  r.m_f2_first = p2.score;
  r.coa = p1.score - p2.score;
  r.pg = performance_gap(m, metric, f1, f2);
  r.cer_f1 = cer_detail(m, metric, f1, curve);
  r.cer_f2 = cer_detail(m, metric, f2, curve);
  r.interference_forward = interference(m, metric, f1, f2);
  r.interference_backward = interference(m, metric, f2, f1);
  r.disjoint =
      check_disjoint(p1.masks[0], p1.masks[1], Orientation::F1First, m) &&
      check_disjoint(p2.masks[1], p2.masks[0], Orientation::F2First, m);
  if (r.disjoint)
    r.partition = partition_from_masks(m, p1.masks[0], p1.masks[1],
                                       p2.masks[0], p2.masks[1]);
  return r;
}

}  // namespace ordlab
