#include "ordlab/theory.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ordlab {

namespace {

void require_clean(const LayeredModel& m, const char* who) {
  for (int i = 0; i < m.layer_count(); ++i)
    if (m.layer(i).rotated || m.layer(i).act_quant)
      throw std::invalid_argument(std::string(who) +
                                  ": original model must be unrotated and "
                                  "carry no activation quantization");
}

// Squared error mass one op alone contributes at unit u. Pruning counts the
// zeroing error of the unit whether or not that unit was selected; the
// other families read theirs off the solo-applied model.
double solo_err_sq(const LayeredModel& m, const CompressionOp& op,
                   const LayeredModel& solo, const Unit& u) {
  if (is_prune(op.family) && u.level == granularity(op)) {
    switch (u.level) {
      case Level::Layer: return frob_norm_sq(m.output(u.layer));
      case Level::Row: return m.output(u.layer).row(u.row).squaredNorm();
      default: {
        const double w = m.layer(u.layer).weights(u.row, u.col);
        return w * w * m.activation(u.layer).row(u.col).squaredNorm();
      }
    }
  }
  return frob_norm_sq(unit_error(m, solo, u));
}

struct OrderEval {
  Applied f1_solo;       // f1 applied to the original
  Applied f2_solo;       // f2 applied to the original
  double s_f1_first;     // score of f1-then-f2
  double s_f2_first;     // score of f2-then-f1
  UnitPartition part;
};

// Runs both orders with selections computed exactly once each, so the
// scores and the partition describe the same four masks.
OrderEval evaluate_orders(const LayeredModel& m, const Metric& metric,
                          const CompressionOp& f1, const CompressionOp& f2) {
  Applied a1 = apply(f1, m, m);
  Applied b1 = apply(f2, a1.model, m);
  Applied a2 = apply(f2, m, m);
  Applied b2 = apply(f1, a2.model, m);
  OrderEval out{std::move(a1), std::move(a2),
                evaluate(b1.model, m, metric), evaluate(b2.model, m, metric),
                {}};
  out.part = partition_from_masks(m, out.f1_solo.mask, b1.mask,
                                  out.f2_solo.mask, b2.mask);
  return out;
}

}  // namespace

Theorem1Result theorem1_check(const TheoremInstance& inst) {
  if (inst.metric.kind != MetricKind::SyntheticExact)
    throw std::invalid_argument(
        "theorem1_check: the identity holds for the exact quadratic metric");
  require_clean(inst.model, "theorem1_check");

  const LayeredModel& m = inst.model;
  const OrderEval ev = evaluate_orders(m, inst.metric, inst.f1, inst.f2);

  Theorem1Result out;
  out.lhs = ev.s_f1_first - ev.s_f2_first;
  out.partition = ev.part;

  double sum_g1 = 0.0, sum_g2 = 0.0;
  for (const Unit& u : out.partition.g1)
    sum_g1 += solo_err_sq(m, inst.f1, ev.f1_solo.model, u) -
              solo_err_sq(m, inst.f2, ev.f2_solo.model, u);
  for (const Unit& u : out.partition.g2)
    sum_g2 += solo_err_sq(m, inst.f1, ev.f1_solo.model, u) -
              solo_err_sq(m, inst.f2, ev.f2_solo.model, u);
  out.rhs = inst.metric.beta * (sum_g2 - sum_g1);
  out.residual = std::abs(out.lhs - out.rhs) / std::max(1.0, std::abs(out.lhs));
  return out;
}

TheoremInstance make_theorem1_instance(std::uint64_t seed) {
  const int depths[3] = {4, 5, 6};
  const int widths[3] = {8, 12, 16};
  const double fracs[3] = {0.2, 0.25, 0.4};
  const int bit_choices[4] = {3, 4, 6, 8};

  const int depth = depths[mix_seed(seed, 0xD0) % 3];
  const std::vector<int> dims(depth + 1, widths[mix_seed(seed, 0xD1) % 3]);

  TheoremInstance inst;
  inst.model = LayeredModel::synthetic(dims, mix_seed(seed, 0x10D));
  inst.f1 = quant_uniform(bit_choices[mix_seed(seed, 0xD2) % 4],
                          Rounding::Nearest, ScaleScope::PerTensor,
                          mix_seed(seed, 0xD3));
  inst.f2 = prune_layer(fracs[mix_seed(seed, 0xD4) % 3]);
  return inst;
}

TheoremInstance make_flip_instance(std::uint64_t seed) {
  TheoremInstance inst;
  // Middle layers tied to one part in a million: far above arithmetic noise,
  // far below the score shift 4-bit quantization induces.
  inst.model = model_with_layer_scores({10, 12, 12, 12, 10},
                                       mix_seed(seed, 0xF11),
                                       {5.0, 1.0, 1.0 + 1e-6, 9.0});
  inst.f1 = quant_uniform(4, Rounding::Nearest, ScaleScope::PerTensor,
                          mix_seed(seed, 0xF12));
  inst.f2 = prune_layer(0.25);
  return inst;
}

Theorem2Result theorem2_experiment(const LayeredModel& m, const Metric& metric,
                                   const CompressionOp& prune,
                                   const std::vector<int>& bits, int trials,
                                   std::uint64_t seed) {
  if (metric.kind != MetricKind::SyntheticExact)
    throw std::invalid_argument(
        "theorem2_experiment: the exact quadratic metric is required");
  require_clean(m, "theorem2_experiment");
  if (!is_prune(prune.family))
    throw std::invalid_argument("theorem2_experiment: first op must prune");
  if (trials < 1)
    throw std::invalid_argument("theorem2_experiment: trials must be >= 1");
  if (bits.size() < 2)
    throw std::invalid_argument(
        "theorem2_experiment: need at least two bit-widths");
  for (std::size_t k = 0; k < bits.size(); ++k) {
    if (bits[k] < 2 || bits[k] > 16)
      throw std::invalid_argument("bit-widths must be in [2, 16]");
    if (k > 0 && bits[k] > bits[k - 1])
      throw std::invalid_argument("bit-widths must be non-ascending");
  }

  ScaleScope scope;
  switch (granularity(prune)) {
    case Level::Layer: scope = ScaleScope::PerTensor; break;
    case Level::Row: scope = ScaleScope::PerRow; break;
    default:
      throw std::invalid_argument(
          "theorem2_experiment: element pruning has no disjoint scale scope");
  }

  std::vector<int> unique_bits;
  for (int b : bits)
    if (unique_bits.empty() || unique_bits.back() != b) unique_bits.push_back(b);

  const QuantCurve curve =
      build_quant_curve(m, metric, kCurveBits, Rounding::Nearest, scope, 0);

  Theorem2Result out;
  out.cer_p = cer_detail(m, metric, prune, curve).value;

  const Applied p_first = apply(prune, m, m);
  double prune_mass = 0.0;
  for (int i = 0; i < m.layer_count(); ++i)
    prune_mass += frob_norm_sq(layer_error(m, p_first.model, i));

  for (int b : unique_bits) {
    // Nearest-rounding pass per bit-width: error-mass ratio for the
    // small-noise premise, plus structural disjointness of the pair.
    const CompressionOp qn = quant_uniform(b, Rounding::Nearest, scope, 0);
    const Applied qn_solo = apply(qn, m, m);
    double quant_mass = 0.0;
    for (int i = 0; i < m.layer_count(); ++i)
      quant_mass += frob_norm_sq(layer_error(m, qn_solo.model, i));
    out.error_ratio = std::max(out.error_ratio, quant_mass / prune_mass);

    const Applied p_after_q = apply(prune, qn_solo.model, m);
    const Applied q_after_p = apply(qn, p_first.model, m);
    partition_from_masks(m, qn_solo.mask, p_after_q.mask, p_first.mask,
                         q_after_p.mask);  // throws unless disjoint

    double sum = 0.0, sumsq = 0.0;
    for (int t = 0; t < trials; ++t) {
      const CompressionOp qt =
          quant_uniform(b, Rounding::Stochastic, scope, mix_seed(seed, 0x72, b, t));
      const Applied q_solo = apply(qt, m, m);
      const Applied qp = apply(prune, q_solo.model, m);
      const Applied pq = apply(qt, p_first.model, m);
      const double advantage =
          evaluate(qp.model, m, metric) - evaluate(pq.model, m, metric);
      sum += advantage;
      sumsq += advantage * advantage;
    }
    const double mean = sum / trials;
    const double var =
        trials > 1 ? std::max(0.0, (sumsq - sum * sum / trials) / (trials - 1))
                   : 0.0;

    Theorem2Point pt;
    pt.bits = b;
    pt.c_q = 16.0 / b;
    pt.cer_diff = out.cer_p - pt.c_q;
    pt.coa_mean = mean;
    pt.coa_se = std::sqrt(var / trials);
    out.points.push_back(pt);
  }

  std::stable_sort(out.points.begin(), out.points.end(),
                   [](const Theorem2Point& a, const Theorem2Point& b) {
                     return a.cer_diff < b.cer_diff;
                   });

  out.monotone = true;
  for (std::size_t k = 1; k < out.points.size(); ++k) {
    const double tol = 2.0 * std::sqrt(out.points[k - 1].coa_se * out.points[k - 1].coa_se +
                                       out.points[k].coa_se * out.points[k].coa_se);
    if (out.points[k].coa_mean < out.points[k - 1].coa_mean - tol)
      out.monotone = false;
  }
  out.assumption_ok = out.error_ratio <= kTheorem2ErrorRatioMax;
  return out;
}

std::vector<ViolationStep> violation_case_explorer(
    const LayeredModel& m, const Metric& metric,
    const CompressionOp& prune_proto, const std::vector<double>& fractions,
    const CompressionOp& quant) {
  if (!is_prune(prune_proto.family))
    throw std::invalid_argument("violation_case_explorer: prune op required");
  if (quant.family != OpFamily::QuantUniform)
    throw std::invalid_argument("violation_case_explorer: quant op required");
  if (fractions.empty())
    throw std::invalid_argument("violation_case_explorer: empty fraction list");
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    if (!(fractions[k] > 0.0 && fractions[k] < 1.0))
      throw std::invalid_argument("fractions must lie in (0, 1)");
    if (k > 0 && fractions[k] <= fractions[k - 1])
      throw std::invalid_argument("fractions must be strictly ascending");
  }

  CompressionOp probe = prune_proto;
  probe.p = fractions.front();
  const double scoped = static_cast<double>(scoped_unit_count(probe, m));
  long long prev_count = 0;
  for (std::size_t k = 0; k < fractions.size(); ++k) {
    const long long count = std::llround(fractions[k] * scoped);
    if (k > 0 && count != prev_count + 1)
      throw std::invalid_argument(
          "violation_case_explorer: consecutive fractions must grow the "
          "selected count by exactly one unit");
    prev_count = count;
  }

  std::vector<ViolationStep> steps;
  for (double p : fractions) {
    CompressionOp op = prune_proto;
    op.p = p;
    const OrderEval ev = evaluate_orders(m, metric, quant, op);

    ViolationStep step;
    step.p = p;
    step.pruned_count = ev.f2_solo.mask.count();
    step.coa = ev.s_f1_first - ev.s_f2_first;
    step.g1_size = ev.part.g1.size();
    if (!steps.empty()) {
      const ViolationStep& prev = steps.back();
      step.transition = step.g1_size < prev.g1_size   ? 1
                        : step.g1_size == prev.g1_size ? 2
                                                       : 3;
      if (step.transition != 3)
        step.coa_ok = step.coa >= prev.coa - kCaseStepTolerance;
    }
    steps.push_back(step);
  }
  return steps;
}

LayeredModel model_with_layer_scores(const std::vector<int>& dims,
                                     std::uint64_t seed,
                                     const std::vector<double>& targets) {
  LayeredModel m = LayeredModel::synthetic(dims, seed);
  if (targets.size() != static_cast<std::size_t>(m.layer_count()))
    throw std::invalid_argument(
        "model_with_layer_scores: one target per layer required");
  for (double t : targets)
    if (!(t > 0.0))
      throw std::invalid_argument(
          "model_with_layer_scores: targets must be positive");

  // relu commutes with positive scaling, so rescaling layer i leaves every
  // earlier layer's product untouched; one forward pass per layer suffices.
  for (int i = 0; i < m.layer_count(); ++i) {
    const double cur = frob_norm_sq(m.output(i));
    if (!(cur > 0.0))
      throw std::runtime_error("model_with_layer_scores: dead layer output");
    m.layer(i).weights *= std::sqrt(targets[i] / cur);
    m.finalize();
  }
  return m;
}

}  // namespace ordlab
