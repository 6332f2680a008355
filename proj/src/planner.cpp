#include "ordlab/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

namespace ordlab {

BruteForceResult brute_force_order(const LayeredModel& m, const Metric& metric,
                                   const std::vector<CompressionOp>& ops) {
  if (ops.empty())
    throw std::invalid_argument("brute_force_order: at least one op required");
  if (ops.size() > 6)
    throw std::invalid_argument(
        "brute_force_order: more than six ops; use progressive_order");

  std::vector<int> idx(ops.size());
  std::iota(idx.begin(), idx.end(), 0);

  BruteForceResult out;
  out.best_score = -std::numeric_limits<double>::infinity();
  std::size_t best_row = 0;
  do {
    std::vector<CompressionOp> seq;
    seq.reserve(idx.size());
    for (int i : idx) seq.push_back(ops[i]);
    const double score = run_pipeline(m, metric, seq).score;
    out.table.push_back({idx, score});
    if (score > out.best_score) {
      out.best_score = score;
      best_row = out.table.size() - 1;
    }
  } while (std::next_permutation(idx.begin(), idx.end()));

  for (int i : out.table[best_row].order) out.best.steps.push_back(ops[i]);
  return out;
}

Plan progressive_order(const LayeredModel& m, const Metric& metric,
                       const std::vector<CompressionOp>& ops,
                       const QuantCurve& curve) {
  if (ops.empty())
    throw std::invalid_argument("progressive_order: at least one op required");

  struct Entry {
    double cer;
    double nominal;
    int family;
    std::size_t pos;
    bool flagged;
  };
  std::vector<Entry> entries;
  for (std::size_t k = 0; k < ops.size(); ++k) {
    const CerResult d = cer_detail(m, metric, ops[k], curve);
    entries.push_back({d.value, nominal_ratio(ops[k]),
                       static_cast<int>(ops[k].family), k, d.extrapolated});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.cer != b.cer) return a.cer < b.cer;
    if (a.nominal != b.nominal) return a.nominal < b.nominal;
    if (a.family != b.family) return a.family < b.family;
    return a.pos < b.pos;
  });

  Plan plan;
  for (const Entry& e : entries) {
    plan.steps.push_back(ops[e.pos]);
    plan.predicted_rank.push_back(e.cer);
    plan.cer_warning = plan.cer_warning || e.flagged;
  }
  return plan;
}

std::vector<MultiStageRow> multi_stage(
    const LayeredModel& m, const Metric& metric, double total_p,
    const std::vector<std::pair<double, double>>& splits,
    const CompressionOp& quant, const CompressionOp& prune_proto) {
  if (splits.empty())
    throw std::invalid_argument("multi_stage: at least one split required");
  if (!is_prune(prune_proto.family))
    throw std::invalid_argument("multi_stage: prune prototype required");
  for (const auto& [p1, p2] : splits) {
    if (!(p1 > 0.0 && p2 > 0.0))
      throw std::invalid_argument("multi_stage: stage fractions must be positive");
    if (std::abs(p1 + p2 - total_p) > 1e-9)
      throw std::invalid_argument("multi_stage: split does not sum to total_p");
  }

  std::map<std::pair<double, double>, double> memo;
  const auto directed_score = [&](double a, double b) {
    const auto key = std::make_pair(a, b);
    const auto it = memo.find(key);
    if (it != memo.end()) return it->second;
    CompressionOp first = prune_proto, second = prune_proto;
    first.p = a;
    // Stage two re-scores the current model, where stage-one zeros rank
    // first at zero cost; its target is therefore the cumulative fraction,
    // not the increment, or the realized sparsity would stall at max(a, b).
    second.p = total_p;
    const double s = run_pipeline(m, metric, {first, quant, second}).score;
    memo.emplace(key, s);
    return s;
  };

  std::vector<MultiStageRow> rows;
  for (const auto& [p1, p2] : splits) {
    MultiStageRow row;
    row.p1 = p1;
    row.p2 = p2;
    row.score = directed_score(p1, p2);
    row.advantage = row.score - directed_score(p2, p1);
    rows.push_back(row);
  }
  return rows;
}

MpqResult mpq_orderings(const LayeredModel& m, const Metric& metric,
                        double avg_bits, const std::vector<int>& bit_menu) {
  if (bit_menu.empty())
    throw std::invalid_argument("mpq_orderings: empty bit menu");
  std::vector<int> menu = bit_menu;
  std::sort(menu.begin(), menu.end(), std::greater<int>());
  menu.erase(std::unique(menu.begin(), menu.end()), menu.end());
  for (int b : menu)
    if (b < 2 || b > 16)
      throw std::invalid_argument("mpq_orderings: menu bits must be in [2, 16]");

  const int layers = m.layer_count();
  const double budget_real = avg_bits * layers;
  const long long budget = std::llround(budget_real);
  if (std::abs(budget_real - static_cast<double>(budget)) > 1e-9)
    throw std::invalid_argument(
        "mpq_orderings: average bits must yield an integer total");
  if (budget > static_cast<long long>(menu.front()) * layers ||
      budget < static_cast<long long>(menu.back()) * layers)
    throw std::invalid_argument("mpq_orderings: average outside the menu range");

  // Sensitivity proxy: the layer's own reconstruction error at the
  // candidate bit-width, measured on the original model.
  std::vector<std::vector<double>> err(layers,
                                       std::vector<double>(menu.size(), -1.0));
  const auto layer_err = [&](int i, std::size_t j) {
    if (err[i][j] < 0.0) {
      CompressionOp q = quant_uniform(menu[j], Rounding::Nearest,
                                      ScaleScope::PerTensor, 0);
      q.layers = {i};
      const Applied a = apply(q, m, m);
      err[i][j] = frob_norm_sq(layer_error(m, a.model, i));
    }
    return err[i][j];
  };

  std::vector<std::size_t> pick(layers, 0);  // index into menu, start finest
  long long total = static_cast<long long>(menu.front()) * layers;
  while (total > budget) {
    const long long remaining = total - budget;
    int best_layer = -1;
    double best_err = std::numeric_limits<double>::infinity();
    for (int i = 0; i < layers; ++i) {
      const std::size_t j = pick[i];
      if (j + 1 >= menu.size()) continue;
      if (menu[j] - menu[j + 1] > remaining) continue;
      const double e = layer_err(i, j + 1);
      if (e < best_err) {
        best_err = e;
        best_layer = i;
      }
    }
    if (best_layer < 0)
      throw std::invalid_argument(
          "mpq_orderings: no allocation reaches this average from the menu");
    total -= menu[pick[best_layer]] - menu[pick[best_layer] + 1];
    ++pick[best_layer];
  }

  MpqResult out;
  out.allocation.resize(layers);
  for (int i = 0; i < layers; ++i) out.allocation[i] = menu[pick[i]];

  std::vector<CompressionOp> prog;
  for (int b : menu) {
    std::vector<int> group;
    for (int i = 0; i < layers; ++i)
      if (out.allocation[i] == b) group.push_back(i);
    if (group.empty()) continue;
    CompressionOp op =
        quant_uniform(b, Rounding::Nearest, ScaleScope::PerTensor, 0);
    op.layers = group;
    prog.push_back(op);
  }
  std::vector<CompressionOp> regr(prog.rbegin(), prog.rend());

  const PipelineResult prog_run = run_pipeline(m, metric, prog);
  const PipelineResult regr_run = run_pipeline(m, metric, regr);
  out.progressive_score = prog_run.score;
  out.regressive_score = regr_run.score;
  out.coa = out.progressive_score - out.regressive_score;

  std::vector<int> coverage(unit_count(m, Level::Layer), 0);
  for (const ApplicationMask& mask : prog_run.masks)
    for (std::size_t k = 0; k < mask.on.size(); ++k) coverage[k] += mask.on[k];
  out.disjoint = std::all_of(coverage.begin(), coverage.end(),
                             [](int c) { return c == 1; });
  return out;
}

RatioCheck plan_ratio_check(const LayeredModel& m,
                            const std::vector<CompressionOp>& steps) {
  if (steps.empty())
    throw std::invalid_argument("plan_ratio_check: empty pipeline");

  std::vector<std::vector<std::uint8_t>> pruned(m.layer_count());
  for (int i = 0; i < m.layer_count(); ++i)
    pruned[i].assign(static_cast<std::size_t>(m.rows(i)) * m.cols(i), 0);

  std::vector<std::string> notes;
  const auto note = [&](const std::string& s) {
    if (std::find(notes.begin(), notes.end(), s) == notes.end())
      notes.push_back(s);
  };

  LayeredModel cur = m;
  long long claimed = 0;
  bool saw_share = false;
  for (const CompressionOp& op : steps) {
    if (!op.layers.empty() &&
        op.layers.size() != static_cast<std::size_t>(m.layer_count()))
      note("step scoped to a subset of layers");
    if (op.family == OpFamily::Share) {
      saw_share = true;
      const std::size_t scope =
          op.layers.empty() ? m.layer_count() : op.layers.size();
      if (scope % op.share_group != 0) note("incomplete share group");
    }
    const Applied a = apply(op, cur, m);
    if (is_prune(op.family)) {
      const std::vector<Unit> units = units_at(m, a.mask.level);
      for (std::size_t k = 0; k < units.size(); ++k) {
        if (!a.mask.on[k]) continue;
        const Unit& u = units[k];
        const std::size_t cols = static_cast<std::size_t>(m.cols(u.layer));
        std::size_t lo = 0, hi = pruned[u.layer].size();
        if (u.level == Level::Row) {
          lo = u.row * cols;
          hi = lo + cols;
        } else if (u.level == Level::Element) {
          lo = u.row * cols + u.col;
          hi = lo + 1;
        }
        for (std::size_t e = lo; e < hi; ++e) pruned[u.layer][e] = 1;
        claimed += static_cast<long long>(hi - lo);
      }
    }
    cur = a.model;
  }

  long long covered = 0;
  for (const auto& flags : pruned)
    covered += std::count(flags.begin(), flags.end(), 1);
  if (covered < claimed) note("overlapping prune selections");

  double stored_bits = 0.0;
  double original_bits = 0.0;
  bool dedup_seen = false;
  for (int i = 0; i < m.layer_count(); ++i) {
    const double elems = static_cast<double>(m.rows(i)) * m.cols(i);
    original_bits += 16.0 * elems;
    if (i > 0 && cur.layer(i).weights.rows() == cur.layer(i - 1).weights.rows() &&
        cur.layer(i).weights.cols() == cur.layer(i - 1).weights.cols() &&
        cur.layer(i).weights == cur.layer(i - 1).weights) {
      dedup_seen = true;
      continue;  // identical to the stored copy above
    }
    const double survivors =
        elems - static_cast<double>(
                    std::count(pruned[i].begin(), pruned[i].end(), 1));
    const int bits = cur.layer(i).act_quant ? cur.layer(i).act_quant->bits : 16;
    stored_bits += survivors * bits;
  }
  if (saw_share && !dedup_seen) note("share group diverged downstream");

  RatioCheck out;
  out.realized = original_bits / stored_bits;
  out.nominal = 1.0;
  for (const CompressionOp& op : steps) out.nominal *= nominal_ratio(op);
  for (std::size_t k = 0; k < notes.size(); ++k)
    out.exception += (k ? "; " : "") + notes[k];
  out.ok = out.exception.empty() &&
           std::abs(out.realized - out.nominal) <= kRatioTolerance * out.nominal;
  return out;
}

}  // namespace ordlab
