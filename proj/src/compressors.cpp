#include "ordlab/compressors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace ordlab {

const char* family_name(OpFamily f) {
  switch (f) {
    case OpFamily::PruneUnstructured: return "prune-elem";
    case OpFamily::PruneRow: return "prune-row";
    case OpFamily::PruneLayer: return "prune-layer";
    case OpFamily::QuantUniform: return "quant";
    case OpFamily::Share: return "share";
  }
  return "?";
}

bool is_prune(OpFamily f) {
  return f == OpFamily::PruneUnstructured || f == OpFamily::PruneRow ||
         f == OpFamily::PruneLayer;
}

std::string CompressionOp::name() const {
  char buf[96];
  if (is_prune(family)) {
    std::snprintf(buf, sizeof buf, "%s(p=%g%s)", family_name(family), p,
                  score == PruneScore::Magnitude ? ",mag" : "");
  } else if (family == OpFamily::QuantUniform) {
    std::snprintf(buf, sizeof buf, "quant(b=%d,%s,%s%s%s)", bits,
                  scope == ScaleScope::PerTensor ? "tensor" : "row",
                  rounding == Rounding::Nearest ? "nearest" : "stoch",
                  rotate ? ",rot" : "",
                  calibration == CalibrationMode::Current ? ",cur" : "");
  } else {
    std::snprintf(buf, sizeof buf, "share(k=%d)", share_group);
  }
  return buf;
}

CompressionOp prune_unstructured(double p, PruneScore score) {
  CompressionOp op;
  op.family = OpFamily::PruneUnstructured;
  op.p = p;
  op.score = score;
  return op;
}

CompressionOp prune_row(double p, PruneScore score) {
  CompressionOp op = prune_unstructured(p, score);
  op.family = OpFamily::PruneRow;
  return op;
}

CompressionOp prune_layer(double p, PruneScore score) {
  CompressionOp op = prune_unstructured(p, score);
  op.family = OpFamily::PruneLayer;
  return op;
}

CompressionOp quant_uniform(int bits, Rounding rounding, ScaleScope scope,
                            std::uint64_t seed) {
  CompressionOp op;
  op.family = OpFamily::QuantUniform;
  op.bits = bits;
  op.rounding = rounding;
  op.scope = scope;
  op.seed = seed;
  return op;
}

CompressionOp share_layers(int group) {
  CompressionOp op;
  op.family = OpFamily::Share;
  op.share_group = group;
  return op;
}

Level granularity(const CompressionOp& op) {
  switch (op.family) {
    case OpFamily::PruneUnstructured: return Level::Element;
    case OpFamily::PruneRow: return Level::Row;
    case OpFamily::PruneLayer: return Level::Layer;
    case OpFamily::QuantUniform:
      return op.scope == ScaleScope::PerRow ? Level::Row : Level::Layer;
    case OpFamily::Share: return Level::Layer;
  }
  throw std::logic_error("granularity: unknown family");
}

double nominal_ratio(const CompressionOp& op) {
  if (is_prune(op.family)) return 1.0 / (1.0 - op.p);
  if (op.family == OpFamily::QuantUniform) return 16.0 / op.bits;
  return static_cast<double>(op.share_group);
}

std::size_t ApplicationMask::count() const {
  return static_cast<std::size_t>(std::count(on.begin(), on.end(), 1));
}

namespace {
std::vector<int> scope_layers(const CompressionOp& op, const LayeredModel& m);
}

std::size_t scoped_unit_count(const CompressionOp& op, const LayeredModel& m) {
  const Level level = granularity(op);
  std::size_t total = 0;
  for (int i : scope_layers(op, m)) {
    switch (level) {
      case Level::Layer: total += 1; break;
      case Level::Row: total += static_cast<std::size_t>(m.rows(i)); break;
      default:
        total += static_cast<std::size_t>(m.rows(i)) *
                 static_cast<std::size_t>(m.cols(i));
    }
  }
  return total;
}

namespace {

std::vector<int> scope_layers(const CompressionOp& op, const LayeredModel& m) {
  if (op.layers.empty()) {
    std::vector<int> all(m.layer_count());
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  std::vector<int> out = op.layers;
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (out[k] < 0 || out[k] >= m.layer_count())
      throw std::invalid_argument("op layer index out of range");
    if (k > 0 && out[k] <= out[k - 1])
      throw std::invalid_argument("op layers must be strictly ascending");
  }
  return out;
}

void validate(const CompressionOp& op) {
  if (is_prune(op.family)) {
    if (!(op.p > 0.0 && op.p < 1.0))
      throw std::invalid_argument("pruning fraction must satisfy 0 < p < 1");
  } else if (op.family == OpFamily::QuantUniform) {
    if (op.bits < 2 || op.bits > 16)
      throw std::invalid_argument("quantization bits must be in [2, 16]");
  } else if (op.family == OpFamily::Share) {
    if (op.share_group < 2)
      throw std::invalid_argument("share group size must be at least 2");
  }
}

void check_same_architecture(const LayeredModel& m, const LayeredModel& original) {
  if (m.dims() != original.dims())
    throw std::invalid_argument("apply: model and reference dims differ");
}

double removal_score(const CompressionOp& op, const LayeredModel& m,
                     const Unit& u, const Matrix& product,
                     const std::vector<double>& input_row_sq) {
  const Matrix& w = m.layer(u.layer).weights;
  if (op.score == PruneScore::Magnitude) {
    switch (u.level) {
      case Level::Layer: return w.squaredNorm();
      case Level::Row: return w.row(u.row).squaredNorm();
      default: return w(u.row, u.col) * w(u.row, u.col);
    }
  }
  switch (u.level) {
    case Level::Layer: return product.squaredNorm();
    case Level::Row: return product.row(u.row).squaredNorm();
    default:
      return w(u.row, u.col) * w(u.row, u.col) * input_row_sq[u.col];
  }
}

bool slice_is_zero(const LayeredModel& m, const Unit& u) {
  const Matrix& w = m.layer(u.layer).weights;
  switch (u.level) {
    case Level::Layer: return w.isZero(0.0);
    case Level::Row: return w.row(u.row).isZero(0.0);
    default: return w(u.row, u.col) == 0.0;
  }
}

void zero_slice(LayeredModel& m, const Unit& u) {
  Matrix& w = m.layer(u.layer).weights;
  switch (u.level) {
    case Level::Layer: w.setZero(); break;
    case Level::Row: w.row(u.row).setZero(); break;
    default: w(u.row, u.col) = 0.0;
  }
}

Applied apply_prune(const CompressionOp& op, const LayeredModel& m) {
  const Level level = granularity(op);
  const std::vector<int> layers = scope_layers(op, m);
  const std::vector<std::uint8_t> in_scope = [&] {
    std::vector<std::uint8_t> s(m.layer_count(), 0);
    for (int i : layers) s[i] = 1;
    return s;
  }();

  // Per-layer products and squared input-row norms back the MinError scores;
  // a unit's score is the squared output change its removal causes.
  std::vector<Matrix> products(m.layer_count());
  std::vector<std::vector<double>> input_row_sq(m.layer_count());
  if (op.score == PruneScore::MinError) {
    for (int i : layers) {
      const Matrix a = layer_input(m, i, m.activation(i));
      products[i] = m.layer(i).weights * a;
      input_row_sq[i].resize(a.rows());
      for (int r = 0; r < a.rows(); ++r)
        input_row_sq[i][r] = a.row(r).squaredNorm();
    }
  }

  const std::vector<Unit> all_units = units_at(m, level);
  std::vector<std::size_t> candidates;
  std::size_t scoped_total = 0;
  for (std::size_t k = 0; k < all_units.size(); ++k) {
    if (!in_scope[all_units[k].layer]) continue;
    ++scoped_total;
    if (!slice_is_zero(m, all_units[k])) candidates.push_back(k);
  }

  const long long want = std::llround(op.p * static_cast<double>(scoped_total));
  if (want < 1)
    throw std::invalid_argument("pruning fraction selects no unit at this granularity");
  if (static_cast<std::size_t>(want) >= scoped_total)
    throw std::invalid_argument("pruning fraction selects every unit at this granularity");
  if (static_cast<std::size_t>(want) > candidates.size())
    throw std::invalid_argument("pruning fraction exceeds the remaining nonzero units");

  std::vector<double> scores(all_units.size(), 0.0);
  for (std::size_t k : candidates) {
    const Unit& u = all_units[k];
    scores[k] = removal_score(op, m, u, products[u.layer], input_row_sq[u.layer]);
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](std::size_t a, std::size_t b) {
                     if (scores[a] != scores[b]) return scores[a] < scores[b];
                     return a < b;
                   });

  Applied out{m, {level, op.family, std::vector<std::uint8_t>(all_units.size(), 0)}};
  for (long long k = 0; k < want; ++k) {
    zero_slice(out.model, all_units[candidates[k]]);
    out.mask.on[candidates[k]] = 1;
  }
  out.model.finalize();
  return out;
}

void rotate_layer(LayeredModel& m, int i) {
  LayerState& ls = m.layer(i);
  if (ls.rotated) throw std::invalid_argument("layer is already rotated");
  const int out_dim = static_cast<int>(ls.weights.rows());
  const int in_dim = static_cast<int>(ls.weights.cols());
  ls.weights = hadamard(out_dim) * ls.weights * hadamard(in_dim).transpose();
  ls.rotated = true;
}

std::vector<double> activation_scales(const Matrix& a, int bits,
                                      ScaleScope scope) {
  const double qmax = static_cast<double>((1 << (bits - 1)) - 1);
  if (scope == ScaleScope::PerTensor)
    return {a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff() / qmax};
  std::vector<double> s(a.rows());
  for (int r = 0; r < a.rows(); ++r)
    s[r] = a.cols() == 0 ? 0.0 : a.row(r).cwiseAbs().maxCoeff() / qmax;
  return s;
}

Applied apply_quant(const CompressionOp& op, const LayeredModel& m) {
  const std::vector<int> layers = scope_layers(op, m);
  Applied out{m, {granularity(op), op.family, {}}};
  for (int i : layers) {
    // Current-mode calibration freezes activation scales from the model as
    // it stands now; they are computed before this op touches anything.
    std::vector<double> frozen;
    if (op.calibration == CalibrationMode::Current) {
      Matrix a = m.activation(i);
      if (op.rotate || m.layer(i).rotated)
        a = hadamard(static_cast<int>(a.rows())) * a;
      frozen = activation_scales(a, op.bits, op.scope);
    }
    if (op.rotate) rotate_layer(out.model, i);
    LayerState& ls = out.model.layer(i);
    ls.weights = quantize_matrix(ls.weights, op.bits, op.scope, op.rounding,
                                 mix_seed(op.seed, 0x3E, i));
    ActQuant aq;
    aq.bits = op.bits;
    aq.rounding = op.rounding;
    aq.scope = op.scope;
    aq.seed = op.seed;
    aq.frozen_scales = std::move(frozen);
    ls.act_quant = aq;
  }
  out.model.finalize();

  const std::vector<Unit> all_units = units_at(m, out.mask.level);
  out.mask.on.assign(all_units.size(), 0);
  std::vector<std::uint8_t> in_scope(m.layer_count(), 0);
  for (int i : layers) in_scope[i] = 1;
  for (std::size_t k = 0; k < all_units.size(); ++k)
    if (in_scope[all_units[k].layer]) out.mask.on[k] = 1;
  return out;
}

Applied apply_share(const CompressionOp& op, const LayeredModel& m) {
  const std::vector<int> layers = scope_layers(op, m);
  const int k = op.share_group;
  Applied out{m, {Level::Layer, OpFamily::Share,
                  std::vector<std::uint8_t>(unit_count(m, Level::Layer), 0)}};
  for (std::size_t g = 0; g + k <= layers.size(); g += k) {
    for (int j = 1; j < k; ++j) {
      if (layers[g + j] != layers[g] + j)
        throw std::invalid_argument("share group layers must be consecutive");
      if (m.layer(layers[g + j]).weights.rows() != m.layer(layers[g]).weights.rows() ||
          m.layer(layers[g + j]).weights.cols() != m.layer(layers[g]).weights.cols())
        throw std::invalid_argument("share group layers must have equal shapes");
    }
    Matrix mean = Matrix::Zero(m.layer(layers[g]).weights.rows(),
                               m.layer(layers[g]).weights.cols());
    for (int j = 0; j < k; ++j) mean += m.layer(layers[g + j]).weights;
    mean /= static_cast<double>(k);
    for (int j = 0; j < k; ++j) {
      out.model.layer(layers[g + j]).weights = mean;
      out.mask.on[unit_index(m, {layers[g + j], -1, -1, Level::Layer})] = 1;
    }
  }
  if (out.mask.count() == 0)
    throw std::invalid_argument("share: no complete group in scope");
  out.model.finalize();
  return out;
}

}  // namespace

Applied apply(const CompressionOp& op, const LayeredModel& m,
              const LayeredModel& original) {
  validate(op);
  check_same_architecture(m, original);
  switch (op.family) {
    case OpFamily::QuantUniform: return apply_quant(op, m);
    case OpFamily::Share: return apply_share(op, m);
    default: return apply_prune(op, m);
  }
}

Applied apply_with_selection(const CompressionOp& op, const LayeredModel& m,
                             const std::vector<Unit>& selection) {
  validate(op);
  if (!is_prune(op.family))
    throw std::invalid_argument("apply_with_selection: pruning families only");
  const Level level = granularity(op);
  Applied out{m, {level, op.family,
                  std::vector<std::uint8_t>(unit_count(m, level), 0)}};
  for (const Unit& u : selection) {
    if (u.level != level)
      throw std::invalid_argument("apply_with_selection: unit level mismatch");
    zero_slice(out.model, u);
    out.mask.on[unit_index(m, u)] = 1;
  }
  out.model.finalize();
  return out;
}

LayeredModel rotate_model(const LayeredModel& m) {
  LayeredModel out = m;
  for (int i = 0; i < out.layer_count(); ++i) rotate_layer(out, i);
  out.finalize();
  return out;
}

std::vector<std::uint8_t> lift_mask(const ApplicationMask& mask,
                                    const LayeredModel& m, Level target) {
  if (static_cast<int>(target) < static_cast<int>(mask.level))
    throw std::invalid_argument("lift_mask: target must be at least as coarse");
  if (target == mask.level) return mask.on;
  std::vector<std::uint8_t> out(unit_count(m, target), 0);
  const std::vector<Unit> fine = units_at(m, mask.level);
  for (std::size_t k = 0; k < fine.size(); ++k) {
    if (!mask.on[k]) continue;
    Unit coarse = fine[k];
    coarse.level = target;
    coarse.col = -1;
    if (target == Level::Layer) coarse.row = -1;
    out[unit_index(m, coarse)] = 1;
  }
  return out;
}

std::vector<std::uint8_t> fully_covered(const ApplicationMask& mask,
                                        const LayeredModel& m, Level target) {
  if (static_cast<int>(target) < static_cast<int>(mask.level)) {
    // Finer target: a fine unit is covered exactly when the slice containing
    // it is on.
    const std::vector<Unit> fine = units_at(m, target);
    std::vector<std::uint8_t> out(fine.size(), 0);
    for (std::size_t k = 0; k < fine.size(); ++k) {
      Unit coarse = fine[k];
      coarse.level = mask.level;
      if (mask.level == Level::Layer) coarse.row = -1;
      if (mask.level != Level::Element) coarse.col = -1;
      out[k] = mask.on[unit_index(m, coarse)];
    }
    return out;
  }
  std::vector<std::size_t> hit(unit_count(m, target), 0);
  std::vector<std::size_t> total(hit.size(), 0);
  const std::vector<Unit> fine = units_at(m, mask.level);
  for (std::size_t k = 0; k < fine.size(); ++k) {
    Unit coarse = fine[k];
    coarse.level = target;
    coarse.col = -1;
    if (target == Level::Layer) coarse.row = -1;
    const std::size_t j = unit_index(m, coarse);
    ++total[j];
    if (mask.on[k]) ++hit[j];
  }
  std::vector<std::uint8_t> out(hit.size(), 0);
  for (std::size_t j = 0; j < out.size(); ++j)
    out[j] = hit[j] == total[j] && total[j] > 0;
  return out;
}

QuantErrorStats quant_error_stats(const CompressionOp& op,
                                  const LayeredModel& m, int trials,
                                  std::uint64_t seed) {
  if (op.family != OpFamily::QuantUniform)
    throw std::invalid_argument("quant_error_stats: quantization ops only");
  if (op.rounding != Rounding::Stochastic)
    throw std::invalid_argument(
        "quant_error_stats: nearest rounding has no distribution to sample");
  if (trials < 1) throw std::invalid_argument("quant_error_stats: trials >= 1");

  std::vector<Matrix> sum(m.layer_count()), sumsq(m.layer_count());
  for (int i = 0; i < m.layer_count(); ++i) {
    sum[i] = Matrix::Zero(m.rows(i), m.calib().cols());
    sumsq[i] = sum[i];
  }
  for (int t = 0; t < trials; ++t) {
    CompressionOp trial_op = op;
    trial_op.seed = mix_seed(seed, 0x7A, t);
    const Applied a = apply(trial_op, m, m);
    for (int i = 0; i < m.layer_count(); ++i) {
      const Matrix e = layer_error(m, a.model, i);
      sum[i] += e;
      sumsq[i] += e.cwiseProduct(e);
    }
  }

  QuantErrorStats stats;
  stats.mean.resize(m.layer_count());
  double pooled = 0.0;
  std::size_t entries = 0;
  for (int i = 0; i < m.layer_count(); ++i) {
    stats.mean[i] = sum[i] / static_cast<double>(trials);
    if (trials > 1) {
      const Matrix centered =
          sumsq[i] - sum[i].cwiseProduct(sum[i]) / static_cast<double>(trials);
      pooled += centered.cwiseMax(0.0).sum() / static_cast<double>(trials - 1);
    }
    entries += static_cast<std::size_t>(sum[i].size());
  }
  stats.variance = entries == 0 ? 0.0 : pooled / static_cast<double>(entries);
  return stats;
}

RotationPruningError rotation_pruning_error(const LayeredModel& m,
                                            const CompressionOp& prune_op) {
  if (!is_prune(prune_op.family))
    throw std::invalid_argument("rotation_pruning_error: pruning ops only");
  const Applied plain = apply(prune_op, m, m);
  const LayeredModel rotated = rotate_model(m);

  std::vector<Unit> selection;
  const std::vector<Unit> all_units = units_at(m, plain.mask.level);
  for (std::size_t k = 0; k < all_units.size(); ++k)
    if (plain.mask.on[k]) selection.push_back(all_units[k]);

  const Applied forced = apply_with_selection(prune_op, rotated, selection);
  const Applied reselect = apply(prune_op, rotated, m);

  RotationPruningError out;
  for (int i = 0; i < m.layer_count(); ++i) {
    const Matrix e_forced = layer_error(m, forced.model, i);
    out.matrix_wise +=
        frob_norm_sq(Matrix(e_forced - layer_error(m, plain.model, i)));
    out.element_wise +=
        frob_norm_sq(Matrix(layer_error(m, reselect.model, i) - e_forced));
  }
  return out;
}

}  // namespace ordlab
