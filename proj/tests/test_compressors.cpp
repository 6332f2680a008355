#include <doctest.h>

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "oracles.hpp"
#include "ordlab/compressors.hpp"

using namespace ordlab;

namespace {

LayeredModel demo_model(std::uint64_t seed = 17) {
  return LayeredModel::synthetic({6, 8, 8, 6}, seed, 10);
}

std::vector<Unit> selected_units(const LayeredModel& m,
                                 const ApplicationMask& mask) {
  std::vector<Unit> out;
  const auto units = units_at(m, mask.level);
  for (std::size_t k = 0; k < units.size(); ++k)
    if (mask.on[k]) out.push_back(units[k]);
  return out;
}

}  // namespace

TEST_CASE("granularity and nominal ratios follow the op family") {
  CHECK(granularity(prune_layer(0.5)) == Level::Layer);
  CHECK(granularity(prune_row(0.5)) == Level::Row);
  CHECK(granularity(prune_unstructured(0.5)) == Level::Element);
  CHECK(granularity(quant_uniform(8)) == Level::Layer);
  CHECK(granularity(quant_uniform(8, Rounding::Nearest, ScaleScope::PerRow)) ==
        Level::Row);
  CHECK(nominal_ratio(prune_layer(0.75)) == doctest::Approx(4.0));
  CHECK(nominal_ratio(quant_uniform(4)) == doctest::Approx(4.0));
  CHECK(nominal_ratio(share_layers(3)) == doctest::Approx(3.0));
}

TEST_CASE("layer pruning removes the smallest removal scores") {
  const LayeredModel m = demo_model();
  const Applied a = apply(prune_layer(0.4), m, m);
  // 0.4 * 3 layers rounds to one pruned layer.
  CHECK(a.mask.count() == 1);
  const auto sel = selected_units(m, a.mask);
  REQUIRE(sel.size() == 1);
  double best = 1e300;
  int arg = -1;
  for (int i = 0; i < m.layer_count(); ++i) {
    const double s = oracle::frob_sq(m.output(i));
    if (s < best) {
      best = s;
      arg = i;
    }
  }
  CHECK(sel[0].layer == arg);
  CHECK(a.model.layer(arg).weights.isZero(0.0));
  // Determinism: same call, bit-identical result.
  const Applied b = apply(prune_layer(0.4), m, m);
  for (int i = 0; i < m.layer_count(); ++i)
    CHECK(frob_norm_sq(a.model.layer(i).weights - b.model.layer(i).weights) ==
          0.0);
}

TEST_CASE("element pruning scores match the brute-force removal error") {
  const LayeredModel m = LayeredModel::synthetic({4, 5, 3}, 9, 7);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) {
      LayeredModel z = m;
      z.layer(0).weights(r, c) = 0.0;
      z.finalize();
      const double direct = oracle::frob_sq(layer_error(m, z, 0));
      const double w = m.layer(0).weights(r, c);
      const double score = w * w * m.activation(0).row(c).squaredNorm();
      CHECK(direct == doctest::Approx(score).epsilon(1e-12));
    }
  // And the op prunes the smallest of those scores.
  const Applied a = apply(prune_unstructured(0.1), m, m);
  const auto sel = selected_units(m, a.mask);
  std::vector<double> all_scores;
  for (const Unit& u : units_at(m, Level::Element)) {
    const double w = m.layer(u.layer).weights(u.row, u.col);
    all_scores.push_back(w * w *
                         m.activation(u.layer).row(u.col).squaredNorm());
  }
  std::vector<double> sel_scores;
  for (const Unit& u : sel) {
    const double w = m.layer(u.layer).weights(u.row, u.col);
    sel_scores.push_back(w * w *
                         m.activation(u.layer).row(u.col).squaredNorm());
  }
  std::sort(all_scores.begin(), all_scores.end());
  const double cutoff = all_scores[sel.size() - 1];
  for (double s : sel_scores) CHECK(s <= cutoff + 1e-15);
}

TEST_CASE("magnitude scoring ranks by weight norm alone") {
  const LayeredModel m = demo_model(23);
  const Applied a = apply(prune_row(0.25, PruneScore::Magnitude), m, m);
  const auto sel = selected_units(m, a.mask);
  std::vector<double> norms;
  for (const Unit& u : units_at(m, Level::Row))
    norms.push_back(m.layer(u.layer).weights.row(u.row).squaredNorm());
  std::sort(norms.begin(), norms.end());
  const double cutoff = norms[sel.size() - 1];
  for (const Unit& u : sel)
    CHECK(m.layer(u.layer).weights.row(u.row).squaredNorm() <=
          cutoff + 1e-15);
}

TEST_CASE("pruning counts round and zero slices sit out") {
  const LayeredModel m = demo_model();
  CHECK(apply(prune_row(0.5), m, m).mask.count() == 11);  // llround(0.5 * 22)
  CHECK_THROWS_AS(apply(prune_layer(0.1), m, m), std::invalid_argument);
  CHECK_THROWS_AS(apply(prune_layer(0.9), m, m), std::invalid_argument);

  // A zeroed row is no longer a candidate; the same fraction must reach
  // deeper into the live rows.
  const Applied once = apply(prune_row(0.1), m, m);
  const Applied again = apply(prune_row(0.1), once.model, m);
  const auto first = selected_units(m, once.mask);
  const auto second = selected_units(m, again.mask);
  for (const Unit& u : second)
    for (const Unit& v : first) CHECK(!(u == v));
}

TEST_CASE("layer scope restricts pruning and counts") {
  const LayeredModel m = demo_model();
  CompressionOp op = prune_row(0.5);
  op.layers = {1};
  CHECK(scoped_unit_count(op, m) == 8);
  CHECK(scoped_unit_count(prune_row(0.5), m) == 22);
  const Applied a = apply(op, m, m);
  CHECK(a.mask.count() == 4);
  for (const Unit& u : selected_units(m, a.mask)) CHECK(u.layer == 1);
  CompressionOp bad = op;
  bad.layers = {3};
  CHECK_THROWS_AS(apply(bad, m, m), std::invalid_argument);
  bad.layers = {1, 1};
  CHECK_THROWS_AS(apply(bad, m, m), std::invalid_argument);
}

TEST_CASE("quantization snaps weights onto the per-layer grid") {
  const LayeredModel m = demo_model();
  const Applied a = apply(quant_uniform(5), m, m);
  for (int i = 0; i < m.layer_count(); ++i) {
    const double scale = m.layer(i).weights.cwiseAbs().maxCoeff() / 15.0;
    CHECK(oracle::on_grid(a.model.layer(i).weights, scale, 5, 1e-9));
    REQUIRE(a.model.layer(i).act_quant.has_value());
    CHECK(a.model.layer(i).act_quant->bits == 5);
    CHECK(a.model.layer(i).act_quant->frozen_scales.empty());
  }
  // The mask claims every layer.
  CHECK(a.mask.level == Level::Layer);
  CHECK(a.mask.count() == 3);

  CompressionOp scoped = quant_uniform(5);
  scoped.layers = {0, 2};
  const Applied b = apply(scoped, m, m);
  CHECK(b.mask.count() == 2);
  CHECK_FALSE(b.model.layer(1).act_quant.has_value());
  CHECK(frob_norm_sq(b.model.layer(1).weights - m.layer(1).weights) == 0.0);
}

TEST_CASE("current-mode calibration freezes scales from the incoming model") {
  const LayeredModel m = demo_model();
  CompressionOp op = quant_uniform(6);
  op.calibration = CalibrationMode::Current;
  const Applied pruned = apply(prune_layer(0.4), m, m);
  const Applied q = apply(op, pruned.model, m);
  for (int i = 0; i < m.layer_count(); ++i) {
    REQUIRE(q.model.layer(i).act_quant.has_value());
    REQUIRE(q.model.layer(i).act_quant->frozen_scales.size() == 1);
    const double expect =
        pruned.model.activation(i).cwiseAbs().maxCoeff() / 31.0;
    CHECK(q.model.layer(i).act_quant->frozen_scales[0] ==
          doctest::Approx(expect).epsilon(1e-15));
  }
}

TEST_CASE("sharing averages consecutive equal-shape groups") {
  const LayeredModel m = LayeredModel::synthetic({8, 8, 8, 8}, 31, 6);
  const Applied a = apply(share_layers(2), m, m);
  const Matrix mean =
      0.5 * (m.layer(0).weights + m.layer(1).weights);
  CHECK(frob_norm_sq(a.model.layer(0).weights - mean) == 0.0);
  CHECK(frob_norm_sq(a.model.layer(1).weights - mean) == 0.0);
  // The trailing layer has no partner and stays untouched, unshared.
  CHECK(frob_norm_sq(a.model.layer(2).weights - m.layer(2).weights) == 0.0);
  CHECK(a.mask.count() == 2);

  const LayeredModel uneven = demo_model();
  CHECK_THROWS_AS(apply(share_layers(2), uneven, uneven),
                  std::invalid_argument);  // 8x6 vs 8x8
  CompressionOp mid = share_layers(2);
  mid.layers = {1, 2};
  CHECK_THROWS_AS(apply(mid, uneven, uneven), std::invalid_argument);
  CompressionOp gap = share_layers(2);
  gap.layers = {0, 2};
  CHECK_THROWS_AS(apply(gap, LayeredModel::synthetic({8, 8, 8, 8}, 1, 4),
                        LayeredModel::synthetic({8, 8, 8, 8}, 1, 4)),
                  std::invalid_argument);
}

TEST_CASE("apply_with_selection prunes exactly the dictated units") {
  const LayeredModel m = demo_model();
  const std::vector<Unit> sel = {{0, 2, -1, Level::Row}, {1, 5, -1, Level::Row}};
  const Applied a = apply_with_selection(prune_row(0.2), m, sel);
  CHECK(a.mask.count() == 2);
  CHECK(a.model.layer(0).weights.row(2).isZero(0.0));
  CHECK(a.model.layer(1).weights.row(5).isZero(0.0));
  CHECK_THROWS_AS(apply_with_selection(quant_uniform(8), m, sel),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      apply_with_selection(prune_layer(0.2), m, sel),
      std::invalid_argument);  // level mismatch
}

TEST_CASE("rotation is an exact similarity on the forward pass") {
  const LayeredModel m = LayeredModel::synthetic({8, 16, 8}, 41, 6);
  const LayeredModel r = rotate_model(m);
  for (int i = 0; i < m.layer_count(); ++i) {
    CHECK(r.layer(i).rotated);
    CHECK(frob_norm_sq(r.output(i) - m.output(i)) < 1e-18);
  }
  CHECK_THROWS_AS(rotate_model(r), std::invalid_argument);
  CHECK_THROWS_AS(rotate_model(LayeredModel::synthetic({6, 8, 6}, 1, 4)),
                  std::invalid_argument);  // 6 is not a power of two
}

TEST_CASE("mask lifting ors constituents upward") {
  const LayeredModel m = LayeredModel::synthetic({4, 5, 3}, 9, 7);
  ApplicationMask mask{Level::Element, OpFamily::PruneUnstructured,
                       std::vector<std::uint8_t>(unit_count(m, Level::Element), 0)};
  mask.on[unit_index(m, {0, 1, 2, Level::Element})] = 1;
  mask.on[unit_index(m, {1, 0, 4, Level::Element})] = 1;

  const auto rows = lift_mask(mask, m, Level::Row);
  CHECK(std::count(rows.begin(), rows.end(), 1) == 2);
  CHECK(rows[unit_index(m, {0, 1, -1, Level::Row})] == 1);
  CHECK(rows[unit_index(m, {1, 0, -1, Level::Row})] == 1);

  const auto layers = lift_mask(mask, m, Level::Layer);
  CHECK(layers[0] == 1);
  CHECK(layers[1] == 1);

  ApplicationMask coarse{Level::Layer, OpFamily::PruneLayer, {1, 0}};
  CHECK_THROWS_AS(lift_mask(coarse, m, Level::Row), std::invalid_argument);
}

TEST_CASE("full coverage projects both up and down the granularity chain") {
  const LayeredModel m = LayeredModel::synthetic({4, 5, 3}, 9, 7);

  // Every row of layer 0 on: layer 0 is fully covered, layer 1 is not.
  ApplicationMask rows{Level::Row, OpFamily::PruneRow,
                       std::vector<std::uint8_t>(unit_count(m, Level::Row), 0)};
  for (int r = 0; r < 5; ++r)
    rows.on[unit_index(m, {0, r, -1, Level::Row})] = 1;
  const auto up = fully_covered(rows, m, Level::Layer);
  CHECK(up[0] == 1);
  CHECK(up[1] == 0);
  rows.on[unit_index(m, {0, 4, -1, Level::Row})] = 0;
  CHECK(fully_covered(rows, m, Level::Layer)[0] == 0);

  // Downward: a layer mask covers exactly its layer's elements.
  ApplicationMask layers{Level::Layer, OpFamily::PruneLayer, {0, 1}};
  const auto down = fully_covered(layers, m, Level::Element);
  for (const Unit& u : units_at(m, Level::Element))
    CHECK(down[unit_index(m, u)] == (u.layer == 1 ? 1 : 0));
  // Same level: identity.
  const auto same = fully_covered(layers, m, Level::Layer);
  CHECK(same == std::vector<std::uint8_t>{0, 1});
}

TEST_CASE("stochastic op keeps untouched layers bit-identical across models") {
  const LayeredModel m = demo_model();
  LayeredModel edited = m;
  edited.layer(1).weights(0, 0) *= 0.5;  // not the layer max
  edited.finalize();
  const CompressionOp op =
      quant_uniform(4, Rounding::Stochastic, ScaleScope::PerTensor, 77);
  const Applied a = apply(op, m, m);
  const Applied b = apply(op, edited, m);
  CHECK(frob_norm_sq(a.model.layer(0).weights - b.model.layer(0).weights) ==
        0.0);
  CHECK(frob_norm_sq(a.model.layer(2).weights - b.model.layer(2).weights) ==
        0.0);
  // Within the edited layer, only the edited entry may differ.
  int diffs = 0;
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c)
      if (a.model.layer(1).weights(r, c) != b.model.layer(1).weights(r, c))
        ++diffs;
  CHECK(diffs <= 1);
}

TEST_CASE("stochastic rounding variance matches the closed form") {
  const Matrix w = gaussian_matrix(8, 8, 55, 1.0);
  std::vector<double> scales;
  quantize_matrix(w, 4, ScaleScope::PerTensor, Rounding::Nearest, 0, nullptr,
                  &scales);
  const int trials = 400;
  Matrix sum = Matrix::Zero(8, 8), sumsq = Matrix::Zero(8, 8);
  for (int t = 0; t < trials; ++t) {
    const Matrix q = quantize_matrix(w, 4, ScaleScope::PerTensor,
                                     Rounding::Stochastic,
                                     mix_seed(123, 0x5, t), &scales);
    const Matrix e = q - w;
    sum += e;
    sumsq += e.cwiseProduct(e);
  }
  const double mc_var = (sumsq.sum() / trials) / 64.0;
  const double analytic = oracle::stochastic_variance(w, scales[0], 4);
  // Pooled over 64 entries and 400 trials the estimate is tight.
  CHECK(mc_var == doctest::Approx(analytic).epsilon(0.15));
  // Per-entry means vanish within 5 sigma of the pooled spread.
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) {
      const double se = std::sqrt(analytic / trials);
      CHECK(std::abs(sum(r, c) / trials) < 5.0 * se + 1e-12);
    }
}

TEST_CASE("quant_error_stats rejects nearest mode and centers on zero") {
  const LayeredModel m = LayeredModel::synthetic({5, 6, 4}, 61, 8);
  CHECK_THROWS_AS(quant_error_stats(quant_uniform(4), m, 8, 1),
                  std::invalid_argument);
  const CompressionOp op =
      quant_uniform(4, Rounding::Stochastic, ScaleScope::PerTensor, 0);
  const int trials = 256;
  const QuantErrorStats stats = quant_error_stats(op, m, trials, 5);
  REQUIRE(stats.mean.size() == 2);
  CHECK(stats.variance > 0.0);
  const double se = std::sqrt(stats.variance / trials);
  for (const Matrix& mean : stats.mean)
    CHECK(mean.cwiseAbs().maxCoeff() < 6.0 * se);
}

TEST_CASE("rotated pruning splits basis cost from selection cost") {
  const LayeredModel m = LayeredModel::synthetic({8, 16, 16, 8}, 71, 10);
  // Layer removal scores are rotation-invariant: same selection, same model,
  // both costs vanish.
  const RotationPruningError stable = rotation_pruning_error(m, prune_layer(0.3));
  CHECK(std::abs(stable.matrix_wise) < 1e-12);
  CHECK(std::abs(stable.element_wise) < 1e-12);
  // Unstructured selections see a genuinely different basis.
  const RotationPruningError loose =
      rotation_pruning_error(m, prune_unstructured(0.2));
  CHECK(loose.matrix_wise > 0.0);
  CHECK(loose.element_wise > 0.0);
  CHECK_THROWS_AS(rotation_pruning_error(m, quant_uniform(8)),
                  std::invalid_argument);
}
