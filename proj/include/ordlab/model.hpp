#pragma once

// Small synthetic layered models: the objects every compression operator acts
// on and every metric is measured against. A model is immutable once built;
// operators copy it, edit the copy, and re-finalize. Layer i computes
// relu(W_i X_i) feeding layer i+1; the calibration batch enters layer 1.

#include "ordlab/linalg.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ordlab {

// Granularity chain, coarse to fine: Model > Layer > Row > Element.
enum class Level { Element = 0, Row = 1, Layer = 2, Model = 3 };

const char* level_name(Level t);

// Least upper bound on the chain (the coarser of the two).
Level lut_level(Level a, Level b);

// A compressible unit at some granularity. row/col are -1 when unused.
struct Unit {
  int layer = 0;
  int row = -1;
  int col = -1;
  Level level = Level::Layer;

  bool operator==(const Unit&) const = default;
};

enum class Rounding { Nearest, Stochastic };
enum class ScaleScope { PerTensor, PerRow };

// Activation-side quantization state attached to a layer by a quantization
// operator. scales is empty when the scale is derived from whatever
// activations are being quantized; frozen (calibrated) scales are stored per
// scope row (or a single entry for PerTensor).
struct ActQuant {
  int bits = 16;
  Rounding rounding = Rounding::Nearest;
  ScaleScope scope = ScaleScope::PerTensor;
  std::uint64_t seed = 0;
  std::vector<double> frozen_scales;
};

struct LayerState {
  Matrix weights;  // stored in the rotated basis when rotated is set
  bool rotated = false;
  std::optional<ActQuant> act_quant;
};

enum class MetricKind { SyntheticExact, TaskAccuracy };

struct Metric {
  MetricKind kind = MetricKind::SyntheticExact;
  double beta = 1.0;         // error-to-performance exchange rate
  double base_value = 100.0; // performance of the uncompressed model
};

class LayeredModel {
 public:
  // dims = [in, h1, ..., out]; layer i has shape (dims[i+1] x dims[i]).
  // Weights are N(0, 1/fan_in), the calibration batch is standard normal;
  // both deterministic in (dims, seed).
  static LayeredModel synthetic(const std::vector<int>& dims,
                                std::uint64_t seed, int calib_samples = 16);

  int layer_count() const { return static_cast<int>(layers_.size()); }
  const LayerState& layer(int i) const { return layers_.at(i); }
  LayerState& layer(int i) { return layers_.at(i); }
  const Matrix& calib() const { return calib_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<int>& dims() const { return dims_; }
  const std::vector<int>& labels() const { return labels_; }
  bool has_labels() const { return !labels_.empty(); }

  // Effective forward pass of THIS model (rotation and activation
  // quantization included): activation(i) is the input layer i sees,
  // output(i) its pre-relu product. Recomputed by finalize().
  const Matrix& activation(int i) const { return acts_.at(i); }
  const Matrix& output(int i) const { return outs_.at(i); }
  const Matrix& final_output() const { return outs_.back(); }

  // Copy with labels set from this model's own argmax outputs.
  LayeredModel with_self_labels() const;

  // Rebuild the activation/output caches after layer edits. Operators must
  // call this before handing the model out.
  void finalize();

  int rows(int i) const { return static_cast<int>(layers_[i].weights.rows()); }
  int cols(int i) const { return static_cast<int>(layers_[i].weights.cols()); }

 private:
  std::vector<LayerState> layers_;
  Matrix calib_;
  std::vector<int> labels_;
  std::vector<int> dims_;
  std::uint64_t seed_ = 0;

  std::vector<Matrix> acts_;
  std::vector<Matrix> outs_;
};

// Layer i's product with an arbitrary input batch, through this layer's
// transform chain: rotate the input, quantize it, multiply, rotate back.
Matrix layer_product(const LayeredModel& m, int i, const Matrix& x);

// The transformed input itself (post rotation and activation quantization);
// what the stored weights actually multiply.
Matrix layer_input(const LayeredModel& m, int i, const Matrix& x);

// Units of the model at a granularity, in layer-major, then row, then
// element order. Level::Model is not enumerable.
std::vector<Unit> units_at(const LayeredModel& m, Level t);
std::size_t unit_count(const LayeredModel& m, Level t);

// Flat index of a unit within units_at(m, u.level).
std::size_t unit_index(const LayeredModel& m, const Unit& u);

// Per-layer error of `compressed` against `original`:
//   layer_product(compressed, i, X_i) - W_i X_i
// with X_i the ORIGINAL model's activation at layer i. Layer-local by
// construction: the error at layer i depends only on layer i's state.
Matrix layer_error(const LayeredModel& original, const LayeredModel& compressed,
                   int i);

// Error restricted to one unit, as a slice of product space: a Layer unit
// owns the full error matrix, a Row unit its row, an Element unit the
// contribution of that single weight. Element slices of rotated layers are
// not attributable and throw.
Matrix unit_error(const LayeredModel& original, const LayeredModel& compressed,
                  const Unit& u);

// SyntheticExact: base - beta * sum_i ||layer_error(i)||_F^2 (the error/
// performance trade-off holds exactly by construction). TaskAccuracy:
// fraction of calibration samples whose final argmax matches the original's
// labels; requires labels on the original.
double evaluate(const LayeredModel& compressed, const LayeredModel& original,
                const Metric& metric);

// Quantize a matrix onto the symmetric uniform grid for `bits`
// (2 <= bits <= 16): step = max|w| over the scope / (2^(bits-1) - 1).
// Stochastic rounding draws exactly one uniform per entry, row-major, from
// `stream_seed`, and rounds up with probability equal to the fractional
// position. frozen_scales (one per scope row, or a single entry) overrides
// the derived scales; values beyond a frozen grid clamp to its edge.
// out_scales, when non-null, receives the scales used.
Matrix quantize_matrix(const Matrix& w, int bits, ScaleScope scope,
                       Rounding rounding, std::uint64_t stream_seed,
                       const std::vector<double>* frozen_scales = nullptr,
                       std::vector<double>* out_scales = nullptr);

}  // namespace ordlab
