#pragma once

// Compression operator families. Every operator is a pure function: it takes
// a model, returns a fresh compressed model plus a mask recording exactly
// which units it modified. Determinism contract: identical (op, model) gives
// bit-identical output, including under stochastic rounding (per-layer
// substreams derived from op.seed).

#include "ordlab/model.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace ordlab {

enum class OpFamily {
  PruneUnstructured,
  PruneRow,
  PruneLayer,
  QuantUniform,
  Share,
};

const char* family_name(OpFamily f);

// How pruning ranks candidate units. MinError scores a unit by the squared
// output change its removal causes on the model being pruned (its own
// propagated activations); Magnitude by the squared weight norm alone.
enum class PruneScore { MinError, Magnitude };

// Where a quantization op derives its activation-side scales. Original:
// scales come from whatever activations flow through at evaluation time
// (the calibration-on-the-original-model reading; order-blind for layer
// disjoint ops). Current: scales are frozen at application time from the
// model being compressed, so earlier ops in a pipeline leave fingerprints.
enum class CalibrationMode { Original, Current };

struct CompressionOp {
  OpFamily family = OpFamily::PruneUnstructured;
  double p = 0.0;      // pruning fraction, 0 < p < 1
  int bits = 16;       // quantization target bit-width
  Rounding rounding = Rounding::Nearest;
  ScaleScope scope = ScaleScope::PerTensor;
  bool rotate = false; // quantization only: conjugate weights first
  CalibrationMode calibration = CalibrationMode::Original;
  PruneScore score = PruneScore::MinError;
  int share_group = 2;
  std::vector<int> layers;  // empty = every layer
  std::uint64_t seed = 0;

  std::string name() const;
};

CompressionOp prune_unstructured(double p, PruneScore score = PruneScore::MinError);
CompressionOp prune_row(double p, PruneScore score = PruneScore::MinError);
CompressionOp prune_layer(double p, PruneScore score = PruneScore::MinError);
CompressionOp quant_uniform(int bits, Rounding rounding = Rounding::Nearest,
                            ScaleScope scope = ScaleScope::PerTensor,
                            std::uint64_t seed = 0);
CompressionOp share_layers(int group);

// The operator's atomic unit. Quantization sits at Row or Layer depending on
// scale scope; that choice is what moves a pair across the disjoint /
// interfering boundary.
Level granularity(const CompressionOp& op);

// Nominal compression ratio: 1/(1-p), 16/bits, or the share group size.
double nominal_ratio(const CompressionOp& op);

bool is_prune(OpFamily f);

// Units at the op's granularity inside its layer scope: the denominator of
// its pruning count.
std::size_t scoped_unit_count(const CompressionOp& op, const LayeredModel& m);

// Indicator over every unit of the model at `level`, in unit_index order.
struct ApplicationMask {
  Level level = Level::Layer;
  OpFamily family = OpFamily::PruneUnstructured;
  std::vector<std::uint8_t> on;

  std::size_t count() const;
};

struct Applied {
  LayeredModel model;
  ApplicationMask mask;
};

// Apply one operator. `original` is the uncompressed reference; its
// architecture must match. Pruning zeroes the lowest-scoring
// round(p * unit_count) units, candidates restricted to units that still
// carry any weight (re-zeroing is vacuous), ties broken by lowest unit
// index. Quantization snaps weights to the symmetric grid, attaches
// matching activation quantization, and rotates first when op.rotate is
// set. Share replaces consecutive same-shape groups by their mean.
Applied apply(const CompressionOp& op, const LayeredModel& m,
              const LayeredModel& original);

// Pruning with the selection dictated by the caller instead of scored.
Applied apply_with_selection(const CompressionOp& op, const LayeredModel& m,
                             const std::vector<Unit>& selection);

// Conjugate every layer by the orthonormal Hadamard pair and flag it
// rotated. Dimensions must all be powers of two.
LayeredModel rotate_model(const LayeredModel& m);

// Lift a mask to a coarser level: a coarse unit is on iff any constituent
// fine unit is on.
std::vector<std::uint8_t> lift_mask(const ApplicationMask& mask,
                                    const LayeredModel& m, Level target);

// Units at `target` whose every constituent weight the mask covers, at any
// level relative to the mask's own (used for absorption: a fully pruned unit
// erases quantization's footprint).
std::vector<std::uint8_t> fully_covered(const ApplicationMask& mask,
                                        const LayeredModel& m, Level target);

struct QuantErrorStats {
  std::vector<Matrix> mean;  // per-layer entrywise mean of the induced error
  double variance = 0.0;     // pooled per-entry variance across all layers
};

// Monte-Carlo moments of the error a stochastic quantization op induces,
// over `trials` independent rounding draws. Nearest mode is rejected.
QuantErrorStats quant_error_stats(const CompressionOp& op,
                                  const LayeredModel& m, int trials,
                                  std::uint64_t seed);

struct RotationPruningError {
  double matrix_wise = 0.0;   // cost of the basis change, selection held fixed
  double element_wise = 0.0;  // footprint shift caused by re-selecting in the
                              // rotated basis; exactly 0 for stable selections
};

// Compare pruning with and without rotation by building the variants
// directly: plain pruning, rotated pruning forced to the plain selection,
// and rotated pruning with its own selection.
RotationPruningError rotation_pruning_error(const LayeredModel& m,
                                            const CompressionOp& prune_op);

}  // namespace ordlab
