#pragma once
// Config-driven experiment runner behind the command-line tool.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ordlab/compressors.hpp"
#include "ordlab/model.hpp"

namespace ordlab {

// Malformed or out-of-range configuration. The message carries a
// line:column anchor for syntax errors and a JSON-pointer anchor for
// semantic ones.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelSpec {
  std::vector<int> dims;
  std::uint64_t seed = 0;
  int calib_samples = 16;
};

struct OpsSpec {
  OpFamily prune_family = OpFamily::PruneLayer;
  PruneScore prune_score = PruneScore::MinError;
  std::vector<double> fractions;
  std::vector<int> bits;
  Rounding rounding = Rounding::Nearest;
  ScaleScope scope = ScaleScope::PerTensor;
  bool rotate = false;
  CalibrationMode calibration = CalibrationMode::Original;
};

struct ExperimentConfig {
  std::string kind;
  ModelSpec model;
  Metric metric;
  OpsSpec ops;
  int trials = 0;  // 0 = per-kind default (theorem1: 100, theorem2: 64)
  std::uint64_t seed = 0;
  bool fit = false;  // coa_grid: also emit per-fraction trend fits

  double total_p = 0.0;                          // multistage
  std::vector<std::pair<double, double>> splits; // multistage
  std::vector<double> avg_bits;                  // mpq sweep
  std::vector<int> bit_menu;                     // mpq menu
  std::vector<CompressionOp> plan_ops;           // plan

  std::string raw;  // exact config bytes; hashed into the manifest
};

// Reads, parses, and validates a config file; throws ConfigError.
ExperimentConfig parse_config(const std::string& path);

// Same from an in-memory document.
ExperimentConfig parse_config_text(const std::string& text);

// The accepted config layout as a JSON document.
std::string config_schema();

struct RunResult {
  std::string summary;             // short human-readable outcome
  bool oracle_ok = true;           // theorem kinds: internal verdict
  std::vector<std::string> files;  // artifact names written to out_dir
};

// Executes the configured experiment and writes report.csv, report.json,
// manifest.json (and fit.json where requested) into out_dir. Artifacts land
// via temp-file-and-rename; reruns with identical config produce
// byte-identical CSV. jobs caps worker threads for grid-shaped kinds;
// emission order is grid order regardless.
RunResult run_experiment(const ExperimentConfig& cfg,
                         const std::string& out_dir, int jobs);

}  // namespace ordlab
