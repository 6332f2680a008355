#include "ordlab/harness.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <mutex>
#include <sstream>
#include <thread>

#include "ordlab/fit.hpp"
#include "ordlab/metrics.hpp"
#include "ordlab/planner.hpp"
#include "ordlab/theory.hpp"

namespace ordlab {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kVersion = "0.1.0";
constexpr const char* kKinds[] = {"coa_grid",   "cer_curve", "theorem1",
                                  "theorem2",   "violation", "multistage",
                                  "mpq",        "rotation_prune", "plan"};
constexpr double kGridTrendTolerance = 1e-6;

std::string fmt(double v) {
  char buf[40];
  const auto res =
      std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 9);
  return std::string(buf, res.ptr);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return std::to_string(line) + ":" + std::to_string(col);
}

void write_atomic(const fs::path& dir, const std::string& name,
                  const std::string& content) {
  const fs::path tmp = dir / (name + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, dir / name);
}

void parallel_for(std::size_t n, int jobs,
                  const std::function<void(std::size_t)>& fn) {
  const std::size_t workers =
      std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) break;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          break;
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---- config parsing ----

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw ConfigError(where + ": " + what);
}

void expect_keys(const json& j, const std::string& where,
                 std::initializer_list<const char*> allowed) {
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        ok = true;
        break;
      }
    if (!ok) fail(where + "/" + item.key(), "unknown key");
  }
}

const json& member(const json& j, const std::string& where, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) fail(where + "/" + key, "required");
  return *it;
}

double as_num(const json& v, const std::string& ptr) {
  if (!v.is_number()) fail(ptr, "expected a number");
  return v.get<double>();
}

int as_int(const json& v, const std::string& ptr) {
  if (!v.is_number_integer()) fail(ptr, "expected an integer");
  return v.get<int>();
}

std::uint64_t as_u64(const json& v, const std::string& ptr) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<long long>() >= 0)
    return static_cast<std::uint64_t>(v.get<long long>());
  fail(ptr, "expected a non-negative integer");
}

bool as_bool(const json& v, const std::string& ptr) {
  if (!v.is_boolean()) fail(ptr, "expected a boolean");
  return v.get<bool>();
}

std::string as_str(const json& v, const std::string& ptr) {
  if (!v.is_string()) fail(ptr, "expected a string");
  return v.get<std::string>();
}

std::vector<int> as_int_list(const json& v, const std::string& ptr) {
  if (!v.is_array()) fail(ptr, "expected an array of integers");
  std::vector<int> out;
  for (std::size_t k = 0; k < v.size(); ++k)
    out.push_back(as_int(v[k], ptr + "/" + std::to_string(k)));
  return out;
}

std::vector<double> as_num_list(const json& v, const std::string& ptr) {
  if (!v.is_array()) fail(ptr, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t k = 0; k < v.size(); ++k)
    out.push_back(as_num(v[k], ptr + "/" + std::to_string(k)));
  return out;
}

template <typename T>
T pick(const json& v, const std::string& ptr,
       std::initializer_list<std::pair<const char*, T>> table) {
  const std::string s = as_str(v, ptr);
  std::string options;
  for (const auto& [name, value] : table) {
    if (s == name) return value;
    options += options.empty() ? name : std::string("|") + name;
  }
  fail(ptr, "expected one of " + options);
}

OpFamily parse_prune_family(const json& v, const std::string& ptr) {
  return pick<OpFamily>(v, ptr,
                        {{"layer", OpFamily::PruneLayer},
                         {"row", OpFamily::PruneRow},
                         {"element", OpFamily::PruneUnstructured}});
}

ModelSpec parse_model(const json& j, const std::string& where) {
  expect_keys(j, where, {"dims", "seed", "calib_samples"});
  ModelSpec spec;
  spec.dims = as_int_list(member(j, where, "dims"), where + "/dims");
  if (spec.dims.size() < 2) fail(where + "/dims", "need at least two entries");
  for (std::size_t k = 0; k < spec.dims.size(); ++k)
    if (spec.dims[k] < 1)
      fail(where + "/dims/" + std::to_string(k), "must be positive");
  spec.seed = as_u64(member(j, where, "seed"), where + "/seed");
  if (const auto it = j.find("calib_samples"); it != j.end()) {
    spec.calib_samples = as_int(*it, where + "/calib_samples");
    if (spec.calib_samples < 1) fail(where + "/calib_samples", "must be >= 1");
  }
  return spec;
}

Metric parse_metric(const json& j, const std::string& where) {
  expect_keys(j, where, {"kind", "beta", "base"});
  Metric metric;
  if (const auto it = j.find("kind"); it != j.end())
    metric.kind = pick<MetricKind>(*it, where + "/kind",
                                   {{"synthetic_exact", MetricKind::SyntheticExact},
                                    {"task_accuracy", MetricKind::TaskAccuracy}});
  if (const auto it = j.find("beta"); it != j.end()) {
    metric.beta = as_num(*it, where + "/beta");
    if (!(metric.beta > 0.0)) fail(where + "/beta", "must be positive");
  }
  if (const auto it = j.find("base"); it != j.end())
    metric.base_value = as_num(*it, where + "/base");
  return metric;
}

OpsSpec parse_ops(const json& j, const std::string& where) {
  expect_keys(j, where,
              {"prune_family", "prune_score", "fractions", "bits", "rounding",
               "scope", "rotate", "calibration"});
  OpsSpec ops;
  if (const auto it = j.find("prune_family"); it != j.end())
    ops.prune_family = parse_prune_family(*it, where + "/prune_family");
  if (const auto it = j.find("prune_score"); it != j.end())
    ops.prune_score = pick<PruneScore>(*it, where + "/prune_score",
                                       {{"min_error", PruneScore::MinError},
                                        {"magnitude", PruneScore::Magnitude}});
  if (const auto it = j.find("fractions"); it != j.end()) {
    ops.fractions = as_num_list(*it, where + "/fractions");
    for (std::size_t k = 0; k < ops.fractions.size(); ++k)
      if (!(ops.fractions[k] > 0.0 && ops.fractions[k] < 1.0))
        fail(where + "/fractions/" + std::to_string(k), "must lie in (0, 1)");
  }
  if (const auto it = j.find("bits"); it != j.end()) {
    ops.bits = as_int_list(*it, where + "/bits");
    for (std::size_t k = 0; k < ops.bits.size(); ++k)
      if (ops.bits[k] < 2 || ops.bits[k] > 16)
        fail(where + "/bits/" + std::to_string(k), "must lie in [2, 16]");
  }
  if (const auto it = j.find("rounding"); it != j.end())
    ops.rounding = pick<Rounding>(*it, where + "/rounding",
                                  {{"nearest", Rounding::Nearest},
                                   {"stochastic", Rounding::Stochastic}});
  if (const auto it = j.find("scope"); it != j.end())
    ops.scope = pick<ScaleScope>(*it, where + "/scope",
                                 {{"tensor", ScaleScope::PerTensor},
                                  {"row", ScaleScope::PerRow}});
  if (const auto it = j.find("rotate"); it != j.end())
    ops.rotate = as_bool(*it, where + "/rotate");
  if (const auto it = j.find("calibration"); it != j.end())
    ops.calibration = pick<CalibrationMode>(*it, where + "/calibration",
                                            {{"original", CalibrationMode::Original},
                                             {"current", CalibrationMode::Current}});
  return ops;
}

CompressionOp parse_plan_op(const json& j, const std::string& where) {
  expect_keys(j, where, {"family", "p", "score", "bits", "rounding", "scope",
                         "rotate", "calibration", "group", "layers"});
  const int family = pick<int>(member(j, where, "family"), where + "/family",
                               {{"prune_layer", 0},
                                {"prune_row", 1},
                                {"prune_element", 2},
                                {"quant", 3},
                                {"share", 4}});
  CompressionOp op;
  if (family <= 2) {
    const double p = as_num(member(j, where, "p"), where + "/p");
    if (!(p > 0.0 && p < 1.0)) fail(where + "/p", "must lie in (0, 1)");
    PruneScore score = PruneScore::MinError;
    if (const auto it = j.find("score"); it != j.end())
      score = pick<PruneScore>(*it, where + "/score",
                               {{"min_error", PruneScore::MinError},
                                {"magnitude", PruneScore::Magnitude}});
    op = family == 0   ? prune_layer(p, score)
         : family == 1 ? prune_row(p, score)
                       : prune_unstructured(p, score);
  } else if (family == 3) {
    const int bits = as_int(member(j, where, "bits"), where + "/bits");
    if (bits < 2 || bits > 16) fail(where + "/bits", "must lie in [2, 16]");
    op = quant_uniform(bits, Rounding::Nearest, ScaleScope::PerTensor, 0);
    if (const auto it = j.find("rounding"); it != j.end())
      op.rounding = pick<Rounding>(*it, where + "/rounding",
                                   {{"nearest", Rounding::Nearest},
                                    {"stochastic", Rounding::Stochastic}});
    if (const auto it = j.find("scope"); it != j.end())
      op.scope = pick<ScaleScope>(*it, where + "/scope",
                                  {{"tensor", ScaleScope::PerTensor},
                                   {"row", ScaleScope::PerRow}});
    if (const auto it = j.find("rotate"); it != j.end())
      op.rotate = as_bool(*it, where + "/rotate");
    if (const auto it = j.find("calibration"); it != j.end())
      op.calibration = pick<CalibrationMode>(*it, where + "/calibration",
                                             {{"original", CalibrationMode::Original},
                                              {"current", CalibrationMode::Current}});
  } else {
    int group = 2;
    if (const auto it = j.find("group"); it != j.end()) {
      group = as_int(*it, where + "/group");
      if (group < 2) fail(where + "/group", "must be >= 2");
    }
    op = share_layers(group);
  }
  if (const auto it = j.find("layers"); it != j.end())
    op.layers = as_int_list(*it, where + "/layers");
  return op;
}

void validate_kind(ExperimentConfig& cfg, const json& j) {
  const bool has_model = j.contains("model");
  const auto need_model = [&] {
    if (!has_model) fail("/model", "required for kind " + cfg.kind);
  };
  const auto need_single_bit = [&] {
    if (cfg.ops.bits.size() != 1)
      fail("/ops/bits", "exactly one bit-width for kind " + cfg.kind);
  };

  if (cfg.kind == "coa_grid") {
    need_model();
    if (cfg.ops.fractions.empty()) fail("/ops/fractions", "required");
    if (cfg.ops.bits.empty()) fail("/ops/bits", "required");
  } else if (cfg.kind == "cer_curve") {
    need_model();
    if (cfg.ops.bits.empty())
      cfg.ops.bits.assign(kCurveBits.begin(), kCurveBits.end());
    if (cfg.ops.bits.size() < 2) fail("/ops/bits", "need at least two widths");
  } else if (cfg.kind == "theorem1") {
    if (cfg.metric.kind != MetricKind::SyntheticExact)
      fail("/metric/kind", "theorem1 needs synthetic_exact");
    if (cfg.trials == 0) cfg.trials = 100;
  } else if (cfg.kind == "theorem2") {
    need_model();
    if (cfg.metric.kind != MetricKind::SyntheticExact)
      fail("/metric/kind", "theorem2 needs synthetic_exact");
    if (cfg.ops.fractions.size() != 1)
      fail("/ops/fractions", "exactly one fraction for kind theorem2");
    if (cfg.ops.bits.size() < 2) fail("/ops/bits", "need at least two widths");
    for (std::size_t k = 1; k < cfg.ops.bits.size(); ++k)
      if (cfg.ops.bits[k] > cfg.ops.bits[k - 1])
        fail("/ops/bits", "must be non-ascending");
    if (cfg.ops.prune_family == OpFamily::PruneUnstructured)
      fail("/ops/prune_family", "element pruning has no disjoint scale scope");
    if (cfg.trials == 0) cfg.trials = 64;
  } else if (cfg.kind == "violation") {
    need_model();
    if (cfg.ops.fractions.empty()) fail("/ops/fractions", "required");
    need_single_bit();
  } else if (cfg.kind == "multistage") {
    need_model();
    need_single_bit();
    if (!(cfg.total_p > 0.0 && cfg.total_p < 1.0))
      fail("/total_p", "must lie in (0, 1)");
    if (cfg.splits.empty()) fail("/splits", "required");
    for (std::size_t k = 0; k < cfg.splits.size(); ++k) {
      const auto& [p1, p2] = cfg.splits[k];
      if (!(p1 > 0.0 && p2 > 0.0))
        fail("/splits/" + std::to_string(k), "stage fractions must be positive");
      if (std::abs(p1 + p2 - cfg.total_p) > 1e-9)
        fail("/splits/" + std::to_string(k), "must sum to total_p");
    }
  } else if (cfg.kind == "mpq") {
    need_model();
    if (cfg.avg_bits.empty()) fail("/avg_bits", "required");
    if (cfg.bit_menu.empty()) fail("/bit_menu", "required");
    for (std::size_t k = 0; k < cfg.bit_menu.size(); ++k)
      if (cfg.bit_menu[k] < 2 || cfg.bit_menu[k] > 16)
        fail("/bit_menu/" + std::to_string(k), "must lie in [2, 16]");
  } else if (cfg.kind == "rotation_prune") {
    need_model();
    if (cfg.ops.fractions.empty()) fail("/ops/fractions", "required");
  } else if (cfg.kind == "plan") {
    need_model();
    if (cfg.plan_ops.empty() || cfg.plan_ops.size() > 6)
      fail("/plan_ops", "between 1 and 6 ops");
  }
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(line_col(text, e.byte), e.what());
  }
  if (!j.is_object()) fail("/", "top level must be an object");
  expect_keys(j, "", {"kind", "seed", "model", "metric", "ops", "trials",
                      "fit", "total_p", "splits", "avg_bits", "bit_menu",
                      "plan_ops"});

  ExperimentConfig cfg;
  cfg.raw = text;
  cfg.kind = as_str(member(j, "", "kind"), "/kind");
  if (std::find(std::begin(kKinds), std::end(kKinds), cfg.kind) ==
      std::end(kKinds))
    fail("/kind", "unknown experiment kind '" + cfg.kind + "'");
  cfg.seed = as_u64(member(j, "", "seed"), "/seed");

  if (j.contains("model")) cfg.model = parse_model(j["model"], "/model");
  if (j.contains("metric")) cfg.metric = parse_metric(j["metric"], "/metric");
  if (j.contains("ops")) cfg.ops = parse_ops(j["ops"], "/ops");
  if (j.contains("trials")) {
    cfg.trials = as_int(j["trials"], "/trials");
    if (cfg.trials < 1) fail("/trials", "must be >= 1");
  }
  if (j.contains("fit")) cfg.fit = as_bool(j["fit"], "/fit");
  if (j.contains("total_p")) cfg.total_p = as_num(j["total_p"], "/total_p");
  if (j.contains("splits")) {
    const json& sj = j["splits"];
    if (!sj.is_array()) fail("/splits", "expected an array of [p1, p2] pairs");
    for (std::size_t k = 0; k < sj.size(); ++k) {
      const std::string ptr = "/splits/" + std::to_string(k);
      if (!sj[k].is_array() || sj[k].size() != 2)
        fail(ptr, "expected a [p1, p2] pair");
      cfg.splits.emplace_back(as_num(sj[k][0], ptr + "/0"),
                              as_num(sj[k][1], ptr + "/1"));
    }
  }
  if (j.contains("avg_bits"))
    cfg.avg_bits = as_num_list(j["avg_bits"], "/avg_bits");
  if (j.contains("bit_menu"))
    cfg.bit_menu = as_int_list(j["bit_menu"], "/bit_menu");
  if (j.contains("plan_ops")) {
    const json& pj = j["plan_ops"];
    if (!pj.is_array()) fail("/plan_ops", "expected an array of op objects");
    for (std::size_t k = 0; k < pj.size(); ++k)
      cfg.plan_ops.push_back(
          parse_plan_op(pj[k], "/plan_ops/" + std::to_string(k)));
  }

  validate_kind(cfg, j);
  return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string config_schema() {
  static const char* schema = R"schema({
  "title": "ordlab experiment config",
  "type": "object",
  "required": ["kind", "seed"],
  "properties": {
    "kind": {"enum": ["coa_grid", "cer_curve", "theorem1", "theorem2",
                      "violation", "multistage", "mpq", "rotation_prune",
                      "plan"]},
    "seed": {"type": "integer", "minimum": 0,
             "description": "experiment-level stream seed; all randomness derives from it and model.seed"},
    "model": {
      "type": "object", "required": ["dims", "seed"],
      "properties": {
        "dims": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2},
        "seed": {"type": "integer", "minimum": 0},
        "calib_samples": {"type": "integer", "minimum": 1, "default": 16}
      },
      "description": "required by every kind except theorem1, which generates its own models"
    },
    "metric": {
      "type": "object",
      "properties": {
        "kind": {"enum": ["synthetic_exact", "task_accuracy"], "default": "synthetic_exact"},
        "beta": {"type": "number", "exclusiveMinimum": 0, "default": 1.0},
        "base": {"type": "number", "default": 100.0}
      }
    },
    "ops": {
      "type": "object",
      "properties": {
        "prune_family": {"enum": ["layer", "row", "element"], "default": "layer"},
        "prune_score": {"enum": ["min_error", "magnitude"], "default": "min_error"},
        "fractions": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}},
        "bits": {"type": "array", "items": {"type": "integer", "minimum": 2, "maximum": 16}},
        "rounding": {"enum": ["nearest", "stochastic"], "default": "nearest"},
        "scope": {"enum": ["tensor", "row"], "default": "tensor"},
        "rotate": {"type": "boolean", "default": false},
        "calibration": {"enum": ["original", "current"], "default": "original"}
      },
      "description": "coa_grid: fractions x bits grid; theorem2: one fraction + descending bits; violation/multistage: one bit-width; cer_curve: bits optional"
    },
    "trials": {"type": "integer", "minimum": 1,
               "description": "theorem1: instance count (default 100); theorem2: draws per point (default 64)"},
    "fit": {"type": "boolean", "default": false,
            "description": "coa_grid: also write fit.json with per-fraction exponential trends"},
    "total_p": {"type": "number", "description": "multistage: total pruned fraction"},
    "splits": {"type": "array", "items": {"type": "array", "minItems": 2, "maxItems": 2},
               "description": "multistage: [p1, p2] pairs summing to total_p"},
    "avg_bits": {"type": "array", "items": {"type": "number"}, "description": "mpq: average-bit sweep"},
    "bit_menu": {"type": "array", "items": {"type": "integer", "minimum": 2, "maximum": 16}, "description": "mpq: allowed bit-widths"},
    "plan_ops": {"type": "array", "minItems": 1, "maxItems": 6,
                 "items": {"type": "object", "required": ["family"],
                           "properties": {
                             "family": {"enum": ["prune_layer", "prune_row", "prune_element", "quant", "share"]},
                             "p": {"type": "number"}, "score": {"enum": ["min_error", "magnitude"]},
                             "bits": {"type": "integer"}, "rounding": {"enum": ["nearest", "stochastic"]},
                             "scope": {"enum": ["tensor", "row"]}, "rotate": {"type": "boolean"},
                             "calibration": {"enum": ["original", "current"]},
                             "group": {"type": "integer", "minimum": 2},
                             "layers": {"type": "array", "items": {"type": "integer"}}
                           }}}
  }
}
)schema";
  return schema;
}

namespace {

// ---- experiment bodies ----

struct KindOutput {
  std::string csv;
  json report;
  json fit;
  bool has_fit = false;
  std::string summary;
  bool oracle_ok = true;
};

CompressionOp make_prune(const OpsSpec& ops, double p) {
  switch (ops.prune_family) {
    case OpFamily::PruneRow: return prune_row(p, ops.prune_score);
    case OpFamily::PruneUnstructured:
      return prune_unstructured(p, ops.prune_score);
    default: return prune_layer(p, ops.prune_score);
  }
}

CompressionOp make_quant(const OpsSpec& ops, int bits, std::uint64_t seed) {
  CompressionOp op = quant_uniform(bits, ops.rounding, ops.scope, seed);
  op.rotate = ops.rotate;
  op.calibration = ops.calibration;
  return op;
}

LayeredModel build_model(const ExperimentConfig& cfg) {
  LayeredModel m = LayeredModel::synthetic(cfg.model.dims, cfg.model.seed,
                                           cfg.model.calib_samples);
  if (cfg.metric.kind == MetricKind::TaskAccuracy) m = m.with_self_labels();
  return m;
}

KindOutput run_coa_grid(const ExperimentConfig& cfg, int jobs) {
  const LayeredModel m = build_model(cfg);
  const QuantCurve curve = build_quant_curve(m, cfg.metric, kCurveBits,
                                             Rounding::Nearest, cfg.ops.scope, 0);
  const auto& ps = cfg.ops.fractions;
  const auto& bs = cfg.ops.bits;
  const std::size_t n = ps.size() * bs.size();

  struct Cell {
    double cer_diff, coa;
    int bits;
  };
  std::vector<std::string> rows(n);
  std::vector<Cell> cells(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    const double p = ps[i / bs.size()];
    const int bits = bs[i % bs.size()];
    const CompressionOp prune = make_prune(cfg.ops, p);
    const CompressionOp quant =
        make_quant(cfg.ops, bits, mix_seed(cfg.seed, 0x61, i));
    const OrderReport rep = order_report(m, cfg.metric, quant, prune, curve);
    const long long g1 =
        rep.partition ? static_cast<long long>(rep.partition->g1.size()) : -1;
    rows[i] = fmt(p) + "," + std::to_string(bits) + "," +
              fmt(1.0 / (1.0 - p)) + "," + fmt(16.0 / bits) + "," +
              fmt(rep.cer_f2.value) + "," + fmt(rep.cer_f1.value) + "," +
              fmt(rep.pg) + "," + fmt(rep.coa) + "," +
              fmt(rep.interference_backward) + "," + std::to_string(g1) + "," +
              (rep.disjoint ? "1" : "0");
    cells[i] = {rep.cer_f2.value - 16.0 / bits, rep.coa, bits};
  });

  KindOutput out;
  out.csv = "p,B,C_P,C_Q,CER_P,CER_Q,PG,COA,interference,G1,disjoint\n";
  for (const std::string& r : rows) out.csv += r + "\n";

  json trends = json::array();
  bool all_ok = true;
  json fits = json::array();
  for (std::size_t pi = 0; pi < ps.size(); ++pi) {
    std::vector<Cell> line(cells.begin() + pi * bs.size(),
                           cells.begin() + (pi + 1) * bs.size());
    std::sort(line.begin(), line.end(),
              [](const Cell& a, const Cell& b) { return a.cer_diff < b.cer_diff; });
    bool ok = true;
    for (std::size_t k = 1; k < line.size(); ++k)
      if (line[k].coa < line[k - 1].coa - kGridTrendTolerance) ok = false;
    all_ok = all_ok && ok;
    trends.push_back({{"p", ps[pi]}, {"coa_non_decreasing", ok}});

    if (cfg.fit && line.size() >= 4) {
      std::vector<std::pair<double, double>> pts;
      for (const Cell& c : line)
        pts.emplace_back(16.0 / c.bits, -c.coa);  // x = C_Q, y = order cost
      const TrendFit f = fit_exponential(pts);
      fits.push_back({{"p", ps[pi]},
                      {"a", f.a},
                      {"b", f.b},
                      {"c", f.c},
                      {"rmse", f.rmse},
                      {"converged", f.converged},
                      {"b_positive", f.b > 0.0}});
    }
  }
  out.report = {{"kind", "coa_grid"},
                {"rows", n},
                {"trend_tolerance", kGridTrendTolerance},
                {"per_fraction", trends},
                {"all_trends_ok", all_ok}};
  if (cfg.fit) {
    out.fit = {{"kind", "coa_grid"}, {"per_fraction", fits}};
    out.has_fit = true;
  }
  out.summary = "coa_grid: " + std::to_string(n) + " cells, trends " +
                (all_ok ? "non-decreasing" : "NOT monotone");
  return out;
}

KindOutput run_cer_curve(const ExperimentConfig& cfg) {
  const LayeredModel m = build_model(cfg);
  const std::uint64_t curve_seed = mix_seed(cfg.seed, 0xC0);
  const QuantCurve curve = build_quant_curve(m, cfg.metric, cfg.ops.bits,
                                             cfg.ops.rounding, cfg.ops.scope,
                                             curve_seed);
  KindOutput out;
  out.csv = "B,C_Q,perf_raw,perf\n";
  double max_dev = 0.0;
  for (const QuantCurvePoint& pt : curve.points) {
    out.csv += std::to_string(pt.bits) + "," + fmt(pt.ratio) + "," +
               fmt(pt.perf_raw) + "," + fmt(pt.perf) + "\n";
    const CompressionOp q =
        quant_uniform(pt.bits, cfg.ops.rounding, cfg.ops.scope, curve_seed);
    const double c = cer(m, cfg.metric, q, curve);
    max_dev = std::max(max_dev, std::abs(c - 16.0 / pt.bits));
  }
  out.report = {{"kind", "cer_curve"},
                {"points", curve.points.size()},
                {"max_identity_deviation", max_dev}};
  out.summary = "cer_curve: " + std::to_string(curve.points.size()) +
                " points, max identity deviation " + fmt(max_dev);
  return out;
}

KindOutput run_theorem1(const ExperimentConfig& cfg, int jobs) {
  const int trials = cfg.trials;
  std::vector<std::string> rows(trials);
  std::vector<double> residuals(trials);
  parallel_for(trials, jobs, [&](std::size_t k) {
    TheoremInstance inst =
        (k % 2 == 0) ? make_theorem1_instance(mix_seed(cfg.seed, 0x1A, k))
                     : make_flip_instance(mix_seed(cfg.seed, 0x1B, k));
    inst.metric = cfg.metric;
    const Theorem1Result r = theorem1_check(inst);
    rows[k] = std::to_string(k) + "," + std::to_string(k % 2) + "," +
              std::to_string(r.partition.g1.size()) + "," +
              std::to_string(r.partition.g2.size()) + "," + fmt(r.lhs) + "," +
              fmt(r.rhs) + "," + fmt(r.residual);
    residuals[k] = r.residual;
  });

  const double max_residual =
      *std::max_element(residuals.begin(), residuals.end());
  KindOutput out;
  out.csv = "instance,flip,g1,g2,lhs,rhs,residual\n";
  for (const std::string& r : rows) out.csv += r + "\n";
  out.oracle_ok = max_residual < kTheorem1ResidualMax;
  out.report = {{"kind", "theorem1"},
                {"instances", trials},
                {"max_residual", max_residual},
                {"tolerance", kTheorem1ResidualMax},
                {"pass", out.oracle_ok}};
  out.summary = "theorem1: " + std::to_string(trials) +
                " instances, max residual " + fmt(max_residual) +
                (out.oracle_ok ? " (pass)" : " (FAIL)");
  return out;
}

KindOutput run_theorem2(const ExperimentConfig& cfg) {
  const LayeredModel m = build_model(cfg);
  const CompressionOp prune = make_prune(cfg.ops, cfg.ops.fractions.front());
  const Theorem2Result res = theorem2_experiment(m, cfg.metric, prune,
                                                 cfg.ops.bits, cfg.trials,
                                                 cfg.seed);
  KindOutput out;
  out.csv = "bits,C_Q,cer_diff,coa_mean,coa_se\n";
  for (const Theorem2Point& pt : res.points)
    out.csv += std::to_string(pt.bits) + "," + fmt(pt.c_q) + "," +
               fmt(pt.cer_diff) + "," + fmt(pt.coa_mean) + "," +
               fmt(pt.coa_se) + "\n";
  out.oracle_ok = res.monotone || !res.assumption_ok;
  out.report = {{"kind", "theorem2"},
                {"cer_p", res.cer_p},
                {"monotone", res.monotone},
                {"error_ratio", res.error_ratio},
                {"assumption_ok", res.assumption_ok},
                {"flagged_assumption_violating", !res.assumption_ok},
                {"trials", cfg.trials},
                {"pass", out.oracle_ok}};
  out.summary = std::string("theorem2: ") +
                (res.monotone ? "monotone" : "NOT monotone") +
                (res.assumption_ok ? "" : " (assumption-violating, flagged)");
  return out;
}

KindOutput run_violation(const ExperimentConfig& cfg) {
  const LayeredModel m = build_model(cfg);
  CompressionOp proto = make_prune(cfg.ops, 0.5);
  const CompressionOp quant =
      make_quant(cfg.ops, cfg.ops.bits.front(), mix_seed(cfg.seed, 0x77));
  std::vector<ViolationStep> steps;
  try {
    steps = violation_case_explorer(m, cfg.metric, proto, cfg.ops.fractions,
                                    quant);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("/ops/fractions: ") + e.what());
  }

  KindOutput out;
  out.csv = "p,pruned,transition,g1,coa,coa_ok\n";
  int counts[4] = {0, 0, 0, 0};
  bool case12_ok = true;
  for (const ViolationStep& s : steps) {
    out.csv += fmt(s.p) + "," + std::to_string(s.pruned_count) + "," +
               std::to_string(s.transition) + "," + std::to_string(s.g1_size) +
               "," + fmt(s.coa) + "," + (s.coa_ok ? "1" : "0") + "\n";
    ++counts[s.transition];
    if (s.transition != 3) case12_ok = case12_ok && s.coa_ok;
  }
  out.report = {{"kind", "violation"},
                {"steps", steps.size()},
                {"case1", counts[1]},
                {"case2", counts[2]},
                {"case3", counts[3]},
                {"case12_non_decreasing", case12_ok}};
  out.summary = "violation: " + std::to_string(steps.size()) + " steps, " +
                std::to_string(counts[3]) + " grown-g1 step(s)";
  return out;
}

KindOutput run_multistage(const ExperimentConfig& cfg) {
  const LayeredModel m = build_model(cfg);
  const CompressionOp quant =
      make_quant(cfg.ops, cfg.ops.bits.front(), mix_seed(cfg.seed, 0x3A));
  const CompressionOp proto = make_prune(cfg.ops, 0.5);
  const std::vector<MultiStageRow> rows =
      multi_stage(m, cfg.metric, cfg.total_p, cfg.splits, quant, proto);

  KindOutput out;
  out.csv = "p1,p2,score,advantage\n";
  bool weak_first_ok = true;
  for (const MultiStageRow& r : rows) {
    out.csv += fmt(r.p1) + "," + fmt(r.p2) + "," + fmt(r.score) + "," +
               fmt(r.advantage) + "\n";
    if (r.p1 < r.p2) weak_first_ok = weak_first_ok && r.advantage >= -1e-9;
  }
  out.report = {{"kind", "multistage"},
                {"total_p", cfg.total_p},
                {"splits", rows.size()},
                {"weak_first_advantage_nonneg", weak_first_ok}};
  out.summary = "multistage: " + std::to_string(rows.size()) +
                " splits, weaker-first advantage " +
                (weak_first_ok ? "non-negative" : "NEGATIVE somewhere");
  return out;
}

KindOutput run_mpq(const ExperimentConfig& cfg) {
  const LayeredModel m = build_model(cfg);
  KindOutput out;
  out.csv = "avg_bits,progressive,regressive,coa,disjoint,allocation\n";
  struct Row {
    double avg, coa;
  };
  std::vector<Row> sorted_rows;
  bool all_disjoint = true;
  for (const double avg : cfg.avg_bits) {
    const MpqResult r = mpq_orderings(m, cfg.metric, avg, cfg.bit_menu);
    std::string alloc;
    for (std::size_t i = 0; i < r.allocation.size(); ++i)
      alloc += (i ? "|" : "") + std::to_string(r.allocation[i]);
    out.csv += fmt(avg) + "," + fmt(r.progressive_score) + "," +
               fmt(r.regressive_score) + "," + fmt(r.coa) + "," +
               (r.disjoint ? "1" : "0") + "," + alloc + "\n";
    sorted_rows.push_back({avg, r.coa});
    all_disjoint = all_disjoint && r.disjoint;
  }
  std::sort(sorted_rows.begin(), sorted_rows.end(),
            [](const Row& a, const Row& b) { return a.avg > b.avg; });
  bool coa_grows = true;
  for (std::size_t k = 1; k < sorted_rows.size(); ++k)
    if (sorted_rows[k].coa < sorted_rows[k - 1].coa - 1e-9) coa_grows = false;
  out.report = {{"kind", "mpq"},
                {"sweeps", cfg.avg_bits.size()},
                {"all_disjoint", all_disjoint},
                {"coa_non_decreasing_as_avg_falls", coa_grows}};
  out.summary = std::string("mpq: disjoint ") +
                (all_disjoint ? "everywhere" : "VIOLATED") + ", trend " +
                (coa_grows ? "non-decreasing" : "NOT monotone");
  return out;
}

KindOutput run_rotation_prune(const ExperimentConfig& cfg) {
  const LayeredModel m = build_model(cfg);
  KindOutput out;
  out.csv = "p,matrix_wise,element_wise\n";
  std::vector<double> elems;
  for (const double p : cfg.ops.fractions) {
    const RotationPruningError e =
        rotation_pruning_error(m, make_prune(cfg.ops, p));
    out.csv += fmt(p) + "," + fmt(e.matrix_wise) + "," + fmt(e.element_wise) +
               "\n";
    elems.push_back(e.element_wise);
  }
  bool strictly_increasing = elems.size() > 1;
  for (std::size_t k = 1; k < elems.size(); ++k)
    if (elems[k] <= elems[k - 1]) strictly_increasing = false;
  const double max_elem = *std::max_element(elems.begin(), elems.end());
  out.report = {{"kind", "rotation_prune"},
                {"fractions", cfg.ops.fractions.size()},
                {"element_wise_strictly_increasing", strictly_increasing},
                {"element_wise_max", max_elem}};
  out.summary = "rotation_prune: " +
                std::to_string(cfg.ops.fractions.size()) +
                " fractions, element-wise max " + fmt(max_elem);
  return out;
}

KindOutput run_plan(const ExperimentConfig& cfg) {
  const LayeredModel m = build_model(cfg);
  const QuantCurve curve = build_quant_curve(m, cfg.metric, kCurveBits,
                                             Rounding::Nearest,
                                             ScaleScope::PerTensor, 0);
  const BruteForceResult bf = brute_force_order(m, cfg.metric, cfg.plan_ops);
  const Plan prog = progressive_order(m, cfg.metric, cfg.plan_ops, curve);
  const double prog_score = run_pipeline(m, cfg.metric, prog.steps).score;
  const RatioCheck ratio = plan_ratio_check(m, prog.steps);

  KindOutput out;
  out.csv = "order,score\n";
  for (const PermutationRow& row : bf.table) {
    std::string order;
    for (std::size_t k = 0; k < row.order.size(); ++k)
      order += (k ? "-" : "") + std::to_string(row.order[k]);
    out.csv += order + "," + fmt(row.score) + "\n";
  }

  json best_order = json::array();
  for (const CompressionOp& op : bf.best.steps) best_order.push_back(op.name());
  json prog_order = json::array();
  for (const CompressionOp& op : prog.steps) prog_order.push_back(op.name());
  out.report = {{"kind", "plan"},
                {"best_order", best_order},
                {"best_score", bf.best_score},
                {"heuristic_order", prog_order},
                {"heuristic_score", prog_score},
                {"heuristic_gap", bf.best_score - prog_score},
                {"predicted_rank", prog.predicted_rank},
                {"cer_warning", prog.cer_warning},
                {"ratio", {{"realized", ratio.realized},
                           {"nominal", ratio.nominal},
                           {"ok", ratio.ok},
                           {"exception", ratio.exception}}}};
  out.summary = "plan: best " + fmt(bf.best_score) + ", heuristic " +
                fmt(prog_score) + ", gap " + fmt(bf.best_score - prog_score);
  return out;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg,
                         const std::string& out_dir, int jobs) {
  KindOutput ko;
  if (cfg.kind == "coa_grid") ko = run_coa_grid(cfg, jobs);
  else if (cfg.kind == "cer_curve") ko = run_cer_curve(cfg);
  else if (cfg.kind == "theorem1") ko = run_theorem1(cfg, jobs);
  else if (cfg.kind == "theorem2") ko = run_theorem2(cfg);
  else if (cfg.kind == "violation") ko = run_violation(cfg);
  else if (cfg.kind == "multistage") ko = run_multistage(cfg);
  else if (cfg.kind == "mpq") ko = run_mpq(cfg);
  else if (cfg.kind == "rotation_prune") ko = run_rotation_prune(cfg);
  else if (cfg.kind == "plan") ko = run_plan(cfg);
  else throw ConfigError("/kind: unknown experiment kind '" + cfg.kind + "'");

  const fs::path dir(out_dir);
  fs::create_directories(dir);

  RunResult result;
  result.summary = ko.summary;
  result.oracle_ok = ko.oracle_ok;

  write_atomic(dir, "report.csv", ko.csv);
  result.files.push_back("report.csv");
  write_atomic(dir, "report.json", ko.report.dump(2) + "\n");
  result.files.push_back("report.json");
  if (ko.has_fit) {
    write_atomic(dir, "fit.json", ko.fit.dump(2) + "\n");
    result.files.push_back("fit.json");
  }

  json manifest = {
      {"config_hash", "fnv1a:" + hex16(fnv1a(cfg.raw))},
      {"kind", cfg.kind},
      {"seed", cfg.seed},
      {"versions",
       {{"ordlab", kVersion},
        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                      std::to_string(EIGEN_MAJOR_VERSION) + "." +
                      std::to_string(EIGEN_MINOR_VERSION)}}},
      {"files", result.files}};
  write_atomic(dir, "manifest.json", manifest.dump(2) + "\n");
  result.files.push_back("manifest.json");
  return result;
}

}  // namespace ordlab
