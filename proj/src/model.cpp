#include "ordlab/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ordlab {

const char* level_name(Level t) {
  switch (t) {
    case Level::Element: return "element";
    case Level::Row: return "row";
    case Level::Layer: return "layer";
    case Level::Model: return "model";
  }
  return "?";
}

Level lut_level(Level a, Level b) {
  return static_cast<int>(a) >= static_cast<int>(b) ? a : b;
}

LayeredModel LayeredModel::synthetic(const std::vector<int>& dims,
                                     std::uint64_t seed, int calib_samples) {
  if (dims.size() < 2) {
    throw std::invalid_argument(
        "synthetic model: dims needs at least two entries");
  }
  for (int d : dims) {
    if (d < 1) throw std::invalid_argument("synthetic model: dims must be positive");
  }
  if (calib_samples < 1) {
    throw std::invalid_argument("synthetic model: calibration batch is empty");
  }
  LayeredModel m;
  m.dims_ = dims;
  m.seed_ = seed;
  const int n_layers = static_cast<int>(dims.size()) - 1;
  m.layers_.resize(n_layers);
  for (int i = 0; i < n_layers; ++i) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(dims[i]));
    m.layers_[i].weights =
        gaussian_matrix(dims[i + 1], dims[i], mix_seed(seed, 0x57, i), scale);
  }
  m.calib_ = gaussian_matrix(dims[0], calib_samples, mix_seed(seed, 0xCA), 1.0);
  m.finalize();
  return m;
}

namespace {

std::uint64_t act_stream_seed(const ActQuant& aq, int layer) {
  return mix_seed(aq.seed, 0xAC7, static_cast<std::uint64_t>(layer));
}

}  // namespace

Matrix layer_input(const LayeredModel& m, int i, const Matrix& x) {
  const LayerState& ls = m.layer(i);
  Matrix a = x;
  if (ls.rotated) a = hadamard(static_cast<int>(a.rows())) * a;
  if (ls.act_quant) {
    const ActQuant& aq = *ls.act_quant;
    const std::vector<double>* frozen =
        aq.frozen_scales.empty() ? nullptr : &aq.frozen_scales;
    a = quantize_matrix(a, aq.bits, aq.scope, aq.rounding,
                        act_stream_seed(aq, i), frozen);
  }
  return a;
}

Matrix layer_product(const LayeredModel& m, int i, const Matrix& x) {
  const LayerState& ls = m.layer(i);
  if (ls.weights.cols() != x.rows()) {
    throw std::invalid_argument("layer_product: activation shape mismatch at layer " +
                                std::to_string(i));
  }
  Matrix z = ls.weights * layer_input(m, i, x);
  if (ls.rotated) z = hadamard(static_cast<int>(z.rows())).transpose() * z;
  return z;
}

void LayeredModel::finalize() {
  const int n = layer_count();
  acts_.assign(n, Matrix());
  outs_.assign(n, Matrix());
  Matrix x = calib_;
  for (int i = 0; i < n; ++i) {
    acts_[i] = x;
    outs_[i] = layer_product(*this, i, x);
    if (i + 1 < n) x = relu(outs_[i]);
  }
}

namespace {

int argmax_col(const Matrix& m, int c) {
  int best = 0;
  for (int r = 1; r < m.rows(); ++r)
    if (m(r, c) > m(best, c)) best = r;
  return best;
}

}  // namespace

LayeredModel LayeredModel::with_self_labels() const {
  LayeredModel out = *this;
  const Matrix& z = out.final_output();
  out.labels_.resize(z.cols());
  for (int c = 0; c < z.cols(); ++c) out.labels_[c] = argmax_col(z, c);
  return out;
}

std::vector<Unit> units_at(const LayeredModel& m, Level t) {
  if (t == Level::Model) {
    throw std::invalid_argument("units_at: model-level units are not enumerable");
  }
  std::vector<Unit> out;
  out.reserve(unit_count(m, t));
  for (int i = 0; i < m.layer_count(); ++i) {
    switch (t) {
      case Level::Layer:
        out.push_back({i, -1, -1, Level::Layer});
        break;
      case Level::Row:
        for (int r = 0; r < m.rows(i); ++r)
          out.push_back({i, r, -1, Level::Row});
        break;
      case Level::Element:
        for (int r = 0; r < m.rows(i); ++r)
          for (int c = 0; c < m.cols(i); ++c)
            out.push_back({i, r, c, Level::Element});
        break;
      default:
        break;
    }
  }
  return out;
}

std::size_t unit_count(const LayeredModel& m, Level t) {
  std::size_t n = 0;
  for (int i = 0; i < m.layer_count(); ++i) {
    switch (t) {
      case Level::Layer: n += 1; break;
      case Level::Row: n += m.rows(i); break;
      case Level::Element: n += static_cast<std::size_t>(m.rows(i)) * m.cols(i); break;
      default:
        throw std::invalid_argument("unit_count: model-level units are not enumerable");
    }
  }
  return n;
}

std::size_t unit_index(const LayeredModel& m, const Unit& u) {
  std::size_t off = 0;
  for (int i = 0; i < u.layer; ++i) {
    switch (u.level) {
      case Level::Layer: off += 1; break;
      case Level::Row: off += m.rows(i); break;
      case Level::Element: off += static_cast<std::size_t>(m.rows(i)) * m.cols(i); break;
      default: throw std::invalid_argument("unit_index: bad level");
    }
  }
  switch (u.level) {
    case Level::Layer: return off;
    case Level::Row: return off + u.row;
    case Level::Element:
      return off + static_cast<std::size_t>(u.row) * m.cols(u.layer) + u.col;
    default: throw std::invalid_argument("unit_index: bad level");
  }
}

Matrix layer_error(const LayeredModel& original, const LayeredModel& compressed,
                   int i) {
  return layer_product(compressed, i, original.activation(i)) -
         original.output(i);
}

Matrix unit_error(const LayeredModel& original, const LayeredModel& compressed,
                  const Unit& u) {
  const int i = u.layer;
  switch (u.level) {
    case Level::Layer:
      return layer_error(original, compressed, i);
    case Level::Row:
      return layer_error(original, compressed, i).row(u.row);
    case Level::Element: {
      if (compressed.layer(i).rotated || original.layer(i).rotated) {
        throw std::invalid_argument(
            "unit_error: element slices are not attributable on rotated layers");
      }
      const Matrix a = layer_input(compressed, i, original.activation(i));
      const double wc = compressed.layer(i).weights(u.row, u.col);
      const double wo = original.layer(i).weights(u.row, u.col);
      return wc * a.row(u.col) - wo * original.activation(i).row(u.col);
    }
    default:
      throw std::invalid_argument("unit_error: model-level units have no slice");
  }
}

double evaluate(const LayeredModel& compressed, const LayeredModel& original,
                const Metric& metric) {
  if (compressed.layer_count() != original.layer_count()) {
    throw std::invalid_argument("evaluate: models have different depths");
  }
  switch (metric.kind) {
    case MetricKind::SyntheticExact: {
      double total = 0.0;
      for (int i = 0; i < original.layer_count(); ++i) {
        total += frob_norm_sq(layer_error(original, compressed, i));
      }
      return metric.base_value - metric.beta * total;
    }
    case MetricKind::TaskAccuracy: {
      if (!original.has_labels()) {
        throw std::invalid_argument(
            "evaluate: TaskAccuracy needs labels on the original model");
      }
      const Matrix& z = compressed.final_output();
      const auto& labels = original.labels();
      int hits = 0;
      for (int c = 0; c < z.cols(); ++c)
        if (argmax_col(z, c) == labels[c]) ++hits;
      return static_cast<double>(hits) / static_cast<double>(z.cols());
    }
  }
  throw std::logic_error("evaluate: unknown metric");
}

Matrix quantize_matrix(const Matrix& w, int bits, ScaleScope scope,
                       Rounding rounding, std::uint64_t stream_seed,
                       const std::vector<double>* frozen_scales,
                       std::vector<double>* out_scales) {
  if (bits < 2 || bits > 16) {
    throw std::invalid_argument("quantize: bits must be in [2, 16], got " +
                                std::to_string(bits));
  }
  const double qmax = static_cast<double>((1 << (bits - 1)) - 1);
  const int nscales = scope == ScaleScope::PerTensor
                          ? 1
                          : static_cast<int>(w.rows());
  std::vector<double> scales(nscales, 0.0);
  if (frozen_scales) {
    if (static_cast<int>(frozen_scales->size()) != nscales) {
      throw std::invalid_argument("quantize: frozen scale count mismatch");
    }
    scales = *frozen_scales;
  } else if (scope == ScaleScope::PerTensor) {
    scales[0] = w.size() == 0 ? 0.0 : w.cwiseAbs().maxCoeff() / qmax;
  } else {
    for (int r = 0; r < w.rows(); ++r)
      scales[r] = w.cols() == 0 ? 0.0 : w.row(r).cwiseAbs().maxCoeff() / qmax;
  }
  if (out_scales) *out_scales = scales;

  UniformStream stream(stream_seed);
  Matrix q(w.rows(), w.cols());
  for (int r = 0; r < w.rows(); ++r) {
    const double s = scales[scope == ScaleScope::PerTensor ? 0 : r];
    for (int c = 0; c < w.cols(); ++c) {
      // One draw per entry, unconditionally, to keep streams aligned across
      // models whose entries differ.
      double u = 0.0;
      if (rounding == Rounding::Stochastic) u = stream.next();
      if (s <= 0.0) {
        q(r, c) = 0.0;
        continue;
      }
      double t = w(r, c) / s;
      if (t > qmax) t = qmax;     // only reachable with frozen scales
      if (t < -qmax) t = -qmax;
      double k;
      if (rounding == Rounding::Nearest) {
        k = std::nearbyint(t);
      } else {
        k = std::floor(t);
        if (u < t - k) k += 1.0;
      }
      q(r, c) = k * s;
    }
  }
  return q;
}

}  // namespace ordlab
