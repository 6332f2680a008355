#include "ordlab/fit.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ordlab {

namespace {

double sse_of(const std::vector<std::pair<double, double>>& pts, double a,
              double b, double c) {
  double s = 0.0;
  for (const auto& [x, y] : pts) {
    const double r = a * std::exp(b * x) + c - y;
    s += r * r;
  }
  return s;
}

}  // namespace

TrendFit fit_exponential(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 4)
    throw std::invalid_argument("fit_exponential: at least 4 points required");

  TrendFit fit;
  fit.points = points;
  const double n = static_cast<double>(points.size());

  double y_min = points.front().second, y_max = y_min, y_sum = 0.0;
  for (const auto& [x, y] : points) {
    y_min = std::min(y_min, y);
    y_max = std::max(y_max, y);
    y_sum += y;
  }
  if (y_max - y_min == 0.0) {
    fit.c = y_sum / n;
    fit.converged = true;
    return fit;
  }

  // Solve in y units of (y_max - y_min) so the step-size stopping rule means
  // the same thing at any data scale; map a and c back at the end.
  const double scale = y_max - y_min;
  std::vector<std::pair<double, double>> work = points;
  for (auto& [x, y] : work) y = (y - y_min) / scale;

  // Log-linear warm start on the residual above the floor.
  const double c0 = 0.0;
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  int used = 0;
  for (const auto& [x, y] : work) {
    const double r = y - c0;
    if (r <= 0.0) continue;
    const double ly = std::log(r);
    sx += x;
    sy += ly;
    sxx += x * x;
    sxy += x * ly;
    ++used;
  }
  const double det = used * sxx - sx * sx;
  if (used < 2 || det == 0.0) {
    fit.c = y_sum / n;
    fit.rmse = std::sqrt(sse_of(points, 0.0, 0.0, fit.c) / n);
    fit.converged = true;
    return fit;
  }
  double b = (used * sxy - sx * sy) / det;
  double a = std::exp((sy - b * sx) / used);
  double c = c0;

  double sse = sse_of(work, a, b, c);
  double lambda = 1e-3;
  for (int iter = 0; iter < 200; ++iter) {
    Eigen::Matrix3d jtj = Eigen::Matrix3d::Zero();
    Eigen::Vector3d jtr = Eigen::Vector3d::Zero();
    for (const auto& [x, y] : work) {
      const double e = std::exp(b * x);
      const Eigen::Vector3d j(e, a * x * e, 1.0);
      const double r = a * e + c - y;
      jtj += j * j.transpose();
      jtr += j * r;
    }

    bool accepted = false;
    double step_norm = 0.0;
    while (lambda <= 1e12) {
      Eigen::Matrix3d damped = jtj;
      damped.diagonal().array() += lambda;
      const Eigen::Vector3d step = damped.ldlt().solve(-jtr);
      const double trial_sse =
          sse_of(work, a + step(0), b + step(1), c + step(2));
      if (std::isfinite(trial_sse) && trial_sse <= sse) {
        a += step(0);
        b += step(1);
        c += step(2);
        sse = trial_sse;
        step_norm = step.norm();
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) break;
    if (step_norm < 1e-10) {
      fit.converged = true;
      break;
    }
  }

  fit.a = a * scale;
  fit.b = b;
  fit.c = c * scale + y_min;
  fit.rmse = scale * std::sqrt(sse / n);
  return fit;
}

}  // namespace ordlab
