#pragma once
// Least-squares trend fitting for grid sweeps.

#include <utility>
#include <vector>

namespace ordlab {

struct TrendFit {
  double a = 0.0;  // y = a * exp(b * x) + c
  double b = 0.0;
  double c = 0.0;
  double rmse = 0.0;
  bool converged = false;
  std::vector<std::pair<double, double>> points;  // the data that was fitted
};

// Damped Gauss-Newton fit of a * exp(b * x) + c. Deterministic initializer:
// c0 = min y, b0 and a0 from log-linear regression on y - c0 (points with a
// non-positive residual sit out of that regression). At most 200 iterations;
// converged when the step norm drops below 1e-10, otherwise the best iterate
// comes back flagged. Needs at least 4 points; flat data short-circuits to
// a = b = 0, c = mean.
TrendFit fit_exponential(const std::vector<std::pair<double, double>>& points);

}  // namespace ordlab
