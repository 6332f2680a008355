#include "ordlab/linalg.hpp"

#include <map>
#include <mutex>
#include <stdexcept>
#include <string>

namespace ordlab {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument(
        "matmul: inner dimensions disagree (" + std::to_string(a.rows()) +
        "x" + std::to_string(a.cols()) + " * " + std::to_string(b.rows()) +
        "x" + std::to_string(b.cols()) + ")");
  }
  return a * b;
}

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

namespace {

Matrix build_hadamard(int n) {
  Matrix h(1, 1);
  h(0, 0) = 1.0;
  for (int m = 1; m < n; m *= 2) {
    Matrix next(2 * m, 2 * m);
    next.topLeftCorner(m, m) = h;
    next.topRightCorner(m, m) = h;
    next.bottomLeftCorner(m, m) = h;
    next.bottomRightCorner(m, m) = -h;
    h = std::move(next);
  }
  return h / std::sqrt(static_cast<double>(n));
}

}  // namespace

const Matrix& hadamard(int n) {
  if (!is_power_of_two(n)) {
    throw std::invalid_argument("hadamard: size " + std::to_string(n) +
                                " is not a power of two");
  }
  static std::mutex mu;
  static std::map<int, Matrix> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, build_hadamard(n)).first;
  return it->second;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  // splitmix64 finalizer over the combined value.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Matrix gaussian_matrix(int rows, int cols, std::uint64_t seed, double scale) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix out(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out(r, c) = scale * dist(eng);
  return out;
}

}  // namespace ordlab
