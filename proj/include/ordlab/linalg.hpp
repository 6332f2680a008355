#pragma once

// Dense linear-algebra surface for the order laboratory. Eigen is the only
// math dependency; everything here is a thin, checked layer over it plus the
// deterministic RNG streams the rest of the code builds on.

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace ordlab {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Matrix = Mat<double>;

// Shape-checked product. Eigen only asserts in debug builds; callers here
// want a recoverable error for malformed pipelines.
Matrix matmul(const Matrix& a, const Matrix& b);

// Sum of squared entries, usable on any Eigen expression.
template <typename Derived>
double frob_norm_sq(const Eigen::MatrixBase<Derived>& a) {
  return a.squaredNorm();
}

template <typename Derived>
auto relu(const Eigen::MatrixBase<Derived>& a) {
  return a.cwiseMax(typename Derived::Scalar(0));
}

// Orthonormal Hadamard matrix of size n (power of two), Sylvester recursion
// scaled by 1/sqrt(n) so that H * H^T == I. Cached per size.
const Matrix& hadamard(int n);

bool is_power_of_two(int n);

// --- deterministic randomness -------------------------------------------
//
// All randomness flows through explicit 64-bit stream seeds. mix_seed is a
// splitmix64 step so that (seed, tag, index...) tuples give decorrelated
// streams without any global state.

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag);

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a,
                              std::uint64_t b) {
  return mix_seed(mix_seed(seed, a), b);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a,
                              std::uint64_t b, std::uint64_t c) {
  return mix_seed(mix_seed(seed, a, b), c);
}

// U(0,1) stream. Consumers must draw exactly one value per site they might
// randomize, so that streams stay aligned across models that differ only in
// entry values.
class UniformStream {
 public:
  explicit UniformStream(std::uint64_t seed) : eng_(seed) {}
  double next() { return dist_(eng_); }

 private:
  std::mt19937_64 eng_;
  std::uniform_real_distribution<double> dist_{0.0, 1.0};
};

// r x c matrix of N(0, scale^2) entries, filled row-major for a fixed seed.
Matrix gaussian_matrix(int rows, int cols, std::uint64_t seed, double scale);

}  // namespace ordlab
