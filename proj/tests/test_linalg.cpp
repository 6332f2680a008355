#include <doctest.h>

#include <set>
#include <stdexcept>

#include "oracles.hpp"
#include "ordlab/linalg.hpp"

using namespace ordlab;

TEST_CASE("matmul matches the naive product and checks shapes") {
  const Matrix a = gaussian_matrix(4, 6, 1, 1.0);
  const Matrix b = gaussian_matrix(6, 3, 2, 1.0);
  const Matrix c = matmul(a, b);
  CHECK(frob_norm_sq(c - oracle::matmul(a, b)) < 1e-20);
  CHECK_THROWS_AS(matmul(a, gaussian_matrix(5, 3, 3, 1.0)),
                  std::invalid_argument);
}

TEST_CASE("frob_norm_sq matches the entrywise sum") {
  const Matrix a = gaussian_matrix(5, 7, 9, 2.0);
  CHECK(frob_norm_sq(a) == doctest::Approx(oracle::frob_sq(a)).epsilon(1e-12));
  CHECK(frob_norm_sq(Matrix::Zero(3, 3)) == 0.0);
}

TEST_CASE("relu clamps negatives only") {
  Matrix a(2, 2);
  a << -1.0, 2.0, 0.0, -3.5;
  const Matrix r = relu(a);
  CHECK(r(0, 0) == 0.0);
  CHECK(r(0, 1) == 2.0);
  CHECK(r(1, 0) == 0.0);
  CHECK(r(1, 1) == 0.0);
}

TEST_CASE("hadamard is orthonormal and rejects non powers of two") {
  for (int n : {2, 4, 8, 16}) {
    const Matrix& h = hadamard(n);
    const Matrix eye = h * h.transpose();
    CHECK(frob_norm_sq(eye - Matrix::Identity(n, n)) < 1e-20);
  }
  CHECK_THROWS_AS(hadamard(6), std::invalid_argument);
  CHECK(is_power_of_two(8));
  CHECK_FALSE(is_power_of_two(12));
  CHECK_FALSE(is_power_of_two(0));
}

TEST_CASE("mix_seed decorrelates tags and is deterministic") {
  CHECK(mix_seed(1, 2) == mix_seed(1, 2));
  std::set<std::uint64_t> seen;
  for (std::uint64_t t = 0; t < 64; ++t) seen.insert(mix_seed(12345, t));
  CHECK(seen.size() == 64);
  CHECK(mix_seed(1, 2, 3) == mix_seed(mix_seed(1, 2), 3));
  CHECK(mix_seed(1, 2, 3, 4) == mix_seed(mix_seed(1, 2, 3), 4));
}

TEST_CASE("uniform stream is reproducible and in range") {
  UniformStream s1(99), s2(99);
  for (int i = 0; i < 100; ++i) {
    const double v = s1.next();
    CHECK(v == s2.next());
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("gaussian_matrix is seed-deterministic with the right moments") {
  const Matrix a = gaussian_matrix(40, 40, 7, 1.0);
  const Matrix b = gaussian_matrix(40, 40, 7, 1.0);
  CHECK(frob_norm_sq(a - b) == 0.0);
  CHECK(frob_norm_sq(a - gaussian_matrix(40, 40, 8, 1.0)) > 1.0);
  // 1600 samples: mean se ~ 0.025, second moment se ~ 0.035.
  CHECK(std::abs(a.mean()) < 0.1);
  CHECK(frob_norm_sq(a) / 1600.0 == doctest::Approx(1.0).epsilon(0.15));
  const Matrix scaled = gaussian_matrix(40, 40, 7, 0.5);
  CHECK(frob_norm_sq(scaled - 0.5 * a) < 1e-20);
}
