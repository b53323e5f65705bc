#pragma once

// Small builders shared by the unit and acceptance tests.

#include "eki/core.hpp"

#include <cstdint>
#include <random>

namespace eki::testing {

inline Matrix random_matrix(Index rows, Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r) m(r, c) = n(gen);
  return m;
}

inline Vector random_vector(Index n, std::uint64_t seed, double scale = 1.0) {
  return random_matrix(n, 1, seed, scale).col(0);
}

/// Random SPD matrix with condition number of order 10.
inline Matrix random_spd(Index n, std::uint64_t seed) {
  const Matrix b = random_matrix(n, n, seed);
  return b * b.transpose() / static_cast<double>(n) + Matrix::Identity(n, n);
}

/// y = A u_dagger for a random K x d matrix; Gamma given or identity.
inline InverseProblem random_linear_problem(Index k, Index d, std::uint64_t seed,
                                            const Matrix* gamma = nullptr) {
  InverseProblem p;
  p.forward = ForwardMap::from_matrix(random_matrix(k, d, seed));
  p.truth = random_vector(d, seed + 1);
  p.data = p.forward.matrix() * *p.truth;
  p.noise = gamma ? NoiseModel::from_matrix(*gamma) : NoiseModel::identity(k);
  return p;
}

/// Relative Frobenius distance, with an absolute floor for zero references.
inline double rel_err(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

}  // namespace eki::testing
