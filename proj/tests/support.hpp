#pragma once

#include <random>

#include "ggdopt/ccp.hpp"

namespace ggdopt::testing {

/// min 1/2 x'x + 1'x  s.t.  Prob{h'x + 1 >= 0} >= 1 - rho,  h ~ N(1, I).
inline CCPInstance linear_instance(Index n = 8, double rho = 0.1, std::uint64_t seed = 1) {
  return CCPInstance(QuadraticObjective::isotropic(Vector::Ones(n)),
                     LinearChanceConstraint(Vector::Ones(n), 1.0, rho),
                     UncertaintySource::analytic(Vector::Ones(n), Matrix::Identity(n, n), seed));
}

inline Vector random_vector(Index n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

/// Symmetric positive definite with eigenvalues in [lo, hi].
inline Matrix random_spd(Index n, std::mt19937_64& rng, double lo = 0.5, double hi = 3.0) {
  Matrix G(n, n);
  std::normal_distribution<double> normal;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) G(i, j) = normal(rng);
  Eigen::HouseholderQR<Matrix> qr(G);
  const Matrix Q = qr.householderQ();
  std::uniform_real_distribution<double> uni(lo, hi);
  Vector ev(n);
  for (Index i = 0; i < n; ++i) ev[i] = uni(rng);
  Matrix S = Q * ev.asDiagonal() * Q.transpose();
  return 0.5 * (S + S.transpose());
}

}  // namespace ggdopt::testing
