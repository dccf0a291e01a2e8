#pragma once

// Analytic reference solutions for the Gaussian linear chance constrained
// problem. For rho < 1/2 and h ~ N(cbar, Sigma) the chance constraint is the
// second-order cone
//
//   kappa * ||Sigma^{1/2} x|| <= cbar'x + d,   kappa = -Phi^{-1}(rho),
//
// and both the SOCP baseline and feasibility repair reduce to one KKT routine
// for a strictly convex quadratic over that cone.

#include "ggdopt/ccp.hpp"
#include "ggdopt/normal.hpp"

namespace ggdopt {

/// Phi^{-1}(p); throws InvalidArgument unless 0 < p < 1.
inline double quantile_gaussian(double p) { return normal_quantile(p); }

struct ConeQpSolution {
  Vector x;
  double multiplier = 0.0;  ///< mu >= 0 for the cone constraint
  bool active = false;
  double kkt_residual = 0.0;
};

/// min 1/2 x'Px + q'x  s.t.  kappa ||L'x|| <= a'x + d, with P positive
/// definite and L a lower-triangular factor (identity when `factor` is empty).
///
/// Tests the unconstrained minimizer first; otherwise finds the multiplier by
/// a bracketed 1D root search on the (monotone) constraint value of the
/// Lagrangian minimizer. Throws InfeasibleError for an empty cone,
/// IllPosedError if P is not positive definite and NumericalError if the
/// root cannot be bracketed.
ConeQpSolution solve_cone_qp(const Matrix& P, const Vector& q, const Vector& a, double d,
                             double kappa, const Matrix& factor = Matrix());

struct SocpSolution {
  Vector x_star;
  double f_star = 0.0;
  double multiplier = 0.0;
  bool active = false;
  double kkt_residual = 0.0;
};

/// Exact minimizer of the instance objective under the cone reformulation of
/// its chance constraint. Non-identity covariance is handled by whitening.
SocpSolution socp_solve(const CCPInstance& instance);

/// Euclidean projection onto { x : kappa ||Sigma^{1/2} x|| <= cbar'x + d }.
/// Returns x unchanged when it is already feasible.
Vector project_onto_cone(const LinearChanceConstraint& constraint, const Vector& x);

struct BaselinePoint {
  Vector x;
  double f = 0.0;
};

/// Restricted problem at the empirical mean of `draws` with z = 0.
BaselinePoint empirical_mean_baseline(const CCPInstance& instance, const Matrix& draws);

}  // namespace ggdopt
