#include "ggdopt/baselines.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "ggdopt/datagen.hpp"
#include "ggdopt/errors.hpp"

namespace ggdopt {

namespace {

// Minimizer of 1/2 y'Py + q'y - mu a'y + mu kappa ||y|| in the eigenbasis of P.
class LagrangianMinimizer {
 public:
  LagrangianMinimizer(const Matrix& P, const Vector& q, const Vector& a, double kappa)
      : q_(q), a_(a), kappa_(kappa) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(P);
    if (eig.info() != Eigen::Success) throw NumericalError("solve_cone_qp: eigensolver failed");
    eigenvalues_ = eig.eigenvalues();
    basis_ = eig.eigenvectors();
    if (!(eigenvalues_.minCoeff() > 0.0)) {
      throw IllPosedError("solve_cone_qp: quadratic term is not positive definite (smallest "
                          "eigenvalue " + std::to_string(eigenvalues_.minCoeff()) + ")");
    }
    isotropic_ = eigenvalues_.maxCoeff() == eigenvalues_.minCoeff();
    qt_ = basis_.transpose() * q_;
    at_ = basis_.transpose() * a_;
  }

  Vector unconstrained() const { return basis_ * (-qt_.cwiseQuotient(eigenvalues_)); }

  Vector at(double mu) const {
    const Vector w = mu * at_ - qt_;
    const double wn = w.norm();
    const double target = mu * kappa_;
    if (wn <= target) return Vector::Zero(q_.size());
    double nu;
    if (isotropic_) {
      const double p = eigenvalues_[0];
      nu = target * p / (wn - target);
    } else {
      nu = shift(w, target);
    }
    return basis_ * w.cwiseQuotient((eigenvalues_.array() + nu).matrix());
  }

 private:
  // nu with nu * ||(Lambda + nu)^{-1} w|| = target; the left side increases from 0 to ||w||.
  double shift(const Vector& w, double target) const {
    auto phi = [&](double nu) {
      return nu * w.cwiseQuotient((eigenvalues_.array() + nu).matrix()).norm();
    };
    double lo = 0.0;
    double hi = std::max(1.0, target);
    while (phi(hi) < target) hi *= 2.0;
    for (int it = 0; it < 200 && hi - lo > 1e-16 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      (phi(mid) < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }

  Vector q_, a_;
  double kappa_;
  Vector eigenvalues_;
  Matrix basis_;
  Vector qt_, at_;
  bool isotropic_ = false;
};

}  // namespace

ConeQpSolution solve_cone_qp(const Matrix& P, const Vector& q, const Vector& a, double d,
                             double kappa, const Matrix& factor) {
  const Index n = q.size();
  if (P.rows() != n || P.cols() != n || a.size() != n) {
    throw InvalidArgument("solve_cone_qp: shape mismatch");
  }
  if (factor.size() != 0 && (factor.rows() != n || factor.cols() != n)) {
    throw InvalidArgument("solve_cone_qp: factor shape mismatch");
  }
  if (!(kappa >= 0.0)) throw InvalidArgument("solve_cone_qp: kappa must be nonnegative");

  const bool whiten = factor.size() != 0;
  // Work in y = L'x so the cone becomes kappa ||y|| <= a_y'y + d.
  Matrix Py = P;
  Vector qy = q;
  Vector ay = a;
  if (whiten) {
    const auto L = factor.triangularView<Eigen::Lower>();
    Matrix tmp = L.solve(P);                                   // L^{-1} P
    Py = L.solve(tmp.transpose()).transpose();                 // L^{-1} P L^{-T}
    Py = 0.5 * (Py + Py.transpose()).eval();
    qy = L.solve(q);
    ay = L.solve(a);
  }
  if (d < 0.0 && ay.norm() <= kappa) {
    throw InfeasibleError("cone is empty: d = " + std::to_string(d) + " < 0 and ||cbar|| = " +
                          std::to_string(ay.norm()) + " <= kappa = " + std::to_string(kappa));
  }

  LagrangianMinimizer lag(Py, qy, ay, kappa);
  auto violation = [&](const Vector& y) { return kappa * y.norm() - ay.dot(y) - d; };

  Vector y = lag.unconstrained();
  double mu = 0.0;
  bool active = false;
  if (violation(y) > 0.0) {
    active = true;
    double lo = 0.0;
    double hi = 1.0;
    int expansions = 0;
    while (violation(lag.at(hi)) > 0.0) {
      lo = hi;
      hi *= 2.0;
      if (++expansions > 200) {
        std::ostringstream msg;
        msg << "solve_cone_qp: could not bracket the multiplier (mu = " << hi
            << ", violation = " << violation(lag.at(hi)) << ")";
        throw NumericalError(msg.str());
      }
    }
    for (int it = 0; it < 400 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
      const double mid = 0.5 * (lo + hi);
      (violation(lag.at(mid)) > 0.0 ? lo : hi) = mid;
    }
    mu = hi;  // feasible side of the bracket
    y = lag.at(mu);
  }

  ConeQpSolution sol;
  sol.multiplier = mu;
  sol.active = active;
  if (whiten) {
    sol.x = factor.triangularView<Eigen::Lower>().transpose().solve(y);
  } else {
    sol.x = y;
  }

  // KKT residual in the original coordinates.
  const Vector Lt_x = whiten ? Vector(factor.transpose() * sol.x) : sol.x;
  const double spread = Lt_x.norm();
  Vector stationarity = P * sol.x + q - mu * a;
  double subgradient_gap = 0.0;
  if (mu > 0.0) {
    if (spread > 0.0) {
      const Vector grad_norm = whiten ? Vector(factor * Lt_x / spread) : Vector(sol.x / spread);
      stationarity += mu * kappa * grad_norm;
    } else {
      // At the apex the norm contributes any vector of size <= mu kappa (whitened).
      const Vector residual = whiten ? Vector(factor.triangularView<Eigen::Lower>().solve(
                                           Vector(stationarity)))
                                     : stationarity;
      subgradient_gap = std::max(0.0, residual.norm() - mu * kappa);
      stationarity.setZero();
    }
  }
  const double cone = kappa * spread - a.dot(sol.x) - d;
  sol.kkt_residual = std::max({stationarity.cwiseAbs().maxCoeff(), subgradient_gap,
                               std::max(0.0, cone), std::abs(mu * cone)});
  return sol;
}

SocpSolution socp_solve(const CCPInstance& instance) {
  const auto& obj = instance.objective();
  const auto& con = instance.constraint();
  const ConeQpSolution qp =
      solve_cone_qp(obj.A(), obj.b(), con.cbar(), con.d(), con.kappa(),
                    con.identity_covariance() ? Matrix() : con.covariance_factor());
  SocpSolution sol;
  sol.x_star = qp.x;
  sol.f_star = obj.value(qp.x);
  sol.multiplier = qp.multiplier;
  sol.active = qp.active;
  sol.kkt_residual = qp.kkt_residual;
  return sol;
}

Vector project_onto_cone(const LinearChanceConstraint& constraint, const Vector& x) {
  if (x.size() != constraint.dim()) throw InvalidArgument("project_onto_cone: dimension mismatch");
  if (constraint.cone_violation(x) <= 0.0) return x;
  const Index n = x.size();
  return solve_cone_qp(Matrix::Identity(n, n), -x, constraint.cbar(), constraint.d(),
                       constraint.kappa(),
                       constraint.identity_covariance() ? Matrix() : constraint.covariance_factor())
      .x;
}

BaselinePoint empirical_mean_baseline(const CCPInstance& instance, const Matrix& draws) {
  if (draws.rows() < 1 || draws.cols() != instance.dim()) {
    throw InvalidArgument("empirical_mean_baseline: draws must be L x n with L >= 1");
  }
  const Vector hbar = draws.colwise().mean().transpose();
  BaselinePoint p;
  p.x = solve_restricted(instance, hbar, 0.0).x;
  p.f = instance.objective().value(p.x);
  return p;
}

}  // namespace ggdopt
