#pragma once

// Chance constrained problem instances:
//
//   min_x  f(x) = 1/2 x'Ax + b'x + c0
//   s.t.   Prob_h { h'x + d >= 0 } >= 1 - rho
//
// with h drawn either from an analytic Gaussian N(cbar, Sigma) or resampled
// from a stored set of draws.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

namespace ggdopt {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

class QuadraticObjective {
 public:
  /// Throws InvalidArgument if the shapes disagree or A is not exactly symmetric.
  QuadraticObjective(Matrix hessian, Vector linear, double offset = 0.0);

  /// f(x) = 1/2 x'x + b'x.
  static QuadraticObjective isotropic(Vector linear);

  Index dim() const { return linear_.size(); }

  double value(const Vector& x) const;
  Vector gradient(const Vector& x) const;
  /// Constant for the quadratic family; x is only checked for shape.
  const Matrix& hessian(const Vector& x) const;

  const Matrix& A() const { return hessian_; }
  const Vector& b() const { return linear_; }
  double c0() const { return offset_; }

 private:
  void check_dim(const Vector& x, const char* op) const;

  Matrix hessian_;
  Vector linear_;
  double offset_;
};

/// Prob{ h'x + d >= 0 } >= 1 - rho with h ~ (cbar, covariance).
class LinearChanceConstraint {
 public:
  /// rho must lie in (0, 0.5); covariance must be symmetric positive definite.
  LinearChanceConstraint(Vector cbar, double d, double rho, Matrix covariance);
  LinearChanceConstraint(Vector cbar, double d, double rho);

  Index dim() const { return cbar_.size(); }
  const Vector& cbar() const { return cbar_; }
  double d() const { return d_; }
  double rho() const { return rho_; }
  const Matrix& covariance() const { return covariance_; }
  /// Lower Cholesky factor of the covariance.
  const Matrix& covariance_factor() const { return chol_; }
  bool identity_covariance() const { return identity_; }

  /// g(x, h) = h'x + d.
  double value(const Vector& x, const Vector& h) const;
  /// g at the mean, cbar'x + d.
  double mean_value(const Vector& x) const;
  /// Standard deviation of g(x, h) under the covariance, sqrt(x' Sigma x).
  double spread(const Vector& x) const;
  /// Exact Gaussian probability Phi((cbar'x + d) / sqrt(x' Sigma x)).
  double feasibility_probability(const Vector& x) const;
  /// kappa = -Phi^{-1}(rho) > 0.
  double kappa() const;
  /// kappa * sqrt(x' Sigma x) - (cbar'x + d); nonpositive on the feasible set.
  double cone_violation(const Vector& x) const;

 private:
  Vector cbar_;
  double d_;
  double rho_;
  Matrix covariance_;
  Matrix chol_;
  bool identity_;
};

enum class UncertaintyKind { kAnalyticGaussian, kEmpiricalSamples };

std::string to_string(UncertaintyKind kind);
UncertaintyKind parse_uncertainty_kind(const std::string& text);

/// Source of draws of the uncertain vector h.
///
/// Empirical mode only ever resamples stored rows; it has no access to any density.
class UncertaintySource {
 public:
  static UncertaintySource analytic(Vector mean, Matrix covariance, std::uint64_t seed);
  /// `samples` is L x d, one draw per row. An empty matrix is allowed; drawing from it fails.
  static UncertaintySource empirical(Matrix samples, std::uint64_t seed);

  UncertaintyKind kind() const { return kind_; }
  Index dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  const Vector& mean() const { return mean_; }
  const Matrix& covariance() const { return covariance_; }
  const Matrix& samples() const { return samples_; }

  /// count x d matrix of draws using the source's own seed.
  Matrix draw(Index count) const { return draw(count, seed_); }
  Matrix draw(Index count, std::uint64_t seed) const;

 private:
  UncertaintySource() = default;

  UncertaintyKind kind_ = UncertaintyKind::kAnalyticGaussian;
  Index dim_ = 0;
  std::uint64_t seed_ = 0;
  Vector mean_;
  Matrix covariance_;
  Matrix chol_;
  Matrix samples_;
};

class CCPInstance {
 public:
  /// Throws InvalidArgument when the component dimensions disagree.
  CCPInstance(QuadraticObjective objective, LinearChanceConstraint constraint,
              UncertaintySource uncertainty);

  Index dim() const { return objective_.dim(); }
  const QuadraticObjective& objective() const { return objective_; }
  const LinearChanceConstraint& constraint() const { return constraint_; }
  const UncertaintySource& uncertainty() const { return uncertainty_; }

  /// Stable 64-bit hash of every number defining the instance.
  std::uint64_t fingerprint() const;

 private:
  QuadraticObjective objective_;
  LinearChanceConstraint constraint_;
  UncertaintySource uncertainty_;
};

/// Hex rendering used in sidecar metadata.
std::string fingerprint_hex(std::uint64_t fp);

/// Parses the key-value instance format (see README). Relative `samples`
/// paths resolve against `base_dir`.
CCPInstance parse_instance(std::istream& in, const std::filesystem::path& base_dir = {});
CCPInstance load_instance(const std::filesystem::path& path);

/// Reads a headerless numeric CSV, one row per line.
Matrix read_matrix_csv(const std::filesystem::path& path);

}  // namespace ggdopt
