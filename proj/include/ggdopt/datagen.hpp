#pragma once

// Stage 1: feasible training data from deterministic restricted problems
//
//   min f(x)  s.t.  hbar'x + d >= z,
//
// solved over a grid of restrictions z, each solution labelled with its
// empirical violation frequency on a shared batch of L draws.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ggdopt/ccp.hpp"

namespace ggdopt {

class RestrictionGrid {
 public:
  /// Throws InvalidArgument if the values are empty, negative or not ascending.
  explicit RestrictionGrid(std::vector<double> z_values);
  /// `count` values linearly spaced over [lo, hi].
  static RestrictionGrid linear(double lo, double hi, std::size_t count);

  std::size_t size() const { return z_.size(); }
  const std::vector<double>& values() const { return z_; }
  double operator[](std::size_t i) const { return z_[i]; }

 private:
  std::vector<double> z_;
};

struct RestrictedSolution {
  Vector x;
  double multiplier = 0.0;  ///< lambda >= 0 for hbar'x + d >= z
};

/// Exact KKT solution of the restricted problem for A positive definite:
/// x = -A^{-1}(b - lambda hbar), lambda = max(0, (z - d + hbar'A^{-1}b) / (hbar'A^{-1}hbar)).
///
/// Throws IllPosedError if A is not positive definite and InfeasibleError when
/// hbar = 0 and z > d.
RestrictedSolution solve_restricted(const CCPInstance& instance, const Vector& hbar, double z);

/// 1 - (1/L) #{ l : g(x, h_l) >= 0 }; `draws` is L x n. Ties count as feasible.
double empirical_rho(const CCPInstance& instance, const Vector& x, const Matrix& draws);

struct SkippedPoint {
  std::size_t grid_index = 0;
  double z = 0.0;
  std::string reason;
};

struct FeasibleDataset {
  Matrix points;              ///< N x n
  Vector risks;               ///< N, multiples of 1/L
  std::vector<double> z;      ///< generating restriction per row
  std::uint64_t fingerprint = 0;
  Index sample_count = 0;     ///< L
  std::uint64_t seed = 0;
  std::vector<SkippedPoint> skipped;

  Index size() const { return points.rows(); }
  Index dim() const { return points.cols(); }
};

/// Draws one batch of L samples (seeded), solves the restricted problem at
/// its mean for every grid point, and labels each solution with empirical_rho
/// on the same batch. Grid points whose restricted problem fails are skipped
/// and recorded. Work is spread over threads; output order follows the grid.
FeasibleDataset generate_dataset(const CCPInstance& instance, const RestrictionGrid& grid,
                                 Index sample_count, std::uint64_t seed);

/// Writes `path` (columns x_1..x_n, rho) and `<path>.meta.json`.
void write_dataset(const FeasibleDataset& data, const std::filesystem::path& path);
/// Inverse of write_dataset. The sidecar is optional; without it only points and risks are set.
FeasibleDataset read_dataset(const std::filesystem::path& path);

/// Chebyshev lower bound on the feasibility probability of a restricted solution:
/// max(0, 1 - variance / (z_min/lipschitz - mean_bias)^2), or 0 when the gap is not positive.
double chebyshev_bound(double z_min, double lipschitz, double variance, double mean_bias);

/// Gaussian approximation of Prob{ 1/2 u'Qu + r'u + s >= 0 }, u ~ N(0, I):
/// 1 - Phi(-mu/sigma) with mu = tr(Q)/2 + s and sigma^2 = ||Q||_F^2 / 2 + ||r||^2.
double quadform_probability_gaussian(const Matrix& Q, const Vector& r, double s);

/// Monte-Carlo frequency of 1/2 u'Qu + r'u + s >= 0 over `draws` seeded draws.
double quadform_probability_mc(const Matrix& Q, const Vector& r, double s, Index draws,
                               std::uint64_t seed);

}  // namespace ggdopt
