#pragma once

// Gradient guidance terms added to the data score during reverse sampling.

#include <functional>
#include <optional>
#include <string>

#include "ggdopt/ccp.hpp"
#include "ggdopt/diffusion.hpp"

namespace ggdopt {

enum class GuidanceOrder { kNone, kFirst, kSecond };

std::string to_string(GuidanceOrder order);
/// "none" | "first" | "second"; throws ConfigError otherwise.
GuidanceOrder parse_guidance_order(const std::string& text);

/// How the posterior variance sigma^2_{0|t} used by second-order guidance
/// depends on t. kFixed uses sigma2 at every step. kDiffused treats sigma2 as
/// the variance of Gaussian data and uses the exact posterior variance
/// sigma2 (1 - abar) / (abar sigma2 + 1 - abar), which shrinks to 0 as t -> 0.
enum class PosteriorVariance { kFixed, kDiffused };

std::string to_string(PosteriorVariance variance);
/// "fixed" | "diffused"; throws ConfigError otherwise.
PosteriorVariance parse_posterior_variance(const std::string& text);

struct GuidanceConfig {
  double beta = 10.0;
  GuidanceOrder order = GuidanceOrder::kFirst;
  double sigma2 = 0.1;
  PosteriorVariance variance = PosteriorVariance::kFixed;
  /// Classifier-free weight.
  double w = 0.0;
  /// Optional per-step inverse temperature; beta is used when empty.
  std::function<double(int t)> beta_at;

  double beta_for(int t) const { return beta_at ? beta_at(t) : beta; }
  /// Throws InvalidArgument for beta < 0 or sigma2 <= 0.
  void validate() const;
};

/// -beta grad f(x_t).
Vector first_order_guidance(const QuadraticObjective& f, const Vector& xt, double beta);

/// (x_t + (1 - abar) score) / sqrt(abar) for a given score.
Vector posterior_mean(const Vector& xt, double alpha_bar, const Vector& score);

/// Tweedie estimate of E[x_0 | x_t] from the classifier-free score.
Vector tweedie_posterior_mean(const NoisePredictor& model, const NoiseSchedule& schedule,
                              const Vector& xt, int t, std::optional<double> rho, double w);

/// -(1/sigma2) [ H^{-1}((-hess f x_t + grad f(x_t)) - mu/(beta sigma2)) + mu ],
/// H = hess f + I/(beta sigma2), via a Cholesky solve. Throws IllPosedError when
/// H is not positive definite, reporting the Hessian's smallest eigenvalue and
/// the bound -1/(beta sigma2) it must exceed.
Vector second_order_guidance(const QuadraticObjective& f, const Vector& xt, double beta,
                             double sigma2, const Vector& mu0t);

/// sigma^2_{0|t} at the given alpha_bar, following config.variance.
double posterior_variance(const GuidanceConfig& config, double alpha_bar);

/// Weight k_t of G_t in the guided score s + k_t G_t.
///
/// Second order: sqrt(abar) sigma^2_{0|t} / (1 - abar). With this weight the
/// Tweedie mean of the guided score is mu + sigma^2_{0|t} G, the mean of the
/// posterior tilted by exp(-beta f), so a deterministic step denoises towards
/// argmin f(x) + |x - mu|^2 / (2 beta sigma^2_{0|t}).
/// First order: sqrt(abar), the same factor for unit-variance data, under
/// which a linear f shifts N(m, 1) data to N(m - beta grad f, 1).
/// Zero when guidance is off; alpha_bar must lie in (0, 1).
double guidance_scale(const GuidanceConfig& config, double alpha_bar);

/// Dispatches on config.order. `mu0t` is only read for second order, which
/// uses posterior_variance(config, alpha_bar).
Vector guidance_term(const QuadraticObjective& f, const GuidanceConfig& config, const Vector& xt,
                     int t, double alpha_bar, const Vector& mu0t);

}  // namespace ggdopt
