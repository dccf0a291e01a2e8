#include "ggdopt/guidance.hpp"

#include <cmath>
#include <sstream>

#include "ggdopt/errors.hpp"

namespace ggdopt {

std::string to_string(GuidanceOrder order) {
  switch (order) {
    case GuidanceOrder::kNone: return "none";
    case GuidanceOrder::kFirst: return "first";
    case GuidanceOrder::kSecond: return "second";
  }
  return "unknown";
}

GuidanceOrder parse_guidance_order(const std::string& text) {
  if (text == "none") return GuidanceOrder::kNone;
  if (text == "first") return GuidanceOrder::kFirst;
  if (text == "second") return GuidanceOrder::kSecond;
  throw ConfigError("unknown guidance order '" + text + "' (expected none, first or second)");
}

std::string to_string(PosteriorVariance variance) {
  return variance == PosteriorVariance::kFixed ? "fixed" : "diffused";
}

PosteriorVariance parse_posterior_variance(const std::string& text) {
  if (text == "fixed") return PosteriorVariance::kFixed;
  if (text == "diffused") return PosteriorVariance::kDiffused;
  throw ConfigError("unknown posterior variance '" + text + "' (expected fixed or diffused)");
}

void GuidanceConfig::validate() const {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw InvalidArgument("guidance: beta must be >= 0");
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw InvalidArgument("guidance: sigma2 must be > 0");
  if (!std::isfinite(w)) throw InvalidArgument("guidance: w must be finite");
}

Vector first_order_guidance(const QuadraticObjective& f, const Vector& xt, double beta) {
  if (!(beta >= 0.0)) throw InvalidArgument("first_order_guidance: beta must be >= 0");
  if (beta == 0.0) return Vector::Zero(xt.size());
  return -beta * f.gradient(xt);
}

Vector posterior_mean(const Vector& xt, double alpha_bar, const Vector& score) {
  if (!(alpha_bar > 0.0 && alpha_bar <= 1.0)) {
    throw InvalidArgument("posterior_mean: alpha_bar must lie in (0, 1]");
  }
  if (score.size() != xt.size()) throw InvalidArgument("posterior_mean: dimension mismatch");
  return (xt + (1.0 - alpha_bar) * score) / std::sqrt(alpha_bar);
}

Vector tweedie_posterior_mean(const NoisePredictor& model, const NoiseSchedule& schedule,
                              const Vector& xt, int t, std::optional<double> rho, double w) {
  return posterior_mean(xt, schedule.alpha_bar(t), cond_score(model, schedule, xt, t, rho, w));
}

Vector second_order_guidance(const QuadraticObjective& f, const Vector& xt, double beta,
                             double sigma2, const Vector& mu0t) {
  if (!(beta > 0.0)) throw InvalidArgument("second_order_guidance: beta must be > 0");
  if (!(sigma2 > 0.0)) throw InvalidArgument("second_order_guidance: sigma2 must be > 0");
  if (mu0t.size() != xt.size()) throw InvalidArgument("second_order_guidance: dimension mismatch");
  const Matrix& hess = f.hessian(xt);
  const double shift = 1.0 / (beta * sigma2);
  const Index n = xt.size();
  const Matrix H = hess + shift * Matrix::Identity(n, n);
  Eigen::LLT<Matrix> llt(H);
  if (llt.info() != Eigen::Success) {
    const double lmin = Eigen::SelfAdjointEigenSolver<Matrix>(hess, Eigen::EigenvaluesOnly)
                            .eigenvalues()
                            .minCoeff();
    std::ostringstream msg;
    msg << "second-order guidance: H = hess f + I/(beta sigma2) is not positive definite; "
           "smallest Hessian eigenvalue "
        << lmin << " must exceed -1/(beta sigma2) = " << -shift << " (beta = " << beta
        << ", sigma2 = " << sigma2 << ")";
    throw IllPosedError(msg.str());
  }
  const Vector rhs = (-(hess * xt) + f.gradient(xt)) - mu0t * shift;
  Vector y = llt.solve(rhs);
  // One step of iterative refinement keeps the residual at rounding level.
  const Vector r = rhs - H * y;
  y += llt.solve(r);
  const double residual = (rhs - H * y).cwiseAbs().maxCoeff();
  if (!(residual <= 1e-10 * std::max(1.0, rhs.cwiseAbs().maxCoeff()))) {
    throw NumericalError("second-order guidance: linear solve residual " +
                         std::to_string(residual) + " exceeds 1e-10");
  }
  return -(y + mu0t) / sigma2;
}

double posterior_variance(const GuidanceConfig& config, double alpha_bar) {
  if (!(alpha_bar > 0.0 && alpha_bar < 1.0)) {
    throw InvalidArgument("posterior_variance: alpha_bar must lie in (0, 1)");
  }
  if (config.variance == PosteriorVariance::kFixed) return config.sigma2;
  return config.sigma2 * (1.0 - alpha_bar) / (alpha_bar * config.sigma2 + 1.0 - alpha_bar);
}

double guidance_scale(const GuidanceConfig& config, double alpha_bar) {
  if (!(alpha_bar > 0.0 && alpha_bar < 1.0)) {
    throw InvalidArgument("guidance_scale: alpha_bar must lie in (0, 1)");
  }
  switch (config.order) {
    case GuidanceOrder::kNone: return 0.0;
    case GuidanceOrder::kFirst: return std::sqrt(alpha_bar);
    case GuidanceOrder::kSecond:
      return std::sqrt(alpha_bar) * posterior_variance(config, alpha_bar) / (1.0 - alpha_bar);
  }
  return 0.0;
}

Vector guidance_term(const QuadraticObjective& f, const GuidanceConfig& config, const Vector& xt,
                     int t, double alpha_bar, const Vector& mu0t) {
  switch (config.order) {
    case GuidanceOrder::kNone: return Vector::Zero(xt.size());
    case GuidanceOrder::kFirst: return first_order_guidance(f, xt, config.beta_for(t));
    case GuidanceOrder::kSecond:
      if (config.beta_for(t) == 0.0) return Vector::Zero(xt.size());
      return second_order_guidance(f, xt, config.beta_for(t),
                                   posterior_variance(config, alpha_bar), mu0t);
  }
  return Vector::Zero(xt.size());
}

}  // namespace ggdopt
