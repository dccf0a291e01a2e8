#pragma once

namespace ggdopt {

/// Standard Gaussian CDF, computed through erfc so both tails keep relative precision.
double normal_cdf(double x);

/// Standard Gaussian quantile Phi^{-1}(p).
///
/// Rational approximation (relative error ~1e-9) followed by one Halley step
/// against normal_cdf, which brings the absolute error to machine precision
/// over the central range. Throws InvalidArgument unless 0 < p < 1.
double normal_quantile(double p);

}  // namespace ggdopt
