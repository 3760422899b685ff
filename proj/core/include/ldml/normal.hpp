#pragma once

namespace ldml {

inline constexpr double kInvSqrt2Pi = 0.398942280401432677939946059934;

double normal_pdf(double x);
double normal_cdf(double x);

/// Inverse standard normal CDF. Acklam's rational approximation followed by
/// one Halley step against erfc; absolute error well below 1e-12 on (0,1).
/// Returns -inf / +inf at 0 / 1 and NaN outside [0,1].
double normal_quantile(double p);

}  // namespace ldml
