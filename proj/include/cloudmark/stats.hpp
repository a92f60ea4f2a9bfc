#pragma once

namespace cloudmark::stats {

double log_beta(double a, double b);

/// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double x, double a, double b);
/// Natural log of I_x(a, b); stays accurate far below the double range.
double log_incomplete_beta(double x, double a, double b);

/// Student's t distribution with `df` >= 1 degrees of freedom (df may be fractional).
double t_cdf(double t, double df);
/// Upper tail P(T > t).
double t_sf(double t, double df);
/// Natural log of the upper tail.
double log_t_sf(double t, double df);
/// Inverse CDF by bracketing and bisection. Requires 0 < p < 1.
double t_quantile(double p, double df);

}  // namespace cloudmark::stats
