#include "cloudmark/stats.hpp"

#include <cmath>
#include <limits>

#include "cloudmark/error.hpp"

namespace cloudmark::stats {

double log_beta(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

namespace {

// Modified Lentz evaluation of the incomplete-beta continued fraction.
double beta_continued_fraction(double x, double a, double b) {
  constexpr int kMaxIter = 20000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  return h;
}

void check_args(double x, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw InvalidArgument("incomplete beta needs a, b > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw InvalidArgument("incomplete beta needs x in [0,1]");
}

// log of the directly evaluated branch (valid for x < (a+1)/(a+b+2)).
double log_direct(double x, double a, double b) {
  return a * std::log(x) + b * std::log1p(-x) - log_beta(a, b) - std::log(a) +
         std::log(beta_continued_fraction(x, a, b));
}

}  // namespace

double incomplete_beta(double x, double a, double b) {
  check_args(x, a, b);
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  if (x < (a + 1.0) / (a + b + 2.0)) return std::exp(log_direct(x, a, b));
  return 1.0 - std::exp(log_direct(1.0 - x, b, a));
}

double log_incomplete_beta(double x, double a, double b) {
  check_args(x, a, b);
  if (x == 0.0) return -std::numeric_limits<double>::infinity();
  if (x == 1.0) return 0.0;
  if (x < (a + 1.0) / (a + b + 2.0)) return log_direct(x, a, b);
  return std::log1p(-std::exp(log_direct(1.0 - x, b, a)));
}

namespace {

void check_df(double df) {
  if (!(df >= 1.0) || !std::isfinite(df)) throw InvalidArgument("t distribution needs df >= 1");
}

// P(|T| > |t|) / 2 in log form, i.e. the tail beyond |t|.
double log_tail(double t, double df) {
  const double t2 = t * t;
  // x = df / (df + t^2) without cancellation for large |t|.
  const double x = df / (df + t2);
  return std::log(0.5) + log_incomplete_beta(x, 0.5 * df, 0.5);
}

}  // namespace

double t_sf(double t, double df) {
  check_df(df);
  if (std::isnan(t)) throw InvalidArgument("t_sf: t is NaN");
  if (t == 0.0) return 0.5;
  const double tail = std::exp(log_tail(t, df));
  return t > 0.0 ? tail : 1.0 - tail;
}

double t_cdf(double t, double df) {
  check_df(df);
  if (std::isnan(t)) throw InvalidArgument("t_cdf: t is NaN");
  if (t == 0.0) return 0.5;
  const double tail = std::exp(log_tail(t, df));
  return t < 0.0 ? tail : 1.0 - tail;
}

double log_t_sf(double t, double df) {
  check_df(df);
  if (t > 0.0) return log_tail(t, df);
  return std::log(t_sf(t, df));
}

double t_quantile(double p, double df) {
  check_df(df);
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("t_quantile needs 0 < p < 1");
  if (p == 0.5) return 0.0;
  double lo = -1.0, hi = 1.0;
  while (t_cdf(lo, df) > p) lo *= 2.0;
  while (t_cdf(hi, df) < p) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-14 * std::max(1.0, std::fabs(hi)); ++i) {
    const double mid = 0.5 * (lo + hi);
    (t_cdf(mid, df) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace cloudmark::stats
