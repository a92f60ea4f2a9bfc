#include "cloudmark/verification.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "cloudmark/error.hpp"
#include "cloudmark/random.hpp"
#include "cloudmark/stats.hpp"

namespace cloudmark {

void VerificationConfig::validate() const {
  if (m < 2) throw InvalidArgument("verification needs m >= 2 (got " + std::to_string(m) + ")");
  if (!(tau >= 0.0 && tau < 1.0)) throw InvalidArgument("tau must be in [0,1)");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must be in (0,1)");
  if (target_class < 0) throw InvalidArgument("target class must be >= 0");
}

std::vector<VerificationPair> build_verification_set(const Dataset& data, const VerificationConfig& cfg) {
  cfg.validate();
  if (cfg.target_class >= data.class_count()) throw InvalidArgument("target class outside the dataset");
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& s = data.samples[i];
    if (s.split == Split::Verify && s.label == cfg.target_class && !s.watermark) pool.push_back(i);
  }
  if (pool.size() < static_cast<std::size_t>(cfg.m))
    throw InvalidArgument("verification needs " + std::to_string(cfg.m) + " held-out samples of class " +
                          std::to_string(cfg.target_class) + ", only " + std::to_string(pool.size()) + " available");
  Rng rng(derive_seed(cfg.seed, 0x7e51ULL));
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(static_cast<std::size_t>(cfg.m));
  std::sort(pool.begin(), pool.end());

  const TriggerPattern trigger = cfg.trigger.build();
  std::vector<VerificationPair> pairs;
  pairs.reserve(pool.size());
  for (std::size_t i : pool) {
    const Sample& s = data.samples[i];
    ImplantResult imp = implant_trigger(s.cloud, trigger, derive_seed(cfg.seed ^ 0x9a1dULL, s.id));
    pairs.push_back({i, s.cloud, std::move(imp.cloud), std::move(imp.replaced)});
  }
  return pairs;
}

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::IndependentT: return "independent-t";
    case Scenario::IndependentM: return "independent-m";
    case Scenario::Malicious: return "malicious";
    case Scenario::Unspecified: return "unspecified";
  }
  return "unspecified";
}

Scenario scenario_from_string(const std::string& s) {
  if (s == "in-t" || s == "independent-t") return Scenario::IndependentT;
  if (s == "in-m" || s == "independent-m") return Scenario::IndependentM;
  if (s == "malicious") return Scenario::Malicious;
  if (s == "unspecified") return Scenario::Unspecified;
  throw InvalidArgument("unknown scenario '" + s + "' (expected in-t, in-m or malicious)");
}

Metrics evaluate_metrics(const PosteriorModel& model, std::span<const LabeledCloud> test,
                         const std::vector<VerificationPair>& pairs, int target_class) {
  Metrics out;
  out.acc = 100.0 * accuracy(model, test);
  std::size_t success = 0;
  double sum = 0.0;
  for (const auto& pr : pairs) {
    const Eigen::VectorXd pb = model.predict_proba(pr.benign);
    const Eigen::VectorXd pv = model.predict_proba(pr.triggered);
    Eigen::Index best = 0;
    pv.maxCoeff(&best);
    success += best != target_class ? 1 : 0;
    out.p_benign.push_back(pb(target_class));
    out.p_triggered.push_back(pv(target_class));
    sum += pb(target_class) - pv(target_class);
  }
  if (!pairs.empty()) {
    out.wsr = 100.0 * static_cast<double>(success) / static_cast<double>(pairs.size());
    out.delta_p = sum / static_cast<double>(pairs.size());
  }
  return out;
}

TTestResult paired_t_test(std::span<const double> p_benign, std::span<const double> p_triggered, double tau) {
  if (p_benign.size() != p_triggered.size()) throw InvalidArgument("paired_t_test: sample sizes differ");
  const std::size_t m = p_benign.size();
  if (m < 2) throw InvalidArgument("paired_t_test needs at least 2 pairs");
  std::vector<double> d(m);
  for (std::size_t i = 0; i < m; ++i) d[i] = p_benign[i] - p_triggered[i] - tau;
  TTestResult r;
  r.df = static_cast<int>(m) - 1;
  double sum = 0.0;
  for (double v : d) sum += v;
  r.mean = sum / static_cast<double>(m);
  double ss = 0.0;
  for (double v : d) ss += (v - r.mean) * (v - r.mean);
  r.sd = std::sqrt(ss / static_cast<double>(m - 1));
  if (r.sd == 0.0) {
    // Constant differences: the statistic is undefined; decide on the sign.
    if (r.mean > 0.0) {
      r.t = std::numeric_limits<double>::infinity();
      r.p = 0.0;
      r.log10_p = -std::numeric_limits<double>::infinity();
    } else if (r.mean < 0.0) {
      r.t = -std::numeric_limits<double>::infinity();
      r.p = 1.0;
      r.log10_p = 0.0;
    } else {
      r.t = 0.0;
      r.p = 0.5;
      r.log10_p = std::log10(0.5);
    }
    return r;
  }
  r.t = std::sqrt(static_cast<double>(m)) * r.mean / r.sd;
  const double log_p = stats::log_t_sf(r.t, r.df);
  r.log10_p = log_p / std::numbers::ln10;
  r.p = std::exp(log_p);
  return r;
}

VerificationReport verify_ownership(const PosteriorModel& model, const Dataset& data, const VerificationConfig& cfg,
                                    Scenario scenario) {
  const auto pairs = build_verification_set(data, cfg);
  const Metrics metrics = evaluate_metrics(model, {}, pairs, cfg.target_class);
  VerificationReport r;
  r.scenario = scenario;
  r.m = cfg.m;
  r.tau = cfg.tau;
  r.alpha = cfg.alpha;
  r.seed = cfg.seed;
  r.delta_p = metrics.delta_p;
  r.wsr = metrics.wsr;
  r.test = paired_t_test(metrics.p_benign, metrics.p_triggered, cfg.tau);
  r.p_value = std::max(r.test.p, 1e-300);
  r.reject_h0 = r.test.p < cfg.alpha;
  r.p_benign = metrics.p_benign;
  r.p_triggered = metrics.p_triggered;
  return r;
}

namespace {

nlohmann::json finite_or_string(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

}  // namespace

nlohmann::json to_json(const VerificationReport& r) {
  return {{"scenario", to_string(r.scenario)},
          {"m", r.m},
          {"tau", r.tau},
          {"alpha", r.alpha},
          {"seed", r.seed},
          {"delta_p", r.delta_p},
          {"wsr", r.wsr},
          {"t_stat", finite_or_string(r.test.t)},
          {"df", r.test.df},
          {"mean_diff", r.test.mean},
          {"sd_diff", r.test.sd},
          {"p_value", r.p_value},
          {"log10_p", finite_or_string(r.test.log10_p)},
          {"decision", r.reject_h0 ? "reject-h0" : "retain-h0"},
          {"p_benign", r.p_benign},
          {"p_triggered", r.p_triggered}};
}

void TheoremParams::validate() const {
  if (!(wsr >= 0.0 && wsr <= 1.0)) throw InvalidArgument("W must be in [0,1]");
  if (!(zeta >= 0.0 && zeta <= 1.0)) throw InvalidArgument("zeta must be in [0,1]");
  if (!(tau >= 0.0 && tau < 1.0)) throw InvalidArgument("tau must be in [0,1)");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must be in (0,1)");
  if (m < 2) throw InvalidArgument("m must be >= 2");
}

namespace {

double bound_margin(double w, double zeta, double tau, double t_crit, int m) {
  return std::sqrt(static_cast<double>(m - 1)) * (w + zeta - tau - 1.0) - t_crit * std::sqrt(std::max(0.0, w - w * w));
}

}  // namespace

BoundResult theorem1_bound(const TheoremParams& p) {
  p.validate();
  const double t_crit = stats::t_quantile(1.0 - p.alpha, p.m - 1);
  const double margin = bound_margin(p.wsr, p.zeta, p.tau, t_crit, p.m);
  return {margin > 0.0, margin};
}

std::optional<double> min_wsr(int m, double zeta, double tau, double alpha) {
  TheoremParams p{1.0, zeta, tau, alpha, m};
  p.validate();
  const double t_crit = stats::t_quantile(1.0 - alpha, m - 1);
  auto f = [&](double w) { return bound_margin(w, zeta, tau, t_crit, m); };
  if (!(f(1.0) > 0.0)) return std::nullopt;
  // For W <= 1 - zeta + tau the first term is <= 0, so the margin is too.
  double lo = std::max(0.0, 1.0 - zeta + tau), hi = 1.0;
  if (f(lo) > 0.0) return lo;
  for (int i = 0; i < 200 && hi - lo > 1e-13; ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) > 0.0 ? hi : lo) = mid;
  }
  return hi;
}

double theorem1_montecarlo(const TheoremParams& p, int trials, std::uint64_t seed) {
  p.validate();
  if (trials < 1000) throw InvalidArgument("theorem1_montecarlo needs at least 1000 trials");
  Rng rng(seed);
  std::bernoulli_distribution hit_target(1.0 - p.wsr);
  std::vector<double> pb(static_cast<std::size_t>(p.m), p.zeta), pv(static_cast<std::size_t>(p.m));
  int rejected = 0;
  for (int t = 0; t < trials; ++t) {
    for (auto& v : pv) v = hit_target(rng) ? 1.0 : 0.0;
    rejected += paired_t_test(pb, pv, p.tau).p < p.alpha ? 1 : 0;
  }
  return static_cast<double>(rejected) / static_cast<double>(trials);
}

}  // namespace cloudmark
