#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cloudmark/dataset.hpp"
#include "cloudmark/net.hpp"
#include "cloudmark/watermark.hpp"
#include "json.hpp"

namespace cloudmark {

struct VerificationConfig {
  int m = 100;          // verification pairs
  double tau = 0.2;     // certainty margin in H0: P_b = P_v + tau
  double alpha = 0.01;  // significance level
  TriggerSpec trigger;
  int target_class = 0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct VerificationPair {
  std::size_t sample_index = 0;  // into Dataset::samples
  PointCloud benign;
  PointCloud triggered;
  std::vector<std::size_t> replaced;
};

/// m target-class samples from the verify split and their triggered copies.
std::vector<VerificationPair> build_verification_set(const Dataset& data, const VerificationConfig& cfg);

enum class Scenario { IndependentT, IndependentM, Malicious, Unspecified };
std::string to_string(Scenario s);
/// Accepts "in-t", "in-m", "malicious" (and the long forms).
Scenario scenario_from_string(const std::string& s);

struct Metrics {
  double acc = 0.0;      // percent, on the benign test samples
  double wsr = 0.0;      // percent of triggered samples not predicted as the target
  double delta_p = 0.0;  // mean P_b - P_v
  std::vector<double> p_benign;
  std::vector<double> p_triggered;
};

Metrics evaluate_metrics(const PosteriorModel& model, std::span<const LabeledCloud> test,
                         const std::vector<VerificationPair>& pairs, int target_class);

struct TTestResult {
  double mean = 0.0;  // mean of d_i = P_b - P_v - tau
  double sd = 0.0;    // sample standard deviation (divisor m - 1)
  double t = 0.0;     // +-inf on the zero-variance path
  double p = 1.0;     // one-sided, H1: P_b > P_v + tau
  double log10_p = 0.0;
  int df = 0;
};

/// Requires equal lengths >= 2.
TTestResult paired_t_test(std::span<const double> p_benign, std::span<const double> p_triggered, double tau);

struct VerificationReport {
  Scenario scenario = Scenario::Unspecified;
  int m = 0;
  double tau = 0.0;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  double delta_p = 0.0;
  double wsr = 0.0;
  TTestResult test;
  double p_value = 1.0;  // clamped at 1e-300; see test.log10_p for the exact magnitude
  bool reject_h0 = false;
  std::vector<double> p_benign;
  std::vector<double> p_triggered;
};

VerificationReport verify_ownership(const PosteriorModel& model, const Dataset& data, const VerificationConfig& cfg,
                                    Scenario scenario = Scenario::Unspecified);

nlohmann::json to_json(const VerificationReport& r);

/// Sample-size condition under which the test rejects H0.
struct TheoremParams {
  double wsr = 1.0;    // W in [0,1]
  double zeta = 0.9;   // lower bound on P_b
  double tau = 0.2;
  double alpha = 0.01;
  int m = 100;

  void validate() const;
};

struct BoundResult {
  bool satisfied = false;
  double margin = 0.0;
};

/// sqrt(m-1) (W + zeta - tau - 1) - t_crit sqrt(W - W^2), with t_crit the
/// upper-alpha critical value of t(m-1).
BoundResult theorem1_bound(const TheoremParams& p);

/// Smallest W in [0,1] satisfying the bound (found by bisection; the margin
/// is convex in W). Empty when even W = 1 fails.
std::optional<double> min_wsr(int m, double zeta, double tau, double alpha);

/// Fraction of `trials` simulated verifications that reject H0 at level alpha.
/// Each trial draws m events E_i ~ Bernoulli(1 - W) and runs the paired test
/// on P_b = zeta, P_v = E_i. Requires trials >= 1000.
double theorem1_montecarlo(const TheoremParams& p, int trials, std::uint64_t seed);

}  // namespace cloudmark
