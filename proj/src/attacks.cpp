#include "cloudmark/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "cloudmark/error.hpp"
#include "cloudmark/random.hpp"

namespace cloudmark {

std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::None: return "none";
    case AttackKind::RotationAug: return "rotation-aug";
    case AttackKind::NoiseAug: return "noise-aug";
    case AttackKind::Sor: return "sor";
    case AttackKind::Finetune: return "finetune";
    case AttackKind::Adaptive: return "adaptive";
  }
  return "none";
}

AttackKind attack_from_string(const std::string& s) {
  if (s == "none") return AttackKind::None;
  if (s == "rotation-aug" || s == "rotation") return AttackKind::RotationAug;
  if (s == "noise-aug" || s == "noise") return AttackKind::NoiseAug;
  if (s == "sor") return AttackKind::Sor;
  if (s == "finetune" || s == "fine-tune") return AttackKind::Finetune;
  if (s == "adaptive") return AttackKind::Adaptive;
  throw InvalidArgument("unknown attack '" + s + "'");
}

void AttackConfig::validate() const {
  if (!(rotation_range >= 0.0 && rotation_range <= std::numbers::pi))
    throw InvalidArgument("rotation range must be in [0, pi]");
  if (!(noise_sigma >= 0.0)) throw InvalidArgument("noise sigma must be >= 0");
  if (sor_k < 1) throw InvalidArgument("SOR k must be >= 1");
  if (!(sor_multiplier > 0.0)) throw InvalidArgument("SOR threshold multiplier must be > 0");
  if (!(finetune_fraction > 0.0 && finetune_fraction <= 1.0)) throw InvalidArgument("fine-tune fraction must be in (0,1]");
  if (adaptive_period < 1) throw InvalidArgument("adaptive period must be >= 1");
  if (adaptive_starts < 1 || adaptive_iterations < 0) throw InvalidArgument("bad adaptive search budget");
}

PointCloud augment_rotation(const PointCloud& x, std::uint64_t seed, double range) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-range, range);
  EulerAngles th;
  th.psi = u(rng);
  th.phi = u(rng);
  th.gamma = u(rng);
  return rotate_cloud(x, th);
}

PointCloud augment_noise(const PointCloud& x, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw InvalidArgument("noise sigma must be >= 0");
  if (sigma == 0.0) return x;
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  PointMatrix m = x.points();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (int k = 0; k < 3; ++k) m(i, k) += n(rng);
  return PointCloud(std::move(m));
}

SorResult sor_filter(const PointCloud& x, std::size_t k, double multiplier) {
  if (!(multiplier > 0.0)) throw InvalidArgument("SOR threshold multiplier must be > 0");
  const std::vector<double> d = knn_mean_distances(x, k);
  const double n = static_cast<double>(d.size());
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double var = 0.0;
  for (double v : d) var += (v - mean) * (v - mean);
  const double threshold = mean + multiplier * std::sqrt(var / n);
  SorResult r;
  std::vector<Vec3> kept;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] > threshold)
      r.removed.push_back(i);
    else
      kept.push_back(x.point(i));
  }
  // Removing everything is impossible: at least one value is <= the mean.
  r.kept = PointCloud::from_points(kept);
  return r;
}

NetParams finetune(const NetParams& params, const NetConfig& cfg, std::span<const LabeledCloud> benign,
                   double fraction, int extra_epochs, const TrainConfig& tcfg, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("fine-tune fraction must be in (0,1]");
  if (extra_epochs < 0) throw InvalidArgument("fine-tune epochs must be >= 0");
  if (extra_epochs == 0) return params;
  if (benign.empty()) throw InvalidArgument("fine-tune needs benign samples");
  std::vector<std::size_t> idx(benign.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (fraction < 1.0) {
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(benign.size())))));
    std::sort(idx.begin(), idx.end());
  }
  std::vector<LabeledCloud> subset;
  subset.reserve(idx.size());
  for (std::size_t i : idx) subset.push_back(benign[i]);
  TrainConfig t = tcfg;
  t.epochs = extra_epochs;
  return train_classifier(cfg, subset, t, {}, &params).params;
}

PointCloud adaptive_disentangle_step(const PointCloud& x, const Surrogate& net, const DisentangleConfig& cfg) {
  if (cfg.iterations <= 0) return x;
  const Eigen::VectorXd anchor = forward(net.params, net.config, x).features;
  const FeatureLossFn away = [&anchor](const Eigen::VectorXd& f) {
    const Eigen::VectorXd diff = f - anchor;
    const double d = diff.norm();
    return FeatureLoss{d, d > 0.0 ? Eigen::VectorXd(diff / d) : Eigen::VectorXd::Zero(f.size())};
  };
  AngleSearch search;
  search.starts = cfg.starts;
  search.iterations = cfg.iterations;
  search.learning_rate = cfg.learning_rate;
  search.seed = cfg.seed;
  search.start_low = -std::numbers::pi;
  search.start_high = std::numbers::pi;
  // Best-seen iterate of an ascent; the identity scores 0, so any positive
  // distance already beats it.
  const ShapeOptResult r = search_rotation(x, away, net, search, -1.0);
  return r.final_loss > 0.0 ? r.rotated : x;
}

TrainResult adaptive_train(const NetConfig& cfg, std::span<const LabeledCloud> train, const TrainConfig& tcfg,
                           int period, const DisentangleConfig& step) {
  if (period < 1) throw InvalidArgument("adaptive period must be >= 1");
  TrainHooks hooks;
  hooks.before_epoch = [&](int epoch, const NetParams& params, std::vector<LabeledCloud>& working) {
    if (epoch == 0 || epoch % period != 0) return;
    const Surrogate current{cfg, params};
    for (std::size_t i = 0; i < working.size(); ++i) {
      DisentangleConfig c = step;
      c.seed = derive_seed(derive_seed(step.seed, static_cast<std::uint64_t>(epoch)), i);
      working[i].cloud = adaptive_disentangle_step(working[i].cloud, current, c);
    }
  };
  return train_classifier(cfg, train, tcfg, hooks);
}

TrainResult train_under_attack(const NetConfig& cfg, std::span<const LabeledCloud> train, const TrainConfig& tcfg,
                               const AttackConfig& attack) {
  attack.validate();
  switch (attack.kind) {
    case AttackKind::None:
    case AttackKind::Finetune:
      return train_classifier(cfg, train, tcfg);
    case AttackKind::RotationAug: {
      TrainHooks hooks;
      const double range = attack.rotation_range;
      hooks.augment = [range](const PointCloud& x, std::uint64_t s) { return augment_rotation(x, s, range); };
      return train_classifier(cfg, train, tcfg, hooks);
    }
    case AttackKind::NoiseAug: {
      TrainHooks hooks;
      const double sigma = attack.noise_sigma;
      hooks.augment = [sigma](const PointCloud& x, std::uint64_t s) { return augment_noise(x, sigma, s); };
      return train_classifier(cfg, train, tcfg, hooks);
    }
    case AttackKind::Sor: {
      std::vector<LabeledCloud> filtered;
      filtered.reserve(train.size());
      for (const auto& s : train)
        filtered.push_back({sor_filter(s.cloud, static_cast<std::size_t>(attack.sor_k), attack.sor_multiplier).kept, s.label});
      return train_classifier(cfg, filtered, tcfg);
    }
    case AttackKind::Adaptive: {
      DisentangleConfig step{attack.adaptive_starts, attack.adaptive_iterations, attack.adaptive_learning_rate,
                             attack.seed};
      return adaptive_train(cfg, train, tcfg, attack.adaptive_period, step);
    }
  }
  return train_classifier(cfg, train, tcfg);
}

}  // namespace cloudmark
