#pragma once

// Watermark-removal attacks, expressed as data transforms or training modes.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cloudmark/geometry.hpp"
#include "cloudmark/net.hpp"
#include "cloudmark/tfp.hpp"

namespace cloudmark {

enum class AttackKind { None, RotationAug, NoiseAug, Sor, Finetune, Adaptive };

std::string to_string(AttackKind k);
/// "none", "rotation-aug", "noise-aug", "sor", "finetune", "adaptive".
AttackKind attack_from_string(const std::string& s);

struct AttackConfig {
  AttackKind kind = AttackKind::None;
  double rotation_range = 3.141592653589793;  // angles uniform in (-range, range)
  double noise_sigma = 0.01;                  // standard deviation per coordinate
  int sor_k = 20;
  double sor_multiplier = 1.0;
  double finetune_fraction = 0.2;
  int finetune_epochs = -1;                   // -1: same as the original training run
  int adaptive_period = 10;
  int adaptive_starts = 5;
  int adaptive_iterations = 10;
  double adaptive_learning_rate = 0.025;
  std::uint64_t seed = 1;

  void validate() const;
};

PointCloud augment_rotation(const PointCloud& x, std::uint64_t seed, double range = 3.141592653589793);
PointCloud augment_noise(const PointCloud& x, double sigma, std::uint64_t seed);

struct SorResult {
  PointCloud kept;
  std::vector<std::size_t> removed;  // ascending
};

/// Drops point i iff its mean k-NN distance exceeds mean + multiplier * std
/// (population std over all points). Requires size() > k.
SorResult sor_filter(const PointCloud& x, std::size_t k, double multiplier);

/// Continues training from `params` on a seeded `fraction` of `benign` with
/// fresh optimizer moments.
NetParams finetune(const NetParams& params, const NetConfig& cfg, std::span<const LabeledCloud> benign,
                   double fraction, int extra_epochs, const TrainConfig& tcfg, std::uint64_t seed);

struct DisentangleConfig {
  int starts = 5;
  int iterations = 10;
  double learning_rate = 0.025;
  std::uint64_t seed = 1;
};

/// Rotation that pushes g_f(x S) as far as possible from g_f(x), by gradient
/// ascent over the angles. Zero iterations return x unchanged.
PointCloud adaptive_disentangle_step(const PointCloud& x, const Surrogate& net, const DisentangleConfig& cfg);

/// Standard training that, every `period` epochs (epoch 10, 20, ...), replaces
/// each working copy by its disentangled rotation under the current model.
TrainResult adaptive_train(const NetConfig& cfg, std::span<const LabeledCloud> train, const TrainConfig& tcfg,
                           int period, const DisentangleConfig& step);

/// Trains under one of the data-side attacks (rotation-aug, noise-aug, sor,
/// adaptive) or plainly for `None`. Fine-tuning needs the trained model and
/// is handled by `finetune`.
TrainResult train_under_attack(const NetConfig& cfg, std::span<const LabeledCloud> train, const TrainConfig& tcfg,
                               const AttackConfig& attack);

}  // namespace cloudmark
