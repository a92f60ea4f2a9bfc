#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cloudmark/geometry.hpp"

namespace cloudmark {

/// Shared per-point dense layers, coordinate-wise max-pool, dense head.
/// All hidden layers use ReLU; the final layer emits K logits. The feature
/// vector is the activation feeding the final layer (the pooled descriptor
/// when `head_widths` is empty).
struct NetConfig {
  std::vector<int> per_point_widths{64, 128};
  std::vector<int> head_widths{64};
  int class_count = 8;
  std::uint64_t seed = 1;

  int feature_dim() const;
  /// Throws InvalidArgument.
  void validate() const;

  /// 3->64->128, pool, 128->64->K.
  static NetConfig mini(int classes, std::uint64_t seed = 1);
  /// Wider per-point stack: 3->96->192, pool, 192->64->K.
  static NetConfig wide(int classes, std::uint64_t seed = 1);
  /// Extra head layer: 3->64->128, pool, 128->128->64->K.
  static NetConfig deep(int classes, std::uint64_t seed = 1);

  bool operator==(const NetConfig&) const = default;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

struct NetParams {
  std::vector<DenseLayer> point_layers;
  std::vector<DenseLayer> head_layers;  // last entry produces the logits

  std::size_t parameter_count() const;
  Eigen::VectorXd flatten() const;
  void assign_flat(const Eigen::VectorXd& flat);
  /// Same shapes, all zeros.
  NetParams zeros_like() const;
  /// "point.0.weight", "head.1.bias", ... in flatten() order.
  std::vector<std::string> tensor_names() const;

  bool operator==(const NetParams& other) const;
};

/// Scaled-uniform init, bound 1/sqrt(fan_in), from `cfg.seed`.
NetParams init_params(const NetConfig& cfg);

/// Intermediates retained for the reverse pass.
struct ForwardTrace {
  std::vector<Eigen::MatrixXd> point_pre;  // M x width, before ReLU
  std::vector<Eigen::MatrixXd> point_act;  // [0] = input, then after ReLU
  std::vector<Eigen::Index> argmax;        // pooled channel -> winning row
  std::vector<Eigen::VectorXd> head_in;    // [0] = pooled, then hidden activations
  std::vector<Eigen::VectorXd> head_pre;   // pre-activation of every head layer
};

struct ForwardResult {
  Eigen::VectorXd logits;
  Eigen::VectorXd features;
  ForwardTrace trace;
};

/// Throws NumericFailure naming the layer if a NaN/Inf appears.
ForwardResult forward(const NetParams& params, const NetConfig& cfg, const PointCloud& x);

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);
Eigen::VectorXd predict_proba(const NetParams& params, const NetConfig& cfg, const PointCloud& x);

/// Reverse pass from upstream gradients on logits and/or features. Parameter
/// gradients are accumulated into `d_params` (may be null); the input
/// gradient is written to `d_input` (may be null). Max-pool routes each
/// channel's gradient to its first argmax row only.
void backward(const NetParams& params, const ForwardTrace& trace, const Eigen::VectorXd* d_logits,
              const Eigen::VectorXd* d_features, NetParams* d_params, PointMatrix* d_input);

struct LabeledCloud {
  PointCloud cloud;
  int label = 0;
};

/// Gradient of the mean cross-entropy over `batch`.
NetParams grad_params(const NetParams& params, const NetConfig& cfg, std::span<const LabeledCloud> batch);
double mean_cross_entropy(const NetParams& params, const NetConfig& cfg, std::span<const LabeledCloud> batch);

/// A differentiable scalar of the feature vector.
struct FeatureLoss {
  double value = 0.0;
  Eigen::VectorXd grad;
};
using FeatureLossFn = std::function<FeatureLoss(const Eigen::VectorXd& features)>;

struct InputGradient {
  double value = 0.0;
  Eigen::VectorXd features;
  PointMatrix grad;  // M x 3
};

InputGradient grad_input(const NetParams& params, const NetConfig& cfg, const FeatureLossFn& loss_tail,
                         const PointCloud& x);

struct TrainConfig {
  int epochs = 40;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Optional extension points used by the attack harness.
struct TrainHooks {
  /// Applied to a sample each time it is drawn; receives a per-(sample, epoch) seed.
  std::function<PointCloud(const PointCloud&, std::uint64_t seed)> augment;
  /// Called before every epoch (0-based) with the current params; may replace
  /// the working copies of the training clouds.
  std::function<void(int epoch, const NetParams&, std::vector<LabeledCloud>& working)> before_epoch;
};

struct TrainResult {
  NetParams params;
  std::vector<EpochStats> log;
};

/// Mini-batch Adam on mean cross-entropy. Pure function of its inputs.
/// `init` overrides `init_params(cfg)` as the starting point (fine-tuning);
/// Adam moments always start at zero. Throws NumericFailure on a NaN loss.
TrainResult train_classifier(const NetConfig& cfg, std::span<const LabeledCloud> train, const TrainConfig& tcfg,
                             const TrainHooks& hooks = {}, const NetParams* init = nullptr);

/// Black-box posterior interface; verification only ever calls this.
class PosteriorModel {
 public:
  virtual ~PosteriorModel() = default;
  virtual Eigen::VectorXd predict_proba(const PointCloud& x) const = 0;
  virtual int class_count() const = 0;
};

class NetModel : public PosteriorModel {
 public:
  NetModel(NetConfig cfg, NetParams params);
  Eigen::VectorXd predict_proba(const PointCloud& x) const override;
  int class_count() const override { return cfg_.class_count; }
  const NetConfig& config() const { return cfg_; }
  const NetParams& params() const { return params_; }

 private:
  NetConfig cfg_;
  NetParams params_;
};

/// Top-1 accuracy in [0,1].
double accuracy(const PosteriorModel& model, std::span<const LabeledCloud> data);

// Checkpoint: one JSON document {format, version, config, tensors[{name, rows, cols, data}]}.
void save_checkpoint(const std::string& path, const NetConfig& cfg, const NetParams& params);
struct Checkpoint {
  NetConfig config;
  NetParams params;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cloudmark
