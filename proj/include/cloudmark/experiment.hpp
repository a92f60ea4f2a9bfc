#pragma once

// End-to-end pipeline shared by the CLI and the acceptance suite: one config
// document, the stage functions, and sweep bookkeeping.

#include <cstdint>
#include <string>
#include <vector>

#include "cloudmark/attacks.hpp"
#include "cloudmark/dataset.hpp"
#include "cloudmark/net.hpp"
#include "cloudmark/verification.hpp"
#include "cloudmark/watermark.hpp"
#include "json.hpp"

namespace cloudmark {

struct ExperimentConfig {
  SyntheticShapeSpec data;
  NetConfig surrogate_net;  // generates the watermark
  NetConfig model_net;      // the suspect model trained on the released data
  TrainConfig train;
  WatermarkConfig watermark;
  VerificationConfig verification;
  std::vector<AttackConfig> attacks;
  std::string output_dir = "runs";
  std::uint64_t seed = 1;

  /// Desk-scale defaults: K = 8, 160 clouds/class plus 100 extra verify
  /// clouds/class, M = 256, lambda = 0.02, 13-point trigger of radius 0.025
  /// centered in the (0.05,0.05,0.05) corner.
  static ExperimentConfig desk_default();

  /// Re-derives every component seed from `seed`, aligns class counts with the
  /// dataset, and copies the watermark trigger and target into verification.
  void resolve();
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
/// Missing keys keep their desk defaults. Throws ValidationError on bad values.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);

nlohmann::json to_json(const NetConfig& c);
NetConfig net_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticShapeSpec& s);
SyntheticShapeSpec shape_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const VerificationConfig& c);
VerificationConfig verification_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AttackConfig& c);
AttackConfig attack_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TriggerSpec& t);
TriggerSpec trigger_spec_from_json(const nlohmann::json& j);

/// The trigger used for the Independent-T scenario: the same shape mirrored
/// through the cube center, with a different seed.
TriggerSpec independent_trigger(const TriggerSpec& t);

// Stages. Each is deterministic in the config.
Dataset make_dataset(const ExperimentConfig& c);
NetParams train_surrogate(const ExperimentConfig& c, const Dataset& clean);
WatermarkedDataset make_watermarked(const ExperimentConfig& c, const Dataset& clean, const NetParams& surrogate);
/// Trains `c.model_net` on the train split of `data`, optionally under a
/// data-side attack. Fine-tuning is applied by `apply_finetune`.
NetParams train_model(const ExperimentConfig& c, const Dataset& data, const AttackConfig& attack = {});
/// Fine-tunes on the benign part of the train split (samples without
/// watermark provenance).
NetParams apply_finetune(const ExperimentConfig& c, const Dataset& data, const NetParams& model,
                         const AttackConfig& attack);

/// Verifies `model` against `data` under a scenario; Independent-T swaps in
/// `independent_trigger`.
VerificationReport run_verification(const ExperimentConfig& c, const PosteriorModel& model, const Dataset& data,
                                    Scenario scenario);

struct Evaluation {
  Metrics metrics;  // ACC on the test split, WSR and dP on the verification pairs
  VerificationReport report;
};
Evaluation evaluate(const ExperimentConfig& c, const PosteriorModel& model, const Dataset& data,
                    Scenario scenario = Scenario::Malicious);

struct SweepRow {
  std::string value;
  double acc = 0.0;
  double wsr = 0.0;
  double delta_p = 0.0;
  double log10_p = 0.0;
};

/// Parameters accepted by `sweep`.
const std::vector<std::string>& sweep_parameters();
/// Applies one sweep value to a copy of `base` (already resolved).
ExperimentConfig with_sweep_value(const ExperimentConfig& base, const std::string& param, const std::string& value);
/// Runs the full pipeline per value. tau and m reuse one trained model.
std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const std::string& param,
                                const std::vector<std::string>& values);

std::string sweep_csv(const std::string& param, const std::vector<SweepRow>& rows);

/// Hex SHA-256 of a file's bytes.
std::string file_sha256(const std::string& path);

}  // namespace cloudmark
