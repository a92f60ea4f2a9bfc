#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cloudmark/geometry.hpp"
#include "cloudmark/net.hpp"
#include "cloudmark/tfp.hpp"
#include "json.hpp"

namespace cloudmark {

enum class Split { Train, Test, Verify };

std::string to_string(Split s);
/// Throws InvalidArgument on anything but "train", "test", "verify".
Split split_from_string(const std::string& s);

/// Present exactly on modified (D_m) samples.
struct WatermarkProvenance {
  std::size_t source_index = 0;
  PerturbationRecord perturbation;
  std::vector<std::size_t> replaced_indices;
  std::uint64_t implant_seed = 0;  // seeds the replaced-index draw
  int source_label = 0;            // ground truth of the source sample

  bool operator==(const WatermarkProvenance&) const = default;
};

struct Sample {
  std::size_t id = 0;  // stable across watermarking
  PointCloud cloud;
  int label = 0;
  Split split = Split::Train;
  std::optional<WatermarkProvenance> watermark;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<Sample> samples;
  nlohmann::json metadata = nlohmann::json::object();  // seeds, config snapshots

  int class_count() const { return static_cast<int>(class_names.size()); }
  std::vector<std::size_t> indices(Split s) const;
  std::vector<LabeledCloud> labeled(Split s) const;
  /// Throws ValidationError on labels outside [0,K) or inconsistent ids.
  void validate() const;
};

struct SyntheticShapeSpec {
  int classes = 8;
  int points = 256;
  int samples_per_class = 160;       // split 70/15/15 into train/test/verify
  int extra_verify_per_class = 0;    // additional held-out verify samples
  double jitter = 0.01;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Names of the available parametric shape classes (16).
const std::vector<std::string>& shape_class_names();

/// One cloud of shape `kind` before normalization.
PointCloud sample_shape(int kind, int points, double jitter, std::uint64_t seed);

/// Deterministic in `spec`; every cloud is normalized into [0,1]^3.
Dataset generate_synthetic_dataset(const SyntheticShapeSpec& spec);

// Cloud files: first line is the point count, then one "x y z" line per point
// printed with 17 significant digits.
void write_cloud(const std::string& path, const PointCloud& cloud);
/// Throws ParseError naming the offending line.
PointCloud read_cloud(const std::string& path);

/// Writes `dir/manifest.json` plus `dir/clouds/<id>.txt`.
void save_dataset(const Dataset& data, const std::string& dir);
/// Throws ParseError / ValidationError.
Dataset load_dataset(const std::string& dir);

nlohmann::json to_json(const PerturbationRecord& r);
PerturbationRecord perturbation_from_json(const nlohmann::json& j);

}  // namespace cloudmark
