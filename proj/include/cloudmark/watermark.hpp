#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cloudmark/dataset.hpp"
#include "cloudmark/geometry.hpp"
#include "cloudmark/tfp.hpp"

namespace cloudmark {

/// A fixed point set in absolute (normalized-frame) coordinates. Every point
/// lies within `radius` of `center`.
struct TriggerPattern {
  std::string shape = "sphere";
  std::vector<Vec3> points;
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
  std::uint64_t seed = 0;
};

/// `count` points uniform on the sphere surface.
TriggerPattern make_sphere_trigger(const Vec3& center, double radius, int count, std::uint64_t seed);
/// `count` points uniform on the surface of an axis-aligned cube whose
/// circumscribed sphere has radius `radius`.
TriggerPattern make_cube_trigger(const Vec3& center, double radius, int count, std::uint64_t seed);

struct TriggerSpec {
  std::string shape = "sphere";  // "sphere" | "cube"
  Vec3 center{0.3, 0.3, 0.3};
  double radius = 0.025;
  int count = 50;
  std::uint64_t seed = 7;

  TriggerPattern build() const;
  /// Point count keeping the 50-in-1024 proportion for clouds of `points` points.
  static int scaled_count(int points);
  /// Parses "cx,cy,cz,radius,count".
  static TriggerSpec parse(const std::string& text);
};

struct ImplantResult {
  PointCloud cloud;
  std::vector<std::size_t> replaced;  // replaced[j] now holds trigger point j
};

/// Overwrites |trigger| distinct, uniformly chosen points. Throws
/// InvalidArgument when the cloud has fewer points than the trigger.
ImplantResult implant_trigger(const PointCloud& x, const TriggerPattern& trigger, std::uint64_t seed);

struct WatermarkConfig {
  int target_class = 0;
  double rate = 0.01;  // lambda = |D_m| / |D|
  TriggerSpec trigger;
  int target_set_size = 32;
  std::uint64_t seed = 1;
  ShapeOptConfig shape;
  PointOptConfig point;
  PerturbOptions options;
  // Map the perturbed cloud back into [0,1]^3 before the trigger goes in, so
  // released samples obey the same frame as the rest of the dataset.
  bool renormalize = true;

  void validate(int classes) const;
};

/// round-half-up of rate * n, at least 1 when rate > 0.
std::size_t watermark_count(double rate, std::size_t n);

/// Dataset indices (into `Dataset::samples`) of D_s and D_t.
struct SourceTargetSets {
  std::vector<std::size_t> sources;
  std::vector<std::size_t> targets;
};

/// Draws from the train split: D_s uniformly among non-target samples,
/// D_t uniformly among target samples. Throws InvalidArgument naming the deficit.
SourceTargetSets select_sets(const Dataset& data, const WatermarkConfig& cfg);

struct WatermarkedDataset {
  Dataset data;                       // all splits; train split = D_m u D_b
  std::vector<std::size_t> modified;  // indices of D_m in data.samples
  std::vector<std::size_t> benign;    // indices of D_b
  std::vector<std::size_t> target_set;
  TriggerPattern trigger;
  WatermarkConfig config;
};

/// Perturbs every D_s sample toward the D_t features, implants the trigger,
/// keeps its label. Everything else passes through untouched.
WatermarkedDataset watermark_dataset(const Dataset& data, const Surrogate& surrogate, const WatermarkConfig& cfg);

/// Percentage of D_m samples whose label differs from the source ground truth.
double iom_metric(const WatermarkedDataset& wm);

nlohmann::json to_json(const WatermarkConfig& cfg);
WatermarkConfig watermark_config_from_json(const nlohmann::json& j);

}  // namespace cloudmark
