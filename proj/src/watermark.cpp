#include "cloudmark/watermark.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cloudmark/error.hpp"
#include "cloudmark/random.hpp"

namespace cloudmark {

TriggerPattern make_sphere_trigger(const Vec3& center, double radius, int count, std::uint64_t seed) {
  if (!(radius > 0.0)) throw InvalidArgument("trigger radius must be > 0");
  if (count < 1) throw InvalidArgument("trigger needs at least one point");
  TriggerPattern t{"sphere", {}, center, radius, seed};
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < count; ++i) {
    Vec3 v;
    do {
      v = Vec3(n(rng), n(rng), n(rng));
    } while (v.norm() < 1e-12);
    t.points.push_back(center + radius * v.normalized());
  }
  return t;
}

TriggerPattern make_cube_trigger(const Vec3& center, double radius, int count, std::uint64_t seed) {
  if (!(radius > 0.0)) throw InvalidArgument("trigger radius must be > 0");
  if (count < 1) throw InvalidArgument("trigger needs at least one point");
  TriggerPattern t{"cube", {}, center, radius, seed};
  const double h = radius / std::sqrt(3.0);
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-h, h);
  std::uniform_int_distribution<int> face(0, 5);
  for (int i = 0; i < count; ++i) {
    const int f = face(rng);
    Vec3 p(u(rng), u(rng), u(rng));
    p(f / 2) = (f % 2 == 0) ? -h : h;
    t.points.push_back(center + p);
  }
  return t;
}

TriggerPattern TriggerSpec::build() const {
  if (shape == "sphere") return make_sphere_trigger(center, radius, count, seed);
  if (shape == "cube") return make_cube_trigger(center, radius, count, seed);
  throw InvalidArgument("unknown trigger shape '" + shape + "'");
}

int TriggerSpec::scaled_count(int points) {
  if (points < 1) throw InvalidArgument("scaled_count: points must be >= 1");
  return std::max(1, static_cast<int>(std::floor(50.0 * points / 1024.0 + 0.5)));
}

TriggerSpec TriggerSpec::parse(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw InvalidArgument("trigger spec: bad number '" + tok + "'");
    }
  }
  if (v.size() != 5) throw InvalidArgument("trigger spec must be cx,cy,cz,radius,count");
  TriggerSpec s;
  s.center = Vec3(v[0], v[1], v[2]);
  s.radius = v[3];
  s.count = static_cast<int>(v[4]);
  if (!(s.radius > 0.0) || s.count < 1 || v[4] != static_cast<double>(s.count))
    throw InvalidArgument("trigger spec needs radius > 0 and an integer count >= 1");
  return s;
}

ImplantResult implant_trigger(const PointCloud& x, const TriggerPattern& trigger, std::uint64_t seed) {
  const std::size_t k = trigger.points.size();
  if (k == 0) throw InvalidArgument("implant_trigger: empty trigger");
  if (x.size() < k)
    throw InvalidArgument("implant_trigger: cloud has " + std::to_string(x.size()) + " points, trigger needs " +
                          std::to_string(k));
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  // Partial Fisher-Yates: the first k slots are a uniform draw without replacement.
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  PointMatrix m = x.points();
  for (std::size_t j = 0; j < k; ++j) m.row(static_cast<Eigen::Index>(idx[j])) = trigger.points[j].transpose();
  return {PointCloud(std::move(m)), std::move(idx)};
}

void WatermarkConfig::validate(int classes) const {
  if (target_class < 0 || target_class >= classes)
    throw InvalidArgument("target class " + std::to_string(target_class) + " outside [0," + std::to_string(classes) +
                          ")");
  if (!(rate >= 0.0) || rate > 1.0) throw InvalidArgument("watermarking rate must be in [0,1]");
  if (target_set_size < 1) throw InvalidArgument("target set size must be >= 1");
  shape.validate();
  point.validate();
}

std::size_t watermark_count(double rate, std::size_t n) {
  if (!(rate > 0.0)) return 0;
  const auto c = static_cast<std::size_t>(std::floor(rate * static_cast<double>(n) + 0.5));
  return std::max<std::size_t>(1, c);
}

SourceTargetSets select_sets(const Dataset& data, const WatermarkConfig& cfg) {
  cfg.validate(data.class_count());
  std::vector<std::size_t> pool, target_pool;
  std::size_t n = 0;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& s = data.samples[i];
    if (s.split != Split::Train) continue;
    ++n;
    (s.label == cfg.target_class ? target_pool : pool).push_back(i);
  }
  const std::size_t want_sources = watermark_count(cfg.rate, n);
  if (want_sources > pool.size())
    throw InvalidArgument("select_sets: need " + std::to_string(want_sources) + " non-target samples, only " +
                          std::to_string(pool.size()) + " available (short by " +
                          std::to_string(want_sources - pool.size()) + ")");
  if (target_pool.empty())
    throw InvalidArgument("select_sets: no training samples of target class " + std::to_string(cfg.target_class));
  // Fewer target samples than requested: use all of them.
  const std::size_t want_targets = std::min<std::size_t>(static_cast<std::size_t>(cfg.target_set_size), target_pool.size());

  SourceTargetSets out;
  Rng rng(derive_seed(cfg.seed, 0x5e1ec7ULL));
  std::shuffle(pool.begin(), pool.end(), rng);
  out.sources.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(want_sources));
  std::shuffle(target_pool.begin(), target_pool.end(), rng);
  out.targets.assign(target_pool.begin(), target_pool.begin() + static_cast<std::ptrdiff_t>(want_targets));
  std::sort(out.sources.begin(), out.sources.end());
  std::sort(out.targets.begin(), out.targets.end());
  return out;
}

WatermarkedDataset watermark_dataset(const Dataset& data, const Surrogate& surrogate, const WatermarkConfig& cfg) {
  WatermarkedDataset wm;
  wm.config = cfg;
  wm.data = data;
  wm.trigger = cfg.trigger.build();
  wm.data.metadata["watermark"] = to_json(cfg);

  const SourceTargetSets sets = select_sets(data, cfg);
  wm.target_set = sets.targets;
  if (!sets.sources.empty()) {
    std::vector<PointCloud> target_clouds;
    for (std::size_t i : sets.targets) target_clouds.push_back(data.samples[i].cloud);
    const TargetFeatureSet targets = compute_target_features(surrogate, target_clouds, sets.targets);
    for (std::size_t i : sets.sources) {
      const Sample& src = data.samples[i];
      ShapeOptConfig shape = cfg.shape;
      PointOptConfig point = cfg.point;
      shape.seed = derive_seed(cfg.shape.seed ^ cfg.seed, src.id);
      point.seed = derive_seed(cfg.point.seed ^ cfg.seed, src.id);
      const PerturbResult p = perturb(src.cloud, targets, surrogate, shape, point, cfg.options);
      const std::uint64_t implant_seed = derive_seed(cfg.seed ^ 0x1a7e11ULL, src.id);
      ImplantResult imp =
          implant_trigger(cfg.renormalize ? normalize_cloud(p.perturbed) : p.perturbed, wm.trigger, implant_seed);
      Sample& out = wm.data.samples[i];
      out.cloud = std::move(imp.cloud);
      out.watermark = WatermarkProvenance{i, p.record, std::move(imp.replaced), implant_seed, src.label};
    }
  }
  wm.modified = sets.sources;
  for (std::size_t i = 0; i < data.samples.size(); ++i)
    if (data.samples[i].split == Split::Train && !std::binary_search(sets.sources.begin(), sets.sources.end(), i))
      wm.benign.push_back(i);
  return wm;
}

double iom_metric(const WatermarkedDataset& wm) {
  if (wm.modified.empty()) return 0.0;
  std::size_t mismatched = 0;
  for (std::size_t i : wm.modified) {
    const Sample& s = wm.data.samples.at(i);
    if (!s.watermark) throw ValidationError("modified sample " + std::to_string(s.id) + " has no provenance");
    mismatched += s.label != s.watermark->source_label ? 1 : 0;
  }
  return 100.0 * static_cast<double>(mismatched) / static_cast<double>(wm.modified.size());
}

nlohmann::json to_json(const WatermarkConfig& c) {
  return {{"target_class", c.target_class},
          {"rate", c.rate},
          {"trigger",
           {{"shape", c.trigger.shape},
            {"center", {c.trigger.center.x(), c.trigger.center.y(), c.trigger.center.z()}},
            {"radius", c.trigger.radius},
            {"count", c.trigger.count},
            {"seed", c.trigger.seed}}},
          {"target_set_size", c.target_set_size},
          {"seed", c.seed},
          {"shape",
           {{"starts", c.shape.starts},
            {"iterations", c.shape.iterations},
            {"learning_rate", c.shape.learning_rate},
            {"decay_every", c.shape.decay_every},
            {"seed", c.shape.seed}}},
          {"point",
           {{"eta", c.point.eta},
            {"iterations", c.point.iterations},
            {"step", c.point.step},
            {"momentum", c.point.momentum},
            {"seed", c.point.seed}}},
          {"shape_wise", c.options.shape_wise},
          {"point_wise", c.options.point_wise},
          {"renormalize", c.renormalize}};
}

WatermarkConfig watermark_config_from_json(const nlohmann::json& j) {
  WatermarkConfig c;
  c.target_class = j.value("target_class", c.target_class);
  c.rate = j.value("rate", c.rate);
  if (j.contains("trigger")) {
    const auto& t = j.at("trigger");
    c.trigger.shape = t.value("shape", c.trigger.shape);
    if (t.contains("center")) {
      const auto v = t.at("center").get<std::vector<double>>();
      if (v.size() != 3) throw ValidationError("trigger center needs 3 coordinates");
      c.trigger.center = Vec3(v[0], v[1], v[2]);
    }
    c.trigger.radius = t.value("radius", c.trigger.radius);
    c.trigger.count = t.value("count", c.trigger.count);
    c.trigger.seed = t.value("seed", c.trigger.seed);
  }
  c.target_set_size = j.value("target_set_size", c.target_set_size);
  c.seed = j.value("seed", c.seed);
  if (j.contains("shape")) {
    const auto& s = j.at("shape");
    c.shape.starts = s.value("starts", c.shape.starts);
    c.shape.iterations = s.value("iterations", c.shape.iterations);
    c.shape.learning_rate = s.value("learning_rate", c.shape.learning_rate);
    c.shape.decay_every = s.value("decay_every", c.shape.decay_every);
    c.shape.seed = s.value("seed", c.shape.seed);
  }
  if (j.contains("point")) {
    const auto& p = j.at("point");
    c.point.eta = p.value("eta", c.point.eta);
    c.point.iterations = p.value("iterations", c.point.iterations);
    c.point.step = p.value("step", c.point.step);
    c.point.momentum = p.value("momentum", c.point.momentum);
    c.point.seed = p.value("seed", c.point.seed);
  }
  c.options.shape_wise = j.value("shape_wise", c.options.shape_wise);
  c.options.point_wise = j.value("point_wise", c.options.point_wise);
  c.renormalize = j.value("renormalize", c.renormalize);
  return c;
}

}  // namespace cloudmark
