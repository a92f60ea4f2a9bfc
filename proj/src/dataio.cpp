#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "cloudmark/dataset.hpp"
#include "cloudmark/error.hpp"
#include "cloudmark/random.hpp"

namespace cloudmark {

namespace fs = std::filesystem;

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Test: return "test";
    case Split::Verify: return "verify";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  if (s == "verify") return Split::Verify;
  throw InvalidArgument("unknown split tag '" + s + "'");
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == s) out.push_back(i);
  return out;
}

std::vector<LabeledCloud> Dataset::labeled(Split s) const {
  std::vector<LabeledCloud> out;
  for (const auto& smp : samples)
    if (smp.split == s) out.push_back({smp.cloud, smp.label});
  return out;
}

void Dataset::validate() const {
  if (class_names.size() < 2) throw ValidationError("dataset needs at least two classes");
  std::vector<std::size_t> ids;
  for (const auto& s : samples) {
    if (s.label < 0 || s.label >= class_count())
      throw ValidationError("sample " + std::to_string(s.id) + " has label " + std::to_string(s.label) +
                            " but the dataset has " + std::to_string(class_count()) + " classes");
    if (s.cloud.size() == 0) throw ValidationError("sample " + std::to_string(s.id) + " has an empty cloud");
    ids.push_back(s.id);
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw ValidationError("duplicate sample id");
}

void SyntheticShapeSpec::validate() const {
  if (classes < 2 || classes > static_cast<int>(shape_class_names().size()))
    throw InvalidArgument("SyntheticShapeSpec: classes must be in [2," + std::to_string(shape_class_names().size()) +
                          "]");
  if (points < 64) throw InvalidArgument("SyntheticShapeSpec: points must be >= 64");
  if (samples_per_class < 3) throw InvalidArgument("SyntheticShapeSpec: samples_per_class must be >= 3");
  if (extra_verify_per_class < 0) throw InvalidArgument("SyntheticShapeSpec: extra_verify_per_class must be >= 0");
  if (!(jitter >= 0.0)) throw InvalidArgument("SyntheticShapeSpec: jitter must be >= 0");
}

const std::vector<std::string>& shape_class_names() {
  static const std::vector<std::string> names{
      "sphere",     "cube",          "cylinder",   "cone",       "torus",      "pyramid",
      "plane_bump", "helix",         "ellipsoid",  "slab",       "tall_cylinder", "wide_cone",
      "thin_torus", "tall_pyramid",  "plane_dent", "tight_helix"};
  return names;
}

namespace {

constexpr double kPi = std::numbers::pi;

class ShapeSampler {
 public:
  explicit ShapeSampler(std::uint64_t seed) : rng_(seed) {}

  double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng_); }
  double normal(double sd) { return std::normal_distribution<double>(0.0, sd)(rng_); }
  double vary() { return uniform(0.85, 1.15); }

  Vec3 unit_vector() {
    Vec3 v;
    do {
      v = Vec3(normal(1.0), normal(1.0), normal(1.0));
    } while (v.norm() < 1e-12);
    return v.normalized();
  }

  Vec3 ellipsoid(double a, double b, double c) {
    const Vec3 u = unit_vector();
    return {a * u.x(), b * u.y(), c * u.z()};
  }

  Vec3 box(double hx, double hy, double hz) {
    const double axy = hx * hy, axz = hx * hz, ayz = hy * hz;
    const double pick = uniform(0.0, axy + axz + ayz);
    const double side = uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0;
    if (pick < axy) return {uniform(-hx, hx), uniform(-hy, hy), side * hz};
    if (pick < axy + axz) return {uniform(-hx, hx), side * hy, uniform(-hz, hz)};
    return {side * hx, uniform(-hy, hy), uniform(-hz, hz)};
  }

  Vec3 cylinder(double r, double half_h) {
    const double side = 2.0 * kPi * r * 2.0 * half_h, caps = 2.0 * kPi * r * r;
    const double a = uniform(0.0, 2.0 * kPi);
    if (uniform(0.0, side + caps) < side) return {r * std::cos(a), r * std::sin(a), uniform(-half_h, half_h)};
    const double rr = r * std::sqrt(uniform(0.0, 1.0));
    return {rr * std::cos(a), rr * std::sin(a), uniform(0.0, 1.0) < 0.5 ? -half_h : half_h};
  }

  Vec3 cone(double r, double h) {
    const double slant = std::hypot(r, h);
    const double lateral = kPi * r * slant, base = kPi * r * r;
    const double a = uniform(0.0, 2.0 * kPi);
    if (uniform(0.0, lateral + base) < lateral) {
      const double s = std::sqrt(uniform(0.0, 1.0));  // fraction of the way from apex to rim
      return {s * r * std::cos(a), s * r * std::sin(a), h * (1.0 - s)};
    }
    const double rr = r * std::sqrt(uniform(0.0, 1.0));
    return {rr * std::cos(a), rr * std::sin(a), 0.0};
  }

  Vec3 torus(double big_r, double small_r) {
    for (;;) {
      const double u = uniform(0.0, 2.0 * kPi), v = uniform(0.0, 2.0 * kPi);
      // Rejection keeps the density uniform in surface area.
      if (uniform(0.0, big_r + small_r) > big_r + small_r * std::cos(v)) continue;
      const double ring = big_r + small_r * std::cos(v);
      return {ring * std::cos(u), ring * std::sin(u), small_r * std::sin(v)};
    }
  }

  Vec3 triangle(const Vec3& a, const Vec3& b, const Vec3& c) {
    double s = uniform(0.0, 1.0), t = uniform(0.0, 1.0);
    if (s + t > 1.0) {
      s = 1.0 - s;
      t = 1.0 - t;
    }
    return a + s * (b - a) + t * (c - a);
  }

  Vec3 pyramid(double half_base, double h) {
    const double slant_face = half_base * std::hypot(half_base, h);  // area of one triangle
    const double base = 4.0 * half_base * half_base;
    const double pick = uniform(0.0, base + 4.0 * slant_face);
    if (pick < base) return {uniform(-half_base, half_base), uniform(-half_base, half_base), 0.0};
    const int face = std::min(3, static_cast<int>((pick - base) / slant_face));
    const Vec3 apex(0.0, 0.0, h);
    const std::array<Vec3, 4> corners{Vec3(-half_base, -half_base, 0), Vec3(half_base, -half_base, 0),
                                      Vec3(half_base, half_base, 0), Vec3(-half_base, half_base, 0)};
    return triangle(apex, corners[static_cast<std::size_t>(face)], corners[static_cast<std::size_t>((face + 1) % 4)]);
  }

  Vec3 bump_plane(double half, double height, double width) {
    const double x = uniform(-half, half), y = uniform(-half, half);
    return {x, y, height * std::exp(-(x * x + y * y) / (2.0 * width * width))};
  }

  Vec3 helix(double radius, double rise_per_turn, double turns, double tube) {
    const double t = uniform(0.0, 2.0 * kPi * turns);
    const Vec3 centre(radius * std::cos(t), radius * std::sin(t), rise_per_turn * t / (2.0 * kPi));
    return centre + tube * unit_vector();
  }

 private:
  Rng rng_;
};

}  // namespace

PointCloud sample_shape(int kind, int points, double jitter, std::uint64_t seed) {
  if (kind < 0 || kind >= static_cast<int>(shape_class_names().size()))
    throw InvalidArgument("unknown shape kind " + std::to_string(kind));
  if (points < 1) throw InvalidArgument("sample_shape: points must be >= 1");
  ShapeSampler s(seed);
  // Per-sample dimensions vary by +-15% around the class prototype.
  const double a = s.vary(), b = s.vary(), c = s.vary();
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) {
    Vec3 p;
    switch (kind) {
      case 0: p = s.ellipsoid(a, 0.5 * (a + b), 0.5 * (a + c)); break;
      case 1: p = s.box(a, b, c); break;
      case 2: p = s.cylinder(a, b); break;
      case 3: p = s.cone(a, 2.0 * b); break;
      case 4: p = s.torus(a, 0.35 * b); break;
      case 5: p = s.pyramid(a, 1.6 * b); break;
      case 6: p = s.bump_plane(a, 0.6 * b, 0.3 * c); break;
      case 7: p = s.helix(a, 0.9 * b, 3.0, 0.1 * c); break;
      case 8: p = s.ellipsoid(a, 0.7 * b, 0.45 * c); break;
      case 9: p = s.box(a, b, 0.25 * c); break;
      case 10: p = s.cylinder(0.5 * a, 1.5 * b); break;
      case 11: p = s.cone(1.5 * a, 0.8 * b); break;
      case 12: p = s.torus(a, 0.12 * b); break;
      case 13: p = s.pyramid(0.5 * a, 3.0 * b); break;
      case 14: p = s.bump_plane(a, -0.4 * b, 0.2 * c); break;
      default: p = s.helix(0.5 * a, 0.5 * b, 6.0, 0.08 * c); break;
    }
    pts.push_back(p);
  }
  PointCloud raw = PointCloud::from_points(pts);
  if (jitter > 0.0) {
    const Eigen::RowVector3d extent = raw.points().colwise().maxCoeff() - raw.points().colwise().minCoeff();
    const double sd = jitter * extent.maxCoeff();
    PointMatrix m = raw.points();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (int k = 0; k < 3; ++k) m(i, k) += s.normal(sd);
    raw = PointCloud(std::move(m));
  }
  return raw;
}

Dataset generate_synthetic_dataset(const SyntheticShapeSpec& spec) {
  spec.validate();
  Dataset d;
  const auto& names = shape_class_names();
  d.class_names.assign(names.begin(), names.begin() + spec.classes);
  const int n_train = static_cast<int>(std::lround(0.70 * spec.samples_per_class));
  const int n_test = static_cast<int>(std::lround(0.15 * spec.samples_per_class));
  std::size_t next_id = 0;
  for (int cls = 0; cls < spec.classes; ++cls) {
    const std::uint64_t class_seed = derive_seed(spec.seed, static_cast<std::uint64_t>(cls));
    std::vector<int> order(static_cast<std::size_t>(spec.samples_per_class));
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(derive_seed(class_seed, 0xFFFFFFFFULL));
    std::shuffle(order.begin(), order.end(), split_rng);
    std::vector<Split> split_of(order.size());
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
      const int r = static_cast<int>(rank);
      split_of[static_cast<std::size_t>(order[rank])] =
          r < n_train ? Split::Train : (r < n_train + n_test ? Split::Test : Split::Verify);
    }
    const int total = spec.samples_per_class + spec.extra_verify_per_class;
    for (int i = 0; i < total; ++i) {
      Sample s;
      s.id = next_id++;
      s.label = cls;
      s.split = i < spec.samples_per_class ? split_of[static_cast<std::size_t>(i)] : Split::Verify;
      s.cloud = normalize_cloud(sample_shape(cls, spec.points, spec.jitter, derive_seed(class_seed, static_cast<std::uint64_t>(i))));
      d.samples.push_back(std::move(s));
    }
  }
  d.metadata["synthetic"] = {{"classes", spec.classes},
                             {"points", spec.points},
                             {"samples_per_class", spec.samples_per_class},
                             {"extra_verify_per_class", spec.extra_verify_per_class},
                             {"jitter", spec.jitter},
                             {"seed", spec.seed}};
  return d;
}

void write_cloud(const std::string& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write " + path);
  out << cloud.size() << '\n';
  char buf[96];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3 p = cloud.point(i);
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", p.x(), p.y(), p.z());
    out << buf;
  }
  if (!out) throw InvalidArgument("failed writing " + path);
}

namespace {

bool parse_double(std::string_view tok, double& v) {
  const auto* end = tok.data() + tok.size();
  const auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  return ec == std::errc() && ptr == end;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> toks;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) toks.push_back(line.substr(start, i - start));
  }
  return toks;
}

}  // namespace

PointCloud read_cloud(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open cloud file " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path, 1, "missing point-count header");
  const auto header = split_ws(line);
  std::size_t count = 0;
  if (header.size() != 1 ||
      std::from_chars(header[0].data(), header[0].data() + header[0].size(), count).ec != std::errc() || count == 0)
    throw ParseError(path, 1, "expected a positive point count");
  PointMatrix m(static_cast<Eigen::Index>(count), 3);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t lineno = i + 2;
    if (!std::getline(in, line))
      throw ParseError(path, lineno, "file ends after " + std::to_string(i) + " of " + std::to_string(count) + " points");
    const auto toks = split_ws(line);
    if (toks.size() != 3) throw ParseError(path, lineno, "expected 3 coordinates");
    for (int k = 0; k < 3; ++k) {
      double v = 0.0;
      if (!parse_double(toks[static_cast<std::size_t>(k)], v) || !std::isfinite(v))
        throw ParseError(path, lineno, "bad coordinate '" + std::string(toks[static_cast<std::size_t>(k)]) + "'");
      m(static_cast<Eigen::Index>(i), k) = v;
    }
  }
  while (std::getline(in, line))
    if (!split_ws(line).empty()) throw ParseError(path, count + 2, "trailing data after the declared points");
  return PointCloud(std::move(m));
}

nlohmann::json to_json(const PerturbationRecord& r) {
  return {{"theta", {r.theta.psi, r.theta.phi, r.theta.gamma}},
          {"delta_norm", r.delta_norm},
          {"shape_loss_start", r.shape_loss_start},
          {"shape_loss_final", r.shape_loss_final},
          {"point_loss_final", r.point_loss_final},
          {"chamfer_rotation", r.chamfer_rotation},
          {"chamfer_jitter", r.chamfer_jitter},
          {"chamfer_total", r.chamfer_total}};
}

PerturbationRecord perturbation_from_json(const nlohmann::json& j) {
  PerturbationRecord r;
  const auto th = j.at("theta").get<std::vector<double>>();
  if (th.size() != 3) throw ValidationError("perturbation record: theta needs 3 angles");
  r.theta = {th[0], th[1], th[2]};
  r.delta_norm = j.at("delta_norm").get<double>();
  r.shape_loss_start = j.at("shape_loss_start").get<double>();
  r.shape_loss_final = j.at("shape_loss_final").get<double>();
  r.point_loss_final = j.at("point_loss_final").get<double>();
  r.chamfer_rotation = j.at("chamfer_rotation").get<double>();
  r.chamfer_jitter = j.at("chamfer_jitter").get<double>();
  r.chamfer_total = j.at("chamfer_total").get<double>();
  return r;
}

namespace {

constexpr int kManifestVersion = 1;

std::string cloud_file_name(std::size_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "clouds/%06zu.txt", id);
  return buf;
}

}  // namespace

void save_dataset(const Dataset& data, const std::string& dir) {
  data.validate();
  fs::create_directories(fs::path(dir) / "clouds");
  nlohmann::json manifest;
  manifest["format"] = "cloudmark-dataset";
  manifest["version"] = kManifestVersion;
  manifest["class_names"] = data.class_names;
  manifest["metadata"] = data.metadata;
  nlohmann::json records = nlohmann::json::array();
  for (const auto& s : data.samples) {
    const std::string file = cloud_file_name(s.id);
    write_cloud((fs::path(dir) / file).string(), s.cloud);
    nlohmann::json rec{{"id", s.id}, {"file", file}, {"label", s.label}, {"split", to_string(s.split)}};
    if (s.watermark) {
      rec["watermark"] = {{"source_index", s.watermark->source_index},
                          {"perturbation", to_json(s.watermark->perturbation)},
                          {"replaced_indices", s.watermark->replaced_indices},
                          {"implant_seed", s.watermark->implant_seed},
                          {"source_label", s.watermark->source_label}};
    }
    records.push_back(std::move(rec));
  }
  manifest["samples"] = std::move(records);
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw InvalidArgument("cannot write manifest in " + dir);
  out << manifest.dump(1) << '\n';
}

Dataset load_dataset(const std::string& dir) {
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw ValidationError("missing manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(manifest_path.string(), 0, e.what());
  }
  if (manifest.value("format", "") != "cloudmark-dataset")
    throw ValidationError(manifest_path.string() + ": not a cloudmark dataset manifest");
  if (manifest.value("version", 0) != kManifestVersion)
    throw ValidationError(manifest_path.string() + ": unsupported manifest version");
  Dataset d;
  d.class_names = manifest.at("class_names").get<std::vector<std::string>>();
  d.metadata = manifest.value("metadata", nlohmann::json::object());
  std::vector<std::string> missing;
  for (const auto& rec : manifest.at("samples")) {
    const std::string file = rec.at("file").get<std::string>();
    const fs::path p = fs::path(dir) / file;
    if (!fs::exists(p)) {
      missing.push_back(file);
      continue;
    }
    Sample s;
    s.id = rec.at("id").get<std::size_t>();
    s.label = rec.at("label").get<int>();
    s.split = split_from_string(rec.at("split").get<std::string>());
    s.cloud = read_cloud(p.string());
    if (rec.contains("watermark")) {
      const auto& w = rec.at("watermark");
      WatermarkProvenance prov;
      prov.source_index = w.at("source_index").get<std::size_t>();
      prov.perturbation = perturbation_from_json(w.at("perturbation"));
      prov.replaced_indices = w.at("replaced_indices").get<std::vector<std::size_t>>();
      prov.implant_seed = w.at("implant_seed").get<std::uint64_t>();
      prov.source_label = w.at("source_label").get<int>();
      s.watermark = std::move(prov);
    }
    d.samples.push_back(std::move(s));
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw ValidationError("manifest references missing cloud files: " + list);
  }
  d.validate();
  return d;
}

}  // namespace cloudmark
