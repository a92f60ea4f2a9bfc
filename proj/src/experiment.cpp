#include "cloudmark/experiment.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>

#include "cloudmark/error.hpp"
#include "cloudmark/random.hpp"

namespace cloudmark {

ExperimentConfig ExperimentConfig::desk_default() {
  ExperimentConfig c;
  c.data.extra_verify_per_class = 100;
  c.surrogate_net = NetConfig::mini(c.data.classes);
  c.model_net = NetConfig::mini(c.data.classes);
  c.watermark.rate = 0.02;
  c.watermark.trigger.center = Vec3(0.05, 0.05, 0.05);
  c.watermark.trigger.count = TriggerSpec::scaled_count(c.data.points);
  c.resolve();
  return c;
}

void ExperimentConfig::resolve() {
  data.seed = derive_seed(seed, 1);
  surrogate_net.seed = derive_seed(seed, 2);
  model_net.seed = derive_seed(seed, 3);
  train.seed = derive_seed(seed, 4);
  watermark.seed = derive_seed(seed, 5);
  verification.seed = derive_seed(seed, 6);
  for (std::size_t i = 0; i < attacks.size(); ++i) attacks[i].seed = derive_seed(seed, 100 + i);
  surrogate_net.class_count = data.classes;
  model_net.class_count = data.classes;
  verification.trigger = watermark.trigger;
  verification.target_class = watermark.target_class;
}

void ExperimentConfig::validate() const {
  data.validate();
  surrogate_net.validate();
  model_net.validate();
  train.validate();
  watermark.validate(data.classes);
  verification.validate();
  for (const auto& a : attacks) a.validate();
  if (surrogate_net.class_count != data.classes || model_net.class_count != data.classes)
    throw ValidationError("network class counts must match the dataset (" + std::to_string(data.classes) + ")");
  if (watermark.trigger.count > data.points) throw ValidationError("trigger has more points than a cloud");
}

nlohmann::json to_json(const NetConfig& c) {
  return {{"per_point_widths", c.per_point_widths},
          {"head_widths", c.head_widths},
          {"class_count", c.class_count},
          {"seed", c.seed}};
}

NetConfig net_config_from_json(const nlohmann::json& j) {
  NetConfig c;
  c.per_point_widths = j.value("per_point_widths", c.per_point_widths);
  c.head_widths = j.value("head_widths", c.head_widths);
  c.class_count = j.value("class_count", c.class_count);
  c.seed = j.value("seed", c.seed);
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},  {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},    {"beta2", c.beta2},           {"epsilon", c.epsilon},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.seed = j.value("seed", c.seed);
  return c;
}

nlohmann::json to_json(const SyntheticShapeSpec& s) {
  return {{"classes", s.classes},
          {"points", s.points},
          {"samples_per_class", s.samples_per_class},
          {"extra_verify_per_class", s.extra_verify_per_class},
          {"jitter", s.jitter},
          {"seed", s.seed}};
}

SyntheticShapeSpec shape_spec_from_json(const nlohmann::json& j) {
  SyntheticShapeSpec s;
  s.classes = j.value("classes", s.classes);
  s.points = j.value("points", s.points);
  s.samples_per_class = j.value("samples_per_class", s.samples_per_class);
  s.extra_verify_per_class = j.value("extra_verify_per_class", s.extra_verify_per_class);
  s.jitter = j.value("jitter", s.jitter);
  s.seed = j.value("seed", s.seed);
  return s;
}

nlohmann::json to_json(const TriggerSpec& t) {
  return {{"shape", t.shape},
          {"center", {t.center.x(), t.center.y(), t.center.z()}},
          {"radius", t.radius},
          {"count", t.count},
          {"seed", t.seed}};
}

TriggerSpec trigger_spec_from_json(const nlohmann::json& j) {
  TriggerSpec t;
  t.shape = j.value("shape", t.shape);
  if (j.contains("center")) {
    const auto v = j.at("center").get<std::vector<double>>();
    if (v.size() != 3) throw ValidationError("trigger center needs 3 coordinates");
    t.center = Vec3(v[0], v[1], v[2]);
  }
  t.radius = j.value("radius", t.radius);
  t.count = j.value("count", t.count);
  t.seed = j.value("seed", t.seed);
  return t;
}

nlohmann::json to_json(const VerificationConfig& c) {
  return {{"m", c.m},
          {"tau", c.tau},
          {"alpha", c.alpha},
          {"trigger", to_json(c.trigger)},
          {"target_class", c.target_class},
          {"seed", c.seed}};
}

VerificationConfig verification_config_from_json(const nlohmann::json& j) {
  VerificationConfig c;
  c.m = j.value("m", c.m);
  c.tau = j.value("tau", c.tau);
  c.alpha = j.value("alpha", c.alpha);
  if (j.contains("trigger")) c.trigger = trigger_spec_from_json(j.at("trigger"));
  c.target_class = j.value("target_class", c.target_class);
  c.seed = j.value("seed", c.seed);
  return c;
}

nlohmann::json to_json(const AttackConfig& c) {
  return {{"kind", to_string(c.kind)},
          {"rotation_range", c.rotation_range},
          {"noise_sigma", c.noise_sigma},
          {"sor_k", c.sor_k},
          {"sor_multiplier", c.sor_multiplier},
          {"finetune_fraction", c.finetune_fraction},
          {"finetune_epochs", c.finetune_epochs},
          {"adaptive_period", c.adaptive_period},
          {"adaptive_starts", c.adaptive_starts},
          {"adaptive_iterations", c.adaptive_iterations},
          {"adaptive_learning_rate", c.adaptive_learning_rate},
          {"seed", c.seed}};
}

AttackConfig attack_config_from_json(const nlohmann::json& j) {
  AttackConfig c;
  if (j.is_string()) {
    c.kind = attack_from_string(j.get<std::string>());
    return c;
  }
  c.kind = attack_from_string(j.value("kind", std::string("none")));
  c.rotation_range = j.value("rotation_range", c.rotation_range);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.sor_k = j.value("sor_k", c.sor_k);
  c.sor_multiplier = j.value("sor_multiplier", c.sor_multiplier);
  c.finetune_fraction = j.value("finetune_fraction", c.finetune_fraction);
  c.finetune_epochs = j.value("finetune_epochs", c.finetune_epochs);
  c.adaptive_period = j.value("adaptive_period", c.adaptive_period);
  c.adaptive_starts = j.value("adaptive_starts", c.adaptive_starts);
  c.adaptive_iterations = j.value("adaptive_iterations", c.adaptive_iterations);
  c.adaptive_learning_rate = j.value("adaptive_learning_rate", c.adaptive_learning_rate);
  c.seed = j.value("seed", c.seed);
  return c;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json attacks = nlohmann::json::array();
  for (const auto& a : c.attacks) attacks.push_back(to_json(a));
  return {{"format", "cloudmark-experiment"},
          {"version", 1},
          {"seed", c.seed},
          {"output_dir", c.output_dir},
          {"data", to_json(c.data)},
          {"surrogate_net", to_json(c.surrogate_net)},
          {"model_net", to_json(c.model_net)},
          {"train", to_json(c.train)},
          {"watermark", to_json(c.watermark)},
          {"verification", to_json(c.verification)},
          {"attacks", attacks}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("experiment config must be a JSON object");
  ExperimentConfig c = ExperimentConfig::desk_default();
  try {
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir);
    // Sections are patched onto the desk defaults, so partial sections work.
    auto patched = [&j](const char* key, nlohmann::json base) {
      if (j.contains(key)) base.merge_patch(j.at(key));
      return base;
    };
    c.data = shape_spec_from_json(patched("data", to_json(c.data)));
    c.surrogate_net = net_config_from_json(patched("surrogate_net", to_json(c.surrogate_net)));
    c.model_net = net_config_from_json(patched("model_net", to_json(c.model_net)));
    c.train = train_config_from_json(patched("train", to_json(c.train)));
    c.watermark = watermark_config_from_json(patched("watermark", to_json(c.watermark)));
    if (j.contains("verification")) {
      const VerificationConfig v = verification_config_from_json(j.at("verification"));
      c.verification.m = v.m;
      c.verification.tau = v.tau;
      c.verification.alpha = v.alpha;
    }
    if (j.contains("attacks"))
      for (const auto& a : j.at("attacks")) c.attacks.push_back(attack_config_from_json(a));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("experiment config: ") + e.what());
  }
  c.resolve();
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw ValidationError(std::string("experiment config: ") + e.what());
  }
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path, 0, e.what());
  }
  return experiment_config_from_json(j);
}

TriggerSpec independent_trigger(const TriggerSpec& t) {
  TriggerSpec o = t;
  o.center = Vec3::Ones() - t.center;
  o.seed = derive_seed(t.seed, 0x1d7ULL);
  return o;
}

Dataset make_dataset(const ExperimentConfig& c) {
  Dataset d = generate_synthetic_dataset(c.data);
  d.metadata["experiment_seed"] = c.seed;
  return d;
}

NetParams train_surrogate(const ExperimentConfig& c, const Dataset& clean) {
  const auto train = clean.labeled(Split::Train);
  TrainConfig t = c.train;
  t.seed = derive_seed(c.train.seed, 0x5u);
  return train_classifier(c.surrogate_net, train, t).params;
}

WatermarkedDataset make_watermarked(const ExperimentConfig& c, const Dataset& clean, const NetParams& surrogate) {
  return watermark_dataset(clean, Surrogate{c.surrogate_net, surrogate}, c.watermark);
}

NetParams train_model(const ExperimentConfig& c, const Dataset& data, const AttackConfig& attack) {
  const auto train = data.labeled(Split::Train);
  return train_under_attack(c.model_net, train, c.train, attack).params;
}

NetParams apply_finetune(const ExperimentConfig& c, const Dataset& data, const NetParams& model,
                         const AttackConfig& attack) {
  std::vector<LabeledCloud> benign;
  for (const Sample& s : data.samples)
    if (s.split == Split::Train && !s.watermark) benign.push_back({s.cloud, s.label});
  const int epochs = attack.finetune_epochs < 0 ? c.train.epochs : attack.finetune_epochs;
  return finetune(model, c.model_net, benign, attack.finetune_fraction, epochs, c.train, attack.seed);
}

namespace {

VerificationConfig scenario_verification(const ExperimentConfig& c, Scenario scenario) {
  VerificationConfig v = c.verification;
  if (scenario == Scenario::IndependentT) v.trigger = independent_trigger(v.trigger);
  return v;
}

}  // namespace

VerificationReport run_verification(const ExperimentConfig& c, const PosteriorModel& model, const Dataset& data,
                                    Scenario scenario) {
  return verify_ownership(model, data, scenario_verification(c, scenario), scenario);
}

Evaluation evaluate(const ExperimentConfig& c, const PosteriorModel& model, const Dataset& data, Scenario scenario) {
  const VerificationConfig v = scenario_verification(c, scenario);
  const auto test = data.labeled(Split::Test);
  const auto pairs = build_verification_set(data, v);
  Evaluation e;
  e.metrics = evaluate_metrics(model, test, pairs, v.target_class);
  e.report = verify_ownership(model, data, v, scenario);
  return e;
}

const std::vector<std::string>& sweep_parameters() {
  static const std::vector<std::string> names{"lambda", "m", "tau", "eta", "n", "mu", "T", "K", "trigger"};
  return names;
}

namespace {

double parse_number(const std::string& param, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw InvalidArgument("sweep " + param + ": bad value '" + v + "'");
  }
}

int parse_int(const std::string& param, const std::string& v) {
  const double x = parse_number(param, v);
  if (x != static_cast<double>(static_cast<int>(x))) throw InvalidArgument("sweep " + param + ": '" + v + "' is not an integer");
  return static_cast<int>(x);
}

}  // namespace

ExperimentConfig with_sweep_value(const ExperimentConfig& base, const std::string& param, const std::string& value) {
  ExperimentConfig c = base;
  if (param == "lambda") {
    c.watermark.rate = parse_number(param, value);
  } else if (param == "m") {
    c.verification.m = parse_int(param, value);
  } else if (param == "tau") {
    c.verification.tau = parse_number(param, value);
  } else if (param == "eta") {
    c.watermark.point.eta = parse_number(param, value);
  } else if (param == "n") {
    c.watermark.shape.starts = parse_int(param, value);
  } else if (param == "mu") {
    c.watermark.point.momentum = parse_number(param, value);
  } else if (param == "T") {
    c.watermark.shape.iterations = parse_int(param, value);
  } else if (param == "K") {
    c.data.classes = parse_int(param, value);
  } else if (param == "trigger") {
    // "sphere" | "cube" | radius=R | count=N | center=C (all coordinates)
    const auto eq = value.find('=');
    if (eq == std::string::npos) {
      c.watermark.trigger.shape = value;
    } else {
      const std::string key = value.substr(0, eq), v = value.substr(eq + 1);
      if (key == "radius")
        c.watermark.trigger.radius = parse_number(param, v);
      else if (key == "count")
        c.watermark.trigger.count = parse_int(param, v);
      else if (key == "center")
        c.watermark.trigger.center = Vec3::Constant(parse_number(param, v));
      else
        throw InvalidArgument("sweep trigger: unknown key '" + key + "'");
    }
  } else {
    throw InvalidArgument("unknown sweep parameter '" + param + "'");
  }
  // Keep the seeds of `base`; only re-sync the derived fields.
  const VerificationConfig v = c.verification;
  c.surrogate_net.class_count = c.data.classes;
  c.model_net.class_count = c.data.classes;
  c.verification.trigger = c.watermark.trigger;
  c.verification.target_class = c.watermark.target_class;
  c.verification.m = v.m;
  c.verification.tau = v.tau;
  c.validate();
  return c;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const std::string& param,
                                const std::vector<std::string>& values) {
  if (values.empty()) throw InvalidArgument("sweep needs at least one value");
  std::vector<ExperimentConfig> configs;
  for (const auto& v : values) configs.push_back(with_sweep_value(base, param, v));

  std::vector<SweepRow> rows;
  auto row_of = [](const std::string& value, const Evaluation& e) {
    return SweepRow{value, e.metrics.acc, e.metrics.wsr, e.metrics.delta_p, e.report.test.log10_p};
  };
  if (param == "K") {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const ExperimentConfig& c = configs[i];
      const Dataset clean = make_dataset(c);
      const NetParams sur = train_surrogate(c, clean);
      const WatermarkedDataset wm = make_watermarked(c, clean, sur);
      const NetModel model(c.model_net, train_model(c, wm.data));
      rows.push_back(row_of(values[i], evaluate(c, model, wm.data)));
    }
    return rows;
  }
  const Dataset clean = make_dataset(base);
  const NetParams sur = train_surrogate(base, clean);
  if (param == "m" || param == "tau") {
    const WatermarkedDataset wm = make_watermarked(base, clean, sur);
    const NetModel model(base.model_net, train_model(base, wm.data));
    for (std::size_t i = 0; i < values.size(); ++i) rows.push_back(row_of(values[i], evaluate(configs[i], model, wm.data)));
    return rows;
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    const WatermarkedDataset wm = make_watermarked(configs[i], clean, sur);
    const NetModel model(configs[i].model_net, train_model(configs[i], wm.data));
    rows.push_back(row_of(values[i], evaluate(configs[i], model, wm.data)));
  }
  return rows;
}

std::string sweep_csv(const std::string& param, const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << param << ",acc,wsr,delta_p,log10_p\n";
  out << std::setprecision(10);
  for (const auto& r : rows) out << r.value << ',' << r.acc << ',' << r.wsr << ',' << r.delta_p << ',' << r.log10_p << '\n';
  return out.str();
}

std::string file_sha256(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw NumericFailure("SHA-256 failed for " + path);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

}  // namespace cloudmark
