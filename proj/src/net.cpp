#include "cloudmark/net.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "cloudmark/error.hpp"
#include "cloudmark/random.hpp"
#include "json.hpp"

namespace cloudmark {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

int NetConfig::feature_dim() const {
  if (!head_widths.empty()) return head_widths.back();
  return per_point_widths.empty() ? 3 : per_point_widths.back();
}

void NetConfig::validate() const {
  if (per_point_widths.empty()) throw InvalidArgument("NetConfig: need at least one per-point layer");
  for (int w : per_point_widths)
    if (w < 1) throw InvalidArgument("NetConfig: per-point widths must be >= 1");
  for (int w : head_widths)
    if (w < 1) throw InvalidArgument("NetConfig: head widths must be >= 1");
  if (class_count < 2) throw InvalidArgument("NetConfig: class_count must be >= 2");
}

NetConfig NetConfig::mini(int classes, std::uint64_t seed) { return {{64, 128}, {64}, classes, seed}; }
NetConfig NetConfig::wide(int classes, std::uint64_t seed) { return {{96, 192}, {64}, classes, seed}; }
NetConfig NetConfig::deep(int classes, std::uint64_t seed) { return {{64, 128}, {128, 64}, classes, seed}; }

namespace {

template <typename F>
void for_each_layer(const NetParams& p, F&& f) {
  for (std::size_t i = 0; i < p.point_layers.size(); ++i) f("point." + std::to_string(i), p.point_layers[i]);
  for (std::size_t i = 0; i < p.head_layers.size(); ++i) f("head." + std::to_string(i), p.head_layers[i]);
}

template <typename F>
void for_each_layer_mut(NetParams& p, F&& f) {
  for (auto& l : p.point_layers) f(l);
  for (auto& l : p.head_layers) f(l);
}

}  // namespace

std::size_t NetParams::parameter_count() const {
  std::size_t n = 0;
  for_each_layer(*this, [&](const std::string&, const DenseLayer& l) {
    n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  });
  return n;
}

Eigen::VectorXd NetParams::flatten() const {
  VectorXd flat(static_cast<Index>(parameter_count()));
  Index at = 0;
  for_each_layer(*this, [&](const std::string&, const DenseLayer& l) {
    flat.segment(at, l.weight.size()) = l.weight.reshaped();
    at += l.weight.size();
    flat.segment(at, l.bias.size()) = l.bias;
    at += l.bias.size();
  });
  return flat;
}

void NetParams::assign_flat(const Eigen::VectorXd& flat) {
  if (flat.size() != static_cast<Index>(parameter_count()))
    throw InvalidArgument("assign_flat: size mismatch");
  Index at = 0;
  for_each_layer_mut(*this, [&](DenseLayer& l) {
    l.weight.reshaped() = flat.segment(at, l.weight.size());
    at += l.weight.size();
    l.bias = flat.segment(at, l.bias.size());
    at += l.bias.size();
  });
}

NetParams NetParams::zeros_like() const {
  NetParams z = *this;
  for_each_layer_mut(z, [](DenseLayer& l) {
    l.weight.setZero();
    l.bias.setZero();
  });
  return z;
}

std::vector<std::string> NetParams::tensor_names() const {
  std::vector<std::string> names;
  for_each_layer(*this, [&](const std::string& prefix, const DenseLayer&) {
    names.push_back(prefix + ".weight");
    names.push_back(prefix + ".bias");
  });
  return names;
}

bool NetParams::operator==(const NetParams& other) const {
  auto same = [](const std::vector<DenseLayer>& a, const std::vector<DenseLayer>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].weight.rows() != b[i].weight.rows() || a[i].weight.cols() != b[i].weight.cols()) return false;
      if (a[i].weight != b[i].weight || a[i].bias != b[i].bias) return false;
    }
    return true;
  };
  return same(point_layers, other.point_layers) && same(head_layers, other.head_layers);
}

NetParams init_params(const NetConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  auto make = [&](int in, int out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    DenseLayer l{MatrixXd(out, in), VectorXd(out)};
    // Fill row-major so the draw order is independent of storage layout.
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) l.weight(r, c) = u(rng);
    for (int r = 0; r < out; ++r) l.bias(r) = u(rng);
    return l;
  };
  NetParams p;
  int in = 3;
  for (int w : cfg.per_point_widths) {
    p.point_layers.push_back(make(in, w));
    in = w;
  }
  for (int w : cfg.head_widths) {
    p.head_layers.push_back(make(in, w));
    in = w;
  }
  p.head_layers.push_back(make(in, cfg.class_count));
  return p;
}

namespace {

void check_finite(const auto& m, const std::string& layer) {
  if (!m.allFinite()) throw NumericFailure("non-finite activation in layer " + layer);
}

}  // namespace

ForwardResult forward(const NetParams& params, const NetConfig& cfg, const PointCloud& x) {
  if (params.point_layers.size() != cfg.per_point_widths.size() ||
      params.head_layers.size() != cfg.head_widths.size() + 1)
    throw InvalidArgument("forward: params do not match config");
  ForwardResult r;
  ForwardTrace& t = r.trace;
  t.point_act.emplace_back(x.points());
  for (std::size_t l = 0; l < params.point_layers.size(); ++l) {
    const DenseLayer& layer = params.point_layers[l];
    MatrixXd z = t.point_act.back() * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    check_finite(z, "point." + std::to_string(l));
    t.point_act.emplace_back(z.cwiseMax(0.0));
    t.point_pre.push_back(std::move(z));
  }
  const MatrixXd& last = t.point_act.back();
  VectorXd pooled(last.cols());
  t.argmax.resize(static_cast<std::size_t>(last.cols()));
  for (Index c = 0; c < last.cols(); ++c) {
    Index best = 0;
    // maxCoeff returns the first maximal index.
    pooled(c) = last.col(c).maxCoeff(&best);
    t.argmax[static_cast<std::size_t>(c)] = best;
  }
  t.head_in.push_back(std::move(pooled));
  for (std::size_t l = 0; l < params.head_layers.size(); ++l) {
    const DenseLayer& layer = params.head_layers[l];
    VectorXd z = layer.weight * t.head_in.back() + layer.bias;
    check_finite(z, "head." + std::to_string(l));
    if (l + 1 < params.head_layers.size()) t.head_in.push_back(z.cwiseMax(0.0));
    t.head_pre.push_back(std::move(z));
  }
  r.logits = t.head_pre.back();
  r.features = t.head_in.back();
  return r;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  VectorXd e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

Eigen::VectorXd predict_proba(const NetParams& params, const NetConfig& cfg, const PointCloud& x) {
  return softmax(forward(params, cfg, x).logits);
}

void backward(const NetParams& params, const ForwardTrace& trace, const Eigen::VectorXd* d_logits,
              const Eigen::VectorXd* d_features, NetParams* d_params, PointMatrix* d_input) {
  const std::size_t n_head = params.head_layers.size();
  VectorXd delta = d_logits ? *d_logits : VectorXd::Zero(params.head_layers.back().bias.size());
  VectorXd d_pooled;
  for (std::size_t j = n_head; j-- > 0;) {
    const DenseLayer& layer = params.head_layers[j];
    if (d_params) {
      DenseLayer& g = d_params->head_layers[j];
      g.weight.noalias() += delta * trace.head_in[j].transpose();
      g.bias += delta;
    }
    VectorXd d_in = layer.weight.transpose() * delta;
    if (j + 1 == n_head && d_features) d_in += *d_features;
    if (j == 0) {
      d_pooled = std::move(d_in);
    } else {
      delta = d_in.cwiseProduct((trace.head_pre[j - 1].array() > 0.0).cast<double>().matrix());
    }
  }

  // Only argmax rows receive gradient; work on that compact row set.
  std::vector<Index> rows(trace.argmax.begin(), trace.argmax.end());
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  std::vector<Index> slot_of_channel(trace.argmax.size());
  for (std::size_t c = 0; c < trace.argmax.size(); ++c)
    slot_of_channel[c] = std::lower_bound(rows.begin(), rows.end(), trace.argmax[c]) - rows.begin();

  const Index nr = static_cast<Index>(rows.size());
  MatrixXd d_act = MatrixXd::Zero(nr, d_pooled.size());
  for (std::size_t c = 0; c < trace.argmax.size(); ++c)
    d_act(slot_of_channel[c], static_cast<Index>(c)) = d_pooled(static_cast<Index>(c));

  for (std::size_t l = params.point_layers.size(); l-- > 0;) {
    const MatrixXd& pre = trace.point_pre[l];
    const MatrixXd& act_in = trace.point_act[l];
    MatrixXd d_pre(nr, pre.cols());
    MatrixXd in_rows(nr, act_in.cols());
    for (Index i = 0; i < nr; ++i) {
      const Index r = rows[static_cast<std::size_t>(i)];
      d_pre.row(i) = d_act.row(i).cwiseProduct((pre.row(r).array() > 0.0).cast<double>().matrix());
      in_rows.row(i) = act_in.row(r);
    }
    if (d_params) {
      DenseLayer& g = d_params->point_layers[l];
      g.weight.noalias() += d_pre.transpose() * in_rows;
      g.bias += d_pre.colwise().sum().transpose();
    }
    if (l > 0 || d_input) d_act = d_pre * params.point_layers[l].weight;
  }
  if (d_input) {
    const Index m = trace.point_act.front().rows();
    d_input->setZero(m, 3);
    for (Index i = 0; i < nr; ++i) d_input->row(rows[static_cast<std::size_t>(i)]) = d_act.row(i);
  }
}

namespace {

void check_label(int label, const NetConfig& cfg) {
  if (label < 0 || label >= cfg.class_count)
    throw InvalidArgument("label " + std::to_string(label) + " outside [0," + std::to_string(cfg.class_count) +
                          ")");
}

// Accumulates the unscaled cross-entropy gradient of one sample; returns its loss.
double accumulate_ce(const NetParams& params, const NetConfig& cfg, const LabeledCloud& s, NetParams& grad,
                     bool* correct) {
  check_label(s.label, cfg);
  ForwardResult f = forward(params, cfg, s.cloud);
  VectorXd p = softmax(f.logits);
  if (correct) {
    Index best = 0;
    f.logits.maxCoeff(&best);
    *correct = best == s.label;
  }
  const double loss = -std::log(std::max(p(s.label), 1e-300));
  p(s.label) -= 1.0;
  backward(params, f.trace, &p, nullptr, &grad, nullptr);
  return loss;
}

}  // namespace

NetParams grad_params(const NetParams& params, const NetConfig& cfg, std::span<const LabeledCloud> batch) {
  if (batch.empty()) throw InvalidArgument("grad_params: empty batch");
  NetParams grad = params.zeros_like();
  for (const auto& s : batch) accumulate_ce(params, cfg, s, grad, nullptr);
  const double scale = 1.0 / static_cast<double>(batch.size());
  grad.assign_flat(grad.flatten() * scale);
  return grad;
}

double mean_cross_entropy(const NetParams& params, const NetConfig& cfg, std::span<const LabeledCloud> batch) {
  if (batch.empty()) throw InvalidArgument("mean_cross_entropy: empty batch");
  double total = 0.0;
  for (const auto& s : batch) {
    check_label(s.label, cfg);
    const VectorXd logits = forward(params, cfg, s.cloud).logits;
    const double mx = logits.maxCoeff();
    const double lse = mx + std::log((logits.array() - mx).exp().sum());
    total += lse - logits(s.label);
  }
  return total / static_cast<double>(batch.size());
}

InputGradient grad_input(const NetParams& params, const NetConfig& cfg, const FeatureLossFn& loss_tail,
                         const PointCloud& x) {
  ForwardResult f = forward(params, cfg, x);
  FeatureLoss tail = loss_tail(f.features);
  if (tail.grad.size() != f.features.size()) throw InvalidArgument("grad_input: loss gradient has wrong size");
  InputGradient out;
  out.value = tail.value;
  out.features = f.features;
  backward(params, f.trace, nullptr, &tail.grad, nullptr, &out.grad);
  return out;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw InvalidArgument("TrainConfig: epochs must be >= 0");
  if (batch_size < 1) throw InvalidArgument("TrainConfig: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw InvalidArgument("TrainConfig: learning_rate must be > 0");
}

TrainResult train_classifier(const NetConfig& cfg, std::span<const LabeledCloud> train, const TrainConfig& tcfg,
                             const TrainHooks& hooks, const NetParams* init) {
  cfg.validate();
  tcfg.validate();
  if (train.empty()) throw InvalidArgument("train_classifier: empty training set");
  for (const auto& s : train) check_label(s.label, cfg);

  TrainResult result;
  result.params = init ? *init : init_params(cfg);
  std::vector<LabeledCloud> working(train.begin(), train.end());
  VectorXd theta = result.params.flatten();
  VectorXd m1 = VectorXd::Zero(theta.size());
  VectorXd m2 = VectorXd::Zero(theta.size());
  long step = 0;

  std::vector<std::size_t> order(working.size());
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    if (hooks.before_epoch) hooks.before_epoch(epoch, result.params, working);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(tcfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tcfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tcfg.batch_size));
      NetParams grad = result.params.zeros_like();
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        bool ok = false;
        if (hooks.augment) {
          const std::uint64_t s = derive_seed(derive_seed(tcfg.seed ^ 0xA5A5A5A5ULL, static_cast<std::uint64_t>(epoch)), idx);
          LabeledCloud aug{hooks.augment(working[idx].cloud, s), working[idx].label};
          loss_sum += accumulate_ce(result.params, cfg, aug, grad, &ok);
        } else {
          loss_sum += accumulate_ce(result.params, cfg, working[idx], grad, &ok);
        }
        correct += ok ? 1 : 0;
      }
      if (!std::isfinite(loss_sum)) throw NumericFailure("training diverged (loss is not finite) in epoch " +
                                                         std::to_string(epoch));
      const VectorXd g = grad.flatten() / static_cast<double>(end - start);
      ++step;
      m1 = tcfg.beta1 * m1 + (1.0 - tcfg.beta1) * g;
      m2 = tcfg.beta2 * m2 + (1.0 - tcfg.beta2) * g.cwiseAbs2();
      const double c1 = 1.0 - std::pow(tcfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(tcfg.beta2, static_cast<double>(step));
      theta.array() -= tcfg.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + tcfg.epsilon);
      result.params.assign_flat(theta);
    }
    result.log.push_back({epoch, loss_sum / static_cast<double>(order.size()),
                          static_cast<double>(correct) / static_cast<double>(order.size())});
  }
  return result;
}

NetModel::NetModel(NetConfig cfg, NetParams params) : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
}

Eigen::VectorXd NetModel::predict_proba(const PointCloud& x) const { return cloudmark::predict_proba(params_, cfg_, x); }

double accuracy(const PosteriorModel& model, std::span<const LabeledCloud> data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& s : data) {
    Index best = 0;
    model.predict_proba(s.cloud).maxCoeff(&best);
    correct += best == s.label ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

constexpr int kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const std::string& path, const NetConfig& cfg, const NetParams& params) {
  nlohmann::json doc;
  doc["format"] = "cloudmark-checkpoint";
  doc["version"] = kCheckpointVersion;
  doc["config"] = {{"per_point_widths", cfg.per_point_widths},
                   {"head_widths", cfg.head_widths},
                   {"class_count", cfg.class_count},
                   {"seed", cfg.seed}};
  nlohmann::json tensors = nlohmann::json::array();
  for_each_layer(params, [&](const std::string& prefix, const DenseLayer& l) {
    std::vector<double> w(static_cast<std::size_t>(l.weight.size()));
    // Row-major on disk.
    for (Index r = 0; r < l.weight.rows(); ++r)
      for (Index c = 0; c < l.weight.cols(); ++c) w[static_cast<std::size_t>(r * l.weight.cols() + c)] = l.weight(r, c);
    tensors.push_back({{"name", prefix + ".weight"}, {"rows", l.weight.rows()}, {"cols", l.weight.cols()}, {"data", w}});
    std::vector<double> b(l.bias.data(), l.bias.data() + l.bias.size());
    tensors.push_back({{"name", prefix + ".bias"}, {"rows", l.bias.size()}, {"cols", 1}, {"data", b}});
  });
  doc["tensors"] = std::move(tensors);
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write checkpoint " + path);
  out << doc.dump(1) << '\n';
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot read checkpoint " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path, 0, e.what());
  }
  if (doc.value("format", "") != "cloudmark-checkpoint") throw ValidationError(path + ": not a cloudmark checkpoint");
  if (doc.value("version", 0) != kCheckpointVersion) throw ValidationError(path + ": unsupported checkpoint version");
  Checkpoint ck;
  const auto& c = doc.at("config");
  ck.config.per_point_widths = c.at("per_point_widths").get<std::vector<int>>();
  ck.config.head_widths = c.at("head_widths").get<std::vector<int>>();
  ck.config.class_count = c.at("class_count").get<int>();
  ck.config.seed = c.at("seed").get<std::uint64_t>();
  ck.config.validate();
  ck.params = init_params(ck.config);
  const auto names = ck.params.tensor_names();
  const auto& tensors = doc.at("tensors");
  if (tensors.size() != names.size()) throw ValidationError(path + ": tensor count does not match config");
  std::size_t t = 0;
  for_each_layer_mut(ck.params, [&](DenseLayer& l) {
    const auto& wj = tensors.at(t);
    const auto& bj = tensors.at(t + 1);
    if (wj.at("name") != names[t] || bj.at("name") != names[t + 1])
      throw ValidationError(path + ": unexpected tensor " + wj.at("name").get<std::string>());
    const auto w = wj.at("data").get<std::vector<double>>();
    const auto b = bj.at("data").get<std::vector<double>>();
    if (w.size() != static_cast<std::size_t>(l.weight.size()) || b.size() != static_cast<std::size_t>(l.bias.size()))
      throw ValidationError(path + ": tensor " + names[t] + " has the wrong size");
    for (Index r = 0; r < l.weight.rows(); ++r)
      for (Index col = 0; col < l.weight.cols(); ++col) l.weight(r, col) = w[static_cast<std::size_t>(r * l.weight.cols() + col)];
    for (Index r = 0; r < l.bias.size(); ++r) l.bias(r) = b[static_cast<std::size_t>(r)];
    t += 2;
  });
  return ck;
}

}  // namespace cloudmark
