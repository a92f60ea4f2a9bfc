// cloudmark: dataset watermarking and ownership verification from the shell.
//
// Exit codes: 0 success (or verification matched the expectation), 1 error,
// 2 verification decision contradicted the expectation.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cloudmark/error.hpp"
#include "cloudmark/experiment.hpp"

namespace fs = std::filesystem;
using namespace cloudmark;

namespace {

constexpr int kMismatch = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<double> lambda;
  std::optional<double> tau;
  std::optional<int> m;
  std::optional<int> target_class;
  std::string trigger;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "master seed");
  sub->add_option("--out", c.out, "output directory");
  sub->add_option("--lambda", c.lambda, "watermarking rate");
  sub->add_option("--tau", c.tau, "certainty margin");
  sub->add_option("--m", c.m, "verification sample count");
  sub->add_option("--target-class", c.target_class, "target class index");
  sub->add_option("--trigger", c.trigger, "cx,cy,cz,radius,count");
}

ExperimentConfig resolve_config(const Common& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig::desk_default() : load_experiment_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.lambda) c.watermark.rate = *o.lambda;
  if (o.tau) c.verification.tau = *o.tau;
  if (o.m) c.verification.m = *o.m;
  if (o.target_class) c.watermark.target_class = *o.target_class;
  if (!o.trigger.empty()) {
    const TriggerSpec t = TriggerSpec::parse(o.trigger);
    c.watermark.trigger.center = t.center;
    c.watermark.trigger.radius = t.radius;
    c.watermark.trigger.count = t.count;
  }
  c.resolve();
  c.validate();
  return c;
}

fs::path output_dir(const Common& o, const ExperimentConfig& c, const std::string& command) {
  if (!o.out.empty()) return o.out;
  const char* root = std::getenv("CLOUDMARK_OUT");
  return fs::path(root && *root ? root : c.output_dir) / command;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + p.string());
  out << text;
  if (!out) throw ValidationError("write failed for " + p.string());
}

// Hashes every regular file under `p` (or `p` itself), keyed by path.
void hash_into(nlohmann::json& into, const fs::path& p) {
  if (fs::is_regular_file(p)) {
    into[p.generic_string()] = file_sha256(p.string());
    return;
  }
  if (!fs::is_directory(p)) return;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(p))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) into[f.generic_string()] = file_sha256(f.string());
}

void write_repro(const fs::path& dir, const std::string& command, const ExperimentConfig& c,
                 const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
  nlohmann::json in = nlohmann::json::object(), out = nlohmann::json::object();
  for (const auto& p : inputs) hash_into(in, p);
  for (const auto& p : outputs) hash_into(out, p);
  const nlohmann::json doc{{"command", command},
                           {"seed", c.seed},
                           {"config", to_json(c)},
                           {"inputs", in},
                           {"outputs", out}};
  write_text(dir / "repro.json", doc.dump(2) + "\n");
}

NetModel load_model(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  return NetModel(std::move(ck.config), std::move(ck.params));
}

std::vector<std::string> split_values(const std::string& param, const std::string& text) {
  // Trigger variants may contain commas of their own; they are separated by ';'.
  const char sep = param == "trigger" ? ';' : ',';
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, sep))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

// Reads a sweep CSV into (header, rows).
std::pair<std::vector<std::string>, std::vector<std::vector<std::string>>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
  };
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path, 1, "empty CSV");
  const auto header = split(line);
  if (header.size() != 5) throw ParseError(path, 1, "expected 5 columns (value,acc,wsr,delta_p,log10_p)");
  std::vector<std::vector<std::string>> rows;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != header.size()) throw ParseError(path, n, "expected " + std::to_string(header.size()) + " cells");
    rows.push_back(std::move(cells));
  }
  return {header, rows};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Point-cloud dataset watermarking and ownership verification"};
  app.require_subcommand(1);

  Common common;
  std::string data_dir, surrogate_path, model_path, scenario_name = "malicious", expect, attack_name = "none";
  std::string param, values_text;
  std::vector<std::string> csv_inputs;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  auto* tsur = app.add_subcommand("train-surrogate", "train the owner's surrogate on the clean train split");
  auto* wmk = app.add_subcommand("watermark", "build the watermarked release");
  auto* trn = app.add_subcommand("train", "train a model on a dataset's train split");
  auto* ver = app.add_subcommand("verify", "run ownership verification against a model");
  auto* atk = app.add_subcommand("attack", "apply a removal attack, then verify");
  auto* swp = app.add_subcommand("sweep", "run the pipeline over one parameter");
  auto* rep = app.add_subcommand("report", "aggregate sweep CSVs into one table");
  for (auto* s : {gen, tsur, wmk, trn, ver, atk, swp, rep}) add_common(s, common);

  tsur->add_option("--data", data_dir, "clean dataset directory")->required()->check(CLI::ExistingDirectory);
  wmk->add_option("--data", data_dir, "clean dataset directory")->required()->check(CLI::ExistingDirectory);
  wmk->add_option("--surrogate", surrogate_path, "surrogate checkpoint")->required()->check(CLI::ExistingFile);
  trn->add_option("--data", data_dir, "dataset directory")->required()->check(CLI::ExistingDirectory);
  trn->add_option("--attack", attack_name, "data-side attack during training");
  ver->add_option("--model", model_path, "model checkpoint")->required()->check(CLI::ExistingFile);
  ver->add_option("--data", data_dir, "dataset directory (verify split)")->required()->check(CLI::ExistingDirectory);
  ver->add_option("--scenario", scenario_name, "in-t, in-m or malicious");
  ver->add_option("--expect", expect, "malicious (expect reject) or independent (expect retain)");
  atk->add_option("--model", model_path, "model checkpoint (required for finetune)")->check(CLI::ExistingFile);
  atk->add_option("--data", data_dir, "watermarked dataset directory")->required()->check(CLI::ExistingDirectory);
  atk->add_option("--attack", attack_name, "rotation-aug, noise-aug, sor, finetune or adaptive")->required();
  swp->add_option("--param", param, "lambda, m, tau, eta, n, mu, T, K or trigger")->required();
  swp->add_option("--values", values_text, "comma-separated values (';' for trigger variants)")->required();
  rep->add_option("--inputs", csv_inputs, "sweep CSV files")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    const ExperimentConfig cfg = resolve_config(common);
    const std::string command = app.get_subcommands().front()->get_name();
    const fs::path out = output_dir(common, cfg, command);
    fs::create_directories(out);

    if (*gen) {
      const Dataset d = make_dataset(cfg);
      save_dataset(d, (out / "data").string());
      write_text(out / "config.json", to_json(cfg).dump(2) + "\n");
      write_repro(out, command, cfg, {}, {out / "data", out / "config.json"});
      std::cout << "wrote " << d.samples.size() << " samples to " << (out / "data").string() << "\n";
    } else if (*tsur) {
      const Dataset d = load_dataset(data_dir);
      const NetParams p = train_surrogate(cfg, d);
      save_checkpoint((out / "surrogate.json").string(), cfg.surrogate_net, p);
      const NetModel m(cfg.surrogate_net, p);
      write_repro(out, command, cfg, {data_dir}, {out / "surrogate.json"});
      std::cout << "surrogate test accuracy " << 100.0 * accuracy(m, d.labeled(Split::Test)) << "%\n";
    } else if (*wmk) {
      const Dataset d = load_dataset(data_dir);
      const Checkpoint sur = load_checkpoint(surrogate_path);
      ExperimentConfig c = cfg;
      c.surrogate_net = sur.config;
      const WatermarkedDataset wm = make_watermarked(c, d, sur.params);
      save_dataset(wm.data, (out / "data").string());
      write_repro(out, command, c, {data_dir, surrogate_path}, {out / "data"});
      std::cout << "watermarked " << wm.modified.size() << " of " << (wm.modified.size() + wm.benign.size())
                << " training samples, IoM " << iom_metric(wm) << "%\n";
    } else if (*trn) {
      const Dataset d = load_dataset(data_dir);
      AttackConfig a = attack_config_from_json(attack_name);
      if (a.kind == AttackKind::Finetune) throw InvalidArgument("finetune needs a trained model: use `attack`");
      a.seed = cfg.seed;
      const NetParams p = train_model(cfg, d, a);
      save_checkpoint((out / "model.json").string(), cfg.model_net, p);
      const NetModel m(cfg.model_net, p);
      write_repro(out, command, cfg, {data_dir}, {out / "model.json"});
      std::cout << "test accuracy " << 100.0 * accuracy(m, d.labeled(Split::Test)) << "%\n";
    } else if (*ver) {
      const Scenario scenario = scenario_from_string(scenario_name);
      bool expect_reject = scenario == Scenario::Malicious;
      if (expect == "malicious")
        expect_reject = true;
      else if (expect == "independent" || expect == "in-t" || expect == "in-m")
        expect_reject = false;
      else if (!expect.empty())
        throw InvalidArgument("--expect must be malicious or independent");
      const Dataset d = load_dataset(data_dir);
      const NetModel model = load_model(model_path);
      ExperimentConfig c = cfg;
      c.model_net = model.config();
      const VerificationReport r = run_verification(c, model, d, scenario);
      const std::string doc = to_json(r).dump(2) + "\n";
      write_text(out / "report.json", doc);
      write_repro(out, command, c, {data_dir, model_path}, {out / "report.json"});
      std::cout << doc;
      return r.reject_h0 == expect_reject ? 0 : kMismatch;
    } else if (*atk) {
      AttackConfig a = attack_config_from_json(attack_name);
      a.seed = cfg.seed;
      for (const auto& listed : cfg.attacks)
        if (listed.kind == a.kind) a = listed;
      const Dataset d = load_dataset(data_dir);
      NetParams p;
      ExperimentConfig c = cfg;
      std::vector<fs::path> inputs{data_dir};
      if (a.kind == AttackKind::Finetune) {
        if (model_path.empty()) throw InvalidArgument("finetune needs --model");
        const Checkpoint ck = load_checkpoint(model_path);
        c.model_net = ck.config;
        p = apply_finetune(c, d, ck.params, a);
        inputs.push_back(model_path);
      } else {
        p = train_model(c, d, a);
      }
      save_checkpoint((out / "model.json").string(), c.model_net, p);
      const NetModel model(c.model_net, p);
      const Evaluation e = evaluate(c, model, d, Scenario::Malicious);
      nlohmann::json doc = to_json(e.report);
      doc["attack"] = to_json(a);
      doc["acc"] = e.metrics.acc;
      write_text(out / "report.json", doc.dump(2) + "\n");
      write_repro(out, command, c, inputs, {out / "model.json", out / "report.json"});
      std::cout << to_string(a.kind) << ": ACC " << e.metrics.acc << "% WSR " << e.metrics.wsr << "% dP "
                << e.metrics.delta_p << " p " << e.report.p_value << "\n";
    } else if (*swp) {
      const auto values = split_values(param, values_text);
      const auto rows = run_sweep(cfg, param, values);
      const fs::path csv = out / ("sweep_" + param + ".csv");
      write_text(csv, sweep_csv(param, rows));
      write_repro(out, command, cfg, {}, {csv});
      std::cout << sweep_csv(param, rows);
    } else if (*rep) {
      std::ostringstream table;
      table << "source,param,value,acc,wsr,delta_p,log10_p\n";
      std::vector<fs::path> inputs;
      for (const auto& path : csv_inputs) {
        const auto [header, rows] = read_csv(path);
        for (const auto& r : rows)
          table << fs::path(path).filename().string() << ',' << header[0] << ',' << r[0] << ',' << r[1] << ',' << r[2]
                << ',' << r[3] << ',' << r[4] << '\n';
        inputs.emplace_back(path);
      }
      write_text(out / "summary.csv", table.str());
      write_repro(out, command, cfg, inputs, {out / "summary.csv"});
      std::cout << table.str();
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "error: " << msg << "\n";
    return 1;
  }
  return 0;
}
