// smid: data generation, bound estimation, identification and reporting.
//
//   smid all --config tools/benchmark.json --out run1
//   smid estimate --out run1 --set dbar_grid_points=20

#include <CLI11.hpp>

#include <iostream>

#include "smid/pipeline.hpp"

namespace {

constexpr int kInvalid = 2;
constexpr int kNumerical = 3;

// value is parsed as JSON, falling back to a plain string
void apply_override(smid::ExperimentConfig& cfg, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw smid::InvalidInput("--set expects key=value, got '" + kv + "'");
  const std::string key = kv.substr(0, eq), text = kv.substr(eq + 1);
  smid::Json value;
  try {
    value = smid::Json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  smid::apply_json(cfg, smid::Json{{key, value}});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Set-membership multi-step identification pipeline"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  std::string config_path, out_dir;
  std::vector<std::string> overrides;
  int threads = -1;
  bool quiet = false;
  app.add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "override a configuration key, key=value (repeatable)");
  app.add_option("--out", out_dir, "output directory (overrides output_dir)");
  app.add_option("--threads", threads, "worker threads, 0 = hardware concurrency");
  app.add_flag("-q,--quiet", quiet, "no progress messages");
  const std::vector<std::pair<std::string, std::string>> commands{
      {"generate", "write the identification and validation records"},
      {"estimate", "estimate dbar, pbar, the order and the decay bound"},
      {"identify", "run PEM, SEM, Method I, Method II and the multi-step LPs"},
      {"report", "evaluate on the validation record and write the tables"},
      {"all", "generate, estimate, identify and report"},
      {"config", "print the effective configuration"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);
  app.get_subcommand("config")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kInvalid;
  }

  smid::ExperimentConfig cfg;
  try {
    if (!config_path.empty()) {
      smid::Json j;
      try {
        j = smid::Json::parse(smid::read_file(config_path));
      } catch (const nlohmann::json::exception& e) {
        throw smid::InvalidInput(config_path + ": " + e.what());
      }
      smid::apply_json(cfg, j);
    }
    for (const auto& kv : overrides) apply_override(cfg, kv);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (threads >= 0) cfg.threads = threads;
    cfg.validate();
  } catch (const smid::InvalidInput& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return kInvalid;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  const smid::Log log = quiet ? smid::Log{} : smid::stderr_log();
  try {
    if (cmd == "config") {
      std::cout << smid::to_json(cfg).dump(2) << "\n";
    } else if (cmd == "generate") {
      smid::stage::generate(cfg);
    } else if (cmd == "estimate") {
      const auto est = smid::stage::estimate(cfg, log);
      std::cout << "dbar " << est.dbar << "  pbar " << est.pbar << "  order " << est.order << "  rho " << est.fit.rho
                << "  Lz " << est.Lz_hat << "  Lu " << est.Lu_hat << "\n";
    } else if (cmd == "identify") {
      const auto rep = smid::stage::identify(cfg, log);
      for (const auto& m : rep.methods)
        std::cout << m.method << ": tau_pbar " << m.bounds.tau_hat.back() << "\n";
    } else {
      const auto rep = cmd == "all" ? smid::stage::all(cfg, log) : smid::stage::report(cfg);
      std::cout << smid::read_file(smid::stage::path(cfg, "table.csv"));
      for (const auto& m : rep.methods) {
        if (!m.diag.note.empty()) std::cerr << m.method << ": " << m.diag.note << "\n";
      }
    }
  } catch (const smid::InvalidInput& e) {
    std::cerr << cmd << ": " << e.what() << "\n";
    return kInvalid;
  } catch (const smid::NumericalError& e) {
    std::cerr << cmd << ": numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << cmd << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
