// chyll command-line front end: merges a JSON config file with flags and runs
// the command through the C API. The exit code is the API status.

#include "chyll/chyll.h"

#include "CLI11.hpp"
#include "json.hpp"

#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using nlohmann::json;

namespace {

struct Overrides {
  std::string config_file;
  std::vector<std::string> sets;  // key=json
  json flags = json::object();
  std::map<std::string, std::function<void()>> deferred;
};

template <typename T>
void flag(CLI::App* app, Overrides& o, const std::string& name, const std::string& key, const std::string& help) {
  auto value = std::make_shared<T>();
  auto* opt = app->add_option(name, *value, help);
  o.deferred[key] = [&o, value, opt, key] {
    if (opt->count() > 0) o.flags[key] = *value;
  };
}

void switch_flag(CLI::App* app, Overrides& o, const std::string& name, const std::string& key, bool value,
                 const std::string& help) {
  auto* opt = app->add_flag(name, help);
  o.deferred[key + (value ? "+" : "-")] = [&o, opt, key, value] {
    if (opt->count() > 0) o.flags[key] = value;
  };
}

// File section, then --set pairs, then dedicated flags.
json merge(const std::string& command, Overrides& o) {
  json cfg = json::object();
  if (!o.config_file.empty()) {
    std::ifstream in(o.config_file);
    if (!in) throw std::runtime_error("cannot open config file '" + o.config_file + "'");
    json file = json::parse(in);
    if (!file.is_object()) throw std::runtime_error("config file must hold a JSON object");
    cfg = file.contains(command) ? file.at(command) : file;
    if (!cfg.is_object()) throw std::runtime_error("config section '" + command + "' must be an object");
  }
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw std::runtime_error("--set expects key=value, got '" + s + "'");
    const std::string key = s.substr(0, eq);
    const std::string text = s.substr(eq + 1);
    json v = json::parse(text, nullptr, false);
    cfg[key] = v.is_discarded() ? json(text) : v;
  }
  for (auto& [key, apply] : o.deferred) apply();
  for (const auto& [k, v] : o.flags.items()) cfg[k] = v;
  return cfg;
}

void log_line(const char* line, void*) { std::cerr << line << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chyll: continuous latent models of hybrid systems"};
  app.require_subcommand(1);
  app.fallthrough();
  std::map<std::string, Overrides> overrides;
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  auto common = [&](CLI::App* sub) -> Overrides& {
    Overrides& o = overrides[sub->get_name()];
    sub->add_option("-c,--config", o.config_file, "JSON config file (whole file or its section for this command)");
    sub->add_option("--set", o.sets, "Override a config key: key=<json value>");
    return o;
  };

  auto* gen = app.add_subcommand("generate", "Simulate a hybrid system and write a dataset");
  {
    auto& o = common(gen);
    flag<std::string>(gen, o, "--system", "system", "torus | klein | bouncing_ball | juggler");
    flag<int>(gen, o, "--n", "n", "Number of trajectories");
    flag<double>(gen, o, "--dt", "dt", "Sample period (s)");
    flag<int>(gen, o, "--steps", "steps", "Samples per trajectory after x0");
    flag<std::uint64_t>(gen, o, "--seed", "seed", "RNG seed");
    flag<double>(gen, o, "--train-fraction", "train_fraction", "Training share of the split");
    flag<std::string>(gen, o, "-o,--out", "out", "Dataset file");
  }

  auto* train = app.add_subcommand("train", "Train a latent model (or the neural ODE baseline)");
  {
    auto& o = common(train);
    flag<std::string>(train, o, "--dataset", "dataset", "Dataset file");
    flag<std::string>(train, o, "-o,--out", "out", "Bundle directory");
    flag<std::string>(train, o, "--baseline", "baseline", "none | node");
    flag<std::uint64_t>(train, o, "--seed", "seed", "RNG seed");
  }

  auto* eval = app.add_subcommand("eval", "Long-horizon prediction error on the test split");
  {
    auto& o = common(eval);
    flag<std::string>(eval, o, "--model", "model", "Bundle directory");
    switch_flag(eval, o, "--oracle", "oracle", true, "Use the ground-truth simulator as the predictor");
    flag<std::string>(eval, o, "--dataset", "dataset", "Dataset file");
    flag<std::string>(eval, o, "-o,--out", "out", "Output directory");
    flag<double>(eval, o, "--horizon-mult", "horizon_mult", "Horizon as a multiple of the training horizon");
    flag<std::string>(eval, o, "--decode-mode", "decode_mode", "decoder | lm (lm also reports decoder MSE)");
    flag<std::string>(eval, o, "--compare", "compare", "Second bundle evaluated on the same split");
    flag<int>(eval, o, "--max-trajectories", "max_trajectories", "Limit on test trajectories (0 = all)");
  }

  auto* tda = app.add_subcommand("tda", "Persistent homology of a latent, dataset or analytic point cloud");
  {
    auto& o = common(tda);
    flag<std::string>(tda, o, "--model", "model", "Bundle directory");
    flag<std::string>(tda, o, "--dataset", "dataset", "Dataset file");
    flag<std::string>(tda, o, "--analytic", "analytic", "torus | circle");
    flag<std::string>(tda, o, "-o,--out", "out", "Output directory");
    flag<std::string>(tda, o, "--mesh", "mesh", "State mesh for model sources, e.g. 40x40");
    flag<std::vector<int>>(tda, o, "--field", "fields", "Coefficient field prime(s)");
    flag<double>(tda, o, "--lifetime-ratio", "lifetime_ratio", "Bar lifetime / median noise lifetime threshold");
    flag<int>(tda, o, "--max-points", "max_points", "Farthest-point subsample size");
    flag<int>(tda, o, "--points", "points", "Analytic sample size");
    flag<std::uint64_t>(tda, o, "--seed", "seed", "RNG seed for analytic samples");
  }

  auto* ctl = app.add_subcommand("control", "MPPI juggling episodes on the plant");
  {
    auto& o = common(ctl);
    flag<std::string>(ctl, o, "--model", "model", "Juggler bundle directory");
    switch_flag(ctl, o, "--oracle", "oracle", true, "Plan with the ground-truth simulator");
    flag<int>(ctl, o, "--trials", "trials", "Number of trials");
    flag<std::uint64_t>(ctl, o, "--seed", "seed", "First trial seed");
    flag<double>(ctl, o, "--duration", "duration", "Episode length (s)");
    switch_flag(ctl, o, "--no-zero-baseline", "zero_baseline", false, "Skip the zero-action comparison");
    flag<std::string>(ctl, o, "-o,--out", "out", "Output directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : CHYLL_ERR_CONFIG;
  }

  CLI::App* chosen = app.get_subcommands().front();
  const std::string command = chosen->get_name();
  json cfg;
  try {
    cfg = merge(command, overrides[command]);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return CHYLL_ERR_CONFIG;
  }

  char* result = nullptr;
  const chyll_status st =
      chyll_run_command(command.c_str(), cfg.dump().c_str(), quiet ? nullptr : log_line, nullptr, &result);
  if (st != CHYLL_OK) {
    std::cerr << "error: " << chyll_last_error() << '\n';
    return st;
  }
  if (result != nullptr) {
    std::cout << result << '\n';
    chyll_string_free(result);
  }
  return 0;
}
