#pragma once

// Command layer shared by the C API and the CLI. Each command takes its JSON
// section, rejects unknown keys, validates paths before doing any work, writes
// its artifacts atomically and echoes the effective config next to them.

#include "json.hpp"

#include <functional>
#include <string>

namespace chyll::cmd {

using LogFn = std::function<void(const std::string&)>;

// generate: system, n, dt, steps, seed, train_fraction, params, out (dataset file).
nlohmann::json run_generate(const nlohmann::json& cfg, const LogFn& log = {});
// train: dataset, out (bundle dir), baseline ("none" | "node"), plus any TrainConfig key.
nlohmann::json run_train(const nlohmann::json& cfg, const LogFn& log = {});
// eval: model | oracle, dataset, out, horizon_mult, decode_mode, lm, substeps,
// max_trajectories, compare (second bundle), training_horizon (oracle only).
nlohmann::json run_eval(const nlohmann::json& cfg, const LogFn& log = {});
// tda: exactly one of model, dataset, analytic ("torus" | "circle"); out, mesh,
// fields, lifetime_ratio, max_points, points, noise, seed, max_filtration, auto_factor.
nlohmann::json run_tda(const nlohmann::json& cfg, const LogFn& log = {});
// control: model | oracle, trials, seed, duration, substeps, zero_baseline, params, mppi, out.
nlohmann::json run_control(const nlohmann::json& cfg, const LogFn& log = {});

// Dispatch by name; unknown names raise ConfigError.
nlohmann::json run_command(const std::string& name, const nlohmann::json& cfg, const LogFn& log = {});

}  // namespace chyll::cmd
