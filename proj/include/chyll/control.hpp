#pragma once

// MPPI on the ball/paddle juggler with an energy-tracking cost.

#include "chyll/hybrid_sim.hpp"
#include "chyll/latent_model.hpp"

#include "json.hpp"

#include <memory>
#include <random>
#include <string>
#include <vector>

namespace chyll::control {

using model::Matrix;

struct MppiConfig {
  int horizon = 32;
  int samples = 256;
  double lambda = 1.0;
  double action_std = 0.5;   // m/s
  double target_height = 1.2;  // m; E_des = g * target_height
  double rho = 10.0;
  double x_p_min = 0.0;
  double x_p_max = 0.8;
  double control_dt = 1.0 / 40.0;
  double action_min = -4.0;
  double action_max = 4.0;
  std::uint64_t seed = 0;

  double e_des(double gravity) const { return gravity * target_height; }
  void validate() const;
  nlohmann::json to_json() const;
  static MppiConfig from_json(const nlohmann::json& j);
  static MppiConfig from_json(const nlohmann::json& j, const MppiConfig& base);
};

// states: (x_b, v_b, x_p, v_p) per step.
double juggling_cost(const std::vector<Eigen::VectorXd>& states, const MppiConfig& cfg, double gravity);

// Batched rollout interface shared by the simulator and learned models.
class ControlledModel {
 public:
  virtual ~ControlledModel() = default;
  // actions is (M x N); returns N matrices of (M x 4) states after each step.
  virtual std::vector<Matrix> rollout(const Eigen::VectorXd& x0, const Matrix& actions, double dt) const = 0;
  virtual std::string name() const = 0;
};

class SimulatorModel final : public ControlledModel {
 public:
  explicit SimulatorModel(sim::SystemParams params) : params_(std::move(params)) {}
  std::vector<Matrix> rollout(const Eigen::VectorXd& x0, const Matrix& actions, double dt) const override;
  std::string name() const override { return "simulator"; }

 private:
  sim::SystemParams params_;
};

class LearnedModel final : public ControlledModel {
 public:
  explicit LearnedModel(model::LatentModel m, int substeps = 1) : model_(std::move(m)), substeps_(substeps) {}
  std::vector<Matrix> rollout(const Eigen::VectorXd& x0, const Matrix& actions, double dt) const override;
  std::string name() const override { return "learned"; }

 private:
  model::LatentModel model_;
  int substeps_;
};

struct MppiResult {
  double action = 0.0;
  Eigen::VectorXd nominal;  // shifted, length N
  Eigen::VectorXd weights;
  Eigen::VectorXd costs;
  bool degenerate = false;  // every rollout was non-finite
};

// w_i = exp(-(S_i - S_min) / lambda) / sum; non-finite costs get weight 0.
Eigen::VectorXd mppi_weights(const Eigen::VectorXd& costs, double lambda);

MppiResult mppi_plan(const ControlledModel& model, const Eigen::VectorXd& state, const Eigen::VectorXd& nominal,
                     const MppiConfig& cfg, double gravity, std::mt19937_64& rng);

struct EpisodeRow {
  double t = 0.0;
  Eigen::VectorXd state;
  double action = 0.0;
  double inst_cost = 0.0;
  double energy_err = 0.0;
};

struct EpisodeResult {
  std::vector<EpisodeRow> rows;
  double total_cost = 0.0;
  double mean_abs_energy_err = 0.0;
  int degenerate_plans = 0;
  bool aborted = false;
  std::string error;

  // t,x_b,v_b,x_p,v_p,a,inst_cost,energy_err
  std::string to_csv() const;
};

enum class Planner { mppi, zero_action };

// planner == zero_action ignores `model` and holds a = 0.
EpisodeResult closed_loop_run(const sim::SystemParams& plant, const ControlledModel* model, Planner planner,
                              const MppiConfig& cfg, double duration, const Eigen::VectorXd& x0);

// Trial initial state drawn from the trial seed.
Eigen::VectorXd trial_initial_state(std::uint64_t seed);

struct TrialSummary {
  std::vector<std::pair<std::uint64_t, double>> trials;  // (seed, total cost)
  std::vector<double> mean_abs_energy_err;
  double mean = 0.0;
  double std = 0.0;

  nlohmann::json to_json() const;
};

TrialSummary summarize(const std::vector<std::uint64_t>& seeds, const std::vector<EpisodeResult>& episodes);

}  // namespace chyll::control
