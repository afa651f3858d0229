#pragma once

#include "chyll/hybrid_sim.hpp"
#include "chyll/latent_model.hpp"
#include "chyll/lm_refine.hpp"

#include "json.hpp"

#include <span>
#include <string>
#include <vector>

namespace chyll::model {

enum class DecodeMode { decoder, lm };

DecodeMode decode_mode_from_string(const std::string& name);
std::string to_string(DecodeMode mode);

struct PredictOptions {
  DecodeMode mode = DecodeMode::decoder;
  int substeps = 1;
  lm::LmConfig lm;
};

struct Prediction {
  std::vector<Eigen::VectorXd> states;
  std::vector<Eigen::VectorXd> latents;
  // LM mode only, one entry per sample.
  std::vector<double> residual;
  std::vector<bool> fallback;  // LM did not converge; decoder output used
  std::vector<bool> suspect;   // residual > 10x the trajectory median
};

// Rolls every initial state forward on t_grid in one batch. actions[q][k] is
// the action of trajectory q on [t_k, t_{k+1}) (ignored for autonomous models).
std::vector<Prediction> predict(const LatentModel& model, const std::vector<Eigen::VectorXd>& x0,
                                std::span<const double> t_grid, const PredictOptions& opts,
                                const std::vector<std::vector<sim::State>>* actions = nullptr);

// Decoder or LM recovery of one latent trajectory.
Prediction decode_latents(const LatentModel& model, const std::vector<Eigen::VectorXd>& latents,
                          const PredictOptions& opts);

struct EvalOptions {
  double horizon_mult = 2.0;
  int substeps = 1;
  bool run_lm = true;
  lm::LmConfig lm;
  int max_trajectories = 0;  // 0 = whole test split
};

struct TrajectoryMetrics {
  int traj_id = 0;
  double mse_decoder = 0.0;
  double mse_lm = 0.0;
  double min_x1 = 0.0;     // decoder-mode predictions
  double min_x1_lm = 0.0;
  double lm_residual_max = 0.0;
};

struct EvalReport {
  std::string system;
  std::string model_kind;
  int horizon_steps = 0;
  int training_horizon = 0;
  double mse_decoder = 0.0;
  double mse_lm = 0.0;
  bool has_lm = false;
  double min_x1 = 0.0;
  double min_x1_lm = 0.0;
  double lm_residual_median = 0.0;
  double lm_fraction_below_1e6 = 0.0;
  int lm_fallbacks = 0;
  int lm_suspect = 0;
  std::vector<TrajectoryMetrics> per_trajectory;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

// Test-split MSE over samples 1..H at H = horizon_mult x (last curriculum length).
EvalReport evaluate(const LatentModel& model, const sim::Dataset& ds, const EvalOptions& opts);
// Same metrics with the ground-truth simulator as the predictor.
EvalReport evaluate_simulator(const sim::Dataset& ds, const EvalOptions& opts, int training_horizon);

}  // namespace chyll::model
