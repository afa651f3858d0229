#pragma once

#include "chyll/latent_model.hpp"
#include "chyll/transitions.hpp"

#include <random>
#include <vector>

namespace chyll::model {

// B trajectory windows of T steps in time-major layout: states[k] is the
// (B x n) matrix of the k-th sample of every window, k = 0..T.
struct WindowBatch {
  std::vector<Matrix> states;
  std::vector<Matrix> actions;  // T entries (B x p) or empty
  std::vector<double> times;    // T + 1 grid points starting at 0
  // Flagged pairs (k, b): states[k].row(b) -> states[k + 1].row(b) is a reset.
  std::vector<std::pair<int, int>> glue_pairs;

  int batch() const { return states.empty() ? 0 : static_cast<int>(states.front().rows()); }
  int steps() const { return static_cast<int>(states.size()) - 1; }
};

// Windows of length `steps` with uniform random trajectory and start offset.
// Windows longer than a trajectory are clipped to the shortest trajectory.
WindowBatch sample_windows(const sim::Dataset& ds, const std::vector<int>& ids, const TransitionSet& transitions,
                           int steps, int batch, std::mt19937_64& rng);

struct LossTerms {
  ad::Var total;
  ad::Var dynamics;
  ad::Var gluing;
  ad::Var conformal;
  ad::Var collapse;
};

// Encodes every window sample in one pass: row k*B + b is E(states[k].row(b)).
ad::Var encode_stack(ad::Tape& tape, LatentModel& model, const WindowBatch& batch);

ad::Var dynamics_loss(ad::Tape& tape, LatentModel& model, const WindowBatch& batch, const ad::Var& encoded,
                      int substeps);
ad::Var gluing_loss(ad::Tape& tape, const WindowBatch& batch, const ad::Var& encoded);
// Mean over points and the n x n entries of (J^T J - theta_c I)^2.
ad::Var conformal_loss(ad::Tape& tape, LatentModel& model, const Matrix& points);
// sum_i relu(floor - Var_i(encoded)), unbiased per-dimension variance.
ad::Var collapse_loss(const ad::Var& encoded, double floor);

// Conformal points: `samples` rows drawn from the window states (all if 0).
LossTerms continuous_loss(ad::Tape& tape, LatentModel& model, const WindowBatch& batch, const TrainConfig& cfg,
                          std::mt19937_64& rng);

}  // namespace chyll::model
