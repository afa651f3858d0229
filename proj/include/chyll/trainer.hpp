#pragma once

#include "chyll/latent_model.hpp"
#include "chyll/transitions.hpp"

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace chyll::model {

struct LogRow {
  int step = 0;
  int stage = 0;
  double total = 0.0;
  double dynamics = 0.0;
  double gluing = 0.0;
  double conformal = 0.0;
  double collapse = 0.0;
};

struct TrainingLog {
  std::vector<LogRow> rows;
  std::vector<double> decoder_loss;
  int retries = 0;

  // step,stage,loss_total,loss_dyn,loss_glue,loss_conf,loss_collapse
  std::string to_csv() const;
  std::string decoder_csv() const;
};

using ProgressFn = std::function<void(const LogRow&)>;

// Applies system-specific defaults (juggler detects transitions on ball
// coordinates only) and, for the baseline, zeroes the non-dynamics weights.
TrainConfig effective_config(const sim::Dataset& ds, TrainConfig cfg);

TransitionSet detect_training_transitions(const sim::Dataset& ds, const TrainConfig& cfg);

// Phase I: curriculum over cfg.curriculum with Adam on encoder, field and
// theta_c. A non-finite loss restores the last checkpoint and halves the
// learning rate; more than cfg.max_retries restores and throws TrainingError.
void train_phase1(LatentModel& model, const sim::Dataset& ds, const TransitionSet& transitions,
                  const TrainConfig& cfg, std::mt19937_64& rng, TrainingLog& log, const ProgressFn& progress = {});

// Phase II: decoder on noisy reconstructions with the encoder frozen.
void train_phase2(LatentModel& model, const sim::Dataset& ds, const TrainConfig& cfg, std::mt19937_64& rng,
                  TrainingLog& log);

struct TrainOutcome {
  LatentModel model;
  TransitionSet transitions;
  TrainingLog log;
  TrainConfig config;
};

// Full pipeline: cfg.model selects CHyLL (both phases) or the neural ODE baseline.
TrainOutcome train(const sim::Dataset& ds, const TrainConfig& cfg, const ProgressFn& progress = {});
TrainOutcome train_baseline_node(const sim::Dataset& ds, TrainConfig cfg, const ProgressFn& progress = {});

}  // namespace chyll::model
