#pragma once

#include "chyll/autodiff.hpp"
#include "chyll/mlp.hpp"

#include "json.hpp"

#include <random>
#include <span>
#include <string>
#include <vector>

namespace chyll::model {

using ad::Matrix;

enum class ModelKind { chyll, neural_ode };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

struct TrainConfig {
  ModelKind model = ModelKind::chyll;

  // Architecture. latent_dim 0 means 2 * state_dim.
  int latent_dim = 0;
  std::vector<int> encoder_hidden{64, 64, 64};
  std::vector<int> field_hidden{64, 64};
  std::vector<int> decoder_hidden{128, 128, 128, 128, 128, 128, 128, 128};
  std::vector<int> node_field_hidden{128, 128};
  ad::Activation activation = ad::Activation::tanh;

  // Continuous loss weights: dynamics, gluing, conformal, collapse.
  double w_dyn = 1.0;
  double w_glue = 1.0;
  double w_conf = 0.1;
  double w_collapse = 0.1;
  double collapse_floor = 0.1;  // per-dimension variance floor

  std::vector<int> curriculum{10, 20, 40, 80, 150, 200};
  int steps_per_length = 2000;
  int final_stage_steps = 4000;  // 0: same as steps_per_length
  int batch = 4096;
  double lr = 1e-3;

  int decoder_steps = 2000;
  int decoder_batch = 4096;
  double decoder_noise = 0.01;
  double decoder_lr = 1e-3;

  double lipschitz_sigma_mult = 2.0;
  // State coordinates used by transition detection; empty = all.
  std::vector<int> transition_dims;
  int rk4_substeps = 1;
  int conformal_samples = 256;  // 0 = every window sample
  double theta_c_init = 1.0;
  bool train_theta_c = true;
  int max_retries = 3;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  // Unknown keys are rejected; missing keys keep the defaults above.
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& base);
  void validate() const;
  int stage_steps(std::size_t stage) const;
};

// Encoder E (n -> m), latent field V (m [+ action] -> m), decoder D (m -> n)
// and the conformal scale theta_c = exp(log_theta_c). A neural_ode model has
// no encoder/decoder: latent space == state space.
class LatentModel {
 public:
  static LatentModel create(int state_dim, int action_dim, const TrainConfig& cfg, std::mt19937_64& rng);

  ModelKind kind = ModelKind::chyll;
  std::string system;
  int state_dim = 0;
  int latent_dim = 0;
  int action_dim = 0;
  double dt = 0.0;
  ad::Mlp encoder;
  ad::Mlp field;
  ad::Mlp decoder;
  ad::Tensor log_theta_c{Matrix::Zero(1, 1)};
  bool theta_c_trainable = true;
  // Per-coordinate bounds of the training states.
  Eigen::VectorXd state_lo;
  Eigen::VectorXd state_hi;
  nlohmann::json train_config;

  bool has_encoder() const { return kind == ModelKind::chyll; }
  double theta_c() const;

  Matrix encode(const Matrix& x) const;
  Eigen::VectorXd encode(const Eigen::VectorXd& x) const;
  Matrix decode(const Matrix& z) const;
  // actions may be null when action_dim == 0.
  Matrix field_eval(const Matrix& z, const Matrix* actions) const;

  ad::Var encode(ad::Tape& tape, const ad::Var& x);
  ad::Var field_forward(ad::Tape& tape, const ad::Var& z, const Matrix* actions);
  ad::Var theta_c(ad::Tape& tape);

  std::vector<ad::Tensor*> continuous_parameters();
  std::vector<ad::Tensor*> decoder_parameters();

  // Bundle directory: encoder.json, field.json, decoder.json, meta.json.
  void save(const std::string& dir) const;
  static LatentModel load(const std::string& dir);
};

// Fixed-step RK4 in latent space with `substeps` steps per sample interval.
// Returns one matrix per grid point (the first is z0). actions[k] (rows x p)
// is held on [t_k, t_{k+1}).
std::vector<Matrix> latent_rollout(const LatentModel& model, const Matrix& z0, std::span<const double> t_grid,
                                   int substeps, const std::vector<Matrix>* actions = nullptr);

// Differentiable version recorded on the tape.
std::vector<ad::Var> latent_rollout(ad::Tape& tape, LatentModel& model, const ad::Var& z0,
                                    std::span<const double> t_grid, int substeps,
                                    const std::vector<Matrix>* actions = nullptr);

}  // namespace chyll::model
