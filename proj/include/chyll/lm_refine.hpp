#pragma once

#include "chyll/mlp.hpp"

#include "json.hpp"

#include <Eigen/Dense>

namespace chyll::lm {

struct LmConfig {
  int max_iters = 50;
  double lambda0 = 1e-3;
  double lambda_up = 10.0;
  double lambda_down = 0.1;
  double tol_grad = 1e-10;
  double tol_step = 1e-12;
  double lambda_max = 1e8;

  void validate() const;
  nlohmann::json to_json() const;
  static LmConfig from_json(const nlohmann::json& j);
};

struct LmResult {
  Eigen::VectorXd x;
  double residual = 0.0;   // |E(x) - z|
  double grad_norm = 0.0;  // |J^T (E(x) - z)|
  int iterations = 0;
  int accepted = 0;
  bool converged = false;
  // Residual norm after every accepted step, starting with the initial one.
  std::vector<double> accepted_residuals;
};

// Levenberg-Marquardt on min_x |E(x) - z|^2 starting from x_init.
LmResult lm_project(const ad::Mlp& encoder, const Eigen::VectorXd& z, const Eigen::VectorXd& x_init,
                    const LmConfig& cfg = {});

}  // namespace chyll::lm
