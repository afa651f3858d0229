#include "chyll/lm_refine.hpp"

#include "chyll/error.hpp"

#include <cmath>

namespace chyll::lm {

void LmConfig::validate() const {
  if (max_iters < 1) throw ConfigError("lm.max_iters must be >= 1");
  if (!(lambda0 > 0 && lambda_up > 1 && lambda_down > 0 && lambda_down < 1)) {
    throw ConfigError("lm damping parameters must satisfy lambda0 > 0, lambda_up > 1, 0 < lambda_down < 1");
  }
  if (!(tol_grad > 0 && tol_step > 0 && lambda_max > lambda0)) throw ConfigError("lm tolerances must be positive");
}

nlohmann::json LmConfig::to_json() const {
  return {{"max_iters", max_iters}, {"lambda0", lambda0},   {"lambda_up", lambda_up}, {"lambda_down", lambda_down},
          {"tol_grad", tol_grad},   {"tol_step", tol_step}, {"lambda_max", lambda_max}};
}

LmConfig LmConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("lm config must be an object");
  LmConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "max_iters") c.max_iters = v.get<int>();
    else if (key == "lambda0") c.lambda0 = v.get<double>();
    else if (key == "lambda_up") c.lambda_up = v.get<double>();
    else if (key == "lambda_down") c.lambda_down = v.get<double>();
    else if (key == "tol_grad") c.tol_grad = v.get<double>();
    else if (key == "tol_step") c.tol_step = v.get<double>();
    else if (key == "lambda_max") c.lambda_max = v.get<double>();
    else throw ConfigError("unknown lm config key '" + key + "'");
  }
  c.validate();
  return c;
}

LmResult lm_project(const ad::Mlp& encoder, const Eigen::VectorXd& z, const Eigen::VectorXd& x_init,
                    const LmConfig& cfg) {
  if (x_init.size() != encoder.in_dim() || z.size() != encoder.out_dim()) {
    throw NumericError("lm_project: dimension mismatch");
  }
  LmResult out;
  Eigen::VectorXd x = x_init;
  Eigen::VectorXd r = encoder.eval(x) - z;
  double cost = r.squaredNorm();
  double lambda = cfg.lambda0;
  out.accepted_residuals.push_back(std::sqrt(cost));
  const auto n = x.size();

  Eigen::MatrixXd J = encoder.jacobian(x);
  Eigen::VectorXd g = J.transpose() * r;
  while (out.iterations < cfg.max_iters) {
    if (g.norm() < cfg.tol_grad || cost == 0.0) {
      out.converged = true;
      break;
    }
    ++out.iterations;
    const Eigen::MatrixXd A = J.transpose() * J + lambda * Eigen::MatrixXd::Identity(n, n);
    const Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) {
      lambda *= cfg.lambda_up;
      if (lambda > cfg.lambda_max) break;
      continue;
    }
    const Eigen::VectorXd delta = llt.solve(-g);
    const Eigen::VectorXd x_new = x + delta;
    const Eigen::VectorXd r_new = encoder.eval(x_new) - z;
    const double cost_new = r_new.squaredNorm();
    if (std::isfinite(cost_new) && cost_new < cost) {
      x = x_new;
      r = r_new;
      cost = cost_new;
      lambda = std::max(lambda * cfg.lambda_down, 1e-12);
      ++out.accepted;
      out.accepted_residuals.push_back(std::sqrt(cost));
      J = encoder.jacobian(x);
      g = J.transpose() * r;
      if (delta.norm() < cfg.tol_step * (1.0 + x.norm())) {
        out.converged = true;
        break;
      }
    } else {
      lambda *= cfg.lambda_up;
      if (lambda > cfg.lambda_max) break;
      if (delta.norm() < cfg.tol_step * (1.0 + x.norm())) {
        out.converged = true;
        break;
      }
    }
  }
  out.x = x;
  out.residual = std::sqrt(cost);
  out.grad_norm = g.norm();
  return out;
}

}  // namespace chyll::lm
