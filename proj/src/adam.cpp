#include "chyll/adam.hpp"

#include "chyll/error.hpp"

#include <cmath>

namespace chyll::ad {

void adam_step(std::vector<Matrix>& params, const std::vector<Matrix>& grads, AdamState& state) {
  if (params.size() != grads.size()) throw NumericError("adam_step: parameter/gradient count mismatch");
  if (state.lr < 0.0) throw ConfigError("adam_step: learning rate must be non-negative");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Matrix::Zero(p.rows(), p.cols()));
      state.v.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }
  if (state.m.size() != params.size()) throw NumericError("adam_step: state does not match parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const auto& g = grads[i];
    if (g.rows() != p.rows() || g.cols() != p.cols() || state.m[i].rows() != p.rows() ||
        state.m[i].cols() != p.cols()) {
      throw NumericError("adam_step: shape mismatch for parameter " + std::to_string(i));
    }
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g.cwiseProduct(g);
    auto mhat = state.m[i].array() / bc1;
    auto vhat = state.v[i].array() / bc2;
    p.array() -= state.lr * mhat / (vhat.sqrt() + state.eps);
  }
}

Adam::Adam(std::vector<Tensor*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)) {
  state_.lr = lr;
  state_.beta1 = beta1;
  state_.beta2 = beta2;
  state_.eps = eps;
  for (auto* p : params_) {
    state_.m.push_back(Matrix::Zero(p->rows(), p->cols()));
    state_.v.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
}

void Adam::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

void Adam::step() {
  ++state_.step;
  const double bc1 = 1.0 - std::pow(state_.beta1, static_cast<double>(state_.step));
  const double bc2 = 1.0 - std::pow(state_.beta2, static_cast<double>(state_.step));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = *params_[i];
    if (!p.has_grad()) p.zero_grad();
    state_.m[i] = state_.beta1 * state_.m[i] + (1.0 - state_.beta1) * p.grad;
    state_.v[i] = state_.beta2 * state_.v[i] + (1.0 - state_.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= state_.lr * (state_.m[i].array() / bc1) / ((state_.v[i].array() / bc2).sqrt() + state_.eps);
  }
}

}  // namespace chyll::ad
