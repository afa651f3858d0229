#include "chyll/losses.hpp"

#include "chyll/error.hpp"

#include <algorithm>

namespace chyll::model {

WindowBatch sample_windows(const sim::Dataset& ds, const std::vector<int>& ids, const TransitionSet& transitions,
                           int steps, int batch, std::mt19937_64& rng) {
  if (ids.empty()) throw ConfigError("sample_windows: no trajectories");
  if (steps < 1 || batch < 1) throw ConfigError("sample_windows: steps and batch must be >= 1");
  std::size_t shortest = ds.by_id(ids.front()).size();
  for (int id : ids) shortest = std::min(shortest, ds.by_id(id).size());
  if (shortest < 2) throw ConfigError("sample_windows: trajectories need at least 2 samples");
  const int T = std::min(steps, static_cast<int>(shortest) - 1);
  const int n = ds.state_dim();
  const int p = ds.action_dim();

  WindowBatch w;
  w.states.assign(static_cast<std::size_t>(T + 1), Matrix(batch, n));
  if (p > 0) w.actions.assign(static_cast<std::size_t>(T), Matrix(batch, p));
  w.times.resize(static_cast<std::size_t>(T + 1));
  for (int k = 0; k <= T; ++k) w.times[static_cast<std::size_t>(k)] = k * ds.dt;

  std::uniform_int_distribution<std::size_t> pick(0, ids.size() - 1);
  for (int b = 0; b < batch; ++b) {
    const int id = ids[pick(rng)];
    const sim::Trajectory& tr = ds.by_id(id);
    std::uniform_int_distribution<int> start_dist(0, static_cast<int>(tr.size()) - 1 - T);
    const int s = start_dist(rng);
    for (int k = 0; k <= T; ++k) w.states[static_cast<std::size_t>(k)].row(b) = tr.states[static_cast<std::size_t>(s + k)].transpose();
    for (int k = 0; k < T && p > 0; ++k) w.actions[static_cast<std::size_t>(k)].row(b) = tr.actions[static_cast<std::size_t>(s + k)].transpose();
    for (int k : transitions.at(id)) {
      if (k >= s && k < s + T) w.glue_pairs.emplace_back(k - s, b);
    }
  }
  return w;
}

ad::Var encode_stack(ad::Tape& tape, LatentModel& model, const WindowBatch& batch) {
  const int B = batch.batch();
  Matrix stacked(static_cast<Eigen::Index>(batch.states.size()) * B, batch.states.front().cols());
  for (std::size_t k = 0; k < batch.states.size(); ++k) stacked.middleRows(static_cast<Eigen::Index>(k) * B, B) = batch.states[k];
  return model.encode(tape, tape.constant(std::move(stacked)));
}

ad::Var dynamics_loss(ad::Tape& tape, LatentModel& model, const WindowBatch& batch, const ad::Var& encoded,
                      int substeps) {
  const int B = batch.batch();
  const int T = batch.steps();
  if (T < 1) return tape.constant(0.0);
  const ad::Var z0 = ad::slice_rows(encoded, 0, B);
  const auto rollout =
      latent_rollout(tape, model, z0, batch.times, substeps, batch.actions.empty() ? nullptr : &batch.actions);
  ad::Var acc;
  for (int k = 1; k <= T; ++k) {
    const ad::Var term = ad::squared_diff_sum(ad::slice_rows(encoded, k * B, B), rollout[static_cast<std::size_t>(k)]);
    acc = k == 1 ? term : ad::add(acc, term);
  }
  return ad::scale(acc, 1.0 / (static_cast<double>(T) * B * encoded.cols()));
}

ad::Var gluing_loss(ad::Tape& tape, const WindowBatch& batch, const ad::Var& encoded) {
  if (batch.glue_pairs.empty()) return tape.constant(0.0);
  const int B = batch.batch();
  std::vector<int> pre;
  std::vector<int> post;
  pre.reserve(batch.glue_pairs.size());
  post.reserve(batch.glue_pairs.size());
  for (const auto& [k, b] : batch.glue_pairs) {
    pre.push_back(k * B + b);
    post.push_back((k + 1) * B + b);
  }
  return ad::mse(ad::gather_rows(encoded, std::move(pre)), ad::gather_rows(encoded, std::move(post)));
}

ad::Var conformal_loss(ad::Tape& tape, LatentModel& model, const Matrix& points) {
  if (!model.has_encoder()) return tape.constant(0.0);
  const int n = model.state_dim;
  const auto tf = model.encoder.forward_with_tangents(tape, tape.constant(points));
  const ad::Var theta = model.theta_c(tape);
  ad::Var acc;
  bool first = true;
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      ad::Var g = ad::row_sum(ad::mul(tf.tangents[static_cast<std::size_t>(i)], tf.tangents[static_cast<std::size_t>(j)]));
      if (i == j) g = ad::sub_scalar_var(g, theta);
      ad::Var term = ad::sum(ad::square(g));
      if (i != j) term = ad::scale(term, 2.0);
      acc = first ? term : ad::add(acc, term);
      first = false;
    }
  }
  return ad::scale(acc, 1.0 / (static_cast<double>(points.rows()) * n * n));
}

ad::Var collapse_loss(const ad::Var& encoded, double floor) {
  const int rows = encoded.rows();
  if (rows < 2) throw NumericError("collapse_loss: batch of fewer than 2 samples");
  const ad::Var centered = ad::sub_row(encoded, ad::col_mean(encoded));
  const ad::Var var = ad::scale(ad::col_mean(ad::square(centered)), static_cast<double>(rows) / (rows - 1));
  return ad::sum(ad::relu(ad::add_const(ad::scale(var, -1.0), floor)));
}

LossTerms continuous_loss(ad::Tape& tape, LatentModel& model, const WindowBatch& batch, const TrainConfig& cfg,
                          std::mt19937_64& rng) {
  LossTerms t;
  const ad::Var encoded = encode_stack(tape, model, batch);
  const ad::Var zero = tape.constant(0.0);
  t.dynamics = cfg.w_dyn > 0 ? dynamics_loss(tape, model, batch, encoded, cfg.rk4_substeps) : zero;
  t.gluing = cfg.w_glue > 0 && model.has_encoder() ? gluing_loss(tape, batch, encoded) : zero;
  t.collapse = cfg.w_collapse > 0 && model.has_encoder() ? collapse_loss(encoded, cfg.collapse_floor) : zero;
  if (cfg.w_conf > 0 && model.has_encoder()) {
    const int B = batch.batch();
    const int total = B * static_cast<int>(batch.states.size());
    const int count = cfg.conformal_samples > 0 ? std::min(cfg.conformal_samples, total) : total;
    Matrix pts(count, model.state_dim);
    std::uniform_int_distribution<int> pick(0, total - 1);
    for (int r = 0; r < count; ++r) {
      const int idx = count == total ? r : pick(rng);
      pts.row(r) = batch.states[static_cast<std::size_t>(idx / B)].row(idx % B);
    }
    t.conformal = conformal_loss(tape, model, pts);
  } else {
    t.conformal = zero;
  }
  ad::Var total = ad::scale(t.dynamics, cfg.w_dyn);
  total = ad::axpy(total, cfg.w_glue, t.gluing);
  total = ad::axpy(total, cfg.w_conf, t.conformal);
  total = ad::axpy(total, cfg.w_collapse, t.collapse);
  t.total = total;
  return t;
}

}  // namespace chyll::model
