#include "chyll/evaluation.hpp"

#include "chyll/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace chyll::model {

DecodeMode decode_mode_from_string(const std::string& name) {
  if (name == "decoder") return DecodeMode::decoder;
  if (name == "lm") return DecodeMode::lm;
  throw ConfigError("unknown decode mode '" + name + "' (expected decoder|lm)");
}

std::string to_string(DecodeMode mode) { return mode == DecodeMode::decoder ? "decoder" : "lm"; }

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

bool in_bounds(const LatentModel& model, const Eigen::VectorXd& x) {
  if (model.state_lo.size() != x.size() || model.state_hi.size() != x.size()) return true;
  const Eigen::VectorXd margin = 0.1 * (model.state_hi - model.state_lo).cwiseAbs();
  return ((x - model.state_lo + margin).array() >= 0).all() && ((model.state_hi + margin - x).array() >= 0).all();
}

}  // namespace

Prediction decode_latents(const LatentModel& model, const std::vector<Eigen::VectorXd>& latents,
                          const PredictOptions& opts) {
  Prediction p;
  p.latents = latents;
  if (latents.empty()) return p;
  const auto m = static_cast<Eigen::Index>(latents.front().size());
  Matrix Z(static_cast<Eigen::Index>(latents.size()), m);
  for (std::size_t k = 0; k < latents.size(); ++k) Z.row(static_cast<Eigen::Index>(k)) = latents[k].transpose();
  const Matrix X = model.decode(Z);
  p.states.resize(latents.size());
  for (std::size_t k = 0; k < latents.size(); ++k) p.states[k] = X.row(static_cast<Eigen::Index>(k)).transpose();
  if (opts.mode != DecodeMode::lm || !model.has_encoder()) return p;

  p.residual.resize(latents.size());
  p.fallback.assign(latents.size(), false);
  p.suspect.assign(latents.size(), false);
  Eigen::VectorXd warm;
  for (std::size_t k = 0; k < latents.size(); ++k) {
    const Eigen::VectorXd& dec = p.states[k];
    lm::LmResult best = lm::lm_project(model.encoder, latents[k], dec, opts.lm);
    if (warm.size() > 0) {
      lm::LmResult chained = lm::lm_project(model.encoder, latents[k], warm, opts.lm);
      if (chained.residual < 0.5 * best.residual && in_bounds(model, chained.x)) best = std::move(chained);
    }
    p.residual[k] = best.residual;
    if (!best.converged) {
      p.fallback[k] = true;
    } else {
      p.states[k] = best.x;
    }
    warm = p.states[k];
  }
  const double med = median(p.residual);
  for (std::size_t k = 0; k < latents.size(); ++k) p.suspect[k] = p.residual[k] > 10.0 * med && p.residual[k] > 1e-9;
  return p;
}

std::vector<Prediction> predict(const LatentModel& model, const std::vector<Eigen::VectorXd>& x0,
                                std::span<const double> t_grid, const PredictOptions& opts,
                                const std::vector<std::vector<sim::State>>* actions) {
  if (x0.empty()) return {};
  const auto B = static_cast<Eigen::Index>(x0.size());
  Matrix X0(B, model.state_dim);
  for (Eigen::Index q = 0; q < B; ++q) {
    if (x0[static_cast<std::size_t>(q)].size() != model.state_dim) throw EvaluationError("predict: x0 dimension mismatch");
    X0.row(q) = x0[static_cast<std::size_t>(q)].transpose();
  }
  std::vector<Matrix> act;
  if (model.action_dim > 0) {
    if (actions == nullptr || static_cast<Eigen::Index>(actions->size()) != B) {
      throw EvaluationError("predict: controlled model needs an action sequence per trajectory");
    }
    for (std::size_t k = 0; k + 1 < t_grid.size(); ++k) {
      Matrix a(B, model.action_dim);
      for (Eigen::Index q = 0; q < B; ++q) {
        const auto& seq = (*actions)[static_cast<std::size_t>(q)];
        if (k >= seq.size()) throw EvaluationError("predict: action sequence shorter than the time grid");
        a.row(q) = seq[k].transpose();
      }
      act.push_back(std::move(a));
    }
  }
  std::vector<Matrix> z;
  try {
    z = latent_rollout(model, model.encode(X0), t_grid, opts.substeps, act.empty() ? nullptr : &act);
  } catch (const NumericError& e) {
    throw EvaluationError(std::string("predict: ") + e.what());
  }
  std::vector<Prediction> out;
  out.reserve(x0.size());
  for (Eigen::Index q = 0; q < B; ++q) {
    std::vector<Eigen::VectorXd> lat;
    lat.reserve(z.size());
    for (const auto& zk : z) lat.push_back(zk.row(q).transpose());
    out.push_back(decode_latents(model, lat, opts));
  }
  return out;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j = {{"system", system},
                      {"model", model_kind},
                      {"horizon_steps", horizon_steps},
                      {"training_horizon", training_horizon},
                      {"mse_decoder", mse_decoder},
                      {"min_x1", min_x1},
                      {"test_trajectories", per_trajectory.size()}};
  if (has_lm) {
    j["mse_lm"] = mse_lm;
    j["min_x1_lm"] = min_x1_lm;
    j["lm_residual_median"] = lm_residual_median;
    j["lm_fraction_residual_below_1e-6"] = lm_fraction_below_1e6;
    j["lm_fallbacks"] = lm_fallbacks;
    j["lm_suspect"] = lm_suspect;
  }
  return j;
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "traj_id,mse_decoder,mse_lm,min_x1,lm_residual_max\n";
  for (const auto& t : per_trajectory) {
    os << t.traj_id << ',' << t.mse_decoder << ',' << (has_lm ? t.mse_lm : std::nan("")) << ',' << t.min_x1 << ','
       << t.lm_residual_max << '\n';
  }
  return os.str();
}

namespace {

int training_horizon_of(const LatentModel& model) {
  const auto it = model.train_config.find("curriculum");
  if (it == model.train_config.end() || !it->is_array() || it->empty()) {
    throw EvaluationError("model bundle has no curriculum in its train_config");
  }
  return it->back().get<int>();
}

std::vector<int> test_ids(const sim::Dataset& ds, const EvalOptions& opts) {
  std::vector<int> ids = ds.test_ids;
  if (ids.empty()) throw EvaluationError("evaluate: dataset has no test split");
  if (opts.max_trajectories > 0 && static_cast<int>(ids.size()) > opts.max_trajectories) ids.resize(static_cast<std::size_t>(opts.max_trajectories));
  return ids;
}

int horizon_for(const sim::Dataset& ds, const std::vector<int>& ids, double mult, int train_h) {
  if (!(mult > 0)) throw ConfigError("horizon_mult must be positive");
  int h = static_cast<int>(std::lround(mult * train_h));
  for (int id : ids) h = std::min(h, static_cast<int>(ds.by_id(id).size()) - 1);
  if (h < 1) throw EvaluationError("evaluate: test trajectories are too short");
  return h;
}

double traj_mse(const sim::Trajectory& tr, const std::vector<Eigen::VectorXd>& pred, int H) {
  double s = 0.0;
  for (int k = 1; k <= H; ++k) s += (pred[static_cast<std::size_t>(k)] - tr.states[static_cast<std::size_t>(k)]).squaredNorm();
  return s / (static_cast<double>(H) * static_cast<double>(tr.states.front().size()));
}

double min_first(const std::vector<Eigen::VectorXd>& pred, int H) {
  double m = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= H; ++k) m = std::min(m, pred[static_cast<std::size_t>(k)][0]);
  return m;
}

void finalize(EvalReport& r) {
  double dec = 0.0;
  double lm = 0.0;
  r.min_x1 = std::numeric_limits<double>::infinity();
  r.min_x1_lm = r.min_x1;
  for (const auto& t : r.per_trajectory) {
    dec += t.mse_decoder;
    lm += t.mse_lm;
    r.min_x1 = std::min(r.min_x1, t.min_x1);
    r.min_x1_lm = std::min(r.min_x1_lm, t.min_x1_lm);
  }
  const double n = static_cast<double>(r.per_trajectory.size());
  r.mse_decoder = dec / n;
  r.mse_lm = lm / n;
}

}  // namespace

EvalReport evaluate(const LatentModel& model, const sim::Dataset& ds, const EvalOptions& opts) {
  if (ds.state_dim() != model.state_dim || ds.action_dim() != model.action_dim) {
    throw EvaluationError("evaluate: dataset and model dimensions differ");
  }
  EvalReport r;
  r.system = ds.system;
  r.model_kind = to_string(model.kind);
  r.training_horizon = training_horizon_of(model);
  const auto ids = test_ids(ds, opts);
  r.horizon_steps = horizon_for(ds, ids, opts.horizon_mult, r.training_horizon);
  std::vector<double> grid(static_cast<std::size_t>(r.horizon_steps) + 1);
  for (std::size_t k = 0; k < grid.size(); ++k) grid[k] = static_cast<double>(k) * ds.dt;

  std::vector<Eigen::VectorXd> x0;
  std::vector<std::vector<sim::State>> acts;
  for (int id : ids) {
    x0.push_back(ds.by_id(id).states.front());
    acts.push_back(ds.by_id(id).actions);
  }
  PredictOptions po;
  po.substeps = opts.substeps;
  po.lm = opts.lm;
  const auto preds = predict(model, x0, grid, po, model.action_dim > 0 ? &acts : nullptr);
  r.has_lm = opts.run_lm && model.has_encoder();
  std::vector<double> residuals;
  for (std::size_t q = 0; q < ids.size(); ++q) {
    const sim::Trajectory& tr = ds.by_id(ids[q]);
    TrajectoryMetrics t;
    t.traj_id = ids[q];
    t.mse_decoder = traj_mse(tr, preds[q].states, r.horizon_steps);
    t.min_x1 = min_first(preds[q].states, r.horizon_steps);
    if (r.has_lm) {
      PredictOptions lo = po;
      lo.mode = DecodeMode::lm;
      const Prediction p = decode_latents(model, preds[q].latents, lo);
      t.mse_lm = traj_mse(tr, p.states, r.horizon_steps);
      t.min_x1_lm = min_first(p.states, r.horizon_steps);
      for (std::size_t k = 0; k < p.residual.size(); ++k) {
        residuals.push_back(p.residual[k]);
        t.lm_residual_max = std::max(t.lm_residual_max, p.residual[k]);
        r.lm_fallbacks += p.fallback[k] ? 1 : 0;
        r.lm_suspect += p.suspect[k] ? 1 : 0;
      }
    } else {
      t.mse_lm = t.mse_decoder;
      t.min_x1_lm = t.min_x1;
    }
    r.per_trajectory.push_back(t);
  }
  finalize(r);
  if (r.has_lm && !residuals.empty()) {
    r.lm_fraction_below_1e6 =
        static_cast<double>(std::count_if(residuals.begin(), residuals.end(), [](double v) { return v < 1e-6; })) /
        static_cast<double>(residuals.size());
    r.lm_residual_median = median(residuals);
  }
  return r;
}

EvalReport evaluate_simulator(const sim::Dataset& ds, const EvalOptions& opts, int training_horizon) {
  EvalReport r;
  r.system = ds.system;
  r.model_kind = "simulator";
  r.training_horizon = training_horizon;
  const auto ids = test_ids(ds, opts);
  r.horizon_steps = horizon_for(ds, ids, opts.horizon_mult, training_horizon);
  const auto spec = sim::make_system(sim::system_from_string(ds.system), ds.params);
  for (int id : ids) {
    const sim::Trajectory& tr = ds.by_id(id);
    const sim::Trajectory pred =
        sim::simulate(spec, tr.states.front(), ds.dt, r.horizon_steps, tr.actions.empty() ? nullptr : &tr.actions);
    TrajectoryMetrics t;
    t.traj_id = id;
    t.mse_decoder = traj_mse(tr, pred.states, r.horizon_steps);
    t.mse_lm = t.mse_decoder;
    t.min_x1 = min_first(pred.states, r.horizon_steps);
    t.min_x1_lm = t.min_x1;
    r.per_trajectory.push_back(t);
  }
  finalize(r);
  return r;
}

}  // namespace chyll::model
