#include "chyll/control.hpp"

#include "chyll/error.hpp"
#include "chyll/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace chyll::control {

void MppiConfig::validate() const {
  if (horizon < 1 || samples < 1) throw ConfigError("mppi: horizon and samples must be >= 1");
  if (!(lambda > 0)) throw ConfigError("mppi: lambda must be positive");
  if (action_std < 0) throw ConfigError("mppi: action_std must be >= 0");
  if (!(x_p_min < x_p_max)) throw ConfigError("mppi: x_p_min must be below x_p_max");
  if (!(action_min < action_max)) throw ConfigError("mppi: action bounds must be ordered");
  if (!(control_dt > 0)) throw ConfigError("mppi: control_dt must be positive");
  if (rho < 0) throw ConfigError("mppi: rho must be >= 0");
}

nlohmann::json MppiConfig::to_json() const {
  return {{"horizon", horizon},         {"samples", samples},       {"lambda", lambda},
          {"action_std", action_std},   {"target_height", target_height}, {"rho", rho},
          {"x_p_min", x_p_min},         {"x_p_max", x_p_max},       {"control_dt", control_dt},
          {"action_min", action_min},   {"action_max", action_max}, {"seed", seed}};
}

MppiConfig MppiConfig::from_json(const nlohmann::json& j) { return from_json(j, MppiConfig{}); }

MppiConfig MppiConfig::from_json(const nlohmann::json& j, const MppiConfig& base) {
  if (!j.is_object()) throw ConfigError("mppi config must be an object");
  MppiConfig c = base;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "horizon") c.horizon = v.get<int>();
      else if (key == "samples") c.samples = v.get<int>();
      else if (key == "lambda") c.lambda = v.get<double>();
      else if (key == "action_std") c.action_std = v.get<double>();
      else if (key == "target_height") c.target_height = v.get<double>();
      else if (key == "rho") c.rho = v.get<double>();
      else if (key == "x_p_min") c.x_p_min = v.get<double>();
      else if (key == "x_p_max") c.x_p_max = v.get<double>();
      else if (key == "control_dt") c.control_dt = v.get<double>();
      else if (key == "action_min") c.action_min = v.get<double>();
      else if (key == "action_max") c.action_max = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw ConfigError("unknown mppi config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("mppi config key '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

namespace {

double step_cost(double xb, double vb, double xp, const MppiConfig& cfg, double g) {
  const double e = 0.5 * vb * vb + g * xb - cfg.e_des(g);
  return e * e + cfg.rho * (std::max(0.0, xp - cfg.x_p_max) + std::max(0.0, cfg.x_p_min - xp));
}

}  // namespace

double juggling_cost(const std::vector<Eigen::VectorXd>& states, const MppiConfig& cfg, double gravity) {
  double s = 0.0;
  for (const auto& x : states) {
    if (x.size() != 4) throw ConfigError("juggling_cost: states must be (x_b, v_b, x_p, v_p)");
    s += step_cost(x[0], x[1], x[2], cfg, gravity);
  }
  return s;
}

std::vector<Matrix> SimulatorModel::rollout(const Eigen::VectorXd& x0, const Matrix& actions, double dt) const {
  const Eigen::Index M = actions.rows();
  const Eigen::Index N = actions.cols();
  std::vector<Matrix> out(static_cast<std::size_t>(N), Matrix(M, 4));
  parallel_for(static_cast<std::size_t>(M), [&](std::size_t row) {
    const auto i = static_cast<Eigen::Index>(row);
    sim::State s = x0;
    bool failed = false;
    for (Eigen::Index k = 0; k < N; ++k) {
      if (!failed) {
        try {
          s = sim::juggler_step(s, actions(i, k), dt, params_);
        } catch (const SimulationError&) {
          failed = true;
        }
      }
      if (failed) out[static_cast<std::size_t>(k)].row(i).setConstant(std::numeric_limits<double>::quiet_NaN());
      else out[static_cast<std::size_t>(k)].row(i) = s.transpose();
    }
  });
  return out;
}

std::vector<Matrix> LearnedModel::rollout(const Eigen::VectorXd& x0, const Matrix& actions, double dt) const {
  const Eigen::Index M = actions.rows();
  const Eigen::Index N = actions.cols();
  Matrix z = model_.encode(Matrix(x0.transpose())).replicate(M, 1);
  const double h = dt / substeps_;
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(N));
  for (Eigen::Index k = 0; k < N; ++k) {
    const Matrix a = actions.col(k);
    for (int s = 0; s < substeps_; ++s) {
      const Matrix k1 = model_.field_eval(z, &a);
      const Matrix k2 = model_.field_eval(z + 0.5 * h * k1, &a);
      const Matrix k3 = model_.field_eval(z + 0.5 * h * k2, &a);
      const Matrix k4 = model_.field_eval(z + h * k3, &a);
      z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    out.push_back(model_.decode(z));
  }
  return out;
}

Eigen::VectorXd mppi_weights(const Eigen::VectorXd& costs, double lambda) {
  double smin = std::numeric_limits<double>::infinity();
  for (double c : costs)
    if (std::isfinite(c)) smin = std::min(smin, c);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(costs.size());
  if (!std::isfinite(smin)) return w;
  for (Eigen::Index i = 0; i < costs.size(); ++i) w[i] = std::isfinite(costs[i]) ? std::exp(-(costs[i] - smin) / lambda) : 0.0;
  return w / w.sum();
}

MppiResult mppi_plan(const ControlledModel& model, const Eigen::VectorXd& state, const Eigen::VectorXd& nominal,
                     const MppiConfig& cfg, double gravity, std::mt19937_64& rng) {
  if (nominal.size() != cfg.horizon) throw ConfigError("mppi_plan: nominal sequence length must equal the horizon");
  const int M = cfg.samples;
  const int N = cfg.horizon;
  std::normal_distribution<double> noise(0.0, 1.0);
  Matrix A(M, N);
  for (int i = 0; i < M; ++i)
    for (int k = 0; k < N; ++k)
      A(i, k) = std::clamp(nominal[k] + cfg.action_std * noise(rng), cfg.action_min, cfg.action_max);
  const auto states = model.rollout(state, A, cfg.control_dt);
  MppiResult r;
  r.costs = Eigen::VectorXd::Zero(M);
  for (int k = 0; k < N; ++k) {
    const Matrix& X = states[static_cast<std::size_t>(k)];
    for (int i = 0; i < M; ++i) r.costs[i] += step_cost(X(i, 0), X(i, 1), X(i, 2), cfg, gravity);
  }
  for (int i = 0; i < M; ++i)
    if (!std::isfinite(r.costs[i])) r.costs[i] = std::numeric_limits<double>::infinity();
  r.weights = mppi_weights(r.costs, cfg.lambda);
  Eigen::VectorXd plan = nominal;
  if (r.weights.sum() == 0.0) {
    r.degenerate = true;
  } else {
    plan = (r.weights.transpose() * A).transpose();
  }
  r.action = plan[0];
  r.nominal.resize(N);
  r.nominal.head(N - 1) = plan.tail(N - 1);
  r.nominal[N - 1] = plan[N - 1];
  return r;
}

std::string EpisodeResult::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "t,x_b,v_b,x_p,v_p,a,inst_cost,energy_err\n";
  for (const auto& r : rows) {
    os << r.t;
    for (Eigen::Index i = 0; i < r.state.size(); ++i) os << ',' << r.state[i];
    os << ',' << r.action << ',' << r.inst_cost << ',' << r.energy_err << '\n';
  }
  return os.str();
}

EpisodeResult closed_loop_run(const sim::SystemParams& plant, const ControlledModel* model, Planner planner,
                              const MppiConfig& cfg, double duration, const Eigen::VectorXd& x0) {
  cfg.validate();
  if (planner == Planner::mppi && model == nullptr) throw ConfigError("closed_loop_run: MPPI needs a model");
  if (x0.size() != 4) throw ConfigError("closed_loop_run: initial state must be (x_b, v_b, x_p, v_p)");
  const double g = plant.gravity;
  const int steps = static_cast<int>(std::lround(duration / cfg.control_dt));
  std::mt19937_64 rng(cfg.seed);
  Eigen::VectorXd nominal = Eigen::VectorXd::Zero(cfg.horizon);
  EpisodeResult out;
  sim::State s = x0;
  double abs_err = 0.0;
  for (int k = 0; k < steps; ++k) {
    double a = 0.0;
    if (planner == Planner::mppi) {
      const MppiResult plan = mppi_plan(*model, s, nominal, cfg, g, rng);
      a = plan.action;
      nominal = plan.nominal;
      out.degenerate_plans += plan.degenerate ? 1 : 0;
    }
    try {
      s = sim::juggler_step(s, a, cfg.control_dt, plant);
    } catch (const SimulationError& e) {
      out.aborted = true;
      out.error = e.what();
      break;
    }
    EpisodeRow row;
    row.t = (k + 1) * cfg.control_dt;
    row.state = s;
    row.action = a;
    row.energy_err = 0.5 * s[1] * s[1] + g * s[0] - cfg.e_des(g);
    row.inst_cost = step_cost(s[0], s[1], s[2], cfg, g);
    out.total_cost += row.inst_cost;
    abs_err += std::abs(row.energy_err);
    out.rows.push_back(std::move(row));
  }
  if (!out.rows.empty()) out.mean_abs_energy_err = abs_err / static_cast<double>(out.rows.size());
  return out;
}

Eigen::VectorXd trial_initial_state(std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0xc0ffee);
  std::uniform_real_distribution<double> paddle(0.2, 0.4);
  std::uniform_real_distribution<double> gap(0.3, 0.8);
  Eigen::VectorXd x(4);
  x[2] = paddle(rng);
  x[0] = x[2] + gap(rng);
  x[1] = 0.0;
  x[3] = 0.0;
  return x;
}

nlohmann::json TrialSummary::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < trials.size(); ++i) {
    arr.push_back({{"seed", trials[i].first},
                   {"cost", trials[i].second},
                   {"mean_abs_energy_err", i < mean_abs_energy_err.size() ? mean_abs_energy_err[i] : 0.0}});
  }
  return {{"trials", arr}, {"mean", mean}, {"std", std}};
}

TrialSummary summarize(const std::vector<std::uint64_t>& seeds, const std::vector<EpisodeResult>& episodes) {
  TrialSummary s;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    s.trials.emplace_back(seeds[i], episodes[i].total_cost);
    s.mean_abs_energy_err.push_back(episodes[i].mean_abs_energy_err);
    s.mean += episodes[i].total_cost;
  }
  const double n = static_cast<double>(episodes.size());
  if (n > 0) s.mean /= n;
  for (const auto& e : episodes) s.std += (e.total_cost - s.mean) * (e.total_cost - s.mean);
  if (n > 1) s.std = std::sqrt(s.std / (n - 1));
  else s.std = 0.0;
  return s;
}

}  // namespace chyll::control
