#include "chyll/hybrid_sim.hpp"

#include "chyll/error.hpp"
#include "chyll/io.hpp"
#include "chyll/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>

namespace chyll::sim {

namespace {

constexpr double kGuardTol = 1e-10;
constexpr double kDomainTol = 1e-6;
constexpr int kMaxResetsPerInterval = 100;

State rk4(const HybridSystemSpec& spec, const State& x, double action, double h) {
  const State k1 = spec.vector_field(x, action);
  const State k2 = spec.vector_field(x + 0.5 * h * k1, action);
  const State k3 = spec.vector_field(x + 0.5 * h * k2, action);
  const State k4 = spec.vector_field(x + h * k3, action);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

std::string state_str(const State& x) {
  std::ostringstream ss;
  ss << "(";
  for (Eigen::Index i = 0; i < x.size(); ++i) ss << (i ? ", " : "") << x[i];
  ss << ")";
  return ss.str();
}

// Earliest tau in (0, h] with guard.distance(rk4(x, tau)) <= 0, given
// distance(x) > 0 >= distance(rk4(x, h)).
double locate_crossing(const HybridSystemSpec& spec, const Guard& guard, const State& x, double action, double h,
                       double* residual) {
  double lo = 0.0;
  double hi = h;
  double g_hi = guard.distance(rk4(spec, x, action, hi));
  for (int it = 0; it < 200 && std::abs(g_hi) >= kGuardTol && hi - lo > 0.0; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double g_mid = guard.distance(rk4(spec, x, action, mid));
    if (g_mid <= 0.0) {
      hi = mid;
      g_hi = g_mid;
    } else {
      lo = mid;
    }
  }
  *residual = std::abs(g_hi);
  return hi;
}

bool on_value(double v, double target, double tol) { return std::abs(v - target) <= tol; }

}  // namespace

SystemKind system_from_string(std::string_view name) {
  if (name == "torus") return SystemKind::torus;
  if (name == "klein") return SystemKind::klein;
  if (name == "bouncing_ball") return SystemKind::bouncing_ball;
  if (name == "juggler") return SystemKind::juggler;
  throw ConfigError("unknown system '" + std::string(name) + "' (expected torus|klein|bouncing_ball|juggler)");
}

std::string to_string(SystemKind kind) {
  switch (kind) {
    case SystemKind::torus:
      return "torus";
    case SystemKind::klein:
      return "klein";
    case SystemKind::bouncing_ball:
      return "bouncing_ball";
    case SystemKind::juggler:
      return "juggler";
  }
  return "torus";
}

nlohmann::json SystemParams::to_json() const {
  return {{"g", gravity},
          {"alpha", restitution},
          {"c", {drift[0], drift[1]}},
          {"m", paddle_mass},
          {"K", pd_gain},
          {"literal_pd_sign", literal_pd_sign}};
}

SystemParams SystemParams::from_json(const nlohmann::json& j) {
  SystemParams p;
  if (!j.is_object()) throw ConfigError("system params must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "g") {
        p.gravity = value.get<double>();
      } else if (key == "alpha") {
        p.restitution = value.get<double>();
      } else if (key == "c") {
        const auto c = value.get<std::vector<double>>();
        if (c.size() != 2) throw ConfigError("params.c must have two entries");
        p.drift = {c[0], c[1]};
      } else if (key == "m") {
        p.paddle_mass = value.get<double>();
      } else if (key == "K") {
        p.pd_gain = value.get<double>();
      } else if (key == "literal_pd_sign") {
        p.literal_pd_sign = value.get<bool>();
      } else {
        throw ConfigError("unknown system parameter '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("system parameter '" + key + "': " + e.what());
    }
  }
  if (!(p.gravity > 0.0)) throw ConfigError("params.g must be positive");
  if (!(p.restitution >= 0.0 && p.restitution <= 1.0)) throw ConfigError("params.alpha must lie in [0, 1]");
  if (p.drift[0] < 0.0 || p.drift[1] < 0.0) {
    throw ConfigError("params.c must be non-negative: guards sit on the x1=1 and x2=1 edges");
  }
  if (!(p.paddle_mass > 0.0) || !(p.pd_gain > 0.0)) throw ConfigError("params.m and params.K must be positive");
  return p;
}

State reset_torus(const State& x, double tol) {
  const bool g1 = on_value(x[0], 1.0, tol);
  const bool g2 = on_value(x[1], 1.0, tol);
  if (!g1 && !g2) throw SimulationError("reset_torus: " + state_str(x) + " is not on a guard");
  State y = x;
  if (g1) y[0] = 0.0;
  if (g2) y[1] = 0.0;
  return y;
}

State reset_klein(const State& x, double tol) {
  if (!on_value(x[0], 1.0, tol) && !on_value(x[1], 1.0, tol)) {
    throw SimulationError("reset_klein: " + state_str(x) + " is not on a guard");
  }
  // Sequential G1-then-G2 until no guard applies; (1,1) -> (0,1) -> (1,0) -> (0,0).
  State y = x;
  for (int i = 0; i < 4; ++i) {
    if (on_value(y[0], 1.0, tol)) {
      y[0] = 0.0;
    } else if (on_value(y[1], 1.0, tol)) {
      y = State{{1.0 - y[0], 0.0}};
    } else {
      break;
    }
  }
  return y;
}

State reset_ball(const State& x, double restitution, double tol) {
  if (!on_value(x[0], 0.0, tol)) throw SimulationError("reset_ball: height " + std::to_string(x[0]) + " is off the ground");
  if (x[1] > tol) throw SimulationError("reset_ball: upward velocity at the guard " + state_str(x));
  return State{{x[0], -restitution * x[1]}};
}

HybridSystemSpec make_system(SystemKind kind, const SystemParams& params) {
  HybridSystemSpec spec;
  spec.kind = kind;
  spec.params = params;
  switch (kind) {
    case SystemKind::torus:
    case SystemKind::klein: {
      spec.state_dim = 2;
      const Eigen::Vector2d c = params.drift;
      spec.vector_field = [c](const State&, double) -> State { return c; };
      const bool twist = kind == SystemKind::klein;
      auto reset = [twist](const State& x) { return twist ? reset_klein(x) : reset_torus(x); };
      spec.guards.push_back({"G1", [](const State& x) { return 1.0 - x[0]; }, [c](const State&) { return c[0] > 0.0; },
                             reset});
      spec.guards.push_back({"G2", [](const State& x) { return 1.0 - x[1]; }, [c](const State&) { return c[1] > 0.0; },
                             reset});
      spec.domain_violation = [](const State& x) {
        return std::max({0.0, -x[0], x[0] - 1.0, -x[1], x[1] - 1.0});
      };
      spec.max_substep = 1.0;  // constant field: RK4 is exact
      break;
    }
    case SystemKind::bouncing_ball: {
      spec.state_dim = 2;
      const double g = params.gravity;
      const double alpha = params.restitution;
      spec.vector_field = [g](const State& x, double) -> State { return State{{x[1], -g}}; };
      spec.guards.push_back({"ground", [](const State& x) { return x[0]; }, [](const State& x) { return x[1] <= 0.0; },
                             [alpha](const State& x) { return reset_ball(x, alpha); }});
      spec.domain_violation = [](const State& x) { return std::max(0.0, -x[0]); };
      spec.max_substep = 1.0;  // quadratic flow: RK4 is exact
      break;
    }
    case SystemKind::juggler: {
      spec.state_dim = 4;
      spec.action_dim = 1;
      const double g = params.gravity;
      const double k_over_m = params.pd_gain / params.paddle_mass;
      const double sign = params.literal_pd_sign ? -1.0 : 1.0;
      spec.vector_field = [g, k_over_m, sign](const State& x, double a) -> State {
        const double accel = sign * k_over_m * (a - x[3]) - g;
        return State{{x[1], -g, x[3], accel}};
      };
      // Elastic impact against a kinematic paddle: relative velocity reflects.
      spec.guards.push_back({"paddle", [](const State& x) { return x[0] - x[2]; },
                             [](const State& x) { return x[1] - x[3] < 0.0; },
                             [](const State& x) {
                               State y = x;
                               y[1] = 2.0 * x[3] - x[1];
                               return y;
                             }});
      spec.domain_violation = [](const State& x) { return std::max(0.0, x[2] - x[0]); };
      spec.max_substep = 0.0025;
      break;
    }
  }
  return spec;
}

State advance(const HybridSystemSpec& spec, const State& x, double action, double dt, StepStats* stats) {
  if (!(dt > 0.0)) throw SimulationError("advance: dt must be positive");
  State s = x;
  double remaining = dt;
  int resets = 0;
  while (remaining > 0.0) {
    const double h = std::min(remaining, spec.max_substep);
    const State s1 = rk4(spec, s, action, h);

    // Earliest guard event inside this substep.
    int hit = -1;
    double tau_hit = h;
    double residual_hit = 0.0;
    for (std::size_t gi = 0; gi < spec.guards.size(); ++gi) {
      const Guard& guard = spec.guards[gi];
      const double g0 = guard.distance(s);
      if (g0 <= 0.0) {
        if (guard.active(s)) {
          // Sitting on the guard and still moving into it.
          hit = static_cast<int>(gi);
          tau_hit = 0.0;
          residual_hit = std::abs(g0);
          break;
        }
        continue;
      }
      if (guard.distance(s1) > 0.0) continue;
      double residual = 0.0;
      const double tau = locate_crossing(spec, guard, s, action, h, &residual);
      if (hit < 0 || tau < tau_hit) {
        hit = static_cast<int>(gi);
        tau_hit = tau;
        residual_hit = residual;
      }
    }

    if (hit < 0) {
      s = s1;
      remaining -= h;
      if (remaining < 1e-15 * dt) remaining = 0.0;
      continue;
    }

    const Guard& guard = spec.guards[static_cast<std::size_t>(hit)];
    State at = tau_hit > 0.0 ? rk4(spec, s, action, tau_hit) : s;
    if (!guard.active(at)) {
      // Grazing contact: no impulse, integrate through.
      s = s1;
      remaining -= h;
      continue;
    }
    if (++resets > kMaxResetsPerInterval) {
      throw SimulationError("Zeno behaviour: more than " + std::to_string(kMaxResetsPerInterval) +
                            " resets within one sample interval near " + state_str(at));
    }
    if (stats) stats->max_guard_residual = std::max(stats->max_guard_residual, residual_hit);
    s = guard.reset(at);
    remaining -= tau_hit;
  }
  if (stats) stats->resets += resets;
  const double violation = spec.domain_violation(s);
  if (violation > kDomainTol) {
    throw SimulationError("state " + state_str(s) + " escaped the domain by " + std::to_string(violation));
  }
  return s;
}

Trajectory simulate(const HybridSystemSpec& spec, const State& x0, double dt, int steps,
                    const std::vector<State>* actions, StepStats* stats) {
  if (x0.size() != spec.state_dim) throw SimulationError("simulate: initial state has wrong dimension");
  if (!(dt > 0.0)) throw SimulationError("simulate: dt must be positive");
  if (steps < 0) throw SimulationError("simulate: negative step count");
  if (spec.domain_violation(x0) > kDomainTol) throw SimulationError("simulate: x0 " + state_str(x0) + " outside domain");
  if (spec.action_dim > 0 && (actions == nullptr || static_cast<int>(actions->size()) < steps)) {
    throw SimulationError("simulate: " + spec.name() + " needs one action per step");
  }
  Trajectory traj;
  traj.times.reserve(static_cast<std::size_t>(steps) + 1);
  traj.states.reserve(static_cast<std::size_t>(steps) + 1);
  traj.times.push_back(0.0);
  traj.states.push_back(x0);
  traj.transitions.assign(static_cast<std::size_t>(steps) + 1, false);
  State s = x0;
  for (int k = 0; k < steps; ++k) {
    const double a = spec.action_dim > 0 ? (*actions)[static_cast<std::size_t>(k)][0] : 0.0;
    StepStats local;
    s = advance(spec, s, a, dt, &local);
    if (stats) {
      stats->resets += local.resets;
      stats->max_guard_residual = std::max(stats->max_guard_residual, local.max_guard_residual);
    }
    traj.transitions[static_cast<std::size_t>(k)] = local.resets > 0;
    traj.times.push_back(static_cast<double>(k + 1) * dt);
    traj.states.push_back(s);
    if (spec.action_dim > 0) traj.actions.push_back((*actions)[static_cast<std::size_t>(k)]);
  }
  return traj;
}

State juggler_step(const State& state, double action, double dt, const SystemParams& params) {
  static thread_local std::optional<std::pair<SystemParams, HybridSystemSpec>> cache;
  const auto same = [&](const SystemParams& p) {
    return p.gravity == params.gravity && p.paddle_mass == params.paddle_mass && p.pd_gain == params.pd_gain &&
           p.literal_pd_sign == params.literal_pd_sign;
  };
  if (!cache || !same(cache->first)) cache.emplace(params, make_system(SystemKind::juggler, params));
  if (state.size() != 4) throw SimulationError("juggler_step: state must be (x_b, v_b, x_p, v_p)");
  if (state[0] < state[2] - kDomainTol) throw SimulationError("juggler_step: ball below paddle " + state_str(state));
  return advance(cache->second, state, action, dt);
}

InitSampler default_init_sampler(SystemKind kind) {
  switch (kind) {
    case SystemKind::torus:
    case SystemKind::klein:
      return [](std::mt19937_64& rng) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const double a = u(rng);
        const double b = u(rng);
        return State{{a, b}};
      };
    case SystemKind::bouncing_ball:
      return [](std::mt19937_64& rng) {
        std::uniform_real_distribution<double> h(0.5, 2.0);
        std::uniform_real_distribution<double> v(-1.0, 1.0);
        const double a = h(rng);
        const double b = v(rng);
        return State{{a, b}};
      };
    case SystemKind::juggler:
      return [](std::mt19937_64& rng) {
        std::uniform_real_distribution<double> paddle(0.1, 0.6);
        std::uniform_real_distribution<double> gap(0.2, 1.4);
        std::uniform_real_distribution<double> vel(-2.0, 2.0);
        const double xp = paddle(rng);
        const double xb = xp + gap(rng);
        const double vb = vel(rng);
        return State{{xb, vb, xp, 0.0}};
      };
  }
  return {};
}

ActionSampler default_action_sampler() {
  // Piecewise-constant commands held for 4 samples. The whole planner action
  // range is covered at every paddle height; a weak pull toward a random
  // target height keeps the paddle from drifting away.
  struct Hold {
    double value = 0.0;
  };
  auto hold = std::make_shared<Hold>();
  return [hold](std::mt19937_64& rng, const State& x, int k) {
    if (k % 4 == 0) {
      std::uniform_real_distribution<double> target(0.1, 0.7);
      std::uniform_real_distribution<double> noise(-4.0, 4.0);
      const double t = target(rng);
      const double n = noise(rng);
      hold->value = std::clamp(t - x[2] + n, -4.0, 4.0);
    }
    return hold->value;
  };
}

const Trajectory& Dataset::by_id(int traj_id) const {
  for (const auto& t : trajectories) {
    if (t.traj_id == traj_id) return t;
  }
  throw ConfigError("dataset has no trajectory with id " + std::to_string(traj_id));
}

int Dataset::state_dim() const {
  return trajectories.empty() ? 0 : static_cast<int>(trajectories.front().states.front().size());
}

int Dataset::action_dim() const {
  return trajectories.empty() || trajectories.front().actions.empty()
             ? 0
             : static_cast<int>(trajectories.front().actions.front().size());
}

Dataset generate_dataset(const HybridSystemSpec& spec, const GenerateOptions& opts, const InitSampler& init,
                         const ActionSampler& action) {
  if (opts.count < 2) throw ConfigError("generate: need at least 2 trajectories for a train/test split");
  if (!(opts.dt > 0.0) || opts.steps < 2) throw ConfigError("generate: dt must be positive and steps >= 2");
  if (!(opts.train_fraction > 0.0 && opts.train_fraction < 1.0)) throw ConfigError("generate: bad train fraction");
  const InitSampler sample_init = init ? init : default_init_sampler(spec.kind);
  Dataset ds;
  ds.system = spec.name();
  ds.dt = opts.dt;
  ds.params = spec.params;
  ds.trajectories.resize(static_cast<std::size_t>(opts.count));
  const auto generate_one = [&](std::size_t slot) {
    const int id = static_cast<int>(slot);
    std::seed_seq seq{static_cast<std::uint32_t>(opts.seed & 0xffffffffu), static_cast<std::uint32_t>(opts.seed >> 32),
                      static_cast<std::uint32_t>(id), 0x5eedu};
    std::mt19937_64 rng(seq);
    try {
      const State x0 = sample_init(rng);
      Trajectory traj;
      if (spec.action_dim > 0) {
        const ActionSampler sample_action = action ? action : default_action_sampler();
        traj.times.push_back(0.0);
        traj.states.push_back(x0);
        traj.transitions.assign(static_cast<std::size_t>(opts.steps) + 1, false);
        State s = x0;
        for (int k = 0; k < opts.steps; ++k) {
          const double a = sample_action(rng, s, k);
          StepStats st;
          s = advance(spec, s, a, opts.dt, &st);
          traj.transitions[static_cast<std::size_t>(k)] = st.resets > 0;
          traj.actions.push_back(State{{a}});
          traj.times.push_back(static_cast<double>(k + 1) * opts.dt);
          traj.states.push_back(s);
        }
      } else {
        traj = simulate(spec, x0, opts.dt, opts.steps);
      }
      traj.traj_id = id;
      ds.trajectories[slot] = std::move(traj);
    } catch (const SimulationError& e) {
      throw SimulationError("generate: trajectory " + std::to_string(id) + " (seed " + std::to_string(opts.seed) +
                            ") failed: " + e.what());
    }
  };
  if (init || action) {
    for (std::size_t i = 0; i < ds.trajectories.size(); ++i) generate_one(i);
  } else {
    parallel_for(ds.trajectories.size(), generate_one);
  }
  std::vector<int> ids(static_cast<std::size_t>(opts.count));
  std::iota(ids.begin(), ids.end(), 0);
  std::mt19937_64 split_rng(opts.seed ^ 0x9e3779b97f4a7c15ull);
  std::shuffle(ids.begin(), ids.end(), split_rng);
  const int n_train =
      std::clamp(static_cast<int>(std::lround(opts.train_fraction * opts.count)), 1, opts.count - 1);
  ds.train_ids.assign(ids.begin(), ids.begin() + n_train);
  ds.test_ids.assign(ids.begin() + n_train, ids.end());
  std::sort(ds.train_ids.begin(), ds.train_ids.end());
  std::sort(ds.test_ids.begin(), ds.test_ids.end());
  return ds;
}

// ---- serialization -----------------------------------------------------

namespace {

nlohmann::json states_json(const std::vector<State>& states) {
  auto arr = nlohmann::json::array();
  for (const auto& s : states) arr.push_back(std::vector<double>(s.data(), s.data() + s.size()));
  return arr;
}

std::vector<State> states_from(const nlohmann::json& j) {
  std::vector<State> out;
  for (const auto& row : j) {
    const auto v = row.get<std::vector<double>>();
    out.push_back(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  return out;
}

void validate(const Dataset& ds) {
  std::vector<int> all = ds.train_ids;
  all.insert(all.end(), ds.test_ids.begin(), ds.test_ids.end());
  std::sort(all.begin(), all.end());
  std::vector<int> ids;
  for (const auto& t : ds.trajectories) ids.push_back(t.traj_id);
  std::sort(ids.begin(), ids.end());
  if (all != ids) throw ConfigError("dataset: train_ids/test_ids must be disjoint and cover every trajectory");
  for (const auto& t : ds.trajectories) {
    if (t.times.size() != t.states.size() || t.times.empty()) {
      throw ConfigError("dataset: trajectory " + std::to_string(t.traj_id) + " has mismatched times/states");
    }
    if (t.times.front() != 0.0) throw ConfigError("dataset: trajectory times must start at 0");
    for (std::size_t k = 1; k < t.times.size(); ++k) {
      if (!(t.times[k] > t.times[k - 1])) {
        throw ConfigError("dataset: trajectory " + std::to_string(t.traj_id) + " times not strictly increasing");
      }
    }
    if (!t.actions.empty() && t.actions.size() + 1 != t.states.size()) {
      throw ConfigError("dataset: trajectory " + std::to_string(t.traj_id) + " needs one action per interval");
    }
  }
}

}  // namespace

std::string dataset_to_string(const Dataset& ds) {
  std::string out;
  nlohmann::json header = {{"format", "chyll-dataset"}, {"version", 1},          {"system", ds.system},
                           {"dt", ds.dt},               {"params", ds.params.to_json()}, {"train_ids", ds.train_ids},
                           {"test_ids", ds.test_ids}};
  out += header.dump();
  out += '\n';
  for (const auto& t : ds.trajectories) {
    nlohmann::json line = {{"traj_id", t.traj_id}, {"times", t.times}, {"states", states_json(t.states)}};
    if (!t.actions.empty()) line["actions"] = states_json(t.actions);
    if (!t.transitions.empty()) line["transitions"] = t.transitions;
    out += line.dump();
    out += '\n';
  }
  return out;
}

Dataset dataset_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  Dataset ds;
  bool header = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!header) {
        if (j.value("format", "") != "chyll-dataset" || j.value("version", 0) != 1) {
          throw ConfigError("dataset: missing chyll-dataset v1 header");
        }
        ds.system = j.at("system").get<std::string>();
        system_from_string(ds.system);
        ds.dt = j.at("dt").get<double>();
        ds.params = SystemParams::from_json(j.at("params"));
        ds.train_ids = j.at("train_ids").get<std::vector<int>>();
        ds.test_ids = j.at("test_ids").get<std::vector<int>>();
        header = true;
        continue;
      }
      Trajectory t;
      t.traj_id = j.at("traj_id").get<int>();
      t.times = j.at("times").get<std::vector<double>>();
      t.states = states_from(j.at("states"));
      if (j.contains("actions")) t.actions = states_from(j.at("actions"));
      if (j.contains("transitions")) t.transitions = j.at("transitions").get<std::vector<bool>>();
      ds.trajectories.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header) throw ConfigError("dataset: empty file");
  validate(ds);
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) { io::write_file_atomic(path, dataset_to_string(ds)); }

Dataset load_dataset(const std::string& path) { return dataset_from_string(io::read_file(path)); }

}  // namespace chyll::sim
