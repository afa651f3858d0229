#pragma once

// Event-driven simulation of the benchmark hybrid systems: flat torus and
// Klein bottle on the unit square, the bouncing ball, and the ball/paddle
// juggler. Samples are recorded on a uniform grid only; a reset inside a
// sample interval shows up as a jump between consecutive samples.

#include <Eigen/Dense>

#include "json.hpp"

#include <functional>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace chyll::sim {

using State = Eigen::VectorXd;

enum class SystemKind { torus, klein, bouncing_ball, juggler };

SystemKind system_from_string(std::string_view name);
std::string to_string(SystemKind kind);

struct SystemParams {
  double gravity = 9.81;                  // g, m/s^2
  double restitution = 1.0;               // alpha for the bouncing ball
  Eigen::Vector2d drift{0.3, 0.2};        // c for torus/klein, per unit time
  double paddle_mass = 1.0;               // m, kg
  double pd_gain = 20.0;                  // K, N s/m
  bool literal_pd_sign = false;           // use f = K(v_p - a) instead of K(a - v_p)

  nlohmann::json to_json() const;
  // Unknown keys are rejected.
  static SystemParams from_json(const nlohmann::json& j);
};

struct Guard {
  std::string name;
  // Signed distance: positive inside the domain, <= 0 once the guard is reached.
  std::function<double(const State&)> distance;
  // True when the flow at the state points through the guard.
  std::function<bool(const State&)> active;
  std::function<State(const State&)> reset;
};

struct HybridSystemSpec {
  SystemKind kind = SystemKind::torus;
  int state_dim = 2;
  int action_dim = 0;
  SystemParams params;
  std::function<State(const State&, double action)> vector_field;
  std::vector<Guard> guards;
  // Distance outside the closed domain (0 when inside).
  std::function<double(const State&)> domain_violation;
  double max_substep = 0.05;

  std::string name() const { return to_string(kind); }
};

HybridSystemSpec make_system(SystemKind kind, const SystemParams& params = {});

struct Trajectory {
  int traj_id = 0;
  std::vector<double> times;
  std::vector<State> states;
  // Juggler only: actions[k] is held on [t_k, t_{k+1}); size == states.size() - 1.
  std::vector<State> actions;
  // transitions[k]: a reset fired inside (t_k, t_{k+1}]. Evaluation only.
  std::vector<bool> transitions;

  std::size_t size() const { return states.size(); }
};

struct Dataset {
  std::string system;
  double dt = 0.0;
  SystemParams params;
  std::vector<Trajectory> trajectories;
  std::vector<int> train_ids;
  std::vector<int> test_ids;

  const Trajectory& by_id(int traj_id) const;
  int state_dim() const;
  int action_dim() const;
};

// Reset maps. Each throws SimulationError when the point is not on its guard.
State reset_torus(const State& x, double tol = 1e-9);
State reset_klein(const State& x, double tol = 1e-9);
State reset_ball(const State& x, double restitution, double tol = 1e-9);

struct StepStats {
  int resets = 0;
  double max_guard_residual = 0.0;
};

// Advances one sample interval of length dt with the action held constant.
State advance(const HybridSystemSpec& spec, const State& x, double action, double dt, StepStats* stats = nullptr);

// RK4 with guard localization by bisection; see file comment.
Trajectory simulate(const HybridSystemSpec& spec, const State& x0, double dt, int steps,
                    const std::vector<State>* actions = nullptr, StepStats* stats = nullptr);

// One controlled juggler step: state (x_b, v_b, x_p, v_p), a = desired paddle velocity.
State juggler_step(const State& state, double action, double dt, const SystemParams& params = {});

using InitSampler = std::function<State(std::mt19937_64&)>;
// Returns the action for sample k given the current state; called every step.
using ActionSampler = std::function<double(std::mt19937_64&, const State&, int k)>;

InitSampler default_init_sampler(SystemKind kind);
ActionSampler default_action_sampler();

struct GenerateOptions {
  int count = 1000;
  double dt = 0.05;
  int steps = 80;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
};

Dataset generate_dataset(const HybridSystemSpec& spec, const GenerateOptions& opts,
                         const InitSampler& init = {}, const ActionSampler& action = {});

// JSON-lines: header line then one trajectory per line.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);
std::string dataset_to_string(const Dataset& ds);
Dataset dataset_from_string(const std::string& text);

}  // namespace chyll::sim
