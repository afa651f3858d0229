#include "doctest.h"

#include "chyll/control.hpp"
#include "chyll/error.hpp"

#include <cmath>
#include <cstdlib>
#include <limits>

using namespace chyll;
using control::Matrix;

namespace {

// Returns a fixed state for every sample and remembers the sampled actions.
class ConstantModel final : public control::ControlledModel {
 public:
  explicit ConstantModel(Eigen::VectorXd state) : state_(std::move(state)) {}
  std::vector<Matrix> rollout(const Eigen::VectorXd&, const Matrix& actions, double) const override {
    last = actions;
    Matrix x = state_.transpose().replicate(actions.rows(), 1);
    return std::vector<Matrix>(static_cast<std::size_t>(actions.cols()), x);
  }
  std::string name() const override { return "constant"; }
  mutable Matrix last;

 private:
  Eigen::VectorXd state_;
};

Eigen::VectorXd state(double xb, double vb, double xp, double vp) {
  Eigen::VectorXd x(4);
  x << xb, vb, xp, vp;
  return x;
}

control::MppiConfig quick_config() {
  control::MppiConfig c;
  c.horizon = 16;
  c.samples = 32;
  c.seed = 4;
  return c;
}

}  // namespace

TEST_SUITE("control") {
  TEST_CASE("juggling cost examples") {
    control::MppiConfig cfg;
    const double g = 9.81;
    CHECK(cfg.e_des(g) == doctest::Approx(11.772).epsilon(1e-12));
    CHECK(control::juggling_cost({state(1.2, 0.0, 0.4, 0.0)}, cfg, g) == doctest::Approx(0.0).epsilon(1e-20));
    CHECK(control::juggling_cost({state(1.2, 0.0, cfg.x_p_max + 0.1, 0.0)}, cfg, g) ==
          doctest::Approx(1.0).epsilon(1e-12));
    CHECK(control::juggling_cost({state(1.2, 0.0, cfg.x_p_min - 0.2, 0.0)}, cfg, g) ==
          doctest::Approx(2.0).epsilon(1e-12));
    const double e = 0.5 * 4.0 + g * 0.5 - cfg.e_des(g);
    CHECK(control::juggling_cost({state(0.5, 2.0, 0.3, 0.0), state(0.5, -2.0, 0.3, 0.0)}, cfg, g) ==
          doctest::Approx(2 * e * e).epsilon(1e-12));
  }

  TEST_CASE("weights: equal costs, softmax limit, two-sample arithmetic") {
    const auto uniform = control::mppi_weights(Eigen::VectorXd::Constant(8, 3.5), 1.0);
    for (double w : uniform) CHECK(w == doctest::Approx(0.125).epsilon(1e-15));
    Eigen::VectorXd c(4);
    c << 10.0, -1e6, 10.0, 11.0;
    const auto sharp = control::mppi_weights(c, 0.01);
    CHECK(sharp[1] == doctest::Approx(1.0).epsilon(1e-15));
    const auto two = control::mppi_weights(Eigen::VectorXd{{0.0, 0.7}}, 0.7);
    CHECK(two[0] == doctest::Approx(0.7310585786).epsilon(1e-9));
    CHECK(two[1] == doctest::Approx(0.2689414214).epsilon(1e-9));
  }

  TEST_CASE("weights: normalized, monotone, shift invariant, non-finite ignored") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 5.0);
    for (int trial = 0; trial < 50; ++trial) {
      Eigen::VectorXd c(20);
      for (auto& v : c) v = n(rng);
      const auto w = control::mppi_weights(c, 2.0);
      CHECK(std::abs(w.sum() - 1.0) < 1e-12);
      for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 20; ++j)
          if (c[i] <= c[j]) CHECK(w[i] >= w[j]);
      const auto shifted = control::mppi_weights(c.array() + 1234.5, 2.0);
      CHECK((w - shifted).cwiseAbs().maxCoeff() < 1e-12);
    }
    Eigen::VectorXd bad{{1.0, std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::infinity()}};
    bad[1] = std::numeric_limits<double>::infinity();
    const auto w = control::mppi_weights(bad, 1.0);
    CHECK(w[0] == 1.0);
    CHECK(w[1] == 0.0);
    CHECK(w[2] == 0.0);
  }

  TEST_CASE("equal rollout costs average the samples") {
    const ConstantModel model(state(1.0, 0.0, 0.3, 0.0));
    auto cfg = quick_config();
    std::mt19937_64 rng(3);
    const Eigen::VectorXd nominal = Eigen::VectorXd::LinSpaced(cfg.horizon, 0.0, 1.5);
    const auto r = control::mppi_plan(model, state(1.0, 0.0, 0.3, 0.0), nominal, cfg, 9.81, rng);
    CHECK(!r.degenerate);
    const Eigen::RowVectorXd mean = model.last.colwise().mean();
    CHECK(r.action == doctest::Approx(mean[0]).epsilon(1e-12));
    for (int k = 0; k + 1 < cfg.horizon; ++k) CHECK(r.nominal[k] == doctest::Approx(mean[k + 1]).epsilon(1e-12));
    CHECK(r.nominal[cfg.horizon - 1] == r.nominal[cfg.horizon - 2]);
    CHECK(model.last.maxCoeff() <= cfg.action_max);
    CHECK(model.last.minCoeff() >= cfg.action_min);
  }

  TEST_CASE("all non-finite rollouts keep the nominal plan") {
    const ConstantModel model(Eigen::VectorXd::Constant(4, std::numeric_limits<double>::quiet_NaN()));
    auto cfg = quick_config();
    std::mt19937_64 rng(3);
    const Eigen::VectorXd nominal = Eigen::VectorXd::Constant(cfg.horizon, 0.25);
    const auto r = control::mppi_plan(model, state(1.0, 0.0, 0.3, 0.0), nominal, cfg, 9.81, rng);
    CHECK(r.degenerate);
    CHECK(r.action == 0.25);
    CHECK_THROWS_AS(control::mppi_plan(model, state(1.0, 0.0, 0.3, 0.0), Eigen::VectorXd::Zero(3), cfg, 9.81, rng),
                    ConfigError);
  }

  TEST_CASE("simulator rollout matches stepping the plant") {
    const control::SimulatorModel model(sim::SystemParams{});
    Matrix A(2, 5);
    A << 0.5, 0.5, -0.5, 1.0, 0.0, -1.0, 0.0, 2.0, 0.0, 0.3;
    const auto x0 = state(1.0, 0.0, 0.3, 0.0);
    const auto out = model.rollout(x0, A, 0.025);
    REQUIRE(out.size() == 5);
    for (int i = 0; i < 2; ++i) {
      sim::State s = x0;
      for (int k = 0; k < 5; ++k) {
        s = sim::juggler_step(s, A(i, k), 0.025);
        CHECK(Eigen::VectorXd(out[static_cast<std::size_t>(k)].row(i).transpose()) == s);
      }
    }
  }

  TEST_CASE("closed loop is deterministic across reruns and thread counts") {
    const control::SimulatorModel model(sim::SystemParams{});
    const auto cfg = quick_config();
    const auto x0 = control::trial_initial_state(7);
    const auto a = control::closed_loop_run({}, &model, control::Planner::mppi, cfg, 1.0, x0);
    const auto b = control::closed_loop_run({}, &model, control::Planner::mppi, cfg, 1.0, x0);
    ::setenv("CHYLL_THREADS", "3", 1);
    const auto c = control::closed_loop_run({}, &model, control::Planner::mppi, cfg, 1.0, x0);
    ::unsetenv("CHYLL_THREADS");
    CHECK(a.rows.size() == 40);
    CHECK(a.to_csv() == b.to_csv());
    CHECK(a.to_csv() == c.to_csv());
    CHECK(a.to_csv().rfind("t,x_b,v_b,x_p,v_p,a,inst_cost,energy_err\n", 0) == 0);
  }

  TEST_CASE("oracle planner beats the zero-action baseline") {
    const control::SimulatorModel model(sim::SystemParams{});
    auto cfg = quick_config();
    cfg.horizon = 32;
    cfg.samples = 64;
    const auto x0 = control::trial_initial_state(11);
    const auto mppi = control::closed_loop_run({}, &model, control::Planner::mppi, cfg, 4.0, x0);
    const auto zero = control::closed_loop_run({}, nullptr, control::Planner::zero_action, cfg, 4.0, x0);
    CHECK(!mppi.aborted);
    CHECK(!zero.aborted);
    CHECK(mppi.total_cost < zero.total_cost);
    CHECK(mppi.mean_abs_energy_err < 0.5 * zero.mean_abs_energy_err);
    for (const auto& r : zero.rows) CHECK(r.action == 0.0);
  }

  TEST_CASE("trial summary and config parsing") {
    control::EpisodeResult e1, e2;
    e1.total_cost = 2.0;
    e2.total_cost = 4.0;
    const auto s = control::summarize({5, 6}, {e1, e2});
    CHECK(s.mean == 3.0);
    CHECK(s.std == doctest::Approx(std::sqrt(2.0)));
    const auto j = s.to_json();
    CHECK(j.at("trials").size() == 2);
    CHECK(j.at("trials")[1].at("seed") == 6);
    CHECK_THROWS_AS(control::MppiConfig::from_json({{"lambda", 0.0}}), ConfigError);
    CHECK_THROWS_AS(control::MppiConfig::from_json({{"x_p_min", 1.0}}), ConfigError);
    CHECK_THROWS_AS(control::MppiConfig::from_json({{"bogus", 1}}), ConfigError);
    CHECK(control::MppiConfig::from_json({{"samples", 8}}).samples == 8);
    const auto x0 = control::trial_initial_state(3);
    CHECK(x0 == control::trial_initial_state(3));
    CHECK(x0[0] > x0[2]);
  }
}
