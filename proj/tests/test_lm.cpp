#include "doctest.h"
#include "support.hpp"

#include "chyll/error.hpp"
#include "chyll/lm_refine.hpp"

using namespace chyll;
using test::random_matrix;

namespace {

ad::Mlp single_layer(const ad::Matrix& W, ad::Activation act) {
  return ad::Mlp({ad::Layer{ad::Tensor(W), ad::Tensor(ad::Matrix::Zero(1, W.rows())), act}});
}

ad::Mlp random_encoder(int n, int m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ad::Mlp::make(n, {16, 16}, m, ad::Activation::tanh, rng);
}

}  // namespace

TEST_SUITE("lm") {
  TEST_CASE("exact latent returns the start point untouched") {
    const auto enc = random_encoder(2, 4, 1);
    const Eigen::VectorXd x{{0.3, -0.7}};
    const auto r = lm::lm_project(enc, enc.eval(x), x);
    CHECK(r.x == x);
    CHECK(r.residual == 0.0);
    CHECK(r.accepted == 0);
    CHECK(r.converged);
  }

  TEST_CASE("linear encoder converges to the pseudo-inverse solution") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 10; ++trial) {
      const ad::Matrix A = random_matrix(5, 3, rng);
      const auto enc = single_layer(A, ad::Activation::identity);
      const Eigen::VectorXd z = random_matrix(5, 1, rng);
      const Eigen::VectorXd x0 = random_matrix(3, 1, rng, 3.0);
      const Eigen::MatrixXd Ad = A;
      const Eigen::VectorXd oracle = (Ad.transpose() * Ad).ldlt().solve(Ad.transpose() * z);
      const auto r = lm::lm_project(enc, z, x0);
      CHECK((r.x - oracle).cwiseAbs().maxCoeff() < 1e-8);
      CHECK(r.converged);
    }
  }

  TEST_CASE("elementwise tanh encoder recovers 0.5 from tanh(0.5)") {
    const auto enc = single_layer(ad::Matrix::Identity(3, 3), ad::Activation::tanh);
    const Eigen::VectorXd z = Eigen::VectorXd::Constant(3, std::tanh(0.5));
    const auto r = lm::lm_project(enc, z, Eigen::VectorXd::Zero(3));
    CHECK((r.x.array() - 0.5).abs().maxCoeff() < 1e-8);
    CHECK(r.residual < 1e-12);
  }

  TEST_CASE("accepted residuals never increase") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto enc = random_encoder(2, 4, seed);
      std::mt19937_64 rng(seed + 100);
      const Eigen::VectorXd target = random_matrix(2, 1, rng);
      const Eigen::VectorXd z = enc.eval(target) + Eigen::VectorXd(random_matrix(4, 1, rng, 0.05));
      const auto r = lm::lm_project(enc, z, Eigen::VectorXd(random_matrix(2, 1, rng)));
      REQUIRE(!r.accepted_residuals.empty());
      CHECK(r.accepted_residuals.size() == static_cast<std::size_t>(r.accepted) + 1);
      for (std::size_t k = 1; k < r.accepted_residuals.size(); ++k)
        CHECK(r.accepted_residuals[k] <= r.accepted_residuals[k - 1]);
      CHECK(r.residual == r.accepted_residuals.back());
    }
  }

  TEST_CASE("projecting a converged point again does not move it") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto enc = random_encoder(2, 4, seed + 50);
      std::mt19937_64 rng(seed);
      const Eigen::VectorXd x = random_matrix(2, 1, rng);
      const Eigen::VectorXd z = enc.eval(x) + Eigen::VectorXd(random_matrix(4, 1, rng, 0.1));
      lm::LmConfig cfg;
      cfg.max_iters = 500;
      const auto first = lm::lm_project(enc, z, x, cfg);
      const auto second = lm::lm_project(enc, z, first.x, cfg);
      CHECK((second.x - first.x).norm() < 1e-10 * (1.0 + first.x.norm()));
      CHECK(second.residual <= first.residual);
    }
  }

  TEST_CASE("rank-deficient encoder stays finite") {
    ad::Matrix A = ad::Matrix::Zero(2, 2);
    A(0, 0) = 1.0;
    const auto enc = single_layer(A, ad::Activation::identity);
    const auto r = lm::lm_project(enc, Eigen::VectorXd{{2.0, 1.0}}, Eigen::VectorXd::Zero(2));
    CHECK(r.x.allFinite());
    CHECK(r.x[0] == doctest::Approx(2.0).epsilon(1e-8));
    CHECK(r.residual == doctest::Approx(1.0).epsilon(1e-8));
  }

  TEST_CASE("config validation and dimension checks") {
    CHECK_THROWS_AS(lm::LmConfig::from_json({{"lambda_up", 0.5}}), ConfigError);
    CHECK_THROWS_AS(lm::LmConfig::from_json({{"max_iters", 0}}), ConfigError);
    CHECK_THROWS_AS(lm::LmConfig::from_json({{"tol_grad", -1.0}}), ConfigError);
    CHECK_THROWS_AS(lm::LmConfig::from_json({{"unknown", 1}}), ConfigError);
    const auto c = lm::LmConfig::from_json({{"max_iters", 7}});
    CHECK(c.max_iters == 7);
    CHECK(lm::LmConfig::from_json(c.to_json()).to_json() == c.to_json());
    const auto enc = random_encoder(2, 4, 3);
    CHECK_THROWS_AS(lm::lm_project(enc, Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(2)), NumericError);
  }
}
