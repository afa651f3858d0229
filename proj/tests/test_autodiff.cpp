#include "doctest.h"
#include "support.hpp"

#include "chyll/adam.hpp"
#include "chyll/error.hpp"
#include "chyll/mlp.hpp"

#include <cmath>

using namespace chyll;
using ad::Matrix;
using ad::Var;
using test::random_matrix;

namespace {

// Straight-line re-evaluation of an Mlp with scalar loops.
std::vector<double> interpret(const ad::Mlp& net, std::vector<double> x) {
  for (const auto& layer : net.layers()) {
    const Matrix& W = layer.weight.value;
    std::vector<double> y(static_cast<std::size_t>(W.rows()));
    for (Eigen::Index o = 0; o < W.rows(); ++o) {
      double s = layer.bias.value(0, o);
      for (Eigen::Index i = 0; i < W.cols(); ++i) s += W(o, i) * x[static_cast<std::size_t>(i)];
      switch (layer.activation) {
        case ad::Activation::tanh: s = std::tanh(s); break;
        case ad::Activation::relu: s = s > 0 ? s : 0.0; break;
        case ad::Activation::identity: break;
      }
      y[static_cast<std::size_t>(o)] = s;
    }
    x = std::move(y);
  }
  return x;
}

Eigen::MatrixXd fd_jacobian(const ad::Mlp& net, const Eigen::VectorXd& x, double h = 1e-6) {
  Eigen::MatrixXd J(net.out_dim(), net.in_dim());
  for (int j = 0; j < net.in_dim(); ++j) {
    Eigen::VectorXd xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    J.col(j) = (net.eval(xp) - net.eval(xm)) / (2 * h);
  }
  return J;
}

}  // namespace

TEST_SUITE("autodiff") {
  TEST_CASE("identity layer passes input through") {
    ad::Layer l{ad::Tensor(Matrix::Identity(2, 2)), ad::Tensor(Matrix::Zero(1, 2)), ad::Activation::identity};
    ad::Mlp net({l});
    const Eigen::VectorXd y = net.eval(Eigen::VectorXd{{1.0, 2.0}});
    CHECK(y[0] == 1.0);
    CHECK(y[1] == 2.0);
  }

  TEST_CASE("zero tanh layer maps everything to zero") {
    ad::Layer l{ad::Tensor(Matrix::Zero(3, 2)), ad::Tensor(Matrix::Zero(1, 3)), ad::Activation::tanh};
    ad::Mlp net({l});
    CHECK(net.eval(Eigen::VectorXd{{5.0, -7.0}}).isZero(0.0));
  }

  TEST_CASE("forward matches a straight-line interpreter") {
    std::mt19937_64 rng(3);
    auto net = ad::Mlp::make(2, {5}, 3, ad::Activation::tanh, rng);
    for (auto& l : net.layers()) l.bias.value = random_matrix(1, l.bias.cols(), rng);
    const auto ref = interpret(net, {0.3, 0.7});
    ad::Tape tape;
    const Var y = net.forward(tape, tape.constant(Matrix{{0.3, 0.7}}));
    for (int i = 0; i < 3; ++i) CHECK(y.value()(0, i) == doctest::Approx(ref[static_cast<std::size_t>(i)]).epsilon(1e-14));
  }

  TEST_CASE("gradient of sum(W x) is x broadcast over rows") {
    std::mt19937_64 rng(1);
    ad::Tensor W(random_matrix(3, 2, rng));
    const Matrix x{{2.0}, {-5.0}};
    ad::Tape tape;
    tape.backward(ad::sum(ad::matmul(tape.bind(W), tape.constant(x))));
    for (int r = 0; r < 3; ++r) {
      CHECK(W.grad(r, 0) == 2.0);
      CHECK(W.grad(r, 1) == -5.0);
    }
  }

  TEST_CASE("mse against zero has gradient y for two elements") {
    ad::Tensor y(Matrix{{3.0, 4.0}});
    ad::Tape tape;
    tape.backward(ad::mse(tape.bind(y), tape.constant(Matrix::Zero(1, 2))));
    CHECK(y.grad(0, 0) == doctest::Approx(3.0));
    CHECK(y.grad(0, 1) == doctest::Approx(4.0));
  }

  TEST_CASE("three-layer tanh net passes the finite-difference check") {
    std::mt19937_64 rng(11);
    auto net = ad::Mlp::make(3, {16, 16}, 2, ad::Activation::tanh, rng);
    for (auto& l : net.layers()) l.bias.value = random_matrix(1, l.bias.cols(), rng, 0.3);
    const Matrix x = random_matrix(5, 3, rng);
    const Matrix target = random_matrix(5, 2, rng);
    const auto res = test::check_gradients(net.parameters(), [&](ad::Tape& t) {
      return ad::mse(net.forward(t, t.constant(x)), t.constant(target));
    });
    CHECK(res.checked == net.parameter_count());
    CHECK(res.max_rel < 1e-4);
  }

  TEST_CASE("every op passes the finite-difference check") {
    std::mt19937_64 rng(5);
    ad::Tensor A(random_matrix(4, 3, rng)), B(random_matrix(4, 3, rng)), C(random_matrix(3, 2, rng));
    ad::Tensor b(random_matrix(1, 2, rng)), s(Matrix{{0.4}}), row(random_matrix(1, 3, rng));
    using Fn = std::function<Var(ad::Tape&, Var, Var, Var, Var, Var, Var)>;
    const std::vector<std::pair<const char*, Fn>> ops = {
        {"linear", [](ad::Tape&, Var a, Var b2, Var, Var bb, Var, Var) { return ad::linear(a, ad::slice_rows(b2, 0, 2), bb); }},
        {"matmul", [](ad::Tape&, Var a, Var, Var c, Var, Var, Var) { return ad::matmul(a, c); }},
        {"matmul_nt", [](ad::Tape&, Var a, Var b2, Var, Var, Var, Var) { return ad::matmul_nt(a, b2); }},
        {"col_broadcast", [](ad::Tape&, Var, Var, Var c, Var, Var, Var) { return ad::col_broadcast(c, 1, 5); }},
        {"add", [](ad::Tape&, Var a, Var b2, Var, Var, Var, Var) { return ad::add(a, b2); }},
        {"sub", [](ad::Tape&, Var a, Var b2, Var, Var, Var, Var) { return ad::sub(a, b2); }},
        {"mul", [](ad::Tape&, Var a, Var b2, Var, Var, Var, Var) { return ad::mul(a, b2); }},
        {"axpy", [](ad::Tape&, Var a, Var b2, Var, Var, Var, Var) { return ad::axpy(a, -0.7, b2); }},
        {"add_const", [](ad::Tape&, Var a, Var, Var, Var, Var, Var) { return ad::add_const(a, 0.3); }},
        {"sub_scalar_var", [](ad::Tape&, Var a, Var, Var, Var, Var sv, Var) { return ad::sub_scalar_var(a, sv); }},
        {"sub_row", [](ad::Tape&, Var a, Var, Var, Var, Var, Var r) { return ad::sub_row(a, r); }},
        {"tanh", [](ad::Tape&, Var a, Var, Var, Var, Var, Var) { return ad::tanh(a); }},
        {"relu", [](ad::Tape&, Var a, Var, Var, Var, Var, Var) { return ad::relu(a); }},
        {"exp", [](ad::Tape&, Var a, Var, Var, Var, Var, Var) { return ad::exp(ad::scale(a, 0.5)); }},
        {"one_minus_square", [](ad::Tape&, Var a, Var, Var, Var, Var, Var) { return ad::one_minus_square(a); }},
        {"square", [](ad::Tape&, Var a, Var, Var, Var, Var, Var) { return ad::square(a); }},
        {"mean", [](ad::Tape&, Var a, Var, Var, Var, Var, Var) { return ad::mean(a); }},
        {"row_sum", [](ad::Tape&, Var a, Var, Var, Var, Var, Var) { return ad::row_sum(a); }},
        {"col_mean", [](ad::Tape&, Var a, Var, Var, Var, Var, Var) { return ad::col_mean(a); }},
        {"slice_rows", [](ad::Tape&, Var a, Var, Var, Var, Var, Var) { return ad::slice_rows(a, 1, 2); }},
        {"gather_rows", [](ad::Tape&, Var a, Var, Var, Var, Var, Var) { return ad::gather_rows(a, {3, 0, 3}); }},
        {"concat_cols", [](ad::Tape&, Var a, Var b2, Var, Var, Var, Var) { return ad::concat_cols(a, b2); }},
        {"squared_diff_sum", [](ad::Tape&, Var a, Var b2, Var, Var, Var, Var) { return ad::squared_diff_sum(a, b2); }},
        {"mse", [](ad::Tape&, Var a, Var b2, Var, Var, Var, Var) { return ad::mse(a, b2); }},
    };
    // Probe weights make the scalarization sensitive to every output element.
    for (const auto& [name, op] : ops) {
      CAPTURE(name);
      const auto res = test::check_gradients({&A, &B, &C, &b, &s, &row}, [&](ad::Tape& t) {
        const Var y = op(t, t.bind(A), t.bind(B), t.bind(C), t.bind(b), t.bind(s), t.bind(row));
        std::mt19937_64 probe_rng(99);
        const Matrix probe = random_matrix(y.rows(), y.cols(), probe_rng);
        return ad::sum(ad::mul(y, t.constant(probe)));
      });
      CHECK(res.max_rel < 1e-6);
    }
  }

  TEST_CASE("backward of a sum equals the sum of separate backwards") {
    std::mt19937_64 rng(2);
    auto net = ad::Mlp::make(2, {8}, 2, ad::Activation::tanh, rng);
    const Matrix x = random_matrix(6, 2, rng);
    const auto loss1 = [&](ad::Tape& t) { return ad::mean(ad::square(net.forward(t, t.constant(x)))); };
    const auto loss2 = [&](ad::Tape& t) { return ad::sum(ad::tanh(net.forward(t, t.constant(x)))); };
    std::vector<Matrix> g1, g2, g12;
    const auto grads = [&](const std::function<Var(ad::Tape&)>& f, std::vector<Matrix>& out) {
      for (auto* p : net.parameters()) p->zero_grad();
      ad::Tape t;
      t.backward(f(t));
      for (auto* p : net.parameters()) out.push_back(p->grad);
    };
    grads(loss1, g1);
    grads(loss2, g2);
    grads([&](ad::Tape& t) { return ad::add(loss1(t), loss2(t)); }, g12);
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK((g1[i] + g2[i] - g12[i]).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("backward rejects a non-scalar loss and a consumed tape") {
    ad::Tensor w(Matrix::Ones(2, 2));
    ad::Tape tape;
    const Var v = tape.bind(w);
    CHECK_THROWS_AS(tape.backward(v), NumericError);
    const Var l = ad::sum(v);
    tape.backward(l);
    CHECK_THROWS_AS(tape.backward(l), NumericError);
  }

  TEST_CASE("non-finite results are an error") {
    ad::Tape tape;
    CHECK_THROWS_AS(ad::exp(tape.constant(Matrix::Constant(1, 1, 1000.0))), NumericError);
    CHECK_THROWS_AS(ad::add(tape.constant(Matrix::Zero(1, 2)), tape.constant(Matrix::Zero(2, 1))), NumericError);
  }

  TEST_CASE("jacobian of a linear map is its matrix") {
    const Matrix A{{1.0, -2.0}, {0.5, 3.0}, {4.0, 0.0}};
    ad::Layer l{ad::Tensor(A), ad::Tensor(Matrix::Zero(1, 3)), ad::Activation::identity};
    ad::Mlp net({l});
    CHECK((net.jacobian(Eigen::VectorXd{{0.2, -0.9}}) - Eigen::MatrixXd(A)).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("jacobian of elementwise tanh is diag(1 - tanh^2)") {
    ad::Layer l{ad::Tensor(Matrix::Identity(3, 3)), ad::Tensor(Matrix::Zero(1, 3)), ad::Activation::tanh};
    ad::Mlp net({l});
    const Eigen::VectorXd x{{0.1, -0.8, 1.7}};
    const Eigen::MatrixXd J = net.jacobian(x);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const double t = std::tanh(x[i]);
        CHECK(J(i, j) == doctest::Approx(i == j ? 1.0 - t * t : 0.0).epsilon(1e-14));
      }
  }

  TEST_CASE("jacobian and tape tangents match finite differences") {
    std::mt19937_64 rng(8);
    auto net = ad::Mlp::make(3, {12, 12}, 4, ad::Activation::tanh, rng);
    const Eigen::VectorXd x{{0.3, -0.2, 0.9}};
    const Eigen::MatrixXd J = net.jacobian(x);
    const Eigen::MatrixXd F = fd_jacobian(net, x);
    for (Eigen::Index i = 0; i < J.size(); ++i) CHECK(test::rel_error(J.data()[i], F.data()[i]) < 1e-4);
    ad::Tape tape;
    const auto tf = net.forward_with_tangents(tape, tape.constant(Matrix(x.transpose())));
    for (int j = 0; j < 3; ++j)
      for (int o = 0; o < 4; ++o) CHECK(tf.tangents[static_cast<std::size_t>(j)].value()(0, o) == doctest::Approx(J(o, j)).epsilon(1e-12));
  }

  TEST_CASE("tangent-carrying forward is differentiable") {
    std::mt19937_64 rng(4);
    auto net = ad::Mlp::make(2, {6}, 3, ad::Activation::tanh, rng);
    const Matrix x = random_matrix(3, 2, rng);
    const auto res = test::check_gradients(net.parameters(), [&](ad::Tape& t) {
      const auto tf = net.forward_with_tangents(t, t.constant(x));
      return ad::add(ad::sum(ad::square(tf.tangents[0])), ad::sum(ad::mul(tf.tangents[0], tf.tangents[1])));
    });
    CHECK(res.max_rel < 1e-4);
  }

  TEST_CASE("initialization is deterministic under the seed") {
    std::mt19937_64 r1(42), r2(42);
    const auto a = ad::Mlp::make(3, {7, 7}, 2, ad::Activation::tanh, r1);
    const auto b = ad::Mlp::make(3, {7, 7}, 2, ad::Activation::tanh, r2);
    CHECK(a.to_json("encoder") == b.to_json("encoder"));
    CHECK(a.layers()[0].bias.value.isZero(0.0));
  }

  TEST_CASE("checkpoint round trip keeps the exact format") {
    std::mt19937_64 rng(6);
    const auto net = ad::Mlp::make(2, {4}, 3, ad::Activation::relu, rng);
    const auto j = net.to_json("decoder");
    for (const char* key : {"version", "role", "dims", "activations", "weights", "biases"}) CHECK(j.contains(key));
    std::string role;
    const auto back = ad::Mlp::from_json(j, &role);
    CHECK(role == "decoder");
    CHECK(back.to_json("decoder") == j);
    CHECK(j["dims"] == nlohmann::json({2, 4, 3}));
    CHECK(j["activations"] == nlohmann::json({"relu", "identity"}));
  }

  TEST_CASE("adam: zero gradient leaves parameters and decays moments") {
    std::vector<Matrix> p{Matrix{{1.0, -2.0}}};
    ad::AdamState st;
    st.m = {Matrix{{0.5, 0.5}}};
    st.v = {Matrix{{0.25, 0.25}}};
    st.step = 3;
    const Matrix m0 = st.m[0];
    st.lr = 0.0;
    ad::adam_step(p, {Matrix::Zero(1, 2)}, st);
    CHECK(p[0] == Matrix{{1.0, -2.0}});
    CHECK(st.m[0](0, 0) == doctest::Approx(0.9 * m0(0, 0)));
    CHECK(st.v[0](0, 0) == doctest::Approx(0.999 * 0.25));
    CHECK(st.step == 4);
  }

  TEST_CASE("adam: first step moves by lr against the gradient sign") {
    std::vector<Matrix> p{Matrix{{0.0, 0.0, 0.0}}};
    ad::AdamState st;
    st.lr = 0.01;
    ad::adam_step(p, {Matrix{{3.0, -0.2, 1e-3}}}, st);
    CHECK(p[0](0, 0) == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(p[0](0, 1) == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(p[0](0, 2) == doctest::Approx(-0.01).epsilon(1e-4));
  }

  TEST_CASE("adam: 100 steps on (w - 3)^2") {
    std::vector<Matrix> w{Matrix::Zero(1, 1)};
    ad::AdamState st;
    st.lr = 0.1;
    for (int i = 0; i < 100; ++i) ad::adam_step(w, {Matrix::Constant(1, 1, 2.0 * (w[0](0, 0) - 3.0))}, st);
    CHECK(std::abs(w[0](0, 0) - 3.0) < 0.05);
  }

  TEST_CASE("adam: shape mismatch is rejected") {
    std::vector<Matrix> p{Matrix::Zero(2, 2)};
    ad::AdamState st;
    CHECK_THROWS(ad::adam_step(p, {Matrix::Zero(1, 2)}, st));
  }
}
