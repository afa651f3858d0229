#pragma once

#include "chyll/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace chyll::test {

using ad::Matrix;

inline Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Relative error with an absolute floor: differences below `abs_floor` count as 0.
inline double rel_error(double a, double b, double abs_floor = 1e-8) {
  const double d = std::abs(a - b);
  if (d <= abs_floor) return 0.0;
  return d / std::max(std::abs(a), std::abs(b));
}

struct GradCheck {
  double max_rel = 0.0;
  std::size_t checked = 0;
};

// Compares reverse-mode gradients of `loss` with central differences over
// every element of `params`.
inline GradCheck check_gradients(const std::vector<ad::Tensor*>& params,
                                 const std::function<ad::Var(ad::Tape&)>& loss, double h = 1e-5,
                                 double abs_floor = 1e-8) {
  for (auto* p : params) p->zero_grad();
  {
    ad::Tape tape;
    tape.backward(loss(tape));
  }
  const auto eval = [&] {
    ad::Tape tape;
    return loss(tape).item();
  };
  GradCheck out;
  for (auto* p : params) {
    const Matrix analytic = p->grad;
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double saved = p->value.data()[i];
      p->value.data()[i] = saved + h;
      const double fp = eval();
      p->value.data()[i] = saved - h;
      const double fm = eval();
      p->value.data()[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      out.max_rel = std::max(out.max_rel, rel_error(analytic.data()[i], numeric, abs_floor));
      ++out.checked;
    }
  }
  return out;
}

}  // namespace chyll::test
