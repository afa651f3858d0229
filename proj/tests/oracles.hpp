#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance binary.

#include "chyll/hybrid_sim.hpp"
#include "chyll/tda.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <vector>

namespace chyll::test {

using sim::State;
using tda::Simplex;

// Explicit Euler at dt/100 with the wrap/twist applied at the exact crossing
// inside each small step; exact for the constant field up to rounding.
inline State euler_square(State x, Eigen::Vector2d c, bool twist, double t_end, double h) {
  const int n = static_cast<int>(std::lround(t_end / h));
  for (int i = 0; i < n; ++i) {
    x += c * h;
    if (x[0] >= 1.0) x[0] -= 1.0;
    if (x[1] >= 1.0) {
      const double overshoot = (x[1] - 1.0) / c[1];
      x[1] -= 1.0;
      if (twist) {
        const double at_cross = x[0] - c[0] * overshoot;
        x[0] = 1.0 - at_cross + c[0] * overshoot;
        if (x[0] >= 1.0) x[0] -= 1.0;
      }
    }
  }
  return x;
}

inline Simplex simplex(std::vector<int> v, double f) {
  std::sort(v.begin(), v.end());
  Simplex s;
  for (std::size_t i = 0; i < v.size(); ++i) s.vertices[i] = v[i];
  s.dim = static_cast<int>(v.size()) - 1;
  s.filtration = f;
  return s;
}

inline std::vector<int> verts(const Simplex& s) { return {s.vertices.begin(), s.vertices.begin() + s.dim + 1}; }

inline void sort_filtration(std::vector<Simplex>& f) {
  std::sort(f.begin(), f.end(), [](const Simplex& a, const Simplex& b) {
    if (a.filtration != b.filtration) return a.filtration < b.filtration;
    if (a.dim != b.dim) return a.dim < b.dim;
    return a.vertices < b.vertices;
  });
}

// Rank over Z/p by Gaussian elimination.
inline int rank_mod(std::vector<std::vector<long>> m, int p) {
  int rank = 0;
  const std::size_t rows = m.size();
  const std::size_t cols = rows == 0 ? 0 : m[0].size();
  for (std::size_t c = 0; c < cols && rank < static_cast<int>(rows); ++c) {
    std::size_t pivot = static_cast<std::size_t>(rank);
    while (pivot < rows && m[pivot][c] % p == 0) ++pivot;
    if (pivot == rows) continue;
    std::swap(m[pivot], m[static_cast<std::size_t>(rank)]);
    auto& top = m[static_cast<std::size_t>(rank)];
    long inv = 1;
    while ((((top[c] % p) + p) % p * inv) % p != 1) ++inv;
    for (auto& v : top) v = (((v * inv) % p) + p) % p;
    for (std::size_t r = 0; r < rows; ++r) {
      if (r == static_cast<std::size_t>(rank)) continue;
      const long f = ((m[r][c] % p) + p) % p;
      if (f == 0) continue;
      for (std::size_t k = 0; k < cols; ++k) m[r][k] = (((m[r][k] - f * top[k]) % p) + p) % p;
    }
    ++rank;
  }
  return rank;
}

// Boundary matrix of (d+1)-simplices in `cols` over d-simplices in `rows`.
inline std::vector<std::vector<long>> boundary(const std::vector<Simplex>& rows, const std::vector<Simplex>& cols) {
  std::vector<std::vector<long>> m(rows.size(), std::vector<long>(cols.size(), 0));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const auto v = verts(cols[j]);
    for (std::size_t skip = 0; skip < v.size(); ++skip) {
      std::vector<int> face;
      for (std::size_t i = 0; i < v.size(); ++i)
        if (i != skip) face.push_back(v[i]);
      for (std::size_t i = 0; i < rows.size(); ++i)
        if (verts(rows[i]) == face) m[i][j] = skip % 2 == 0 ? 1 : -1;
    }
  }
  return m;
}

inline std::vector<Simplex> of_dim(const std::vector<Simplex>& f, int d, double upto) {
  std::vector<Simplex> out;
  for (const auto& s : f)
    if (s.dim == d && s.filtration <= upto) out.push_back(s);
  return out;
}

// Persistent Betti number rank(H_d(K_a) -> H_d(K_b)) from boundary ranks.
inline int persistent_betti(const std::vector<Simplex>& f, int d, double a, double b, int p) {
  const auto cd_a = of_dim(f, d, a);
  const int z = static_cast<int>(cd_a.size()) - (d == 0 ? 0 : rank_mod(boundary(of_dim(f, d - 1, a), cd_a), p));
  const auto cd_b = of_dim(f, d, b);
  const auto top_b = of_dim(f, d + 1, b);
  const int rb = rank_mod(boundary(cd_b, top_b), p);
  std::vector<Simplex> outside;
  for (const auto& s : cd_b)
    if (s.filtration > a) outside.push_back(s);
  const int rb_out = rank_mod(boundary(outside, top_b), p);
  return z - (rb - rb_out);
}

inline int diagram_count(const tda::PersistenceDiagram& dgm, int d, double a, double b) {
  int n = 0;
  for (const auto& bar : dgm.bars[static_cast<std::size_t>(d)])
    if (bar.birth <= a && bar.death > b) ++n;
  return n;
}

inline std::vector<Simplex> random_filtration(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> nv(2, 6);
  const int n = nv(rng);
  std::map<std::vector<int>, double> value;
  std::uniform_int_distribution<int> step(0, 2);
  std::function<double(const std::vector<int>&)> add = [&](const std::vector<int>& v) -> double {
    if (auto it = value.find(v); it != value.end()) return it->second;
    double f = 0.0;
    if (v.size() > 1) {
      for (std::size_t skip = 0; skip < v.size(); ++skip) {
        std::vector<int> face;
        for (std::size_t i = 0; i < v.size(); ++i)
          if (i != skip) face.push_back(v[i]);
        f = std::max(f, add(face));
      }
    }
    f += step(rng);
    value[v] = f;
    return f;
  };
  std::uniform_int_distribution<int> vd(0, n - 1);
  std::uniform_int_distribution<int> dd(0, 3);
  for (int tries = 0; tries < 40; ++tries) {
    std::set<int> s;
    const int size = std::min(n, dd(rng) + 1);
    while (static_cast<int>(s.size()) < size) s.insert(vd(rng));
    auto before = value;
    add(std::vector<int>(s.begin(), s.end()));
    if (value.size() > 12) {
      value = before;
      break;
    }
  }
  std::vector<Simplex> f;
  for (const auto& [v, fv] : value) f.push_back(simplex(v, fv));
  sort_filtration(f);
  return f;
}

}  // namespace chyll::test
