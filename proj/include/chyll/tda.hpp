#pragma once

// Vietoris-Rips persistent homology (H0..H2) over Z/p.

#include <Eigen/Dense>

#include "json.hpp"

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace chyll::model {
class LatentModel;
}

namespace chyll::tda {

using Point = Eigen::VectorXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct Simplex {
  std::array<int, 4> vertices{-1, -1, -1, -1};  // sorted ascending, unused slots -1
  int dim = 0;
  double filtration = 0.0;
};

struct RipsOptions {
  int max_dim = 3;
  // Edges longer than this are left out; 0 selects auto_factor x (longest
  // minimum-spanning-tree edge).
  double max_filtration = 0.0;
  double auto_factor = 2.5;
  int max_points = 600;
  std::size_t max_simplices = 20'000'000;
};

// Longest edge of the Euclidean minimum spanning tree (0 for < 2 points).
double mst_max_edge(const std::vector<Point>& points);
double resolve_max_filtration(const std::vector<Point>& points, const RipsOptions& opts);

// Diameter filtration, sorted by (filtration, dim, vertices).
std::vector<Simplex> rips_complex(const std::vector<Point>& points, const RipsOptions& opts = {});

struct Bar {
  double birth = 0.0;
  double death = kInf;
  double lifetime() const { return death - birth; }
  bool infinite() const { return death == kInf; }
};

struct PersistenceDiagram {
  std::array<std::vector<Bar>, 3> bars;  // H0, H1, H2
  int field = 2;
  double max_filtration = kInf;

  // dim,birth,death with death "inf" for essential classes.
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

// Column reduction with clearing over Z/p (p prime). The input must be a
// valid filtration (every face precedes its cofaces). Zero-length bars are
// dropped.
PersistenceDiagram compute_persistence(const std::vector<Simplex>& filtration, int field = 2);

struct BettiEstimate {
  std::array<int, 3> betti{0, 0, 0};
  std::array<double, 3> threshold{0.0, 0.0, 0.0};
  double lifetime_ratio = 5.0;
  std::string method = "ratio";

  nlohmann::json to_json() const;
};

// A bar counts in dimension d when it is infinite or its lifetime is at least
// lifetime_ratio x the median finite lifetime of dimension d. Dimensions with
// fewer than 3 finite bars use the median finite H0 lifetime as the noise scale.
BettiEstimate betti_estimate(const PersistenceDiagram& diagram, double lifetime_ratio = 5.0);

// Greedy farthest-point subsample of `count` indices starting at index 0.
std::vector<int> farthest_point_sample(const std::vector<Point>& points, int count);

struct AnalyzeOptions {
  int mesh = 40;  // mesh x mesh grid (per pair of state coordinates)
  int max_points = 300;
  int field = 2;
  double lifetime_ratio = 5.0;
  RipsOptions rips;
};

struct TdaResult {
  PersistenceDiagram diagram;
  BettiEstimate betti;
  std::size_t points = 0;
  std::size_t simplices = 0;
};

TdaResult analyze_points(std::vector<Point> points, const AnalyzeOptions& opts);
// Encodes a uniform mesh over the model's training-state bounds.
TdaResult analyze_latent(const model::LatentModel& model, const AnalyzeOptions& opts);

// Analytic surrogates: circle of radius 1, and the (2 + cos u) torus in R^3
// (farthest-point subsample of 10 x count uniform-angle draws).
std::vector<Point> sample_circle(int count, double noise, std::uint64_t seed);
std::vector<Point> sample_torus(int count, std::uint64_t seed);

// Birth/death scatter with the diagonal.
std::string diagram_svg(const PersistenceDiagram& diagram);

}  // namespace chyll::tda
