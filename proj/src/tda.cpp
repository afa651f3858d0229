#include "chyll/tda.hpp"

#include "chyll/error.hpp"
#include "chyll/latent_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <unordered_map>

namespace chyll::tda {

namespace {

Eigen::MatrixXd distance_matrix(const std::vector<Point>& pts) {
  const auto n = static_cast<Eigen::Index>(pts.size());
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = (pts[static_cast<std::size_t>(i)] - pts[static_cast<std::size_t>(j)]).norm();
      if (!std::isfinite(v)) throw ConfigError("rips_complex: non-finite pairwise distance");
      d(i, j) = d(j, i) = v;
    }
  }
  return d;
}

std::uint64_t key_of(const std::array<int, 4>& v) {
  std::uint64_t k = 0;
  for (int t = 0; t < 4; ++t) k |= static_cast<std::uint64_t>(static_cast<std::uint16_t>(v[static_cast<std::size_t>(t)])) << (16 * t);
  return k;
}

int mod(long v, int p) {
  const long r = v % p;
  return static_cast<int>(r < 0 ? r + p : r);
}

int inverse_mod(int a, int p) {
  // Fermat: a^(p-2) mod p.
  long result = 1;
  long base = a % p;
  int e = p - 2;
  while (e > 0) {
    if (e & 1) result = result * base % p;
    base = base * base % p;
    e >>= 1;
  }
  return static_cast<int>(result);
}

bool is_prime(int p) {
  if (p < 2) return false;
  for (int d = 2; d * d <= p; ++d)
    if (p % d == 0) return false;
  return true;
}

using Column = std::vector<std::pair<int, int>>;  // (row, coefficient), rows ascending

// a += factor * b over Z/p.
void axpy_column(Column& a, int factor, const Column& b, int p, Column& scratch) {
  scratch.clear();
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < a.size() || j < b.size()) {
    if (j == b.size() || (i < a.size() && a[i].first < b[j].first)) {
      scratch.push_back(a[i++]);
    } else if (i == a.size() || b[j].first < a[i].first) {
      scratch.emplace_back(b[j].first, mod(static_cast<long>(factor) * b[j].second, p));
      ++j;
    } else {
      const int c = mod(a[i].second + static_cast<long>(factor) * b[j].second, p);
      if (c != 0) scratch.emplace_back(a[i].first, c);
      ++i;
      ++j;
    }
  }
  a.swap(scratch);
}

}  // namespace

double mst_max_edge(const std::vector<Point>& points) {
  const std::size_t n = points.size();
  if (n < 2) return 0.0;
  std::vector<double> best(n, kInf);
  std::vector<bool> in(n, false);
  best[0] = 0.0;
  double longest = 0.0;
  for (std::size_t it = 0; it < n; ++it) {
    std::size_t u = n;
    for (std::size_t v = 0; v < n; ++v)
      if (!in[v] && (u == n || best[v] < best[u])) u = v;
    in[u] = true;
    longest = std::max(longest, best[u]);
    for (std::size_t v = 0; v < n; ++v) {
      if (!in[v]) best[v] = std::min(best[v], (points[u] - points[v]).norm());
    }
  }
  return longest;
}

double resolve_max_filtration(const std::vector<Point>& points, const RipsOptions& opts) {
  if (opts.max_filtration > 0) return opts.max_filtration;
  if (!(opts.auto_factor > 0)) throw ConfigError("rips: auto_factor must be positive");
  return opts.auto_factor * mst_max_edge(points);
}

std::vector<Simplex> rips_complex(const std::vector<Point>& points, const RipsOptions& opts) {
  if (points.empty()) throw ConfigError("rips_complex: empty point cloud");
  if (static_cast<int>(points.size()) > opts.max_points) {
    throw ConfigError("rips_complex: " + std::to_string(points.size()) + " points exceed the cap of " +
                      std::to_string(opts.max_points) + "; subsample first (farthest-point sampling)");
  }
  if (opts.max_dim < 0 || opts.max_dim > 3) throw ConfigError("rips_complex: max_dim must be in [0, 3]");
  const double limit = resolve_max_filtration(points, opts);
  const int n = static_cast<int>(points.size());
  const Eigen::MatrixXd d = distance_matrix(points);

  std::vector<std::vector<int>> up(static_cast<std::size_t>(n));
  std::vector<std::vector<char>> adj(static_cast<std::size_t>(n), std::vector<char>(static_cast<std::size_t>(n), 0));
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (d(i, j) <= limit) {
        up[static_cast<std::size_t>(i)].push_back(j);
        adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = adj[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = 1;
      }
    }
  }
  std::vector<Simplex> out;
  const auto push = [&](Simplex s) {
    if (out.size() >= opts.max_simplices) {
      throw ConfigError("rips_complex: more than " + std::to_string(opts.max_simplices) +
                        " simplices; lower max_filtration or subsample");
    }
    out.push_back(s);
  };
  for (int i = 0; i < n; ++i) push(Simplex{{i, -1, -1, -1}, 0, 0.0});
  if (opts.max_dim >= 1) {
    for (int i = 0; i < n; ++i) {
      for (int j : up[static_cast<std::size_t>(i)]) {
        const double fij = d(i, j);
        push(Simplex{{i, j, -1, -1}, 1, fij});
        if (opts.max_dim < 2) continue;
        for (int k : up[static_cast<std::size_t>(j)]) {
          if (!adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]) continue;
          const double fijk = std::max({fij, d(i, k), d(j, k)});
          push(Simplex{{i, j, k, -1}, 2, fijk});
          if (opts.max_dim < 3) continue;
          for (int l : up[static_cast<std::size_t>(k)]) {
            if (!adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(l)] || !adj[static_cast<std::size_t>(j)][static_cast<std::size_t>(l)]) continue;
            push(Simplex{{i, j, k, l}, 3, std::max({fijk, d(i, l), d(j, l), d(k, l)})});
          }
        }
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const Simplex& a, const Simplex& b) {
    if (a.filtration != b.filtration) return a.filtration < b.filtration;
    if (a.dim != b.dim) return a.dim < b.dim;
    return a.vertices < b.vertices;
  });
  return out;
}

PersistenceDiagram compute_persistence(const std::vector<Simplex>& filtration, int field) {
  if (!is_prime(field)) throw ConfigError("compute_persistence: coefficient field must be a prime");
  PersistenceDiagram diag;
  diag.field = field;
  const int N = static_cast<int>(filtration.size());
  std::unordered_map<std::uint64_t, int> index;
  index.reserve(static_cast<std::size_t>(N) * 2);
  int top = 0;
  for (int j = 0; j < N; ++j) {
    index.emplace(key_of(filtration[static_cast<std::size_t>(j)].vertices), j);
    top = std::max(top, filtration[static_cast<std::size_t>(j)].dim);
  }
  if (N > 0) diag.max_filtration = filtration.back().filtration;

  std::vector<Column> reduced(static_cast<std::size_t>(N));
  std::vector<int> pivot_owner(static_cast<std::size_t>(N), -1);
  std::vector<char> killed(static_cast<std::size_t>(N), 0);
  std::vector<char> negative(static_cast<std::size_t>(N), 0);
  Column scratch;

  for (int dim = top; dim >= 1; --dim) {
    for (int j = 0; j < N; ++j) {
      const Simplex& s = filtration[static_cast<std::size_t>(j)];
      if (s.dim != dim || killed[static_cast<std::size_t>(j)]) continue;
      Column col;
      col.reserve(static_cast<std::size_t>(dim) + 1);
      for (int t = 0; t <= dim; ++t) {
        std::array<int, 4> face{-1, -1, -1, -1};
        int w = 0;
        for (int u = 0; u <= dim; ++u)
          if (u != t) face[static_cast<std::size_t>(w++)] = s.vertices[static_cast<std::size_t>(u)];
        const auto it = index.find(key_of(face));
        if (it == index.end() || it->second >= j) throw ConfigError("compute_persistence: face missing or out of order");
        col.emplace_back(it->second, mod(t % 2 == 0 ? 1 : -1, field));
      }
      std::sort(col.begin(), col.end());
      while (!col.empty()) {
        const int low = col.back().first;
        const int owner = pivot_owner[static_cast<std::size_t>(low)];
        if (owner < 0) break;
        const Column& other = reduced[static_cast<std::size_t>(owner)];
        const int factor = mod(-static_cast<long>(col.back().second) * inverse_mod(other.back().second, field), field);
        axpy_column(col, factor, other, field, scratch);
      }
      if (col.empty()) continue;
      const int low = col.back().first;
      pivot_owner[static_cast<std::size_t>(low)] = j;
      killed[static_cast<std::size_t>(low)] = 1;
      negative[static_cast<std::size_t>(j)] = 1;
      const double birth = filtration[static_cast<std::size_t>(low)].filtration;
      if (dim - 1 <= 2 && s.filtration > birth) diag.bars[static_cast<std::size_t>(dim - 1)].push_back({birth, s.filtration});
      reduced[static_cast<std::size_t>(j)] = std::move(col);
    }
  }
  for (int j = 0; j < N; ++j) {
    const Simplex& s = filtration[static_cast<std::size_t>(j)];
    if (s.dim <= 2 && !negative[static_cast<std::size_t>(j)] && !killed[static_cast<std::size_t>(j)]) {
      diag.bars[static_cast<std::size_t>(s.dim)].push_back({s.filtration, kInf});
    }
  }
  for (auto& bars : diag.bars) {
    std::stable_sort(bars.begin(), bars.end(), [](const Bar& a, const Bar& b) {
      if (a.birth != b.birth) return a.birth < b.birth;
      return a.death < b.death;
    });
  }
  return diag;
}

std::string PersistenceDiagram::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "dim,birth,death\n";
  for (std::size_t d = 0; d < bars.size(); ++d) {
    for (const auto& b : bars[d]) {
      os << d << ',' << b.birth << ',';
      if (b.infinite()) os << "inf";
      else os << b.death;
      os << '\n';
    }
  }
  return os.str();
}

nlohmann::json PersistenceDiagram::to_json() const {
  nlohmann::json j = {{"field", field}, {"max_filtration", max_filtration}};
  for (std::size_t d = 0; d < bars.size(); ++d) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& b : bars[d]) arr.push_back({b.birth, b.infinite() ? nlohmann::json("inf") : nlohmann::json(b.death)});
    j["H" + std::to_string(d)] = arr;
  }
  return j;
}

nlohmann::json BettiEstimate::to_json() const {
  return {{"betti", betti}, {"threshold", threshold}, {"lifetime_ratio", lifetime_ratio}, {"method", method}};
}

namespace {

double median_finite_lifetime(const std::vector<Bar>& bars, std::size_t* count) {
  std::vector<double> life;
  for (const auto& b : bars)
    if (!b.infinite()) life.push_back(b.lifetime());
  if (count) *count = life.size();
  if (life.empty()) return 0.0;
  const auto mid = life.begin() + static_cast<std::ptrdiff_t>(life.size() / 2);
  std::nth_element(life.begin(), mid, life.end());
  return *mid;
}

}  // namespace

BettiEstimate betti_estimate(const PersistenceDiagram& diagram, double lifetime_ratio) {
  if (!(lifetime_ratio > 0)) throw ConfigError("betti_estimate: lifetime_ratio must be positive");
  BettiEstimate est;
  est.lifetime_ratio = lifetime_ratio;
  std::size_t n0 = 0;
  const double noise0 = median_finite_lifetime(diagram.bars[0], &n0);
  for (std::size_t d = 0; d < 3; ++d) {
    const auto& bars = diagram.bars[d];
    int count = 0;
    if (d == 0) {
      for (const auto& b : bars) count += b.infinite() ? 1 : 0;
      est.threshold[0] = kInf;
    } else {
      std::size_t nd = 0;
      const double md = median_finite_lifetime(bars, &nd);
      const double noise = nd >= 3 ? md : noise0;
      est.threshold[d] = lifetime_ratio * noise;
      for (const auto& b : bars) count += (b.infinite() || b.lifetime() >= est.threshold[d]) ? 1 : 0;
    }
    est.betti[d] = count;
  }
  return est;
}

std::vector<int> farthest_point_sample(const std::vector<Point>& points, int count) {
  const int n = static_cast<int>(points.size());
  if (count >= n) {
    std::vector<int> all(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
    return all;
  }
  std::vector<int> chosen;
  if (count <= 0 || n == 0) return chosen;
  std::vector<double> dist(static_cast<std::size_t>(n), kInf);
  int current = 0;
  for (int c = 0; c < count; ++c) {
    chosen.push_back(current);
    int next = -1;
    for (int i = 0; i < n; ++i) {
      dist[static_cast<std::size_t>(i)] = std::min(dist[static_cast<std::size_t>(i)], (points[static_cast<std::size_t>(i)] - points[static_cast<std::size_t>(current)]).norm());
      if (next < 0 || dist[static_cast<std::size_t>(i)] > dist[static_cast<std::size_t>(next)]) next = i;
    }
    current = next;
  }
  return chosen;
}

TdaResult analyze_points(std::vector<Point> points, const AnalyzeOptions& opts) {
  if (points.empty()) throw ConfigError("analyze: empty point cloud");
  if (static_cast<int>(points.size()) > opts.max_points) {
    const auto idx = farthest_point_sample(points, opts.max_points);
    std::vector<Point> sub;
    sub.reserve(idx.size());
    for (int i : idx) sub.push_back(points[static_cast<std::size_t>(i)]);
    points = std::move(sub);
  }
  TdaResult r;
  r.points = points.size();
  const auto filt = rips_complex(points, opts.rips);
  r.simplices = filt.size();
  r.diagram = compute_persistence(filt, opts.field);
  r.betti = betti_estimate(r.diagram, opts.lifetime_ratio);
  return r;
}

TdaResult analyze_latent(const model::LatentModel& model, const AnalyzeOptions& opts) {
  if (model.state_lo.size() != model.state_dim || model.state_hi.size() != model.state_dim) {
    throw EvaluationError("analyze_latent: model bundle has no state bounds");
  }
  if (model.state_dim != 2) throw EvaluationError("analyze_latent: mesh sampling supports 2-D state spaces");
  if (opts.mesh < 2) throw ConfigError("analyze_latent: mesh must be >= 2");
  const int m = opts.mesh;
  model::Matrix X(m * m, 2);
  for (int a = 0; a < m; ++a) {
    for (int b = 0; b < m; ++b) {
      const double u = static_cast<double>(a) / (m - 1);
      const double v = static_cast<double>(b) / (m - 1);
      X(a * m + b, 0) = model.state_lo[0] + u * (model.state_hi[0] - model.state_lo[0]);
      X(a * m + b, 1) = model.state_lo[1] + v * (model.state_hi[1] - model.state_lo[1]);
    }
  }
  const model::Matrix Z = model.encode(X);
  std::vector<Point> pts;
  pts.reserve(static_cast<std::size_t>(Z.rows()));
  for (Eigen::Index r = 0; r < Z.rows(); ++r) pts.push_back(Z.row(r).transpose());
  return analyze_points(std::move(pts), opts);
}

std::vector<Point> sample_circle(int count, double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> jitter(0.0, 1.0);
  std::vector<Point> pts;
  for (int i = 0; i < count; ++i) {
    const double t = angle(rng);
    Point p(2);
    p << std::cos(t), std::sin(t);
    if (noise > 0) {
      p[0] += noise * jitter(rng);
      p[1] += noise * jitter(rng);
    }
    pts.push_back(p);
  }
  return pts;
}

std::vector<Point> sample_torus(int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::vector<Point> dense;
  for (int i = 0; i < 10 * count; ++i) {
    const double u = angle(rng);
    const double v = angle(rng);
    Point p(3);
    p << (2.0 + std::cos(u)) * std::cos(v), (2.0 + std::cos(u)) * std::sin(v), std::sin(u);
    dense.push_back(p);
  }
  std::vector<Point> pts;
  for (int i : farthest_point_sample(dense, count)) pts.push_back(dense[static_cast<std::size_t>(i)]);
  return pts;
}

std::string diagram_svg(const PersistenceDiagram& diagram) {
  double hi = 0.0;
  for (const auto& bars : diagram.bars)
    for (const auto& b : bars) hi = std::max(hi, b.infinite() ? b.birth : b.death);
  if (std::isfinite(diagram.max_filtration)) hi = std::max(hi, diagram.max_filtration);
  if (hi <= 0) hi = 1.0;
  hi *= 1.05;
  const double size = 400.0;
  const double pad = 40.0;
  const auto sx = [&](double v) { return pad + v / hi * size; };
  const auto sy = [&](double v) { return pad + size - v / hi * size; };
  const char* colors[3] = {"#1f77b4", "#d62728", "#2ca02c"};
  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size + 2 * pad << "\" height=\"" << size + 2 * pad << "\">\n";
  os << "<rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << size << "\" height=\"" << size
     << "\" fill=\"none\" stroke=\"#444\"/>\n";
  os << "<line x1=\"" << sx(0) << "\" y1=\"" << sy(0) << "\" x2=\"" << sx(hi) << "\" y2=\"" << sy(hi)
     << "\" stroke=\"#999\" stroke-dasharray=\"4,3\"/>\n";
  os << "<text x=\"" << pad << "\" y=\"" << pad - 10 << "\" font-size=\"12\">birth vs death (Z/" << diagram.field
     << "), infinite bars on the top edge</text>\n";
  for (std::size_t d = 0; d < 3; ++d) {
    for (const auto& b : diagram.bars[d]) {
      const double y = b.infinite() ? sy(hi) : sy(b.death);
      os << "<circle cx=\"" << sx(b.birth) << "\" cy=\"" << y << "\" r=\"3\" fill=\"" << colors[d]
         << "\" fill-opacity=\"0.7\"><title>H" << d << "</title></circle>\n";
    }
    os << "<text x=\"" << pad + size - 40 << "\" y=\"" << pad + size - 10 - 14 * static_cast<double>(2 - d)
       << "\" font-size=\"12\" fill=\"" << colors[d] << "\">H" << d << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace chyll::tda
