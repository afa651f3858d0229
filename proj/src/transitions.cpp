#include "chyll/transitions.hpp"

#include "chyll/error.hpp"

#include <cmath>

namespace chyll::model {

const std::vector<int>& TransitionSet::at(int traj_id) const {
  static const std::vector<int> empty;
  const auto it = flagged.find(traj_id);
  return it == flagged.end() ? empty : it->second;
}

std::size_t TransitionSet::total() const {
  std::size_t n = 0;
  for (const auto& [id, ks] : flagged) n += ks.size();
  return n;
}

nlohmann::json TransitionSet::to_json() const {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [id, ks] : flagged) per[std::to_string(id)] = ks;
  return {{"threshold", threshold}, {"mean_rate", mean_rate}, {"std_rate", std_rate}, {"flagged", per}};
}

TransitionSet TransitionSet::from_json(const nlohmann::json& j) {
  TransitionSet t;
  t.threshold = j.value("threshold", 0.0);
  t.mean_rate = j.value("mean_rate", 0.0);
  t.std_rate = j.value("std_rate", 0.0);
  for (const auto& [key, ks] : j.at("flagged").items()) t.flagged[std::stoi(key)] = ks.get<std::vector<int>>();
  return t;
}

TransitionSet detect_transitions(const sim::Dataset& ds, const std::vector<int>& ids, double sigma_mult,
                                 const std::vector<int>& dims) {
  std::vector<std::vector<double>> rates;
  rates.reserve(ids.size());
  double sum = 0.0;
  std::size_t count = 0;
  for (int id : ids) {
    const sim::Trajectory& tr = ds.by_id(id);
    if (tr.size() < 3) throw ConfigError("detect_transitions: trajectory " + std::to_string(id) + " is shorter than 3");
    std::vector<double> r(tr.size() - 1);
    for (std::size_t k = 0; k + 1 < tr.size(); ++k) {
      const double h = tr.times[k + 1] - tr.times[k];
      if (!(h > 0)) throw ConfigError("detect_transitions: non-positive time step in trajectory " + std::to_string(id));
      const Eigen::VectorXd d = tr.states[k + 1] - tr.states[k];
      double sq = 0.0;
      if (dims.empty()) {
        sq = d.squaredNorm();
      } else {
        for (int i : dims) {
          if (i < 0 || i >= d.size()) throw ConfigError("detect_transitions: transition dim out of range");
          sq += d[i] * d[i];
        }
      }
      r[k] = std::sqrt(sq) / h;
      sum += r[k];
      ++count;
    }
    rates.push_back(std::move(r));
  }
  TransitionSet out;
  if (count == 0) return out;
  const double mean = sum / static_cast<double>(count);
  double var = 0.0;
  for (const auto& r : rates)
    for (double v : r) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(count));
  out.mean_rate = mean;
  out.std_rate = sd;
  out.threshold = mean + sigma_mult * sd;
  for (std::size_t q = 0; q < ids.size(); ++q) {
    std::vector<int> ks;
    for (std::size_t k = 0; k < rates[q].size(); ++k)
      if (rates[q][k] > out.threshold) ks.push_back(static_cast<int>(k));
    if (!ks.empty()) out.flagged[ids[q]] = std::move(ks);
  }
  return out;
}

}  // namespace chyll::model
