#pragma once

#include "chyll/hybrid_sim.hpp"

#include "json.hpp"

#include <map>
#include <vector>

namespace chyll::model {

// Per-trajectory sorted sample indices k such that (x_k, x_{k+1}) straddles a reset.
struct TransitionSet {
  std::map<int, std::vector<int>> flagged;
  double threshold = 0.0;
  double mean_rate = 0.0;
  double std_rate = 0.0;

  const std::vector<int>& at(int traj_id) const;
  std::size_t total() const;
  nlohmann::json to_json() const;
  static TransitionSet from_json(const nlohmann::json& j);
};

// Empirical-Lipschitz rule: r_k = |(x_{k+1} - x_k) / dt_k| over `dims`
// (all coordinates if empty), pooled across `ids`; flags r_k > mean + mult * std.
TransitionSet detect_transitions(const sim::Dataset& ds, const std::vector<int>& ids, double sigma_mult,
                                 const std::vector<int>& dims = {});

}  // namespace chyll::model
