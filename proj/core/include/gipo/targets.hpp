#pragma once

#include <span>
#include <vector>

// Advantage and value-target construction over trajectory segments:
// GAE and V-trace. Pure functions; segments are immutable inputs.

namespace gipo {

struct TrajectorySegment {
  std::vector<int> states;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<double> behavior_logps;
  // terminal: the episode truly ended after the last step (bootstrap must be 0).
  // Otherwise the segment was truncated and the caller bootstraps with the
  // value of the final next-state.
  bool terminal = false;
  double bootstrap_value = 0.0;

  std::size_t length() const { return rewards.size(); }
};

struct TargetSet {
  std::vector<double> advantages;
  std::vector<double> value_targets;
};

// values[t] = V(s_t) for t < n, values[n] = bootstrap (0 at a terminal).
// Advantage is the exponentially weighted sum of TD residuals
//   delta_t = r_t + gamma*V(s_{t+1}) - V(s_t),
//   A_t = sum_k (gamma*lambda)^k delta_{t+k},
// and the value target is A_t + V(s_t).
TargetSet gae(const TrajectorySegment& seg, std::span<const double> values, double gamma,
              double lambda);

// Truncated importance-weighted value targets
//   v_s = V(s) + sum_{t>=s} gamma^{t-s} (prod_{i<t} c_i) rho_t delta_t,
// with rho_t = min(rho_bar, exp(target_logp - behavior_logp)) and
// c_i = min(c_bar, ratio_i). The policy-gradient advantage is
//   rho_s (r_s + gamma*v_{s+1} - V(s_s)).
TargetSet vtrace(const TrajectorySegment& seg, std::span<const double> values,
                 std::span<const double> target_logps, double gamma, double rho_bar = 1.0,
                 double c_bar = 1.0);

}  // namespace gipo
