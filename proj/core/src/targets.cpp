#include "gipo/targets.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gipo {

namespace {

void check_segment(const TrajectorySegment& seg, std::span<const double> values) {
  const std::size_t n = seg.length();
  if (n == 0) throw std::invalid_argument("empty segment");
  if (values.size() != n + 1) {
    throw std::invalid_argument("values must have segment length + 1 entries");
  }
  if (seg.terminal && values[n] != 0.0) {
    throw std::invalid_argument("terminal segment requires a zero bootstrap value");
  }
}

}  // namespace

TargetSet gae(const TrajectorySegment& seg, std::span<const double> values, double gamma,
              double lambda) {
  check_segment(seg, values);
  const std::size_t n = seg.length();
  TargetSet out;
  out.advantages.resize(n);
  out.value_targets.resize(n);
  double acc = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double delta = seg.rewards[t] + gamma * values[t + 1] - values[t];
    acc = delta + gamma * lambda * acc;
    out.advantages[t] = acc;
    out.value_targets[t] = acc + values[t];
  }
  return out;
}

TargetSet vtrace(const TrajectorySegment& seg, std::span<const double> values,
                 std::span<const double> target_logps, double gamma, double rho_bar,
                 double c_bar) {
  check_segment(seg, values);
  const std::size_t n = seg.length();
  if (target_logps.size() != n) {
    throw std::invalid_argument("target_logps must match segment length");
  }
  if (!(rho_bar >= c_bar) || !(c_bar > 0.0)) {
    throw std::invalid_argument("need rho_bar >= c_bar > 0");
  }
  TargetSet out;
  out.advantages.resize(n);
  out.value_targets.resize(n);
  // backward recursion: v_s - V(s) = rho_s*delta_s + gamma*c_s*(v_{s+1} - V(s_{s+1}))
  double correction = 0.0;  // v_{s+1} - V(s_{s+1}); zero past the end
  double v_next = values[n];
  for (std::size_t t = n; t-- > 0;) {
    const double ratio = std::exp(target_logps[t] - seg.behavior_logps[t]);
    const double rho = std::min(rho_bar, ratio);
    const double c = std::min(c_bar, ratio);
    const double delta = rho * (seg.rewards[t] + gamma * values[t + 1] - values[t]);
    correction = delta + gamma * c * correction;
    const double v_t = values[t] + correction;
    out.value_targets[t] = v_t;
    out.advantages[t] = rho * (seg.rewards[t] + gamma * v_next - values[t]);
    v_next = v_t;
  }
  return out;
}

}  // namespace gipo
