#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "gipo/policy.hpp"
#include "gipo/surrogate.hpp"

// Exact, sampling-free evaluation on enumerable MDPs: Bellman solves,
// discounted occupancy, and the one-step bias/variance study of the
// surrogate families with Pareto frontiers.

namespace gipo {

struct ExactMDP {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> transition;  // [s][a][s'] row-major; each (s,a) row sums to 1
  std::vector<double> reward;      // [s][a]
  double gamma = 0.99;
  int initial_state = 0;
  std::vector<std::uint8_t> absorbing;  // absorbing states self-loop with reward 0

  double p(int s, int a, int s2) const {
    return transition[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
  }
  double r(int s, int a) const { return reward[static_cast<std::size_t>(s) * n_actions + a]; }
};

// Deterministic grid with actions [up, down, left, right], -1 reward per
// non-absorbed step, off-grid moves keep the state. State index is
// row * cols + col; the start is the top-left corner and the absorbing goal
// the bottom-right one.
ExactMDP gridworld(int rows, int cols, double gamma = 0.99);
ExactMDP gridworld_2x2();  // S0 S1 / S2 SG

// Explicit per-state action probabilities.
struct PolicyTable {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> probs;  // [s][a]

  double p(int s, int a) const { return probs[static_cast<std::size_t>(s) * n_actions + a]; }
};

// Softmax of one shared logit vector applied at every state.
PolicyTable softmax_policy(const ExactMDP& mdp, std::span<const double> logits);

// Probability mixture over the three base softmax policies used by the
// behavior cases: rand = softmax(0,0,0,0), right = softmax(0,0,0,1),
// down = softmax(0,1,0,0).
struct BehaviorCase {
  char id = 'A';
  double w_rand = 1.0;
  double w_right = 0.0;
  double w_down = 0.0;
};
BehaviorCase behavior_case(char id);  // 'A', 'B' or 'C'
PolicyTable behavior_policy(const ExactMDP& mdp, const BehaviorCase& bc);

struct ValueSolution {
  std::vector<double> v;  // per state
  std::vector<double> q;  // [s][a]
  std::vector<double> a;  // [s][a], q - v
};

// Exact policy evaluation: direct linear solve up to 64 states, value
// iteration to residual 1e-12 beyond that. Throws if the residual cannot be
// driven below tolerance.
ValueSolution solve_values(const ExactMDP& mdp, const PolicyTable& pi);

// Normalized discounted state occupancy d(s) = (1-gamma) sum_t gamma^t Pr(s_t = s)
// from the initial state; sums to 1.
std::vector<double> occupancy(const ExactMDP& mdp, const PolicyTable& pi);

// One-step gradient estimator statistics at eval_state, enumerated exactly
// over the behavior distribution. The gradient is taken with respect to the
// target policy's logits at eval_state only:
//   g(a) = m(rho(a), sign A(s,a)) * A(s,a) * (one_hot(a) - pi(.|s)).
// bias = || E_mu[g] - g_true ||_2, variance = trace of the covariance of g
// under mu, with g_true the on-policy gradient sum_a pi(a) A(a) score(a).
struct GradStats {
  GradientVector mean;
  double bias = 0.0;
  double variance = 0.0;
};
GradStats exact_grad_stats(const ExactMDP& mdp, const PolicyTable& target,
                           const PolicyTable& behavior, const SurrogateKind& method,
                           int eval_state);

struct BiasVarPoint {
  std::string method;
  double param = 0.0;
  double bias = 0.0;
  double variance = 0.0;
  bool on_frontier = false;
};

// One point per sigma (method "gipo") plus one point each for ppo_clip(0.2),
// sapo(2,1) and noclip. Frontier flags mark points not strictly dominated in
// (bias, variance) by any other point of the sweep.
std::vector<BiasVarPoint> pareto_sweep(const ExactMDP& mdp, const PolicyTable& target,
                                       const PolicyTable& behavior,
                                       std::span<const double> sigma_grid, int eval_state);

// Marks non-dominated points in place.
void flag_frontier(std::vector<BiasVarPoint>& points);

// CSV with header: case,method,param,bias,variance,on_frontier
void write_biasvar_csv(std::ostream& os, char case_id, std::span<const BiasVarPoint> points);

}  // namespace gipo
