#include "gipo/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace gipo {

namespace {

// dense Gaussian elimination with partial pivoting; fine for the desk-scale
// systems this module solves (at most 64 unknowns)
std::vector<double> solve_linear(std::vector<double> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a[r * n + col]) > std::abs(a[pivot * n + col])) pivot = r;
    }
    if (std::abs(a[pivot * n + col]) < 1e-300) {
      throw std::runtime_error("singular linear system in exact solve");
    }
    if (pivot != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a[col * n + c], a[pivot * n + c]);
      std::swap(b[col], b[pivot]);
    }
    const double d = a[col * n + col];
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / d;
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double acc = b[i];
    for (std::size_t c = i + 1; c < n; ++c) acc -= a[i * n + c] * x[c];
    x[i] = acc / a[i * n + i];
  }
  return x;
}

void check_policy(const ExactMDP& mdp, const PolicyTable& pi) {
  if (pi.n_states != mdp.n_states || pi.n_actions != mdp.n_actions) {
    throw std::invalid_argument("policy table shape does not match the MDP");
  }
}

// P_pi (s -> s') and r_pi (s)
void policy_kernels(const ExactMDP& mdp, const PolicyTable& pi, std::vector<double>& p_pi,
                    std::vector<double>& r_pi) {
  const int n = mdp.n_states;
  p_pi.assign(static_cast<std::size_t>(n) * n, 0.0);
  r_pi.assign(n, 0.0);
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      const double w = pi.p(s, a);
      if (w == 0.0) continue;
      r_pi[s] += w * mdp.r(s, a);
      for (int s2 = 0; s2 < n; ++s2) {
        p_pi[static_cast<std::size_t>(s) * n + s2] += w * mdp.p(s, a, s2);
      }
    }
  }
}

}  // namespace

ExactMDP gridworld(int rows, int cols, double gamma) {
  if (rows < 1 || cols < 1 || rows * cols < 2) {
    throw std::invalid_argument("grid needs at least two cells");
  }
  ExactMDP m;
  m.n_states = rows * cols;
  m.n_actions = 4;
  m.gamma = gamma;
  m.initial_state = 0;
  m.transition.assign(static_cast<std::size_t>(m.n_states) * 4 * m.n_states, 0.0);
  m.reward.assign(static_cast<std::size_t>(m.n_states) * 4, 0.0);
  m.absorbing.assign(m.n_states, 0);
  const int goal = m.n_states - 1;
  m.absorbing[goal] = 1;
  constexpr int kDr[4] = {-1, 1, 0, 0};  // up, down, left, right
  constexpr int kDc[4] = {0, 0, -1, 1};
  for (int s = 0; s < m.n_states; ++s) {
    const int row = s / cols, col = s % cols;
    for (int a = 0; a < 4; ++a) {
      int s2 = s;
      double rew = 0.0;
      if (s != goal) {
        const int r2 = row + kDr[a], c2 = col + kDc[a];
        if (r2 >= 0 && r2 < rows && c2 >= 0 && c2 < cols) s2 = r2 * cols + c2;
        rew = -1.0;
      }
      m.transition[(static_cast<std::size_t>(s) * 4 + a) * m.n_states + s2] = 1.0;
      m.reward[static_cast<std::size_t>(s) * 4 + a] = rew;
    }
  }
  return m;
}

ExactMDP gridworld_2x2() { return gridworld(2, 2, 0.99); }

PolicyTable softmax_policy(const ExactMDP& mdp, std::span<const double> logits) {
  if (logits.size() != static_cast<std::size_t>(mdp.n_actions)) {
    throw std::invalid_argument("logit count must equal the action count");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t a = 0; a < logits.size(); ++a) sum += (p[a] = std::exp(logits[a] - mx));
  for (double& x : p) x /= sum;
  PolicyTable out;
  out.n_states = mdp.n_states;
  out.n_actions = mdp.n_actions;
  out.probs.resize(static_cast<std::size_t>(mdp.n_states) * mdp.n_actions);
  for (int s = 0; s < mdp.n_states; ++s) {
    std::copy(p.begin(), p.end(), out.probs.begin() + static_cast<std::size_t>(s) * mdp.n_actions);
  }
  return out;
}

BehaviorCase behavior_case(char id) {
  switch (id) {
    case 'A':
      return {'A', 1.0, 0.0, 0.0};
    case 'B':
      return {'B', 0.4, 0.3, 0.3};
    case 'C':
      return {'C', 0.2, 0.4, 0.4};
    default:
      throw std::invalid_argument(std::string("unknown behavior case: ") + id);
  }
}

PolicyTable behavior_policy(const ExactMDP& mdp, const BehaviorCase& bc) {
  if (mdp.n_actions != 4) {
    throw std::invalid_argument("behavior cases are defined for 4-action grids");
  }
  const double sum = bc.w_rand + bc.w_right + bc.w_down;
  if (bc.w_rand < 0.0 || bc.w_right < 0.0 || bc.w_down < 0.0 ||
      std::abs(sum - 1.0) > 1e-12) {
    throw std::invalid_argument("mixture weights must be nonnegative and sum to 1");
  }
  const double rand_logits[4] = {0, 0, 0, 0};
  const double right_logits[4] = {0, 0, 0, 1};
  const double down_logits[4] = {0, 1, 0, 0};
  const PolicyTable rand_pi = softmax_policy(mdp, rand_logits);
  const PolicyTable right_pi = softmax_policy(mdp, right_logits);
  const PolicyTable down_pi = softmax_policy(mdp, down_logits);
  PolicyTable out = rand_pi;
  for (std::size_t i = 0; i < out.probs.size(); ++i) {
    out.probs[i] = bc.w_rand * rand_pi.probs[i] + bc.w_right * right_pi.probs[i] +
                   bc.w_down * down_pi.probs[i];
  }
  return out;
}

ValueSolution solve_values(const ExactMDP& mdp, const PolicyTable& pi) {
  check_policy(mdp, pi);
  const int n = mdp.n_states;
  std::vector<double> p_pi, r_pi;
  policy_kernels(mdp, pi, p_pi, r_pi);

  ValueSolution out;
  if (n <= 64) {
    // (I - gamma P_pi) V = r_pi
    std::vector<double> a(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        a[static_cast<std::size_t>(i) * n + j] =
            (i == j ? 1.0 : 0.0) - mdp.gamma * p_pi[static_cast<std::size_t>(i) * n + j];
      }
    }
    out.v = solve_linear(std::move(a), r_pi);
  } else {
    out.v.assign(n, 0.0);
    double residual = 1.0;
    for (int iter = 0; iter < 2'000'000 && residual > 1e-12; ++iter) {
      residual = 0.0;
      std::vector<double> next(n);
      for (int s = 0; s < n; ++s) {
        double acc = r_pi[s];
        for (int s2 = 0; s2 < n; ++s2) {
          acc += mdp.gamma * p_pi[static_cast<std::size_t>(s) * n + s2] * out.v[s2];
        }
        next[s] = acc;
        residual = std::max(residual, std::abs(acc - out.v[s]));
      }
      out.v.swap(next);
    }
  }

  // verify the fixed point regardless of the solve path
  double residual = 0.0;
  for (int s = 0; s < n; ++s) {
    double acc = r_pi[s];
    for (int s2 = 0; s2 < n; ++s2) {
      acc += mdp.gamma * p_pi[static_cast<std::size_t>(s) * n + s2] * out.v[s2];
    }
    residual = std::max(residual, std::abs(acc - out.v[s]));
  }
  if (residual > 1e-12) {
    throw std::runtime_error("Bellman solve residual " + std::to_string(residual) +
                             " exceeds tolerance");
  }

  out.q.resize(static_cast<std::size_t>(n) * mdp.n_actions);
  out.a.resize(out.q.size());
  for (int s = 0; s < n; ++s) {
    for (int act = 0; act < mdp.n_actions; ++act) {
      double acc = mdp.r(s, act);
      for (int s2 = 0; s2 < n; ++s2) acc += mdp.gamma * mdp.p(s, act, s2) * out.v[s2];
      out.q[static_cast<std::size_t>(s) * mdp.n_actions + act] = acc;
      out.a[static_cast<std::size_t>(s) * mdp.n_actions + act] = acc - out.v[s];
    }
  }
  return out;
}

std::vector<double> occupancy(const ExactMDP& mdp, const PolicyTable& pi) {
  check_policy(mdp, pi);
  const int n = mdp.n_states;
  std::vector<double> p_pi, r_pi;
  policy_kernels(mdp, pi, p_pi, r_pi);
  std::vector<double> d(n);
  if (n <= 64) {
    // (I - gamma P_pi^T) x = e_{s0}; d = (1 - gamma) x
    std::vector<double> a(static_cast<std::size_t>(n) * n);
    std::vector<double> b(n, 0.0);
    b[mdp.initial_state] = 1.0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        a[static_cast<std::size_t>(i) * n + j] =
            (i == j ? 1.0 : 0.0) - mdp.gamma * p_pi[static_cast<std::size_t>(j) * n + i];
      }
    }
    d = solve_linear(std::move(a), std::move(b));
  } else {
    // truncated power series sum_t gamma^t (P^T)^t e_{s0}
    std::vector<double> cur(n, 0.0);
    cur[mdp.initial_state] = 1.0;
    d.assign(n, 0.0);
    double scale = 1.0;
    while (scale >= 1e-16) {
      for (int s = 0; s < n; ++s) d[s] += scale * cur[s];
      std::vector<double> next(n, 0.0);
      for (int s = 0; s < n; ++s) {
        if (cur[s] == 0.0) continue;
        for (int s2 = 0; s2 < n; ++s2) {
          next[s2] += cur[s] * p_pi[static_cast<std::size_t>(s) * n + s2];
        }
      }
      cur.swap(next);
      scale *= mdp.gamma;
    }
  }
  for (double& x : d) x *= 1.0 - mdp.gamma;
  return d;
}

GradStats exact_grad_stats(const ExactMDP& mdp, const PolicyTable& target,
                           const PolicyTable& behavior, const SurrogateKind& method,
                           int eval_state) {
  check_policy(mdp, target);
  check_policy(mdp, behavior);
  if (eval_state < 0 || eval_state >= mdp.n_states) {
    throw std::invalid_argument("eval_state out of range");
  }
  const int na = mdp.n_actions;
  const ValueSolution sol = solve_values(mdp, target);
  const int s = eval_state;

  // score(a) = one_hot(a) - pi(.|s), advantage from the exact solve
  auto adv = [&](int a) { return sol.a[static_cast<std::size_t>(s) * na + a]; };
  auto sample_grad = [&](int a, double mult, std::vector<double>& g) {
    const double coef = mult * adv(a);
    for (int j = 0; j < na; ++j) g[j] = coef * ((j == a ? 1.0 : 0.0) - target.p(s, j));
  };

  std::vector<double> g_true(na, 0.0);
  for (int a = 0; a < na; ++a) {
    const double coef = target.p(s, a) * adv(a);
    for (int j = 0; j < na; ++j) g_true[j] += coef * ((j == a ? 1.0 : 0.0) - target.p(s, j));
  }

  GradStats out;
  out.mean.assign(na, 0.0);
  std::vector<std::vector<double>> per_action(na, std::vector<double>(na));
  for (int a = 0; a < na; ++a) {
    const double mu = behavior.p(s, a);
    if (mu <= 0.0) {
      throw std::invalid_argument("behavior policy must have full support at eval_state");
    }
    const double rho = target.p(s, a) / mu;
    const double adv_a = adv(a);
    const int sign = adv_a > 0.0 ? 1 : adv_a < 0.0 ? -1 : 0;
    sample_grad(a, effective_multiplier(method, rho, sign), per_action[a]);
    for (int j = 0; j < na; ++j) out.mean[j] += mu * per_action[a][j];
  }
  double bias_sq = 0.0;
  for (int j = 0; j < na; ++j) {
    const double d = out.mean[j] - g_true[j];
    bias_sq += d * d;
  }
  out.bias = std::sqrt(bias_sq);
  for (int a = 0; a < na; ++a) {
    double dev_sq = 0.0;
    for (int j = 0; j < na; ++j) {
      const double d = per_action[a][j] - out.mean[j];
      dev_sq += d * d;
    }
    out.variance += behavior.p(s, a) * dev_sq;
  }
  return out;
}

std::vector<BiasVarPoint> pareto_sweep(const ExactMDP& mdp, const PolicyTable& target,
                                       const PolicyTable& behavior,
                                       std::span<const double> sigma_grid, int eval_state) {
  if (sigma_grid.empty()) throw std::invalid_argument("sigma grid must be nonempty");
  std::vector<BiasVarPoint> points;
  points.reserve(sigma_grid.size() + 3);
  for (double sigma : sigma_grid) {
    const GradStats st = exact_grad_stats(mdp, target, behavior, Gipo{sigma}, eval_state);
    points.push_back({"gipo", sigma, st.bias, st.variance, false});
  }
  {
    const GradStats st = exact_grad_stats(mdp, target, behavior, PpoClip{0.2}, eval_state);
    points.push_back({"ppo_clip", 0.2, st.bias, st.variance, false});
  }
  {
    const GradStats st = exact_grad_stats(mdp, target, behavior, Sapo{2.0, 1.0}, eval_state);
    points.push_back({"sapo", 2.0, st.bias, st.variance, false});
  }
  {
    const GradStats st = exact_grad_stats(mdp, target, behavior, NoClip{}, eval_state);
    points.push_back({"noclip", 0.0, st.bias, st.variance, false});
  }
  flag_frontier(points);
  return points;
}

void flag_frontier(std::vector<BiasVarPoint>& points) {
  for (auto& p : points) {
    p.on_frontier = true;
    for (const auto& q : points) {
      const bool leq = q.bias <= p.bias && q.variance <= p.variance;
      const bool strict = q.bias < p.bias || q.variance < p.variance;
      if (leq && strict) {
        p.on_frontier = false;
        break;
      }
    }
  }
}

void write_biasvar_csv(std::ostream& os, char case_id, std::span<const BiasVarPoint> points) {
  os << "case,method,param,bias,variance,on_frontier\n";
  char buf[128];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof(buf), "%c,%s,%.17g,%.17g,%.17g,%d\n", case_id, p.method.c_str(),
                  p.param, p.bias, p.variance, p.on_frontier ? 1 : 0);
    os << buf;
  }
}

}  // namespace gipo
