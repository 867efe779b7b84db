#pragma once

#include <cstdint>
#include <variant>

// Ratio handling for off-policy policy gradients: the Gaussian trust weight,
// effective gradient multipliers for each surrogate family, and executable
// forms of the analytic bounds that go with them.
//
// Everything here is a pure function of its arguments; no shared state.

namespace gipo {

// Importance ratios are clamped to this range before any logarithm is taken.
// Wide enough that it never binds in sane training, tight enough that the log
// stays comfortably finite.
inline constexpr double kRhoMin = 1e-6;
inline constexpr double kRhoMax = 1e6;

double clamp_ratio(double rho);

// Tagged choice of actor-side multiplier family.
struct Gipo {
  double sigma = 1.0;  // unified damping scale
};
struct PpoClip {
  double epsilon = 0.2;  // clip radius
};
struct Sapo {
  double tau_pos = 2.0;  // decay scale for nonnegative advantages
  double tau_neg = 1.0;  // decay scale for negative advantages
};
struct NoClip {};  // plain importance sampling

using SurrogateKind = std::variant<Gipo, PpoClip, Sapo, NoClip>;

// Human-readable tag ("gipo", "ppo_clip", "sapo", "noclip") and the family's
// primary parameter (sigma, epsilon, tau_pos; 0 for noclip).
const char* surrogate_name(const SurrogateKind& kind);
double surrogate_param(const SurrogateKind& kind);

// Gaussian trust weight w(rho; sigma) = exp(-(log rho)^2 / (2 sigma^2)).
// rho is clamped to [kRhoMin, kRhoMax] before the log. Strictly positive
// (floored at the smallest normal double where exp underflows), at most 1,
// and symmetric under rho -> 1/rho.
// Throws std::invalid_argument for non-positive rho or sigma.
double gaussian_weight(double rho, double sigma);

// Effective multiplier m = w(rho; sigma) * rho with rho clamped in both
// factors, so 0 < m <= exp(sigma^2 / 2) globally (maximum at rho = exp(sigma^2)).
double gipo_multiplier(double rho, double sigma);

// Coefficient on grad-log-prob * advantage induced by differentiating the
// clipped surrogate min(rho*A, clip(rho, 1-eps, 1+eps)*A): rho while the
// unclipped branch is active, 0 once the constant branch takes over.
// adv_sign in {-1, 0, +1}; sign 0 is treated as unclipped.
double ppo_effective_multiplier(double rho, int adv_sign, double eps);

// Smooth asymmetric soft clip: m(rho, A) = 1 + tau(A) * tanh((rho - 1) / tau(A))
// with tau(A) = tau_pos for A >= 0 and tau_neg otherwise. m(1) = 1, slope 1 at
// rho = 1, saturates at 1 +- tau(A).
double sapo_multiplier(double rho, int adv_sign, double tau_pos, double tau_neg);

// Dispatch over SurrogateKind. NoClip returns rho unchanged (clamped).
double effective_multiplier(const SurrogateKind& kind, double rho, int adv_sign);

// The same multiplier split as coefficient * live_ratio: the returned value c
// is treated as a constant under differentiation, so the analytic gradient of
// -mean(c * rho(theta) * adv) is -mean(m * score * adv) for every family.
// For Gipo this is exactly the trust weight of the detached ratio.
double detached_coefficient(const SurrogateKind& kind, double rho_detached, int adv_sign);

// Inputs shared by the deviation/performance bounds below.
struct BoundInputs {
  double eps_adv = 0.0;  // advantage magnitude bound
  double delta = 0.0;    // per-state KL radius between behavior and target
  double tau = 1.0;      // truncation threshold, > 0
  std::int64_t n = 1;    // sample count
  double alpha = 0.05;   // confidence level in (0,1)
};

// Upper bound on the expected trust-weight shortfall E[1 - w]:
//   tau^2 / (2 sigma^2) + 2 exp(-tau) + sqrt(delta / 2).
// Valid for every tau > 0; tighter tau trades the quadratic term against the
// exponential tail term.
double trust_shortfall_bound(double tau, double sigma, double delta);

// The tau minimizing trust_shortfall_bound, i.e. the root of tau*e^tau = 2 sigma^2
// (principal Lambert W branch), found by Newton iteration from ln(1 + 2 sigma^2)
// to residual |tau*e^tau - 2 sigma^2| < 1e-12, widened to a few ulps of
// 2 sigma^2 once that exceeds what doubles can resolve.
double optimal_tau(double sigma);

// Value of the delta-independent part of the bound at the optimum:
//   g(tau*) = tau* (tau* + 2) / (2 sigma^2).
double optimal_tau_penalty(double sigma);

// Deviation radius for the weighted estimator's batch mean: with summands
// bounded by eps_adv * exp(sigma^2 / 2), the mean stays within
//   eps_adv * exp(sigma^2 / 2) * sqrt(2 ln(2/alpha) / n)
// of its expectation with probability at least 1 - alpha.
double hoeffding_deviation(const BoundInputs& in, double sigma);

// Certificate for the surrogate: a lower bound on the target policy's true
// performance given the surrogate value and KL radii.
//   L - C (sqrt(kl_mu_pi) sqrt(kl_pi_pinew) + kl_pi_pinew)
//     - eps_adv / (1 - gamma) * trust_shortfall_bound(tau, sigma, kl_mu_pinew)
// with C = 4 gamma eps_adv / (1 - gamma)^2.
double performance_lower_bound(double surrogate_value, double kl_mu_pi_max,
                               double kl_pi_pinew_max, double kl_mu_pinew_max,
                               double eps_adv, double gamma, double sigma,
                               double tau);

}  // namespace gipo
