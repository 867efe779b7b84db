#include "gipo/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace gipo {

namespace {

void require_positive(double x, const char* what) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw std::invalid_argument(std::string(what) + " must be positive and finite");
  }
}

}  // namespace

double clamp_ratio(double rho) {
  require_positive(rho, "ratio");
  return std::clamp(rho, kRhoMin, kRhoMax);
}

const char* surrogate_name(const SurrogateKind& kind) {
  struct Visitor {
    const char* operator()(const Gipo&) const { return "gipo"; }
    const char* operator()(const PpoClip&) const { return "ppo_clip"; }
    const char* operator()(const Sapo&) const { return "sapo"; }
    const char* operator()(const NoClip&) const { return "noclip"; }
  };
  return std::visit(Visitor{}, kind);
}

double surrogate_param(const SurrogateKind& kind) {
  struct Visitor {
    double operator()(const Gipo& g) const { return g.sigma; }
    double operator()(const PpoClip& p) const { return p.epsilon; }
    double operator()(const Sapo& s) const { return s.tau_pos; }
    double operator()(const NoClip&) const { return 0.0; }
  };
  return std::visit(Visitor{}, kind);
}

double gaussian_weight(double rho, double sigma) {
  require_positive(sigma, "sigma");
  const double log_rho = std::log(clamp_ratio(rho));
  // floor at the smallest normal double: the true weight is strictly positive,
  // and keeping that exact under exp() underflow (tiny sigma, extreme ratios)
  // preserves the "damping never kills a sample outright" contract
  return std::max(std::exp(-(log_rho * log_rho) / (2.0 * sigma * sigma)),
                  std::numeric_limits<double>::min());
}

double gipo_multiplier(double rho, double sigma) {
  return gaussian_weight(rho, sigma) * clamp_ratio(rho);
}

double ppo_effective_multiplier(double rho, int adv_sign, double eps) {
  require_positive(rho, "ratio");
  if (!(eps > 0.0 && eps < 1.0)) {
    throw std::invalid_argument("clip radius must lie in (0,1)");
  }
  // min(rho*A, clip(rho)*A) differentiates to rho*A while rho is on the
  // unclipped branch and to a constant once the clip binds: above 1+eps for
  // positive advantages, below 1-eps for negative ones.
  if (adv_sign > 0 && rho > 1.0 + eps) return 0.0;
  if (adv_sign < 0 && rho < 1.0 - eps) return 0.0;
  return rho;
}

double sapo_multiplier(double rho, int adv_sign, double tau_pos, double tau_neg) {
  require_positive(rho, "ratio");
  require_positive(tau_pos, "tau_pos");
  require_positive(tau_neg, "tau_neg");
  const double tau = adv_sign >= 0 ? tau_pos : tau_neg;
  return 1.0 + tau * std::tanh((rho - 1.0) / tau);
}

double effective_multiplier(const SurrogateKind& kind, double rho, int adv_sign) {
  struct Visitor {
    double rho;
    int adv_sign;
    double operator()(const Gipo& g) const { return gipo_multiplier(rho, g.sigma); }
    double operator()(const PpoClip& p) const {
      return ppo_effective_multiplier(rho, adv_sign, p.epsilon);
    }
    double operator()(const Sapo& s) const {
      return sapo_multiplier(rho, adv_sign, s.tau_pos, s.tau_neg);
    }
    double operator()(const NoClip&) const { return clamp_ratio(rho); }
  };
  return std::visit(Visitor{rho, adv_sign}, kind);
}

double detached_coefficient(const SurrogateKind& kind, double rho_detached, int adv_sign) {
  struct Visitor {
    double rho;
    int adv_sign;
    double operator()(const Gipo& g) const { return gaussian_weight(rho, g.sigma); }
    double operator()(const PpoClip& p) const {
      // multiplier is either rho or 0, so the coefficient is the branch indicator
      return ppo_effective_multiplier(rho, adv_sign, p.epsilon) == 0.0 ? 0.0 : 1.0;
    }
    double operator()(const Sapo& s) const {
      return sapo_multiplier(rho, adv_sign, s.tau_pos, s.tau_neg) / clamp_ratio(rho);
    }
    double operator()(const NoClip&) const {
      (void)clamp_ratio(rho);  // domain check only
      return 1.0;
    }
  };
  return std::visit(Visitor{rho_detached, adv_sign}, kind);
}

double trust_shortfall_bound(double tau, double sigma, double delta) {
  require_positive(tau, "tau");
  require_positive(sigma, "sigma");
  if (delta < 0.0) throw std::invalid_argument("delta must be nonnegative");
  return tau * tau / (2.0 * sigma * sigma) + 2.0 * std::exp(-tau) + std::sqrt(delta / 2.0);
}

double optimal_tau(double sigma) {
  require_positive(sigma, "sigma");
  const double target = 2.0 * sigma * sigma;
  // a residual below one ulp of the target is unreachable in doubles, so the
  // 1e-12 contract widens to machine precision once 2 sigma^2 is large
  const double tol =
      std::max(1e-12, 8.0 * std::numeric_limits<double>::epsilon() * target);
  // f(tau) = tau*e^tau - target is increasing and convex on tau > 0, so Newton
  // from a point left of the root converges monotonically.
  double tau = std::log1p(target);
  for (int iter = 0; iter < 128; ++iter) {
    const double e = std::exp(tau);
    const double f = tau * e - target;
    if (std::abs(f) < tol) return tau;
    const double next = tau - f / (e * (1.0 + tau));
    if (next == tau) break;  // step fell below representable resolution
    tau = next;
  }
  if (std::abs(tau * std::exp(tau) - target) < tol) return tau;
  throw std::runtime_error("optimal_tau: Newton iteration did not converge");
}

double optimal_tau_penalty(double sigma) {
  const double tau = optimal_tau(sigma);
  return tau * (tau + 2.0) / (2.0 * sigma * sigma);
}

double hoeffding_deviation(const BoundInputs& in, double sigma) {
  require_positive(sigma, "sigma");
  if (in.eps_adv < 0.0) throw std::invalid_argument("eps_adv must be nonnegative");
  if (in.n < 1) throw std::invalid_argument("sample count must be at least 1");
  if (!(in.alpha > 0.0 && in.alpha < 1.0)) {
    throw std::invalid_argument("alpha must lie in (0,1)");
  }
  const double bound = in.eps_adv * std::exp(sigma * sigma / 2.0);
  return bound * std::sqrt(2.0 * std::log(2.0 / in.alpha) / static_cast<double>(in.n));
}

double performance_lower_bound(double surrogate_value, double kl_mu_pi_max,
                               double kl_pi_pinew_max, double kl_mu_pinew_max,
                               double eps_adv, double gamma, double sigma,
                               double tau) {
  if (kl_mu_pi_max < 0.0 || kl_pi_pinew_max < 0.0 || kl_mu_pinew_max < 0.0) {
    throw std::invalid_argument("KL radii must be nonnegative");
  }
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw std::invalid_argument("gamma must lie in (0,1)");
  }
  if (eps_adv < 0.0) throw std::invalid_argument("eps_adv must be nonnegative");
  if (eps_adv == 0.0) return surrogate_value;  // every penalty scales with eps_adv
  const double c = 4.0 * gamma * eps_adv / ((1.0 - gamma) * (1.0 - gamma));
  const double mismatch =
      c * (std::sqrt(kl_mu_pi_max) * std::sqrt(kl_pi_pinew_max) + kl_pi_pinew_max);
  const double shortfall =
      eps_adv / (1.0 - gamma) * trust_shortfall_bound(tau, sigma, kl_mu_pinew_max);
  return surrogate_value - mismatch - shortfall;
}

}  // namespace gipo
