#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

// Utilization and ratio-tail diagnostics with windowed aggregation, plus the
// metric CSV writer shared by training runs. All statistics use nearest-rank
// quantiles and are permutation-invariant over their batch.

namespace gipo {

// ceil(q*n)-th order statistic (1-indexed); q in (0,1].
double nearest_rank_quantile(std::vector<double> xs, double q);

struct ContributionRecord {
  double multiplier = 0.0;  // effective multiplier m
  double advantage = 0.0;   // advantage estimate paired with it
  double u = 0.0;           // contribution proxy |m * advantage|
  std::uint64_t delta_v = 0;
};
ContributionRecord make_contribution(double multiplier, double advantage, std::uint64_t delta_v);

struct UtilizationReport {
  double near_zero_frac = 0.0;  // Pr(u <= tau_u)
  double dead_frac = 0.0;       // Pr(|m| = 0)
  double suppressed_frac = 0.0; // Pr(0 < |m| <= tau_m)
  double share_old = 0.0;       // contribution mass on old samples; 0 when total mass is 0
  // ESS over old samples from normalized contribution weights; absent when the
  // batch has no old samples. A zero-mass old set counts as uniform.
  std::optional<double> ess_old;
  std::optional<double> ess_old_normalized;  // ess_old / |old|
  std::optional<double> d95;                 // filled by the caller via tail_drift
};

// Scale-relative near-zero threshold: 1e-3 times the median of the positive
// contribution proxies, 0 if every proxy is 0.
double default_tau_u(std::span<const ContributionRecord> batch);
inline constexpr double kDefaultTauM = 1e-2;

UtilizationReport utilization(std::span<const ContributionRecord> batch, double tau_u,
                              double tau_m, std::uint64_t t_old);

// Nearest-rank 0.95 quantile of |log rho|.
double tail_drift(std::span<const double> ratios);

// Mean over the points whose env step lies in the trailing window:
// step >= (1 - window_frac) * max step.
double window_mean(std::span<const std::pair<double, double>> series_step_value,
                   double window_frac = 0.2);

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
};
Aggregate cross_task_aggregate(std::span<const double> per_task_means);

// One row per learner update in the training metric stream.
struct MetricRow {
  std::uint64_t step = 0;
  std::uint64_t env_steps = 0;
  std::string method;
  double sigma = 0.0;  // damping scale for gipo rows, 0 otherwise
  double old_frac = 0.0;
  double old_gap_p95 = 0.0;
  double d95 = 0.0;
  double dead_frac = 0.0;
  double suppressed_frac = 0.0;
  double near_zero_frac = 0.0;
  double share_old = 0.0;
  double ess_old_norm = 0.0;  // NaN when the batch had no old samples
  double kl_to_behavior = 0.0;
  double avg_return = 0.0;
};

class MetricsWriter {
 public:
  explicit MetricsWriter(std::ostream& os);
  void append(const MetricRow& row);
  static const char* header();

 private:
  std::ostream& os_;
};

// Minimal reader for the same schema; throws naming the offending line on a
// malformed file.
std::vector<MetricRow> read_metrics_csv(std::istream& is);

}  // namespace gipo
