#include "gipo/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace gipo {

double nearest_rank_quantile(std::vector<double> xs, double q) {
  if (xs.empty()) throw std::invalid_argument("quantile of an empty sample");
  if (!(q > 0.0 && q <= 1.0)) throw std::invalid_argument("quantile level must lie in (0,1]");
  std::sort(xs.begin(), xs.end());
  const std::size_t rank =
      static_cast<std::size_t>(std::ceil(q * static_cast<double>(xs.size())));
  return xs[std::max<std::size_t>(rank, 1) - 1];
}

ContributionRecord make_contribution(double multiplier, double advantage,
                                     std::uint64_t delta_v) {
  return {multiplier, advantage, std::abs(multiplier * advantage), delta_v};
}

double default_tau_u(std::span<const ContributionRecord> batch) {
  std::vector<double> positive;
  positive.reserve(batch.size());
  for (const auto& rec : batch) {
    if (rec.u > 0.0) positive.push_back(rec.u);
  }
  if (positive.empty()) return 0.0;
  return 1e-3 * nearest_rank_quantile(std::move(positive), 0.5);
}

UtilizationReport utilization(std::span<const ContributionRecord> batch, double tau_u,
                              double tau_m, std::uint64_t t_old) {
  if (batch.empty()) throw std::invalid_argument("utilization needs a nonempty batch");
  if (tau_u < 0.0) throw std::invalid_argument("tau_u must be nonnegative");
  if (tau_m < 0.0) throw std::invalid_argument("tau_m must be nonnegative");

  UtilizationReport rep;
  const double n = static_cast<double>(batch.size());
  double total_u = 0.0, old_u = 0.0;
  std::size_t n_old = 0;
  for (const auto& rec : batch) {
    const double am = std::abs(rec.multiplier);
    if (rec.u <= tau_u) rep.near_zero_frac += 1.0;
    if (am == 0.0) rep.dead_frac += 1.0;
    else if (am <= tau_m) rep.suppressed_frac += 1.0;
    total_u += rec.u;
    if (rec.delta_v >= t_old) {
      ++n_old;
      old_u += rec.u;
    }
  }
  rep.near_zero_frac /= n;
  rep.dead_frac /= n;
  rep.suppressed_frac /= n;
  rep.share_old = total_u > 0.0 ? old_u / total_u : 0.0;

  if (n_old > 0) {
    double ess;
    if (old_u > 0.0) {
      // 1 / sum of squared normalized weights over the old subset
      double sum_sq = 0.0;
      for (const auto& rec : batch) {
        if (rec.delta_v >= t_old) {
          const double w = rec.u / old_u;
          sum_sq += w * w;
        }
      }
      ess = 1.0 / sum_sq;
    } else {
      ess = static_cast<double>(n_old);  // all-zero mass: treat as uniform
    }
    rep.ess_old = ess;
    rep.ess_old_normalized = ess / static_cast<double>(n_old);
  }
  return rep;
}

double tail_drift(std::span<const double> ratios) {
  if (ratios.empty()) throw std::invalid_argument("tail_drift needs a nonempty batch");
  std::vector<double> abs_log;
  abs_log.reserve(ratios.size());
  for (double r : ratios) {
    if (!(r > 0.0)) throw std::invalid_argument("ratios must be positive");
    abs_log.push_back(std::abs(std::log(r)));
  }
  return nearest_rank_quantile(std::move(abs_log), 0.95);
}

double window_mean(std::span<const std::pair<double, double>> series, double window_frac) {
  if (series.empty()) throw std::invalid_argument("window_mean needs a nonempty series");
  if (!(window_frac > 0.0 && window_frac <= 1.0)) {
    throw std::invalid_argument("window fraction must lie in (0,1]");
  }
  double max_step = series.front().first;
  for (const auto& [step, value] : series) max_step = std::max(max_step, step);
  const double cutoff = (1.0 - window_frac) * max_step;
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& [step, value] : series) {
    if (step >= cutoff) {
      sum += value;
      ++count;
    }
  }
  return sum / static_cast<double>(count);
}

Aggregate cross_task_aggregate(std::span<const double> per_task_means) {
  if (per_task_means.empty()) throw std::invalid_argument("aggregate needs at least one task");
  const double n = static_cast<double>(per_task_means.size());
  double mean = 0.0;
  for (double x : per_task_means) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : per_task_means) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / n)};
}

// ---------------------------------------------------------------------------
// metric CSV

const char* MetricsWriter::header() {
  return "step,env_steps,method,sigma,old_frac,old_gap_p95,d95,dead_frac,suppressed_frac,"
         "near_zero_frac,share_old,ess_old_norm,kl_to_behavior,avg_return";
}

MetricsWriter::MetricsWriter(std::ostream& os) : os_(os) { os_ << header() << '\n'; }

void MetricsWriter::append(const MetricRow& row) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%llu,%llu,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                static_cast<unsigned long long>(row.step),
                static_cast<unsigned long long>(row.env_steps), row.method.c_str(), row.sigma,
                row.old_frac, row.old_gap_p95, row.d95, row.dead_frac, row.suppressed_frac,
                row.near_zero_frac, row.share_old, row.ess_old_norm, row.kl_to_behavior,
                row.avg_return);
  os_ << buf;
}

std::vector<MetricRow> read_metrics_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("metric CSV is empty");
  if (line != MetricsWriter::header()) {
    throw std::runtime_error("metric CSV header mismatch: " + line);
  }
  std::vector<MetricRow> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 14) {
      throw std::runtime_error("metric CSV line " + std::to_string(line_no) +
                               ": expected 14 fields, got " + std::to_string(fields.size()));
    }
    try {
      MetricRow row;
      row.step = std::stoull(fields[0]);
      row.env_steps = std::stoull(fields[1]);
      row.method = fields[2];
      row.sigma = std::stod(fields[3]);
      row.old_frac = std::stod(fields[4]);
      row.old_gap_p95 = std::stod(fields[5]);
      row.d95 = std::stod(fields[6]);
      row.dead_frac = std::stod(fields[7]);
      row.suppressed_frac = std::stod(fields[8]);
      row.near_zero_frac = std::stod(fields[9]);
      row.share_old = std::stod(fields[10]);
      row.ess_old_norm = std::stod(fields[11]);
      row.kl_to_behavior = std::stod(fields[12]);
      row.avg_return = std::stod(fields[13]);
      rows.push_back(std::move(row));
    } catch (const std::exception&) {
      throw std::runtime_error("metric CSV line " + std::to_string(line_no) +
                               ": unparseable numeric field");
    }
  }
  return rows;
}

}  // namespace gipo
