#include "gipo_cli/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

#include "gipo/diagnostics.hpp"
#include "gipo/env.hpp"
#include "gipo/mdp.hpp"
#include "gipo/runtime.hpp"
#include "gipo/surrogate.hpp"

namespace gipo::cli {

namespace {

std::string format(const char* fmt, ...) {
  char buf[512];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, args);
  va_end(args);
  return buf;
}

EnvFactory grid_factory(const EnvSpec& env) {
  return [env] { return make_gridworld_env(env.rows, env.cols, env.max_episode_steps); };
}

double finite_mean(const std::vector<double>& vals) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : vals) {
    if (!std::isfinite(v)) continue;
    sum += v;
    ++n;
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(n);
}

}  // namespace

std::filesystem::path resolve_out_dir(const std::filesystem::path& config_out,
                                      const std::optional<std::filesystem::path>& flag_out) {
  if (const char* env = std::getenv("GIPO_OUT"); env != nullptr && *env != '\0') {
    return env;
  }
  if (flag_out.has_value()) return *flag_out;
  return config_out;
}

void cmd_train(const std::filesystem::path& config_path,
               std::optional<std::uint64_t> seed_override,
               std::optional<std::filesystem::path> out_override, std::ostream& os) {
  RunConfig cfg = load_run_config(config_path);
  if (seed_override) cfg.seed = *seed_override;
  cfg.out_dir = resolve_out_dir(cfg.out_dir, out_override);

  const auto art = train(cfg.regime, cfg.learner, grid_factory(cfg.env), resolve_arch(cfg),
                         cfg.seed, cfg.out_dir);
  os << "wrote " << art.metrics_csv.string() << "\n"
     << "wrote " << art.checkpoint.string() << "\n"
     << "wrote " << art.manifest.string() << "\n"
     << format("final window return %.6g over %llu env steps (%llu env failures)\n",
               art.final_window_return, static_cast<unsigned long long>(art.env_steps),
               static_cast<unsigned long long>(art.env_failures));
}

void cmd_biasvar(const std::string& cases, const std::string& sigma_grid_text,
                 const std::filesystem::path& out_dir, std::ostream& os) {
  std::vector<char> ids;
  if (cases == "all") {
    ids = {'A', 'B', 'C'};
  } else if (cases.size() == 1 && (cases[0] == 'A' || cases[0] == 'B' || cases[0] == 'C')) {
    ids = {cases[0]};
  } else {
    throw std::runtime_error("unknown case '" + cases + "' (expected A, B, C or all)");
  }
  const auto sigmas = parse_sigma_grid(sigma_grid_text);
  std::filesystem::create_directories(out_dir);

  const auto mdp = gridworld_2x2();
  const std::vector<double> logits = {0.0, 1.0, 0.0, 1.0};
  const auto target = softmax_policy(mdp, logits);

  std::vector<std::filesystem::path> csvs;
  for (char id : ids) {
    const auto behavior = behavior_policy(mdp, behavior_case(id));
    auto points = pareto_sweep(mdp, target, behavior, sigmas, 0);
    const auto csv = out_dir / (std::string("biasvar_case_") + id + ".csv");
    std::ofstream out(csv, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + csv.string() + "'");
    write_biasvar_csv(out, id, points);
    os << "wrote " << csv.string() << "\n";
    csvs.push_back(csv);
  }

  PlotSpec spec;
  spec.kind = PlotKind::kBiasvarPareto;
  spec.inputs = csvs;
  spec.output = out_dir / "biasvar_pareto.svg";
  render_plot(spec);
  os << "wrote " << spec.output.string() << "\n";
}

void cmd_sweep(const std::optional<std::filesystem::path>& config_path,
               const std::string& sigma_grid_text, std::optional<std::uint64_t> seed_override,
               std::optional<std::filesystem::path> out_override, std::ostream& os) {
  RunConfig base;
  base.learner.policy_lr = 1e-2;
  base.learner.value_lr = 2e-2;
  base.learner.total_updates = 400;
  base.out_dir = "sweep_out";
  if (config_path) base = load_run_config(*config_path);
  if (seed_override) base.seed = *seed_override;
  const auto out_dir = resolve_out_dir(base.out_dir, out_override);
  std::filesystem::create_directories(out_dir);

  const auto sigmas = parse_sigma_grid(sigma_grid_text);

  // the two regime presets from the staleness study: many actors over a deep
  // replay vs few actors over a shallow one
  struct Preset {
    const char* name;
    RegimeConfig regime;
    std::size_t batch;
  };
  std::vector<Preset> presets(2);
  presets[0].name = "fresh";
  presets[0].regime.num_actors = 2;
  presets[0].regime.replay_capacity = 128;
  presets[0].regime.min_fill = 64;
  presets[0].batch = 64;
  presets[1].name = "stale";
  presets[1].regime.num_actors = 16;
  presets[1].regime.replay_capacity = 8192;
  presets[1].regime.min_fill = 1024;
  presets[1].batch = 256;
  for (auto& p : presets) {
    p.regime.segment_len = 8;
    p.regime.updates_per_round = 8;
    p.regime.t_old = 100;
  }

  std::vector<SweepRow> rows;
  int run_index = 0;
  for (double sigma : sigmas) {
    for (const auto& preset : presets) {
      LearnerConfig learner = base.learner;
      learner.surrogate = Gipo{sigma};
      learner.batch_size = preset.batch;
      const auto run_dir = out_dir / format("run_%02d_%s", run_index++, preset.name);
      const auto art = train(preset.regime, learner, grid_factory(base.env),
                             resolve_arch(base), base.seed, run_dir);

      std::ifstream in(art.metrics_csv);
      const auto metrics = read_metrics_csv(in);
      const std::size_t cut = metrics.size() - metrics.size() / 5;
      std::vector<double> d95s, esss;
      for (std::size_t i = cut; i < metrics.size(); ++i) {
        d95s.push_back(metrics[i].d95);
        esss.push_back(metrics[i].ess_old_norm);
      }
      SweepRow row;
      row.sigma = sigma;
      row.regime = preset.name;
      row.d95 = finite_mean(d95s);
      row.ess_old_norm = finite_mean(esss);
      row.avg_return = art.final_window_return;
      rows.push_back(std::move(row));
      os << format("sigma %.6g %s: d95 %.4g, old ESS %.4g, return %.4g\n", sigma, preset.name,
                   rows.back().d95, rows.back().ess_old_norm, rows.back().avg_return);
    }
  }

  const auto csv = out_dir / "sweep.csv";
  std::ofstream out(csv, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + csv.string() + "'");
  write_sweep_csv(out, rows);
  out.close();
  os << "wrote " << csv.string() << "\n";

  PlotSpec spec;
  spec.kind = PlotKind::kSigmaSensitivity;
  spec.inputs = {csv};
  spec.output = out_dir / "sigma_sensitivity.svg";
  render_plot(spec);
  os << "wrote " << spec.output.string() << "\n";
}

void cmd_plot(const PlotSpec& spec, std::ostream& os) {
  render_plot(spec);
  os << "wrote " << spec.output.string() << "\n";
}

// ---------------------------------------------------------------------------
// verify: the bound machinery re-checked as a quick battery

namespace {

bool check_peak_attainment(std::string& detail) {
  const int n = 1'000'000;
  const double lo = std::log(1e-6), hi = std::log(1e6);
  for (double sigma : {0.25, 0.5, 1.0, 2.0}) {
    const double cap = std::exp(sigma * sigma / 2.0);
    double best = 0.0, best_rho = 0.0;
    for (int i = 0; i < n; ++i) {
      const double rho = std::exp(lo + (hi - lo) * i / n);
      const double m = gipo_multiplier(rho, sigma);
      if (m > best) {
        best = m;
        best_rho = rho;
      }
    }
    if (std::abs(best - cap) > 1e-9) {
      detail = format("sigma=%g: max multiplier %.12g vs cap %.12g", sigma, best, cap);
      return false;
    }
    const double step = (hi - lo) / n;
    if (std::abs(std::log(best_rho) - sigma * sigma) > 2.0 * step) {
      detail = format("sigma=%g: peak at rho=%.6g, expected exp(sigma^2)=%.6g", sigma, best_rho,
                      std::exp(sigma * sigma));
      return false;
    }
  }
  detail = "max multiplier matches exp(sigma^2/2) within 1e-9";
  return true;
}

bool check_log_symmetry(std::string& detail) {
  const int n = 100'000;
  const double lo = std::log(1e-6), hi = std::log(1e6);
  double worst = 0.0;
  for (double sigma : {0.25, 0.5, 1.0, 2.0}) {
    for (int i = 0; i < n; ++i) {
      const double rho = std::exp(lo + (hi - lo) * i / n);
      worst = std::max(worst,
                       std::abs(gaussian_weight(rho, sigma) - gaussian_weight(1.0 / rho, sigma)));
    }
  }
  detail = format("max |w(rho) - w(1/rho)| = %.3g", worst);
  return worst <= 1e-12;
}

bool check_tau_residual(std::string& detail) {
  double worst_rel = 0.0;
  for (int i = 0; i < 40; ++i) {
    const double sigma = 0.05 * std::pow(50.0 / 0.05, i / 39.0);
    const double target = 2.0 * sigma * sigma;
    const double tau = optimal_tau(sigma);
    const double residual = std::abs(tau * std::exp(tau) - target);
    const double tol = std::max(1e-12, 8.0 * std::numeric_limits<double>::epsilon() * target);
    if (residual > tol) {
      detail = format("sigma=%g: residual %.3g above %.3g", sigma, residual, tol);
      return false;
    }
    worst_rel = std::max(worst_rel, residual / target);
  }
  detail = format("max relative residual %.3g over sigma in [0.05, 50]", worst_rel);
  return true;
}

bool check_shortfall_bound(std::string& detail) {
  std::mt19937_64 rng(7);
  std::gamma_distribution<double> gamma_draw(0.4, 1.0);
  const auto simplex = [&](int n) {
    std::vector<double> p(n);
    double total = 0.0;
    for (double& x : p) {
      x = gamma_draw(rng);
      while (x <= 0.0) x = gamma_draw(rng);
      total += x;
    }
    for (double& x : p) x /= total;
    return p;
  };
  const double sigmas[] = {0.5, 1.0, 2.0};
  for (int k = 0; k < 200; ++k) {
    const int n = 4 + static_cast<int>(rng() % 13);
    const auto mu = simplex(n);
    const auto pi = simplex(n);
    double delta = 0.0;
    for (int a = 0; a < n; ++a) delta += mu[a] * std::log(mu[a] / pi[a]);
    const double sigma = sigmas[k % 3];
    double shortfall = 0.0;
    for (int a = 0; a < n; ++a) {
      shortfall += pi[a] * (1.0 - gaussian_weight(clamp_ratio(pi[a] / mu[a]), sigma));
    }
    for (int i = 0; i < 20; ++i) {
      const double tau = 0.05 * std::pow(10.0 / 0.05, i / 19.0);
      if (shortfall > trust_shortfall_bound(tau, sigma, delta) + 1e-12) {
        detail = format("pair %d (n=%d sigma=%g tau=%g): shortfall exceeds bound", k, n, sigma,
                        tau);
        return false;
      }
    }
  }
  detail = "enumerated shortfall within bound on 200 random categorical pairs";
  return true;
}

bool check_deviation_coverage(std::string& detail) {
  const int batches = 10'000, n = 100;
  const double alpha = 0.05, sigma = 1.0, eps_adv = 0.7;
  BoundInputs in;
  in.eps_adv = eps_adv;
  in.n = n;
  in.alpha = alpha;
  const double radius = hoeffding_deviation(in, sigma);
  const double scale = eps_adv * std::exp(sigma * sigma / 2.0);
  std::mt19937_64 rng(99);
  int violations = 0;
  for (int b = 0; b < batches; ++b) {
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += (rng() & 1) ? scale : -scale;
    if (std::abs(sum / n) > radius) ++violations;
  }
  const double rate = static_cast<double>(violations) / batches;
  detail = format("empirical violation rate %.4g vs alpha %.4g", rate, alpha);
  return rate <= alpha;
}

bool check_domain_errors(std::string& detail) {
  try {
    gaussian_weight(1.0, -1.0);
  } catch (const std::invalid_argument&) {
    detail = "sigma=-1 rejected with a domain error";
    return true;
  } catch (const std::exception& e) {
    detail = format("sigma=-1 raised the wrong exception type: %s", e.what());
    return false;
  }
  detail = "sigma=-1 was accepted";
  return false;
}

}  // namespace

int cmd_verify(std::ostream& os) {
  struct Check {
    const char* name;
    bool (*fn)(std::string&);
  };
  const Check checks[] = {
      {"multiplier peak attainment", check_peak_attainment},
      {"weight log-symmetry", check_log_symmetry},
      {"optimal truncation residual", check_tau_residual},
      {"trust shortfall bound", check_shortfall_bound},
      {"deviation bound coverage", check_deviation_coverage},
      {"domain error handling", check_domain_errors},
  };
  int failures = 0;
  for (const auto& check : checks) {
    std::string detail;
    const bool ok = check.fn(detail);
    if (!ok) ++failures;
    os << (ok ? "[ok]   " : "[FAIL] ") << check.name;
    if (!detail.empty()) os << ": " << detail;
    os << "\n";
  }
  os << (failures == 0 ? "all checks passed\n" : format("%d check(s) failed\n", failures));
  return failures;
}

}  // namespace gipo::cli
