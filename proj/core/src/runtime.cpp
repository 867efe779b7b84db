#include "gipo/runtime.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "gipo/targets.hpp"

namespace gipo {

namespace {

int sign_of(double x) { return x > 0.0 ? 1 : x < 0.0 ? -1 : 0; }

void validate(const RegimeConfig& regime, const LearnerConfig& learner) {
  if (regime.num_actors < 1) throw std::invalid_argument("need at least one actor");
  if (regime.segment_len < 1) throw std::invalid_argument("segment length must be positive");
  if (regime.min_fill < 1 || regime.min_fill > regime.replay_capacity) {
    throw std::invalid_argument("min_fill must lie in [1, replay_capacity]");
  }
  if (regime.updates_per_round < 1) {
    throw std::invalid_argument("updates_per_round must be positive");
  }
  if (!(learner.gamma > 0.0 && learner.gamma < 1.0)) {
    throw std::invalid_argument("gamma must lie in (0,1)");
  }
  if (learner.batch_size < 1) throw std::invalid_argument("batch size must be positive");
  if (learner.total_updates < 1) throw std::invalid_argument("total_updates must be positive");
  if (learner.policy_lr <= 0.0 || learner.value_lr <= 0.0) {
    throw std::invalid_argument("learning rates must be positive");
  }
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string surrogate_desc(const SurrogateKind& kind) {
  char buf[96];
  if (const auto* g = std::get_if<Gipo>(&kind)) {
    std::snprintf(buf, sizeof(buf), "gipo %.17g", g->sigma);
  } else if (const auto* p = std::get_if<PpoClip>(&kind)) {
    std::snprintf(buf, sizeof(buf), "ppo_clip %.17g", p->epsilon);
  } else if (const auto* s = std::get_if<Sapo>(&kind)) {
    std::snprintf(buf, sizeof(buf), "sapo %.17g %.17g", s->tau_pos, s->tau_neg);
  } else {
    std::snprintf(buf, sizeof(buf), "noclip");
  }
  return buf;
}

std::string canonical_config_line(const RegimeConfig& r, const LearnerConfig& l,
                                  const std::string& arch, std::uint64_t seed) {
  std::ostringstream os;
  os << arch << '|' << seed << '|' << r.num_actors << ' ' << r.segment_len << ' '
     << r.replay_capacity << ' ' << r.t_old << ' ' << r.min_fill << ' ' << r.updates_per_round
     << ' ' << r.use_threads << '|' << surrogate_desc(l.surrogate) << ' ' << l.gamma << ' '
     << l.lambda << ' ' << l.value_coef << ' ' << l.entropy_coef << ' ' << l.policy_lr << ' '
     << l.value_lr << ' ' << l.batch_size << ' ' << l.total_updates << ' '
     << (l.target == TargetScheme::kGae ? "gae" : "vtrace") << ' ' << l.rho_bar << ' ' << l.c_bar
     << ' ' << l.normalize_advantages << ' ' << l.grad_clip_norm << ' ' << l.weight_decay;
  return os.str();
}

}  // namespace

TrainState make_train_state(const std::string& arch, std::uint64_t seed) {
  TrainState st;
  st.ac = make_actor_critic(arch, seed);
  st.adam_m.assign(st.ac->param_count(), 0.0);
  st.adam_v.assign(st.ac->param_count(), 0.0);
  st.rng.seed(seed);
  return st;
}

std::vector<PreparedItem> prepare_batch(const TrainState& state,
                                        std::span<const SampledTransition> batch,
                                        const LearnerConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const ActorCritic& ac = *state.ac;
  std::vector<PreparedItem> items;
  items.reserve(batch.size());
  for (const auto& s : batch) {
    const Transition& t = s.t;
    PreparedItem it;
    it.state = t.state;
    it.action = t.action;
    it.behavior_logp = t.behavior_logp;
    it.delta_v = s.delta_v;
    const double logp = log_prob(ac, t.state, t.action);
    it.rho = std::exp(logp - t.behavior_logp);

    // route each transition through the target module as a length-1 segment
    TrajectorySegment seg;
    seg.states = {t.state};
    seg.actions = {t.action};
    seg.rewards = {t.reward};
    seg.behavior_logps = {t.behavior_logp};
    seg.terminal = t.done;
    const double v_next = t.done ? 0.0 : ac.value(t.next_state);
    seg.bootstrap_value = v_next;
    const double values[2] = {ac.value(t.state), v_next};
    TargetSet ts;
    if (cfg.target == TargetScheme::kGae) {
      ts = gae(seg, values, cfg.gamma, cfg.lambda);
    } else {
      const double target_logps[1] = {logp};
      ts = vtrace(seg, values, target_logps, cfg.gamma, cfg.rho_bar, cfg.c_bar);
    }
    it.advantage = ts.advantages[0];
    it.v_target = ts.value_targets[0];
    items.push_back(it);
  }
  if (cfg.normalize_advantages) {
    double mean = 0.0;
    for (const auto& it : items) mean += it.advantage;
    mean /= static_cast<double>(items.size());
    double var = 0.0;
    for (const auto& it : items) var += (it.advantage - mean) * (it.advantage - mean);
    const double sd = std::sqrt(var / static_cast<double>(items.size()));
    for (auto& it : items) it.advantage = (it.advantage - mean) / (sd + 1e-8);
  }
  for (auto& it : items) {
    it.coeff = detached_coefficient(cfg.surrogate, it.rho, sign_of(it.advantage));
  }
  return items;
}

LossBreakdown loss_and_gradient(const ActorCritic& ac, std::span<const PreparedItem> items,
                                const LearnerConfig& cfg, std::vector<double>& grad) {
  if (items.empty()) throw std::invalid_argument("empty batch");
  grad.assign(ac.param_count(), 0.0);
  const double n = static_cast<double>(items.size());
  LossBreakdown loss;
  std::vector<double> d_logits(ac.n_actions());
  for (const auto& it : items) {
    const auto lp = ac.log_probs(it.state);
    const double rho_live = std::exp(lp[it.action] - it.behavior_logp);
    loss.policy -= it.coeff * rho_live * it.advantage / n;
    // d(policy)/d logp(a) = -coeff * rho * adv / n, pulled through the softmax
    const double d_lpa = -it.coeff * rho_live * it.advantage / n;

    double h = 0.0;
    for (double l : lp) h -= std::exp(l) * l;
    loss.entropy += h / n;

    for (int j = 0; j < ac.n_actions(); ++j) {
      const double p_j = std::exp(lp[j]);
      d_logits[j] = d_lpa * ((j == it.action ? 1.0 : 0.0) - p_j);
      // -entropy_coef * dH/dz_j, dH/dz_j = -p_j (log p_j + H)
      d_logits[j] += cfg.entropy_coef / n * p_j * (lp[j] + h);
    }
    const double v = ac.value(it.state);
    loss.value += (v - it.v_target) * (v - it.v_target) / n;
    const double d_value = cfg.value_coef * 2.0 * (v - it.v_target) / n;
    ac.backward(it.state, d_logits, d_value, grad);
  }
  loss.total = loss.policy + cfg.value_coef * loss.value - cfg.entropy_coef * loss.entropy;
  return loss;
}

LossBreakdown total_loss(const ActorCritic& ac, std::span<const PreparedItem> items,
                         const LearnerConfig& cfg, PolicyLossForm form) {
  if (items.empty()) throw std::invalid_argument("empty batch");
  const double n = static_cast<double>(items.size());
  LossBreakdown loss;
  const PpoClip* ppo = std::get_if<PpoClip>(&cfg.surrogate);
  if (form == PolicyLossForm::kPpoClipObjective && ppo == nullptr) {
    throw std::invalid_argument("clip-objective loss form requires the ppo_clip surrogate");
  }
  for (const auto& it : items) {
    const auto lp = ac.log_probs(it.state);
    const double rho = std::exp(lp[it.action] - it.behavior_logp);
    if (form == PolicyLossForm::kDetachedCoefficient) {
      loss.policy -= it.coeff * rho * it.advantage / n;
    } else {
      const double clipped = std::clamp(rho, 1.0 - ppo->epsilon, 1.0 + ppo->epsilon);
      loss.policy -= std::min(rho * it.advantage, clipped * it.advantage) / n;
    }
    double h = 0.0;
    for (double l : lp) h -= std::exp(l) * l;
    loss.entropy += h / n;
    const double v = ac.value(it.state);
    loss.value += (v - it.v_target) * (v - it.v_target) / n;
  }
  loss.total = loss.policy + cfg.value_coef * loss.value - cfg.entropy_coef * loss.entropy;
  return loss;
}

UpdateMetrics learner_update(TrainState& state, std::span<const SampledTransition> batch,
                             const LearnerConfig& cfg, std::uint64_t t_old) {
  ActorCritic& ac = *state.ac;
  const auto items = prepare_batch(state, batch, cfg);
  std::vector<double> grad;
  UpdateMetrics metrics;
  metrics.loss = loss_and_gradient(ac, items, cfg, grad);

  if (!std::isfinite(metrics.loss.total)) {
    double rho_min = items[0].rho, rho_max = items[0].rho, adv_max = 0.0;
    for (const auto& it : items) {
      rho_min = std::min(rho_min, it.rho);
      rho_max = std::max(rho_max, it.rho);
      adv_max = std::max(adv_max, std::abs(it.advantage));
    }
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "non-finite loss (policy=%g value=%g entropy=%g) at version %llu; "
                  "rho in [%g, %g], max |adv| %g",
                  metrics.loss.policy, metrics.loss.value, metrics.loss.entropy,
                  static_cast<unsigned long long>(state.learner_version), rho_min, rho_max,
                  adv_max);
    throw std::runtime_error(buf);
  }

  double norm_sq = 0.0;
  for (double g : grad) norm_sq += g * g;
  metrics.grad_norm = std::sqrt(norm_sq);
  if (cfg.grad_clip_norm > 0.0 && metrics.grad_norm > cfg.grad_clip_norm) {
    const double scale = cfg.grad_clip_norm / metrics.grad_norm;
    for (double& g : grad) g *= scale;
  }

  // AdamW, decoupled weight decay, value-head parameters on their own rate
  const auto mask = ac.value_param_mask();
  ++state.adam_step;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.adam_step));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.adam_step));
  auto params = ac.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.adam_m[i];
    auto& v = state.adam_v[i];
    m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * grad[i];
    v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * grad[i] * grad[i];
    const double lr = mask[i] ? cfg.value_lr : cfg.policy_lr;
    const double step = (m / bc1) / (std::sqrt(v / bc2) + cfg.adam_eps);
    params[i] -= lr * (step + cfg.weight_decay * params[i]);
  }
  ++state.learner_version;

  // diagnostics: effective multiplier m = coeff * rho, contribution u = |m * adv|
  std::vector<ContributionRecord> records;
  std::vector<double> ratios;
  records.reserve(items.size());
  ratios.reserve(items.size());
  double kl = 0.0;
  for (const auto& it : items) {
    records.push_back(make_contribution(it.coeff * it.rho, it.advantage, it.delta_v));
    ratios.push_back(it.rho);
    kl += it.rho - 1.0 - std::log(it.rho);
  }
  metrics.kl_to_behavior = kl / static_cast<double>(items.size());
  metrics.util = utilization(records, default_tau_u(records), kDefaultTauM, t_old);
  metrics.d95 = tail_drift(ratios);
  metrics.util.d95 = metrics.d95;
  metrics.staleness = staleness_summary(batch, t_old);
  return metrics;
}

// ---------------------------------------------------------------------------
// actors

void SnapshotChannel::publish(std::span<const double> params, std::uint64_t version) {
  std::lock_guard<std::mutex> lock(mu_);
  params_.assign(params.begin(), params.end());
  version_ = version;
}

std::uint64_t SnapshotChannel::fetch(std::vector<double>& out) const {
  std::lock_guard<std::mutex> lock(mu_);
  out = params_;
  return version_;
}

void EpisodeReturns::push(double episode_return) {
  std::lock_guard<std::mutex> lock(mu_);
  constexpr std::size_t kWindow = 64;
  if (window_.size() < kWindow) {
    window_.push_back(episode_return);
  } else {
    window_[next_] = episode_return;
    next_ = (next_ + 1) % kWindow;
    full_ = true;
  }
}

double EpisodeReturns::mean() const {
  std::lock_guard<std::mutex> lock(mu_);
  if (window_.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (double r : window_) sum += r;
  return sum / static_cast<double>(window_.size());
}

void run_segment(Actor& actor, const SnapshotChannel& channel, ReplayBuffer& buffer,
                 int segment_len, EpisodeReturns& returns) {
  std::vector<double> snapshot_params;
  const std::uint64_t version = channel.fetch(snapshot_params);
  std::copy(snapshot_params.begin(), snapshot_params.end(), actor.policy->params().begin());
  actor.snapshot_version = version;

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int i = 0; i < segment_len; ++i) {
    if (actor.episode_over) {
      try {
        actor.env->reset();
      } catch (const std::exception&) {
        ++actor.env_failures;
        continue;  // try again next step
      }
      actor.episode_return = 0.0;
      actor.episode_over = false;
    }
    const int s = actor.env->state();
    const auto lp = actor.policy->log_probs(s);
    // inverse-CDF draw over the categorical action distribution
    const double x = unif(actor.rng);
    int a = 0;
    double acc = 0.0;
    for (std::size_t j = 0; j < lp.size(); ++j) {
      acc += std::exp(lp[j]);
      if (x < acc || j + 1 == lp.size()) {
        a = static_cast<int>(j);
        break;
      }
    }
    StepResult res;
    try {
      res = actor.env->step(a);
    } catch (const std::exception&) {
      ++actor.env_failures;  // abandon the episode, restart on the next step
      actor.episode_over = true;
      continue;
    }
    buffer.append({s, a, res.reward, res.next_state, res.terminal, lp[a], version});
    actor.episode_return += res.reward;
    if (res.terminal || res.truncated) {
      returns.push(actor.episode_return);
      actor.episode_over = true;
    }
  }
}

// ---------------------------------------------------------------------------
// training orchestration

namespace {

struct RunAccounting {
  std::vector<std::pair<double, double>> return_series;  // (env_steps, avg_return)
  std::uint64_t env_failures = 0;
};

void write_manifest(const std::filesystem::path& path, const RegimeConfig& regime,
                    const LearnerConfig& learner, const std::string& arch, std::uint64_t seed,
                    std::uint64_t env_steps_end, std::uint64_t updates,
                    std::uint64_t env_failures) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path.string());
  const std::string canon = canonical_config_line(regime, learner, arch, seed);
  out << "gipo-run-manifest 1\n"
      << "seed " << seed << '\n'
      << "arch " << arch << '\n'
      << "surrogate " << surrogate_desc(learner.surrogate) << '\n'
      << "config_hash " << fnv1a(canon) << '\n'
      << "regime actors=" << regime.num_actors << " segment=" << regime.segment_len
      << " capacity=" << regime.replay_capacity << " t_old=" << regime.t_old
      << " min_fill=" << regime.min_fill << " updates_per_round=" << regime.updates_per_round
      << " threads=" << (regime.use_threads ? 1 : 0) << '\n'
      << "learner " << canon << '\n'
      << "env_steps_begin 0\n"
      << "env_steps_end " << env_steps_end << '\n'
      << "learner_updates " << updates << '\n'
      << "env_failures " << env_failures << '\n'
      << "build gipo-" << "0.1.0" << '\n';
}

}  // namespace

TrainArtifacts train(const RegimeConfig& regime, const LearnerConfig& learner,
                     const EnvFactory& make_env, const std::string& arch, std::uint64_t seed,
                     const std::filesystem::path& out_dir) {
  validate(regime, learner);
  std::filesystem::create_directories(out_dir);

  TrainState state = make_train_state(arch, seed);
  ReplayBuffer buffer(regime.replay_capacity);
  SnapshotChannel channel;
  channel.publish(state.ac->params(), 0);
  EpisodeReturns returns;

  std::vector<Actor> actors(static_cast<std::size_t>(regime.num_actors));
  for (int i = 0; i < regime.num_actors; ++i) {
    actors[i].env = make_env();
    actors[i].policy = state.ac->clone();
    actors[i].rng.seed(seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(i + 1)));
  }

  const std::filesystem::path metrics_path = out_dir / "metrics.csv";
  std::ofstream metrics_file(metrics_path);
  if (!metrics_file) throw std::runtime_error("cannot write metrics: " + metrics_path.string());
  MetricsWriter writer(metrics_file);

  const bool is_gipo = std::holds_alternative<Gipo>(learner.surrogate);
  const std::string method = surrogate_name(learner.surrogate);
  const double sigma = is_gipo ? std::get<Gipo>(learner.surrogate).sigma : 0.0;

  RunAccounting acct;
  auto log_update = [&](const UpdateMetrics& um) {
    MetricRow row;
    row.step = state.learner_version;
    row.env_steps = buffer.total_appended();
    row.method = method;
    row.sigma = sigma;
    row.old_frac = um.staleness.old_frac;
    row.old_gap_p95 = um.staleness.old_gap_p95;
    row.d95 = um.d95;
    row.dead_frac = um.util.dead_frac;
    row.suppressed_frac = um.util.suppressed_frac;
    row.near_zero_frac = um.util.near_zero_frac;
    row.share_old = um.util.share_old;
    row.ess_old_norm =
        um.util.ess_old_normalized.value_or(std::numeric_limits<double>::quiet_NaN());
    row.kl_to_behavior = um.kl_to_behavior;
    row.avg_return = returns.mean();
    writer.append(row);
    metrics_file.flush();
    if (!std::isnan(row.avg_return)) {
      acct.return_series.emplace_back(static_cast<double>(row.env_steps), row.avg_return);
    }
    state.env_steps = buffer.total_appended();
  };

  if (!regime.use_threads) {
    // deterministic interleave: one segment per actor, then a block of updates
    while (state.learner_version < learner.total_updates) {
      for (auto& actor : actors) {
        run_segment(actor, channel, buffer, regime.segment_len, returns);
      }
      if (buffer.size() < regime.min_fill) continue;
      for (int u = 0; u < regime.updates_per_round &&
                      state.learner_version < learner.total_updates;
           ++u) {
        const auto batch =
            buffer.sample_uniform(learner.batch_size, state.learner_version, state.rng);
        const UpdateMetrics um = learner_update(state, batch, learner, regime.t_old);
        channel.publish(state.ac->params(), state.learner_version);
        log_update(um);
      }
    }
  } else {
    std::atomic<bool> stop{false};
    std::mutex err_mu;
    std::string actor_error;
    std::vector<std::thread> threads;
    threads.reserve(actors.size());
    for (auto& actor : actors) {
      threads.emplace_back([&]() {
        try {
          while (!stop.load(std::memory_order_relaxed)) {
            run_segment(actor, channel, buffer, regime.segment_len, returns);
          }
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (actor_error.empty()) actor_error = e.what();
          stop.store(true);
        }
      });
    }
    try {
      while (buffer.size() < regime.min_fill && !stop.load()) {
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
      }
      while (state.learner_version < learner.total_updates && !stop.load()) {
        const auto batch =
            buffer.sample_uniform(learner.batch_size, state.learner_version, state.rng);
        const UpdateMetrics um = learner_update(state, batch, learner, regime.t_old);
        channel.publish(state.ac->params(), state.learner_version);
        log_update(um);
      }
    } catch (...) {
      stop.store(true);
      for (auto& t : threads) t.join();
      throw;  // metrics written so far stay on disk
    }
    stop.store(true);
    for (auto& t : threads) t.join();
    if (!actor_error.empty() && state.learner_version < learner.total_updates) {
      throw std::runtime_error("actor failed: " + actor_error);
    }
  }

  for (const auto& actor : actors) acct.env_failures += actor.env_failures;

  TrainArtifacts art;
  art.out_dir = out_dir;
  art.metrics_csv = metrics_path;
  art.checkpoint = out_dir / "checkpoint.bin";
  art.manifest = out_dir / "manifest.txt";
  art.env_steps = buffer.total_appended();
  art.env_failures = acct.env_failures;
  state.env_steps = art.env_steps;
  save_train_state(state, art.checkpoint);
  write_manifest(art.manifest, regime, learner, arch, seed, art.env_steps,
                 state.learner_version, acct.env_failures);
  art.final_window_return =
      acct.return_series.empty() ? std::numeric_limits<double>::quiet_NaN()
                                 : window_mean(acct.return_series, 0.2);
  return art;
}

// ---------------------------------------------------------------------------
// train-state checkpoints

void save_train_state(const TrainState& state, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  out << "gipo-train-state 1\n"
      << "arch " << state.ac->arch() << '\n'
      << "learner_version " << state.learner_version << '\n'
      << "env_steps " << state.env_steps << '\n'
      << "adam_step " << state.adam_step << '\n'
      << "rng " << state.rng << '\n'
      << "count " << state.ac->param_count() << '\n'
      << "data float64 le\n";
  auto write_block = [&](std::span<const double> xs) {
    out.write(reinterpret_cast<const char*>(xs.data()),
              static_cast<std::streamsize>(xs.size() * sizeof(double)));
  };
  write_block(state.ac->params());
  write_block(state.adam_m);
  write_block(state.adam_v);
  if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

TrainState load_train_state(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::string line;
  auto next_line = [&]() {
    if (!std::getline(in, line)) throw std::runtime_error("truncated checkpoint header");
    return line;
  };
  if (next_line() != "gipo-train-state 1") throw std::runtime_error("bad checkpoint magic");
  TrainState st;
  std::string arch;
  std::size_t count = 0;
  for (;;) {
    next_line();
    if (line == "data float64 le") break;
    std::istringstream is(line);
    std::string key;
    is >> key;
    if (key == "arch") {
      std::getline(is, arch);
      arch = arch.empty() ? arch : arch.substr(1);
    } else if (key == "learner_version") {
      is >> st.learner_version;
    } else if (key == "env_steps") {
      is >> st.env_steps;
    } else if (key == "adam_step") {
      is >> st.adam_step;
    } else if (key == "rng") {
      is >> st.rng;
      if (is.fail()) throw std::runtime_error("unreadable RNG state in checkpoint");
    } else if (key == "count") {
      is >> count;
    } else {
      throw std::runtime_error("unknown checkpoint header key: " + key);
    }
  }
  st.ac = make_actor_critic(arch);
  if (st.ac->param_count() != count) {
    throw std::runtime_error("checkpoint parameter count does not match arch");
  }
  auto read_block = [&](std::span<double> xs) {
    in.read(reinterpret_cast<char*>(xs.data()),
            static_cast<std::streamsize>(xs.size() * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != xs.size() * sizeof(double)) {
      throw std::runtime_error("truncated checkpoint payload");
    }
  };
  read_block(st.ac->params());
  st.adam_m.resize(count);
  st.adam_v.resize(count);
  read_block(st.adam_m);
  read_block(st.adam_v);
  return st;
}

}  // namespace gipo
