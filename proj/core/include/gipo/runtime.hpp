#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gipo/diagnostics.hpp"
#include "gipo/env.hpp"
#include "gipo/policy.hpp"
#include "gipo/replay.hpp"
#include "gipo/surrogate.hpp"

// The actor-learner pipeline: one learner owns the mutable train state, actors
// hold versioned read-only policy snapshots and feed the replay buffer. Tests
// and reproducible runs use a deterministic interleaved scheduler; a real
// threaded mode drives the same actor and learner code.

namespace gipo {

struct RegimeConfig {
  int num_actors = 16;
  int segment_len = 8;
  std::size_t replay_capacity = 50'000;
  std::uint64_t t_old = 10'000;     // version-gap threshold for "old" samples
  std::size_t min_fill = 1'024;     // buffer size before learning starts
  int updates_per_round = 8;        // learner steps per actor round (interleaved mode)
  bool use_threads = false;
};

enum class TargetScheme { kGae, kVtrace };

struct LearnerConfig {
  SurrogateKind surrogate = Gipo{1.0};
  double gamma = 0.99;
  double lambda = 0.95;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double policy_lr = 3e-6;
  double value_lr = 3e-5;
  std::size_t batch_size = 256;
  std::uint64_t total_updates = 1'000;
  TargetScheme target = TargetScheme::kGae;
  double rho_bar = 1.0;
  double c_bar = 1.0;
  bool normalize_advantages = false;
  double grad_clip_norm = 0.0;  // 0 disables
  double weight_decay = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct TrainState {
  std::unique_ptr<ActorCritic> ac;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  std::uint64_t adam_step = 0;
  std::uint64_t learner_version = 0;
  std::uint64_t env_steps = 0;
  std::mt19937_64 rng;
};

TrainState make_train_state(const std::string& arch, std::uint64_t seed);

// One batch item after target construction: the detached ratio, the advantage
// and value target, and the frozen surrogate coefficient c such that the
// policy term is -mean(c * rho(theta) * advantage). coeff is a plain number;
// substituting an externally computed value exercises the same gradient path.
struct PreparedItem {
  int state = 0;
  int action = 0;
  double behavior_logp = 0.0;
  double rho = 0.0;       // detached ratio at the current parameters
  double advantage = 0.0;
  double v_target = 0.0;
  double coeff = 0.0;
  std::uint64_t delta_v = 0;
};

std::vector<PreparedItem> prepare_batch(const TrainState& state,
                                        std::span<const SampledTransition> batch,
                                        const LearnerConfig& cfg);

struct LossBreakdown {
  double total = 0.0;
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
};

// Analytic gradient of total = policy + value_coef*value - entropy_coef*entropy
// with the items' coeff, advantage and v_target treated as constants.
// Appends nothing; grad is overwritten.
LossBreakdown loss_and_gradient(const ActorCritic& ac, std::span<const PreparedItem> items,
                                const LearnerConfig& cfg, std::vector<double>& grad);

// How the policy term is evaluated by total_loss (the finite-difference side):
// kDetachedCoefficient re-evaluates -mean(coeff * rho(theta) * adv) with coeff
// frozen; kPpoClipObjective evaluates the true clipped surrogate
// -mean(min(rho*adv, clip(rho)*adv)), which has the same gradient away from
// the clip boundaries.
enum class PolicyLossForm { kDetachedCoefficient, kPpoClipObjective };

LossBreakdown total_loss(const ActorCritic& ac, std::span<const PreparedItem> items,
                         const LearnerConfig& cfg,
                         PolicyLossForm form = PolicyLossForm::kDetachedCoefficient);

struct UpdateMetrics {
  LossBreakdown loss;
  UtilizationReport util;
  StalenessSummary staleness;
  double d95 = 0.0;
  double kl_to_behavior = 0.0;  // mean(rho - 1 - log rho) over the batch
  double grad_norm = 0.0;
};

// One learner iteration: targets, surrogate coefficients, analytic gradient,
// AdamW step (policy_lr on policy parameters, value_lr on the value head),
// version increment, and the diagnostics row data. Throws on a non-finite
// loss with a summary of the offending batch.
UpdateMetrics learner_update(TrainState& state, std::span<const SampledTransition> batch,
                             const LearnerConfig& cfg, std::uint64_t t_old = 10'000);

// Latest published parameters, shared learner -> actors.
class SnapshotChannel {
 public:
  void publish(std::span<const double> params, std::uint64_t version);
  // Returns the version; copies params into out (resized as needed).
  std::uint64_t fetch(std::vector<double>& out) const;

 private:
  mutable std::mutex mu_;
  std::vector<double> params_;
  std::uint64_t version_ = 0;
};

// Trailing mean over the most recent completed episodes (window of 64).
class EpisodeReturns {
 public:
  void push(double episode_return);
  double mean() const;  // NaN until the first episode completes

 private:
  mutable std::mutex mu_;
  std::vector<double> window_;
  std::size_t next_ = 0;
  bool full_ = false;
};

struct Actor {
  std::unique_ptr<Env> env;
  std::unique_ptr<ActorCritic> policy;  // private snapshot copy
  std::uint64_t snapshot_version = 0;
  std::mt19937_64 rng;
  double episode_return = 0.0;
  bool episode_over = true;
  std::uint64_t env_failures = 0;
};

// Refresh the snapshot, then collect exactly segment_len transitions (episodes
// reset as they finish; an env failure restarts the episode and is counted,
// not raised).
void run_segment(Actor& actor, const SnapshotChannel& channel, ReplayBuffer& buffer,
                 int segment_len, EpisodeReturns& returns);

struct TrainArtifacts {
  std::filesystem::path out_dir;
  std::filesystem::path metrics_csv;
  std::filesystem::path checkpoint;
  std::filesystem::path manifest;
  double final_window_return = 0.0;  // mean avg_return over the last 20% of env steps
  std::uint64_t env_steps = 0;
  std::uint64_t env_failures = 0;
};

using EnvFactory = std::function<std::unique_ptr<Env>()>;

// Runs the configured pipeline to learner.total_updates updates and writes
// metrics.csv, checkpoint.bin and manifest.txt under out_dir. The arch string
// selects the policy ("tabular S A" / "mlp S A H L"). Deterministic given the
// seed in interleaved mode.
TrainArtifacts train(const RegimeConfig& regime, const LearnerConfig& learner,
                     const EnvFactory& make_env, const std::string& arch, std::uint64_t seed,
                     const std::filesystem::path& out_dir);

// Bit-exact round trip of parameters, optimizer moments, counters and RNG.
void save_train_state(const TrainState& state, const std::filesystem::path& path);
TrainState load_train_state(const std::filesystem::path& path);

}  // namespace gipo
