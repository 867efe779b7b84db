#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

// Differentiable policies and value functions over enumerated states:
// a tabular softmax (exact gradients) and a small MLP actor-critic
// (hand-rolled reverse mode). Both expose one flat parameter vector with a
// documented ordering so finite-difference checks are reproducible.

namespace gipo {

using GradientVector = std::vector<double>;

// Common surface for the learner and the oracles. Implementations are value
// objects: clone() yields an independent copy, and a snapshot shared across
// threads is only ever read.
class ActorCritic {
 public:
  virtual ~ActorCritic() = default;

  virtual int n_states() const = 0;
  virtual int n_actions() const = 0;
  virtual std::size_t param_count() const = 0;
  virtual std::span<double> params() = 0;
  virtual std::span<const double> params() const = 0;

  // Log probabilities over all actions at a state (log-space softmax) and the
  // scalar value estimate.
  virtual std::vector<double> log_probs(int state) const = 0;
  virtual double value(int state) const = 0;

  // Reverse-mode hook: accumulate (+=) the pullback of (d_logits, d_value)
  // at `state` into dparams. d_logits is with respect to the raw action
  // logits (pre-softmax); use (one_hot(a) - probs) to differentiate a
  // log probability.
  virtual void backward(int state, std::span<const double> d_logits, double d_value,
                        std::span<double> dparams) const = 0;

  // True for parameters belonging to the value head; the learner applies a
  // separate learning rate to those.
  virtual std::vector<std::uint8_t> value_param_mask() const = 0;

  // One-line architecture descriptor, parseable by make_actor_critic().
  virtual std::string arch() const = 0;

  virtual std::unique_ptr<ActorCritic> clone() const = 0;
};

// Per-state action logits plus a per-state value table.
// Parameter order: all logits row-major by (state, action), then values by state.
class TabularActorCritic final : public ActorCritic {
 public:
  TabularActorCritic(int n_states, int n_actions);

  int n_states() const override { return n_states_; }
  int n_actions() const override { return n_actions_; }
  std::size_t param_count() const override { return params_.size(); }
  std::span<double> params() override { return params_; }
  std::span<const double> params() const override { return params_; }
  std::vector<double> log_probs(int state) const override;
  double value(int state) const override;
  void backward(int state, std::span<const double> d_logits, double d_value,
                std::span<double> dparams) const override;
  std::vector<std::uint8_t> value_param_mask() const override;
  std::string arch() const override;
  std::unique_ptr<ActorCritic> clone() const override;

  // Direct access to the logit block of one state (length n_actions).
  std::span<double> state_logits(int state);

 private:
  int n_states_, n_actions_;
  std::vector<double> params_;
};

// One-hot state input, tanh trunk, categorical policy head and scalar value
// head. Parameter order is lexicographic by (layer, row, column):
//   W0 (hidden x in), b0, W1 (hidden x hidden), b1, ..., then policy head
//   Wp (actions x hidden), bp, then value head Wv (1 x hidden), bv.
class MlpActorCritic final : public ActorCritic {
 public:
  MlpActorCritic(int n_states, int n_actions, int hidden = 64, int hidden_layers = 2,
                 std::uint64_t init_seed = 0);

  int n_states() const override { return n_states_; }
  int n_actions() const override { return n_actions_; }
  std::size_t param_count() const override { return params_.size(); }
  std::span<double> params() override { return params_; }
  std::span<const double> params() const override { return params_; }
  std::vector<double> log_probs(int state) const override;
  double value(int state) const override;
  void backward(int state, std::span<const double> d_logits, double d_value,
                std::span<double> dparams) const override;
  std::vector<std::uint8_t> value_param_mask() const override;
  std::string arch() const override;
  std::unique_ptr<ActorCritic> clone() const override;

  int hidden() const { return hidden_; }
  int hidden_layers() const { return hidden_layers_; }

 private:
  struct Forward;  // cached activations for one state
  Forward run_forward(int state) const;

  int n_states_, n_actions_, hidden_, hidden_layers_;
  std::vector<double> params_;
  // offsets into params_ per tensor, in declaration order
  std::vector<std::size_t> offsets_;
};

// "tabular S A" or "mlp S A HIDDEN LAYERS"; throws on anything else.
std::unique_ptr<ActorCritic> make_actor_critic(const std::string& arch,
                                               std::uint64_t init_seed = 0);

double log_prob(const ActorCritic& ac, int state, int action);

// d log pi(action|state) / d params, as a full flat vector.
GradientVector score(const ActorCritic& ac, int state, int action);

double entropy(const ActorCritic& ac, int state);
GradientVector entropy_grad(const ActorCritic& ac, int state);

// Importance ratio exp(log pi - behavior_logp) twice: .live participates in
// differentiation (d live / d params = live * score), .detached is the same
// number treated as a constant. Numerically identical by construction.
struct RatioPair {
  double live;
  double detached;
};
RatioPair detached_ratio(const ActorCritic& ac, double behavior_logp, int state, int action);

// Checkpoints: a short text header (arch line, version counter, parameter
// count) followed by the raw parameter vector as little-endian float64.
void save_parameters(const ActorCritic& ac, std::uint64_t version,
                     const std::filesystem::path& path);

struct LoadedParameters {
  std::string arch;
  std::uint64_t version = 0;
  std::vector<double> params;
};
LoadedParameters load_parameters(const std::filesystem::path& path);

}  // namespace gipo
