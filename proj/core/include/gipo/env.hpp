#pragma once

#include <memory>

// Steppable episodic environments for the actor-learner pipeline. The grid
// task mirrors the enumerable MDP used by the exact study so dynamics can be
// cross-checked against the transition tables.

namespace gipo {

struct StepResult {
  int next_state = 0;
  double reward = 0.0;
  bool terminal = false;   // reached the absorbing goal
  bool truncated = false;  // hit the episode step limit
};

class Env {
 public:
  virtual ~Env() = default;
  virtual int n_states() const = 0;
  virtual int n_actions() const = 0;
  // Starts a new episode and returns the initial state.
  virtual int reset() = 0;
  // Advances one step. Calling step after terminal/truncated without reset
  // is an error.
  virtual StepResult step(int action) = 0;
  virtual int state() const = 0;
};

// Deterministic grid, actions [up, down, left, right], -1 per step until the
// bottom-right goal, off-grid moves keep the state. Episodes truncate after
// max_episode_steps.
class GridWorldEnv final : public Env {
 public:
  GridWorldEnv(int rows, int cols, int max_episode_steps);

  int n_states() const override { return rows_ * cols_; }
  int n_actions() const override { return 4; }
  int reset() override;
  StepResult step(int action) override;
  int state() const override { return state_; }

  int rows() const { return rows_; }
  int cols() const { return cols_; }

 private:
  int rows_, cols_, max_steps_;
  int state_ = 0;
  int steps_ = 0;
  bool episode_over_ = true;
};

std::unique_ptr<Env> make_gridworld_env(int rows, int cols, int max_episode_steps);

}  // namespace gipo
