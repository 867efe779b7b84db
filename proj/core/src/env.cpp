#include "gipo/env.hpp"

#include <stdexcept>

namespace gipo {

GridWorldEnv::GridWorldEnv(int rows, int cols, int max_episode_steps)
    : rows_(rows), cols_(cols), max_steps_(max_episode_steps) {
  if (rows < 1 || cols < 1 || rows * cols < 2) {
    throw std::invalid_argument("grid needs at least two cells");
  }
  if (max_episode_steps < 1) {
    throw std::invalid_argument("episode step limit must be positive");
  }
}

int GridWorldEnv::reset() {
  state_ = 0;
  steps_ = 0;
  episode_over_ = false;
  return state_;
}

StepResult GridWorldEnv::step(int action) {
  if (episode_over_) throw std::logic_error("step called on a finished episode");
  if (action < 0 || action >= 4) throw std::out_of_range("action index out of range");
  static constexpr int kDr[4] = {-1, 1, 0, 0};
  static constexpr int kDc[4] = {0, 0, -1, 1};
  const int row = state_ / cols_, col = state_ % cols_;
  const int r2 = row + kDr[action], c2 = col + kDc[action];
  StepResult res;
  res.next_state =
      (r2 >= 0 && r2 < rows_ && c2 >= 0 && c2 < cols_) ? r2 * cols_ + c2 : state_;
  res.reward = -1.0;
  state_ = res.next_state;
  ++steps_;
  res.terminal = state_ == rows_ * cols_ - 1;
  res.truncated = !res.terminal && steps_ >= max_steps_;
  episode_over_ = res.terminal || res.truncated;
  return res;
}

std::unique_ptr<Env> make_gridworld_env(int rows, int cols, int max_episode_steps) {
  return std::make_unique<GridWorldEnv>(rows, cols, max_episode_steps);
}

}  // namespace gipo
