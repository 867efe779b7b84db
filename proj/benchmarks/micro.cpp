#include <cmath>
#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "gipo/mdp.hpp"
#include "gipo/replay.hpp"
#include "gipo/runtime.hpp"
#include "gipo/surrogate.hpp"
#include "gipo/targets.hpp"

// Microbenchmarks for the hot paths: per-sample multiplier math, the exact
// enumeration study, replay traffic, target construction and one full learner
// step. Numbers are for tracking relative regressions, not absolute claims.

namespace {

using namespace gipo;

void BM_GaussianWeight(benchmark::State& state) {
  double rho = 0.1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(gaussian_weight(rho, 1.0));
    rho = rho < 10.0 ? rho * 1.001 : 0.1;
  }
}
BENCHMARK(BM_GaussianWeight);

void BM_GipoMultiplier(benchmark::State& state) {
  double rho = 0.1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(gipo_multiplier(rho, 1.0));
    rho = rho < 10.0 ? rho * 1.001 : 0.1;
  }
}
BENCHMARK(BM_GipoMultiplier);

void BM_SolveValues(benchmark::State& state) {
  const auto mdp = gridworld(static_cast<int>(state.range(0)), static_cast<int>(state.range(0)));
  const std::vector<double> logits(static_cast<std::size_t>(mdp.n_actions), 0.0);
  const auto pi = softmax_policy(mdp, logits);
  for (auto _ : state) {
    benchmark::DoNotOptimize(solve_values(mdp, pi));
  }
}
BENCHMARK(BM_SolveValues)->Arg(2)->Arg(4)->Arg(8);

void BM_ExactGradStats(benchmark::State& state) {
  const auto mdp = gridworld_2x2();
  const std::vector<double> logits = {0.0, 1.0, 0.0, 1.0};
  const auto target = softmax_policy(mdp, logits);
  const auto behavior = behavior_policy(mdp, behavior_case('B'));
  for (auto _ : state) {
    benchmark::DoNotOptimize(exact_grad_stats(mdp, target, behavior, Gipo{1.0}, 0));
  }
}
BENCHMARK(BM_ExactGradStats);

void BM_ParetoSweep(benchmark::State& state) {
  const auto mdp = gridworld_2x2();
  const std::vector<double> logits = {0.0, 1.0, 0.0, 1.0};
  const auto target = softmax_policy(mdp, logits);
  const auto behavior = behavior_policy(mdp, behavior_case('B'));
  std::vector<double> sigmas(25);
  for (int i = 0; i < 25; ++i) {
    sigmas[i] = 0.05 * std::pow(50.0 / 0.05, i / 24.0);
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(pareto_sweep(mdp, target, behavior, sigmas, 0));
  }
}
BENCHMARK(BM_ParetoSweep);

void BM_ReplayAppend(benchmark::State& state) {
  ReplayBuffer buffer(8192);
  Transition t;
  std::uint64_t v = 0;
  for (auto _ : state) {
    t.behavior_version = v++;
    buffer.append(t);
  }
}
BENCHMARK(BM_ReplayAppend);

void BM_ReplaySample(benchmark::State& state) {
  ReplayBuffer buffer(8192);
  Transition t;
  for (int i = 0; i < 8192; ++i) {
    t.behavior_version = static_cast<std::uint64_t>(i / 64);
    buffer.append(t);
  }
  std::mt19937_64 rng(1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        buffer.sample_uniform(static_cast<std::size_t>(state.range(0)), 200, rng));
  }
}
BENCHMARK(BM_ReplaySample)->Arg(64)->Arg(256);

TrajectorySegment bench_segment(int len, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  TrajectorySegment seg;
  for (int i = 0; i < len; ++i) {
    seg.states.push_back(static_cast<int>(rng() % 16));
    seg.actions.push_back(static_cast<int>(rng() % 4));
    seg.rewards.push_back(unif(rng));
    seg.behavior_logps.push_back(-1.4 + 0.3 * unif(rng));
  }
  seg.terminal = false;
  return seg;
}

void BM_Gae(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const auto seg = bench_segment(64, rng);
  std::vector<double> values(65, 0.1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(gae(seg, values, 0.99, 0.95));
  }
}
BENCHMARK(BM_Gae);

void BM_Vtrace(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const auto seg = bench_segment(64, rng);
  std::vector<double> values(65, 0.1);
  std::vector<double> target_logps(64, -1.3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(vtrace(seg, values, target_logps, 0.99));
  }
}
BENCHMARK(BM_Vtrace);

void BM_LearnerUpdate(benchmark::State& state) {
  const bool mlp = state.range(0) == 1;
  auto train_state = make_train_state(mlp ? "mlp 16 4 16 2" : "tabular 16 4", 5);
  train_state.learner_version = 200;
  LearnerConfig cfg;
  cfg.surrogate = Gipo{1.0};
  cfg.batch_size = 256;

  ReplayBuffer buffer(8192);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int i = 0; i < 8192; ++i) {
    Transition t;
    t.state = static_cast<int>(rng() % 16);
    t.action = static_cast<int>(rng() % 4);
    t.reward = unif(rng);
    t.next_state = static_cast<int>(rng() % 16);
    t.behavior_logp = -1.4 + 0.3 * unif(rng);
    t.behavior_version = static_cast<std::uint64_t>(i / 64);
    buffer.append(t);
  }
  for (auto _ : state) {
    const auto batch = buffer.sample_uniform(cfg.batch_size, train_state.learner_version,
                                             train_state.rng);
    benchmark::DoNotOptimize(learner_update(train_state, batch, cfg));
  }
}
BENCHMARK(BM_LearnerUpdate)->Arg(0)->Arg(1);

}  // namespace

BENCHMARK_MAIN();
