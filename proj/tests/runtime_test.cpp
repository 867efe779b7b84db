#include "gipo/runtime.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "doctest.h"

#include "gipo/mdp.hpp"

using namespace gipo;

namespace {

std::filesystem::path temp_dir(const char* tag) {
  auto p = std::filesystem::temp_directory_path() / (std::string("gipo_rt_") + tag);
  std::filesystem::remove_all(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// A batch of already-prepared items with frozen coefficients, advantages and
// value targets, decoupled from any replay buffer.
std::vector<PreparedItem> frozen_items(const ActorCritic& ac, const LearnerConfig& cfg,
                                       std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::vector<PreparedItem> items;
  for (int i = 0; i < n; ++i) {
    PreparedItem it;
    it.state = static_cast<int>(rng() % ac.n_states());
    it.action = static_cast<int>(rng() % ac.n_actions());
    const double lp = log_prob(ac, it.state, it.action);
    it.behavior_logp = lp + 0.6 * unif(rng);
    it.rho = std::exp(lp - it.behavior_logp);
    it.advantage = 2.0 * unif(rng);
    it.v_target = unif(rng);
    const int sign = it.advantage > 0 ? 1 : it.advantage < 0 ? -1 : 0;
    it.coeff = detached_coefficient(cfg.surrogate, it.rho, sign);
    items.push_back(it);
  }
  return items;
}

GradientVector fd_loss_gradient(ActorCritic& ac, std::span<const PreparedItem> items,
                                const LearnerConfig& cfg, PolicyLossForm form,
                                double step = 1e-5) {
  GradientVector g(ac.param_count());
  auto params = ac.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + step;
    const double hi = total_loss(ac, items, cfg, form).total;
    params[i] = saved - step;
    const double lo = total_loss(ac, items, cfg, form).total;
    params[i] = saved;
    g[i] = (hi - lo) / (2.0 * step);
  }
  return g;
}

LearnerConfig toy_learner(const SurrogateKind& kind) {
  LearnerConfig cfg;
  cfg.surrogate = kind;
  cfg.gamma = 0.99;
  cfg.lambda = 0.95;
  cfg.value_coef = 0.5;
  cfg.entropy_coef = 0.01;
  cfg.policy_lr = 0.05;
  cfg.value_lr = 0.1;
  cfg.batch_size = 32;
  cfg.total_updates = 24;
  return cfg;
}

RegimeConfig toy_regime() {
  RegimeConfig regime;
  regime.num_actors = 2;
  regime.segment_len = 8;
  regime.replay_capacity = 256;
  regime.min_fill = 32;
  regime.updates_per_round = 2;
  regime.t_old = 8;
  return regime;
}

EnvFactory grid_env_factory(int rows = 2, int cols = 2, int max_steps = 32) {
  return [=]() { return make_gridworld_env(rows, cols, max_steps); };
}

}  // namespace

TEST_SUITE("runtime") {

TEST_CASE("train state construction") {
  const auto st = make_train_state("tabular 4 4", 11);
  CHECK(st.ac->param_count() == 20);
  CHECK(st.adam_m.size() == 20);
  CHECK(st.adam_v.size() == 20);
  CHECK(st.learner_version == 0);
  CHECK(st.adam_step == 0);
  for (double m : st.adam_m) CHECK(m == 0.0);
}

TEST_CASE("prepared targets: one-step residuals and version gaps") {
  auto st = make_train_state("tabular 4 4", 1);
  auto* tab = dynamic_cast<TabularActorCritic*>(st.ac.get());
  REQUIRE(tab != nullptr);
  // value table [0.1, 0.2, 0.3, 0.4]
  for (int s = 0; s < 4; ++s) st.ac->params()[16 + s] = 0.1 * (s + 1);

  LearnerConfig cfg = toy_learner(NoClip{});
  Transition t;
  t.state = 0;
  t.action = 1;
  t.reward = -1.0;
  t.next_state = 2;
  t.behavior_logp = std::log(0.25);
  std::vector<SampledTransition> batch = {{t, 5}};
  auto items = prepare_batch(st, batch, cfg);
  REQUIRE(items.size() == 1);
  CHECK(items[0].delta_v == 5);
  CHECK(items[0].rho == doctest::Approx(1.0).epsilon(1e-12));  // uniform logits
  const double expect_adv = -1.0 + 0.99 * 0.3 - 0.1;
  CHECK(items[0].advantage == doctest::Approx(expect_adv).epsilon(1e-13));
  CHECK(items[0].v_target == doctest::Approx(-1.0 + 0.99 * 0.3).epsilon(1e-13));

  // a true terminal bootstraps zero regardless of the next state's value
  Transition done = t;
  done.done = true;
  std::vector<SampledTransition> dbatch = {{done, 0}};
  const auto ditems = prepare_batch(st, dbatch, cfg);
  CHECK(ditems[0].advantage == doctest::Approx(-1.0 - 0.1).epsilon(1e-13));
  CHECK(ditems[0].v_target == doctest::Approx(-1.0).epsilon(1e-13));
}

TEST_CASE("prepared targets: truncated importance weighting") {
  auto st = make_train_state("tabular 4 4", 1);
  for (int s = 0; s < 4; ++s) st.ac->params()[16 + s] = 0.1 * (s + 1);
  LearnerConfig cfg = toy_learner(NoClip{});
  cfg.target = TargetScheme::kVtrace;
  cfg.rho_bar = 1.0;

  Transition t;
  t.state = 0;
  t.action = 1;
  t.reward = -1.0;
  t.next_state = 2;
  t.behavior_logp = std::log(0.05);  // current policy is uniform: rho = 5
  std::vector<SampledTransition> batch = {{t, 0}};
  const auto items = prepare_batch(st, batch, cfg);
  const double delta = -1.0 + 0.99 * 0.3 - 0.1;
  CHECK(items[0].rho == doctest::Approx(5.0).epsilon(1e-12));
  // the target construction truncates at rho_bar = 1
  CHECK(items[0].advantage == doctest::Approx(delta).epsilon(1e-12));
  CHECK(items[0].v_target == doctest::Approx(0.1 + delta).epsilon(1e-12));

  cfg.rho_bar = 8.0;
  cfg.c_bar = 2.0;
  const auto wide = prepare_batch(st, batch, cfg);
  CHECK(wide[0].advantage == doctest::Approx(5.0 * delta).epsilon(1e-12));
}

TEST_CASE("advantage normalization recenters the batch") {
  auto st = make_train_state("tabular 4 4", 3);
  LearnerConfig cfg = toy_learner(Gipo{1.0});
  cfg.normalize_advantages = true;
  std::mt19937_64 rng(5);
  std::vector<SampledTransition> batch;
  for (int i = 0; i < 64; ++i) {
    Transition t;
    t.state = static_cast<int>(rng() % 4);
    t.action = static_cast<int>(rng() % 4);
    t.reward = static_cast<double>(rng() % 7) - 3.0;
    t.next_state = static_cast<int>(rng() % 4);
    t.behavior_logp = std::log(0.25);
    batch.push_back({t, 0});
  }
  const auto items = prepare_batch(st, batch, cfg);
  double mean = 0.0, var = 0.0;
  for (const auto& it : items) mean += it.advantage;
  mean /= items.size();
  for (const auto& it : items) var += (it.advantage - mean) * (it.advantage - mean);
  var /= items.size();
  CHECK(std::abs(mean) < 1e-12);
  CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(1e-6));
  // the coefficient must see the normalized advantage's sign
  for (const auto& it : items) {
    const int sign = it.advantage > 0 ? 1 : it.advantage < 0 ? -1 : 0;
    CHECK(it.coeff == detached_coefficient(cfg.surrogate, it.rho, sign));
  }
}

TEST_CASE("unit ratios with zero advantages leave only the entropy pull") {
  auto st = make_train_state("tabular 4 4", 7);
  LearnerConfig cfg = toy_learner(Gipo{1.0});
  cfg.entropy_coef = 0.0;
  std::vector<PreparedItem> items(8);
  for (int i = 0; i < 8; ++i) {
    items[i].state = i % 4;
    items[i].action = i % 4;
    items[i].behavior_logp = log_prob(*st.ac, items[i].state, items[i].action);
    items[i].rho = 1.0;
    items[i].advantage = 0.0;
    items[i].v_target = st.ac->value(items[i].state);
    items[i].coeff = 1.0;
  }
  GradientVector grad;
  const auto loss = loss_and_gradient(*st.ac, items, cfg, grad);
  CHECK(loss.policy == 0.0);
  CHECK(loss.value == 0.0);
  for (double g : grad) CHECK(g == 0.0);

  // with the entropy bonus back on, only policy logits move
  cfg.entropy_coef = 0.01;
  loss_and_gradient(*st.ac, items, cfg, grad);
  const auto mask = st.ac->value_param_mask();
  bool policy_moved = false;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (mask[i]) {
      CHECK(grad[i] == 0.0);
    } else if (grad[i] != 0.0) {
      policy_moved = true;
    }
  }
  // uniform logits sit at the entropy maximum: the pull only appears off-uniform
  CHECK(!policy_moved);
  st.ac->params()[0] = 0.7;
  loss_and_gradient(*st.ac, items, cfg, grad);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!mask[i] && grad[i] != 0.0) policy_moved = true;
  }
  CHECK(policy_moved);
}

TEST_CASE("single plain-ratio sample moves along the score direction") {
  auto st = make_train_state("tabular 2 3", 9);
  st.ac->params()[1] = 0.4;  // make the state distribution non-uniform
  LearnerConfig cfg = toy_learner(NoClip{});
  cfg.entropy_coef = 0.0;
  cfg.value_coef = 0.0;

  PreparedItem it;
  it.state = 0;
  it.action = 1;
  it.behavior_logp = log_prob(*st.ac, 0, 1) - std::log(1.3);
  it.rho = 1.3;
  it.advantage = 0.8;
  it.v_target = st.ac->value(0);
  it.coeff = 1.0;
  GradientVector grad;
  loss_and_gradient(*st.ac, std::vector<PreparedItem>{it}, cfg, grad);
  const auto lp = st.ac->log_probs(0);
  for (int a = 0; a < 3; ++a) {
    const double want = -1.3 * 0.8 * ((a == 1 ? 1.0 : 0.0) - std::exp(lp[a]));
    CHECK(grad[a] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("analytic gradients match finite differences for every family") {
  std::mt19937_64 rng(13);
  const SurrogateKind kinds[] = {Gipo{1.0}, Gipo{0.3}, Sapo{2.0, 1.0}, NoClip{}};
  for (const auto& kind : kinds) {
    for (const char* arch : {"tabular 4 4", "mlp 4 4 8 2"}) {
      auto ac = make_actor_critic(arch, rng());
      if (std::string(arch).rfind("tabular", 0) == 0) {
        std::normal_distribution<double> normal(0.0, 0.8);
        for (double& p : ac->params()) p = normal(rng);
      }
      LearnerConfig cfg = toy_learner(kind);
      const auto items = frozen_items(*ac, cfg, rng, 24);
      GradientVector analytic;
      const auto loss = loss_and_gradient(*ac, items, cfg, analytic);
      const auto fd = fd_loss_gradient(*ac, items, cfg, PolicyLossForm::kDetachedCoefficient);
      for (std::size_t i = 0; i < analytic.size(); ++i) {
        CHECK(std::abs(analytic[i] - fd[i]) <= 1e-4 * std::max(1.0, std::abs(fd[i])));
      }
      // the loss value itself agrees with the frozen-coefficient evaluation
      const auto direct = total_loss(*ac, items, cfg);
      CHECK(loss.total == doctest::Approx(direct.total).epsilon(1e-12));
    }
  }
}

TEST_CASE("hard-clip gradients match the true clipped objective off-boundary") {
  std::mt19937_64 rng(17);
  LearnerConfig cfg = toy_learner(PpoClip{0.2});
  auto ac = make_actor_critic("tabular 4 4", 0);
  std::normal_distribution<double> normal(0.0, 0.8);
  for (double& p : ac->params()) p = normal(rng);

  auto items = frozen_items(*ac, cfg, rng, 200);
  // keep a safety margin to the clip corners so no branch flips under the
  // finite-difference probes
  std::erase_if(items, [](const PreparedItem& it) {
    return std::abs(it.rho - 1.2) < 1e-3 || std::abs(it.rho - 0.8) < 1e-3;
  });
  REQUIRE(items.size() > 100);
  GradientVector analytic;
  loss_and_gradient(*ac, items, cfg, analytic);
  const auto fd = fd_loss_gradient(*ac, items, cfg, PolicyLossForm::kPpoClipObjective);
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    CHECK(std::abs(analytic[i] - fd[i]) <= 1e-4 * std::max(1.0, std::abs(fd[i])));
  }
  // the clip-objective form refuses other families
  CHECK_THROWS_AS(total_loss(*ac, items, toy_learner(NoClip{}),
                             PolicyLossForm::kPpoClipObjective),
                  std::invalid_argument);
}

TEST_CASE("externally substituted trust weights reproduce gradients bitwise") {
  std::mt19937_64 rng(19);
  LearnerConfig cfg = toy_learner(Gipo{0.7});
  auto ac = make_actor_critic("mlp 4 4 8 2", 23);
  auto items = frozen_items(*ac, cfg, rng, 32);

  GradientVector reference;
  loss_and_gradient(*ac, items, cfg, reference);

  // recompute every coefficient outside the learner and substitute it
  for (auto& it : items) it.coeff = gaussian_weight(clamp_ratio(it.rho), 0.7);
  GradientVector substituted;
  loss_and_gradient(*ac, items, cfg, substituted);
  REQUIRE(reference.size() == substituted.size());
  for (std::size_t i = 0; i < reference.size(); ++i) {
    CHECK(reference[i] == substituted[i]);
  }
}

TEST_CASE("optimizer step matches a hand-rolled reference") {
  auto st = make_train_state("tabular 2 2", 29);
  LearnerConfig cfg = toy_learner(Gipo{1.0});
  cfg.weight_decay = 0.01;
  std::mt19937_64 rng(31);
  std::vector<SampledTransition> batch;
  for (int i = 0; i < 16; ++i) {
    Transition t;
    t.state = static_cast<int>(rng() % 2);
    t.action = static_cast<int>(rng() % 2);
    t.reward = (i % 3) - 1.0;
    t.next_state = static_cast<int>(rng() % 2);
    t.behavior_logp = std::log(0.5) + 0.1 * ((i % 5) - 2);
    batch.push_back({t, static_cast<std::uint64_t>(i % 4)});
  }

  // replicate the update: same targets, same gradient, same moment math
  auto reference = st.ac->clone();
  const auto items = prepare_batch(st, batch, cfg);
  GradientVector grad;
  loss_and_gradient(*reference, items, cfg, grad);
  std::vector<double> m(grad.size(), 0.0), v(grad.size(), 0.0);
  const auto mask = reference->value_param_mask();
  auto p = reference->params();
  for (std::size_t i = 0; i < grad.size(); ++i) {
    m[i] = 0.1 * grad[i];
    v[i] = 0.001 * grad[i] * grad[i];
    const double mh = m[i] / (1.0 - 0.9);
    const double vh = v[i] / (1.0 - 0.999);
    const double lr = mask[i] ? cfg.value_lr : cfg.policy_lr;
    p[i] -= lr * (mh / (std::sqrt(vh) + cfg.adam_eps) + cfg.weight_decay * p[i]);
  }

  const auto metrics = learner_update(st, batch, cfg, 2);
  CHECK(st.learner_version == 1);
  CHECK(st.adam_step == 1);
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(st.ac->params()[i] == doctest::Approx(p[i]).epsilon(1e-14));
  }
  CHECK(metrics.grad_norm > 0.0);
  CHECK(metrics.kl_to_behavior >= 0.0);
  CHECK(metrics.d95 >= 0.0);
  CHECK(metrics.staleness.old_frac ==
        doctest::Approx(0.5).epsilon(1e-12));  // versions 2,3 of 0..3 are old at t_old=2
}

TEST_CASE("gradient clipping caps the global norm") {
  auto st = make_train_state("tabular 2 2", 3);
  LearnerConfig cfg = toy_learner(NoClip{});
  cfg.grad_clip_norm = 1e-3;
  Transition t;
  t.state = 0;
  t.action = 1;
  t.reward = 10.0;
  t.next_state = 1;
  t.behavior_logp = std::log(0.5);
  std::vector<SampledTransition> batch = {{t, 0}};
  const auto metrics = learner_update(st, batch, cfg, 10);
  // reported norm is pre-clip; the applied step is bounded by lr * O(1)
  CHECK(metrics.grad_norm > 1e-3);
  double moved = 0.0;
  for (double p : st.ac->params()) moved = std::max(moved, std::abs(p));
  CHECK(moved < 2.0 * std::max(cfg.policy_lr, cfg.value_lr));
}

TEST_CASE("non-finite losses abort with a diagnostic") {
  auto st = make_train_state("tabular 2 2", 5);
  LearnerConfig cfg = toy_learner(NoClip{});
  Transition t;
  t.state = 0;
  t.action = 0;
  t.reward = 0.0;
  t.next_state = 1;
  t.behavior_logp = std::log(0.5);
  std::vector<SampledTransition> batch = {{t, 0}};

  // an exploded value head overflows the squared value error
  st.ac->params()[4] = 1e200;
  CHECK_THROWS_WITH_AS(learner_update(st, batch, cfg, 10), doctest::Contains("non-finite"),
                       std::runtime_error);

  // an overflowing ratio is rejected at the domain check instead
  auto st2 = make_train_state("tabular 2 2", 5);
  Transition bad = t;
  bad.behavior_logp = -1e308;
  std::vector<SampledTransition> bad_batch = {{bad, 0}};
  CHECK_THROWS_AS(learner_update(st2, bad_batch, cfg, 10), std::invalid_argument);
}

TEST_CASE("snapshot channel hands out the latest parameters") {
  SnapshotChannel ch;
  const std::vector<double> a = {1.0, 2.0}, b = {3.0, 4.0};
  ch.publish(a, 1);
  std::vector<double> got;
  CHECK(ch.fetch(got) == 1);
  CHECK(got == a);
  ch.publish(b, 2);
  CHECK(ch.fetch(got) == 2);
  CHECK(got == b);
}

TEST_CASE("episode return window") {
  EpisodeReturns returns;
  CHECK(std::isnan(returns.mean()));
  returns.push(2.0);
  CHECK(returns.mean() == 2.0);
  returns.push(4.0);
  CHECK(returns.mean() == 3.0);
  for (int i = 0; i < 64; ++i) returns.push(10.0);
  CHECK(returns.mean() == 10.0);  // early episodes rolled out of the window
}

TEST_CASE("segment collection stamps versions and completes episodes") {
  auto st = make_train_state("tabular 4 4", 17);
  SnapshotChannel ch;
  ch.publish(st.ac->params(), 6);
  ReplayBuffer buf(128);
  EpisodeReturns returns;
  Actor actor;
  actor.env = make_gridworld_env(2, 2, 16);
  actor.policy = st.ac->clone();
  actor.rng.seed(99);
  for (int i = 0; i < 8; ++i) run_segment(actor, ch, buf, 8, returns);
  CHECK(buf.total_appended() == 64);
  CHECK(actor.snapshot_version == 6);
  for (const auto& t : buf.snapshot()) {
    CHECK(t.behavior_version == 6);
    CHECK(t.reward == -1.0);
    CHECK(t.state >= 0);
    CHECK(t.state < 4);
  }
  // a 2x2 grid with a 16-step cap finishes episodes quickly under any policy
  CHECK(!std::isnan(returns.mean()));
  CHECK(returns.mean() < 0.0);
}

TEST_CASE("grid env agrees with the exact transition tables") {
  const auto m = gridworld_2x2();
  GridWorldEnv env(2, 2, 64);
  std::mt19937_64 rng(7);
  int s = env.reset();
  CHECK(s == 0);
  for (int i = 0; i < 200; ++i) {
    const int a = static_cast<int>(rng() % 4);
    const int before = env.state();
    const auto res = env.step(a);
    CHECK(m.p(before, a, res.next_state) == 1.0);
    CHECK(res.reward == m.r(before, a));
    if (res.terminal) {
      CHECK(res.next_state == 3);
      env.reset();
    }
  }
}

TEST_CASE("grid env refuses steps after an episode ends and flags truncation") {
  GridWorldEnv env(2, 2, 3);
  CHECK_THROWS_AS(env.step(0), std::logic_error);  // must reset first
  env.reset();
  // bang into the left wall three times: no terminal, hits the step cap
  StepResult last;
  for (int i = 0; i < 3; ++i) last = env.step(2);
  CHECK(last.truncated);
  CHECK(!last.terminal);
  CHECK_THROWS_AS(env.step(2), std::logic_error);
  env.reset();
  const auto down = env.step(1);
  const auto right = env.step(3);
  CHECK(right.terminal);
  CHECK(!right.truncated);
  CHECK(down.next_state == 2);
}

TEST_CASE("interleaved training is reproducible byte for byte") {
  const auto learner = toy_learner(Gipo{1.0});
  const auto regime = toy_regime();
  const auto dir_a = temp_dir("det_a");
  const auto dir_b = temp_dir("det_b");
  const auto art_a = train(regime, learner, grid_env_factory(), "tabular 4 4", 42, dir_a);
  const auto art_b = train(regime, learner, grid_env_factory(), "tabular 4 4", 42, dir_b);
  CHECK(slurp(art_a.metrics_csv) == slurp(art_b.metrics_csv));
  CHECK(slurp(art_a.checkpoint) == slurp(art_b.checkpoint));
  CHECK(slurp(art_a.manifest) == slurp(art_b.manifest));
  CHECK(art_a.env_steps == art_b.env_steps);

  // a different seed must not reproduce the run
  const auto dir_c = temp_dir("det_c");
  const auto art_c = train(regime, learner, grid_env_factory(), "tabular 4 4", 43, dir_c);
  CHECK(slurp(art_a.metrics_csv) != slurp(art_c.metrics_csv));
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
  std::filesystem::remove_all(dir_c);
}

TEST_CASE("training run emits complete artifacts") {
  const auto learner = toy_learner(Gipo{1.0});
  const auto regime = toy_regime();
  const auto dir = temp_dir("artifacts");
  const auto art = train(regime, learner, grid_env_factory(), "tabular 4 4", 7, dir);
  CHECK(std::filesystem::exists(art.metrics_csv));
  CHECK(std::filesystem::exists(art.checkpoint));
  CHECK(std::filesystem::exists(art.manifest));

  std::ifstream in(art.metrics_csv);
  const auto rows = read_metrics_csv(in);
  CHECK(rows.size() == learner.total_updates);
  for (const auto& row : rows) {
    CHECK(row.method == "gipo");
    CHECK(row.sigma == 1.0);
    CHECK(row.env_steps > 0);
    CHECK(row.kl_to_behavior >= 0.0);
  }
  // env-step accounting: every round adds actors * segment transitions
  CHECK(art.env_steps % (regime.num_actors * regime.segment_len) == 0);
  CHECK(art.env_steps > 0);
  CHECK(std::isfinite(art.final_window_return));
  CHECK(art.env_failures == 0);

  const auto manifest = slurp(art.manifest);
  CHECK(manifest.find("seed 7") != std::string::npos);
  CHECK(manifest.find("surrogate gipo") != std::string::npos);
  CHECK(manifest.find("env_failures 0") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("single-actor refresh keeps version gaps under one round") {
  RegimeConfig regime;
  regime.num_actors = 1;
  regime.segment_len = 8;
  regime.replay_capacity = 8;  // buffer holds exactly the latest segment
  regime.min_fill = 8;
  regime.updates_per_round = 8;
  regime.t_old = 4;
  auto learner = toy_learner(Gipo{1.0});
  learner.total_updates = 40;
  learner.batch_size = 16;
  const auto dir = temp_dir("gaps");
  const auto art = train(regime, learner, grid_env_factory(), "tabular 4 4", 5, dir);
  std::ifstream in(art.metrics_csv);
  for (const auto& row : read_metrics_csv(in)) {
    CHECK(row.old_gap_p95 <= regime.updates_per_round);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("threaded mode runs the same learner to completion") {
  auto regime = toy_regime();
  regime.use_threads = true;
  auto learner = toy_learner(Gipo{1.0});
  learner.total_updates = 12;
  const auto dir = temp_dir("threads");
  const auto art = train(regime, learner, grid_env_factory(), "tabular 4 4", 21, dir);
  std::ifstream in(art.metrics_csv);
  const auto rows = read_metrics_csv(in);
  CHECK(rows.size() == learner.total_updates);
  CHECK(art.env_steps >= regime.min_fill);
  std::filesystem::remove_all(dir);
}

TEST_CASE("flaky envs are restarted and counted, not fatal") {
  class FlakyEnv final : public Env {
   public:
    explicit FlakyEnv(int every) : inner_(2, 2, 32), every_(every) {}
    int n_states() const override { return inner_.n_states(); }
    int n_actions() const override { return inner_.n_actions(); }
    int reset() override { return inner_.reset(); }
    int state() const override { return inner_.state(); }
    StepResult step(int action) override {
      if (++calls_ % every_ == 0) throw std::runtime_error("sensor glitch");
      return inner_.step(action);
    }

   private:
    GridWorldEnv inner_;
    int every_;
    int calls_ = 0;
  };

  auto learner = toy_learner(Gipo{1.0});
  learner.total_updates = 8;
  const auto regime = toy_regime();
  const auto dir = temp_dir("flaky");
  const auto art = train(regime, learner, [] { return std::make_unique<FlakyEnv>(13); },
                         "tabular 4 4", 3, dir);
  CHECK(art.env_failures > 0);
  std::ifstream in(art.metrics_csv);
  CHECK(read_metrics_csv(in).size() == learner.total_updates);
  std::filesystem::remove_all(dir);
}

TEST_CASE("train state checkpoints round-trip bit-exactly") {
  auto st = make_train_state("mlp 4 4 8 2", 77);
  LearnerConfig cfg = toy_learner(Gipo{1.0});
  std::vector<SampledTransition> batch;
  Transition t;
  t.state = 0;
  t.action = 1;
  t.reward = -1.0;
  t.next_state = 2;
  t.behavior_logp = std::log(0.25);
  for (int i = 0; i < 8; ++i) batch.push_back({t, 0});
  learner_update(st, batch, cfg, 10);
  st.env_steps = 321;
  st.rng.discard(17);

  const auto path = std::filesystem::temp_directory_path() / "gipo_train_state.bin";
  save_train_state(st, path);
  auto loaded = load_train_state(path);
  CHECK(loaded.ac->arch() == st.ac->arch());
  CHECK(loaded.learner_version == 1);
  CHECK(loaded.env_steps == 321);
  CHECK(loaded.adam_step == 1);
  CHECK(loaded.rng == st.rng);
  REQUIRE(loaded.ac->param_count() == st.ac->param_count());
  for (std::size_t i = 0; i < st.ac->param_count(); ++i) {
    CHECK(loaded.ac->params()[i] == st.ac->params()[i]);
    CHECK(loaded.adam_m[i] == st.adam_m[i]);
    CHECK(loaded.adam_v[i] == st.adam_v[i]);
  }
  std::filesystem::remove(path);
}

TEST_CASE("config validation rejects broken setups") {
  const auto learner = toy_learner(Gipo{1.0});
  const auto env = grid_env_factory();
  RegimeConfig regime = toy_regime();
  regime.num_actors = 0;
  CHECK_THROWS_AS(train(regime, learner, env, "tabular 4 4", 1, temp_dir("bad1")),
                  std::invalid_argument);
  regime = toy_regime();
  regime.min_fill = regime.replay_capacity + 1;
  CHECK_THROWS_AS(train(regime, learner, env, "tabular 4 4", 1, temp_dir("bad2")),
                  std::invalid_argument);
  auto broken = learner;
  broken.gamma = 1.0;
  CHECK_THROWS_AS(train(toy_regime(), broken, env, "tabular 4 4", 1, temp_dir("bad3")),
                  std::invalid_argument);
}

}  // TEST_SUITE
