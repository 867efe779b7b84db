#include "gipo/policy.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <stdexcept>

#include "doctest.h"

using namespace gipo;

namespace {

// Central finite difference of f over every parameter of ac.
template <typename F>
GradientVector fd_gradient(ActorCritic& ac, F f, double step = 1e-5) {
  GradientVector g(ac.param_count());
  auto params = ac.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + step;
    const double hi = f();
    params[i] = saved - step;
    const double lo = f();
    params[i] = saved;
    g[i] = (hi - lo) / (2.0 * step);
  }
  return g;
}

void check_close(const GradientVector& analytic, const GradientVector& fd, double rel) {
  REQUIRE(analytic.size() == fd.size());
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    CHECK(std::abs(analytic[i] - fd[i]) <= rel * std::max(1.0, std::abs(fd[i])));
  }
}

void randomize(ActorCritic& ac, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  for (double& p : ac.params()) p = normal(rng);
}

}  // namespace

TEST_SUITE("policy") {

TEST_CASE("tabular softmax probabilities at the reference logits") {
  TabularActorCritic ac(2, 4);
  const double logits[4] = {0.0, 1.0, 0.0, 1.0};
  std::copy(logits, logits + 4, ac.state_logits(1).begin());
  const auto lp = ac.log_probs(1);
  CHECK(std::exp(lp[0]) == doctest::Approx(0.13447071068499755).epsilon(1e-14));
  CHECK(std::exp(lp[1]) == doctest::Approx(0.36552928931500245).epsilon(1e-14));
  CHECK(lp[0] == doctest::Approx(-2.006408868078168).epsilon(1e-14));
  // untouched state stays uniform
  for (double l : ac.log_probs(0)) CHECK(l == doctest::Approx(-std::log(4.0)).epsilon(1e-14));
}

TEST_CASE("probabilities normalize at every state") {
  std::mt19937_64 rng(5);
  TabularActorCritic tab(6, 5);
  MlpActorCritic mlp(6, 5, 16, 2, 7);
  randomize(tab, rng, 3.0);
  for (ActorCritic* ac : {static_cast<ActorCritic*>(&tab), static_cast<ActorCritic*>(&mlp)}) {
    for (int s = 0; s < 6; ++s) {
      double sum = 0.0;
      for (double l : ac->log_probs(s)) sum += std::exp(l);
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("softmax survives extreme logits") {
  TabularActorCritic ac(1, 3);
  auto logits = ac.state_logits(0);
  logits[0] = 1000.0;
  logits[1] = -1000.0;
  logits[2] = 999.0;
  const auto lp = ac.log_probs(0);
  for (double l : lp) CHECK(std::isfinite(l));
  CHECK(std::exp(lp[0]) + std::exp(lp[2]) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("tabular score is one_hot minus probs on the state block") {
  std::mt19937_64 rng(11);
  TabularActorCritic ac(3, 4);
  randomize(ac, rng);
  const auto g = score(ac, 1, 2);
  const auto lp = ac.log_probs(1);
  for (int s = 0; s < 3; ++s) {
    for (int a = 0; a < 4; ++a) {
      const double want = s == 1 ? (a == 2 ? 1.0 : 0.0) - std::exp(lp[a]) : 0.0;
      CHECK(g[s * 4 + a] == doctest::Approx(want).epsilon(1e-12));
    }
  }
  // value entries never touched by the policy score
  for (int s = 0; s < 3; ++s) CHECK(g[12 + s] == 0.0);
}

TEST_CASE("score averaged under the policy vanishes") {
  std::mt19937_64 rng(17);
  TabularActorCritic ac(4, 5);
  randomize(ac, rng, 2.0);
  for (int s = 0; s < 4; ++s) {
    const auto lp = ac.log_probs(s);
    GradientVector sum(ac.param_count(), 0.0);
    for (int a = 0; a < 5; ++a) {
      const auto g = score(ac, s, a);
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += std::exp(lp[a]) * g[i];
    }
    for (double v : sum) CHECK(std::abs(v) < 1e-10);
  }
}

TEST_CASE("entropy values and gradient") {
  TabularActorCritic ac(2, 4);
  CHECK(entropy(ac, 0) == doctest::Approx(std::log(4.0)).epsilon(1e-13));
  const double logits[4] = {0.0, 1.0, 0.0, 1.0};
  std::copy(logits, logits + 4, ac.state_logits(0).begin());
  CHECK(entropy(ac, 0) == doctest::Approx(1.2753502894481632).epsilon(1e-13));
  // near-deterministic distribution has entropy near zero
  auto sharp = ac.state_logits(1);
  sharp[0] = 40.0;
  CHECK(entropy(ac, 1) < 1e-12);

  std::mt19937_64 rng(23);
  randomize(ac, rng);
  const auto analytic = entropy_grad(ac, 0);
  const auto fd = fd_gradient(ac, [&]() { return entropy(ac, 0); });
  check_close(analytic, fd, 1e-6);
}

TEST_CASE("mlp log-prob and value gradients match finite differences") {
  std::mt19937_64 rng(29);
  for (int draw = 0; draw < 100; ++draw) {
    MlpActorCritic ac(5, 3, 8, 2, 1000 + draw);
    const int s = static_cast<int>(rng() % 5);
    const int a = static_cast<int>(rng() % 3);
    const auto g = score(ac, s, a);
    const auto fd = fd_gradient(ac, [&]() { return log_prob(ac, s, a); });
    check_close(g, fd, 1e-4);

    GradientVector dv(ac.param_count(), 0.0);
    const std::vector<double> zero_logits(3, 0.0);
    ac.backward(s, zero_logits, 1.0, dv);
    const auto fdv = fd_gradient(ac, [&]() { return ac.value(s); });
    check_close(dv, fdv, 1e-4);
  }
}

TEST_CASE("mlp entropy gradient matches finite differences") {
  MlpActorCritic ac(4, 4, 8, 2, 3);
  const auto analytic = entropy_grad(ac, 2);
  const auto fd = fd_gradient(ac, [&]() { return entropy(ac, 2); });
  check_close(analytic, fd, 1e-5);
}

TEST_CASE("backward accumulates instead of overwriting") {
  TabularActorCritic ac(2, 3);
  GradientVector g(ac.param_count(), 0.0);
  const std::vector<double> d_logits = {1.0, -0.5, 0.25};
  ac.backward(0, d_logits, 2.0, g);
  GradientVector once = g;
  ac.backward(0, d_logits, 2.0, g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    CHECK(g[i] == doctest::Approx(2.0 * once[i]).epsilon(1e-15));
  }
}

TEST_CASE("detached ratio is the live ratio bit for bit") {
  std::mt19937_64 rng(31);
  TabularActorCritic ac(3, 4);
  randomize(ac, rng);
  const double behavior = log_prob(ac, 1, 2);
  const auto pair = detached_ratio(ac, behavior, 1, 2);
  CHECK(pair.live == 1.0);  // identical policies
  CHECK(pair.live == pair.detached);
  const auto off = detached_ratio(ac, behavior - 0.3, 1, 2);
  CHECK(off.live == off.detached);
  CHECK(off.live == doctest::Approx(std::exp(0.3)).epsilon(1e-14));
  CHECK_THROWS_AS(detached_ratio(ac, std::nan(""), 1, 2),
                  std::invalid_argument);
}

TEST_CASE("value parameter mask marks exactly the value head") {
  TabularActorCritic tab(3, 4);
  const auto tmask = tab.value_param_mask();
  REQUIRE(tmask.size() == tab.param_count());
  for (std::size_t i = 0; i < tmask.size(); ++i) {
    CHECK(tmask[i] == (i >= 12 ? 1 : 0));  // 3*4 logits first, 3 values after
  }

  MlpActorCritic mlp(4, 3, 8, 1, 0);
  const auto mmask = mlp.value_param_mask();
  // value head = 8 weights + 1 bias; everything shared ahead of it is policy-rate
  std::size_t marked = 0;
  for (auto b : mmask) marked += b;
  CHECK(marked == 9);
  // the mask is a suffix: the value head is declared last
  std::size_t first = mmask.size();
  for (std::size_t i = 0; i < mmask.size(); ++i) {
    if (mmask[i]) {
      first = i;
      break;
    }
  }
  for (std::size_t i = first; i < mmask.size(); ++i) CHECK(mmask[i] == 1);
}

TEST_CASE("factory parses arch strings and round-trips descriptors") {
  const auto tab = make_actor_critic("tabular 7 3");
  CHECK(tab->n_states() == 7);
  CHECK(tab->n_actions() == 3);
  CHECK(tab->arch() == "tabular 7 3");
  const auto mlp = make_actor_critic("mlp 5 4 16 2", 9);
  CHECK(mlp->n_states() == 5);
  CHECK(mlp->arch() == "mlp 5 4 16 2");
  const auto again = make_actor_critic(mlp->arch(), 9);
  CHECK(std::equal(mlp->params().begin(), mlp->params().end(), again->params().begin()));
  CHECK_THROWS_AS(make_actor_critic("cnn 3 3"), std::invalid_argument);
  CHECK_THROWS_AS(make_actor_critic("tabular 0 4"), std::invalid_argument);
  CHECK_THROWS_AS(make_actor_critic("mlp 4 4"), std::invalid_argument);
}

TEST_CASE("mlp init is seed-deterministic") {
  MlpActorCritic a(4, 4, 8, 2, 42), b(4, 4, 8, 2, 42), c(4, 4, 8, 2, 43);
  CHECK(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
  bool differ = false;
  for (std::size_t i = 0; i < a.param_count(); ++i) {
    if (a.params()[i] != c.params()[i]) differ = true;
  }
  CHECK(differ);
}

TEST_CASE("clone is an independent copy") {
  TabularActorCritic ac(2, 2);
  auto copy = ac.clone();
  copy->params()[0] = 5.0;
  CHECK(ac.params()[0] == 0.0);
  CHECK(copy->params()[0] == 5.0);
}

TEST_CASE("parameter checkpoints round-trip bit-exactly") {
  std::mt19937_64 rng(37);
  MlpActorCritic ac(4, 3, 8, 2, 5);
  randomize(ac, rng);
  const auto path = std::filesystem::temp_directory_path() / "gipo_params_test.bin";
  save_parameters(ac, 1234, path);
  const auto loaded = load_parameters(path);
  CHECK(loaded.arch == ac.arch());
  CHECK(loaded.version == 1234);
  REQUIRE(loaded.params.size() == ac.param_count());
  for (std::size_t i = 0; i < loaded.params.size(); ++i) {
    CHECK(loaded.params[i] == ac.params()[i]);
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint loader rejects foreign files") {
  const auto path = std::filesystem::temp_directory_path() / "gipo_params_bad.bin";
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f != nullptr);
    std::fputs("not a checkpoint\n", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(load_parameters(path), std::runtime_error);
  std::filesystem::remove(path);
}

}  // TEST_SUITE
