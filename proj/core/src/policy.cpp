#include "gipo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace gipo {

namespace {

void check_state(const ActorCritic& ac, int state) {
  if (state < 0 || state >= ac.n_states()) {
    throw std::out_of_range("state index out of range");
  }
}

void check_action(const ActorCritic& ac, int action) {
  if (action < 0 || action >= ac.n_actions()) {
    throw std::out_of_range("action index out of range");
  }
}

// log-softmax with the max subtracted; keeps every probability representable
std::vector<double> log_softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - m);
  const double lse = m + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// TabularActorCritic

TabularActorCritic::TabularActorCritic(int n_states, int n_actions)
    : n_states_(n_states), n_actions_(n_actions) {
  if (n_states < 1 || n_actions < 1) {
    throw std::invalid_argument("tabular policy needs at least one state and action");
  }
  params_.assign(static_cast<std::size_t>(n_states) * n_actions + n_states, 0.0);
}

std::vector<double> TabularActorCritic::log_probs(int state) const {
  check_state(*this, state);
  std::span<const double> logits(params_.data() + static_cast<std::size_t>(state) * n_actions_,
                                 static_cast<std::size_t>(n_actions_));
  return log_softmax(logits);
}

double TabularActorCritic::value(int state) const {
  check_state(*this, state);
  return params_[static_cast<std::size_t>(n_states_) * n_actions_ + state];
}

void TabularActorCritic::backward(int state, std::span<const double> d_logits, double d_value,
                                  std::span<double> dparams) const {
  check_state(*this, state);
  if (dparams.size() != params_.size()) {
    throw std::invalid_argument("gradient buffer size mismatch");
  }
  if (!d_logits.empty()) {
    if (d_logits.size() != static_cast<std::size_t>(n_actions_)) {
      throw std::invalid_argument("d_logits length mismatch");
    }
    double* row = dparams.data() + static_cast<std::size_t>(state) * n_actions_;
    for (int a = 0; a < n_actions_; ++a) row[a] += d_logits[a];
  }
  dparams[static_cast<std::size_t>(n_states_) * n_actions_ + state] += d_value;
}

std::vector<std::uint8_t> TabularActorCritic::value_param_mask() const {
  std::vector<std::uint8_t> mask(params_.size(), 0);
  for (int s = 0; s < n_states_; ++s) {
    mask[static_cast<std::size_t>(n_states_) * n_actions_ + s] = 1;
  }
  return mask;
}

std::string TabularActorCritic::arch() const {
  std::ostringstream os;
  os << "tabular " << n_states_ << ' ' << n_actions_;
  return os.str();
}

std::unique_ptr<ActorCritic> TabularActorCritic::clone() const {
  return std::make_unique<TabularActorCritic>(*this);
}

std::span<double> TabularActorCritic::state_logits(int state) {
  check_state(*this, state);
  return {params_.data() + static_cast<std::size_t>(state) * n_actions_,
          static_cast<std::size_t>(n_actions_)};
}

// ---------------------------------------------------------------------------
// MlpActorCritic

struct MlpActorCritic::Forward {
  // activations per trunk layer (post-tanh), then raw logits and value
  std::vector<std::vector<double>> h;
  std::vector<double> logits;
  double value = 0.0;
};

MlpActorCritic::MlpActorCritic(int n_states, int n_actions, int hidden, int hidden_layers,
                               std::uint64_t init_seed)
    : n_states_(n_states), n_actions_(n_actions), hidden_(hidden), hidden_layers_(hidden_layers) {
  if (n_states < 1 || n_actions < 1 || hidden < 1 || hidden_layers < 1) {
    throw std::invalid_argument("mlp dimensions must be positive");
  }
  // tensor sizes in order: trunk layers, policy head, value head
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  int in = n_states;
  for (int l = 0; l < hidden_layers; ++l) {
    shapes.emplace_back(hidden, in);  // W
    shapes.emplace_back(hidden, 1);   // b
    in = hidden;
  }
  shapes.emplace_back(n_actions, hidden);
  shapes.emplace_back(n_actions, 1);
  shapes.emplace_back(1, hidden);
  shapes.emplace_back(1, 1);

  std::size_t total = 0;
  for (auto [r, c] : shapes) {
    offsets_.push_back(total);
    total += r * c;
  }
  params_.assign(total, 0.0);

  // uniform fan-balanced init; biases stay zero
  std::mt19937_64 rng(init_seed);
  std::size_t idx = 0;
  for (auto [r, c] : shapes) {
    if (c > 1) {  // weight matrix (biases have c == 1)
      const double a = std::sqrt(6.0 / static_cast<double>(r + c));
      std::uniform_real_distribution<double> dist(-a, a);
      for (std::size_t i = 0; i < r * c; ++i) params_[idx + i] = dist(rng);
    }
    idx += r * c;
  }
}

MlpActorCritic::Forward MlpActorCritic::run_forward(int state) const {
  check_state(*this, state);
  Forward f;
  f.h.resize(hidden_layers_);
  // first layer sees a one-hot input, so W0 * x is just column `state`
  std::size_t off = 0;
  {
    const double* w = params_.data() + offsets_[0];
    const double* b = params_.data() + offsets_[1];
    f.h[0].resize(hidden_);
    for (int i = 0; i < hidden_; ++i) {
      f.h[0][i] = std::tanh(w[static_cast<std::size_t>(i) * n_states_ + state] + b[i]);
    }
    off = 2;
  }
  for (int l = 1; l < hidden_layers_; ++l) {
    const double* w = params_.data() + offsets_[off];
    const double* b = params_.data() + offsets_[off + 1];
    f.h[l].resize(hidden_);
    for (int i = 0; i < hidden_; ++i) {
      double acc = b[i];
      const double* row = w + static_cast<std::size_t>(i) * hidden_;
      for (int j = 0; j < hidden_; ++j) acc += row[j] * f.h[l - 1][j];
      f.h[l][i] = std::tanh(acc);
    }
    off += 2;
  }
  const auto& top = f.h[hidden_layers_ - 1];
  {
    const double* w = params_.data() + offsets_[off];
    const double* b = params_.data() + offsets_[off + 1];
    f.logits.resize(n_actions_);
    for (int a = 0; a < n_actions_; ++a) {
      double acc = b[a];
      const double* row = w + static_cast<std::size_t>(a) * hidden_;
      for (int j = 0; j < hidden_; ++j) acc += row[j] * top[j];
      f.logits[a] = acc;
    }
  }
  {
    const double* w = params_.data() + offsets_[off + 2];
    const double* b = params_.data() + offsets_[off + 3];
    double acc = b[0];
    for (int j = 0; j < hidden_; ++j) acc += w[j] * top[j];
    f.value = acc;
  }
  return f;
}

std::vector<double> MlpActorCritic::log_probs(int state) const {
  return log_softmax(run_forward(state).logits);
}

double MlpActorCritic::value(int state) const { return run_forward(state).value; }

void MlpActorCritic::backward(int state, std::span<const double> d_logits, double d_value,
                              std::span<double> dparams) const {
  if (dparams.size() != params_.size()) {
    throw std::invalid_argument("gradient buffer size mismatch");
  }
  if (!d_logits.empty() && d_logits.size() != static_cast<std::size_t>(n_actions_)) {
    throw std::invalid_argument("d_logits length mismatch");
  }
  const Forward f = run_forward(state);
  const auto& top = f.h[hidden_layers_ - 1];
  std::vector<double> d_top(hidden_, 0.0);

  const std::size_t head_off = 2 * static_cast<std::size_t>(hidden_layers_);
  if (!d_logits.empty()) {
    const double* wp = params_.data() + offsets_[head_off];
    double* dwp = dparams.data() + offsets_[head_off];
    double* dbp = dparams.data() + offsets_[head_off + 1];
    for (int a = 0; a < n_actions_; ++a) {
      const double g = d_logits[a];
      if (g == 0.0) continue;
      dbp[a] += g;
      const double* row = wp + static_cast<std::size_t>(a) * hidden_;
      double* drow = dwp + static_cast<std::size_t>(a) * hidden_;
      for (int j = 0; j < hidden_; ++j) {
        drow[j] += g * top[j];
        d_top[j] += g * row[j];
      }
    }
  }
  if (d_value != 0.0) {
    const double* wv = params_.data() + offsets_[head_off + 2];
    double* dwv = dparams.data() + offsets_[head_off + 2];
    double* dbv = dparams.data() + offsets_[head_off + 3];
    dbv[0] += d_value;
    for (int j = 0; j < hidden_; ++j) {
      dwv[j] += d_value * top[j];
      d_top[j] += d_value * wv[j];
    }
  }

  // walk the trunk backwards; d_top holds d/d(post-tanh activation)
  for (int l = hidden_layers_ - 1; l >= 1; --l) {
    std::vector<double> d_prev(hidden_, 0.0);
    const double* w = params_.data() + offsets_[2 * static_cast<std::size_t>(l)];
    double* dw = dparams.data() + offsets_[2 * static_cast<std::size_t>(l)];
    double* db = dparams.data() + offsets_[2 * static_cast<std::size_t>(l) + 1];
    for (int i = 0; i < hidden_; ++i) {
      const double gz = d_top[i] * (1.0 - f.h[l][i] * f.h[l][i]);  // tanh'
      if (gz == 0.0) continue;
      db[i] += gz;
      const double* row = w + static_cast<std::size_t>(i) * hidden_;
      double* drow = dw + static_cast<std::size_t>(i) * hidden_;
      for (int j = 0; j < hidden_; ++j) {
        drow[j] += gz * f.h[l - 1][j];
        d_prev[j] += gz * row[j];
      }
    }
    d_top.swap(d_prev);
  }
  {
    double* dw = dparams.data() + offsets_[0];
    double* db = dparams.data() + offsets_[1];
    for (int i = 0; i < hidden_; ++i) {
      const double gz = d_top[i] * (1.0 - f.h[0][i] * f.h[0][i]);
      if (gz == 0.0) continue;
      db[i] += gz;
      dw[static_cast<std::size_t>(i) * n_states_ + state] += gz;  // one-hot input
    }
  }
}

std::vector<std::uint8_t> MlpActorCritic::value_param_mask() const {
  std::vector<std::uint8_t> mask(params_.size(), 0);
  const std::size_t head_off = 2 * static_cast<std::size_t>(hidden_layers_);
  const std::size_t start = offsets_[head_off + 2];
  for (std::size_t i = start; i < params_.size(); ++i) mask[i] = 1;
  return mask;
}

std::string MlpActorCritic::arch() const {
  std::ostringstream os;
  os << "mlp " << n_states_ << ' ' << n_actions_ << ' ' << hidden_ << ' ' << hidden_layers_;
  return os.str();
}

std::unique_ptr<ActorCritic> MlpActorCritic::clone() const {
  return std::make_unique<MlpActorCritic>(*this);
}

std::unique_ptr<ActorCritic> make_actor_critic(const std::string& arch, std::uint64_t init_seed) {
  std::istringstream is(arch);
  std::string kind;
  is >> kind;
  if (kind == "tabular") {
    int s = 0, a = 0;
    if (!(is >> s >> a)) throw std::invalid_argument("bad tabular arch: " + arch);
    return std::make_unique<TabularActorCritic>(s, a);
  }
  if (kind == "mlp") {
    int s = 0, a = 0, h = 0, l = 0;
    if (!(is >> s >> a >> h >> l)) throw std::invalid_argument("bad mlp arch: " + arch);
    return std::make_unique<MlpActorCritic>(s, a, h, l, init_seed);
  }
  throw std::invalid_argument("unknown policy arch: " + arch);
}

// ---------------------------------------------------------------------------
// free functions

double log_prob(const ActorCritic& ac, int state, int action) {
  check_action(ac, action);
  return ac.log_probs(state)[static_cast<std::size_t>(action)];
}

GradientVector score(const ActorCritic& ac, int state, int action) {
  check_action(ac, action);
  const auto logp = ac.log_probs(state);
  std::vector<double> d_logits(logp.size());
  for (std::size_t j = 0; j < logp.size(); ++j) {
    d_logits[j] = (static_cast<int>(j) == action ? 1.0 : 0.0) - std::exp(logp[j]);
  }
  GradientVector grad(ac.param_count(), 0.0);
  ac.backward(state, d_logits, 0.0, grad);
  return grad;
}

double entropy(const ActorCritic& ac, int state) {
  double h = 0.0;
  for (double lp : ac.log_probs(state)) h -= std::exp(lp) * lp;
  return h;
}

GradientVector entropy_grad(const ActorCritic& ac, int state) {
  const auto logp = ac.log_probs(state);
  const double h = entropy(ac, state);
  // dH/dz_j = -p_j (log p_j + H)
  std::vector<double> d_logits(logp.size());
  for (std::size_t j = 0; j < logp.size(); ++j) {
    d_logits[j] = -std::exp(logp[j]) * (logp[j] + h);
  }
  GradientVector grad(ac.param_count(), 0.0);
  ac.backward(state, d_logits, 0.0, grad);
  return grad;
}

RatioPair detached_ratio(const ActorCritic& ac, double behavior_logp, int state, int action) {
  if (!std::isfinite(behavior_logp)) {
    throw std::invalid_argument("behavior log-probability must be finite");
  }
  const double rho = std::exp(log_prob(ac, state, action) - behavior_logp);
  return RatioPair{rho, rho};
}

// ---------------------------------------------------------------------------
// checkpoints

void save_parameters(const ActorCritic& ac, std::uint64_t version,
                     const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  out << "gipo-params 1\n"
      << "arch " << ac.arch() << '\n'
      << "version " << version << '\n'
      << "count " << ac.param_count() << '\n'
      << "data float64 le\n";
  const auto p = ac.params();
  out.write(reinterpret_cast<const char*>(p.data()),
            static_cast<std::streamsize>(p.size() * sizeof(double)));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

LoadedParameters load_parameters(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::string line;
  auto next_line = [&]() {
    if (!std::getline(in, line)) throw std::runtime_error("truncated checkpoint header");
    return line;
  };
  if (next_line() != "gipo-params 1") throw std::runtime_error("bad checkpoint magic");
  LoadedParameters out;
  std::size_t count = 0;
  for (;;) {
    next_line();
    if (line == "data float64 le") break;
    std::istringstream is(line);
    std::string key;
    is >> key;
    if (key == "arch") {
      std::string rest;
      std::getline(is, rest);
      out.arch = rest.empty() ? rest : rest.substr(1);
    } else if (key == "version") {
      is >> out.version;
    } else if (key == "count") {
      is >> count;
    } else {
      throw std::runtime_error("unknown checkpoint header key: " + key);
    }
  }
  out.params.resize(count);
  in.read(reinterpret_cast<char*>(out.params.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(double)) {
    throw std::runtime_error("truncated checkpoint payload");
  }
  return out;
}

}  // namespace gipo
