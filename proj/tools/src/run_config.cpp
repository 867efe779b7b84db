#include "gipo_cli/run_config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace gipo::cli {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("config: " + msg); }

// Strict view of one JSON object: reads mark keys as seen, done() rejects
// anything left over, and every message carries the dotted field path.
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) fail("'" + path_ + "' must be an object");
  }

  bool has(const char* key) const { return obj_.contains(key); }

  template <typename T>
  T require(const char* key) {
    if (!obj_.contains(key)) fail("missing required field '" + qualify(key) + "'");
    return read<T>(key);
  }

  template <typename T>
  T value(const char* key, T fallback) {
    if (!obj_.contains(key)) return fallback;
    return read<T>(key);
  }

  // reference into the parent document, valid as long as the root json lives
  const json& child(const char* key) {
    seen_.insert(key);
    return obj_.at(key);
  }

  void done() const {
    for (const auto& item : obj_.items()) {
      if (!seen_.count(item.key())) fail("unknown key '" + qualify(item.key().c_str()) + "'");
    }
  }

 private:
  template <typename T>
  T read(const char* key) {
    seen_.insert(key);
    try {
      return obj_.at(key).get<T>();
    } catch (const json::exception&) {
      fail("field '" + qualify(key) + "' has the wrong type");
    }
  }

  std::string qualify(const char* key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

SurrogateKind parse_surrogate(const json& doc) {
  Section s(doc, "learner.surrogate");
  const auto kind = s.require<std::string>("kind");
  SurrogateKind out;
  if (kind == "gipo") {
    out = Gipo{s.value<double>("sigma", 1.0)};
  } else if (kind == "ppo_clip") {
    out = PpoClip{s.value<double>("epsilon", 0.2)};
  } else if (kind == "sapo") {
    out = Sapo{s.value<double>("tau_pos", 2.0), s.value<double>("tau_neg", 1.0)};
  } else if (kind == "noclip") {
    out = NoClip{};
  } else {
    fail("field 'learner.surrogate.kind' must be one of gipo, ppo_clip, sapo, noclip");
  }
  s.done();
  return out;
}

json dump_surrogate(const SurrogateKind& kind) {
  json out;
  out["kind"] = surrogate_name(kind);
  if (const auto* g = std::get_if<Gipo>(&kind)) {
    out["sigma"] = g->sigma;
  } else if (const auto* p = std::get_if<PpoClip>(&kind)) {
    out["epsilon"] = p->epsilon;
  } else if (const auto* s = std::get_if<Sapo>(&kind)) {
    out["tau_pos"] = s->tau_pos;
    out["tau_neg"] = s->tau_neg;
  }
  return out;
}

}  // namespace

RunConfig parse_run_config(const json& doc) {
  Section root(doc, "");
  RunConfig cfg;
  cfg.seed = root.require<std::uint64_t>("seed");
  cfg.out_dir = root.require<std::string>("out_dir");
  cfg.arch = root.value<std::string>("arch", "");

  if (root.has("env")) {
    Section env(root.child("env"), "env");
    cfg.env.rows = env.value<int>("rows", cfg.env.rows);
    cfg.env.cols = env.value<int>("cols", cfg.env.cols);
    cfg.env.max_episode_steps = env.value<int>("max_episode_steps", cfg.env.max_episode_steps);
    env.done();
    if (cfg.env.rows < 1 || cfg.env.cols < 1 || cfg.env.max_episode_steps < 1) {
      fail("'env' dimensions and step limit must be positive");
    }
  }

  if (root.has("regime")) {
    Section r(root.child("regime"), "regime");
    auto& regime = cfg.regime;
    regime.num_actors = r.value<int>("num_actors", regime.num_actors);
    regime.segment_len = r.value<int>("segment_len", regime.segment_len);
    regime.replay_capacity = r.value<std::size_t>("replay_capacity", regime.replay_capacity);
    regime.t_old = r.value<std::uint64_t>("t_old", regime.t_old);
    regime.min_fill = r.value<std::size_t>("min_fill", regime.min_fill);
    regime.updates_per_round = r.value<int>("updates_per_round", regime.updates_per_round);
    regime.use_threads = r.value<bool>("use_threads", regime.use_threads);
    r.done();
  }

  if (root.has("learner")) {
    Section l(root.child("learner"), "learner");
    auto& learner = cfg.learner;
    if (l.has("surrogate")) learner.surrogate = parse_surrogate(l.child("surrogate"));
    learner.gamma = l.value<double>("gamma", learner.gamma);
    learner.lambda = l.value<double>("lambda", learner.lambda);
    learner.value_coef = l.value<double>("value_coef", learner.value_coef);
    learner.entropy_coef = l.value<double>("entropy_coef", learner.entropy_coef);
    learner.policy_lr = l.value<double>("policy_lr", learner.policy_lr);
    learner.value_lr = l.value<double>("value_lr", learner.value_lr);
    learner.batch_size = l.value<std::size_t>("batch_size", learner.batch_size);
    learner.total_updates = l.value<std::uint64_t>("total_updates", learner.total_updates);
    if (l.has("target")) {
      const auto target = l.require<std::string>("target");
      if (target == "gae") {
        learner.target = TargetScheme::kGae;
      } else if (target == "vtrace") {
        learner.target = TargetScheme::kVtrace;
      } else {
        fail("field 'learner.target' must be gae or vtrace");
      }
    }
    learner.rho_bar = l.value<double>("rho_bar", learner.rho_bar);
    learner.c_bar = l.value<double>("c_bar", learner.c_bar);
    learner.normalize_advantages =
        l.value<bool>("normalize_advantages", learner.normalize_advantages);
    learner.grad_clip_norm = l.value<double>("grad_clip_norm", learner.grad_clip_norm);
    learner.weight_decay = l.value<double>("weight_decay", learner.weight_decay);
    learner.adam_beta1 = l.value<double>("adam_beta1", learner.adam_beta1);
    learner.adam_beta2 = l.value<double>("adam_beta2", learner.adam_beta2);
    learner.adam_eps = l.value<double>("adam_eps", learner.adam_eps);
    l.done();
  }

  root.done();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open '" + path.string() + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    fail("'" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(doc);
}

json dump_run_config(const RunConfig& cfg) {
  json doc;
  doc["seed"] = cfg.seed;
  doc["out_dir"] = cfg.out_dir.string();
  doc["arch"] = cfg.arch;
  doc["env"] = {{"rows", cfg.env.rows},
                {"cols", cfg.env.cols},
                {"max_episode_steps", cfg.env.max_episode_steps}};
  doc["regime"] = {{"num_actors", cfg.regime.num_actors},
                   {"segment_len", cfg.regime.segment_len},
                   {"replay_capacity", cfg.regime.replay_capacity},
                   {"t_old", cfg.regime.t_old},
                   {"min_fill", cfg.regime.min_fill},
                   {"updates_per_round", cfg.regime.updates_per_round},
                   {"use_threads", cfg.regime.use_threads}};
  const auto& l = cfg.learner;
  doc["learner"] = {{"surrogate", dump_surrogate(l.surrogate)},
                    {"gamma", l.gamma},
                    {"lambda", l.lambda},
                    {"value_coef", l.value_coef},
                    {"entropy_coef", l.entropy_coef},
                    {"policy_lr", l.policy_lr},
                    {"value_lr", l.value_lr},
                    {"batch_size", l.batch_size},
                    {"total_updates", l.total_updates},
                    {"target", l.target == TargetScheme::kGae ? "gae" : "vtrace"},
                    {"rho_bar", l.rho_bar},
                    {"c_bar", l.c_bar},
                    {"normalize_advantages", l.normalize_advantages},
                    {"grad_clip_norm", l.grad_clip_norm},
                    {"weight_decay", l.weight_decay},
                    {"adam_beta1", l.adam_beta1},
                    {"adam_beta2", l.adam_beta2},
                    {"adam_eps", l.adam_eps}};
  return doc;
}

std::string resolve_arch(const RunConfig& cfg) {
  if (!cfg.arch.empty()) return cfg.arch;
  std::ostringstream os;
  os << "tabular " << cfg.env.rows * cfg.env.cols << " 4";
  return os.str();
}

std::vector<double> parse_sigma_grid(const std::string& text) {
  const auto bad = [&](const std::string& why) {
    throw std::invalid_argument("sigma grid '" + text + "': " + why);
  };
  std::vector<double> out;
  if (text.find(':') != std::string::npos) {
    double lo = 0.0, hi = 0.0;
    long n = 0;
    char extra = 0;
    if (std::sscanf(text.c_str(), "%lf:%lf:%ld%c", &lo, &hi, &n, &extra) != 3) {
      bad("expected lo:hi:n");
    }
    if (!(lo > 0.0) || !(hi > lo)) bad("need 0 < lo < hi");
    if (n < 2) bad("need at least 2 points");
    for (long i = 0; i < n; ++i) {
      out.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1)));
    }
    return out;
  }
  std::istringstream is(text);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      bad("'" + tok + "' is not a number");
    }
    if (used != tok.size()) bad("'" + tok + "' is not a number");
    if (!(v > 0.0)) bad("values must be positive");
    out.push_back(v);
  }
  if (out.empty()) bad("no values");
  return out;
}

}  // namespace gipo::cli
