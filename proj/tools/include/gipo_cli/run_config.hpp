#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "gipo/runtime.hpp"

// Experiment configuration document: a strict JSON schema mirroring the
// runtime structs. Unknown keys are rejected and every error names the
// offending field, so a typo never silently falls back to a default.

namespace gipo::cli {

struct EnvSpec {
  int rows = 4;
  int cols = 4;
  int max_episode_steps = 64;
};

struct RunConfig {
  RegimeConfig regime;
  LearnerConfig learner;
  EnvSpec env;
  std::string arch;  // empty: tabular over the grid's state count
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
};

// Throws std::runtime_error with a field-qualified message on missing
// required fields, unknown keys, or type mismatches.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

// Complete document with every field spelled out; parse(dump(c)) == c.
nlohmann::json dump_run_config(const RunConfig& cfg);

// The architecture string actually used for a config (explicit arch, or a
// tabular policy sized to the grid).
std::string resolve_arch(const RunConfig& cfg);

// "0.5,1,2" as an explicit list, or "lo:hi:n" for n log-spaced points with
// both endpoints included. All values must be positive.
std::vector<double> parse_sigma_grid(const std::string& text);

}  // namespace gipo::cli
