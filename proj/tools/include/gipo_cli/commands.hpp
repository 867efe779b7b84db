#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "gipo_cli/run_config.hpp"
#include "gipo_cli/svg_plot.hpp"

// Subcommand bodies, separated from argument parsing so tests can drive them
// in-process. All of them throw (std::runtime_error / std::invalid_argument)
// on bad input; main turns that into a nonzero exit.

namespace gipo::cli {

// Output directory precedence: the GIPO_OUT environment variable beats the
// --out flag, which beats the config's own out_dir.
std::filesystem::path resolve_out_dir(const std::filesystem::path& config_out,
                                      const std::optional<std::filesystem::path>& flag_out);

// Runs the configured pipeline and prints the artifact paths.
void cmd_train(const std::filesystem::path& config_path,
               std::optional<std::uint64_t> seed_override,
               std::optional<std::filesystem::path> out_override, std::ostream& os);

// Exact bias-variance study on the 2x2 grid. cases is "A", "B", "C" or "all";
// writes one CSV per case plus a combined scatter SVG under out_dir.
void cmd_biasvar(const std::string& cases, const std::string& sigma_grid_text,
                 const std::filesystem::path& out_dir, std::ostream& os);

// Damping-scale sensitivity: trains one run per (sigma, regime preset) pair
// and summarizes ratio tails, old-sample ESS and final returns into sweep.csv
// plus a three-panel SVG. A config, when given, supplies the learner/env/arch
// base; the fresh and stale regime presets are fixed.
void cmd_sweep(const std::optional<std::filesystem::path>& config_path,
               const std::string& sigma_grid_text, std::optional<std::uint64_t> seed_override,
               std::optional<std::filesystem::path> out_override, std::ostream& os);

// Renders one figure from CSV inputs.
void cmd_plot(const PlotSpec& spec, std::ostream& os);

// Executable property battery over the bound machinery; prints one line per
// check and returns the number of failures.
int cmd_verify(std::ostream& os);

}  // namespace gipo::cli
