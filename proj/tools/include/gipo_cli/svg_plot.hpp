#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "gipo/mdp.hpp"

// Dependency-free SVG figure rendering. Output is deterministic: fixed
// layout, fixed number formatting, no timestamps, so identical inputs give
// byte-identical files.

namespace gipo::cli {

enum class PlotKind {
  kWeightCurves,      // effective multipliers vs ratio and vs log ratio
  kBiasvarPareto,     // exact-study scatter with the dashed frontier
  kLearningCurves,    // average return vs env steps per run
  kUtilizationBars,   // final-window utilization fractions per run
  kKlEssScatter,      // per-update KL vs old-sample ESS
  kLagTailScatter,    // version-gap p95 vs ratio-tail d95 with a trend line
  kSigmaSensitivity,  // sweep summary: d95 / ESS / return vs sigma
};

PlotKind parse_plot_kind(const std::string& name);
const char* plot_kind_name(PlotKind kind);

struct PlotSpec {
  PlotKind kind = PlotKind::kWeightCurves;
  std::vector<std::filesystem::path> inputs;  // CSVs; weight_curves needs none
  std::filesystem::path output;
  double sigma = 1.0;    // weight_curves damping scale
  double epsilon = 0.2;  // weight_curves clip radius
};

// Renders to a string (for determinism checks) or straight to spec.output.
// Throws std::runtime_error on unreadable inputs, malformed CSV rows (the
// message names the line) or empty data.
std::string render_plot_string(const PlotSpec& spec);
void render_plot(const PlotSpec& spec);

// Row of a bias-variance CSV as written by write_biasvar_csv.
struct BiasVarRow {
  char case_id = 'A';
  BiasVarPoint point;
};
std::vector<BiasVarRow> read_biasvar_csv(std::istream& is);

// Row of a sigma-sweep summary CSV.
struct SweepRow {
  double sigma = 0.0;
  std::string regime;
  double d95 = 0.0;
  double ess_old_norm = 0.0;
  double avg_return = 0.0;
};
std::vector<SweepRow> read_sweep_csv(std::istream& is);
void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);

}  // namespace gipo::cli
