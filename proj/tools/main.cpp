#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "gipo_cli/commands.hpp"

namespace {

std::optional<std::filesystem::path> to_path(const std::optional<std::string>& s) {
  if (!s) return std::nullopt;
  return std::filesystem::path(*s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"replay-heavy policy optimization lab"};
  app.require_subcommand(1);

  std::string train_config;
  std::optional<std::uint64_t> train_seed;
  std::optional<std::string> train_out;
  auto* train = app.add_subcommand("train", "run the actor-learner pipeline from a config");
  train->add_option("--config", train_config, "JSON run configuration")->required();
  train->add_option("--seed", train_seed, "override the config seed");
  train->add_option("--out", train_out, "override the output directory");

  std::string bv_case = "all";
  std::string bv_grid = "0.05:50:25";
  std::string bv_out = "biasvar_out";
  auto* biasvar = app.add_subcommand("biasvar", "exact bias-variance study on the 2x2 grid");
  biasvar->add_option("--case", bv_case, "A, B, C or all")->capture_default_str();
  biasvar->add_option("--sigma-grid", bv_grid, "'a,b,c' list or 'lo:hi:n' log-spaced range")
      ->capture_default_str();
  biasvar->add_option("--out", bv_out, "output directory")->capture_default_str();

  std::optional<std::string> sweep_config;
  std::string sweep_grid = "0.5,1,2";
  std::optional<std::uint64_t> sweep_seed;
  std::optional<std::string> sweep_out;
  auto* sweep = app.add_subcommand("sweep", "damping-scale sensitivity across regime presets");
  sweep->add_option("--config", sweep_config, "base JSON run configuration");
  sweep->add_option("--sigma-grid", sweep_grid, "'a,b,c' list or 'lo:hi:n' log-spaced range")
      ->capture_default_str();
  sweep->add_option("--seed", sweep_seed, "override the config seed");
  sweep->add_option("--out", sweep_out, "override the output directory");

  std::string plot_kind;
  std::vector<std::string> plot_inputs;
  std::string plot_out;
  double plot_sigma = 1.0;
  double plot_epsilon = 0.2;
  auto* plot = app.add_subcommand("plot", "render a figure from CSV inputs");
  plot->add_option("--kind", plot_kind,
                   "weight_curves | biasvar_pareto | learning_curves | utilization_bars | "
                   "kl_ess_scatter | lag_tail_scatter | sigma_sensitivity")
      ->required();
  plot->add_option("--in", plot_inputs, "input CSV paths (repeatable)");
  plot->add_option("--out", plot_out, "output SVG path")->required();
  plot->add_option("--sigma", plot_sigma, "damping scale for weight_curves")
      ->capture_default_str();
  plot->add_option("--epsilon", plot_epsilon, "clip radius for weight_curves")
      ->capture_default_str();

  auto* verify = app.add_subcommand("verify", "run the bound property battery");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      gipo::cli::cmd_train(train_config, train_seed, to_path(train_out), std::cout);
    } else if (biasvar->parsed()) {
      gipo::cli::cmd_biasvar(bv_case, bv_grid, bv_out, std::cout);
    } else if (sweep->parsed()) {
      gipo::cli::cmd_sweep(to_path(sweep_config), sweep_grid, sweep_seed, to_path(sweep_out),
                           std::cout);
    } else if (plot->parsed()) {
      gipo::cli::PlotSpec spec;
      spec.kind = gipo::cli::parse_plot_kind(plot_kind);
      for (const auto& in : plot_inputs) spec.inputs.emplace_back(in);
      spec.output = plot_out;
      spec.sigma = plot_sigma;
      spec.epsilon = plot_epsilon;
      gipo::cli::cmd_plot(spec, std::cout);
    } else if (verify->parsed()) {
      return gipo::cli::cmd_verify(std::cout) == 0 ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
