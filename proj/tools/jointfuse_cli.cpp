#include "jointfuse/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  using namespace jointfuse::cli;
  CLI::App app{"Bayesian joint models for longitudinal and time-to-event data"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  std::string config, data_dir, out_dir, draws_dir;
  std::optional<std::string> diag_out, diag_config;
  Overrides o;
  std::uint64_t seed = 0;
  int chains = 0, iters = 0, burnin = 0, thin = 0;
  double rhat = 0.0;

  auto* sim = app.add_subcommand("simulate", "simulate a dataset from the configured scenario");
  sim->add_option("--config", config, "JSON configuration")->required();
  sim->add_option("--out", out_dir, "output directory")->required();
  auto* sim_seed = sim->add_option("--seed", seed, "overrides simulation.seed");

  auto* fit = app.add_subcommand("fit", "fit the configured model");
  fit->add_option("--config", config, "JSON configuration")->required();
  fit->add_option("--data-dir", data_dir, "directory with long.csv and surv.csv")->required();
  fit->add_option("--out", out_dir, "output directory")->required();
  auto* fit_seed = fit->add_option("--seed", seed, "overrides mcmc.seed");
  auto* fit_chains = fit->add_option("--chains", chains, "number of chains");
  auto* fit_iters = fit->add_option("--iters", iters, "iterations per chain");
  auto* fit_burnin = fit->add_option("--burnin", burnin, "burn-in iterations");
  auto* fit_thin = fit->add_option("--thin", thin, "thinning interval");
  auto* fit_rhat = fit->add_option("--rhat-threshold", rhat, "convergence gate (default 1.1)");

  auto* diag = app.add_subcommand("diagnose", "recompute summaries from stored draws");
  diag->add_option("--draws", draws_dir, "fit output directory or its draws/ subdirectory")->required();
  diag->add_option("--out", diag_out, "output directory (defaults to the fit directory)");
  diag->add_option("--config", diag_config, "configuration supplying diagnostics settings");
  auto* diag_rhat = diag->add_option("--rhat-threshold", rhat, "convergence gate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  if (sim->parsed()) {
    if (*sim_seed) o.seed = seed;
    return cmd_simulate(config, out_dir, o, std::cout, std::cerr);
  }
  if (fit->parsed()) {
    if (*fit_seed) o.seed = seed;
    if (*fit_chains) o.chains = chains;
    if (*fit_iters) o.iterations = iters;
    if (*fit_burnin) o.burnin = burnin;
    if (*fit_thin) o.thin = thin;
    if (*fit_rhat) o.rhat_threshold = rhat;
    return cmd_fit(config, data_dir, out_dir, o, std::cout, std::cerr);
  }
  if (*diag_rhat) o.rhat_threshold = rhat;
  return cmd_diagnose(draws_dir, diag_out, diag_config, o, std::cout, std::cerr);
}
