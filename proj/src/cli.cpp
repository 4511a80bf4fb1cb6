#include "jointfuse/cli.hpp"

#include "jointfuse/config.hpp"
#include "jointfuse/diagnostics.hpp"
#include "jointfuse/error.hpp"
#include "jointfuse/model.hpp"
#include "jointfuse/sampler.hpp"
#include "jointfuse/simulate.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace jointfuse::cli {

namespace {

using config::Json;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigError:
    case ErrorKind::UnknownParameter:
      return kConfigError;
    case ErrorKind::MissingColumn:
    case ErrorKind::InvariantViolation:
    case ErrorKind::DataError:
    case ErrorKind::NonBinaryValue:
    case ErrorKind::SingularDesign:
    case ErrorKind::UnsupportedDesign:
    case ErrorKind::NonPositiveTime:
      return kDataError;
    default:
      return kSamplerFailure;
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::DataError, "cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_plot(const fs::path& path, const std::vector<Eigen::MatrixXd>& chains, const std::vector<std::string>& names,
                diagnostics::PlotKind kind) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::DataError, "cannot write " + path.string());
  diagnostics::export_plot_data(chains, names, kind, out);
}

struct SummaryOutputs {
  std::vector<std::string> files;
  bool converged = true;
};

/// Writes summary.json, summary.txt and the plot data; shared by fit and diagnose so that both
/// produce identical bytes from identical draws.
SummaryOutputs write_summaries(const fs::path& dir, const std::vector<Eigen::MatrixXd>& chains,
                               const std::vector<std::string>& names, double threshold, bool split, std::ostream& out,
                               std::ostream& err) {
  if (chains.size() < 2) err << "warning: R-hat needs at least two chains; the R-hat column is omitted\n";
  const auto summary = diagnostics::summarize(chains, names, {}, split);
  std::string json = diagnostics::summary_json(summary, threshold);
  {
    Json j = Json::parse(json);
    j["split_rhat"] = split;
    json = j.dump(2) + "\n";
  }
  write_text(dir / "summary.json", json);
  const std::string table = diagnostics::summary_table(summary);
  write_text(dir / "summary.txt", table);
  write_plot(dir / "trace.csv", chains, names, diagnostics::PlotKind::Trace);
  write_plot(dir / "density.csv", chains, names, diagnostics::PlotKind::Density);
  write_plot(dir / "caterpillar.csv", chains, names, diagnostics::PlotKind::Caterpillar);
  out << table;
  SummaryOutputs res;
  res.files = {"summary.json", "summary.txt", "trace.csv", "density.csv", "caterpillar.csv"};
  const auto bad = diagnostics::unconverged(summary, threshold);
  res.converged = bad.empty();
  if (!bad.empty()) {
    err << "R-hat above " << threshold << " for:";
    for (const auto& b : bad) err << ' ' << b;
    err << '\n';
  }
  return res;
}

void apply_mcmc_overrides(sampler::McmcConfig& mcmc, const Overrides& o) {
  if (o.seed) mcmc.seed = *o.seed;
  if (o.chains) mcmc.chains = *o.chains;
  if (o.iterations) {
    mcmc.iterations = *o.iterations;
    if (!o.burnin && mcmc.burnin && *mcmc.burnin >= mcmc.iterations) mcmc.burnin.reset();
  }
  if (o.burnin) mcmc.burnin = *o.burnin;
  if (o.thin) mcmc.thin = *o.thin;
}

}  // namespace

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::DataError, "cannot read " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize j = 0; j < in.gcount(); ++j) {
      h ^= static_cast<unsigned char>(buf[j]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir, const Overrides& overrides,
                 std::ostream& out, std::ostream& err) {
  config::RunConfig rc;
  try {
    rc = config::load(config_path);
    if (!rc.simulation) throw Error(ErrorKind::ConfigError, "simulation: section is required");
    if (overrides.seed) rc.simulation->seed = *overrides.seed;
    rc.simulation->validate();
  } catch (const Error& e) {
    err << e.what() << '\n';
    return kConfigError;
  }
  const auto start = std::chrono::steady_clock::now();
  try {
    const auto& scn = *rc.simulation;
    const auto data = simulate::simulate_subjects(scn);
    const fs::path dir(out_dir);
    simulate::write_csv(scn, data, out_dir);
    write_text(dir / "truth.json", config::state_to_json(data.truth).dump(2) + "\n");
    std::size_t events = 0;
    for (const auto& s : data.subjects) events += s.status > 0 ? 1 : 0;
    Json manifest;
    manifest["tool"] = "jointfuse";
    manifest["version"] = kToolVersion;
    manifest["command"] = "simulate";
    manifest["config"] = {{"path", config_path}, {"fnv1a", file_hash(config_path)}};
    manifest["seed"] = scn.seed;
    manifest["subjects"] = data.subjects.size();
    manifest["events"] = events;
    manifest["outputs"] = {{"long.csv", file_hash((dir / "long.csv").string())},
                           {"surv.csv", file_hash((dir / "surv.csv").string())},
                           {"truth.json", file_hash((dir / "truth.json").string())}};
    manifest["timing"] = {{"seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}};
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    out << "simulated " << data.subjects.size() << " subjects (" << events << " events) into " << out_dir << '\n';
  } catch (const Error& e) {
    err << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << e.what() << '\n';
    return kDataError;
  }
  return kOk;
}

int cmd_fit(const std::string& config_path, const std::string& data_dir, const std::string& out_dir,
            const Overrides& overrides, std::ostream& out, std::ostream& err) {
  config::RunConfig rc;
  try {
    rc = config::load(config_path);
    apply_mcmc_overrides(rc.mcmc, overrides);
    if (overrides.rhat_threshold) rc.rhat_threshold = *overrides.rhat_threshold;
    if (!(rc.rhat_threshold >= 1.0)) throw Error(ErrorKind::ConfigError, "rhat threshold must be >= 1");
    rc.mcmc.validate();
  } catch (const Error& e) {
    err << e.what() << '\n';
    return kConfigError;
  }

  PreparedModel model;
  try {
    const Dataset data = load_dataset(rc.spec, data_dir);
    if (data.dropped_after_event > 0) {
      err << "note: dropped " << data.dropped_after_event << " marker rows recorded after the event time\n";
    }
    model = prepare(rc.spec, data);
  } catch (const Error& e) {
    err << e.what() << '\n';
    return exit_code_for(e.kind()) == kConfigError ? kConfigError : kDataError;
  }
  try {
    parameter_names(model, rc.mcmc.monitor);
  } catch (const Error& e) {
    err << e.what() << '\n';
    return kConfigError;
  }

  const auto start = std::chrono::steady_clock::now();
  std::vector<sampler::ChainOutput> chains;
  try {
    chains = sampler::run(model, rc.mcmc);
  } catch (const Error& e) {
    err << e.what() << '\n';
    return kSamplerFailure;
  } catch (const std::exception& e) {
    err << e.what() << '\n';
    return kSamplerFailure;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  try {
    const fs::path dir(out_dir);
    fs::create_directories(dir / "draws");
    std::vector<Eigen::MatrixXd> draws;
    Json outputs = Json::object();
    for (const auto& c : chains) {
      const std::string name = "draws/chain_" + std::to_string(c.chain_id + 1) + ".csv";
      diagnostics::write_draws((dir / name).string(), c.names, c.draws);
      outputs[name] = file_hash((dir / name).string());
      draws.push_back(c.draws);
    }
    const auto res = write_summaries(dir, draws, chains.front().names, rc.rhat_threshold, rc.split_rhat, out, err);
    Json acceptance = Json::array();
    for (const auto& c : chains) {
      Json a = Json::object();
      for (const auto& [k, v] : c.acceptance) a[k] = v;
      acceptance.push_back(a);
    }
    write_text(dir / "acceptance.json", acceptance.dump(2) + "\n");
    for (const auto& f : res.files) outputs[f] = file_hash((dir / f).string());
    outputs["acceptance.json"] = file_hash((dir / "acceptance.json").string());

    Json manifest;
    manifest["tool"] = "jointfuse";
    manifest["version"] = kToolVersion;
    manifest["command"] = "fit";
    manifest["config"] = {{"path", config_path}, {"fnv1a", file_hash(config_path)}};
    manifest["data"] = {{"long.csv", file_hash((fs::path(data_dir) / "long.csv").string())},
                        {"surv.csv", file_hash((fs::path(data_dir) / "surv.csv").string())}};
    manifest["seed"] = rc.mcmc.seed;
    manifest["mcmc"] = {{"chains", rc.mcmc.chains},
                        {"iterations", rc.mcmc.iterations},
                        {"burnin", rc.mcmc.burnin_iterations()},
                        {"thin", rc.mcmc.thin},
                        {"adapt_window", rc.mcmc.adapt_window}};
    Json chain_seconds = Json::array();
    for (const auto& c : chains) chain_seconds.push_back(c.seconds);
    manifest["timing"] = {{"total_seconds", seconds}, {"chain_seconds", chain_seconds}};
    manifest["outputs"] = outputs;
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    return res.converged ? kOk : kNotConverged;
  } catch (const Error& e) {
    err << e.what() << '\n';
    return kDataError;
  }
}

int cmd_diagnose(const std::string& draws_dir, const std::optional<std::string>& out_dir,
                 const std::optional<std::string>& config_path, const Overrides& overrides, std::ostream& out,
                 std::ostream& err) {
  fs::path draws(draws_dir), fit_dir(draws_dir);
  if (fs::is_directory(draws / "draws")) {
    draws = draws / "draws";
  } else {
    fit_dir = draws.parent_path();
  }
  const fs::path target = out_dir ? fs::path(*out_dir) : fit_dir;

  double threshold = 1.1;
  bool split = false;
  if (fs::exists(fit_dir / "summary.json")) {
    try {
      const Json prev = Json::parse(read_text(fit_dir / "summary.json"));
      threshold = prev.value("rhat_threshold", threshold);
      split = prev.value("split_rhat", split);
    } catch (const std::exception&) {
    }
  }
  try {
    if (config_path) {
      const auto rc = config::load(*config_path);
      threshold = rc.rhat_threshold;
      split = rc.split_rhat;
    }
    if (overrides.rhat_threshold) threshold = *overrides.rhat_threshold;
    if (!(threshold >= 1.0)) throw Error(ErrorKind::ConfigError, "rhat threshold must be >= 1");
  } catch (const Error& e) {
    err << e.what() << '\n';
    return kConfigError;
  }

  std::vector<diagnostics::DrawFile> files;
  try {
    for (int c = 1;; ++c) {
      const fs::path p = draws / ("chain_" + std::to_string(c) + ".csv");
      if (!fs::exists(p)) break;
      files.push_back(diagnostics::read_draws(p.string()));
    }
    if (files.empty()) throw Error(ErrorKind::DataError, "no chain_N.csv files in " + draws.string());
    const auto& names = files.front().names;
    for (std::size_t c = 1; c < files.size(); ++c) {
      const std::set<std::string> have(files[c].names.begin(), files[c].names.end());
      for (const auto& n : names) {
        if (!have.count(n)) throw Error(ErrorKind::DataError, "chain_" + std::to_string(c + 1) + ".csv: missing parameter column " + n);
      }
      const std::set<std::string> first(names.begin(), names.end());
      for (const auto& n : files[c].names) {
        if (!first.count(n)) throw Error(ErrorKind::DataError, "chain_1.csv: missing parameter column " + n);
      }
      if (files[c].names != names) throw Error(ErrorKind::DataError, "chain_" + std::to_string(c + 1) + ".csv: columns are in a different order");
    }
  } catch (const Error& e) {
    err << e.what() << '\n';
    return kDataError;
  }
  try {
    fs::create_directories(target);
    std::vector<Eigen::MatrixXd> chains;
    for (const auto& f : files) chains.push_back(f.draws);
    const auto res = write_summaries(target, chains, files.front().names, threshold, split, out, err);
    return res.converged ? kOk : kNotConverged;
  } catch (const Error& e) {
    err << e.what() << '\n';
    return kDataError;
  }
}

}  // namespace jointfuse::cli
