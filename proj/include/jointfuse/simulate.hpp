#pragma once

#include "jointfuse/model.hpp"
#include "jointfuse/sampler.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace jointfuse::simulate {

using sampler::Rng;

struct CovariateGenerator {
  enum class Kind { Bernoulli, Normal };
  std::string name;
  Kind kind = Kind::Normal;
  double p = 0.5;
  double mean = 0.0;
  double sd = 1.0;
};

struct SimScenario {
  ModelSpec spec;
  /// Population part of the generating state; b and u are drawn per subject.
  ParamState truth;
  std::vector<CovariateGenerator> covariates;
  std::vector<double> grid;
  /// Rate of the exponential censoring time; 0 disables it.
  double censoring_rate = 0.0;
  double administrative_cutoff = 1.0;
  std::size_t n_subjects = 100;
  std::uint64_t seed = 1;
  /// Upper end of the root-finding bracket; defaults to 100 x administrative cutoff.
  std::optional<double> t_max;

  double root_finding_limit() const { return t_max ? *t_max : 100.0 * std::max(administrative_cutoff, 1e-8); }
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Outcome of inverting a cumulative hazard: a time, or right censoring at `time`.
struct Inversion {
  double time = 0.0;
  bool censored = false;
};

/// Solves lambda0 e^{A0} (e^{A1 t} - 1) / A1 = -log u. Censored at +inf when no solution exists.
/// Throws DomainError if u is outside (0, 1).
Inversion invert_constant_baseline(double u, double A0, double A1, double lambda0);

/// Solves Lambda(t) = -log u on (0, t_max] by Brent's method after bracketing by doubling.
/// Censored at t_max when Lambda(t_max) < -log u. Throws ConvergenceFailure after 200 iterations.
Inversion invert_by_root_finding(double u, const std::function<double(double)>& cumulative_hazard, double t_max);

/// Draw from the negative binomial (mean eta, size r) conditioned on y > 0, by CDF inversion.
double draw_truncated_negbin(double eta, double r, Rng& rng);

/// Marker values at each grid time for one subject. Rows follow the grid, columns the markers.
/// `covariates` supplies offset columns.
Eigen::MatrixXd simulate_longitudinal(const SimScenario& scenario, const PreparedModel& layout,
                                      const PreparedSubject& subject, const std::map<std::string, double>& covariates,
                                      const LongitudinalParams& params, const Eigen::VectorXd& b, Rng& rng);

/// One simulated subject with everything needed to write the data files.
struct SimulatedSubject {
  std::string id;
  double time = 0.0;
  int status = 0;
  int uncured = 1;
  std::map<std::string, double> covariates;
  Eigen::VectorXd b;
  /// Grid times up to and including the observed time, and marker values there.
  std::vector<double> times;
  Eigen::MatrixXd values;
};

struct SimulatedData {
  std::vector<std::string> covariate_names;
  std::vector<SimulatedSubject> subjects;
  /// Generating state including the drawn random effects and classes.
  ParamState truth;
};

SimulatedData simulate_subjects(const SimScenario& scenario);

/// Dataset in the same shape load_dataset produces.
Dataset to_dataset(const SimScenario& scenario, const SimulatedData& data);

Dataset simulate_dataset(const SimScenario& scenario);

/// Writes long.csv and surv.csv into `dir` (created if needed).
void write_csv(const SimScenario& scenario, const SimulatedData& data, const std::string& dir);

}  // namespace jointfuse::simulate
