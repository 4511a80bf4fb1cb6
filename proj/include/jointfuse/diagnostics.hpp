#pragma once

#include <Eigen/Dense>

#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace jointfuse::diagnostics {

/// Classic potential scale reduction over >= 2 chains of equal length m >= 4:
/// V = (m-1)/m W + B/m + B/(m n_chains), R = sqrt(V / W), reported as max(R, 1).
/// Returns 1 when every chain is constant at the same value and +inf when W = 0 < B.
/// With `split`, each chain is halved first. Throws DegenerateChains on too few or unequal chains.
double gelman_rubin(const std::vector<Eigen::VectorXd>& chains, bool split = false);

/// Type-7 empirical quantile of sorted data.
double quantile_type7(const std::vector<double>& sorted, double p);

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
  /// Absent with a single chain.
  std::optional<double> rhat;
};

struct PosteriorSummary {
  std::vector<ParameterSummary> rows;
  std::size_t chains = 0;
  std::size_t draws_per_chain = 0;

  /// Throws UnknownParameter.
  const ParameterSummary& at(const std::string& name) const;
};

/// Chains are (draws x parameters) matrices sharing the column names in `names`. `select`
/// restricts the output to the listed parameters (all when empty); unknown names throw
/// UnknownParameter.
PosteriorSummary summarize(const std::vector<Eigen::MatrixXd>& chains, const std::vector<std::string>& names,
                           const std::vector<std::string>& select = {}, bool split_rhat = false);

/// Parameters whose R-hat exceeds `threshold`.
std::vector<std::string> unconverged(const PosteriorSummary& summary, double threshold);

std::string summary_json(const PosteriorSummary& summary, double rhat_threshold);
std::string summary_table(const PosteriorSummary& summary);

enum class PlotKind { Trace, Density, Caterpillar };

inline constexpr int kDensityBins = 64;

/// trace: chain,iteration,parameter,value. density: parameter,chain,bin,lower,upper,count with
/// bins over the range shared by all chains. caterpillar: parameter,mean,q2.5,q97.5.
void export_plot_data(const std::vector<Eigen::MatrixXd>& chains, const std::vector<std::string>& names,
                      PlotKind kind, std::ostream& out);

/// Draw files: a header of parameter names and one row per retained draw.
void write_draws(const std::string& path, const std::vector<std::string>& names, const Eigen::MatrixXd& draws);

struct DrawFile {
  std::vector<std::string> names;
  Eigen::MatrixXd draws;
};

/// Throws DataError on malformed content.
DrawFile read_draws(const std::string& path);

}  // namespace jointfuse::diagnostics
