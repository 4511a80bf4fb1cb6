#pragma once

#include "jointfuse/model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace jointfuse::sampler {

struct McmcConfig {
  int chains = 3;
  int iterations = 20000;
  /// Defaults to iterations / 2.
  std::optional<int> burnin;
  int thin = 10;
  std::uint64_t seed = 1;
  int adapt_window = 50;
  double target_scalar = 0.44;
  double target_vector = 0.234;
  /// Parameter groups to record (see parameter_names).
  std::vector<std::string> monitor = default_monitor_groups();
  /// Upper bound on concurrently running chains; 0 means JOINTFUSE_THREADS or the core count.
  int threads = 0;

  int burnin_iterations() const { return burnin ? *burnin : iterations / 2; }
  int retained() const { return (iterations - burnin_iterations()) / thin; }
  /// Throws ConfigError when the invariants do not hold.
  void validate() const;
};

/// Counter-based 64-bit generator: output n is a SplitMix64 finalization of key + n * golden gamma.
/// Streams are derived by hashing (seed, chain, block) into the key.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t key) : key_(key) {}
  static Rng stream(std::uint64_t seed, std::uint64_t chain, std::uint64_t block);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type(0); }
  result_type operator()();

  /// Uniform on (0, 1).
  double uniform();
  double normal();
  /// Gamma with shape and rate.
  double gamma(double shape, double rate);
  double chi_squared(double dof) { return gamma(dof / 2.0, 0.5); }
  bool bernoulli(double p) { return uniform() < p; }

  /// Child stream with an independent key.
  Rng split(std::uint64_t id) const;

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::normal_distribution<double> normal_;
};

std::uint64_t mix64(std::uint64_t x);

/// Gaussian random-walk proposal x + s L z. During adaptation log s follows a Robbins-Monro
/// recursion towards the target acceptance, and L tracks the Cholesky factor of the empirical
/// covariance, refreshed at window ends. Both are frozen once adaptation stops.
class AdaptiveBlock {
 public:
  AdaptiveBlock() = default;
  AdaptiveBlock(int dim, double initial_sd, double target);

  int dim() const { return dim_; }
  double scale() const { return std::exp(log_scale_); }
  const Eigen::MatrixXd& factor() const { return L_; }

  Eigen::VectorXd propose(const Eigen::VectorXd& x, Rng& rng) const;

  /// Records the outcome of one proposal with acceptance probability `alpha`, and the
  /// state after the step.
  void record(double alpha, bool accepted, const Eigen::VectorXd& state, bool adapting);
  /// Refreshes the covariance factor from the history (window end).
  void refresh();
  /// Forgets the covariance history but keeps the current factor.
  void reset_history();

  /// Acceptance over proposals made after adaptation stopped, or over all proposals if none.
  double acceptance_rate() const;

 private:
  int dim_ = 0;
  double target_ = 0.234;
  double log_scale_ = 0.0;
  Eigen::MatrixXd L_;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd m2_;
  long count_ = 0;
  long adapt_steps_ = 0;
  long proposed_ = 0, accepted_ = 0;
  long proposed_frozen_ = 0, accepted_frozen_ = 0;
  bool empirical_ = false;
};

struct ChainOutput {
  int chain_id = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> names;
  /// Rows are retained iterations, columns follow `names`.
  Eigen::MatrixXd draws;
  std::map<std::string, double> acceptance;
  /// Proposal scales of every adaptive block, at the end of burn-in and at the last iteration.
  std::vector<std::string> block_names;
  std::vector<double> scales_at_burnin;
  std::vector<double> scales_final;
  double seconds = 0.0;
  ParamState final_state;
};

struct ChainHooks {
  /// Called with the iteration number and state at every retained draw.
  std::function<void(int, const ParamState&)> on_retained;
  /// Starting point; defaults to initial_state with a chain-specific seed.
  std::optional<ParamState> initial;
};

ChainOutput run_chain(const PreparedModel& model, const McmcConfig& config, int chain_id,
                      const ChainHooks& hooks = {});

/// Runs config.chains chains concurrently; outputs are ordered by chain id.
std::vector<ChainOutput> run(const PreparedModel& model, const McmcConfig& config);

/// Draw of sigma2 from IG(a + n/2, b + ssr/2).
double conjugate_sigma2_update(double ssr, double n, double a, double b, Rng& rng);
double conjugate_sigma2_update(const Eigen::VectorXd& residuals, double a, double b, Rng& rng);

/// Draw of D where D^{-1} | b ~ Wishart(scale (R + S)^{-1}, dof + n) with S = sum b_i b_i'.
/// Throws FactorizationFailure after three jittered retries.
Eigen::MatrixXd conjugate_wishart_update(const Eigen::MatrixXd& scatter, double n, const Eigen::MatrixXd& R,
                                         double dof, Rng& rng);
Eigen::MatrixXd conjugate_wishart_update_from(const RandomEffects& b, const Eigen::MatrixXd& R, double dof, Rng& rng);

/// P(u_i = 1 | rest) for a censored subject of a mixture cure model.
double cure_class_full_conditional(const PreparedModel& model, const ParamState& state, std::size_t subject);

/// Worker count used by run().
int resolve_threads(const McmcConfig& config);

}  // namespace jointfuse::sampler
