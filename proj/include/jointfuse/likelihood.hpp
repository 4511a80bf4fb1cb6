#pragma once

#include "jointfuse/model.hpp"

#include <Eigen/Dense>

#include <vector>

namespace jointfuse::likelihood {

// ---------------------------------------------------------------------------
// Marker densities

/// Sum of N(y_j; mu_j, sigma2) log densities. Throws NonPositiveVariance.
double marker_loglik_gaussian(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, double sigma2);

/// Sum of y mu - log(1 + e^mu). Throws NonBinaryValue.
double marker_loglik_bernoulli(const Eigen::VectorXd& y, const Eigen::VectorXd& mu_logit);

/// Hurdle log-pmf with zero probability pi, NB mean eta and dispersion r. Throws DomainError for y < 0.
double hurdle_log_pmf(double y, double eta, double pi, double r);

/// Same in terms of log eta and logit pi, which stays finite for extreme predictors.
double hurdle_log_pmf_linear(double y, double log_eta, double logit_pi, double r);

double marker_loglik_hurdle(const Eigen::VectorXd& y, const Eigen::VectorXd& eta, const Eigen::VectorXd& pi,
                            double r);

/// log(1 + e^x) without overflow.
double softplus(double x);

// ---------------------------------------------------------------------------
// Random effects

/// Cholesky factor of D with its log-determinant; `ok` is false when D is not positive definite.
struct ReFactor {
  Eigen::MatrixXd L;
  double log_det = 0.0;
  bool ok = false;
};

ReFactor factor_re(const Eigen::MatrixXd& D);

/// Multivariate normal log density of b under N(0, D). Throws NotPositiveDefinite.
double re_loglik(const VecRef& b, const Eigen::MatrixXd& D);

/// Same with a cached factor; returns -inf when the factor is not valid.
double re_loglik(const VecRef& b, const ReFactor& factor);

// ---------------------------------------------------------------------------
// Subject-level pieces

/// Log density of one subject's observations of marker k under class parameters `params`.
/// Returns -inf for out-of-support parameters.
double subject_marker_loglik(const PreparedModel& model, const PreparedSubject& subject, int k,
                             const MarkerParams& params, const VecRef& b);

/// Residual sum of squares of a Gaussian marker for one subject.
double gaussian_ssr(const PreparedMarker& marker, double m0, double m1);

/// log p_i or log(1 - p_i) for the cure incidence model.
double incidence_loglik(const PreparedSubject& subject, const Eigen::VectorXd& xi, int uncured);

/// Which terms of a subject's complete-data log likelihood to evaluate.
struct TermMask {
  bool markers = true;
  int only_marker = -1;  // -1: all markers
  bool events = true;
  int only_cause = -1;  // -1: all causes
  bool random_effects = true;
  bool incidence = true;

  static TermMask all() { return {}; }
  static TermMask longitudinal() { return {true, -1, false, -1, true, false}; }
};

/// Complete-data log likelihood of subject i with class `uncured` (cure models); factors of the
/// class covariances may be supplied to avoid refactoring D.
double subject_log_lik(const PreparedModel& model, const ParamState& state, std::size_t i, const TermMask& mask,
                       int uncured, const ReFactor* factor_uncured = nullptr, const ReFactor* factor_cured = nullptr);

double subject_log_lik(const PreparedModel& model, const ParamState& state, std::size_t i,
                       const TermMask& mask = TermMask::all());

// ---------------------------------------------------------------------------
// Priors

double normal_log_density(double x, double mean, double variance);
double gamma_log_density(double x, double shape, double rate);
/// Inverse-gamma density of sigma2 induced by a gamma(shape, rate) prior on 1/sigma2.
double inverse_gamma_log_density(double x, double shape, double rate);
/// Density of D when D^{-1} ~ Wishart with scale matrix R^{-1} and `dof` degrees of freedom.
double inverse_wishart_log_density(const Eigen::MatrixXd& D, const Eigen::MatrixXd& R, double dof);

/// Index ranges of the random-effects blocks that carry separate covariance priors.
struct ReBlock {
  int start = 0;
  int size = 0;
};
std::vector<ReBlock> re_blocks(const PreparedModel& model);
double wishart_dof(const PreparedModel& model, int block_size);

struct PriorTerms {
  double longitudinal = 0.0;  // beta, beta_prob, sigma2, r of every class
  double covariance = 0.0;    // D of every class
  double event = 0.0;         // alpha, gamma
  double baseline = 0.0;      // nu, h, spline coefficients and smoothing
  double incidence = 0.0;     // xi

  double total() const { return longitudinal + covariance + event + baseline + incidence; }
};

double log_prior_marker(const PriorSet& priors, MarkerFamily family, const MarkerParams& params);
double log_prior_covariance(const PreparedModel& model, const Eigen::MatrixXd& D);
double log_prior_event(const PriorSet& priors, const CauseParams& params, const CauseLayout& layout);
double log_prior_baseline(const PreparedModel& model, int cause, const BaselineParams& params);
/// Random-walk prior on spline coefficients given smoothing tau, plus the weak ridge.
double log_prior_spline(const PriorSet& priors, const Eigen::MatrixXd& penalty, int order,
                        const Eigen::VectorXd& coef, double tau);
double log_prior_xi(const PriorSet& priors, const Eigen::VectorXd& xi);

PriorTerms log_prior_terms(const PreparedModel& model, const ParamState& state);
double log_prior(const PreparedModel& model, const ParamState& state);

/// Sum of subject complete-data log likelihoods plus the log prior. -inf when out of support.
double log_posterior(const PreparedModel& model, const ParamState& state);

}  // namespace jointfuse::likelihood
