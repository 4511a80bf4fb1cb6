#include "jointfuse/likelihood.hpp"

#include "jointfuse/error.hpp"
#include "jointfuse/hazard.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace jointfuse::likelihood {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

double log_add_exp(double a, double b) {
  const double m = std::max(a, b);
  if (m == kNegInf) return kNegInf;
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

/// Zero-truncated NB log pmf at y > 0 with mean parameter exp(log_eta).
double truncated_nb_log_pmf(double y, double log_eta, double r) {
  const double log_r_eta = log_add_exp(std::log(r), log_eta);
  const double log_kappa = std::log(r) - log_r_eta;
  const double log_1m_kappa = log_eta - log_r_eta;
  const double log_1m_kappa_r = std::log(-std::expm1(r * log_kappa));
  return std::lgamma(r + y) - std::lgamma(r) - std::lgamma(y + 1.0) + r * log_kappa + y * log_1m_kappa -
         log_1m_kappa_r;
}

double lmvgamma(int p, double a) {
  double s = p * (p - 1) / 4.0 * std::log(std::numbers::pi);
  for (int j = 1; j <= p; ++j) s += std::lgamma(a + (1.0 - j) / 2.0);
  return s;
}

}  // namespace

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double marker_loglik_gaussian(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, double sigma2) {
  if (!(sigma2 > 0.0)) throw Error(ErrorKind::NonPositiveVariance, "sigma2 must be positive");
  if (y.size() == 0) return 0.0;
  const double ssr = (y - mu).squaredNorm();
  return -0.5 * static_cast<double>(y.size()) * (kLog2Pi + std::log(sigma2)) - 0.5 * ssr / sigma2;
}

double marker_loglik_bernoulli(const Eigen::VectorXd& y, const Eigen::VectorXd& mu_logit) {
  double ll = 0.0;
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    if (y[j] != 0.0 && y[j] != 1.0) throw Error(ErrorKind::NonBinaryValue, "binary marker value " + std::to_string(y[j]));
    ll += y[j] * mu_logit[j] - softplus(mu_logit[j]);
  }
  return ll;
}

double hurdle_log_pmf(double y, double eta, double pi, double r) {
  if (y < 0.0) throw Error(ErrorKind::DomainError, "negative count");
  if (y == 0.0) return std::log(pi);
  return std::log1p(-pi) + truncated_nb_log_pmf(y, std::log(eta), r);
}

double hurdle_log_pmf_linear(double y, double log_eta, double logit_pi, double r) {
  if (y < 0.0) throw Error(ErrorKind::DomainError, "negative count");
  if (y == 0.0) return -softplus(-logit_pi);
  return -softplus(logit_pi) + truncated_nb_log_pmf(y, log_eta, r);
}

double marker_loglik_hurdle(const Eigen::VectorXd& y, const Eigen::VectorXd& eta, const Eigen::VectorXd& pi,
                            double r) {
  double ll = 0.0;
  for (Eigen::Index j = 0; j < y.size(); ++j) ll += hurdle_log_pmf(y[j], eta[j], pi[j], r);
  return ll;
}

ReFactor factor_re(const Eigen::MatrixXd& D) {
  ReFactor f;
  if (D.rows() == 0) {
    f.ok = true;
    return f;
  }
  if (!D.allFinite()) return f;
  Eigen::LLT<Eigen::MatrixXd> llt(D);
  if (llt.info() != Eigen::Success) return f;
  f.L = llt.matrixL();
  const Eigen::VectorXd diag = f.L.diagonal();
  if (!(diag.array() > 0.0).all()) return f;
  f.log_det = 2.0 * diag.array().log().sum();
  f.ok = true;
  return f;
}

double re_loglik(const VecRef& b, const Eigen::MatrixXd& D) {
  const ReFactor f = factor_re(D);
  if (!f.ok) throw Error(ErrorKind::NotPositiveDefinite, "random-effects covariance is not positive definite");
  return re_loglik(b, f);
}

double re_loglik(const VecRef& b, const ReFactor& f) {
  if (!f.ok) return kNegInf;
  const auto p = b.size();
  if (p == 0) return 0.0;
  const Eigen::VectorXd z = f.L.triangularView<Eigen::Lower>().solve(b);
  return -0.5 * static_cast<double>(p) * kLog2Pi - 0.5 * f.log_det - 0.5 * z.squaredNorm();
}

double gaussian_ssr(const PreparedMarker& m, double m0, double m1) {
  const double n = static_cast<double>(m.y.size());
  const double ssr = m.sum_vv - 2.0 * m0 * m.sum_v - 2.0 * m1 * m.sum_vt + n * m0 * m0 + 2.0 * m0 * m1 * m.sum_t +
                     m1 * m1 * m.sum_tt;
  return std::max(ssr, 0.0);
}

double subject_marker_loglik(const PreparedModel& model, const PreparedSubject& subject, int k,
                             const MarkerParams& params, const VecRef& b) {
  const PreparedMarker& pm = subject.markers[k];
  const auto n = pm.y.size();
  if (n == 0) return 0.0;
  const MarkerLayout& lay = model.markers[k];
  const auto mu = hazard::marker_predictor(pm, params, lay, b);
  switch (model.spec.markers[k].family) {
    case MarkerFamily::Gaussian: {
      if (!(params.sigma2 > 0.0)) return kNegInf;
      const double ssr = gaussian_ssr(pm, mu.m0, mu.m1);
      return -0.5 * static_cast<double>(n) * (kLog2Pi + std::log(params.sigma2)) - 0.5 * ssr / params.sigma2;
    }
    case MarkerFamily::BernoulliLogit: {
      double ll = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        const double eta = mu.m0 + mu.m1 * pm.t[j];
        ll += pm.y[j] * eta - softplus(eta);
      }
      return ll;
    }
    case MarkerFamily::HurdleNegBinomial: {
      if (!(params.dispersion > 0.0)) return kNegInf;
      double q0 = pm.xp0.dot(params.beta_prob), q1 = pm.xpt.dot(params.beta_prob);
      const int off = lay.re_offset + lay.random_dim;
      for (int j = 0; j < lay.prob_random_dim; ++j) {
        q0 += pm.zp0[j] * b[off + j];
        q1 += pm.zpt[j] * b[off + j];
      }
      double ll = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        const double t = pm.t[j];
        ll += hurdle_log_pmf_linear(pm.y[j], mu.m0 + mu.m1 * t + pm.offset[j], q0 + q1 * t, params.dispersion);
      }
      return ll;
    }
  }
  return 0.0;
}

double incidence_loglik(const PreparedSubject& subject, const Eigen::VectorXd& xi, int uncured) {
  const double q = subject.w_incidence.dot(xi);
  return uncured ? -softplus(-q) : -softplus(q);
}

double subject_log_lik(const PreparedModel& model, const ParamState& state, std::size_t i, const TermMask& mask,
                       int uncured, const ReFactor* factor_uncured, const ReFactor* factor_cured) {
  const PreparedSubject& subject = model.subjects[i];
  const LongitudinalParams& lp = state.longitudinal_for(uncured);
  const VecRef b = state.b.row(static_cast<Eigen::Index>(i)).transpose();
  const bool cure = model.is_cure();
  double ll = 0.0;
  if (mask.markers) {
    for (int k = 0; k < static_cast<int>(model.markers.size()); ++k) {
      if (mask.only_marker >= 0 && k != mask.only_marker) continue;
      ll += subject_marker_loglik(model, subject, k, lp.markers[k], b);
    }
  }
  if (mask.random_effects) {
    const ReFactor* f = (cure && uncured == 0) ? factor_cured : factor_uncured;
    if (f) {
      ll += re_loglik(b, *f);
    } else {
      ll += re_loglik(b, factor_re(lp.D));
    }
  }
  if (mask.events && (!cure || uncured == 1)) {
    for (int l = 0; l < static_cast<int>(model.causes.size()); ++l) {
      if (mask.only_cause >= 0 && l != mask.only_cause) continue;
      ll += hazard::cause_log_density(model, subject, l, state.causes[l], state.longitudinal, b);
    }
  }
  if (mask.incidence && cure) ll += incidence_loglik(subject, state.xi, uncured);
  return ll;
}

double subject_log_lik(const PreparedModel& model, const ParamState& state, std::size_t i, const TermMask& mask) {
  return subject_log_lik(model, state, i, mask, state.uncured[i]);
}

// ---------------------------------------------------------------------------
// priors

double normal_log_density(double x, double mean, double variance) {
  const double d = x - mean;
  return -0.5 * (kLog2Pi + std::log(variance)) - 0.5 * d * d / variance;
}

double gamma_log_density(double x, double shape, double rate) {
  if (!(x > 0.0)) return kNegInf;
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

double inverse_gamma_log_density(double x, double shape, double rate) {
  if (!(x > 0.0)) return kNegInf;
  return shape * std::log(rate) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - rate / x;
}

double inverse_wishart_log_density(const Eigen::MatrixXd& D, const Eigen::MatrixXd& R, double dof) {
  const auto p = static_cast<int>(D.rows());
  if (p == 0) return 0.0;
  const ReFactor f = factor_re(D);
  if (!f.ok) return kNegInf;
  Eigen::LLT<Eigen::MatrixXd> llt_r(R);
  const double log_det_r = 2.0 * Eigen::MatrixXd(llt_r.matrixL()).diagonal().array().log().sum();
  const Eigen::MatrixXd D_inv = Eigen::LLT<Eigen::MatrixXd>(D).solve(Eigen::MatrixXd::Identity(p, p));
  const double trace = (R * D_inv).trace();
  return 0.5 * dof * log_det_r - 0.5 * dof * p * std::log(2.0) - lmvgamma(p, dof / 2.0) -
         0.5 * (dof + p + 1.0) * f.log_det - 0.5 * trace;
}

std::vector<ReBlock> re_blocks(const PreparedModel& model) {
  std::vector<ReBlock> blocks;
  if (model.re_dim == 0) return blocks;
  if (!model.spec.block_diagonal_re) return {ReBlock{0, model.re_dim}};
  for (const auto& lay : model.markers) {
    if (lay.re_dim() > 0) blocks.push_back({lay.re_offset, lay.re_dim()});
  }
  return blocks;
}

double wishart_dof(const PreparedModel& model, int block_size) {
  const auto& dof = model.spec.priors.wishart_dof;
  return dof ? std::max(*dof, static_cast<double>(block_size)) : static_cast<double>(block_size);
}

double log_prior_marker(const PriorSet& pr, MarkerFamily family, const MarkerParams& params) {
  double lp = 0.0;
  for (Eigen::Index j = 0; j < params.beta.size(); ++j) lp += normal_log_density(params.beta[j], pr.beta_mean, pr.beta_variance);
  for (Eigen::Index j = 0; j < params.beta_prob.size(); ++j) {
    lp += normal_log_density(params.beta_prob[j], pr.beta_mean, pr.beta_variance);
  }
  if (family == MarkerFamily::Gaussian) lp += inverse_gamma_log_density(params.sigma2, pr.precision_shape, pr.precision_rate);
  if (family == MarkerFamily::HurdleNegBinomial) lp += gamma_log_density(params.dispersion, pr.dispersion_a, pr.dispersion_b);
  return lp;
}

double log_prior_covariance(const PreparedModel& model, const Eigen::MatrixXd& D) {
  double lp = 0.0;
  for (const auto& blk : re_blocks(model)) {
    const Eigen::MatrixXd R = model.spec.priors.wishart_scale * Eigen::MatrixXd::Identity(blk.size, blk.size);
    lp += inverse_wishart_log_density(D.block(blk.start, blk.start, blk.size, blk.size), R, wishart_dof(model, blk.size));
  }
  return lp;
}

double log_prior_event(const PriorSet& pr, const CauseParams& params, const CauseLayout&) {
  double lp = 0.0;
  for (Eigen::Index j = 0; j < params.alpha.size(); ++j) lp += normal_log_density(params.alpha[j], pr.alpha_mean, pr.alpha_variance);
  for (Eigen::Index j = 0; j < params.gamma.size(); ++j) lp += normal_log_density(params.gamma[j], pr.gamma_mean, pr.gamma_variance);
  return lp;
}

double log_prior_spline(const PriorSet& pr, const Eigen::MatrixXd& penalty, int order, const Eigen::VectorXd& coef,
                        double tau) {
  if (!(tau > 0.0)) return kNegInf;
  const double L = static_cast<double>(coef.size());
  const double rank = L - order;
  return 0.5 * rank * (std::log(tau) - kLog2Pi) - 0.5 * tau * coef.dot(penalty * coef) -
         0.5 * pr.spline_ridge_precision * coef.squaredNorm();
}

double log_prior_baseline(const PreparedModel& model, int cause, const BaselineParams& params) {
  const auto& pr = model.spec.priors;
  const auto& spec = model.spec.event.baselines[cause];
  switch (spec.kind) {
    case BaselineKind::Constant:
      return 0.0;
    case BaselineKind::Weibull:
      return gamma_log_density(params.shape, pr.shape_a, pr.shape_b);
    case BaselineKind::PiecewiseConstant: {
      double lp = 0.0;
      for (Eigen::Index j = 0; j < params.heights.size(); ++j) lp += gamma_log_density(params.heights[j], pr.height_a, pr.height_b);
      return lp;
    }
    case BaselineKind::BSpline:
      return normal_log_density(params.spline_intercept, pr.alpha_mean, pr.alpha_variance) +
             log_prior_spline(pr, model.penalties[cause], spec.penalty_order, params.spline_coef, params.smoothing) +
             gamma_log_density(params.smoothing, pr.smoothing_a, pr.smoothing_b);
  }
  return 0.0;
}

double log_prior_xi(const PriorSet& pr, const Eigen::VectorXd& xi) {
  double lp = 0.0;
  for (Eigen::Index j = 0; j < xi.size(); ++j) lp += normal_log_density(xi[j], pr.xi_mean, pr.xi_variance);
  return lp;
}

PriorTerms log_prior_terms(const PreparedModel& model, const ParamState& state) {
  PriorTerms t;
  const auto& pr = model.spec.priors;
  auto add_class = [&](const LongitudinalParams& lp) {
    for (std::size_t k = 0; k < model.markers.size(); ++k) {
      t.longitudinal += log_prior_marker(pr, model.spec.markers[k].family, lp.markers[k]);
    }
    t.covariance += log_prior_covariance(model, lp.D);
  };
  add_class(state.longitudinal);
  if (state.cured) add_class(*state.cured);
  for (std::size_t l = 0; l < model.causes.size(); ++l) {
    t.event += log_prior_event(pr, state.causes[l], model.causes[l]);
    t.baseline += log_prior_baseline(model, static_cast<int>(l), state.causes[l].baseline);
  }
  if (model.is_cure()) t.incidence = log_prior_xi(pr, state.xi);
  return t;
}

double log_prior(const PreparedModel& model, const ParamState& state) { return log_prior_terms(model, state).total(); }

double log_posterior(const PreparedModel& model, const ParamState& state) {
  double total = log_prior(model, state);
  if (!(total > kNegInf) || std::isnan(total)) return kNegInf;
  const ReFactor fu = factor_re(state.longitudinal.D);
  const ReFactor fc = state.cured ? factor_re(state.cured->D) : ReFactor{};
  for (std::size_t i = 0; i < model.n(); ++i) {
    total += subject_log_lik(model, state, i, TermMask::all(), state.uncured[i], &fu, state.cured ? &fc : nullptr);
  }
  if (std::isnan(total)) return kNegInf;
  return total;
}

}  // namespace jointfuse::likelihood
