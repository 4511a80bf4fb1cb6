#include "jointfuse/sampler.hpp"

#include "jointfuse/error.hpp"
#include "jointfuse/hazard.hpp"
#include "jointfuse/likelihood.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <mutex>
#include <thread>

namespace jointfuse::sampler {

using likelihood::ReFactor;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

enum StreamId : std::uint64_t {
  kStreamInit = 1,
  kStreamB,
  kStreamBeta,
  kStreamSigma,
  kStreamD,
  kStreamCause,
  kStreamBaseline,
  kStreamTau,
  kStreamDispersion,
  kStreamClass,
  kStreamXi,
};

}  // namespace

void McmcConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::ConfigError, msg); };
  if (chains < 1) fail("mcmc.chains must be >= 1");
  if (iterations < 1) fail("mcmc.iterations must be >= 1");
  if (burnin_iterations() < 0 || burnin_iterations() >= iterations) fail("mcmc.burnin must be in [0, iterations)");
  if (thin < 1) fail("mcmc.thin must be >= 1");
  if (adapt_window < 1) fail("mcmc.adapt_window must be >= 1");
  if (!(target_scalar > 0.0 && target_scalar < 1.0) || !(target_vector > 0.0 && target_vector < 1.0)) {
    fail("mcmc acceptance targets must be in (0, 1)");
  }
}

// ---------------------------------------------------------------------------
// RNG

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Rng Rng::stream(std::uint64_t seed, std::uint64_t chain, std::uint64_t block) {
  std::uint64_t k = mix64(seed + 0x9E3779B97F4A7C15ULL);
  k = mix64(k ^ ((chain + 1) * 0xD1B54A32D192ED03ULL));
  k = mix64(k ^ ((block + 1) * 0x8CB92BA72F3D8DD7ULL));
  return Rng(k);
}

Rng::result_type Rng::operator()() {
  ++counter_;
  return mix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
}

double Rng::uniform() { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

double Rng::normal() { return normal_(*this); }

double Rng::gamma(double shape, double rate) {
  std::gamma_distribution<double> dist(shape, 1.0 / rate);
  return dist(*this);
}

Rng Rng::split(std::uint64_t id) const { return Rng(mix64(key_ ^ mix64(id + 0x632BE59BD9B4E019ULL))); }

// ---------------------------------------------------------------------------
// adaptive proposals

AdaptiveBlock::AdaptiveBlock(int dim, double initial_sd, double target)
    : dim_(dim), target_(target), log_scale_(std::log(dim > 1 ? 2.38 / std::sqrt(static_cast<double>(dim)) : 1.0)),
      L_(initial_sd * Eigen::MatrixXd::Identity(dim, dim)), mean_(Eigen::VectorXd::Zero(dim)),
      m2_(Eigen::MatrixXd::Zero(dim, dim)) {}

Eigen::VectorXd AdaptiveBlock::propose(const Eigen::VectorXd& x, Rng& rng) const {
  Eigen::VectorXd z(dim_);
  for (int j = 0; j < dim_; ++j) z[j] = rng.normal();
  const Eigen::VectorXd step = L_.triangularView<Eigen::Lower>() * z;
  return x + scale() * step;
}

void AdaptiveBlock::record(double alpha, bool accepted, const Eigen::VectorXd& state, bool adapting) {
  ++proposed_;
  if (accepted) ++accepted_;
  if (!adapting) {
    ++proposed_frozen_;
    if (accepted) ++accepted_frozen_;
    return;
  }
  ++adapt_steps_;
  log_scale_ += std::pow(static_cast<double>(adapt_steps_), -0.6) * (alpha - target_);
  log_scale_ = std::clamp(log_scale_, -30.0, 10.0);
  ++count_;
  const Eigen::VectorXd delta = state - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta * (state - mean_).transpose();
}

void AdaptiveBlock::refresh() {
  if (dim_ < 2 || count_ < 2L * dim_ + 10) return;
  Eigen::MatrixXd cov = m2_ / static_cast<double>(count_ - 1);
  const double ridge = 1e-10 * std::max(cov.diagonal().mean(), 1e-12);
  cov.diagonal().array() += ridge;
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) return;
  Eigen::MatrixXd L = llt.matrixL();
  if (!L.allFinite() || !(L.diagonal().array() > 0.0).all()) return;
  L_ = L;
  if (!empirical_) {
    empirical_ = true;
    log_scale_ = std::log(2.38 / std::sqrt(static_cast<double>(dim_)));
  }
}

void AdaptiveBlock::reset_history() {
  count_ = 0;
  mean_.setZero();
  m2_.setZero();
}

double AdaptiveBlock::acceptance_rate() const {
  if (proposed_frozen_ > 0) return static_cast<double>(accepted_frozen_) / static_cast<double>(proposed_frozen_);
  return proposed_ > 0 ? static_cast<double>(accepted_) / static_cast<double>(proposed_) : 0.0;
}

// ---------------------------------------------------------------------------
// conjugate updates

double conjugate_sigma2_update(double ssr, double n, double a, double b, Rng& rng) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double precision = rng.gamma(a + n / 2.0, b + ssr / 2.0);
    const double sigma2 = 1.0 / precision;
    if (precision > 0.0 && std::isfinite(sigma2) && sigma2 > 0.0) return sigma2;
  }
  throw Error(ErrorKind::DomainError, "sigma2 draw is not representable");
}

double conjugate_sigma2_update(const Eigen::VectorXd& residuals, double a, double b, Rng& rng) {
  return conjugate_sigma2_update(residuals.squaredNorm(), static_cast<double>(residuals.size()), a, b, rng);
}

Eigen::MatrixXd conjugate_wishart_update(const Eigen::MatrixXd& scatter, double n, const Eigen::MatrixXd& R,
                                         double dof, Rng& rng) {
  const auto p = R.rows();
  if (p == 0) return Eigen::MatrixXd();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(p, p);
  Eigen::MatrixXd M = R + scatter;
  M = 0.5 * (M + M.transpose());
  const double nu = dof + n;
  for (int attempt = 0; attempt <= 3; ++attempt) {
    if (attempt > 0) M += 1e-10 * std::max(1.0, M.diagonal().mean()) * I;
    Eigen::LLT<Eigen::MatrixXd> llt_m(M);
    if (llt_m.info() != Eigen::Success) continue;
    Eigen::MatrixXd Sigma = llt_m.solve(I);
    Sigma = 0.5 * (Sigma + Sigma.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt_s(Sigma);
    if (llt_s.info() != Eigen::Success) continue;
    // Bartlett decomposition of Omega = (L A)(L A)'.
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index i = 0; i < p; ++i) {
      A(i, i) = std::sqrt(rng.chi_squared(nu - static_cast<double>(i)));
      for (Eigen::Index j = 0; j < i; ++j) A(i, j) = rng.normal();
    }
    const Eigen::MatrixXd LA = Eigen::MatrixXd(llt_s.matrixL()) * A;
    const Eigen::MatrixXd LA_inv = LA.triangularView<Eigen::Lower>().solve(I);
    Eigen::MatrixXd D = LA_inv.transpose() * LA_inv;
    D = 0.5 * (D + D.transpose());
    Eigen::LLT<Eigen::MatrixXd> check(D);
    if (check.info() == Eigen::Success && D.allFinite()) return D;
  }
  throw Error(ErrorKind::FactorizationFailure, "Wishart update failed after jittered retries");
}

Eigen::MatrixXd conjugate_wishart_update_from(const RandomEffects& b, const Eigen::MatrixXd& R, double dof, Rng& rng) {
  const Eigen::MatrixXd S = b.transpose() * b;
  return conjugate_wishart_update(S, static_cast<double>(b.rows()), R, dof, rng);
}

double cure_class_full_conditional(const PreparedModel& model, const ParamState& state, std::size_t i) {
  const auto mask = likelihood::TermMask::all();
  const double l1 = likelihood::subject_log_lik(model, state, i, mask, 1);
  const double l0 = likelihood::subject_log_lik(model, state, i, mask, 0);
  if (l1 == kNegInf && l0 == kNegInf) return 0.0;
  return 1.0 / (1.0 + std::exp(l0 - l1));
}

// ---------------------------------------------------------------------------
// chain

namespace {

struct MhResult {
  double alpha = 0.0;
  bool accepted = false;
};

MhResult mh_decide(double log_ratio, Rng& rng) {
  MhResult r;
  if (std::isnan(log_ratio) || log_ratio == kNegInf) return r;
  r.alpha = log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
  r.accepted = log_ratio >= 0.0 || std::log(rng.uniform()) < log_ratio;
  return r;
}

class Chain {
 public:
  Chain(const PreparedModel& model, const McmcConfig& cfg, int chain_id, const ChainHooks& hooks)
      : model_(model), cfg_(cfg), chain_(chain_id), hooks_(hooks) {
    const auto seed = cfg.seed;
    const auto c = static_cast<std::uint64_t>(chain_id);
    rng_b_ = Rng::stream(seed, c, kStreamB);
    rng_beta_ = Rng::stream(seed, c, kStreamBeta);
    rng_sigma_ = Rng::stream(seed, c, kStreamSigma);
    rng_D_ = Rng::stream(seed, c, kStreamD);
    rng_cause_ = Rng::stream(seed, c, kStreamCause);
    rng_base_ = Rng::stream(seed, c, kStreamBaseline);
    rng_tau_ = Rng::stream(seed, c, kStreamTau);
    rng_r_ = Rng::stream(seed, c, kStreamDispersion);
    rng_u_ = Rng::stream(seed, c, kStreamClass);
    rng_xi_ = Rng::stream(seed, c, kStreamXi);
    n_ = static_cast<int>(model.n());
    K_ = static_cast<int>(model.markers.size());
    Lc_ = static_cast<int>(model.causes.size());
    cure_ = model.is_cure();
    C_ = cure_ ? 2 : 1;
  }

  ChainOutput run();

 private:
  const PreparedModel& model_;
  const McmcConfig& cfg_;
  int chain_;
  const ChainHooks& hooks_;
  ParamState st_;
  int n_ = 0, K_ = 0, Lc_ = 0, C_ = 1;
  bool cure_ = false;

  Eigen::MatrixXd mk_, ev_;
  Eigen::VectorXd re_, inc_;
  std::vector<ReFactor> factor_;
  Eigen::MatrixXd scratch_mk_, scratch_ev_;
  Eigen::VectorXd scratch_;

  Rng rng_b_{0}, rng_beta_{0}, rng_sigma_{0}, rng_D_{0}, rng_cause_{0}, rng_base_{0}, rng_tau_{0}, rng_r_{0},
      rng_u_{0}, rng_xi_{0};

  std::vector<AdaptiveBlock> b_blocks_;
  std::vector<std::vector<AdaptiveBlock>> beta_blocks_, beta_prob_blocks_, r_blocks_;
  std::vector<AdaptiveBlock> cause_blocks_, baseline_blocks_;
  AdaptiveBlock xi_block_;

  int cls(int i) const { return cure_ && st_.uncured[i] == 0 ? 1 : 0; }
  LongitudinalParams& lon(int c) { return c == 0 ? st_.longitudinal : *st_.cured; }
  double vector_target(int dim) const { return dim > 1 ? cfg_.target_vector : cfg_.target_scalar; }

  void initialize();
  void build_blocks();
  void refresh_caches();
  double event_term(int i, int l, const CauseParams& cp, const LongitudinalParams& lon0, const VecRef& b) const {
    if (cure_ && st_.uncured[i] == 0) return 0.0;
    return hazard::cause_log_density(model_, model_.subjects[i], l, cp, lon0, b);
  }
  bool association_uses_beta(int k) const {
    return Lc_ > 0 && model_.spec.markers[k].association.kind != AssociationKind::SharedRandomEffects;
  }

  void update_b(int i, bool adapting);
  void update_beta(int c, int k, bool adapting);
  void update_beta_prob(int c, int k, bool adapting);
  void gibbs_sigma2(int c, int k);
  void gibbs_D(int c);
  void update_cause(int l, bool adapting);
  void update_baseline(int l, bool adapting);
  void gibbs_tau(int l);
  void update_dispersion(int c, int k, bool adapting);
  void update_classes(bool adapting);
  void update_xi(bool adapting);
  void sweep(bool adapting);

  template <typename F>
  void each_block(F&& f) {
    for (auto& b : b_blocks_) f(b);
    for (auto* group : {&beta_blocks_, &beta_prob_blocks_, &r_blocks_}) {
      for (auto& per_class : *group) {
        for (auto& b : per_class) f(b);
      }
    }
    for (auto& b : cause_blocks_) f(b);
    for (auto& b : baseline_blocks_) f(b);
    f(xi_block_);
  }
  std::vector<std::string> block_names() const {
    std::vector<std::string> names;
    for (int i = 0; i < n_; ++i) names.push_back("b[" + std::to_string(i + 1) + "]");
    for (const char* group : {"beta", "beta_prob", "r"}) {
      for (int c = 0; c < C_; ++c) {
        for (int k = 0; k < K_; ++k) {
          names.push_back(std::string(group) + (c ? "_cured[" : "[") + std::to_string(k + 1) + "]");
        }
      }
    }
    for (int l = 0; l < Lc_; ++l) names.push_back("alpha_gamma[" + std::to_string(l + 1) + "]");
    for (int l = 0; l < Lc_; ++l) names.push_back("baseline[" + std::to_string(l + 1) + "]");
    names.push_back("xi");
    return names;
  }
  std::vector<double> scales() {
    std::vector<double> s;
    each_block([&](AdaptiveBlock& b) { s.push_back(b.dim() > 0 ? b.scale() : 0.0); });
    return s;
  }
};

void Chain::initialize() {
  const std::uint64_t init_seed = mix64(cfg_.seed ^ mix64(static_cast<std::uint64_t>(chain_) + 17));
  if (hooks_.initial) {
    st_ = *hooks_.initial;
  } else {
    st_ = initial_state(model_, init_seed);
    if (chain_ > 0) {
      // Spread the starting points of later chains so between-chain variance is informative.
      Rng jitter = Rng::stream(cfg_.seed, static_cast<std::uint64_t>(chain_), kStreamInit);
      auto shake = [&](Eigen::VectorXd& v) {
        for (Eigen::Index j = 0; j < v.size(); ++j) v[j] += 0.1 * jitter.normal();
      };
      for (int c = 0; c < C_; ++c) {
        for (auto& mp : lon(c).markers) {
          shake(mp.beta);
          shake(mp.beta_prob);
        }
      }
      for (auto& cp : st_.causes) {
        shake(cp.alpha);
        shake(cp.gamma);
      }
      shake(st_.xi);
    }
  }
  const std::string problem = check_state(model_, st_);
  if (!problem.empty()) throw Error(ErrorKind::InvariantViolation, "initial state: " + problem);
  refresh_caches();
  const double lp = likelihood::log_posterior(model_, st_);
  if (!std::isfinite(lp)) throw Error(ErrorKind::NonFiniteLogPosterior, "log posterior at the initial state is not finite");
}

void Chain::build_blocks() {
  const int nb = model_.re_dim;
  b_blocks_.assign(n_, AdaptiveBlock(nb, 0.3, vector_target(nb)));
  beta_blocks_.assign(C_, {});
  beta_prob_blocks_.assign(C_, {});
  r_blocks_.assign(C_, {});
  for (int c = 0; c < C_; ++c) {
    for (int k = 0; k < K_; ++k) {
      const auto& lay = model_.markers[k];
      beta_blocks_[c].emplace_back(lay.fixed_dim, 0.05, vector_target(lay.fixed_dim));
      beta_prob_blocks_[c].emplace_back(lay.prob_fixed_dim, 0.05, vector_target(lay.prob_fixed_dim));
      r_blocks_[c].emplace_back(model_.spec.markers[k].family == MarkerFamily::HurdleNegBinomial ? 1 : 0, 0.1,
                                cfg_.target_scalar);
    }
  }
  cause_blocks_.clear();
  baseline_blocks_.clear();
  for (int l = 0; l < Lc_; ++l) {
    const int d = model_.causes[l].alpha_dim + model_.causes[l].gamma_dim;
    cause_blocks_.emplace_back(d, 0.05, vector_target(d));
    const auto& spec = model_.spec.event.baselines[l];
    int db = 0;
    switch (spec.kind) {
      case BaselineKind::Constant: db = 0; break;
      case BaselineKind::Weibull: db = 1; break;
      case BaselineKind::PiecewiseConstant: db = static_cast<int>(spec.knots.size()) + 1; break;
      case BaselineKind::BSpline: db = spec.spline_basis_size() + 1; break;
    }
    baseline_blocks_.emplace_back(db, 0.1, vector_target(db));
  }
  xi_block_ = AdaptiveBlock(model_.incidence_dim, 0.1, vector_target(model_.incidence_dim));
}

void Chain::refresh_caches() {
  mk_.setZero(n_, K_);
  ev_.setZero(n_, Lc_);
  re_.setZero(n_);
  inc_.setZero(n_);
  scratch_mk_.setZero(n_, std::max(K_, 1));
  scratch_ev_.setZero(n_, std::max(Lc_, 1));
  scratch_.setZero(n_);
  factor_.assign(C_, ReFactor{});
  for (int c = 0; c < C_; ++c) factor_[c] = likelihood::factor_re(lon(c).D);
  for (int i = 0; i < n_; ++i) {
    const VecRef b = st_.b.row(i).transpose();
    const int c = cls(i);
    for (int k = 0; k < K_; ++k) mk_(i, k) = likelihood::subject_marker_loglik(model_, model_.subjects[i], k, lon(c).markers[k], b);
    re_[i] = likelihood::re_loglik(b, factor_[c]);
    for (int l = 0; l < Lc_; ++l) ev_(i, l) = event_term(i, l, st_.causes[l], st_.longitudinal, b);
    if (cure_) inc_[i] = likelihood::incidence_loglik(model_.subjects[i], st_.xi, st_.uncured[i]);
  }
}

void Chain::update_b(int i, bool adapting) {
  if (model_.re_dim == 0) return;
  AdaptiveBlock& block = b_blocks_[i];
  const Eigen::VectorXd current = st_.b.row(i).transpose();
  const Eigen::VectorXd prop = block.propose(current, rng_b_);
  const int c = cls(i);
  const auto& subject = model_.subjects[i];
  double new_mk[64], new_ev[64];
  double delta = 0.0, new_re = 0.0;
  try {
    for (int k = 0; k < K_; ++k) {
      new_mk[k] = likelihood::subject_marker_loglik(model_, subject, k, lon(c).markers[k], prop);
      delta += new_mk[k] - mk_(i, k);
    }
    new_re = likelihood::re_loglik(prop, factor_[c]);
    delta += new_re - re_[i];
    for (int l = 0; l < Lc_; ++l) {
      new_ev[l] = event_term(i, l, st_.causes[l], st_.longitudinal, prop);
      delta += new_ev[l] - ev_(i, l);
    }
  } catch (const Error&) {
    delta = kNegInf;
  }
  const MhResult r = mh_decide(delta, rng_b_);
  if (r.accepted) {
    st_.b.row(i) = prop.transpose();
    for (int k = 0; k < K_; ++k) mk_(i, k) = new_mk[k];
    re_[i] = new_re;
    for (int l = 0; l < Lc_; ++l) ev_(i, l) = new_ev[l];
  }
  block.record(r.alpha, r.accepted, r.accepted ? prop : current, adapting);
}

void Chain::update_beta(int c, int k, bool adapting) {
  AdaptiveBlock& block = beta_blocks_[c][k];
  if (block.dim() == 0) return;
  MarkerParams& mp = lon(c).markers[k];
  const Eigen::VectorXd prop = block.propose(mp.beta, rng_beta_);
  const auto family = model_.spec.markers[k].family;
  const auto& priors = model_.spec.priors;
  MarkerParams trial = mp;
  trial.beta = prop;
  const bool events = c == 0 && association_uses_beta(k);
  LongitudinalParams trial_lon;
  if (events) {
    trial_lon = st_.longitudinal;
    trial_lon.markers[k].beta = prop;
  }
  double delta = likelihood::log_prior_marker(priors, family, trial) - likelihood::log_prior_marker(priors, family, mp);
  try {
    for (int i = 0; i < n_; ++i) {
      if (cls(i) != c) continue;
      const VecRef b = st_.b.row(i).transpose();
      scratch_mk_(i, 0) = likelihood::subject_marker_loglik(model_, model_.subjects[i], k, trial, b);
      delta += scratch_mk_(i, 0) - mk_(i, k);
      if (events) {
        for (int l = 0; l < Lc_; ++l) {
          scratch_ev_(i, l) = event_term(i, l, st_.causes[l], trial_lon, b);
          delta += scratch_ev_(i, l) - ev_(i, l);
        }
      }
    }
  } catch (const Error&) {
    delta = kNegInf;
  }
  const MhResult r = mh_decide(delta, rng_beta_);
  if (r.accepted) {
    mp.beta = prop;
    for (int i = 0; i < n_; ++i) {
      if (cls(i) != c) continue;
      mk_(i, k) = scratch_mk_(i, 0);
      if (events) {
        for (int l = 0; l < Lc_; ++l) ev_(i, l) = scratch_ev_(i, l);
      }
    }
  }
  block.record(r.alpha, r.accepted, mp.beta, adapting);
}

void Chain::update_beta_prob(int c, int k, bool adapting) {
  AdaptiveBlock& block = beta_prob_blocks_[c][k];
  if (block.dim() == 0) return;
  MarkerParams& mp = lon(c).markers[k];
  const Eigen::VectorXd prop = block.propose(mp.beta_prob, rng_beta_);
  const auto family = model_.spec.markers[k].family;
  const auto& priors = model_.spec.priors;
  MarkerParams trial = mp;
  trial.beta_prob = prop;
  double delta = likelihood::log_prior_marker(priors, family, trial) - likelihood::log_prior_marker(priors, family, mp);
  for (int i = 0; i < n_; ++i) {
    if (cls(i) != c) continue;
    scratch_mk_(i, 0) = likelihood::subject_marker_loglik(model_, model_.subjects[i], k, trial, st_.b.row(i).transpose());
    delta += scratch_mk_(i, 0) - mk_(i, k);
  }
  const MhResult r = mh_decide(delta, rng_beta_);
  if (r.accepted) {
    mp.beta_prob = prop;
    for (int i = 0; i < n_; ++i) {
      if (cls(i) == c) mk_(i, k) = scratch_mk_(i, 0);
    }
  }
  block.record(r.alpha, r.accepted, mp.beta_prob, adapting);
}

void Chain::gibbs_sigma2(int c, int k) {
  if (model_.spec.markers[k].family != MarkerFamily::Gaussian) return;
  MarkerParams& mp = lon(c).markers[k];
  const auto& lay = model_.markers[k];
  double ssr = 0.0, count = 0.0;
  for (int i = 0; i < n_; ++i) {
    if (cls(i) != c) continue;
    const auto& pm = model_.subjects[i].markers[k];
    if (pm.y.size() == 0) continue;
    const auto mu = hazard::marker_predictor(pm, mp, lay, st_.b.row(i).transpose());
    ssr += likelihood::gaussian_ssr(pm, mu.m0, mu.m1);
    count += static_cast<double>(pm.y.size());
  }
  const auto& pr = model_.spec.priors;
  mp.sigma2 = conjugate_sigma2_update(ssr, count, pr.precision_shape, pr.precision_rate, rng_sigma_);
  for (int i = 0; i < n_; ++i) {
    if (cls(i) != c) continue;
    mk_(i, k) = likelihood::subject_marker_loglik(model_, model_.subjects[i], k, mp, st_.b.row(i).transpose());
  }
}

void Chain::gibbs_D(int c) {
  if (model_.re_dim == 0) return;
  LongitudinalParams& lp = lon(c);
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(model_.re_dim, model_.re_dim);
  for (const auto& blk : likelihood::re_blocks(model_)) {
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(blk.size, blk.size);
    double count = 0.0;
    for (int i = 0; i < n_; ++i) {
      if (cls(i) != c) continue;
      const Eigen::VectorXd bi = st_.b.row(i).segment(blk.start, blk.size).transpose();
      S.noalias() += bi * bi.transpose();
      count += 1.0;
    }
    const Eigen::MatrixXd R = model_.spec.priors.wishart_scale * Eigen::MatrixXd::Identity(blk.size, blk.size);
    D.block(blk.start, blk.start, blk.size, blk.size) =
        conjugate_wishart_update(S, count, R, likelihood::wishart_dof(model_, blk.size), rng_D_);
  }
  lp.D = D;
  factor_[c] = likelihood::factor_re(D);
  for (int i = 0; i < n_; ++i) {
    if (cls(i) == c) re_[i] = likelihood::re_loglik(st_.b.row(i).transpose(), factor_[c]);
  }
}

void Chain::update_cause(int l, bool adapting) {
  AdaptiveBlock& block = cause_blocks_[l];
  if (block.dim() == 0) return;
  CauseParams& cp = st_.causes[l];
  const auto na = cp.alpha.size();
  Eigen::VectorXd current(block.dim());
  current << cp.alpha, cp.gamma;
  const Eigen::VectorXd prop = block.propose(current, rng_cause_);
  CauseParams trial = cp;
  trial.alpha = prop.head(na);
  trial.gamma = prop.tail(cp.gamma.size());
  const auto& pr = model_.spec.priors;
  double delta = likelihood::log_prior_event(pr, trial, model_.causes[l]) - likelihood::log_prior_event(pr, cp, model_.causes[l]);
  try {
    for (int i = 0; i < n_; ++i) {
      if (cure_ && st_.uncured[i] == 0) continue;
      scratch_(i) = event_term(i, l, trial, st_.longitudinal, st_.b.row(i).transpose());
      delta += scratch_(i) - ev_(i, l);
    }
  } catch (const Error&) {
    delta = kNegInf;
  }
  const MhResult r = mh_decide(delta, rng_cause_);
  if (r.accepted) {
    cp.alpha = trial.alpha;
    cp.gamma = trial.gamma;
    for (int i = 0; i < n_; ++i) {
      if (!(cure_ && st_.uncured[i] == 0)) ev_(i, l) = scratch_(i);
    }
  }
  block.record(r.alpha, r.accepted, r.accepted ? prop : current, adapting);
}

void Chain::update_baseline(int l, bool adapting) {
  AdaptiveBlock& block = baseline_blocks_[l];
  if (block.dim() == 0) return;
  CauseParams& cp = st_.causes[l];
  const auto kind = model_.spec.event.baselines[l].kind;
  Eigen::VectorXd current(block.dim());
  double log_jacobian_cur = 0.0;
  switch (kind) {
    case BaselineKind::Weibull:
      current[0] = std::log(cp.baseline.shape);
      log_jacobian_cur = current[0];
      break;
    case BaselineKind::PiecewiseConstant:
      current = cp.baseline.heights.array().log();
      log_jacobian_cur = current.sum();
      break;
    case BaselineKind::BSpline:
      current << cp.baseline.spline_intercept, cp.baseline.spline_coef;
      break;
    case BaselineKind::Constant:
      return;
  }
  const Eigen::VectorXd prop = block.propose(current, rng_base_);
  CauseParams trial = cp;
  double log_jacobian_prop = 0.0;
  switch (kind) {
    case BaselineKind::Weibull:
      trial.baseline.shape = std::exp(prop[0]);
      log_jacobian_prop = prop[0];
      break;
    case BaselineKind::PiecewiseConstant:
      trial.baseline.heights = prop.array().exp();
      log_jacobian_prop = prop.sum();
      break;
    case BaselineKind::BSpline:
      trial.baseline.spline_intercept = prop[0];
      trial.baseline.spline_coef = prop.tail(prop.size() - 1);
      break;
    case BaselineKind::Constant:
      break;
  }
  double delta = likelihood::log_prior_baseline(model_, l, trial.baseline) + log_jacobian_prop -
                 likelihood::log_prior_baseline(model_, l, cp.baseline) - log_jacobian_cur;
  try {
    if (std::isfinite(delta)) {
      for (int i = 0; i < n_; ++i) {
        if (cure_ && st_.uncured[i] == 0) continue;
        scratch_(i) = event_term(i, l, trial, st_.longitudinal, st_.b.row(i).transpose());
        delta += scratch_(i) - ev_(i, l);
      }
    }
  } catch (const Error&) {
    delta = kNegInf;
  }
  const MhResult r = mh_decide(delta, rng_base_);
  if (r.accepted) {
    cp.baseline = trial.baseline;
    for (int i = 0; i < n_; ++i) {
      if (!(cure_ && st_.uncured[i] == 0)) ev_(i, l) = scratch_(i);
    }
  }
  block.record(r.alpha, r.accepted, r.accepted ? prop : current, adapting);
}

void Chain::gibbs_tau(int l) {
  const auto& spec = model_.spec.event.baselines[l];
  if (spec.kind != BaselineKind::BSpline) return;
  auto& bp = st_.causes[l].baseline;
  const auto& pr = model_.spec.priors;
  const double quad = bp.spline_coef.dot(model_.penalties[l] * bp.spline_coef);
  const double rank = static_cast<double>(spec.spline_basis_size() - spec.penalty_order);
  const double tau = rng_tau_.gamma(pr.smoothing_a + rank / 2.0, pr.smoothing_b + quad / 2.0);
  if (tau > 0.0 && std::isfinite(tau)) bp.smoothing = tau;
}

void Chain::update_dispersion(int c, int k, bool adapting) {
  AdaptiveBlock& block = r_blocks_[c][k];
  if (block.dim() == 0) return;
  MarkerParams& mp = lon(c).markers[k];
  Eigen::VectorXd current(1);
  current[0] = std::log(mp.dispersion);
  const Eigen::VectorXd prop = block.propose(current, rng_r_);
  MarkerParams trial = mp;
  trial.dispersion = std::exp(prop[0]);
  const auto& pr = model_.spec.priors;
  double delta = likelihood::gamma_log_density(trial.dispersion, pr.dispersion_a, pr.dispersion_b) + prop[0] -
                 likelihood::gamma_log_density(mp.dispersion, pr.dispersion_a, pr.dispersion_b) - current[0];
  if (!(trial.dispersion > 0.0) || !std::isfinite(trial.dispersion)) delta = kNegInf;
  if (std::isfinite(delta)) {
    for (int i = 0; i < n_; ++i) {
      if (cls(i) != c) continue;
      scratch_mk_(i, 0) = likelihood::subject_marker_loglik(model_, model_.subjects[i], k, trial, st_.b.row(i).transpose());
      delta += scratch_mk_(i, 0) - mk_(i, k);
    }
  }
  const MhResult r = mh_decide(delta, rng_r_);
  if (r.accepted) {
    mp.dispersion = trial.dispersion;
    for (int i = 0; i < n_; ++i) {
      if (cls(i) == c) mk_(i, k) = scratch_mk_(i, 0);
    }
  }
  block.record(r.alpha, r.accepted, r.accepted ? prop : current, adapting);
}

void Chain::update_classes(bool adapting) {
  for (int i = 0; i < n_; ++i) {
    const auto& s = model_.subjects[i];
    if (s.status > 0 || s.zero_tail) continue;
    const VecRef b = st_.b.row(i).transpose();
    // Complete-data log likelihood of the subject in each class.
    double l1 = likelihood::incidence_loglik(s, st_.xi, 1) + likelihood::re_loglik(b, factor_[0]);
    double l0 = likelihood::incidence_loglik(s, st_.xi, 0) + likelihood::re_loglik(b, factor_[1]);
    double mk1[64], mk0[64], ev1[64];
    for (int k = 0; k < K_; ++k) {
      mk1[k] = likelihood::subject_marker_loglik(model_, s, k, st_.longitudinal.markers[k], b);
      mk0[k] = likelihood::subject_marker_loglik(model_, s, k, st_.cured->markers[k], b);
      l1 += mk1[k];
      l0 += mk0[k];
    }
    for (int l = 0; l < Lc_; ++l) {
      ev1[l] = hazard::cause_log_density(model_, s, l, st_.causes[l], st_.longitudinal, b);
      l1 += ev1[l];
    }
    double p1 = 1.0 / (1.0 + std::exp(l0 - l1));
    if (std::isnan(p1)) p1 = l1 > l0 ? 1.0 : 0.0;
    const int u = rng_u_.bernoulli(p1) ? 1 : 0;
    if (u == st_.uncured[i]) continue;
    st_.uncured[i] = u;
    for (int k = 0; k < K_; ++k) mk_(i, k) = u ? mk1[k] : mk0[k];
    for (int l = 0; l < Lc_; ++l) ev_(i, l) = u ? ev1[l] : 0.0;
    re_[i] = likelihood::re_loglik(b, factor_[u ? 0 : 1]);
    inc_[i] = likelihood::incidence_loglik(s, st_.xi, u);
    update_b(i, adapting);
  }
}

void Chain::update_xi(bool adapting) {
  if (xi_block_.dim() == 0) return;
  const Eigen::VectorXd prop = xi_block_.propose(st_.xi, rng_xi_);
  const auto& pr = model_.spec.priors;
  double delta = likelihood::log_prior_xi(pr, prop) - likelihood::log_prior_xi(pr, st_.xi);
  for (int i = 0; i < n_; ++i) {
    scratch_(i) = likelihood::incidence_loglik(model_.subjects[i], prop, st_.uncured[i]);
    delta += scratch_(i) - inc_[i];
  }
  const MhResult r = mh_decide(delta, rng_xi_);
  if (r.accepted) {
    st_.xi = prop;
    inc_ = scratch_.head(n_);
  }
  xi_block_.record(r.alpha, r.accepted, st_.xi, adapting);
}

void Chain::sweep(bool adapting) {
  for (int i = 0; i < n_; ++i) update_b(i, adapting);
  for (int c = 0; c < C_; ++c) {
    for (int k = 0; k < K_; ++k) {
      update_beta(c, k, adapting);
      update_beta_prob(c, k, adapting);
    }
  }
  for (int c = 0; c < C_; ++c) {
    for (int k = 0; k < K_; ++k) gibbs_sigma2(c, k);
  }
  for (int c = 0; c < C_; ++c) gibbs_D(c);
  for (int l = 0; l < Lc_; ++l) update_cause(l, adapting);
  for (int l = 0; l < Lc_; ++l) update_baseline(l, adapting);
  for (int l = 0; l < Lc_; ++l) gibbs_tau(l);
  for (int c = 0; c < C_; ++c) {
    for (int k = 0; k < K_; ++k) update_dispersion(c, k, adapting);
  }
  if (cure_) {
    update_classes(adapting);
    update_xi(adapting);
  }
}

ChainOutput Chain::run() {
  const auto start = std::chrono::steady_clock::now();
  if (K_ > 64 || Lc_ > 64) throw Error(ErrorKind::InvariantViolation, "at most 64 markers and causes are supported");
  initialize();
  build_blocks();

  ChainOutput out;
  out.chain_id = chain_;
  out.seed = cfg_.seed;
  out.names = parameter_names(model_, cfg_.monitor);
  const int burnin = cfg_.burnin_iterations();
  const int n_iter = cfg_.iterations;
  const int thin = cfg_.thin;
  const int window = cfg_.adapt_window;
  out.draws.resize(cfg_.retained(), static_cast<Eigen::Index>(out.names.size()));

  if (burnin == 0) out.scales_at_burnin = scales();
  bool history_reset = false;
  std::vector<double> row;
  Eigen::Index kept = 0;
  for (int it = 1; it <= n_iter; ++it) {
    const bool adapting = it <= burnin;
    sweep(adapting);
    if (adapting && it % window == 0) {
      each_block([](AdaptiveBlock& b) { b.refresh(); });
      if (!history_reset && it >= burnin / 2) {
        // Drop the transient from the covariance history.
        each_block([](AdaptiveBlock& b) { b.reset_history(); });
        history_reset = true;
      }
    }
    if (it % window == 0 || it == n_iter) {
      const double lp = likelihood::log_posterior(model_, st_);
      if (!std::isfinite(lp)) {
        throw Error(ErrorKind::ChainDiverged, "log posterior is not finite at iteration " + std::to_string(it));
      }
    }
    if (it == burnin) out.scales_at_burnin = scales();
    if (it > burnin && (it - burnin) % thin == 0) {
      parameter_values(model_, st_, cfg_.monitor, row);
      for (std::size_t j = 0; j < row.size(); ++j) out.draws(kept, static_cast<Eigen::Index>(j)) = row[j];
      ++kept;
      if (hooks_.on_retained) hooks_.on_retained(it, st_);
    }
  }
  out.scales_final = scales();

  auto rate = [](const AdaptiveBlock& b) { return b.acceptance_rate(); };
  if (!b_blocks_.empty() && model_.re_dim > 0) {
    double s = 0.0;
    for (const auto& b : b_blocks_) s += rate(b);
    out.acceptance["b"] = s / static_cast<double>(b_blocks_.size());
  }
  for (int c = 0; c < C_; ++c) {
    const std::string suffix = c == 0 ? "" : "_cured";
    for (int k = 0; k < K_; ++k) {
      const std::string kk = "[" + std::to_string(k + 1) + "]";
      if (beta_blocks_[c][k].dim() > 0) out.acceptance["beta" + suffix + kk] = rate(beta_blocks_[c][k]);
      if (beta_prob_blocks_[c][k].dim() > 0) out.acceptance["beta_prob" + suffix + kk] = rate(beta_prob_blocks_[c][k]);
      if (r_blocks_[c][k].dim() > 0) out.acceptance["r" + suffix + kk] = rate(r_blocks_[c][k]);
    }
  }
  for (int l = 0; l < Lc_; ++l) {
    const std::string ll = "[" + std::to_string(l + 1) + "]";
    if (cause_blocks_[l].dim() > 0) out.acceptance["alpha_gamma" + ll] = rate(cause_blocks_[l]);
    if (baseline_blocks_[l].dim() > 0) out.acceptance["baseline" + ll] = rate(baseline_blocks_[l]);
  }
  if (xi_block_.dim() > 0) out.acceptance["xi"] = rate(xi_block_);

  out.block_names = block_names();
  out.final_state = st_;
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace

ChainOutput run_chain(const PreparedModel& model, const McmcConfig& config, int chain_id, const ChainHooks& hooks) {
  config.validate();
  Chain chain(model, config, chain_id, hooks);
  return chain.run();
}

int resolve_threads(const McmcConfig& config) {
  int threads = config.threads;
  if (threads <= 0) {
    if (const char* env = std::getenv("JOINTFUSE_THREADS")) threads = std::atoi(env);
  }
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return std::clamp(threads, 1, config.chains);
}

std::vector<ChainOutput> run(const PreparedModel& model, const McmcConfig& config) {
  config.validate();
  std::vector<ChainOutput> outputs(config.chains);
  std::vector<std::string> failures(config.chains);
  std::vector<ErrorKind> kinds(config.chains, ErrorKind::ChainDiverged);
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int c = next++; c < config.chains; c = next++) {
      try {
        outputs[c] = run_chain(model, config, c);
      } catch (const Error& e) {
        failures[c] = e.what();
        kinds[c] = e.kind();
      } catch (const std::exception& e) {
        failures[c] = e.what();
      }
    }
  };
  const int threads = resolve_threads(config);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (int c = 0; c < config.chains; ++c) {
    if (!failures[c].empty()) throw Error(kinds[c], "chain " + std::to_string(c + 1) + ": " + failures[c]);
  }
  return outputs;
}

}  // namespace jointfuse::sampler
