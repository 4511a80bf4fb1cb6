#include "jointfuse/simulate.hpp"

#include "jointfuse/csv.hpp"
#include "jointfuse/error.hpp"
#include "jointfuse/hazard.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

namespace jointfuse::simulate {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kBrentMaxIterations = 200;
constexpr double kBrentTolerance = 1e-10;
constexpr double kMaxCount = 1e6;

double logistic(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

double brent(const std::function<double(double)>& f, double a, double b, double fa, double fb) {
  const double eps = std::numeric_limits<double>::epsilon();
  double c = a, fc = fa, d = b - a, e = d;
  for (int iter = 0; iter < kBrentMaxIterations; ++iter) {
    if ((fb > 0.0) == (fc > 0.0)) {
      c = a;
      fc = fa;
      d = e = b - a;
    }
    if (std::abs(fc) < std::abs(fb)) {
      a = b;
      b = c;
      c = a;
      fa = fb;
      fb = fc;
      fc = fa;
    }
    const double tol = 2.0 * eps * std::abs(b) + 0.5 * kBrentTolerance;
    const double xm = 0.5 * (c - b);
    if (std::abs(xm) <= tol || fb == 0.0) return b;
    if (std::abs(e) >= tol && std::abs(fa) > std::abs(fb)) {
      const double s = fb / fa;
      double p, q;
      if (a == c) {
        p = 2.0 * xm * s;
        q = 1.0 - s;
      } else {
        const double qq = fa / fc, r = fb / fc;
        p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
        q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
      }
      if (p > 0.0) q = -q;
      p = std::abs(p);
      if (2.0 * p < std::min(3.0 * xm * q - std::abs(tol * q), std::abs(e * q))) {
        e = d;
        d = p / q;
      } else {
        d = xm;
        e = d;
      }
    } else {
      d = xm;
      e = d;
    }
    a = b;
    fa = fb;
    b += std::abs(d) > tol ? d : std::copysign(tol, xm);
    fb = f(b);
    if (std::isnan(fb)) throw Error(ErrorKind::ConvergenceFailure, "cumulative hazard is NaN during root finding");
  }
  throw Error(ErrorKind::ConvergenceFailure, "Brent iteration limit reached");
}

double prob_logit(const PreparedMarker& pm, const MarkerParams& params, const MarkerLayout& lay, const Eigen::VectorXd& b,
                  double t) {
  double q = (pm.xp0 + t * pm.xpt).dot(params.beta_prob);
  const int off = lay.re_offset + lay.random_dim;
  for (int j = 0; j < lay.prob_random_dim; ++j) q += (pm.zp0[j] + t * pm.zpt[j]) * b[off + j];
  return q;
}

Eigen::VectorXd draw_mvn(const Eigen::MatrixXd& D, Rng& rng) {
  const auto p = D.rows();
  Eigen::VectorXd z(p);
  for (Eigen::Index j = 0; j < p; ++j) z[j] = rng.normal();
  if (p == 0) return z;
  Eigen::LLT<Eigen::MatrixXd> llt(D);
  if (llt.info() != Eigen::Success) throw Error(ErrorKind::NotPositiveDefinite, "random-effects covariance");
  return llt.matrixL() * z;
}

std::set<std::string> referenced_columns(const ModelSpec& spec) {
  std::set<std::string> cols;
  auto add = [&](const std::vector<std::string>& v) {
    for (const auto& c : v) {
      if (c != kInterceptColumn && c != spec.time_column) cols.insert(c);
    }
  };
  for (const auto& m : spec.markers) {
    add(m.fixed_design_columns);
    add(m.random_design_columns);
    if (m.hurdle_probability_design) {
      add(m.hurdle_probability_design->fixed);
      add(m.hurdle_probability_design->random);
    }
    if (m.offset_column) add({*m.offset_column});
  }
  add(spec.event.covariate_columns);
  add(spec.event.incidence_covariate_columns);
  return cols;
}

}  // namespace

void SimScenario::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::ConfigError, msg); };
  if (n_subjects < 1) fail("simulation.n_subjects must be >= 1");
  if (grid.empty()) fail("simulation.grid must not be empty");
  if (grid.front() != 0.0) fail("simulation.grid must start at 0");
  for (std::size_t j = 1; j < grid.size(); ++j) {
    if (!(grid[j] > grid[j - 1])) fail("simulation.grid must be strictly ascending");
  }
  if (!(administrative_cutoff >= 0.0) || !std::isfinite(administrative_cutoff)) {
    fail("simulation.censoring.administrative must be finite and >= 0");
  }
  if (!(censoring_rate >= 0.0) || !std::isfinite(censoring_rate)) fail("simulation.censoring.exponential_rate must be >= 0");
  if (t_max && !(*t_max > 0.0)) fail("simulation.t_max must be > 0");
  std::set<std::string> names;
  for (const auto& c : covariates) {
    if (!names.insert(c.name).second) fail("simulation.covariates: duplicate " + c.name);
    if (c.kind == CovariateGenerator::Kind::Bernoulli && !(c.p >= 0.0 && c.p <= 1.0)) {
      fail("simulation.covariates." + c.name + ".p must be in [0, 1]");
    }
    if (c.kind == CovariateGenerator::Kind::Normal && !(c.sd >= 0.0)) fail("simulation.covariates." + c.name + ".sd must be >= 0");
  }
  for (const auto& col : referenced_columns(spec)) {
    if (!names.count(col)) fail("simulation.covariates: no generator for column " + col);
  }
  for (const auto& m : spec.markers) {
    if (names.count(m.name) || m.name == spec.time_column) fail("simulation: marker name " + m.name + " clashes with a column");
  }
  const PreparedModel layout = prepare_layout(spec, std::max(administrative_cutoff, 1e-8));
  ParamState probe = truth;
  probe.b.resize(0, layout.re_dim);
  probe.uncured.clear();
  const std::string problem = check_state(layout, probe);
  if (!problem.empty()) fail("simulation.truth: " + problem);
}

Inversion invert_constant_baseline(double u, double A0, double A1, double lambda0) {
  if (!(u > 0.0 && u < 1.0)) throw Error(ErrorKind::DomainError, "u must lie in (0, 1)");
  if (!(lambda0 > 0.0)) throw Error(ErrorKind::DomainError, "lambda0 must be positive");
  const double c = -std::log(u) / (lambda0 * std::exp(A0));
  if (A1 == 0.0) return {c, false};
  const double arg = A1 * c;
  if (arg <= -1.0) return {kInf, true};
  const double t = std::log1p(arg) / A1;
  if (!std::isfinite(t)) return {kInf, true};
  return {t, false};
}

Inversion invert_by_root_finding(double u, const std::function<double(double)>& cumulative_hazard, double t_max) {
  if (!(u > 0.0 && u < 1.0)) throw Error(ErrorKind::DomainError, "u must lie in (0, 1)");
  if (!(t_max > 0.0)) throw Error(ErrorKind::DomainError, "t_max must be positive");
  const double target = -std::log(u);
  auto f = [&](double t) { return cumulative_hazard(t) - target; };
  double lo = 0.0, flo = -target;
  double hi = std::min(1.0, t_max);
  double fhi = f(hi);
  while (fhi < 0.0) {
    if (hi >= t_max) return {t_max, true};
    lo = hi;
    flo = fhi;
    hi = std::min(2.0 * hi, t_max);
    fhi = f(hi);
  }
  if (std::isnan(fhi)) throw Error(ErrorKind::ConvergenceFailure, "cumulative hazard is NaN");
  if (fhi == 0.0) return {hi, false};
  return {brent(f, lo, hi, flo, fhi), false};
}

double draw_truncated_negbin(double eta, double r, Rng& rng) {
  if (!(eta > 0.0) || !(r > 0.0)) throw Error(ErrorKind::DomainError, "negative binomial needs eta > 0 and r > 0");
  const double log_q = std::log(eta / (r + eta));
  const double log_p0 = r * std::log(r / (r + eta));
  // Work with probabilities relative to P(y = 1) so that tiny P(0) does not matter.
  const double log_p1 = log_p0 + std::log(r) + log_q;
  const double log_tail = std::log(-std::expm1(log_p0));  // log P(y > 0)
  const double target = rng.uniform() * std::exp(log_tail - log_p1);
  double rel = 1.0, cum = 0.0;
  for (double y = 1.0; y <= kMaxCount; y += 1.0) {
    cum += rel;
    if (cum >= target) return y;
    rel *= (y + r) / (y + 1.0) * std::exp(log_q);
  }
  throw Error(ErrorKind::DomainError, "truncated negative binomial draw exceeded 1e6");
}

Eigen::MatrixXd simulate_longitudinal(const SimScenario& scenario, const PreparedModel& layout,
                                      const PreparedSubject& subject, const std::map<std::string, double>& covariates,
                                      const LongitudinalParams& params, const Eigen::VectorXd& b, Rng& rng) {
  const auto& spec = scenario.spec;
  const int K = static_cast<int>(spec.markers.size());
  Eigen::MatrixXd out(static_cast<Eigen::Index>(scenario.grid.size()), K);
  for (std::size_t g = 0; g < scenario.grid.size(); ++g) {
    const double t = scenario.grid[g];
    for (int k = 0; k < K; ++k) {
      const auto& m = spec.markers[k];
      const auto& lay = layout.markers[k];
      const auto& pm = subject.markers[k];
      const auto& mp = params.markers[k];
      const auto mu = hazard::marker_predictor(pm, mp, lay, b);
      const double offset = m.offset_column ? covariates.at(*m.offset_column) : 0.0;
      const double eta = mu.m0 + mu.m1 * t + offset;
      double y = 0.0;
      switch (m.family) {
        case MarkerFamily::Gaussian:
          y = eta + std::sqrt(mp.sigma2) * rng.normal();
          break;
        case MarkerFamily::BernoulliLogit:
          y = rng.bernoulli(logistic(eta)) ? 1.0 : 0.0;
          break;
        case MarkerFamily::HurdleNegBinomial: {
          const double pi = logistic(prob_logit(pm, mp, lay, b, t));
          y = rng.uniform() < pi ? 0.0 : draw_truncated_negbin(std::exp(eta), mp.dispersion, rng);
          break;
        }
      }
      out(static_cast<Eigen::Index>(g), k) = y;
    }
  }
  return out;
}

SimulatedData simulate_subjects(const SimScenario& scenario) {
  scenario.validate();
  const ModelSpec& spec = scenario.spec;
  const PreparedModel layout = prepare_layout(spec, std::max(scenario.administrative_cutoff, 1e-8));
  const bool cure = layout.is_cure();
  const int L = static_cast<int>(layout.causes.size());
  const double t_max = scenario.root_finding_limit();

  SimulatedData out;
  for (const auto& c : scenario.covariates) out.covariate_names.push_back(c.name);
  out.truth = scenario.truth;
  out.truth.b.resize(static_cast<Eigen::Index>(scenario.n_subjects), layout.re_dim);
  out.truth.uncured.assign(scenario.n_subjects, 1);

  for (std::size_t i = 0; i < scenario.n_subjects; ++i) {
    Rng rng = Rng::stream(scenario.seed, i, 0);
    SimulatedSubject sim;
    sim.id = std::to_string(i + 1);
    for (const auto& c : scenario.covariates) {
      sim.covariates[c.name] = c.kind == CovariateGenerator::Kind::Bernoulli ? (rng.bernoulli(c.p) ? 1.0 : 0.0)
                                                                             : c.mean + c.sd * rng.normal();
    }
    SubjectRecord rec;
    rec.id = sim.id;
    rec.baseline = sim.covariates;
    rec.markers.resize(spec.markers.size());
    const PreparedSubject ps = prepare_subject(layout, rec, {});

    if (cure) sim.uncured = rng.bernoulli(logistic(ps.w_incidence.dot(scenario.truth.xi))) ? 1 : 0;
    const LongitudinalParams& lon = scenario.truth.longitudinal_for(sim.uncured);
    sim.b = draw_mvn(lon.D, rng);

    double t_event = kInf;
    int cause = 0;
    if (sim.uncured == 1) {
      for (int l = 0; l < L; ++l) {
        const CauseParams& cp = scenario.truth.causes[l];
        const hazard::Baseline view = hazard::baseline_view(layout, l, cp);
        const hazard::Exponent e = hazard::exponent_for(layout, ps, l, cp, scenario.truth.longitudinal, sim.b);
        const double u = rng.uniform();
        Inversion inv;
        if (view.spec->kind == BaselineKind::Constant && e.A2 == 0.0) {
          inv = invert_constant_baseline(u, e.A0, e.A1, std::exp(view.log_scale));
        } else {
          inv = invert_by_root_finding(
              u, [&](double t) { return hazard::cumulative_hazard_at(view, e, t, layout.rule); }, t_max);
        }
        if (!inv.censored && inv.time < t_event) {
          t_event = inv.time;
          cause = l + 1;
        }
      }
    }
    double c_time = scenario.administrative_cutoff;
    if (scenario.censoring_rate > 0.0) c_time = std::min(c_time, -std::log(rng.uniform()) / scenario.censoring_rate);
    if (t_event <= c_time) {
      sim.time = t_event;
      sim.status = cause;
    } else {
      sim.time = c_time;
      sim.status = 0;
    }

    const Eigen::MatrixXd values = simulate_longitudinal(scenario, layout, ps, sim.covariates, lon, sim.b, rng);
    std::vector<Eigen::Index> keep;
    for (std::size_t g = 0; g < scenario.grid.size(); ++g) {
      if (scenario.grid[g] <= sim.time) keep.push_back(static_cast<Eigen::Index>(g));
    }
    sim.values.resize(static_cast<Eigen::Index>(keep.size()), values.cols());
    for (std::size_t j = 0; j < keep.size(); ++j) {
      sim.times.push_back(scenario.grid[keep[j]]);
      sim.values.row(static_cast<Eigen::Index>(j)) = values.row(keep[j]);
    }
    out.truth.b.row(static_cast<Eigen::Index>(i)) = sim.b.transpose();
    out.truth.uncured[i] = sim.uncured;
    out.subjects.push_back(std::move(sim));
  }
  return out;
}

Dataset to_dataset(const SimScenario& scenario, const SimulatedData& data) {
  const ModelSpec& spec = scenario.spec;
  Dataset ds;
  for (const auto& m : spec.markers) ds.marker_names.push_back(m.name);
  ds.row_columns.push_back(spec.time_column);
  for (const auto& m : spec.markers) ds.row_columns.push_back(m.name);
  for (const auto& c : data.covariate_names) ds.row_columns.push_back(c);
  const std::size_t K = spec.markers.size();
  for (const auto& sim : data.subjects) {
    SubjectRecord rec;
    rec.id = sim.id;
    rec.event_time = sim.time;
    rec.status = sim.status;
    rec.baseline = sim.covariates;
    rec.markers.resize(K);
    for (std::size_t j = 0; j < sim.times.size(); ++j) {
      std::vector<double> row;
      row.push_back(sim.times[j]);
      for (std::size_t k = 0; k < K; ++k) row.push_back(sim.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)));
      for (const auto& c : data.covariate_names) row.push_back(sim.covariates.at(c));
      for (std::size_t k = 0; k < K; ++k) {
        rec.markers[k].push_back(MarkerObservation{sim.times[j], row[1 + k], row});
      }
    }
    ds.subjects.push_back(std::move(rec));
  }
  return ds;
}

Dataset simulate_dataset(const SimScenario& scenario) { return to_dataset(scenario, simulate_subjects(scenario)); }

void write_csv(const SimScenario& scenario, const SimulatedData& data, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const ModelSpec& spec = scenario.spec;
  std::ofstream lg(dir + "/long.csv", std::ios::binary);
  std::ofstream sv(dir + "/surv.csv", std::ios::binary);
  if (!lg || !sv) throw Error(ErrorKind::DataError, "cannot write data files in " + dir);
  lg << "id," << spec.time_column;
  for (const auto& m : spec.markers) lg << ',' << m.name;
  for (const auto& c : data.covariate_names) lg << ',' << c;
  lg << '\n';
  sv << "id,time,status";
  for (const auto& c : data.covariate_names) sv << ',' << c;
  sv << '\n';
  for (const auto& sim : data.subjects) {
    for (std::size_t j = 0; j < sim.times.size(); ++j) {
      lg << sim.id << ',' << csv::format_double(sim.times[j]);
      for (Eigen::Index k = 0; k < sim.values.cols(); ++k) {
        lg << ',' << csv::format_double(sim.values(static_cast<Eigen::Index>(j), k));
      }
      for (const auto& c : data.covariate_names) lg << ',' << csv::format_double(sim.covariates.at(c));
      lg << '\n';
    }
    sv << sim.id << ',' << csv::format_double(sim.time) << ',' << sim.status;
    for (const auto& c : data.covariate_names) sv << ',' << csv::format_double(sim.covariates.at(c));
    sv << '\n';
  }
}

}  // namespace jointfuse::simulate
