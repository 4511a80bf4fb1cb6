#pragma once

#include "jointfuse/config.hpp"
#include "jointfuse/model.hpp"
#include "jointfuse/simulate.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <string>

namespace support {

using namespace jointfuse;

inline std::string source_path(const std::string& rel) { return std::string(JF_SOURCE_DIR) + "/" + rel; }

inline config::RunConfig load_config(const std::string& name) { return config::load(source_path("configs/" + name)); }

/// One Gaussian marker with a random intercept and slope, linked to a single cause.
inline ModelSpec gaussian_spec(AssociationKind assoc = AssociationKind::CurrentValue,
                               BaselineKind baseline = BaselineKind::Constant) {
  ModelSpec spec;
  MarkerSpec m;
  m.name = "y";
  m.fixed_design_columns = {"intercept", "time", "x1"};
  m.random_design_columns = {"intercept", "time"};
  m.association.kind = assoc;
  spec.markers.push_back(m);
  spec.event.baselines[0].kind = baseline;
  if (baseline == BaselineKind::PiecewiseConstant) spec.event.baselines[0].knots = {0.5, 1.0, 1.5};
  spec.event.covariate_columns = {"w1"};
  return spec;
}

inline MarkerSpec hurdle_marker(const std::string& name) {
  MarkerSpec m;
  m.name = name;
  m.family = MarkerFamily::HurdleNegBinomial;
  m.fixed_design_columns = {"intercept", "time"};
  m.random_design_columns = {"intercept"};
  m.hurdle_probability_design = DesignSpec{{"intercept", "x1"}, {"intercept"}};
  return m;
}

inline MarkerSpec binary_marker(const std::string& name) {
  MarkerSpec m;
  m.name = name;
  m.family = MarkerFamily::BernoulliLogit;
  m.fixed_design_columns = {"intercept", "time"};
  m.random_design_columns = {"intercept"};
  return m;
}

inline std::set<std::string> covariate_columns(const ModelSpec& spec) {
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

/// A moderate generating state for any supported spec.
inline ParamState truth_for(const ModelSpec& spec, double horizon = 2.0) {
  const PreparedModel layout = prepare_layout(spec, horizon);
  ParamState st = empty_state(layout, 0);
  auto fill = [&](LongitudinalParams& lp, double shift) {
    for (std::size_t k = 0; k < spec.markers.size(); ++k) {
      auto& mp = lp.markers[k];
      for (Eigen::Index j = 0; j < mp.beta.size(); ++j) mp.beta[j] = (j == 0 ? 0.5 : 0.2) + shift;
      for (Eigen::Index j = 0; j < mp.beta_prob.size(); ++j) mp.beta_prob[j] = j == 0 ? -0.5 : 0.3;
      mp.sigma2 = 0.5;
      mp.dispersion = 2.0;
    }
    lp.D = 0.25 * Eigen::MatrixXd::Identity(layout.re_dim, layout.re_dim);
    for (int j = 0; j + 1 < layout.re_dim; ++j) lp.D(j, j + 1) = lp.D(j + 1, j) = 0.05;
  };
  fill(st.longitudinal, 0.0);
  if (st.cured) fill(*st.cured, -0.5);
  for (std::size_t l = 0; l < st.causes.size(); ++l) {
    auto& c = st.causes[l];
    const auto& lay = layout.causes[l];
    for (Eigen::Index j = 0; j < c.alpha.size(); ++j) c.alpha[j] = (lay.has_intercept && j == 0) ? std::log(0.4) : 0.3;
    c.gamma.setConstant(0.2);
    c.baseline.shape = 1.3;
    if (c.baseline.heights.size()) c.baseline.heights.setConstant(0.4);
    c.baseline.spline_intercept = std::log(0.4);
    c.baseline.smoothing = 1.0;
  }
  for (Eigen::Index j = 0; j < st.xi.size(); ++j) st.xi[j] = j == 0 ? 0.5 : 0.3;
  return st;
}

inline simulate::SimScenario scenario_for(const ModelSpec& spec, std::size_t n, std::uint64_t seed) {
  simulate::SimScenario sc;
  sc.spec = spec;
  sc.truth = truth_for(spec);
  for (const auto& c : covariate_columns(spec)) {
    simulate::CovariateGenerator g;
    g.name = c;
    g.kind = simulate::CovariateGenerator::Kind::Normal;
    g.sd = 0.5;
    sc.covariates.push_back(g);
  }
  for (int j = 0; j <= 8; ++j) sc.grid.push_back(0.25 * j);
  sc.censoring_rate = 0.5;
  sc.administrative_cutoff = 2.0;
  sc.n_subjects = n;
  sc.seed = seed;
  return sc;
}

inline PreparedModel simulated_model(const ModelSpec& spec, std::size_t n, std::uint64_t seed) {
  return prepare(spec, simulate::simulate_dataset(scenario_for(spec, n, seed)));
}

/// A hand-built dataset: each subject has an id, time, status, baseline covariates and
/// observations of every marker at the listed times.
struct SubjectInput {
  double time = 1.0;
  int status = 0;
  std::map<std::string, double> covariates;
  std::vector<std::vector<std::pair<double, double>>> obs;  // per marker: (time, value)
};

inline Dataset hand_dataset(const ModelSpec& spec, const std::vector<SubjectInput>& subjects) {
  Dataset d;
  d.row_columns = {spec.time_column};
  for (const auto& m : spec.markers) {
    d.marker_names.push_back(m.name);
    d.row_columns.push_back(m.name);
  }
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const auto& in = subjects[i];
    SubjectRecord r;
    r.id = "s" + std::to_string(i + 1);
    r.event_time = in.time;
    r.status = in.status;
    r.baseline = in.covariates;
    r.markers.resize(spec.markers.size());
    for (std::size_t k = 0; k < spec.markers.size() && k < in.obs.size(); ++k) {
      for (const auto& [t, v] : in.obs[k]) {
        MarkerObservation o;
        o.time = t;
        o.value = v;
        o.row.assign(d.row_columns.size(), std::nan(""));
        o.row[0] = t;
        o.row[k + 1] = v;
        r.markers[k].push_back(o);
      }
    }
    d.subjects.push_back(r);
  }
  return d;
}

/// Composite Simpson rule with `panels` (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int panels = 20000) {
  const double h = (b - a) / panels;
  double s = f(a) + f(b);
  for (int j = 1; j < panels; ++j) s += (j % 2 ? 4.0 : 2.0) * f(a + j * h);
  return s * h / 3.0;
}

}  // namespace support

namespace support {

/// Standard error of the mean of a serially correlated series by non-overlapping batch means.
inline double batch_means_se(const Eigen::VectorXd& x, int batches = 50) {
  const Eigen::Index size = x.size() / batches;
  Eigen::VectorXd means(batches);
  for (int j = 0; j < batches; ++j) means[j] = x.segment(j * size, size).mean();
  const double m = means.mean();
  return std::sqrt((means.array() - m).square().sum() / (batches - 1) / batches);
}

inline int column(const std::vector<std::string>& names, const std::string& name) {
  for (std::size_t j = 0; j < names.size(); ++j) {
    if (names[j] == name) return static_cast<int>(j);
  }
  return -1;
}

/// Gaussian marker with fixed (intercept, x1), no random effects and no association: the
/// posterior of beta given sigma2 is normal.
inline ModelSpec normal_normal_spec() {
  ModelSpec spec;
  MarkerSpec m;
  m.name = "y";
  m.fixed_design_columns = {"intercept", "x1"};
  m.association.kind = AssociationKind::SharedRandomEffects;
  spec.markers.push_back(m);
  spec.priors.beta_mean = 0.3;
  spec.priors.beta_variance = 0.5;
  // Nearly degenerate prior holding sigma2 at 1.
  spec.priors.precision_shape = 1e8;
  spec.priors.precision_rate = 1e8;
  return spec;
}

inline Dataset normal_normal_data(const ModelSpec& spec, int n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> z;
  std::vector<SubjectInput> subjects;
  for (int i = 0; i < n; ++i) {
    SubjectInput s;
    s.time = 1.0 + 0.1 * i;
    s.status = i % 3 == 0;
    const double x1 = z(gen);
    s.covariates = {{"x1", x1}};
    std::vector<std::pair<double, double>> obs;
    for (double t : {0.0, 0.5}) obs.push_back({t, 1.0 - 0.7 * x1 + z(gen)});
    s.obs = {obs};
    subjects.push_back(s);
  }
  return hand_dataset(spec, subjects);
}

struct NormalPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Analytic posterior of beta for the normal-normal model at sigma2 = 1.
inline NormalPosterior normal_normal_posterior(const ModelSpec& spec, const Dataset& data) {
  Eigen::Matrix2d precision = Eigen::Matrix2d::Identity() / spec.priors.beta_variance;
  Eigen::Vector2d rhs = Eigen::Vector2d::Constant(spec.priors.beta_mean / spec.priors.beta_variance);
  for (const auto& s : data.subjects) {
    const Eigen::Vector2d x(1.0, s.baseline.at("x1"));
    for (const auto& o : s.markers[0]) {
      precision += x * x.transpose();
      rhs += x * o.value;
    }
  }
  NormalPosterior p;
  p.cov = precision.inverse();
  p.mean = p.cov * rhs;
  return p;
}

}  // namespace support
