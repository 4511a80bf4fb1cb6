#include "jointfuse/config.hpp"

#include "jointfuse/error.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace jointfuse::config {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw Error(ErrorKind::ConfigError, path + ": " + msg);
}

/// A JSON object together with its dotted path, for error messages.
class Node {
 public:
  Node(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string child_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  const Json& raw(const std::string& key) const {
    if (!has(key)) fail(child_path(key), "is required");
    return j_.at(key);
  }
  Node object(const std::string& key) const { return Node(raw(key), child_path(key)); }

  void allow(std::initializer_list<const char*> keys) const {
    std::set<std::string> ok(keys.begin(), keys.end());
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!ok.count(it.key())) fail(child_path(it.key()), "unknown key");
    }
  }

  double number(const std::string& key, double fallback) const { return has(key) ? number(key) : fallback; }
  double number(const std::string& key) const {
    const Json& v = raw(key);
    if (!v.is_number()) fail(child_path(key), "expected a number");
    return v.get<double>();
  }
  int integer(const std::string& key, int fallback) const { return has(key) ? integer(key) : fallback; }
  int integer(const std::string& key) const {
    const Json& v = raw(key);
    if (!v.is_number_integer()) fail(child_path(key), "expected an integer");
    return v.get<int>();
  }
  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const Json& v = raw(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
      fail(child_path(key), "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }
  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const Json& v = raw(key);
    if (!v.is_boolean()) fail(child_path(key), "expected true or false");
    return v.get<bool>();
  }
  std::string string(const std::string& key, const std::string& fallback) const { return has(key) ? string(key) : fallback; }
  std::string string(const std::string& key) const {
    const Json& v = raw(key);
    if (!v.is_string()) fail(child_path(key), "expected a string");
    return v.get<std::string>();
  }
  std::vector<std::string> strings(const std::string& key) const {
    if (!has(key)) return {};
    const Json& v = raw(key);
    if (!v.is_array()) fail(child_path(key), "expected an array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) fail(child_path(key), "expected an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }
  std::vector<double> numbers(const std::string& key) const {
    if (!has(key)) return {};
    return to_numbers(raw(key), child_path(key));
  }

  static std::vector<double> to_numbers(const Json& v, const std::string& path) {
    if (!v.is_array()) fail(path, "expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) fail(path, "expected an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  const Json& json() const { return j_; }
  const std::string& path() const { return path_; }

 private:
  const Json& j_;
  std::string path_;
};

template <typename F>
auto parse_name(const std::string& path, F&& f, const std::string& value) {
  try {
    return f(value);
  } catch (const Error& e) {
    fail(path, "unrecognized value '" + value + "'");
  }
}

Eigen::VectorXd vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Json vec_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index j = 0; j < v.size(); ++j) a.push_back(v[j]);
  return a;
}

template <typename M>
Json mat_json(const M& m) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    a.push_back(row);
  }
  return a;
}

Eigen::MatrixXd json_mat(const Json& v, const std::string& path) {
  if (!v.is_array()) fail(path, "expected an array of rows");
  const auto rows = static_cast<Eigen::Index>(v.size());
  Eigen::Index cols = -1;
  Eigen::MatrixXd m;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto row = Node::to_numbers(v.at(static_cast<std::size_t>(i)), path);
    if (cols < 0) {
      cols = static_cast<Eigen::Index>(row.size());
      m.resize(rows, cols);
    }
    if (static_cast<Eigen::Index>(row.size()) != cols) fail(path, "rows have different lengths");
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = row[static_cast<std::size_t>(j)];
  }
  return m;
}

MarkerSpec parse_marker(const Node& n) {
  n.allow({"name", "family", "fixed", "random", "offset", "hurdle_probability", "association"});
  MarkerSpec m;
  m.name = n.string("name");
  m.family = parse_name(n.child_path("family"), parse_family, n.string("family", "gaussian"));
  m.fixed_design_columns = n.strings("fixed");
  m.random_design_columns = n.strings("random");
  if (n.has("offset")) m.offset_column = n.string("offset");
  if (n.has("hurdle_probability")) {
    const Node h = n.object("hurdle_probability");
    h.allow({"fixed", "random"});
    m.hurdle_probability_design = DesignSpec{h.strings("fixed"), h.strings("random")};
  }
  m.association.kind = parse_name(n.child_path("association"), parse_association, n.string("association", "current_value"));
  return m;
}

BaselineHazardSpec parse_baseline_spec(const Node& n) {
  n.allow({"kind", "knots", "degree", "interior_knots", "penalty_order"});
  BaselineHazardSpec b;
  b.kind = parse_name(n.child_path("kind"), parse_baseline, n.string("kind", "constant"));
  b.knots = n.numbers("knots");
  b.degree = n.integer("degree", b.degree);
  b.interior_knot_count = n.integer("interior_knots", b.interior_knot_count);
  b.penalty_order = n.integer("penalty_order", b.penalty_order);
  return b;
}

PriorSet parse_priors(const Node& n) {
  n.allow({"beta_mean", "beta_variance", "precision_shape", "precision_rate", "wishart_scale", "wishart_dof",
           "alpha_mean", "alpha_variance", "gamma_mean", "gamma_variance", "shape_a", "shape_b", "height_a",
           "height_b", "smoothing_a", "smoothing_b", "spline_ridge_precision", "dispersion_a", "dispersion_b",
           "xi_mean", "xi_variance"});
  PriorSet p;
  p.beta_mean = n.number("beta_mean", p.beta_mean);
  p.beta_variance = n.number("beta_variance", p.beta_variance);
  p.precision_shape = n.number("precision_shape", p.precision_shape);
  p.precision_rate = n.number("precision_rate", p.precision_rate);
  p.wishart_scale = n.number("wishart_scale", p.wishart_scale);
  if (n.has("wishart_dof")) p.wishart_dof = n.number("wishart_dof");
  p.alpha_mean = n.number("alpha_mean", p.alpha_mean);
  p.alpha_variance = n.number("alpha_variance", p.alpha_variance);
  p.gamma_mean = n.number("gamma_mean", p.gamma_mean);
  p.gamma_variance = n.number("gamma_variance", p.gamma_variance);
  p.shape_a = n.number("shape_a", p.shape_a);
  p.shape_b = n.number("shape_b", p.shape_b);
  p.height_a = n.number("height_a", p.height_a);
  p.height_b = n.number("height_b", p.height_b);
  p.smoothing_a = n.number("smoothing_a", p.smoothing_a);
  p.smoothing_b = n.number("smoothing_b", p.smoothing_b);
  p.spline_ridge_precision = n.number("spline_ridge_precision", p.spline_ridge_precision);
  p.dispersion_a = n.number("dispersion_a", p.dispersion_a);
  p.dispersion_b = n.number("dispersion_b", p.dispersion_b);
  p.xi_mean = n.number("xi_mean", p.xi_mean);
  p.xi_variance = n.number("xi_variance", p.xi_variance);
  auto positive = [&](const char* key, double v) {
    if (!(v > 0.0) || !std::isfinite(v)) fail(n.child_path(key), "must be positive");
  };
  positive("beta_variance", p.beta_variance);
  positive("precision_shape", p.precision_shape);
  positive("precision_rate", p.precision_rate);
  positive("wishart_scale", p.wishart_scale);
  positive("alpha_variance", p.alpha_variance);
  positive("gamma_variance", p.gamma_variance);
  positive("shape_a", p.shape_a);
  positive("shape_b", p.shape_b);
  positive("height_a", p.height_a);
  positive("height_b", p.height_b);
  positive("smoothing_a", p.smoothing_a);
  positive("smoothing_b", p.smoothing_b);
  positive("dispersion_a", p.dispersion_a);
  positive("dispersion_b", p.dispersion_b);
  positive("xi_variance", p.xi_variance);
  if (p.spline_ridge_precision < 0.0) fail(n.child_path("spline_ridge_precision"), "must be >= 0");
  return p;
}

simulate::SimScenario parse_simulation(const Node& n, const ModelSpec& spec) {
  n.allow({"n_subjects", "seed", "grid", "covariates", "censoring", "truth", "t_max"});
  simulate::SimScenario s;
  s.spec = spec;
  const int count = n.integer("n_subjects", static_cast<int>(s.n_subjects));
  if (count < 1) fail(n.child_path("n_subjects"), "must be >= 1");
  s.n_subjects = static_cast<std::size_t>(count);
  s.seed = n.unsigned_integer("seed", s.seed);
  const std::string grid_path = n.child_path("grid");
  const Json& grid = n.raw("grid");
  if (grid.is_object()) {
    const Node g(grid, grid_path);
    g.allow({"from", "to", "by"});
    const double from = g.number("from", 0.0), to = g.number("to"), by = g.number("by");
    if (!(by > 0.0)) fail(g.child_path("by"), "must be positive");
    const auto steps = static_cast<long>(std::floor((to - from) / by + 1e-9));
    if (steps < 0) fail(grid_path, "must be ascending");
    for (long j = 0; j <= steps; ++j) s.grid.push_back(from + static_cast<double>(j) * by);
  } else {
    s.grid = Node::to_numbers(grid, grid_path);
  }
  if (s.grid.empty()) fail(grid_path, "must not be empty");
  if (s.grid.front() != 0.0) fail(grid_path, "must start at 0");
  for (std::size_t j = 1; j < s.grid.size(); ++j) {
    if (!(s.grid[j] > s.grid[j - 1])) fail(grid_path, "must be strictly ascending");
  }
  if (n.has("covariates")) {
    const Json& arr = n.raw("covariates");
    if (!arr.is_array()) fail(n.child_path("covariates"), "expected an array");
    for (std::size_t j = 0; j < arr.size(); ++j) {
      const Node c(arr[j], n.child_path("covariates") + "[" + std::to_string(j) + "]");
      c.allow({"name", "dist", "p", "mean", "sd"});
      simulate::CovariateGenerator g;
      g.name = c.string("name");
      const std::string dist = c.string("dist", "normal");
      if (dist == "bernoulli") {
        g.kind = simulate::CovariateGenerator::Kind::Bernoulli;
      } else if (dist == "normal") {
        g.kind = simulate::CovariateGenerator::Kind::Normal;
      } else {
        fail(c.child_path("dist"), "expected bernoulli or normal");
      }
      g.p = c.number("p", g.p);
      g.mean = c.number("mean", g.mean);
      g.sd = c.number("sd", g.sd);
      s.covariates.push_back(g);
    }
  }
  if (n.has("censoring")) {
    const Node c = n.object("censoring");
    c.allow({"exponential_rate", "administrative"});
    s.censoring_rate = c.number("exponential_rate", 0.0);
    s.administrative_cutoff = c.number("administrative", s.administrative_cutoff);
    if (!(s.censoring_rate >= 0.0)) fail(c.child_path("exponential_rate"), "must be >= 0");
    if (!(s.administrative_cutoff >= 0.0)) fail(c.child_path("administrative"), "must be >= 0");
  }
  if (n.has("t_max")) s.t_max = n.number("t_max");
  try {
    s.truth = state_from_json(n.raw("truth"));
  } catch (const Error& e) {
    fail(n.child_path("truth"), e.what());
  }
  return s;
}

}  // namespace

ModelSpec parse_model(const Json& root) {
  const Node n(root, "");
  ModelSpec spec;
  spec.time_column = n.string("time_column", spec.time_column);
  spec.block_diagonal_re = n.boolean("block_diagonal_re", spec.block_diagonal_re);
  const Json& markers = n.raw("markers");
  if (!markers.is_array()) fail("markers", "expected an array");
  for (std::size_t k = 0; k < markers.size(); ++k) {
    spec.markers.push_back(parse_marker(Node(markers[k], "markers[" + std::to_string(k) + "]")));
  }
  if (n.has("event")) {
    const Node e = n.object("event");
    e.allow({"structure", "n_causes", "baselines", "covariates", "incidence_covariates", "zero_tail"});
    spec.event.structure = parse_name(e.child_path("structure"), parse_structure, e.string("structure", "single"));
    spec.event.n_causes = e.integer("n_causes", 1);
    spec.event.baselines.clear();
    if (e.has("baselines")) {
      const Json& arr = e.raw("baselines");
      if (!arr.is_array()) fail(e.child_path("baselines"), "expected an array");
      for (std::size_t l = 0; l < arr.size(); ++l) {
        spec.event.baselines.push_back(parse_baseline_spec(Node(arr[l], e.child_path("baselines") + "[" + std::to_string(l) + "]")));
      }
    } else {
      spec.event.baselines.assign(static_cast<std::size_t>(std::max(spec.event.n_causes, 1)), BaselineHazardSpec{});
    }
    spec.event.covariate_columns = e.strings("covariates");
    spec.event.incidence_covariate_columns = e.strings("incidence_covariates");
    spec.event.zero_tail_constraint = e.boolean("zero_tail", spec.event.zero_tail_constraint);
  }
  if (n.has("priors")) spec.priors = parse_priors(n.object("priors"));
  if (n.has("quadrature")) {
    const Node q = n.object("quadrature");
    q.allow({"rule", "points"});
    const std::string rule = q.string("rule", "kronrod15");
    if (rule == "kronrod15") {
      spec.quadrature.rule = quadrature::RuleKind::Kronrod15;
      spec.quadrature.points = 15;
      if (q.has("points") && q.integer("points") != 15) fail(q.child_path("points"), "kronrod15 has 15 points");
    } else if (rule == "legendre") {
      spec.quadrature.rule = quadrature::RuleKind::Legendre;
      spec.quadrature.points = q.integer("points", 15);
      if (spec.quadrature.points < 2 || spec.quadrature.points > 64) fail(q.child_path("points"), "must be in [2, 64]");
    } else {
      fail(q.child_path("rule"), "expected kronrod15 or legendre");
    }
  }
  return spec;
}

sampler::McmcConfig parse_mcmc(const Json& node) {
  const Node n(node, "mcmc");
  n.allow({"chains", "iterations", "burnin", "thin", "seed", "adapt_window", "target_scalar", "target_vector",
           "monitor", "threads"});
  sampler::McmcConfig c;
  c.chains = n.integer("chains", c.chains);
  c.iterations = n.integer("iterations", c.iterations);
  if (n.has("burnin")) c.burnin = n.integer("burnin");
  c.thin = n.integer("thin", c.thin);
  c.seed = n.unsigned_integer("seed", c.seed);
  c.adapt_window = n.integer("adapt_window", c.adapt_window);
  c.target_scalar = n.number("target_scalar", c.target_scalar);
  c.target_vector = n.number("target_vector", c.target_vector);
  if (n.has("monitor")) c.monitor = n.strings("monitor");
  c.threads = n.integer("threads", c.threads);
  try {
    c.validate();
  } catch (const Error& e) {
    fail("mcmc", e.what());
  }
  return c;
}

RunConfig parse(const Json& root) {
  const Node n(root, "");
  n.allow({"time_column", "block_diagonal_re", "markers", "event", "priors", "quadrature", "mcmc", "diagnostics",
           "simulation"});
  RunConfig rc;
  rc.spec = parse_model(root);
  if (n.has("mcmc")) rc.mcmc = parse_mcmc(n.raw("mcmc"));
  if (n.has("diagnostics")) {
    const Node d = n.object("diagnostics");
    d.allow({"rhat_threshold", "split_rhat"});
    rc.rhat_threshold = d.number("rhat_threshold", rc.rhat_threshold);
    rc.split_rhat = d.boolean("split_rhat", rc.split_rhat);
    if (!(rc.rhat_threshold >= 1.0)) fail(d.child_path("rhat_threshold"), "must be >= 1");
  }
  // Spec-level problems surface as config errors before any data is read.
  try {
    prepare_layout(rc.spec);
  } catch (const Error& e) {
    fail("model", e.what());
  }
  if (n.has("simulation")) rc.simulation = parse_simulation(n.object("simulation"), rc.spec);
  return rc;
}

RunConfig load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ConfigError, "cannot open " + path);
  Json root;
  try {
    root = Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::ConfigError, path + ": " + e.what());
  }
  return parse(root);
}

namespace {

Json longitudinal_json(const LongitudinalParams& lp) {
  Json markers = Json::array();
  for (const auto& mp : lp.markers) {
    markers.push_back(Json{{"beta", vec_json(mp.beta)},
                           {"sigma2", mp.sigma2},
                           {"beta_prob", vec_json(mp.beta_prob)},
                           {"dispersion", mp.dispersion}});
  }
  return Json{{"markers", markers}, {"D", mat_json(lp.D)}};
}

LongitudinalParams longitudinal_from(const Node& n) {
  n.allow({"markers", "D"});
  LongitudinalParams lp;
  const Json& arr = n.raw("markers");
  if (!arr.is_array()) fail(n.child_path("markers"), "expected an array");
  for (std::size_t k = 0; k < arr.size(); ++k) {
    const Node m(arr[k], n.child_path("markers") + "[" + std::to_string(k) + "]");
    m.allow({"beta", "sigma2", "beta_prob", "dispersion"});
    MarkerParams mp;
    mp.beta = vec(m.numbers("beta"));
    mp.sigma2 = m.number("sigma2", mp.sigma2);
    mp.beta_prob = vec(m.numbers("beta_prob"));
    mp.dispersion = m.number("dispersion", mp.dispersion);
    lp.markers.push_back(mp);
  }
  lp.D = n.has("D") ? json_mat(n.raw("D"), n.child_path("D")) : Eigen::MatrixXd();
  return lp;
}

}  // namespace

Json state_to_json(const ParamState& st) {
  Json j;
  j["longitudinal"] = longitudinal_json(st.longitudinal);
  if (st.cured) j["cured"] = longitudinal_json(*st.cured);
  Json causes = Json::array();
  for (const auto& cp : st.causes) {
    causes.push_back(Json{{"alpha", vec_json(cp.alpha)},
                          {"gamma", vec_json(cp.gamma)},
                          {"baseline",
                           Json{{"shape", cp.baseline.shape},
                                {"heights", vec_json(cp.baseline.heights)},
                                {"spline_intercept", cp.baseline.spline_intercept},
                                {"spline_coef", vec_json(cp.baseline.spline_coef)},
                                {"smoothing", cp.baseline.smoothing}}}});
  }
  j["causes"] = causes;
  j["xi"] = vec_json(st.xi);
  if (st.b.rows() > 0) j["b"] = mat_json(st.b);
  if (!st.uncured.empty()) j["uncured"] = st.uncured;
  return j;
}

ParamState state_from_json(const Json& node) {
  const Node n(node, "state");
  n.allow({"longitudinal", "cured", "causes", "xi", "b", "uncured"});
  ParamState st;
  st.longitudinal = longitudinal_from(n.object("longitudinal"));
  if (n.has("cured")) st.cured = longitudinal_from(n.object("cured"));
  if (n.has("causes")) {
    const Json& arr = n.raw("causes");
    if (!arr.is_array()) fail(n.child_path("causes"), "expected an array");
    for (std::size_t l = 0; l < arr.size(); ++l) {
      const Node c(arr[l], n.child_path("causes") + "[" + std::to_string(l) + "]");
      c.allow({"alpha", "gamma", "baseline"});
      CauseParams cp;
      cp.alpha = vec(c.numbers("alpha"));
      cp.gamma = vec(c.numbers("gamma"));
      if (c.has("baseline")) {
        const Node b = c.object("baseline");
        b.allow({"shape", "heights", "spline_intercept", "spline_coef", "smoothing"});
        cp.baseline.shape = b.number("shape", cp.baseline.shape);
        cp.baseline.heights = vec(b.numbers("heights"));
        cp.baseline.spline_intercept = b.number("spline_intercept", cp.baseline.spline_intercept);
        cp.baseline.spline_coef = vec(b.numbers("spline_coef"));
        cp.baseline.smoothing = b.number("smoothing", cp.baseline.smoothing);
      }
      st.causes.push_back(cp);
    }
  }
  st.xi = vec(n.numbers("xi"));
  if (n.has("b")) {
    const Eigen::MatrixXd b = json_mat(n.raw("b"), n.child_path("b"));
    st.b = b;
  }
  if (n.has("uncured")) {
    const Json& u = n.raw("uncured");
    if (!u.is_array()) fail(n.child_path("uncured"), "expected an array of 0/1");
    for (const auto& e : u) {
      if (!e.is_number_integer() || (e.get<int>() != 0 && e.get<int>() != 1)) {
        fail(n.child_path("uncured"), "expected an array of 0/1");
      }
      st.uncured.push_back(e.get<int>());
    }
  }
  return st;
}

}  // namespace jointfuse::config
