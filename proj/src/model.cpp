#include "jointfuse/model.hpp"

#include "jointfuse/csv.hpp"
#include "jointfuse/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

namespace jointfuse {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::InvariantViolation: return "InvariantViolation";
    case ErrorKind::SingularDesign: return "SingularDesign";
    case ErrorKind::UnsupportedOrder: return "UnsupportedOrder";
    case ErrorKind::EmptyInterval: return "EmptyInterval";
    case ErrorKind::NonFiniteIntegrand: return "NonFiniteIntegrand";
    case ErrorKind::NonPositiveTime: return "NonPositiveTime";
    case ErrorKind::UnsupportedDesign: return "UnsupportedDesign";
    case ErrorKind::NonPositiveVariance: return "NonPositiveVariance";
    case ErrorKind::NonBinaryValue: return "NonBinaryValue";
    case ErrorKind::DomainError: return "DomainError";
    case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorKind::NonFiniteLogPosterior: return "NonFiniteLogPosterior";
    case ErrorKind::ChainDiverged: return "ChainDiverged";
    case ErrorKind::FactorizationFailure: return "FactorizationFailure";
    case ErrorKind::ConvergenceFailure: return "ConvergenceFailure";
    case ErrorKind::DegenerateChains: return "DegenerateChains";
    case ErrorKind::UnknownParameter: return "UnknownParameter";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::DataError: return "DataError";
  }
  return "Error";
}

// ---------------------------------------------------------------------------
// enum names

std::string to_string(MarkerFamily f) {
  switch (f) {
    case MarkerFamily::Gaussian: return "gaussian";
    case MarkerFamily::BernoulliLogit: return "bernoulli";
    case MarkerFamily::HurdleNegBinomial: return "hurdle_negbin";
  }
  return "?";
}

std::string to_string(AssociationKind k) {
  switch (k) {
    case AssociationKind::CurrentValue: return "current_value";
    case AssociationKind::CurrentSlope: return "current_slope";
    case AssociationKind::CumulativeEffect: return "cumulative";
    case AssociationKind::SharedRandomEffects: return "shared_random_effects";
    case AssociationKind::CurrentValuePlusSlope: return "current_value_slope";
  }
  return "?";
}

std::string to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::Constant: return "constant";
    case BaselineKind::Weibull: return "weibull";
    case BaselineKind::PiecewiseConstant: return "piecewise";
    case BaselineKind::BSpline: return "bspline";
  }
  return "?";
}

std::string to_string(EventStructure s) {
  switch (s) {
    case EventStructure::SingleEvent: return "single";
    case EventStructure::CompetingRisks: return "competing_risks";
    case EventStructure::MixtureCure: return "mixture_cure";
  }
  return "?";
}

namespace {

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<E> values, const char* what) {
  for (E v : values) {
    if (to_string(v) == s) return v;
  }
  std::string msg = std::string("unknown ") + what + " '" + s + "' (expected one of:";
  for (E v : values) msg += " " + to_string(v);
  throw Error(ErrorKind::ConfigError, msg + ")");
}

}  // namespace

MarkerFamily parse_family(const std::string& s) {
  return parse_enum(s, {MarkerFamily::Gaussian, MarkerFamily::BernoulliLogit,
                        MarkerFamily::HurdleNegBinomial},
                    "marker family");
}

AssociationKind parse_association(const std::string& s) {
  return parse_enum(s, {AssociationKind::CurrentValue, AssociationKind::CurrentSlope,
                        AssociationKind::CumulativeEffect, AssociationKind::SharedRandomEffects,
                        AssociationKind::CurrentValuePlusSlope},
                    "association");
}

BaselineKind parse_baseline(const std::string& s) {
  return parse_enum(s, {BaselineKind::Constant, BaselineKind::Weibull,
                        BaselineKind::PiecewiseConstant, BaselineKind::BSpline},
                    "baseline");
}

EventStructure parse_structure(const std::string& s) {
  return parse_enum(s, {EventStructure::SingleEvent, EventStructure::CompetingRisks,
                        EventStructure::MixtureCure},
                    "event structure");
}

// ---------------------------------------------------------------------------
// ingestion

int Dataset::row_column_index(const std::string& name) const {
  for (std::size_t j = 0; j < row_columns.size(); ++j) {
    if (row_columns[j] == name) return static_cast<int>(j);
  }
  return -1;
}

std::size_t drop_post_event_rows(Dataset& data) {
  std::size_t dropped = 0;
  for (auto& subject : data.subjects) {
    for (auto& obs : subject.markers) {
      const auto before = obs.size();
      obs.erase(std::remove_if(obs.begin(), obs.end(),
                               [&](const MarkerObservation& o) { return o.time > subject.event_time; }),
                obs.end());
      dropped += before - obs.size();
    }
  }
  data.dropped_after_event += dropped;
  return dropped;
}

Dataset load_dataset(const ModelSpec& spec, const std::string& dir) {
  const csv::Table surv = csv::read(dir + "/surv.csv");
  const csv::Table longt = csv::read(dir + "/long.csv");

  for (const char* required : {"id", "time", "status"}) {
    if (surv.column(required) < 0) {
      throw Error(ErrorKind::MissingColumn, std::string(required) + " (surv.csv)");
    }
  }
  if (surv.rows.empty()) throw Error(ErrorKind::DataError, "surv.csv has no subjects");
  for (const std::string& required : {std::string("id"), spec.time_column}) {
    if (longt.column(required) < 0) throw Error(ErrorKind::MissingColumn, required + " (long.csv)");
  }

  Dataset data;
  for (const auto& m : spec.markers) data.marker_names.push_back(m.name);
  const int id_col = surv.column("id"), t_col = surv.column("time"), s_col = surv.column("status");

  std::unordered_map<std::string, std::size_t> index;
  for (const auto& row : surv.rows) {
    SubjectRecord rec;
    rec.id = row[id_col];
    if (index.count(rec.id)) throw Error(ErrorKind::DataError, "duplicate subject " + rec.id + " in surv.csv");
    auto t = csv::parse_double(row[t_col]);
    auto st = csv::parse_double(row[s_col]);
    if (!t || !st) throw Error(ErrorKind::DataError, "subject " + rec.id + ": time/status not numeric");
    if (*st != std::floor(*st)) throw Error(ErrorKind::DataError, "subject " + rec.id + ": status not an integer");
    rec.event_time = *t;
    rec.status = static_cast<int>(*st);
    for (std::size_t j = 0; j < surv.header.size(); ++j) {
      if (static_cast<int>(j) == id_col || static_cast<int>(j) == t_col || static_cast<int>(j) == s_col) continue;
      if (auto v = csv::parse_double(row[j])) rec.baseline[surv.header[j]] = *v;
    }
    rec.markers.resize(spec.markers.size());
    index.emplace(rec.id, data.subjects.size());
    data.subjects.push_back(std::move(rec));
  }

  const int lid = longt.column("id");
  std::vector<int> cols;
  for (std::size_t j = 0; j < longt.header.size(); ++j) {
    if (static_cast<int>(j) == lid) continue;
    cols.push_back(static_cast<int>(j));
    data.row_columns.push_back(longt.header[j]);
  }
  const int time_idx = data.row_column_index(spec.time_column);
  std::vector<int> marker_idx;
  for (const auto& m : spec.markers) marker_idx.push_back(data.row_column_index(m.name));

  std::size_t line = 1;
  for (const auto& row : longt.rows) {
    ++line;
    auto it = index.find(row[lid]);
    if (it == index.end()) {
      throw Error(ErrorKind::DataError, "long.csv:" + std::to_string(line) + " subject " + row[lid] +
                                            " is not in surv.csv");
    }
    SubjectRecord& rec = data.subjects[it->second];
    std::vector<double> values(cols.size());
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const std::string& cell = row[cols[j]];
      auto v = csv::parse_double(cell);
      if (!v && !cell.empty() && cell != "NA") {
        throw Error(ErrorKind::DataError, "long.csv:" + std::to_string(line) + " column " +
                                              data.row_columns[j] + " is not numeric: '" + cell + "'");
      }
      values[j] = v ? *v : std::numeric_limits<double>::quiet_NaN();
    }
    const double t = values[time_idx];
    if (std::isnan(t)) throw Error(ErrorKind::DataError, "long.csv:" + std::to_string(line) + " has no time");
    for (std::size_t j = 0; j < values.size(); ++j) {
      const auto& name = data.row_columns[j];
      if (static_cast<int>(j) == time_idx || std::isnan(values[j])) continue;
      if (std::find(marker_idx.begin(), marker_idx.end(), static_cast<int>(j)) != marker_idx.end()) continue;
      rec.baseline.emplace(name, values[j]);
    }
    for (std::size_t k = 0; k < spec.markers.size(); ++k) {
      if (marker_idx[k] < 0 || std::isnan(values[marker_idx[k]])) continue;
      rec.markers[k].push_back(MarkerObservation{t, values[marker_idx[k]], values});
    }
  }
  for (auto& rec : data.subjects) {
    for (auto& obs : rec.markers) {
      std::stable_sort(obs.begin(), obs.end(),
                       [](const MarkerObservation& a, const MarkerObservation& b) { return a.time < b.time; });
    }
  }
  drop_post_event_rows(data);
  return data;
}

// ---------------------------------------------------------------------------
// validation

std::string ValidationReport::describe() const {
  std::ostringstream os;
  for (const auto& v : violations) os << v.kind << ": " << v.message << "\n";
  return os.str();
}

namespace {

int gamma_dim_of(AssociationKind kind, int re_dim) {
  switch (kind) {
    case AssociationKind::SharedRandomEffects: return re_dim;
    case AssociationKind::CurrentValuePlusSlope: return 2;
    default: return 1;
  }
}

bool is_subset(const std::vector<std::string>& sub, const std::vector<std::string>& super) {
  return std::all_of(sub.begin(), sub.end(), [&](const std::string& s) {
    return std::find(super.begin(), super.end(), s) != super.end();
  });
}

void check_spec(const ModelSpec& spec, std::vector<Violation>& out) {
  auto bad = [&](const std::string& msg) { out.push_back({"InvariantViolation", msg}); };
  for (const auto& m : spec.markers) {
    const std::string where = "marker " + m.name + ": ";
    if (m.fixed_design_columns.empty()) bad(where + "fixed design has no columns");
    if (!is_subset(m.random_design_columns, m.fixed_design_columns)) {
      bad(where + "random design is not a subset of the fixed design");
    }
    const bool hurdle = m.family == MarkerFamily::HurdleNegBinomial;
    if (hurdle != m.hurdle_probability_design.has_value()) {
      bad(where + "hurdle probability design must be given exactly for hurdle markers");
    }
    if (m.hurdle_probability_design) {
      const auto& d = *m.hurdle_probability_design;
      if (d.fixed.empty()) bad(where + "probability design has no columns");
      if (!is_subset(d.random, d.fixed)) bad(where + "probability random design is not a subset of its fixed design");
    }
    if (m.offset_column && m.family == MarkerFamily::BernoulliLogit) {
      bad(where + "offsets are only supported for gaussian and hurdle markers");
    }
  }
  std::set<std::string> names;
  for (const auto& m : spec.markers) {
    if (!names.insert(m.name).second) bad("duplicate marker name " + m.name);
  }

  const auto& ev = spec.event;
  if (ev.structure == EventStructure::CompetingRisks && ev.n_causes < 2) bad("competing risks need n_causes >= 2");
  if (ev.structure != EventStructure::CompetingRisks && ev.n_causes != 1) bad("this event structure allows exactly one cause");
  if (static_cast<int>(ev.baselines.size()) != ev.n_causes) bad("one baseline hazard per cause is required");
  const bool cure = ev.structure == EventStructure::MixtureCure;
  if (cure != !ev.incidence_covariate_columns.empty()) {
    bad("incidence covariates must be given exactly for mixture cure models");
  }
  if (std::find(ev.covariate_columns.begin(), ev.covariate_columns.end(), kInterceptColumn) !=
      ev.covariate_columns.end()) {
    bad("event covariates may not contain 'intercept'; the baseline carries the scale");
  }
  for (std::size_t l = 0; l < ev.baselines.size(); ++l) {
    const auto& b = ev.baselines[l];
    const std::string where = "baseline of cause " + std::to_string(l + 1) + ": ";
    if (b.kind == BaselineKind::PiecewiseConstant) {
      for (std::size_t j = 0; j < b.knots.size(); ++j) {
        if (!(b.knots[j] > 0.0) || !std::isfinite(b.knots[j])) bad(where + "knots must be positive");
        if (j > 0 && !(b.knots[j] > b.knots[j - 1])) bad(where + "knots must be strictly ascending");
      }
    }
    if (b.kind == BaselineKind::BSpline) {
      if (b.degree < 1) bad(where + "spline degree must be >= 1");
      if (b.interior_knot_count < 1) bad(where + "spline needs at least one interior knot");
      if (b.penalty_order != 1 && b.penalty_order != 2) bad(where + "penalty order must be 1 or 2");
    }
  }

  const auto& p = spec.priors;
  for (double v : {p.beta_variance, p.precision_shape, p.precision_rate, p.wishart_scale, p.alpha_variance,
                   p.gamma_variance, p.shape_a, p.shape_b, p.height_a, p.height_b, p.smoothing_a,
                   p.smoothing_b, p.spline_ridge_precision, p.dispersion_a, p.dispersion_b, p.xi_variance}) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      bad("prior variances, shapes and rates must be positive");
      break;
    }
  }
  if (spec.quadrature.rule == quadrature::RuleKind::Legendre &&
      (spec.quadrature.points < 2 || spec.quadrature.points > 64)) {
    bad("Legendre quadrature needs 2..64 points");
  }
}

int random_dim_total(const ModelSpec& spec) {
  int nb = 0;
  for (const auto& m : spec.markers) {
    nb += static_cast<int>(m.random_design_columns.size());
    if (m.hurdle_probability_design) nb += static_cast<int>(m.hurdle_probability_design->random.size());
  }
  return nb;
}

std::vector<std::string> design_columns(const MarkerSpec& m) {
  std::vector<std::string> cols = m.fixed_design_columns;
  if (m.hurdle_probability_design) {
    cols.insert(cols.end(), m.hurdle_probability_design->fixed.begin(), m.hurdle_probability_design->fixed.end());
  }
  return cols;
}

}  // namespace

int gamma_dim_for(const MarkerSpec& marker, const MarkerLayout& layout) {
  return gamma_dim_of(marker.association.kind, layout.re_dim());
}

ValidationReport validate_spec(const ModelSpec& spec, const Dataset& data) {
  ValidationReport report;
  auto& out = report.violations;
  check_spec(spec, out);
  auto bad = [&](const std::string& msg) { out.push_back({"InvariantViolation", msg}); };
  auto missing = [&](const std::string& col) { out.push_back({"MissingColumn", col}); };

  auto known_column = [&](const std::string& c) {
    if (c == kInterceptColumn || c == spec.time_column) return true;
    if (data.row_column_index(c) >= 0) return true;
    return std::any_of(data.subjects.begin(), data.subjects.end(),
                       [&](const SubjectRecord& s) { return s.baseline.count(c) > 0; });
  };

  std::set<std::string> reported;
  auto require = [&](const std::string& c) {
    if (!known_column(c) && reported.insert(c).second) missing(c);
  };
  for (const auto& m : spec.markers) {
    if (data.row_column_index(m.name) < 0 && reported.insert(m.name).second) missing(m.name);
    for (const auto& c : design_columns(m)) require(c);
    if (m.offset_column) require(*m.offset_column);
  }
  for (const auto& c : spec.event.covariate_columns) require(c);
  for (const auto& c : spec.event.incidence_covariate_columns) require(c);

  const int n_causes = spec.event.n_causes;
  const bool cure = spec.event.structure == EventStructure::MixtureCure;
  std::vector<std::size_t> per_marker(spec.markers.size(), 0);
  report.dims.n_subjects = data.subjects.size();
  report.dims.n_markers = spec.markers.size();
  report.dims.re_dim = random_dim_total(spec);

  for (const auto& s : data.subjects) {
    const std::string who = "subject " + s.id;
    if (!(s.event_time > 0.0) || !std::isfinite(s.event_time)) bad(who + ": event time must be positive and finite");
    if (s.status < 0 || s.status > n_causes) bad(who + ": status " + std::to_string(s.status) + " outside 0.." + std::to_string(n_causes));
    if (cure && s.status > 1) bad(who + ": mixture cure status must be 0 or 1");
    std::size_t n_obs = 0;
    for (std::size_t k = 0; k < spec.markers.size() && k < s.markers.size(); ++k) {
      const auto& m = spec.markers[k];
      const std::string where = who + ", marker " + m.name;
      std::set<double> times;
      for (const auto& o : s.markers[k]) {
        if (!(o.time >= 0.0)) bad(where + ": negative observation time");
        if (o.time > s.event_time) bad(where + ": observation after the event time");
        if (!times.insert(o.time).second) bad(where + ": duplicate observation time " + csv::format_double(o.time));
        if (!std::isfinite(o.value)) bad(where + ": non-finite value");
        if (m.family == MarkerFamily::BernoulliLogit && o.value != 0.0 && o.value != 1.0) {
          bad(where + ": NonBinaryValue " + csv::format_double(o.value));
        }
        if (m.family == MarkerFamily::HurdleNegBinomial && (o.value < 0.0 || o.value != std::floor(o.value))) {
          bad(where + ": count value " + csv::format_double(o.value) + " is not a non-negative integer");
        }
      }
      // Time-constant design columns must not vary within the subject.
      for (const auto& c : design_columns(m)) {
        if (c == kInterceptColumn || c == spec.time_column) continue;
        const int j = data.row_column_index(c);
        auto base = s.baseline.find(c);
        if (base == s.baseline.end()) {
          if (!s.markers[k].empty() && known_column(c)) bad(where + ": covariate " + c + " has no value");
          continue;
        }
        if (j < 0) continue;
        for (const auto& o : s.markers[k]) {
          const double v = o.row[j];
          if (!std::isnan(v) && v != base->second) {
            bad(where + ": covariate " + c + " varies over time; designs only allow time-constant covariates");
            break;
          }
        }
      }
      if (m.offset_column) {
        const int j = data.row_column_index(*m.offset_column);
        for (const auto& o : s.markers[k]) {
          const double v = j >= 0 ? o.row[j] : std::numeric_limits<double>::quiet_NaN();
          if (std::isnan(v) && !s.baseline.count(*m.offset_column)) {
            bad(where + ": offset " + *m.offset_column + " is missing");
            break;
          }
        }
      }
      n_obs += s.markers[k].size();
      per_marker[k] += s.markers[k].size();
    }
    report.dims.observations_per_subject.push_back(n_obs);
    for (const auto* cols : {&spec.event.covariate_columns, &spec.event.incidence_covariate_columns}) {
      for (const auto& c : *cols) {
        if (c == kInterceptColumn) continue;
        if (known_column(c) && !s.baseline.count(c)) bad(who + ": event covariate " + c + " has no value");
      }
    }
  }
  for (std::size_t k = 0; k < spec.markers.size(); ++k) {
    if (per_marker[k] == 0 && !data.subjects.empty() && data.row_column_index(spec.markers[k].name) >= 0) {
      bad("marker " + spec.markers[k].name + " has no observations");
    }
  }
  const int dof_dim = report.dims.re_dim;
  if (spec.priors.wishart_dof && *spec.priors.wishart_dof < dof_dim && !spec.block_diagonal_re) {
    bad("Wishart degrees of freedom must be at least the random-effects dimension");
  }
  return report;
}

// ---------------------------------------------------------------------------
// prepared model

namespace {

quadrature::Rule make_rule(const QuadratureSpec& q) {
  return q.rule == quadrature::RuleKind::Kronrod15 ? quadrature::kronrod15_rule()
                                                   : quadrature::legendre_rule(q.points);
}

void build_layout(PreparedModel& model) {
  const ModelSpec& spec = model.spec;
  int offset = 0;
  model.markers.clear();
  for (const auto& m : spec.markers) {
    MarkerLayout lay;
    lay.fixed_dim = static_cast<int>(m.fixed_design_columns.size());
    lay.random_dim = static_cast<int>(m.random_design_columns.size());
    if (m.hurdle_probability_design) {
      lay.prob_fixed_dim = static_cast<int>(m.hurdle_probability_design->fixed.size());
      lay.prob_random_dim = static_cast<int>(m.hurdle_probability_design->random.size());
    }
    lay.re_offset = offset;
    offset += lay.re_dim();
    lay.gamma_dim = gamma_dim_for(m, lay);
    model.markers.push_back(lay);
  }
  model.re_dim = offset;
  model.causes.clear();
  for (int l = 0; l < spec.event.n_causes; ++l) {
    CauseLayout c;
    c.has_intercept = spec.event.baselines[l].uses_event_intercept();
    c.alpha_dim = (c.has_intercept ? 1 : 0) + static_cast<int>(spec.event.covariate_columns.size());
    for (const auto& lay : model.markers) {
      c.gamma_offset.push_back(c.gamma_dim);
      c.gamma_dim += lay.gamma_dim;
    }
    model.causes.push_back(c);
  }
  model.incidence_dim = static_cast<int>(spec.event.incidence_covariate_columns.size());
  model.rule = make_rule(spec.quadrature);
  model.penalties.assign(spec.event.n_causes, Eigen::MatrixXd());
  for (int l = 0; l < spec.event.n_causes; ++l) {
    const auto& b = spec.event.baselines[l];
    if (b.kind == BaselineKind::BSpline) model.penalties[l] = penalty_matrix(b.spline_basis_size(), b.penalty_order);
  }
}

double column_value(const std::string& col, const std::string& time_column, double t,
                    const std::map<std::string, double>& baseline) {
  if (col == kInterceptColumn) return 1.0;
  if (col == time_column) return t;
  auto it = baseline.find(col);
  return it == baseline.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
}

/// Affine design (v0 + t vt) for a list of columns.
void affine_design(const std::vector<std::string>& cols, const std::string& time_column,
                   const std::map<std::string, double>& baseline, Eigen::VectorXd& v0, Eigen::VectorXd& vt) {
  v0.setZero(static_cast<Eigen::Index>(cols.size()));
  vt.setZero(static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j] == time_column) {
      vt[j] = 1.0;
    } else {
      v0[j] = column_value(cols[j], time_column, 0.0, baseline);
    }
  }
}

int column_index(const std::vector<std::string>& columns, const std::string& name) {
  auto it = std::find(columns.begin(), columns.end(), name);
  return it == columns.end() ? -1 : static_cast<int>(it - columns.begin());
}

Eigen::MatrixXd design_rows(const Eigen::VectorXd& v0, const Eigen::VectorXd& vt, const Eigen::VectorXd& times) {
  Eigen::MatrixXd X(times.size(), v0.size());
  for (Eigen::Index j = 0; j < times.size(); ++j) X.row(j) = (v0 + times[j] * vt).transpose();
  return X;
}

}  // namespace

void attach_basis(const PreparedModel& model, PreparedSubject& subject) {
  const int n_causes = static_cast<int>(model.causes.size());
  subject.basis_at_time.assign(n_causes, Eigen::VectorXd());
  subject.basis_at_nodes.assign(n_causes, Eigen::MatrixXd());
  for (int l = 0; l < n_causes; ++l) {
    if (!model.spline_bases[l]) continue;
    const auto& basis = *model.spline_bases[l];
    subject.basis_at_time[l] = basis.evaluate(subject.time);
    Eigen::MatrixXd B(subject.nodes.nodes.size(), basis.size());
    for (std::size_t k = 0; k < subject.nodes.nodes.size(); ++k) B.row(k) = basis.evaluate(subject.nodes.nodes[k]).transpose();
    subject.basis_at_nodes[l] = std::move(B);
  }
}

PreparedModel prepare_layout(const ModelSpec& spec, double horizon) {
  std::vector<Violation> issues;
  check_spec(spec, issues);
  if (!issues.empty()) throw Error(ErrorKind::InvariantViolation, issues.front().message);
  PreparedModel model;
  model.spec = spec;
  build_layout(model);
  model.max_time = horizon;
  model.spline_bases.assign(spec.event.n_causes, std::nullopt);
  std::vector<double> grid;
  for (int j = 0; j <= 100; ++j) grid.push_back(horizon * j / 100.0);
  for (int l = 0; l < spec.event.n_causes; ++l) {
    const auto& b = spec.event.baselines[l];
    if (b.kind == BaselineKind::BSpline) {
      model.spline_bases[l] = BSplineBasis::at_quantiles(b.degree, b.interior_knot_count, grid);
    }
  }
  return model;
}

PreparedSubject prepare_subject(const PreparedModel& model, const SubjectRecord& s,
                                const std::vector<std::string>& row_columns) {
  const ModelSpec& spec = model.spec;
  PreparedSubject ps;
  ps.id = s.id;
  ps.time = s.event_time;
  ps.status = s.status;
  ps.zero_tail = model.is_cure() && spec.event.zero_tail_constraint && s.status == 0 && s.event_time > model.max_event_time;
  for (std::size_t k = 0; k < spec.markers.size(); ++k) {
    const auto& m = spec.markers[k];
    const auto& obs = s.markers[k];
    PreparedMarker pm;
    const auto n_obs = static_cast<Eigen::Index>(obs.size());
    pm.y.resize(n_obs);
    pm.offset.setZero(n_obs);
    Eigen::VectorXd t(n_obs);
    const int off_col = m.offset_column ? column_index(row_columns, *m.offset_column) : -1;
    for (Eigen::Index j = 0; j < n_obs; ++j) {
      pm.y[j] = obs[j].value;
      t[j] = obs[j].time;
      if (m.offset_column) {
        double v = off_col >= 0 ? obs[j].row[off_col] : std::numeric_limits<double>::quiet_NaN();
        if (std::isnan(v)) v = s.baseline.at(*m.offset_column);
        pm.offset[j] = v;
      }
    }
    affine_design(m.fixed_design_columns, spec.time_column, s.baseline, pm.x0, pm.xt);
    affine_design(m.random_design_columns, spec.time_column, s.baseline, pm.z0, pm.zt);
    pm.X = design_rows(pm.x0, pm.xt, t);
    pm.Z = design_rows(pm.z0, pm.zt, t);
    if (m.hurdle_probability_design) {
      affine_design(m.hurdle_probability_design->fixed, spec.time_column, s.baseline, pm.xp0, pm.xpt);
      affine_design(m.hurdle_probability_design->random, spec.time_column, s.baseline, pm.zp0, pm.zpt);
      pm.X_prob = design_rows(pm.xp0, pm.xpt, t);
      pm.Z_prob = design_rows(pm.zp0, pm.zpt, t);
    }
    const Eigen::VectorXd v = pm.y - pm.offset;
    pm.sum_v = v.sum();
    pm.sum_t = t.sum();
    pm.sum_tt = t.squaredNorm();
    pm.sum_vt = v.dot(t);
    pm.sum_vv = v.squaredNorm();
    pm.t = t;
    // Designs of subjects without observations of this marker may reference absent covariates;
    // they only enter the hazard, so missing values there are an error.
    if (!pm.x0.allFinite() || !pm.z0.allFinite() || !pm.xp0.allFinite() || !pm.zp0.allFinite()) {
      throw Error(ErrorKind::InvariantViolation, "subject " + s.id + ", marker " + m.name +
                                                     ": design covariate has no value");
    }
    ps.markers.push_back(std::move(pm));
  }
  const auto& ev = spec.event;
  ps.w.resize(static_cast<Eigen::Index>(ev.covariate_columns.size()));
  for (std::size_t j = 0; j < ev.covariate_columns.size(); ++j) {
    ps.w[j] = column_value(ev.covariate_columns[j], spec.time_column, 0.0, s.baseline);
  }
  ps.w_incidence.resize(static_cast<Eigen::Index>(ev.incidence_covariate_columns.size()));
  for (std::size_t j = 0; j < ev.incidence_covariate_columns.size(); ++j) {
    ps.w_incidence[j] = column_value(ev.incidence_covariate_columns[j], spec.time_column, 0.0, s.baseline);
  }
  if (!ps.w.allFinite() || !ps.w_incidence.allFinite()) {
    throw Error(ErrorKind::InvariantViolation, "subject " + s.id + ": event covariate has no value");
  }
  if (ps.time > 0.0) ps.nodes = quadrature::scale_to_interval(model.rule, 0.0, ps.time);
  attach_basis(model, ps);
  return ps;
}

PreparedModel prepare(const ModelSpec& spec, const Dataset& data) {
  const ValidationReport report = validate_spec(spec, data);
  if (!report.ok()) {
    const auto& first = report.violations.front();
    throw Error(first.kind == "MissingColumn" ? ErrorKind::MissingColumn : ErrorKind::InvariantViolation,
                report.describe());
  }
  PreparedModel model;
  model.spec = spec;
  build_layout(model);

  std::vector<double> times;
  for (const auto& s : data.subjects) {
    times.push_back(s.event_time);
    model.max_time = std::max(model.max_time, s.event_time);
    if (s.status > 0) model.max_event_time = std::max(model.max_event_time, s.event_time);
  }
  model.spline_bases.assign(spec.event.n_causes, std::nullopt);
  for (int l = 0; l < spec.event.n_causes; ++l) {
    const auto& b = spec.event.baselines[l];
    if (b.kind == BaselineKind::BSpline) {
      model.spline_bases[l] = BSplineBasis::at_quantiles(b.degree, b.interior_knot_count, times);
    }
  }

  for (const auto& s : data.subjects) model.subjects.push_back(prepare_subject(model, s, data.row_columns));
  return model;
}

// ---------------------------------------------------------------------------
// parameter state

namespace {

LongitudinalParams empty_longitudinal(const PreparedModel& model) {
  LongitudinalParams lp;
  for (std::size_t k = 0; k < model.markers.size(); ++k) {
    MarkerParams mp;
    mp.beta = Eigen::VectorXd::Zero(model.markers[k].fixed_dim);
    mp.beta_prob = Eigen::VectorXd::Zero(model.markers[k].prob_fixed_dim);
    lp.markers.push_back(mp);
  }
  lp.D = Eigen::MatrixXd::Identity(model.re_dim, model.re_dim);
  return lp;
}

double logit(double p) { return std::log(p / (1.0 - p)); }

/// Least squares on an intercept-anchored design; zeros when the design is rank deficient.
Eigen::VectorXd least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  if (X.rows() == 0 || X.cols() == 0) return Eigen::VectorXd::Zero(X.cols());
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < X.cols()) return Eigen::VectorXd::Zero(X.cols());
  Eigen::VectorXd beta = qr.solve(y);
  if (!beta.allFinite()) return Eigen::VectorXd::Zero(X.cols());
  return beta;
}

int intercept_index(const std::vector<std::string>& cols) {
  auto it = std::find(cols.begin(), cols.end(), kInterceptColumn);
  return it == cols.end() ? -1 : static_cast<int>(it - cols.begin());
}

}  // namespace

ParamState empty_state(const PreparedModel& model, std::size_t n_subjects) {
  ParamState st;
  st.longitudinal = empty_longitudinal(model);
  if (model.is_cure()) st.cured = st.longitudinal;
  for (std::size_t l = 0; l < model.causes.size(); ++l) {
    const auto& c = model.causes[l];
    const auto& b = model.spec.event.baselines[l];
    CauseParams cp;
    cp.alpha = Eigen::VectorXd::Zero(c.alpha_dim);
    cp.gamma = Eigen::VectorXd::Zero(c.gamma_dim);
    if (b.kind == BaselineKind::PiecewiseConstant) cp.baseline.heights = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(b.knots.size()) + 1);
    if (b.kind == BaselineKind::BSpline) cp.baseline.spline_coef = Eigen::VectorXd::Zero(b.spline_basis_size());
    st.causes.push_back(cp);
  }
  st.xi = Eigen::VectorXd::Zero(model.incidence_dim);
  st.b = RandomEffects::Zero(static_cast<Eigen::Index>(n_subjects), model.re_dim);
  st.uncured.assign(n_subjects, 1);
  return st;
}

ParamState initial_state(const PreparedModel& model, std::uint64_t seed) {
  const std::size_t n = model.n();
  ParamState st = empty_state(model, n);
  const auto& spec = model.spec;

  for (std::size_t k = 0; k < spec.markers.size(); ++k) {
    const auto& m = spec.markers[k];
    const auto& lay = model.markers[k];
    std::vector<const PreparedMarker*> rows;
    Eigen::Index total = 0;
    for (const auto& s : model.subjects) {
      rows.push_back(&s.markers[k]);
      total += s.markers[k].y.size();
    }
    auto stack = [&](auto design, auto response, auto keep) {
      Eigen::Index count = 0;
      for (const auto* pm : rows) {
        for (Eigen::Index j = 0; j < pm->y.size(); ++j) count += keep(pm->y[j]) ? 1 : 0;
      }
      Eigen::MatrixXd X(count, design(*rows.front()).cols());
      Eigen::VectorXd y(count);
      Eigen::Index r = 0;
      for (const auto* pm : rows) {
        const Eigen::MatrixXd& D = design(*pm);
        for (Eigen::Index j = 0; j < pm->y.size(); ++j) {
          if (!keep(pm->y[j])) continue;
          X.row(r) = D.row(j);
          y[r++] = response(*pm, j);
        }
      }
      return std::make_pair(X, y);
    };
    MarkerParams& mp = st.longitudinal.markers[k];
    if (total == 0) continue;
    const int icpt = intercept_index(m.fixed_design_columns);
    switch (m.family) {
      case MarkerFamily::Gaussian: {
        auto [X, y] = stack([](const PreparedMarker& pm) -> const Eigen::MatrixXd& { return pm.X; },
                            [](const PreparedMarker& pm, Eigen::Index j) { return pm.y[j] - pm.offset[j]; },
                            [](double) { return true; });
        mp.beta = least_squares(X, y);
        const double ssr = (y - X * mp.beta).squaredNorm();
        const double dof = std::max<double>(1.0, static_cast<double>(y.size() - lay.fixed_dim));
        mp.sigma2 = std::max(ssr / dof, 1e-3);
        break;
      }
      case MarkerFamily::BernoulliLogit: {
        double mean = 0.0;
        for (const auto* pm : rows) mean += pm->y.sum();
        mean /= static_cast<double>(total);
        if (icpt >= 0) mp.beta[icpt] = logit(std::clamp(mean, 1e-3, 1.0 - 1e-3));
        break;
      }
      case MarkerFamily::HurdleNegBinomial: {
        auto [X, y] = stack([](const PreparedMarker& pm) -> const Eigen::MatrixXd& { return pm.X; },
                            [](const PreparedMarker& pm, Eigen::Index j) { return std::log(pm.y[j]) - pm.offset[j]; },
                            [](double v) { return v > 0.0; });
        if (X.rows() > 0) mp.beta = least_squares(X, y);
        double zeros = 0.0;
        for (const auto* pm : rows) zeros += static_cast<double>((pm->y.array() == 0.0).count());
        const int picpt = intercept_index(m.hurdle_probability_design->fixed);
        if (picpt >= 0) mp.beta_prob[picpt] = logit(std::clamp(zeros / static_cast<double>(total), 1e-3, 1.0 - 1e-3));
        mp.dispersion = 1.0;
        break;
      }
    }
  }
  if (st.cured) st.cured = st.longitudinal;

  double total_time = 0.0;
  std::vector<double> events(model.causes.size(), 0.0);
  for (const auto& s : model.subjects) {
    total_time += s.time;
    if (s.status > 0) events[s.status - 1] += 1.0;
  }
  for (std::size_t l = 0; l < model.causes.size(); ++l) {
    const double rate = total_time > 0.0 ? std::max(events[l], 0.5) / total_time : 1.0;
    auto& cp = st.causes[l];
    if (model.causes[l].has_intercept) cp.alpha[0] = std::log(rate);
    cp.baseline.shape = 1.0;
    if (cp.baseline.heights.size() > 0) cp.baseline.heights.setConstant(rate);
    cp.baseline.spline_intercept = std::log(rate);
    cp.baseline.smoothing = 1.0;
  }

  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = model.subjects[i];
    if (!model.is_cure() || s.status > 0) {
      st.uncured[i] = 1;
    } else if (s.zero_tail) {
      st.uncured[i] = 0;
    } else {
      st.uncured[i] = coin(rng) ? 1 : 0;
    }
  }
  return st;
}

std::string check_state(const PreparedModel& model, const ParamState& st) {
  std::ostringstream err;
  auto check_long = [&](const LongitudinalParams& lp, const char* which) {
    if (lp.markers.size() != model.markers.size()) {
      err << which << ": wrong number of markers; ";
      return;
    }
    for (std::size_t k = 0; k < model.markers.size(); ++k) {
      const auto& mp = lp.markers[k];
      const auto& lay = model.markers[k];
      if (mp.beta.size() != lay.fixed_dim) err << which << ": beta[" << k + 1 << "] size; ";
      if (mp.beta_prob.size() != lay.prob_fixed_dim) err << which << ": beta_prob[" << k + 1 << "] size; ";
      if (!(mp.sigma2 > 0.0)) err << which << ": sigma2[" << k + 1 << "] <= 0; ";
      if (!(mp.dispersion > 0.0)) err << which << ": r[" << k + 1 << "] <= 0; ";
    }
    if (lp.D.rows() != model.re_dim || lp.D.cols() != model.re_dim) {
      err << which << ": D size; ";
    } else if (model.re_dim > 0) {
      if (!lp.D.isApprox(lp.D.transpose(), 1e-12)) err << which << ": D not symmetric; ";
      Eigen::LLT<Eigen::MatrixXd> llt(lp.D);
      if (llt.info() != Eigen::Success) err << which << ": D not positive definite; ";
    }
  };
  check_long(st.longitudinal, "longitudinal");
  if (model.is_cure() != st.cured.has_value()) err << "cured class presence; ";
  if (st.cured) check_long(*st.cured, "cured");
  if (st.causes.size() != model.causes.size()) {
    err << "wrong number of causes; ";
  } else {
    for (std::size_t l = 0; l < model.causes.size(); ++l) {
      const auto& cp = st.causes[l];
      const auto& b = model.spec.event.baselines[l];
      if (cp.alpha.size() != model.causes[l].alpha_dim) err << "alpha[" << l + 1 << "] size; ";
      if (cp.gamma.size() != model.causes[l].gamma_dim) err << "gamma[" << l + 1 << "] size; ";
      if (b.kind == BaselineKind::Weibull && !(cp.baseline.shape > 0.0)) err << "nu <= 0; ";
      if (b.kind == BaselineKind::PiecewiseConstant) {
        if (cp.baseline.heights.size() != static_cast<Eigen::Index>(b.knots.size()) + 1) err << "h size; ";
        else if (!(cp.baseline.heights.array() > 0.0).all()) err << "h <= 0; ";
      }
      if (b.kind == BaselineKind::BSpline) {
        if (cp.baseline.spline_coef.size() != b.spline_basis_size()) err << "spline size; ";
        if (!(cp.baseline.smoothing > 0.0)) err << "tau_spline <= 0; ";
      }
    }
  }
  if (st.xi.size() != model.incidence_dim) err << "xi size; ";
  if (static_cast<std::size_t>(st.b.rows()) != model.n() || st.b.cols() != model.re_dim) err << "b size; ";
  if (st.uncured.size() != model.n()) {
    err << "u size; ";
  } else {
    for (std::size_t i = 0; i < model.n(); ++i) {
      const auto& s = model.subjects[i];
      if (s.status > 0 && st.uncured[i] != 1) err << "u[" << i + 1 << "] must be 1 for an observed event; ";
      if (s.zero_tail && st.uncured[i] != 0) err << "u[" << i + 1 << "] must be 0 under the zero-tail constraint; ";
      if (!model.is_cure() && st.uncured[i] != 1) err << "u[" << i + 1 << "] must be 1 without a cure fraction; ";
    }
  }
  return err.str();
}

// ---------------------------------------------------------------------------
// monitored names

std::vector<std::string> default_monitor_groups() {
  return {"beta", "beta_prob", "sigma2", "r", "Sigma", "alpha", "gamma", "nu", "h", "spline", "tau_spline", "xi"};
}

namespace {

std::string idx(int a) { return "[" + std::to_string(a) + "]"; }

template <typename Visit>
void visit_group(const PreparedModel& model, const ParamState* st, const std::string& group, Visit&& visit) {
  const auto& spec = model.spec;
  auto value = [&](auto get) { return st ? get() : 0.0; };
  auto classes = [&](auto body) {
    body(std::string(""), st ? &st->longitudinal : nullptr);
    if (model.is_cure()) body(std::string("_cured"), st ? &*st->cured : nullptr);
  };
  if (group == "beta" || group == "beta_prob" || group == "sigma2" || group == "r") {
    classes([&](const std::string& suffix, const LongitudinalParams* lp) {
      for (std::size_t k = 0; k < spec.markers.size(); ++k) {
        const auto fam = spec.markers[k].family;
        const int kk = static_cast<int>(k) + 1;
        if (group == "beta") {
          for (int j = 0; j < model.markers[k].fixed_dim; ++j)
            visit("beta" + suffix + idx(kk) + idx(j + 1), value([&] { return lp->markers[k].beta[j]; }));
        } else if (group == "beta_prob") {
          for (int j = 0; j < model.markers[k].prob_fixed_dim; ++j)
            visit("beta_prob" + suffix + idx(kk) + idx(j + 1), value([&] { return lp->markers[k].beta_prob[j]; }));
        } else if (group == "sigma2" && fam == MarkerFamily::Gaussian) {
          visit("sigma2" + suffix + idx(kk), value([&] { return lp->markers[k].sigma2; }));
        } else if (group == "r" && fam == MarkerFamily::HurdleNegBinomial) {
          visit("r" + suffix + idx(kk), value([&] { return lp->markers[k].dispersion; }));
        }
      }
    });
  } else if (group == "Sigma" || group == "Sigma_diag") {
    classes([&](const std::string& suffix, const LongitudinalParams* lp) {
      for (int i = 0; i < model.re_dim; ++i) {
        for (int j = i; j < model.re_dim; ++j) {
          if (group == "Sigma_diag" && j != i) continue;
          visit("Sigma" + suffix + idx(i + 1) + idx(j + 1), value([&] { return lp->D(i, j); }));
        }
      }
    });
  } else if (group == "alpha" || group == "gamma" || group == "nu" || group == "h" || group == "spline" ||
             group == "tau_spline") {
    for (std::size_t l = 0; l < model.causes.size(); ++l) {
      const int ll = static_cast<int>(l) + 1;
      const auto kind = spec.event.baselines[l].kind;
      const CauseParams* cp = st ? &st->causes[l] : nullptr;
      if (group == "alpha") {
        for (int j = 0; j < model.causes[l].alpha_dim; ++j)
          visit("alpha" + idx(ll) + idx(j + 1), value([&] { return cp->alpha[j]; }));
      } else if (group == "gamma") {
        for (int j = 0; j < model.causes[l].gamma_dim; ++j)
          visit("gamma" + idx(ll) + idx(j + 1), value([&] { return cp->gamma[j]; }));
      } else if (group == "nu" && kind == BaselineKind::Weibull) {
        visit("nu" + idx(ll), value([&] { return cp->baseline.shape; }));
      } else if (group == "h" && kind == BaselineKind::PiecewiseConstant) {
        const auto J = static_cast<int>(spec.event.baselines[l].knots.size()) + 1;
        for (int j = 0; j < J; ++j) visit("h" + idx(ll) + idx(j + 1), value([&] { return cp->baseline.heights[j]; }));
      } else if (group == "spline" && kind == BaselineKind::BSpline) {
        visit("spline_intercept" + idx(ll), value([&] { return cp->baseline.spline_intercept; }));
        const int L = spec.event.baselines[l].spline_basis_size();
        for (int j = 0; j < L; ++j) visit("spline" + idx(ll) + idx(j + 1), value([&] { return cp->baseline.spline_coef[j]; }));
      } else if (group == "tau_spline" && kind == BaselineKind::BSpline) {
        visit("tau_spline" + idx(ll), value([&] { return cp->baseline.smoothing; }));
      }
    }
  } else if (group == "xi") {
    for (int j = 0; j < model.incidence_dim; ++j) visit("xi" + idx(j + 1), value([&] { return st->xi[j]; }));
  } else if (group == "b") {
    for (std::size_t i = 0; i < model.n(); ++i) {
      for (int j = 0; j < model.re_dim; ++j)
        visit("b" + idx(static_cast<int>(i) + 1) + idx(j + 1), value([&] { return st->b(i, j); }));
    }
  } else {
    throw Error(ErrorKind::UnknownParameter, "unknown parameter group '" + group + "'");
  }
}

}  // namespace

std::vector<std::string> parameter_names(const PreparedModel& model, const std::vector<std::string>& groups) {
  std::vector<std::string> names;
  for (const auto& g : groups) visit_group(model, nullptr, g, [&](std::string name, double) { names.push_back(std::move(name)); });
  return names;
}

void parameter_values(const PreparedModel& model, const ParamState& state, const std::vector<std::string>& groups,
                      std::vector<double>& out) {
  out.clear();
  for (const auto& g : groups) visit_group(model, &state, g, [&](const std::string&, double v) { out.push_back(v); });
}

}  // namespace jointfuse
