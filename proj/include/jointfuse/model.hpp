#pragma once

#include "jointfuse/bspline.hpp"
#include "jointfuse/quadrature.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace jointfuse {

// ---------------------------------------------------------------------------
// Declarative model vocabulary
// ---------------------------------------------------------------------------

enum class MarkerFamily { Gaussian, BernoulliLogit, HurdleNegBinomial };

enum class AssociationKind {
  CurrentValue,
  CurrentSlope,
  CumulativeEffect,
  SharedRandomEffects,
  CurrentValuePlusSlope,
};

enum class BaselineKind { Constant, Weibull, PiecewiseConstant, BSpline };

enum class EventStructure { SingleEvent, CompetingRisks, MixtureCure };

/// Design column name that stands for the constant 1.
inline const std::string kInterceptColumn = "intercept";

struct DesignSpec {
  std::vector<std::string> fixed;
  std::vector<std::string> random;
};

struct AssociationSpec {
  AssociationKind kind = AssociationKind::CurrentValue;
};

struct MarkerSpec {
  std::string name;
  MarkerFamily family = MarkerFamily::Gaussian;
  std::vector<std::string> fixed_design_columns;
  std::vector<std::string> random_design_columns;
  std::optional<std::string> offset_column;
  /// Fixed and random design of logit(pi); hurdle markers only.
  std::optional<DesignSpec> hurdle_probability_design;
  AssociationSpec association;
};

struct BaselineHazardSpec {
  BaselineKind kind = BaselineKind::Constant;
  /// Piecewise cut points s_1..s_{J-1}; the last interval is open-ended.
  std::vector<double> knots;
  int degree = 4;
  int interior_knot_count = 6;
  int penalty_order = 2;

  int spline_basis_size() const { return degree + interior_knot_count; }
  /// True when the event intercept alpha_0 plays the role of log lambda_0.
  bool uses_event_intercept() const {
    return kind == BaselineKind::Constant || kind == BaselineKind::Weibull;
  }
};

struct EventSpec {
  EventStructure structure = EventStructure::SingleEvent;
  int n_causes = 1;
  /// One baseline per cause.
  std::vector<BaselineHazardSpec> baselines{BaselineHazardSpec{}};
  std::vector<std::string> covariate_columns;
  std::vector<std::string> incidence_covariate_columns;
  bool zero_tail_constraint = true;
};

/// Hyperparameters. Normal priors are given by mean and variance, gamma priors by shape and rate.
struct PriorSet {
  double beta_mean = 0.0;
  double beta_variance = 1000.0;
  /// gamma(a, b) on 1/sigma^2.
  double precision_shape = 0.01;
  double precision_rate = 0.01;
  /// Wishart(V, omega) on D^{-1} with V = wishart_scale * I; omega defaults to Nb.
  double wishart_scale = 1.0;
  std::optional<double> wishart_dof;
  double alpha_mean = 0.0;
  double alpha_variance = 1000.0;
  double gamma_mean = 0.0;
  double gamma_variance = 1000.0;
  double shape_a = 0.01;
  double shape_b = 0.01;
  double height_a = 0.01;
  double height_b = 0.01;
  double smoothing_a = 1.0;
  double smoothing_b = 0.005;
  double spline_ridge_precision = 1e-6;
  double dispersion_a = 0.01;
  double dispersion_b = 0.01;
  double xi_mean = 0.0;
  double xi_variance = 1000.0;
};

struct QuadratureSpec {
  quadrature::RuleKind rule = quadrature::RuleKind::Kronrod15;
  int points = 15;
};

struct ModelSpec {
  std::vector<MarkerSpec> markers;
  EventSpec event;
  PriorSet priors;
  std::string time_column = "time";
  bool block_diagonal_re = false;
  QuadratureSpec quadrature;
};

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

struct MarkerObservation {
  double time = 0.0;
  double value = 0.0;
  /// Aligned with Dataset::row_columns.
  std::vector<double> row;
};

struct SubjectRecord {
  std::string id;
  double event_time = 0.0;
  int status = 0;
  std::map<std::string, double> baseline;
  /// One list per marker, aligned with Dataset::marker_names.
  std::vector<std::vector<MarkerObservation>> markers;
};

struct Dataset {
  std::vector<std::string> marker_names;
  std::vector<std::string> row_columns;
  std::vector<SubjectRecord> subjects;
  std::size_t dropped_after_event = 0;

  int row_column_index(const std::string& name) const;
};

/// Reads long.csv and surv.csv from `dir`. Marker rows after the subject's event time are dropped.
Dataset load_dataset(const ModelSpec& spec, const std::string& dir);

/// Drops observations later than the event time; returns the number removed.
std::size_t drop_post_event_rows(Dataset& data);

// ---------------------------------------------------------------------------
// Validation and prepared layout
// ---------------------------------------------------------------------------

struct Violation {
  std::string kind;  // "MissingColumn" or "InvariantViolation"
  std::string message;
};

struct Dimensions {
  std::size_t n_subjects = 0;
  std::vector<std::size_t> observations_per_subject;
  std::size_t n_markers = 0;
  int re_dim = 0;
};

struct ValidationReport {
  std::vector<Violation> violations;
  Dimensions dims;
  bool ok() const { return violations.empty(); }
  std::string describe() const;
};

ValidationReport validate_spec(const ModelSpec& spec, const Dataset& data);

/// Index layout of one marker inside the shared random-effects vector.
struct MarkerLayout {
  int fixed_dim = 0;
  int random_dim = 0;
  int prob_fixed_dim = 0;
  int prob_random_dim = 0;
  int re_offset = 0;
  int gamma_dim = 0;
  int re_dim() const { return random_dim + prob_random_dim; }
};

struct CauseLayout {
  bool has_intercept = false;
  int alpha_dim = 0;
  int gamma_dim = 0;
  std::vector<int> gamma_offset;  // per marker
};

/// Marker data of one subject, with design rows materialized.
struct PreparedMarker {
  Eigen::VectorXd y;
  Eigen::VectorXd t;
  Eigen::VectorXd offset;
  Eigen::MatrixXd X;
  Eigen::MatrixXd Z;
  Eigen::MatrixXd X_prob;
  Eigen::MatrixXd Z_prob;
  // mu(t) = (x0 + t xt).beta + (z0 + t zt).b, and likewise for the hurdle probability model.
  Eigen::VectorXd x0, xt, z0, zt;
  Eigen::VectorXd xp0, xpt, zp0, zpt;
  // Sums over observations with v = y - offset, so a Gaussian residual sum of squares costs O(1).
  double sum_v = 0.0, sum_t = 0.0, sum_tt = 0.0, sum_vt = 0.0, sum_vv = 0.0;
};

struct PreparedSubject {
  std::string id;
  double time = 0.0;
  int status = 0;
  bool zero_tail = false;
  std::vector<PreparedMarker> markers;
  Eigen::VectorXd w;
  Eigen::VectorXd w_incidence;
  quadrature::ScaledRule nodes;
  /// Per cause: spline basis at the event time and at the quadrature nodes (rows).
  std::vector<Eigen::VectorXd> basis_at_time;
  std::vector<Eigen::MatrixXd> basis_at_nodes;
};

struct PreparedModel {
  ModelSpec spec;
  std::vector<MarkerLayout> markers;
  std::vector<CauseLayout> causes;
  int re_dim = 0;
  int incidence_dim = 0;
  double max_event_time = 0.0;
  double max_time = 0.0;
  quadrature::Rule rule;
  std::vector<std::optional<BSplineBasis>> spline_bases;
  /// Random-walk penalty per cause (empty unless BSpline).
  std::vector<Eigen::MatrixXd> penalties;
  std::vector<PreparedSubject> subjects;

  bool is_cure() const { return spec.event.structure == EventStructure::MixtureCure; }
  std::size_t n() const { return subjects.size(); }
};

/// Validates and materializes designs. Throws Error(InvariantViolation / MissingColumn) on failure.
PreparedModel prepare(const ModelSpec& spec, const Dataset& data);

/// Materializes one subject against an already built layout; `row_columns` names the entries of
/// each observation's row (used for time-varying offsets).
PreparedSubject prepare_subject(const PreparedModel& model, const SubjectRecord& record,
                                const std::vector<std::string>& row_columns);

/// Layout only (no subjects), used by the simulator and for prior-only runs. Spline knots are
/// placed at quantiles of a uniform grid on [0, horizon].
PreparedModel prepare_layout(const ModelSpec& spec, double horizon = 1.0);

/// Evaluates spline bases at a subject's event time and quadrature nodes.
void attach_basis(const PreparedModel& model, PreparedSubject& subject);

int gamma_dim_for(const MarkerSpec& marker, const MarkerLayout& layout);

// ---------------------------------------------------------------------------
// Parameter state
// ---------------------------------------------------------------------------

struct MarkerParams {
  Eigen::VectorXd beta;
  double sigma2 = 1.0;
  Eigen::VectorXd beta_prob;
  double dispersion = 1.0;
};

struct LongitudinalParams {
  std::vector<MarkerParams> markers;
  Eigen::MatrixXd D;
};

struct BaselineParams {
  double shape = 1.0;
  Eigen::VectorXd heights;
  double spline_intercept = 0.0;
  Eigen::VectorXd spline_coef;
  double smoothing = 1.0;
};

struct CauseParams {
  Eigen::VectorXd alpha;
  Eigen::VectorXd gamma;
  BaselineParams baseline;
};

/// Row-major so a subject's random effects are contiguous.
using RandomEffects = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VecRef = Eigen::Ref<const Eigen::VectorXd>;

struct ParamState {
  /// Only class, or the uncured class (u = 1) for cure models.
  LongitudinalParams longitudinal;
  /// Cured class (u = 0) for cure models.
  std::optional<LongitudinalParams> cured;
  std::vector<CauseParams> causes;
  Eigen::VectorXd xi;
  RandomEffects b;  // n x Nb
  std::vector<int> uncured;

  const LongitudinalParams& longitudinal_for(int u) const {
    return (u == 0 && cured) ? *cured : longitudinal;
  }
  LongitudinalParams& longitudinal_for(int u) { return (u == 0 && cured) ? *cured : longitudinal; }
};

/// Least-squares starting point; deterministic in `seed`.
ParamState initial_state(const PreparedModel& model, std::uint64_t seed);

/// Zero-valued state with every block sized for `model` and `n_subjects`.
ParamState empty_state(const PreparedModel& model, std::size_t n_subjects);

/// Checks sizes and support (sigma2 > 0, D SPD, u constraints). Returns "" when valid.
std::string check_state(const PreparedModel& model, const ParamState& state);

/// Canonical 1-based scalar names for the monitored groups, e.g. beta[1][2], Sigma[1][2].
/// Groups: beta, beta_prob, sigma2, r, Sigma, Sigma_diag, alpha, gamma, nu, h, spline,
/// tau_spline, xi, b. Throws UnknownParameter for anything else.
std::vector<std::string> parameter_names(const PreparedModel& model,
                                         const std::vector<std::string>& groups);

/// Values in the order of parameter_names.
void parameter_values(const PreparedModel& model, const ParamState& state,
                      const std::vector<std::string>& groups, std::vector<double>& out);

/// Every group except b and Sigma_diag.
std::vector<std::string> default_monitor_groups();

std::string to_string(MarkerFamily f);
std::string to_string(AssociationKind k);
std::string to_string(BaselineKind k);
std::string to_string(EventStructure s);
MarkerFamily parse_family(const std::string& s);
AssociationKind parse_association(const std::string& s);
BaselineKind parse_baseline(const std::string& s);
EventStructure parse_structure(const std::string& s);

}  // namespace jointfuse
