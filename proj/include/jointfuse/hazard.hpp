#pragma once

#include "jointfuse/model.hpp"

#include <Eigen/Dense>

namespace jointfuse::hazard {

/// Threshold below which |A1| is treated as zero in the closed forms.
inline constexpr double kLinearEpsilon = 1e-8;
/// Cumulative hazards are clamped here.
inline constexpr double kMaxCumulativeHazard = 1e300;

/// Log-hazard exponent without the baseline: A0 + A1 t + A2 t^2. A2 is non-zero only for
/// cumulative-effect associations with a time slope.
struct Exponent {
  double A0 = 0.0;
  double A1 = 0.0;
  double A2 = 0.0;

  double at(double t) const { return A0 + t * (A1 + t * A2); }
};

/// Read-only view of one cause's baseline. `log_scale` is log lambda_0 for Constant and Weibull
/// and the spline intercept for BSpline; it is ignored for PiecewiseConstant.
struct Baseline {
  const BaselineHazardSpec* spec = nullptr;
  const BaselineParams* params = nullptr;
  double log_scale = 0.0;
  const BSplineBasis* basis = nullptr;
};

/// log lambda_0(t). Piecewise intervals are right-closed, (s_{j-1}, s_j], with the last open.
double baseline_log_hazard(const Baseline& baseline, double t);

/// Same, with the spline basis already evaluated at t.
double baseline_log_hazard(const Baseline& baseline, double t, const Eigen::VectorXd* basis_row);

/// Interval index j (0-based) of t for knots s_1..s_{J-1}.
int piecewise_interval(const std::vector<double>& knots, double t);

/// Linear predictor of a marker as m0 + m1 t, excluding any offset.
struct AffinePredictor {
  double m0 = 0.0;
  double m1 = 0.0;
};

AffinePredictor marker_predictor(const PreparedMarker& marker, const MarkerParams& params,
                                 const MarkerLayout& layout, const VecRef& b);

/// Association contribution of one marker at time t. `gamma` and `b_marker` are the marker's
/// slices of gamma and of the random-effects vector.
double association_terms(AssociationKind kind, const double* gamma, const AffinePredictor& mu,
                         const double* b_marker, int b_dim, double t);

/// Adds one marker's association into the exponent polynomial.
void add_association(Exponent& e, AssociationKind kind, const double* gamma, const AffinePredictor& mu,
                     const double* b_marker, int b_dim);

/// Full exponent of cause l for a subject (event covariates plus all associations).
Exponent exponent_for(const PreparedModel& model, const PreparedSubject& subject, int cause,
                      const CauseParams& cause_params, const LongitudinalParams& longitudinal,
                      const VecRef& b);

/// lambda0 e^{A0} (e^{A1 t} - 1) / A1, with a second-order expansion when |A1| <= 1e-8.
double cum_hazard_closed_constant(double A0, double A1, double lambda0, double t);

/// Weibull baseline lambda0 nu t^(nu-1) with an affine exponent, via a positive-term series.
double cum_hazard_closed_weibull(double A0, double A1, double lambda0, double nu, double t);

/// Piecewise-constant baseline with heights h_1..h_J and knots s_1..s_{J-1}.
double cum_hazard_closed_piecewise(double A0, double A1, const Eigen::VectorXd& heights,
                                   const std::vector<double>& knots, double t);

/// Sum of w_k exp(log lambda_0(x_k) + A(x_k)) over a rule scaled to [0, t].
double cum_hazard_quadrature(const Baseline& baseline, const Exponent& e, const quadrature::ScaledRule& rule,
                             const Eigen::MatrixXd* basis_at_nodes = nullptr);

/// Picks a closed form when one applies, else quadrature over `rule` (already scaled to [0, t]).
double cumulative_hazard(const Baseline& baseline, const Exponent& e, double t, const quadrature::ScaledRule& rule,
                         const Eigen::MatrixXd* basis_at_nodes = nullptr);

/// Same, building the scaled rule from `rule`.
double cumulative_hazard_at(const Baseline& baseline, const Exponent& e, double t, const quadrature::Rule& rule);

/// Baseline view of cause `cause` in a state.
Baseline baseline_view(const PreparedModel& model, int cause, const CauseParams& params);

/// event * log lambda(T) - Lambda(T) for one cause of one subject.
double cause_log_density(const PreparedModel& model, const PreparedSubject& subject, int cause,
                         const CauseParams& cause_params, const LongitudinalParams& longitudinal,
                         const VecRef& b);

/// Sum over causes of I(delta = l) log lambda_l(T) - Lambda_l(T), using the uncured-class
/// longitudinal parameters.
double log_event_density(const PreparedModel& model, std::size_t subject, const ParamState& state);

}  // namespace jointfuse::hazard
