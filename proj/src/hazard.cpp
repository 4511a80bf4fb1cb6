#include "jointfuse/hazard.hpp"

#include "jointfuse/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace jointfuse::hazard {

namespace {

/// log(expm1(x) / x), finite for every real x.
double log_relative_growth(double x) {
  if (std::abs(x) < 1e-12) return x / 2.0;
  if (x > 1.0) return x + std::log1p(-std::exp(-x)) - std::log(x);
  return std::log(std::expm1(x) / x);
}

double clamp_cumulative(double log_value) {
  if (log_value > std::log(kMaxCumulativeHazard)) return kMaxCumulativeHazard;
  return std::exp(log_value);
}

}  // namespace

int piecewise_interval(const std::vector<double>& knots, double t) {
  // First knot with s_j >= t gives interval j under right-closed intervals.
  return static_cast<int>(std::lower_bound(knots.begin(), knots.end(), t) - knots.begin());
}

double baseline_log_hazard(const Baseline& baseline, double t) {
  if (baseline.spec->kind == BaselineKind::BSpline) {
    if (!(t > 0.0)) throw Error(ErrorKind::NonPositiveTime, "baseline hazard at t <= 0");
    if (!baseline.basis) throw Error(ErrorKind::InvariantViolation, "spline baseline without a basis");
    const Eigen::VectorXd row = baseline.basis->evaluate(t);
    return baseline_log_hazard(baseline, t, &row);
  }
  return baseline_log_hazard(baseline, t, nullptr);
}

double baseline_log_hazard(const Baseline& baseline, double t, const Eigen::VectorXd* basis_row) {
  if (!(t > 0.0)) throw Error(ErrorKind::NonPositiveTime, "baseline hazard at t <= 0");
  const BaselineParams& p = *baseline.params;
  switch (baseline.spec->kind) {
    case BaselineKind::Constant:
      return baseline.log_scale;
    case BaselineKind::Weibull:
      return baseline.log_scale + std::log(p.shape) + (p.shape - 1.0) * std::log(t);
    case BaselineKind::PiecewiseConstant:
      return std::log(p.heights[piecewise_interval(baseline.spec->knots, t)]);
    case BaselineKind::BSpline:
      return baseline.log_scale + basis_row->dot(p.spline_coef);
  }
  return 0.0;
}

AffinePredictor marker_predictor(const PreparedMarker& marker, const MarkerParams& params,
                                 const MarkerLayout& layout, const VecRef& b) {
  AffinePredictor mu;
  mu.m0 = marker.x0.dot(params.beta);
  mu.m1 = marker.xt.dot(params.beta);
  for (int j = 0; j < layout.random_dim; ++j) {
    mu.m0 += marker.z0[j] * b[layout.re_offset + j];
    mu.m1 += marker.zt[j] * b[layout.re_offset + j];
  }
  return mu;
}

double association_terms(AssociationKind kind, const double* gamma, const AffinePredictor& mu,
                         const double* b_marker, int b_dim, double t) {
  switch (kind) {
    case AssociationKind::CurrentValue:
      return gamma[0] * (mu.m0 + mu.m1 * t);
    case AssociationKind::CurrentSlope:
      return gamma[0] * mu.m1;
    case AssociationKind::CumulativeEffect:
      return gamma[0] * (mu.m0 * t + mu.m1 * t * t / 2.0);
    case AssociationKind::SharedRandomEffects: {
      double s = 0.0;
      for (int j = 0; j < b_dim; ++j) s += gamma[j] * b_marker[j];
      return s;
    }
    case AssociationKind::CurrentValuePlusSlope:
      return gamma[0] * (mu.m0 + mu.m1 * t) + gamma[1] * mu.m1;
  }
  return 0.0;
}

void add_association(Exponent& e, AssociationKind kind, const double* gamma, const AffinePredictor& mu,
                     const double* b_marker, int b_dim) {
  switch (kind) {
    case AssociationKind::CurrentValue:
      e.A0 += gamma[0] * mu.m0;
      e.A1 += gamma[0] * mu.m1;
      break;
    case AssociationKind::CurrentSlope:
      e.A0 += gamma[0] * mu.m1;
      break;
    case AssociationKind::CumulativeEffect:
      e.A1 += gamma[0] * mu.m0;
      e.A2 += gamma[0] * mu.m1 / 2.0;
      break;
    case AssociationKind::SharedRandomEffects:
      for (int j = 0; j < b_dim; ++j) e.A0 += gamma[j] * b_marker[j];
      break;
    case AssociationKind::CurrentValuePlusSlope:
      e.A0 += gamma[0] * mu.m0 + gamma[1] * mu.m1;
      e.A1 += gamma[0] * mu.m1;
      break;
  }
}

Exponent exponent_for(const PreparedModel& model, const PreparedSubject& subject, int cause,
                      const CauseParams& cp, const LongitudinalParams& longitudinal, const VecRef& b) {
  Exponent e;
  const auto& layout = model.causes[cause];
  const int shift = layout.has_intercept ? 1 : 0;
  for (Eigen::Index j = 0; j < subject.w.size(); ++j) e.A0 += cp.alpha[shift + j] * subject.w[j];
  for (std::size_t k = 0; k < model.markers.size(); ++k) {
    const auto& lay = model.markers[k];
    const auto mu = marker_predictor(subject.markers[k], longitudinal.markers[k], lay, b);
    add_association(e, model.spec.markers[k].association.kind, cp.gamma.data() + layout.gamma_offset[k], mu,
                    b.data() + lay.re_offset, lay.re_dim());
  }
  return e;
}

double cum_hazard_closed_constant(double A0, double A1, double lambda0, double t) {
  if (t <= 0.0) return 0.0;
  if (std::abs(A1) <= kLinearEpsilon) {
    return std::min(lambda0 * std::exp(A0) * t * (1.0 + A1 * t / 2.0), kMaxCumulativeHazard);
  }
  return clamp_cumulative(std::log(lambda0) + A0 + std::log(t) + log_relative_growth(A1 * t));
}

double cum_hazard_closed_weibull(double A0, double A1, double lambda0, double nu, double t) {
  if (t <= 0.0) return 0.0;
  const double log_front = std::log(lambda0) + A0 + nu * std::log(t);
  const double z = A1 * t;
  if (z == 0.0) return clamp_cumulative(log_front);
  // Integral of nu s^(nu-1) e^(A1 s) over [0, t] divided by t^nu, as a confluent hypergeometric
  // series with positive terms: M(nu, nu+1, z) for z > 0, e^z M(1, nu+1, -z) for z < 0.
  const double w = std::abs(z);
  if (z < 0.0 && w > 700.0) {
    // The upper incomplete gamma tail is below double precision here.
    return clamp_cumulative(std::log(lambda0) + A0 + std::log(nu) + std::lgamma(nu) - nu * std::log(-A1));
  }
  if (z > 0.0 && log_front + z - std::log(z) > std::log(kMaxCumulativeHazard) + 1.0) return kMaxCumulativeHazard;
  const double log_w = std::log(w);
  double log_sum = -std::numeric_limits<double>::infinity();
  double log_term = 0.0;
  for (long k = 0;; ++k) {
    const double lt = z > 0.0 ? log_term + std::log(nu / (nu + k)) : log_term;
    const double hi = std::max(log_sum, lt);
    log_sum = hi + std::log1p(std::exp(std::min(log_sum, lt) - hi));
    if (k > w && lt < log_sum - 40.0) break;
    if (k > 10000000) throw Error(ErrorKind::NonFiniteIntegrand, "Weibull cumulative hazard series did not converge");
    // Ratio of successive terms: z / (k + 1) for the first series, w / (nu + k + 1) for the second.
    log_term += log_w - std::log(z > 0.0 ? k + 1.0 : nu + k + 1.0);
  }
  return clamp_cumulative(log_front + log_sum - (z < 0.0 ? w : 0.0));
}

double cum_hazard_closed_piecewise(double A0, double A1, const Eigen::VectorXd& heights,
                                   const std::vector<double>& knots, double t) {
  if (t <= 0.0) return 0.0;
  const bool flat = std::abs(A1) <= kLinearEpsilon;
  double total = 0.0;
  double start = 0.0;
  for (Eigen::Index j = 0; j < heights.size() && start < t; ++j) {
    const double end = j < static_cast<Eigen::Index>(knots.size()) ? std::min(knots[j], t) : t;
    const double len = end - start;
    if (len > 0.0) {
      const double log_piece = flat ? std::log(heights[j]) + A0 + std::log(len)
                                    : std::log(heights[j]) + A0 + A1 * start + std::log(len) +
                                          log_relative_growth(A1 * len);
      total += clamp_cumulative(log_piece);
    }
    start = end;
  }
  return std::min(total, kMaxCumulativeHazard);
}

double cum_hazard_quadrature(const Baseline& baseline, const Exponent& e, const quadrature::ScaledRule& rule,
                             const Eigen::MatrixXd* basis_at_nodes) {
  double total = 0.0;
  const bool spline = baseline.spec->kind == BaselineKind::BSpline;
  Eigen::VectorXd spline_part;
  if (spline) {
    if (basis_at_nodes) {
      spline_part = *basis_at_nodes * baseline.params->spline_coef;
    } else {
      spline_part.resize(static_cast<Eigen::Index>(rule.nodes.size()));
      for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
        spline_part[k] = baseline.basis->evaluate(rule.nodes[k]).dot(baseline.params->spline_coef);
      }
    }
  }
  for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
    const double x = rule.nodes[k];
    const double log_base = spline ? baseline.log_scale + spline_part[k] : baseline_log_hazard(baseline, x, nullptr);
    const double value = rule.weights[k] * std::exp(log_base + e.at(x));
    if (std::isnan(value)) throw Error(ErrorKind::NonFiniteIntegrand, "hazard integrand is NaN");
    total += value;
  }
  return std::min(total, kMaxCumulativeHazard);
}

double cumulative_hazard(const Baseline& baseline, const Exponent& e, double t, const quadrature::ScaledRule& rule,
                         const Eigen::MatrixXd* basis_at_nodes) {
  if (t <= 0.0) return 0.0;
  if (e.A2 == 0.0) {
    switch (baseline.spec->kind) {
      case BaselineKind::Constant:
        return cum_hazard_closed_constant(e.A0 + baseline.log_scale, e.A1, 1.0, t);
      case BaselineKind::PiecewiseConstant:
        return cum_hazard_closed_piecewise(e.A0, e.A1, baseline.params->heights, baseline.spec->knots, t);
      case BaselineKind::Weibull:
        return cum_hazard_closed_weibull(e.A0 + baseline.log_scale, e.A1, 1.0, baseline.params->shape, t);
      case BaselineKind::BSpline:
        break;
    }
  }
  if (baseline.spec->kind == BaselineKind::PiecewiseConstant) {
    // The step integrand is only smooth between knots, so the rule is mapped onto each piece.
    const auto& knots = baseline.spec->knots;
    double total = 0.0;
    double start = 0.0;
    for (std::size_t j = 0; j <= knots.size() && start < t; ++j) {
      const double end = j < knots.size() ? std::min(knots[j], t) : t;
      if (end > start) {
        quadrature::ScaledRule piece = rule;
        const double ratio = (end - start) / (rule.b - rule.a);
        piece.a = start;
        piece.b = end;
        for (std::size_t k = 0; k < piece.nodes.size(); ++k) {
          piece.nodes[k] = start + (rule.nodes[k] - rule.a) * ratio;
          piece.weights[k] = rule.weights[k] * ratio;
        }
        total += cum_hazard_quadrature(baseline, e, piece);
      }
      start = end;
    }
    return std::min(total, kMaxCumulativeHazard);
  }
  return cum_hazard_quadrature(baseline, e, rule, basis_at_nodes);
}

double cumulative_hazard_at(const Baseline& baseline, const Exponent& e, double t, const quadrature::Rule& rule) {
  if (t <= 0.0) return 0.0;
  return cumulative_hazard(baseline, e, t, quadrature::scale_to_interval(rule, 0.0, t));
}

Baseline baseline_view(const PreparedModel& model, int cause, const CauseParams& params) {
  Baseline view;
  view.spec = &model.spec.event.baselines[cause];
  view.params = &params.baseline;
  if (model.causes[cause].has_intercept) {
    view.log_scale = params.alpha[0];
  } else if (view.spec->kind == BaselineKind::BSpline) {
    view.log_scale = params.baseline.spline_intercept;
  }
  if (model.spline_bases[cause]) view.basis = &*model.spline_bases[cause];
  return view;
}

double cause_log_density(const PreparedModel& model, const PreparedSubject& subject, int cause,
                         const CauseParams& cause_params, const LongitudinalParams& longitudinal,
                         const VecRef& b) {
  const Baseline view = baseline_view(model, cause, cause_params);
  const Exponent e = exponent_for(model, subject, cause, cause_params, longitudinal, b);
  const bool spline = view.spec->kind == BaselineKind::BSpline;
  const Eigen::MatrixXd* nodes_basis = spline ? &subject.basis_at_nodes[cause] : nullptr;
  double value = -cumulative_hazard(view, e, subject.time, subject.nodes, nodes_basis);
  if (subject.status == cause + 1) {
    value += baseline_log_hazard(view, subject.time, spline ? &subject.basis_at_time[cause] : nullptr) +
             e.at(subject.time);
  }
  return value;
}

double log_event_density(const PreparedModel& model, std::size_t i, const ParamState& state) {
  const auto& subject = model.subjects[i];
  const VecRef b = state.b.row(static_cast<Eigen::Index>(i)).transpose();
  double total = 0.0;
  for (std::size_t l = 0; l < model.causes.size(); ++l) {
    total += cause_log_density(model, subject, static_cast<int>(l), state.causes[l], state.longitudinal, b);
  }
  return total;
}

}  // namespace jointfuse::hazard
