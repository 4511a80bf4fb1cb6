#include "jointfuse/error.hpp"
#include "jointfuse/hazard.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace jointfuse;
using namespace jointfuse::hazard;

namespace {

struct View {
  BaselineHazardSpec spec;
  BaselineParams params;
  std::optional<BSplineBasis> basis;
  double log_scale = 0.0;

  Baseline get() const { return Baseline{&spec, &params, log_scale, basis ? &*basis : nullptr}; }
};

View constant_view(double lambda0) {
  View v;
  v.spec.kind = BaselineKind::Constant;
  v.log_scale = std::log(lambda0);
  return v;
}

View weibull_view(double lambda0, double nu) {
  View v;
  v.spec.kind = BaselineKind::Weibull;
  v.params.shape = nu;
  v.log_scale = std::log(lambda0);
  return v;
}

View piecewise_view() {
  View v;
  v.spec.kind = BaselineKind::PiecewiseConstant;
  v.spec.knots = {1, 2, 3, 4};
  v.params.heights.resize(5);
  v.params.heights << 0.1, 0.2, 0.3, 0.4, 0.5;
  return v;
}

View spline_view(double intercept, const Eigen::VectorXd& coef) {
  View v;
  v.spec.kind = BaselineKind::BSpline;
  v.basis.emplace(4, std::vector<double>{0.5, 1.0, 1.5, 2.0, 2.5, 3.0}, 0.0, 3.5);
  v.params.spline_coef = coef;
  v.log_scale = intercept;
  return v;
}

// Step-hazard integral by Simpson's rule on each constant piece.
double piecewise_oracle(double A0, double A1, const Eigen::VectorXd& h, const std::vector<double>& knots, double t) {
  double total = 0.0, start = 0.0;
  for (Eigen::Index j = 0; j < h.size() && start < t; ++j) {
    const double end = j < static_cast<Eigen::Index>(knots.size()) ? std::min(knots[j], t) : t;
    if (end > start) total += support::simpson([&](double s) { return h[j] * std::exp(A0 + A1 * s); }, start, end);
    start = end;
  }
  return total;
}

double trapezoid(const std::function<double(double)>& f, double a, double b, int points) {
  const double h = (b - a) / (points - 1);
  double s = 0.5 * (f(a) + f(b));
  for (int j = 1; j < points - 1; ++j) s += f(a + j * h);
  return s * h;
}

}  // namespace

TEST_CASE("baseline log hazard examples") {
  const View w = weibull_view(0.7, 1.0);
  for (double t : {0.01, 0.5, 3.0, 40.0}) CHECK(std::abs(baseline_log_hazard(w.get(), t) - std::log(0.7)) < 1e-15);

  const View p = piecewise_view();
  CHECK(std::abs(baseline_log_hazard(p.get(), 2.5) - std::log(0.3)) < 1e-15);
  CHECK(std::abs(baseline_log_hazard(p.get(), 2.0) - std::log(0.2)) < 1e-15);
  CHECK(std::abs(baseline_log_hazard(p.get(), 2.0 + 1e-12) - std::log(0.3)) < 1e-15);
  CHECK(std::abs(baseline_log_hazard(p.get(), 0.3) - std::log(0.1)) < 1e-15);
  CHECK(std::abs(baseline_log_hazard(p.get(), 100.0) - std::log(0.5)) < 1e-15);

  const View s = spline_view(-0.8, Eigen::VectorXd::Zero(10));
  for (double t : {0.1, 1.7, 3.4}) CHECK(baseline_log_hazard(s.get(), t) == -0.8);

  const View wb = weibull_view(0.5, 2.5);
  CHECK(std::abs(baseline_log_hazard(wb.get(), 1.7) - std::log(0.5 * 2.5 * std::pow(1.7, 1.5))) < 1e-14);

  for (const View& v : {w, p, s}) {
    try {
      baseline_log_hazard(v.get(), 0.0);
      FAIL("expected NonPositiveTime");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::NonPositiveTime);
    }
  }
}

TEST_CASE("association term examples") {
  const AffinePredictor mu{0.7, -0.4};
  const double b[] = {0.3, -0.1};
  const double zero[] = {0.0, 0.0};
  for (auto kind : {AssociationKind::CurrentValue, AssociationKind::CurrentSlope, AssociationKind::CumulativeEffect,
                    AssociationKind::SharedRandomEffects, AssociationKind::CurrentValuePlusSlope}) {
    CHECK(association_terms(kind, zero, mu, b, 2, 1.3) == 0.0);
  }
  const double g[] = {1.5};
  CHECK(std::abs(association_terms(AssociationKind::CumulativeEffect, g, mu, b, 2, 2.0) -
                 1.5 * (2 * 0.7 + 2 * -0.4)) < 1e-15);
  const double g2[] = {1.0, 2.0};
  CHECK(std::abs(association_terms(AssociationKind::SharedRandomEffects, g2, mu, b, 2, 5.0) - 0.1) < 1e-15);
  CHECK(std::abs(association_terms(AssociationKind::CurrentValue, g, mu, b, 2, 2.0) - 1.5 * (0.7 - 0.8)) < 1e-15);
  CHECK(std::abs(association_terms(AssociationKind::CurrentSlope, g, mu, b, 2, 2.0) - 1.5 * -0.4) < 1e-15);
  CHECK(std::abs(association_terms(AssociationKind::CurrentValuePlusSlope, g2, mu, b, 2, 2.0) -
                 ((0.7 - 0.8) + 2.0 * -0.4)) < 1e-15);
}

TEST_CASE("exponent polynomial reproduces the association at every time") {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> z;
  for (auto kind : {AssociationKind::CurrentValue, AssociationKind::CurrentSlope, AssociationKind::CumulativeEffect,
                    AssociationKind::SharedRandomEffects, AssociationKind::CurrentValuePlusSlope}) {
    for (int rep = 0; rep < 20; ++rep) {
      const AffinePredictor mu{z(gen), z(gen)};
      const double g[] = {z(gen), z(gen), z(gen)};
      const double b[] = {z(gen), z(gen), z(gen)};
      Exponent e;
      add_association(e, kind, g, mu, b, 3);
      for (double t : {0.0, 0.4, 2.2}) CHECK(std::abs(e.at(t) - association_terms(kind, g, mu, b, 3, t)) < 1e-12);
    }
  }
}

TEST_CASE("closed-form constant cumulative hazard") {
  CHECK(cum_hazard_closed_constant(0.0, 0.0, 1.0, 2.0) == 2.0);
  CHECK(cum_hazard_closed_constant(0.5, -0.25, 1.0, 0.0) == 0.0);
  const double expected = std::exp(0.5) / -0.25 * (std::exp(-0.5) - 1.0);
  const double oracle = support::simpson([](double s) { return std::exp(0.5 - 0.25 * s); }, 0.0, 2.0);
  CHECK(std::abs(oracle - expected) < 1e-12);
  const double v = cum_hazard_closed_constant(0.5, -0.25, 1.0, 2.0);
  CHECK(std::abs(v - oracle) < 1e-8);
  CHECK(std::abs(v - 2.5948) < 1e-4);
}

TEST_CASE("closed-form piecewise cumulative hazard") {
  Eigen::VectorXd one(1);
  one << 0.37;
  for (double t : {0.2, 1.0, 4.5}) {
    CHECK(std::abs(cum_hazard_closed_piecewise(0.1, 0.2, one, {}, t) - cum_hazard_closed_constant(0.1, 0.2, 0.37, t)) <
          1e-13);
  }
  const View p = piecewise_view();
  const double oracle = piecewise_oracle(0.1, 0.2, p.params.heights, p.spec.knots, 2.5);
  CHECK(std::abs(cum_hazard_closed_piecewise(0.1, 0.2, p.params.heights, p.spec.knots, 2.5) - oracle) < 1e-8);
  for (double A1 : {0.0, 0.2, -1.3}) {
    for (double s : p.spec.knots) {
      const double left = cum_hazard_closed_piecewise(0.1, A1, p.params.heights, p.spec.knots, s - 1e-10);
      const double right = cum_hazard_closed_piecewise(0.1, A1, p.params.heights, p.spec.knots, s + 1e-10);
      CHECK(std::abs(right - left) < 1e-8);
    }
  }
}

TEST_CASE("quadrature cumulative hazard for Weibull baselines") {
  const quadrature::Rule rule = quadrature::kronrod15_rule();
  const View w1 = weibull_view(0.8, 1.0);
  for (double A1 : {-0.7, 0.3, 1.1}) {
    const Exponent e{0.2, A1, 0.0};
    const double q = cum_hazard_quadrature(w1.get(), e, quadrature::scale_to_interval(rule, 0.0, 1.9));
    CHECK(std::abs(q - cum_hazard_closed_constant(0.2, A1, 0.8, 1.9)) < 1e-8);
  }
  const View w2 = weibull_view(0.8, 2.0);
  const Exponent e2{0.3, 0.0, 0.0};
  const double q2 = cum_hazard_quadrature(w2.get(), e2, quadrature::scale_to_interval(rule, 0.0, 1.6));
  CHECK(std::abs(q2 - 0.8 * std::exp(0.3) * 1.6 * 1.6) < 1e-10);

  // nu = 1.5: the integrand has an unbounded derivative at 0, which limits a 15-point rule to about
  // 1e-4; the cumulative hazard used by the engine takes the series form instead.
  const View w15 = weibull_view(1.0, 1.5);
  const Exponent e15{0.2, -0.3, 0.0};
  const double oracle = trapezoid(
      [](double s) { return s > 0.0 ? 1.5 * std::sqrt(s) * std::exp(0.2 - 0.3 * s) : 0.0; }, 0.0, 1.7, 10001);
  const double q15 = cum_hazard_quadrature(w15.get(), e15, quadrature::scale_to_interval(rule, 0.0, 1.7));
  CHECK(std::abs(q15 - oracle) < 1e-4);
  CHECK(std::abs(cumulative_hazard_at(w15.get(), e15, 1.7, rule) - oracle) < 1e-6);
  CHECK(std::abs(cum_hazard_closed_weibull(0.2, -0.3, 1.0, 1.5, 1.7) - oracle) < 1e-6);
}

TEST_CASE("Weibull series matches numerical integration") {
  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 200; ++rep) {
    const double nu = 0.3 + 3.0 * u(gen);
    const double t = 0.05 + 4.0 * u(gen);
    const double A1 = (2.0 * u(gen) - 1.0) * 8.0 / t;
    const double A0 = 2.0 * u(gen) - 1.0;
    // Substituting s = t x^20 makes the integrand smooth at the origin for every nu >= 0.3.
    const double oracle = support::simpson(
        [&](double x) {
          return x > 0.0 ? nu * std::pow(t, nu) * 20.0 * std::pow(x, 20.0 * nu - 1.0) * std::exp(A0 + A1 * t * std::pow(x, 20.0)) : 0.0;
        },
        0.0, 1.0, 200000);
    const double v = cum_hazard_closed_weibull(A0, A1, 1.0, nu, t);
    CHECK_MESSAGE(std::abs(v - oracle) <= 1e-6 * oracle, "nu=" << nu << " t=" << t << " A1=" << A1);
  }
  CHECK(std::abs(cum_hazard_closed_weibull(0.1, 0.0, 0.5, 2.0, 1.5) - 0.5 * std::exp(0.1) * 2.25) < 1e-15);
  for (double A1 : {-3.0, -0.2, 0.4, 2.0}) {
    CHECK(std::abs(cum_hazard_closed_weibull(0.1, A1, 0.5, 1.0, 1.5) - cum_hazard_closed_constant(0.1, A1, 0.5, 1.5)) <
          1e-13);
  }
  // Far tails: the limit lambda0 e^A0 nu Gamma(nu) / |A1|^nu and clamping.
  const double tail = cum_hazard_closed_weibull(0.0, -500.0, 1.0, 1.5, 3.0);
  CHECK(std::abs(tail - 1.5 * std::tgamma(1.5) / std::pow(500.0, 1.5)) < 1e-13 * tail);
  CHECK(cum_hazard_closed_weibull(0.0, 800.0, 1.0, 1.5, 3.0) == kMaxCumulativeHazard);
}

TEST_CASE("cumulative hazard is zero at zero and nondecreasing") {
  const quadrature::Rule rule = quadrature::kronrod15_rule();
  Eigen::VectorXd coef(10);
  coef << 0.3, -0.2, 0.5, 0.1, -0.4, 0.2, 0.0, 0.3, -0.1, 0.2;
  const std::vector<View> views = {constant_view(0.5), weibull_view(0.5, 0.7), weibull_view(0.5, 1.8),
                                   piecewise_view(), spline_view(-0.5, coef)};
  const std::vector<Exponent> exps = {{0.0, 0.0, 0.0}, {0.3, -1.2, 0.0}, {-0.2, 0.8, 0.0}, {0.1, 0.4, -0.3},
                                      {0.1, -0.5, 0.2}};
  for (const auto& v : views) {
    for (const auto& e : exps) {
      CHECK(cumulative_hazard_at(v.get(), e, 0.0, rule) == 0.0);
      double prev = 0.0;
      for (int j = 1; j <= 70; ++j) {
        const double cur = cumulative_hazard_at(v.get(), e, 0.05 * j, rule);
        CHECK(cur >= prev);
        prev = cur;
      }
    }
  }
}

TEST_CASE("closed forms agree with Kronrod quadrature") {
  const quadrature::Rule rule = quadrature::kronrod15_rule();
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> ut(0.05, 5.0), u(-1.0, 1.0);
  const View c = constant_view(1.0);
  const View p = piecewise_view();
  for (int rep = 0; rep < 200; ++rep) {
    const double t = ut(gen);
    const double A1 = u(gen) * 5.0 / t;
    const double A0 = u(gen);
    const Exponent e{A0, A1, 0.0};
    const double closed = cum_hazard_closed_constant(A0, A1, 1.0, t);
    const double quad = cum_hazard_quadrature(c.get(), e, quadrature::scale_to_interval(rule, 0.0, t));
    CHECK(std::abs(closed - quad) <= 1e-6 * closed);
    // The step integrand is smooth on each piece, so the rule is applied piece by piece.
    double quad_pw = 0.0, start = 0.0;
    for (std::size_t j = 0; j <= p.spec.knots.size() && start < t; ++j) {
      const double end = j < p.spec.knots.size() ? std::min(p.spec.knots[j], t) : t;
      if (end > start) quad_pw += cum_hazard_quadrature(p.get(), e, quadrature::scale_to_interval(rule, start, end));
      start = end;
    }
    const double closed_pw = cum_hazard_closed_piecewise(A0, A1, p.params.heights, p.spec.knots, t);
    CHECK(std::abs(closed_pw - quad_pw) <= 1e-6 * closed_pw);
  }
}

TEST_CASE("closed forms are continuous as A1 approaches zero") {
  // closed(A1) - closed(0) = closed(0) A1 t / 2 + O(A1^2), so the relative gap is at most 1e-9 for t <= 2.
  const View p = piecewise_view();
  for (double t : {0.3, 1.0, 1.9}) {
    const double at0 = cum_hazard_closed_constant(0.2, 0.0, 0.9, t);
    for (double A1 : {1e-9, -1e-9}) CHECK(std::abs(cum_hazard_closed_constant(0.2, A1, 0.9, t) - at0) <= 1e-9 * at0);
    const double pw0 = cum_hazard_closed_piecewise(0.2, 0.0, p.params.heights, p.spec.knots, t);
    for (double A1 : {1e-9, -1e-9}) {
      CHECK(std::abs(cum_hazard_closed_piecewise(0.2, A1, p.params.heights, p.spec.knots, t) - pw0) <= 1e-9 * pw0);
    }
  }
  // Either side of the expansion threshold, against extended-precision evaluation.
  for (double t : {0.3, 2.7, 6.0}) {
    for (double A1 : {0.5e-8, 0.99e-8, 1.01e-8, 3e-8, -0.99e-8, -1.01e-8}) {
      const long double exact = 0.9L * std::exp(0.2L) * std::expm1(static_cast<long double>(A1) * t) / A1;
      const double v = cum_hazard_closed_constant(0.2, A1, 0.9, t);
      CHECK(std::abs(v - static_cast<double>(exact)) <= 1e-14 * v);
    }
  }
}

TEST_CASE("large exponents clamp instead of overflowing") {
  CHECK(cum_hazard_closed_constant(0.0, 800.0, 1.0, 2.0) == kMaxCumulativeHazard);
  const double v = cum_hazard_closed_constant(0.0, -800.0, 1.0, 2.0);
  CHECK(std::abs(v - 1.0 / 800.0) < 1e-15);
}

namespace {

using support::SubjectInput;

PreparedModel one_subject_model(const ModelSpec& spec, double T, int status, double w1 = 0.0) {
  SubjectInput s;
  s.time = T;
  s.status = status;
  s.covariates = {{"x1", 0.2}, {"w1", w1}};
  s.obs = {{{0.0, 0.4}, {0.5 * T, 0.1}}};
  return prepare(spec, support::hand_dataset(spec, {s}));
}

}  // namespace

TEST_CASE("log event density examples") {
  ModelSpec spec = support::gaussian_spec();
  {
    const PreparedModel m = one_subject_model(spec, 1.0, 1);
    ParamState st = support::truth_for(spec);
    st.b = RandomEffects::Zero(1, 2);
    st.uncured = {1};
    st.causes[0].alpha.setZero();
    st.causes[0].gamma.setZero();
    CHECK(std::abs(log_event_density(m, 0, st) - -1.0) < 1e-14);
  }
  {
    const PreparedModel m = one_subject_model(spec, 1.4, 0, 0.5);
    ParamState st = support::truth_for(spec);
    st.b = RandomEffects::Zero(1, 2);
    st.b(0, 0) = 0.2;
    st.uncured = {1};
    const Baseline view = baseline_view(m, 0, st.causes[0]);
    const Exponent e = exponent_for(m, m.subjects[0], 0, st.causes[0], st.longitudinal, st.b.row(0).transpose());
    CHECK(std::abs(log_event_density(m, 0, st) + cumulative_hazard_at(view, e, 1.4, m.rule)) < 1e-14);
  }
  // A second cause with zero hazard leaves the single-event value unchanged.
  ModelSpec cr = spec;
  cr.event.structure = EventStructure::CompetingRisks;
  cr.event.n_causes = 2;
  cr.event.baselines = {BaselineHazardSpec{}, BaselineHazardSpec{}};
  for (int status : {0, 1}) {
    const PreparedModel single = one_subject_model(spec, 1.3, status, 0.4);
    const PreparedModel two = one_subject_model(cr, 1.3, status, 0.4);
    ParamState s1 = support::truth_for(spec);
    s1.b = RandomEffects::Constant(1, 2, 0.1);
    s1.uncured = {1};
    ParamState s2 = support::truth_for(cr);
    s2.longitudinal = s1.longitudinal;
    s2.b = s1.b;
    s2.uncured = {1};
    s2.causes[0] = s1.causes[0];
    s2.causes[1].alpha[0] = -800.0;
    CHECK(std::exp(s2.causes[1].alpha[0]) == 0.0);
    CHECK(std::abs(log_event_density(single, 0, s1) - log_event_density(two, 0, s2)) < 1e-14);
  }
}

TEST_CASE("baseline scale and event intercept are confounded") {
  const double c = 2.7;
  std::vector<ModelSpec> specs;
  for (auto kind : {BaselineKind::Constant, BaselineKind::Weibull, BaselineKind::PiecewiseConstant,
                    BaselineKind::BSpline}) {
    ModelSpec s = support::gaussian_spec(AssociationKind::CurrentValue, kind);
    s.event.covariate_columns = {"one", "w1"};
    specs.push_back(s);
  }
  for (const auto& spec : specs) {
    const PreparedModel m = prepare(spec, simulate::simulate_dataset([&] {
                                      auto sc = support::scenario_for(spec, 30, 4);
                                      for (auto& g : sc.covariates) {
                                        if (g.name == "one") g.mean = 1.0, g.sd = 0.0;
                                      }
                                      return sc;
                                    }()));
    ParamState st = support::truth_for(spec);
    st.b = RandomEffects::Constant(30, 2, 0.1);
    st.uncured.assign(30, 1);
    ParamState moved = st;
    auto& cp = moved.causes[0];
    const int covariate = m.causes[0].has_intercept ? 1 : 0;
    switch (spec.event.baselines[0].kind) {
      case BaselineKind::Constant:
      case BaselineKind::Weibull:
        cp.alpha[0] += std::log(c);
        break;
      case BaselineKind::PiecewiseConstant:
        cp.baseline.heights *= c;
        break;
      case BaselineKind::BSpline:
        cp.baseline.spline_intercept += std::log(c);
        break;
    }
    cp.alpha[covariate] -= std::log(c);
    for (std::size_t i = 0; i < m.n(); ++i) {
      const double a = log_event_density(m, i, st);
      CHECK(std::abs(a - log_event_density(m, i, moved)) < 1e-11 * std::max(1.0, std::abs(a)));
    }
  }
}
