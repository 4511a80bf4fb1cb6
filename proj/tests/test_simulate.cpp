#include "jointfuse/error.hpp"
#include "jointfuse/hazard.hpp"
#include "jointfuse/simulate.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace jointfuse;
using namespace jointfuse::simulate;

namespace {

double constant_cum_hazard(double A0, double A1, double lambda0, double t) {
  return A1 == 0.0 ? lambda0 * std::exp(A0) * t : lambda0 * std::exp(A0) * std::expm1(A1 * t) / A1;
}

/// One Gaussian marker with a random intercept and no covariates.
ModelSpec plain_spec(BaselineKind baseline) {
  ModelSpec spec;
  MarkerSpec m;
  m.name = "y";
  m.fixed_design_columns = {"intercept", "time"};
  m.random_design_columns = {"intercept"};
  spec.markers.push_back(m);
  spec.event.baselines[0].kind = baseline;
  if (baseline == BaselineKind::PiecewiseConstant) spec.event.baselines[0].knots = {0.5, 1.2};
  return spec;
}

}  // namespace

TEST_CASE("closed-form inversion") {
  const Inversion a = invert_constant_baseline(std::exp(-2.0), 0.0, 0.0, 1.0);
  CHECK(!a.censored);
  CHECK(std::abs(a.time - 2.0) < 1e-14);
  const Inversion c = invert_constant_baseline(0.5, 0.0, -2.0, 0.1);
  CHECK(c.censored);
  CHECK(std::isinf(c.time));
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 1000; ++rep) {
    const double uu = 1e-6 + (1 - 2e-6) * u(gen), A0 = 2 * u(gen) - 1, A1 = 6 * u(gen) - 3, lambda0 = 0.05 + u(gen);
    const Inversion inv = invert_constant_baseline(uu, A0, A1, lambda0);
    const double arg = 1.0 - A1 * std::log(uu) / (lambda0 * std::exp(A0));
    CHECK(inv.censored == (arg <= 0.0));
    if (!inv.censored) {
      CHECK(inv.time > 0.0);
      CHECK(std::abs(constant_cum_hazard(A0, A1, lambda0, inv.time) + std::log(uu)) < 1e-10 * std::max(1.0, -std::log(uu)));
    }
  }
  for (double bad : {0.0, 1.0, -0.3, 1.2}) {
    try {
      invert_constant_baseline(bad, 0.0, 0.0, 1.0);
      FAIL("expected DomainError");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::DomainError);
    }
  }
}

TEST_CASE("inversion by root finding") {
  const auto weibull2 = [](double t) { return t * t; };
  const Inversion w = invert_by_root_finding(std::exp(-4.0), weibull2, 200.0);
  CHECK(!w.censored);
  CHECK(std::abs(w.time - 2.0) < 1e-9);

  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 300; ++rep) {
    const double uu = 0.001 + 0.998 * u(gen), A0 = 2 * u(gen) - 1, A1 = 4 * u(gen) - 2, lambda0 = 0.1 + u(gen);
    const Inversion closed = invert_constant_baseline(uu, A0, A1, lambda0);
    const Inversion brent = invert_by_root_finding(uu, [&](double t) { return constant_cum_hazard(A0, A1, lambda0, t); }, 1e4);
    if (closed.censored) {
      CHECK(brent.censored);
    } else {
      CHECK(!brent.censored);
      CHECK(std::abs(brent.time - closed.time) < 1e-8 * std::max(1.0, closed.time));
    }
  }

  const auto hz = [](double t) { return 0.3 * std::pow(t, 1.7) * std::exp(0.2 * t); };
  double prev = std::numeric_limits<double>::infinity();
  for (double uu = 0.01; uu < 1.0; uu += 0.01) {
    const Inversion inv = invert_by_root_finding(uu, hz, 1e3);
    CHECK(inv.time <= prev);
    prev = inv.time;
  }

  const Inversion cens = invert_by_root_finding(0.01, [](double t) { return 1.0 - std::exp(-t); }, 50.0);
  CHECK(cens.censored);
  CHECK(cens.time == 50.0);
}

TEST_CASE("zero-truncated negative binomial draws") {
  sampler::Rng rng = sampler::Rng::stream(3, 0, 0);
  const double eta = 2.0, r = 0.8;
  const int n = 200000;
  std::vector<double> counts(40, 0.0);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double y = draw_truncated_negbin(eta, r, rng);
    REQUIRE(y >= 1.0);
    REQUIRE(y == std::floor(y));
    sum += y;
    if (y < 40) counts[static_cast<int>(y)] += 1.0;
  }
  const double kappa = r / (r + eta);
  const double p0 = std::pow(kappa, r);
  auto pmf = [&](int y) {
    return std::exp(std::lgamma(r + y) - std::lgamma(r) - std::lgamma(y + 1.0) + r * std::log(kappa) +
                    y * std::log(1 - kappa)) / (1 - p0);
  };
  for (int y = 1; y <= 6; ++y) {
    const double p = pmf(y);
    CHECK(std::abs(counts[y] / n - p) < 4.0 * std::sqrt(p * (1 - p) / n));
  }
  const double mean = eta / (1 - p0);
  double var = 0.0;
  for (int y = 1; y < 2000; ++y) var += pmf(y) * (y - mean) * (y - mean);
  CHECK(std::abs(sum / n - mean) < 4.0 * std::sqrt(var / n));
}

TEST_CASE("longitudinal draws") {
  ModelSpec spec = support::gaussian_spec();
  spec.markers.push_back(support::hurdle_marker("count"));
  auto sc = support::scenario_for(spec, 1, 1);
  const PreparedModel layout = prepare_layout(spec, 2.0);
  SubjectRecord rec;
  rec.id = "1";
  rec.baseline = {{"x1", 0.4}, {"w1", 0.0}};
  rec.markers.resize(2);
  const PreparedSubject ps = prepare_subject(layout, rec, {});
  LongitudinalParams lp = sc.truth.longitudinal;
  lp.markers[0].sigma2 = 0.0;
  lp.markers[1].beta_prob[0] = 800.0;
  Eigen::VectorXd b(3);
  b << 0.3, -0.2, 0.1;
  sampler::Rng rng = sampler::Rng::stream(1, 0, 0);
  const Eigen::MatrixXd y = simulate_longitudinal(sc, layout, ps, rec.baseline, lp, b, rng);
  const auto& beta = lp.markers[0].beta;
  for (std::size_t g = 0; g < sc.grid.size(); ++g) {
    const double t = sc.grid[g];
    const double mu = beta[0] + beta[1] * t + beta[2] * 0.4 + b[0] + b[1] * t;
    CHECK(y(g, 0) == doctest::Approx(mu).epsilon(1e-14));
    CHECK(y(g, 1) == 0.0);
  }
}

TEST_CASE("marker moments at baseline") {
  ModelSpec spec = plain_spec(BaselineKind::Constant);
  SimScenario sc = support::scenario_for(spec, 100000, 77);
  sc.truth.longitudinal.markers[0].beta << 0.5, 0.3;
  sc.truth.longitudinal.markers[0].sigma2 = 0.6;
  sc.truth.longitudinal.D(0, 0) = 0.9;
  sc.grid = {0.0};
  const SimulatedData d = simulate_subjects(sc);
  double s = 0.0, ss = 0.0;
  for (const auto& sub : d.subjects) {
    REQUIRE(sub.times.size() == 1);
    s += sub.values(0, 0);
    ss += sub.values(0, 0) * sub.values(0, 0);
  }
  const double n = 100000.0;
  const double mean = s / n, var = ss / n - mean * mean;
  CHECK(std::abs(mean - 0.5) < 0.01 * 0.5);
  CHECK(std::abs(var - 1.5) < 0.01 * 1.5);
}

TEST_CASE("event times follow the generating survival curve") {
  for (auto kind : {BaselineKind::Constant, BaselineKind::Weibull, BaselineKind::PiecewiseConstant}) {
    ModelSpec spec = plain_spec(kind);
    SimScenario sc = support::scenario_for(spec, 20000, 5);
    sc.truth.causes[0].gamma.setZero();
    sc.censoring_rate = 0.0;
    sc.administrative_cutoff = 3.0;
    sc.grid = {0.0};
    const PreparedModel layout = prepare_layout(spec, 3.0);
    const hazard::Baseline view = hazard::baseline_view(layout, 0, sc.truth.causes[0]);
    const SimulatedData d = simulate_subjects(sc);
    for (double t : {0.25, 0.5, 1.0, 1.7, 2.5}) {
      const double S = std::exp(-hazard::cumulative_hazard_at(view, hazard::Exponent{}, t, layout.rule));
      double surv = 0.0;
      for (const auto& sub : d.subjects) surv += sub.time > t ? 1.0 : 0.0;
      surv /= static_cast<double>(d.subjects.size());
      const double se = std::sqrt(S * (1 - S) / static_cast<double>(d.subjects.size()));
      CHECK_MESSAGE(std::abs(surv - S) < 3.0 * se, to_string(kind) << " t=" << t << " empirical=" << surv << " model=" << S);
    }
  }
}

TEST_CASE("simulated data validates against its generating spec") {
  std::vector<ModelSpec> specs;
  for (auto assoc : {AssociationKind::CurrentValue, AssociationKind::CurrentSlope, AssociationKind::CumulativeEffect,
                     AssociationKind::SharedRandomEffects, AssociationKind::CurrentValuePlusSlope}) {
    for (auto base : {BaselineKind::Constant, BaselineKind::Weibull, BaselineKind::PiecewiseConstant,
                      BaselineKind::BSpline}) {
      specs.push_back(support::gaussian_spec(assoc, base));
    }
  }
  ModelSpec multi = support::gaussian_spec(AssociationKind::CurrentValue, BaselineKind::Weibull);
  multi.markers.push_back(support::hurdle_marker("count"));
  multi.markers.push_back(support::binary_marker("flag"));
  specs.push_back(multi);
  ModelSpec cr = support::gaussian_spec();
  cr.event.structure = EventStructure::CompetingRisks;
  cr.event.n_causes = 2;
  cr.event.baselines = {BaselineHazardSpec{}, BaselineHazardSpec{}};
  specs.push_back(cr);
  ModelSpec cure = support::gaussian_spec();
  cure.event.structure = EventStructure::MixtureCure;
  cure.event.incidence_covariate_columns = {"intercept", "x1"};
  specs.push_back(cure);
  for (const auto& spec : specs) {
    const Dataset d = simulate_dataset(support::scenario_for(spec, 80, 31));
    const ValidationReport r = validate_spec(spec, d);
    CHECK_MESSAGE(r.ok(), r.describe());
    int events = 0;
    for (const auto& s : d.subjects) {
      events += s.status > 0;
      for (const auto& obs : s.markers) {
        for (const auto& o : obs) CHECK(o.time <= s.event_time);
      }
    }
    CHECK(events > 0);
  }
  // Both causes occur under competing risks.
  const Dataset d = simulate_dataset(support::scenario_for(cr, 200, 1));
  std::set<int> seen;
  for (const auto& s : d.subjects) seen.insert(s.status);
  CHECK(seen == std::set<int>{0, 1, 2});
}

TEST_CASE("administrative cutoff at zero censors everyone at zero") {
  SimScenario sc = support::scenario_for(support::gaussian_spec(), 50, 3);
  sc.administrative_cutoff = 0.0;
  sc.t_max = 10.0;
  const SimulatedData d = simulate_subjects(sc);
  for (const auto& s : d.subjects) {
    CHECK(s.time == 0.0);
    CHECK(s.status == 0);
    CHECK(s.times == std::vector<double>{0.0});
  }
}

TEST_CASE("cure scenario with vanishing incidence cures everyone") {
  ModelSpec spec = support::gaussian_spec();
  spec.event.structure = EventStructure::MixtureCure;
  spec.event.incidence_covariate_columns = {"intercept"};
  SimScenario sc = support::scenario_for(spec, 300, 8);
  sc.truth.xi[0] = -800.0;
  const SimulatedData d = simulate_subjects(sc);
  for (std::size_t i = 0; i < d.subjects.size(); ++i) {
    CHECK(d.subjects[i].uncured == 0);
    CHECK(d.subjects[i].status == 0);
    CHECK(d.truth.uncured[i] == 0);
  }
}

TEST_CASE("censoring fraction agrees with a large rerun") {
  const auto cfg = support::load_config("sim_2_3.json");
  auto fraction = [](const SimulatedData& d) {
    double c = 0.0;
    for (const auto& s : d.subjects) c += s.status == 0;
    return c / static_cast<double>(d.subjects.size());
  };
  const double small = fraction(simulate_subjects(*cfg.simulation));
  SimScenario big = *cfg.simulation;
  big.n_subjects = 1000000;
  big.seed = 987654321;
  big.grid = {0.0};
  const double large = fraction(simulate_subjects(big));
  CHECK(std::abs(small - large) < 0.05);
  MESSAGE("censoring fraction n=500: " << small << ", n=1e6: " << large);
}

TEST_CASE("simulation is deterministic and subject streams do not depend on n") {
  const auto sc = support::scenario_for(support::gaussian_spec(AssociationKind::CurrentValue, BaselineKind::Weibull), 30, 6);
  const SimulatedData a = simulate_subjects(sc), b = simulate_subjects(sc);
  auto sc_more = sc;
  sc_more.n_subjects = 45;
  const SimulatedData c = simulate_subjects(sc_more);
  for (std::size_t i = 0; i < a.subjects.size(); ++i) {
    CHECK(a.subjects[i].time == b.subjects[i].time);
    CHECK(a.subjects[i].values == b.subjects[i].values);
    CHECK(a.subjects[i].time == c.subjects[i].time);
    CHECK(a.subjects[i].b == c.subjects[i].b);
  }
  auto other = sc;
  other.seed = 7;
  CHECK(simulate_subjects(other).subjects[0].time != a.subjects[0].time);
}

TEST_CASE("scenario validation names the field") {
  auto sc = support::scenario_for(support::gaussian_spec(), 10, 1);
  sc.grid = {0.0, 1.0, 0.5};
  try {
    sc.validate();
    FAIL("expected ConfigError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ConfigError);
    CHECK(std::string(e.what()).find("simulation.grid") != std::string::npos);
  }
  sc = support::scenario_for(support::gaussian_spec(), 10, 1);
  sc.covariates.pop_back();
  CHECK_THROWS_AS(sc.validate(), Error);
}
