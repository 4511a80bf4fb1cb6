#include "jointfuse/error.hpp"
#include "jointfuse/likelihood.hpp"
#include "jointfuse/sampler.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>

using namespace jointfuse;
using namespace jointfuse::sampler;

namespace {

McmcConfig small_config(int iterations = 600, int thin = 2) {
  McmcConfig c;
  c.chains = 2;
  c.iterations = iterations;
  c.burnin = iterations / 2;
  c.thin = thin;
  c.seed = 99;
  c.threads = 1;
  return c;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("random number streams") {
  Rng a = Rng::stream(5, 1, 2), b = Rng::stream(5, 1, 2), c = Rng::stream(5, 2, 2), d = Rng::stream(5, 1, 3);
  bool differ_c = false, differ_d = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a();
    CHECK(x == b());
    differ_c |= x != c();
    differ_d |= x != d();
  }
  CHECK(differ_c);
  CHECK(differ_d);
  Rng r = Rng::stream(1, 0, 0);
  double s = 0.0, ss = 0.0, g = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    const double z = r.normal();
    s += z;
    ss += z * z;
    g += r.gamma(3.0, 2.0);
  }
  CHECK(std::abs(s / n) < 4.0 / std::sqrt(n));
  CHECK(std::abs(ss / n - 1.0) < 4.0 * std::sqrt(2.0 / n));
  CHECK(std::abs(g / n - 1.5) < 4.0 * std::sqrt(0.75 / n));
}

TEST_CASE("configuration invariants") {
  McmcConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.burnin_iterations() == 10000);
  CHECK(c.retained() == 1000);
  for (auto change : std::vector<std::function<void(McmcConfig&)>>{
           [](McmcConfig& m) { m.burnin = m.iterations; }, [](McmcConfig& m) { m.thin = 0; },
           [](McmcConfig& m) { m.chains = 0; }, [](McmcConfig& m) { m.burnin = -1; }}) {
    McmcConfig bad;
    change(bad);
    CHECK_THROWS_AS(bad.validate(), Error);
  }
}

TEST_CASE("thread count resolution") {
  McmcConfig c;
  c.chains = 3;
  c.threads = 2;
  CHECK(resolve_threads(c) == 2);
  c.threads = 8;
  CHECK(resolve_threads(c) == 3);
  c.threads = 0;
  setenv("JOINTFUSE_THREADS", "1", 1);
  CHECK(resolve_threads(c) == 1);
  unsetenv("JOINTFUSE_THREADS");
  CHECK(resolve_threads(c) >= 1);
}

TEST_CASE("conjugate variance update") {
  Rng rng = Rng::stream(2, 0, 0);
  const double a = 0.01, b = 0.01, N = 10000.0, ssr = 4.0 * N;
  const double shape = a + N / 2, scale = b + ssr / 2;
  const double mean = scale / (shape - 1), var = mean * mean / (shape - 2);
  const int draws = 100000;
  double s = 0.0;
  for (int i = 0; i < draws; ++i) {
    const double x = conjugate_sigma2_update(ssr, N, a, b, rng);
    REQUIRE(x > 0.0);
    s += x;
  }
  CHECK(std::abs(s / draws - mean) < 3.0 * std::sqrt(var / draws));
  CHECK(std::abs(s / draws - 4.0) < 0.01 * 4.0);

  // N = 0 draws from the prior IG(3, 2), whose mean and variance are 1.
  double p = 0.0;
  for (int i = 0; i < draws; ++i) p += conjugate_sigma2_update(Eigen::VectorXd(), 3.0, 2.0, rng);
  CHECK(std::abs(p / draws - 1.0) < 4.0 * std::sqrt(1.0 / draws));

  const Eigen::VectorXd res = Eigen::VectorXd::Constant(50, 2.0);
  Rng r1 = Rng::stream(3, 0, 0), r2 = Rng::stream(3, 0, 0);
  CHECK(conjugate_sigma2_update(res, 1.0, 1.0, r1) == conjugate_sigma2_update(200.0, 50.0, 1.0, 1.0, r2));
}

TEST_CASE("conjugate covariance update") {
  Eigen::Matrix2d D0;
  D0 << 1.0, 0.5, 0.5, 2.0;
  const Eigen::Matrix2d L = D0.llt().matrixL();
  Rng rng = Rng::stream(4, 0, 0);
  const int n = 100000;
  RandomEffects b(n, 2);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d z(rng.normal(), rng.normal());
    b.row(i) = (L * z).transpose();
  }
  const Eigen::MatrixXd R = Eigen::MatrixXd::Identity(2, 2);
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(2, 2);
  const int draws = 400;
  for (int k = 0; k < draws; ++k) {
    const Eigen::MatrixXd D = conjugate_wishart_update_from(b, R, 2.0, rng);
    REQUIRE(D.llt().info() == Eigen::Success);
    REQUIRE((D - D.transpose()).norm() == 0.0);
    mean += D / draws;
  }
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) CHECK(std::abs(mean(i, j) - D0(i, j)) < 0.02 * std::abs(D0(i, j)));
  }

  // n = 0: a prior draw, E[D] = R / (dof - p - 1).
  const double dof = 7.0;
  Eigen::MatrixXd prior_mean = Eigen::MatrixXd::Zero(2, 2), prior_sq = Eigen::MatrixXd::Zero(2, 2);
  const int m = 40000;
  for (int k = 0; k < m; ++k) {
    const Eigen::MatrixXd D = conjugate_wishart_update(Eigen::MatrixXd::Zero(2, 2), 0.0, R, dof, rng);
    REQUIRE(D.llt().info() == Eigen::Success);
    prior_mean += D / m;
    prior_sq += D.cwiseProduct(D) / m;
  }
  const Eigen::MatrixXd expected = R / (dof - 3.0);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double se = std::sqrt((prior_sq(i, j) - prior_mean(i, j) * prior_mean(i, j)) / m);
      CHECK(std::abs(prior_mean(i, j) - expected(i, j)) < 4.0 * se);
    }
  }
  // Nearly singular scatter still gives a positive definite draw.
  Eigen::MatrixXd S(2, 2);
  S << 1e6, 1e6 - 1e-6, 1e6 - 1e-6, 1e6;
  for (int k = 0; k < 50; ++k) CHECK(conjugate_wishart_update(S, 3.0, 1e-12 * R, 2.0, rng).llt().info() == Eigen::Success);
}

TEST_CASE("cure class full conditional") {
  ModelSpec spec = support::gaussian_spec();
  spec.event.structure = EventStructure::MixtureCure;
  spec.event.incidence_covariate_columns = {"intercept", "x1"};
  const PreparedModel m = support::simulated_model(spec, 80, 14);
  ParamState st = support::truth_for(spec);
  st.b = RandomEffects::Constant(80, 2, 0.2);
  st.uncured.assign(80, 1);
  st.cured = st.longitudinal;
  st.causes[0].alpha[0] = -800.0;
  int checked = 0;
  for (std::size_t i = 0; i < m.n(); ++i) {
    const auto& s = m.subjects[i];
    if (s.status == 1 || s.zero_tail) continue;
    const double p = logistic(s.w_incidence.dot(st.xi));
    CHECK(std::abs(cure_class_full_conditional(m, st, i) - p) < 1e-12);
    ++checked;
  }
  CHECK(checked > 10);
  ParamState zero = st;
  zero.xi[0] = -800.0;
  ParamState one = st;
  one.xi[0] = 800.0;
  one.causes[0].alpha[0] = 0.5;
  for (std::size_t i = 0; i < m.n(); ++i) {
    if (m.subjects[i].status == 1 || m.subjects[i].zero_tail) continue;
    CHECK(cure_class_full_conditional(m, zero, i) == 0.0);
    CHECK(cure_class_full_conditional(m, one, i) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("chains are reproducible and depend only on seed and chain id") {
  const ModelSpec spec = support::gaussian_spec(AssociationKind::CurrentValue, BaselineKind::Weibull);
  const PreparedModel m = support::simulated_model(spec, 60, 3);
  McmcConfig c = small_config();
  c.chains = 3;
  const auto all = run(m, c);
  REQUIRE(all.size() == 3);
  const ChainOutput again = run_chain(m, c, 2);
  CHECK(all[2].draws == again.draws);
  CHECK(all[0].draws != all[1].draws);
  c.threads = 3;
  const auto parallel = run(m, c);
  for (int k = 0; k < 3; ++k) {
    CHECK(parallel[k].draws == all[k].draws);
    CHECK(parallel[k].chain_id == k);
  }
  CHECK(all[0].draws.rows() == c.retained());
  CHECK(all[0].draws.allFinite());
  CHECK(all[0].names == parameter_names(m, c.monitor));
  c.seed = 100;
  CHECK(run_chain(m, c, 0).draws != all[0].draws);
}

TEST_CASE("thinning keeps every k-th draw of the unthinned run") {
  const ModelSpec spec = support::gaussian_spec();
  const PreparedModel m = support::simulated_model(spec, 40, 5);
  McmcConfig one = small_config(400, 1);
  McmcConfig four = small_config(400, 4);
  const ChainOutput a = run_chain(m, one, 0), b = run_chain(m, four, 0);
  REQUIRE(a.draws.rows() == 200);
  REQUIRE(b.draws.rows() == 50);
  for (Eigen::Index r = 0; r < b.draws.rows(); ++r) CHECK(b.draws.row(r) == a.draws.row(4 * r + 3));
}

TEST_CASE("proposal scales are frozen after burn-in") {
  ModelSpec spec = support::gaussian_spec(AssociationKind::CurrentValue, BaselineKind::PiecewiseConstant);
  spec.markers.push_back(support::hurdle_marker("count"));
  const PreparedModel m = support::simulated_model(spec, 40, 6);
  const ChainOutput out = run_chain(m, small_config(400), 0);
  REQUIRE(!out.block_names.empty());
  CHECK(out.scales_at_burnin == out.scales_final);
  CHECK(out.block_names.size() == out.scales_final.size());
}

TEST_CASE("prior-only run reproduces the prior") {
  ModelSpec spec;
  MarkerSpec mk;
  mk.name = "y";
  mk.fixed_design_columns = {"intercept", "time"};
  mk.random_design_columns = {"intercept"};
  spec.markers.push_back(mk);
  spec.priors.beta_mean = 0.4;
  spec.priors.beta_variance = 2.0;
  spec.priors.precision_shape = 3.0;
  spec.priors.precision_rate = 2.0;
  spec.priors.alpha_variance = 1.0;
  spec.priors.gamma_variance = 1.0;
  Dataset empty;
  empty.marker_names = {"y"};
  empty.row_columns = {"time", "y"};
  const PreparedModel m = prepare(spec, empty);
  McmcConfig c = small_config(60000, 5);
  c.burnin = 10000;
  const ChainOutput out = run_chain(m, c, 0);
  const double sd = std::sqrt(2.0);
  for (const std::string name : {"beta[1][1]", "beta[1][2]"}) {
    const int col = support::column(out.names, name);
    REQUIRE(col >= 0);
    for (const auto& [p, z] : std::vector<std::pair<double, double>>{{0.025, -1.959964}, {0.5, 0.0}, {0.975, 1.959964}}) {
      const double q = 0.4 + sd * z;
      const Eigen::VectorXd below = (out.draws.col(col).array() <= q).cast<double>();
      const double se = support::batch_means_se(below);
      CHECK_MESSAGE(std::abs(below.mean() - p) < 3.0 * se + 1e-3, name << " p=" << p << " got " << below.mean() << " se " << se);
    }
  }
}

TEST_CASE("degenerate data run") {
  ModelSpec spec = support::gaussian_spec();
  std::vector<support::SubjectInput> subjects;
  for (int i = 0; i < 20; ++i) {
    support::SubjectInput s;
    s.time = 1.0 + 0.05 * i;
    s.status = 0;
    s.covariates = {{"x1", i % 2}, {"w1", 0.1 * i}};
    s.obs = {{{0.0, 1.0}, {0.5, 1.0}, {1.0, 1.0}}};
    subjects.push_back(s);
  }
  const PreparedModel m = prepare(spec, support::hand_dataset(spec, subjects));
  McmcConfig c = small_config(2000, 2);
  const ChainOutput out = run_chain(m, c, 0);
  CHECK(out.draws.allFinite());
  const int col = support::column(out.names, "sigma2[1]");
  REQUIRE(col >= 0);
  std::vector<double> s(out.draws.col(col).data(), out.draws.col(col).data() + out.draws.rows());
  std::sort(s.begin(), s.end());
  CHECK(s.front() > 0.0);
  CHECK(s[s.size() / 2] < 0.05);
}

TEST_CASE("cure constraints hold at every retained draw") {
  ModelSpec spec = support::gaussian_spec();
  spec.event.structure = EventStructure::MixtureCure;
  spec.event.incidence_covariate_columns = {"intercept", "x1"};
  const PreparedModel m = support::simulated_model(spec, 80, 21);
  int zero_tail = 0, censored = 0;
  for (const auto& s : m.subjects) {
    zero_tail += s.zero_tail;
    censored += s.status == 0 && !s.zero_tail;
  }
  REQUIRE(zero_tail > 0);
  REQUIRE(censored > 0);
  int checks = 0;
  std::vector<int> flips(m.n(), 0);
  std::vector<int> last(m.n(), -1);
  ChainHooks hooks;
  hooks.on_retained = [&](int, const ParamState& st) {
    for (std::size_t i = 0; i < m.n(); ++i) {
      if (m.subjects[i].status == 1) CHECK(st.uncured[i] == 1);
      if (m.subjects[i].zero_tail) CHECK(st.uncured[i] == 0);
      if (last[i] >= 0 && last[i] != st.uncured[i]) ++flips[i];
      last[i] = st.uncured[i];
    }
    ++checks;
  };
  const ChainOutput out = run_chain(m, small_config(1000, 1), 0, hooks);
  CHECK(checks == 500);
  int moving = 0;
  for (int f : flips) moving += f > 0;
  CHECK(moving > 0);
}

TEST_CASE("normal-normal calibration") {
  const ModelSpec spec = support::normal_normal_spec();
  const Dataset data = support::normal_normal_data(spec, 30, 8);
  const PreparedModel m = prepare(spec, data);
  REQUIRE(m.re_dim == 0);
  const auto post = support::normal_normal_posterior(spec, data);
  McmcConfig c = small_config(40000, 2);
  c.burnin = 5000;
  const ChainOutput out = run_chain(m, c, 0);
  for (int j = 0; j < 2; ++j) {
    const int col = support::column(out.names, "beta[1][" + std::to_string(j + 1) + "]");
    const Eigen::VectorXd x = out.draws.col(col);
    const double mean_se = support::batch_means_se(x);
    CHECK(std::abs(x.mean() - post.mean[j]) < 3.0 * mean_se);
    const Eigen::VectorXd sq = (x.array() - post.mean[j]).square();
    CHECK(std::abs(sq.mean() - post.cov(j, j)) < 3.0 * support::batch_means_se(sq));
  }
}

TEST_CASE("acceptance rates on the simulated example") {
  const auto cfg = support::load_config("sim_2_3.json");
  const PreparedModel m = prepare(cfg.spec, simulate::simulate_dataset(*cfg.simulation));
  McmcConfig c = cfg.mcmc;
  c.iterations = 8000;
  c.burnin = 4000;
  const ChainOutput out = run_chain(m, c, 0);
  REQUIRE(!out.acceptance.empty());
  for (const auto& [name, rate] : out.acceptance) {
    CHECK_MESSAGE(rate >= 0.2, name << " " << rate);
    CHECK_MESSAGE(rate <= 0.7, name << " " << rate);
  }
}
