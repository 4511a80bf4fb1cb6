#include "jointfuse/bspline.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace jointfuse;

namespace {

// Direct Cox-de Boor recursion on the full clamped knot vector.
double cox_de_boor(const std::vector<double>& knots, int i, int p, double t) {
  if (p == 0) {
    const bool last = knots[i + 1] == knots.back() && t == knots.back() && knots[i] < knots[i + 1];
    return (knots[i] <= t && t < knots[i + 1]) || last ? 1.0 : 0.0;
  }
  double v = 0.0;
  const double d1 = knots[i + p] - knots[i];
  const double d2 = knots[i + p + 1] - knots[i + 1];
  if (d1 > 0.0) v += (t - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, t);
  if (d2 > 0.0) v += (knots[i + p + 1] - t) / d2 * cox_de_boor(knots, i + 1, p - 1, t);
  return v;
}

}  // namespace

TEST_CASE("basis matches the Cox-de Boor recursion without the first function") {
  const int degree = 4;
  const std::vector<double> interior = {0.3, 0.5, 0.9, 1.4, 2.0, 2.2};
  const BSplineBasis basis(degree, interior, 0.0, 3.0);
  CHECK(basis.size() == 10);
  std::vector<double> knots(degree + 1, 0.0);
  knots.insert(knots.end(), interior.begin(), interior.end());
  knots.insert(knots.end(), degree + 1, 3.0);
  const int full = static_cast<int>(knots.size()) - degree - 1;
  REQUIRE(full == 11);
  for (double t : {0.0, 0.05, 0.3, 0.77, 1.4, 2.19, 2.9, 3.0}) {
    const Eigen::VectorXd v = basis.evaluate(t);
    REQUIRE(v.size() == 10);
    double total = 0.0;
    for (int i = 0; i < full; ++i) {
      const double ref = cox_de_boor(knots, i, degree, t);
      total += ref;
      if (i > 0) CHECK(std::abs(v[i - 1] - ref) < 1e-12);
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("evaluation clamps outside the boundary") {
  const BSplineBasis basis(3, {1.0, 2.0}, 0.0, 3.0);
  CHECK((basis.evaluate(-1.0) - basis.evaluate(0.0)).norm() == 0.0);
  CHECK((basis.evaluate(5.0) - basis.evaluate(3.0)).norm() == 0.0);
}

TEST_CASE("knots at quantiles of the observed times") {
  std::vector<double> times;
  for (int i = 1; i <= 101; ++i) times.push_back(i * 0.1);
  const auto basis = BSplineBasis::at_quantiles(4, 6, times);
  REQUIRE(basis.interior_knots().size() == 6);
  const double probs[] = {0.1, 0.25, 0.4, 0.55, 0.7, 0.85};
  for (int j = 0; j < 6; ++j) CHECK(std::abs(basis.interior_knots()[j] - empirical_quantile(times, probs[j])) < 1e-12);
  CHECK(basis.lower() == 0.0);
  CHECK(basis.upper() == doctest::Approx(10.1));
}

TEST_CASE("type-7 quantile") {
  std::vector<double> v;
  for (int i = 1; i <= 100; ++i) v.push_back(i);
  CHECK(std::abs(empirical_quantile(v, 0.025) - 3.475) < 1e-12);
  CHECK(empirical_quantile(v, 0.0) == 1.0);
  CHECK(empirical_quantile(v, 1.0) == 100.0);
}

TEST_CASE("penalty identity and rank") {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> z;
  for (int order : {1, 2}) {
    const int L = 10;
    const Eigen::MatrixXd P = penalty_matrix(L, order);
    const Eigen::MatrixXd K = difference_matrix(L, order);
    CHECK(K.rows() == L - order);
    CHECK((P - P.transpose()).norm() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(P);
    int rank = 0;
    for (int j = 0; j < L; ++j) {
      CHECK(es.eigenvalues()[j] > -1e-10);
      if (es.eigenvalues()[j] > 1e-8) ++rank;
    }
    CHECK(rank == L - order);
    for (int rep = 0; rep < 20; ++rep) {
      Eigen::VectorXd c(L);
      for (int j = 0; j < L; ++j) c[j] = z(gen);
      double direct = 0.0;
      for (int j = 0; j + order < L; ++j) {
        const double d = order == 1 ? c[j + 1] - c[j] : c[j + 2] - 2.0 * c[j + 1] + c[j];
        direct += d * d;
      }
      CHECK(std::abs(c.dot(P * c) - direct) < 1e-10 * std::max(1.0, direct));
    }
  }
}
