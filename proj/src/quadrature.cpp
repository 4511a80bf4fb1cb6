#include "jointfuse/quadrature.hpp"

#include "jointfuse/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

namespace jointfuse::quadrature {

Rule legendre_rule(int points) {
  if (points < 2 || points > 64) {
    throw Error(ErrorKind::UnsupportedOrder,
                "Gauss-Legendre order " + std::to_string(points) + " outside [2, 64]");
  }
  const int n = points;
  Rule rule;
  rule.kind = RuleKind::Legendre;
  rule.nodes.assign(n, 0.0);
  rule.weights.assign(n, 0.0);

  // Roots are symmetric, so only the upper half is iterated.
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0;
      double p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    // Recompute the derivative at the converged root for the weight.
    double p0 = 1.0;
    double p1 = x;
    for (int k = 2; k <= n; ++k) {
      const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = pk;
    }
    dp = n * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = -x;
    rule.nodes[n - 1 - i] = x;
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

Rule kronrod15_rule() {
  // QUADPACK qk15 abscissae and weights (non-negative half).
  static constexpr std::array<double, 8> xgk = {
      0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
      0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
      0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
      0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
  static constexpr std::array<double, 8> wgk = {
      0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
      0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
      0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
      0.204432940075298892414161999234649, 0.209482141084727828012999174891714};

  Rule rule;
  rule.kind = RuleKind::Kronrod15;
  rule.nodes.reserve(15);
  rule.weights.reserve(15);
  for (std::size_t i = 0; i < 7; ++i) {
    rule.nodes.push_back(-xgk[i]);
    rule.weights.push_back(wgk[i]);
  }
  rule.nodes.push_back(0.0);
  rule.weights.push_back(wgk[7]);
  for (std::size_t i = 7; i-- > 0;) {
    rule.nodes.push_back(xgk[i]);
    rule.weights.push_back(wgk[i]);
  }
  return rule;
}

ScaledRule scale_to_interval(const Rule& rule, double a, double b) {
  if (!(b > a)) {
    throw Error(ErrorKind::EmptyInterval,
                "interval [" + std::to_string(a) + ", " + std::to_string(b) + "] is empty");
  }
  ScaledRule out;
  out.a = a;
  out.b = b;
  const double half = 0.5 * (b - a);
  out.nodes.resize(rule.size());
  out.weights.resize(rule.size());
  for (std::size_t k = 0; k < rule.size(); ++k) {
    out.nodes[k] = (rule.nodes[k] + 1.0) * half + a;
    out.weights[k] = rule.weights[k] * half;
  }
  return out;
}

double integrate(const ScaledRule& rule, const std::function<double(double)>& f) {
  double sum = 0.0;
  for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
    const double fx = f(rule.nodes[k]);
    if (!std::isfinite(fx)) {
      throw Error(ErrorKind::NonFiniteIntegrand,
                  "integrand not finite at node " + std::to_string(rule.nodes[k]));
    }
    sum += rule.weights[k] * fx;
  }
  return sum;
}

}  // namespace jointfuse::quadrature
