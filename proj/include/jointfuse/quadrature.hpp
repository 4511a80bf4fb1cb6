#pragma once

#include <functional>
#include <vector>

namespace jointfuse::quadrature {

enum class RuleKind { Legendre, Kronrod15 };

/// Nodes and weights on [-1, 1]. Nodes are strictly ascending; weights sum to 2.
struct Rule {
  std::vector<double> nodes;
  std::vector<double> weights;
  RuleKind kind = RuleKind::Kronrod15;

  std::size_t size() const { return nodes.size(); }
};

/// A rule mapped onto [a, b].
struct ScaledRule {
  std::vector<double> nodes;
  std::vector<double> weights;
  double a = 0.0;
  double b = 0.0;
};

/// K-point Gauss-Legendre rule, 2 <= K <= 64, by Newton iteration on P_K.
Rule legendre_rule(int points);

/// Tabulated 15-point Kronrod extension of the 7-point Gauss rule.
Rule kronrod15_rule();

ScaledRule scale_to_interval(const Rule& rule, double a, double b);

/// Sum of w_k f(x_k). Throws NonFiniteIntegrand if f is not finite at a node.
double integrate(const ScaledRule& rule, const std::function<double(double)>& f);

}  // namespace jointfuse::quadrature
