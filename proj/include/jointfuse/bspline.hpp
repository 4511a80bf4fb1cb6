#pragma once

#include <Eigen/Dense>

#include <vector>

namespace jointfuse {

/// B-spline basis on [lower, upper] without the first (intercept) function, so
/// it has degree + interior knot count columns and no constant in its span
/// that would be confounded with a separate intercept.
class BSplineBasis {
 public:
  BSplineBasis(int degree, std::vector<double> interior_knots, double lower, double upper);

  /// Interior knots at empirical quantiles of `times`, from 0.1 in steps that end at 0.85.
  static BSplineBasis at_quantiles(int degree, int interior_knot_count, std::vector<double> times);

  int size() const { return degree_ + static_cast<int>(interior_.size()); }
  int degree() const { return degree_; }
  const std::vector<double>& interior_knots() const { return interior_; }
  double lower() const { return lower_; }
  double upper() const { return upper_; }

  /// Basis values at t; t outside [lower, upper] is clamped.
  Eigen::VectorXd evaluate(double t) const;

 private:
  int degree_;
  std::vector<double> interior_;
  double lower_;
  double upper_;
  std::vector<double> knots_;
};

/// m-th order difference matrix K_m with (size - m) rows.
Eigen::MatrixXd difference_matrix(int size, int order);

/// Psi_m = K_m' K_m.
Eigen::MatrixXd penalty_matrix(int size, int order);

/// Type-7 empirical quantile of unsorted data.
double empirical_quantile(std::vector<double> values, double p);

}  // namespace jointfuse
