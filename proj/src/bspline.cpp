#include "jointfuse/bspline.hpp"

#include "jointfuse/error.hpp"

#include <algorithm>
#include <cmath>

namespace jointfuse {

BSplineBasis::BSplineBasis(int degree, std::vector<double> interior_knots, double lower,
                           double upper)
    : degree_(degree), interior_(std::move(interior_knots)), lower_(lower), upper_(upper) {
  if (degree_ < 1) throw Error(ErrorKind::InvariantViolation, "spline degree must be >= 1");
  if (!(upper_ > lower_)) throw Error(ErrorKind::InvariantViolation, "spline boundary is empty");
  std::sort(interior_.begin(), interior_.end());
  // Coincident interior knots are nudged apart so the basis stays full rank.
  const double tiny = 1e-9 * (upper_ - lower_);
  for (std::size_t i = 0; i < interior_.size(); ++i) {
    const double floor = i == 0 ? lower_ : interior_[i - 1];
    interior_[i] = std::clamp(interior_[i], floor + tiny, upper_ - tiny);
  }
  knots_.assign(degree_ + 1, lower_);
  knots_.insert(knots_.end(), interior_.begin(), interior_.end());
  knots_.insert(knots_.end(), degree_ + 1, upper_);
}

BSplineBasis BSplineBasis::at_quantiles(int degree, int interior_knot_count,
                                        std::vector<double> times) {
  if (times.empty()) throw Error(ErrorKind::InvariantViolation, "no times to place spline knots");
  if (interior_knot_count < 1) {
    throw Error(ErrorKind::InvariantViolation, "spline needs at least one interior knot");
  }
  std::vector<double> knots;
  const double step = interior_knot_count > 1 ? 0.75 / (interior_knot_count - 1) : 0.0;
  for (int j = 0; j < interior_knot_count; ++j) {
    const double p = interior_knot_count > 1 ? 0.1 + step * j : 0.5;
    knots.push_back(empirical_quantile(times, p));
  }
  const double upper = *std::max_element(times.begin(), times.end());
  return BSplineBasis(degree, std::move(knots), 0.0, upper);
}

Eigen::VectorXd BSplineBasis::evaluate(double t) const {
  const double x = std::clamp(t, lower_, upper_);
  const int n_full = static_cast<int>(knots_.size()) - degree_ - 1;
  // Locate span [knots_[span], knots_[span+1]) with the right end mapped to the last span.
  int span = degree_;
  while (span < n_full - 1 && x >= knots_[span + 1]) ++span;

  // Cox-de Boor, non-zero functions N_{span-degree..span}.
  std::vector<double> N(degree_ + 1, 0.0), left(degree_ + 1), right(degree_ + 1);
  N[0] = 1.0;
  for (int j = 1; j <= degree_; ++j) {
    left[j] = x - knots_[span + 1 - j];
    right[j] = knots_[span + j] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double denom = right[r + 1] + left[j - r];
      const double temp = denom > 0.0 ? N[r] / denom : 0.0;
      N[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    N[j] = saved;
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(size());
  for (int r = 0; r <= degree_; ++r) {
    const int idx = span - degree_ + r - 1;  // drop the first function
    if (idx >= 0 && idx < size()) out[idx] = N[r];
  }
  return out;
}

Eigen::MatrixXd difference_matrix(int size, int order) {
  if (order < 1 || order >= size) {
    throw Error(ErrorKind::InvariantViolation, "difference order must be in [1, size)");
  }
  Eigen::MatrixXd K = Eigen::MatrixXd::Identity(size, size);
  for (int o = 0; o < order; ++o) {
    const int rows = static_cast<int>(K.rows()) - 1;
    K = (K.bottomRows(rows) - K.topRows(rows)).eval();
  }
  return K;
}

Eigen::MatrixXd penalty_matrix(int size, int order) {
  const Eigen::MatrixXd K = difference_matrix(size, order);
  return K.transpose() * K;
}

double empirical_quantile(std::vector<double> values, double p) {
  if (values.empty()) throw Error(ErrorKind::DomainError, "quantile of empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

}  // namespace jointfuse
