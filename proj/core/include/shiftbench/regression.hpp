#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace shiftbench {

/// Monomials of total degree <= degree over the inputs; inputs flagged
/// binary never appear with power > 1. The constant monomial is excluded.
class PolynomialFeatures {
public:
  PolynomialFeatures() = default;
  PolynomialFeatures(int num_inputs, int degree, std::vector<bool> binary);

  int size() const { return static_cast<int>(exponents_.size()); }
  const std::vector<std::vector<int>>& exponents() const { return exponents_; }
  void expand(const Eigen::VectorXd& x, Eigen::Ref<Eigen::VectorXd> out) const;

private:
  std::vector<std::vector<int>> exponents_;
};

/// Weighted ridge regression with an unpenalized intercept on standardized
/// features. Multi-output: one coefficient column per target.
class RidgeRegression {
public:
  RidgeRegression() = default;

  /// X: n x p, Y: n x m, w: n nonnegative weights (empty = unit weights).
  void fit(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, std::span<const double> w, double lambda);
  Eigen::VectorXd predict(const Eigen::VectorXd& x) const;
  /// In-sample R^2 per output (1 for constant targets fitted exactly).
  const Eigen::VectorXd& r_squared() const { return r2_; }

private:
  Eigen::VectorXd x_mean_;
  Eigen::VectorXd x_scale_;
  Eigen::VectorXd y_mean_;
  Eigen::MatrixXd beta_;  // on standardized features
  Eigen::VectorXd r2_;
};

/// Unregularized logistic regression fit by iteratively reweighted least squares.
class LogisticRegression {
public:
  /// X: n x p (no intercept column; one is added), y in {0, 1}.
  void fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int max_iter = 50, double tol = 1e-10);
  double predict_proba(const Eigen::VectorXd& x) const;
  double intercept() const { return coef_(0); }
  Eigen::VectorXd weights() const { return coef_.tail(coef_.size() - 1); }
  int iterations() const { return iterations_; }

private:
  Eigen::VectorXd coef_;
  int iterations_ = 0;
};

} // namespace shiftbench
