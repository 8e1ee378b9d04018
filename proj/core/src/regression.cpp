#include "shiftbench/regression.hpp"

#include <cmath>
#include <functional>

#include "shiftbench/error.hpp"
#include "shiftbench/families.hpp"

namespace shiftbench {

PolynomialFeatures::PolynomialFeatures(int num_inputs, int degree, std::vector<bool> binary)
{
  if (degree < 1 || degree > 3)
    throw DomainError("polynomial degree must be between 1 and 3");
  if (static_cast<int>(binary.size()) != num_inputs)
    throw ContractError("PolynomialFeatures: binary flags do not match input count");
  std::vector<int> e(num_inputs, 0);
  // Graded order: all degree-1 terms, then degree 2, then degree 3.
  for (int total = 1; total <= degree; ++total) {
    std::function<void(int, int)> rec = [&](int pos, int left) {
      if (pos == num_inputs) {
        if (left == 0)
          exponents_.push_back(e);
        return;
      }
      const int cap = binary[pos] ? std::min(1, left) : left;
      for (int k = cap; k >= 0; --k) {
        e[pos] = k;
        rec(pos + 1, left - k);
      }
      e[pos] = 0;
    };
    rec(0, total);
  }
}

void PolynomialFeatures::expand(const Eigen::VectorXd& x, Eigen::Ref<Eigen::VectorXd> out) const
{
  for (std::size_t k = 0; k < exponents_.size(); ++k) {
    double v = 1.0;
    for (std::size_t i = 0; i < exponents_[k].size(); ++i)
      for (int p = 0; p < exponents_[k][i]; ++p)
        v *= x(i);
    out(k) = v;
  }
}

void RidgeRegression::fit(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, std::span<const double> w,
                          double lambda)
{
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  if (Y.rows() != n || (!w.empty() && static_cast<Eigen::Index>(w.size()) != n))
    throw ContractError("ridge: row counts disagree");
  if (n == 0)
    throw ContractError("ridge: no rows");
  Eigen::VectorXd wt = w.empty() ? Eigen::VectorXd::Ones(n) : Eigen::Map<const Eigen::VectorXd>(w.data(), n).eval();
  const double wsum = wt.sum();
  x_mean_ = (X.transpose() * wt) / wsum;
  y_mean_ = (Y.transpose() * wt) / wsum;
  Eigen::MatrixXd Xc = X.rowwise() - x_mean_.transpose();
  x_scale_ = ((Xc.array().square().colwise() * wt.array()).colwise().sum() / wsum).sqrt().transpose();
  for (Eigen::Index j = 0; j < p; ++j)
    if (!(x_scale_(j) > 0))
      x_scale_(j) = 1.0;
  Xc = Xc.array().rowwise() / x_scale_.transpose().array();
  const Eigen::MatrixXd Yc = Y.rowwise() - y_mean_.transpose();
  const Eigen::MatrixXd Xw = Xc.array().colwise() * wt.array();
  Eigen::MatrixXd A = Xw.transpose() * Xc;
  A.diagonal().array() += lambda;
  beta_ = A.ldlt().solve(Xw.transpose() * Yc);

  const Eigen::MatrixXd resid = Yc - Xc * beta_;
  r2_.resize(Y.cols());
  for (Eigen::Index m = 0; m < Y.cols(); ++m) {
    const double sst = (Yc.col(m).array().square() * wt.array()).sum();
    const double sse = (resid.col(m).array().square() * wt.array()).sum();
    r2_(m) = sst > 0 ? 1.0 - sse / sst : (sse == 0 ? 1.0 : 0.0);
  }
}

Eigen::VectorXd RidgeRegression::predict(const Eigen::VectorXd& x) const
{
  const Eigen::VectorXd xs = (x - x_mean_).cwiseQuotient(x_scale_);
  return y_mean_ + beta_.transpose() * xs;
}

void LogisticRegression::fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int max_iter, double tol)
{
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols() + 1;
  if (y.size() != n || n == 0)
    throw ContractError("logistic: row counts disagree");
  Eigen::MatrixXd Xa(n, p);
  Xa.col(0).setOnes();
  Xa.rightCols(p - 1) = X;
  coef_ = Eigen::VectorXd::Zero(p);
  iterations_ = 0;
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXd eta = Xa * coef_;
    Eigen::VectorXd mu(n), wv(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu(i) = sigmoid(eta(i));
      wv(i) = std::max(mu(i) * (1.0 - mu(i)), 1e-12);
    }
    const Eigen::MatrixXd H = Xa.transpose() * (Xa.array().colwise() * wv.array()).matrix();
    const Eigen::VectorXd g = Xa.transpose() * (y - mu);
    const Eigen::VectorXd step = H.ldlt().solve(g);
    coef_ += step;
    iterations_ = it + 1;
    if (step.cwiseAbs().maxCoeff() < tol)
      break;
  }
}

double LogisticRegression::predict_proba(const Eigen::VectorXd& x) const
{
  return sigmoid(coef_(0) + coef_.tail(coef_.size() - 1).dot(x));
}

} // namespace shiftbench
