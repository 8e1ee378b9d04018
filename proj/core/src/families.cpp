#include "shiftbench/families.hpp"

#include <cmath>
#include <sstream>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "shiftbench/error.hpp"

namespace shiftbench {

namespace {

std::string label(std::string_view variable)
{
  return variable.empty() ? std::string("value") : std::string(variable);
}

// Theta is the symmetric part of the second GaussianFull block.
Eigen::MatrixXd theta_of(const Eigen::VectorXd& eta, int d)
{
  Eigen::MatrixXd m(d, d);
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b)
      m(a, b) = eta(d + a * d + b);
  return 0.5 * (m + m.transpose());
}

struct GaussMoments {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
};

GaussMoments gauss_moments(const Eigen::VectorXd& eta, int d)
{
  Eigen::MatrixXd sigma = (-2.0 * theta_of(eta, d)).inverse();
  sigma = 0.5 * (sigma + sigma.transpose());
  Eigen::VectorXd mu = sigma * eta.head(d);
  return {mu, sigma};
}

double logsumexp(const Eigen::VectorXd& x)
{
  const double m = x.maxCoeff();
  return m + std::log((x.array() - m).exp().sum());
}

void require_dim(const FamilySpec& f, const Eigen::VectorXd& eta)
{
  if (eta.size() != f.dim_t()) {
    std::ostringstream os;
    os << f.name() << ": natural parameter has length " << eta.size() << ", expected " << f.dim_t();
    throw ContractError(os.str());
  }
}

} // namespace

double sigmoid(double x)
{
  if (x >= 0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x)
{
  if (x > 0)
    return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

FamilySpec FamilySpec::bernoulli_logit()
{
  return FamilySpec{};
}

FamilySpec FamilySpec::categorical(int k)
{
  if (k < 2)
    throw DomainError("categorical family needs k >= 2");
  FamilySpec f;
  f.kind_ = FamilyKind::Categorical;
  f.k_ = k;
  return f;
}

FamilySpec FamilySpec::gaussian_known_var(double sigma)
{
  if (!(sigma > 0) || !std::isfinite(sigma))
    throw DomainError("gaussian_known_var needs sigma > 0");
  FamilySpec f;
  f.kind_ = FamilyKind::GaussianKnownVar;
  f.sigma_ = sigma;
  return f;
}

FamilySpec FamilySpec::gaussian_full(int d)
{
  if (d < 1)
    throw DomainError("gaussian_full needs d >= 1");
  FamilySpec f;
  f.kind_ = FamilyKind::GaussianFull;
  f.d_ = d;
  return f;
}

FamilySpec FamilySpec::poisson()
{
  FamilySpec f;
  f.kind_ = FamilyKind::Poisson;
  return f;
}

FamilySpec FamilySpec::gamma()
{
  FamilySpec f;
  f.kind_ = FamilyKind::Gamma;
  return f;
}

int FamilySpec::dim_t() const
{
  switch (kind_) {
  case FamilyKind::Categorical:
    return k_;
  case FamilyKind::GaussianFull:
    return d_ + d_ * d_;
  case FamilyKind::Gamma:
    return 2;
  default:
    return 1;
  }
}

int FamilySpec::value_dim() const
{
  return kind_ == FamilyKind::GaussianFull ? d_ : 1;
}

bool FamilySpec::is_discrete() const
{
  return kind_ == FamilyKind::BernoulliLogit || kind_ == FamilyKind::Categorical ||
         kind_ == FamilyKind::Poisson;
}

int FamilySpec::cardinality() const
{
  switch (kind_) {
  case FamilyKind::BernoulliLogit:
    return 2;
  case FamilyKind::Categorical:
    return k_;
  default:
    return 0;
  }
}

std::vector<Interval> FamilySpec::param_domain() const
{
  std::vector<Interval> dom(dim_t());
  switch (kind_) {
  case FamilyKind::Categorical:
    dom.back() = Interval{0.0, 0.0}; // pinned; checked as equality
    break;
  case FamilyKind::GaussianFull:
    for (int a = 0; a < d_; ++a)
      dom[d_ + a * d_ + a].upper = 0.0;
    break;
  case FamilyKind::Gamma:
    dom[0].lower = -1.0;
    dom[1].upper = 0.0;
    break;
  default:
    break;
  }
  return dom;
}

std::vector<int> FamilySpec::free_coords() const
{
  const int n = kind_ == FamilyKind::Categorical ? k_ - 1 : dim_t();
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i)
    out[i] = i;
  return out;
}

std::string FamilySpec::name() const
{
  std::ostringstream os;
  switch (kind_) {
  case FamilyKind::BernoulliLogit:
    return "bernoulli_logit";
  case FamilyKind::Categorical:
    os << "categorical(" << k_ << ")";
    return os.str();
  case FamilyKind::GaussianKnownVar:
    os << "gaussian_known_var(" << sigma_ << ")";
    return os.str();
  case FamilyKind::GaussianFull:
    os << "gaussian_full(" << d_ << ")";
    return os.str();
  case FamilyKind::Poisson:
    return "poisson";
  case FamilyKind::Gamma:
    return "gamma";
  }
  return "unknown";
}

bool in_domain(const FamilySpec& f, const Eigen::VectorXd& eta)
{
  if (eta.size() != f.dim_t())
    return false;
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    if (std::isnan(eta(i)))
      return false;
  switch (f.kind()) {
  case FamilyKind::BernoulliLogit:
    return true; // extended reals; +-inf saturate
  case FamilyKind::Categorical:
    return eta.allFinite() && eta(f.categories() - 1) == 0.0;
  case FamilyKind::GaussianFull: {
    if (!eta.allFinite())
      return false;
    Eigen::LLT<Eigen::MatrixXd> llt(-theta_of(eta, f.dim()));
    return llt.info() == Eigen::Success;
  }
  default: {
    if (!eta.allFinite())
      return false;
    const auto dom = f.param_domain();
    for (Eigen::Index i = 0; i < eta.size(); ++i)
      if (!dom[i].contains(eta(i)))
        return false;
    return true;
  }
  }
}

void check_domain(const FamilySpec& f, const Eigen::VectorXd& eta, std::string_view variable)
{
  require_dim(f, eta);
  if (!in_domain(f, eta)) {
    std::ostringstream os;
    os << label(variable) << ": natural parameter [" << eta.transpose() << "] outside the "
       << f.name() << " domain";
    throw DomainError(os.str());
  }
}

void check_support(const FamilySpec& f, std::span<const double> w, std::string_view variable)
{
  auto fail = [&](const char* why) {
    std::ostringstream os;
    os << label(variable) << ": value outside " << f.name() << " support (" << why << ")";
    throw DomainError(os.str());
  };
  if (static_cast<int>(w.size()) != f.value_dim())
    fail("wrong value dimension");
  for (double x : w)
    if (!std::isfinite(x))
      fail("not finite");
  const double x = w[0];
  switch (f.kind()) {
  case FamilyKind::BernoulliLogit:
    if (x != 0.0 && x != 1.0)
      fail("expected 0 or 1");
    break;
  case FamilyKind::Categorical:
    if (x != std::floor(x) || x < 1 || x > f.categories())
      fail("expected an integer category in 1..k");
    break;
  case FamilyKind::Poisson:
    if (x != std::floor(x) || x < 0)
      fail("expected a nonnegative integer count");
    break;
  case FamilyKind::Gamma:
    if (!(x > 0))
      fail("expected a positive value");
    break;
  default:
    break;
  }
}

Eigen::VectorXd sufficient_stat(const FamilySpec& f, std::span<const double> w, std::string_view variable)
{
  check_support(f, w, variable);
  Eigen::VectorXd t(f.dim_t());
  switch (f.kind()) {
  case FamilyKind::BernoulliLogit:
  case FamilyKind::Poisson:
    t(0) = w[0];
    break;
  case FamilyKind::Categorical:
    t.setZero();
    t(static_cast<int>(w[0]) - 1) = 1.0;
    break;
  case FamilyKind::GaussianKnownVar:
    t(0) = w[0] / f.sigma();
    break;
  case FamilyKind::GaussianFull: {
    const int d = f.dim();
    for (int a = 0; a < d; ++a) {
      t(a) = w[a];
      for (int b = 0; b < d; ++b)
        t(d + a * d + b) = w[a] * w[b];
    }
    break;
  }
  case FamilyKind::Gamma:
    t(0) = std::log(w[0]);
    t(1) = w[0];
    break;
  }
  return t;
}

double log_partition(const FamilySpec& f, const Eigen::VectorXd& eta)
{
  check_domain(f, eta);
  switch (f.kind()) {
  case FamilyKind::BernoulliLogit:
    if (std::isinf(eta(0)))
      return eta(0) > 0 ? eta(0) : 0.0;
    return softplus(eta(0));
  case FamilyKind::Categorical:
    return logsumexp(eta);
  case FamilyKind::GaussianKnownVar:
    return 0.5 * eta(0) * eta(0);
  case FamilyKind::GaussianFull: {
    const int d = f.dim();
    const Eigen::MatrixXd theta = theta_of(eta, d);
    const Eigen::VectorXd e1 = eta.head(d);
    Eigen::LLT<Eigen::MatrixXd> llt(-2.0 * theta);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return -0.25 * e1.dot(theta.ldlt().solve(e1)) - 0.5 * logdet;
  }
  case FamilyKind::Poisson:
    return std::exp(eta(0));
  case FamilyKind::Gamma: {
    const double alpha = eta(0) + 1.0;
    const double beta = -eta(1);
    return std::lgamma(alpha) - alpha * std::log(beta);
  }
  }
  return 0.0;
}

Eigen::VectorXd mean_stat(const FamilySpec& f, const Eigen::VectorXd& eta)
{
  check_domain(f, eta);
  Eigen::VectorXd m(f.dim_t());
  switch (f.kind()) {
  case FamilyKind::BernoulliLogit:
    m(0) = sigmoid(eta(0));
    break;
  case FamilyKind::Categorical:
    m = (eta.array() - logsumexp(eta)).exp();
    break;
  case FamilyKind::GaussianKnownVar:
    m(0) = eta(0);
    break;
  case FamilyKind::GaussianFull: {
    const int d = f.dim();
    const auto g = gauss_moments(eta, d);
    m.head(d) = g.mu;
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        m(d + a * d + b) = g.sigma(a, b) + g.mu(a) * g.mu(b);
    break;
  }
  case FamilyKind::Poisson:
    m(0) = std::exp(eta(0));
    break;
  case FamilyKind::Gamma: {
    const double alpha = eta(0) + 1.0;
    const double beta = -eta(1);
    m(0) = boost::math::digamma(alpha) - std::log(beta);
    m(1) = alpha / beta;
    break;
  }
  }
  return m;
}

Eigen::MatrixXd var_stat(const FamilySpec& f, const Eigen::VectorXd& eta)
{
  check_domain(f, eta);
  const int n = f.dim_t();
  Eigen::MatrixXd v(n, n);
  switch (f.kind()) {
  case FamilyKind::BernoulliLogit: {
    const double p = sigmoid(eta(0));
    v(0, 0) = p * (1.0 - p);
    break;
  }
  case FamilyKind::Categorical: {
    const Eigen::VectorXd p = (eta.array() - logsumexp(eta)).exp();
    v = Eigen::MatrixXd(p.asDiagonal()) - p * p.transpose();
    break;
  }
  case FamilyKind::GaussianKnownVar:
    v(0, 0) = 1.0;
    break;
  case FamilyKind::GaussianFull: {
    const int d = f.dim();
    const auto g = gauss_moments(eta, d);
    const auto& S = g.sigma;
    const auto& mu = g.mu;
    auto q = [d](int a, int b) { return d + a * d + b; };
    v.topLeftCorner(d, d) = S;
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        for (int c = 0; c < d; ++c) {
          const double x = S(a, b) * mu(c) + S(a, c) * mu(b);
          v(a, q(b, c)) = x;
          v(q(b, c), a) = x;
        }
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        for (int c = 0; c < d; ++c)
          for (int e = 0; e < d; ++e)
            v(q(a, b), q(c, e)) = S(a, c) * S(b, e) + S(a, e) * S(b, c) + mu(a) * mu(c) * S(b, e) +
                                  mu(a) * mu(e) * S(b, c) + mu(b) * mu(c) * S(a, e) +
                                  mu(b) * mu(e) * S(a, c);
    break;
  }
  case FamilyKind::Poisson:
    v(0, 0) = std::exp(eta(0));
    break;
  case FamilyKind::Gamma: {
    const double alpha = eta(0) + 1.0;
    const double beta = -eta(1);
    v(0, 0) = boost::math::trigamma(alpha);
    v(0, 1) = v(1, 0) = 1.0 / beta;
    v(1, 1) = alpha / (beta * beta);
    break;
  }
  }
  return v;
}

double log_base_measure(const FamilySpec& f, std::span<const double> w)
{
  check_support(f, w);
  switch (f.kind()) {
  case FamilyKind::GaussianKnownVar: {
    const double s = f.sigma();
    return -0.5 * std::log(2.0 * M_PI * s * s) - 0.5 * w[0] * w[0] / (s * s);
  }
  case FamilyKind::GaussianFull:
    return -0.5 * f.dim() * std::log(2.0 * M_PI);
  case FamilyKind::Poisson:
    return -std::lgamma(w[0] + 1.0);
  default:
    return 0.0;
  }
}

double log_density(const FamilySpec& f, const Eigen::VectorXd& eta, std::span<const double> w)
{
  const Eigen::VectorXd t = sufficient_stat(f, w);
  if (f.kind() == FamilyKind::BernoulliLogit && std::isinf(eta(0))) {
    const bool one = (eta(0) > 0);
    return (w[0] == 1.0) == one ? 0.0 : -std::numeric_limits<double>::infinity();
  }
  return log_base_measure(f, w) + eta.dot(t) - log_partition(f, eta);
}

Eigen::VectorXd sample(const FamilySpec& f, const Eigen::VectorXd& eta, Rng& rng)
{
  check_domain(f, eta);
  Eigen::VectorXd w(f.value_dim());
  switch (f.kind()) {
  case FamilyKind::BernoulliLogit: {
    const double capped = std::clamp(eta(0), -kBernoulliEtaCap, kBernoulliEtaCap);
    std::bernoulli_distribution dist(sigmoid(capped));
    w(0) = dist(rng) ? 1.0 : 0.0;
    break;
  }
  case FamilyKind::Categorical: {
    const Eigen::VectorXd p = (eta.array() - logsumexp(eta)).exp();
    std::discrete_distribution<int> dist(p.data(), p.data() + p.size());
    w(0) = dist(rng) + 1;
    break;
  }
  case FamilyKind::GaussianKnownVar: {
    std::normal_distribution<double> z;
    w(0) = f.sigma() * (eta(0) + z(rng));
    break;
  }
  case FamilyKind::GaussianFull: {
    const int d = f.dim();
    const auto g = gauss_moments(eta, d);
    Eigen::LLT<Eigen::MatrixXd> llt(g.sigma);
    std::normal_distribution<double> z;
    Eigen::VectorXd u(d);
    for (int a = 0; a < d; ++a)
      u(a) = z(rng);
    w = g.mu + llt.matrixL() * u;
    break;
  }
  case FamilyKind::Poisson: {
    std::poisson_distribution<long long> dist(std::exp(eta(0)));
    w(0) = static_cast<double>(dist(rng));
    break;
  }
  case FamilyKind::Gamma: {
    std::gamma_distribution<double> dist(eta(0) + 1.0, -1.0 / eta(1));
    w(0) = dist(rng);
    break;
  }
  }
  return w;
}

} // namespace shiftbench
