#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "shiftbench/error.hpp"
#include "shiftbench/families.hpp"

using namespace shiftbench;

namespace {

std::vector<double> one(double x) { return {x}; }

Eigen::VectorXd vec(std::initializer_list<double> xs)
{
  Eigen::VectorXd v(xs.size());
  int i = 0;
  for (double x : xs)
    v(i++) = x;
  return v;
}

// Random in-domain natural parameter for each family.
Eigen::VectorXd random_eta(const FamilySpec& f, Rng& rng)
{
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::uniform_real_distribution<double> pos(0.5, 3.0);
  switch (f.kind()) {
  case FamilyKind::Categorical: {
    Eigen::VectorXd e(f.categories());
    for (int i = 0; i < f.categories(); ++i)
      e(i) = u(rng);
    e(f.categories() - 1) = 0.0;
    return e;
  }
  case FamilyKind::GaussianFull: {
    const int d = f.dim();
    Eigen::MatrixXd b(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        b(i, j) = u(rng) * 0.5;
    Eigen::MatrixXd sigma = b * b.transpose() + Eigen::MatrixXd::Identity(d, d);
    Eigen::VectorXd mu(d);
    for (int i = 0; i < d; ++i)
      mu(i) = u(rng);
    const Eigen::MatrixXd prec = sigma.inverse();
    Eigen::VectorXd e(d + d * d);
    e.head(d) = prec * mu;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        e(d + i * d + j) = -0.5 * prec(i, j);
    return e;
  }
  case FamilyKind::Gamma:
    return vec({pos(rng) - 1.0, -pos(rng)});
  case FamilyKind::Poisson:
    return vec({u(rng) * 0.75});
  default:
    return vec({u(rng)});
  }
}

std::vector<FamilySpec> catalog()
{
  return {FamilySpec::bernoulli_logit(), FamilySpec::categorical(4), FamilySpec::gaussian_known_var(0.7),
          FamilySpec::gaussian_full(2),  FamilySpec::poisson(),        FamilySpec::gamma()};
}

} // namespace

TEST(Families, DimT)
{
  EXPECT_EQ(FamilySpec::bernoulli_logit().dim_t(), 1);
  EXPECT_EQ(FamilySpec::categorical(5).dim_t(), 5);
  EXPECT_EQ(FamilySpec::gaussian_known_var(2.0).dim_t(), 1);
  EXPECT_EQ(FamilySpec::gaussian_full(3).dim_t(), 12);
  EXPECT_EQ(FamilySpec::poisson().dim_t(), 1);
  EXPECT_EQ(FamilySpec::gamma().dim_t(), 2);
  EXPECT_EQ(FamilySpec::categorical(5).free_coords().size(), 4u);
}

TEST(Families, SufficientStatExamples)
{
  EXPECT_EQ(sufficient_stat(FamilySpec::bernoulli_logit(), one(1.0))(0), 1.0);
  const auto cat = sufficient_stat(FamilySpec::categorical(3), one(2.0));
  EXPECT_EQ(cat, vec({0, 1, 0}));
  const auto g = sufficient_stat(FamilySpec::gaussian_full(1), one(2.0));
  EXPECT_EQ(g, vec({2, 4}));
  EXPECT_DOUBLE_EQ(sufficient_stat(FamilySpec::gaussian_known_var(2.0), one(3.0))(0), 1.5);
}

TEST(Families, OutOfSupportNamesVariable)
{
  try {
    sufficient_stat(FamilySpec::poisson(), one(-1.0), "visits");
    FAIL() << "expected a domain error";
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("visits"), std::string::npos);
  }
  EXPECT_THROW(sufficient_stat(FamilySpec::bernoulli_logit(), one(0.5)), DomainError);
  EXPECT_THROW(sufficient_stat(FamilySpec::categorical(3), one(4.0)), DomainError);
  EXPECT_THROW(sufficient_stat(FamilySpec::gamma(), one(0.0)), DomainError);
}

TEST(Families, LogPartitionExamples)
{
  EXPECT_DOUBLE_EQ(log_partition(FamilySpec::bernoulli_logit(), vec({0})), std::log(2.0));
  EXPECT_DOUBLE_EQ(log_partition(FamilySpec::poisson(), vec({0})), 1.0);
  EXPECT_DOUBLE_EQ(log_partition(FamilySpec::gaussian_known_var(1.0), vec({2})), 2.0);
}

TEST(Families, DomainRejectedNotClamped)
{
  EXPECT_THROW(log_partition(FamilySpec::gamma(), vec({-1.5, -1.0})), DomainError);
  EXPECT_THROW(log_partition(FamilySpec::gamma(), vec({0.5, 0.0})), DomainError);
  EXPECT_THROW(log_partition(FamilySpec::gaussian_full(1), vec({0.0, 0.1})), DomainError);
  EXPECT_THROW(log_partition(FamilySpec::categorical(3), vec({0.1, 0.2, 0.3})), DomainError);
  EXPECT_THROW(mean_stat(FamilySpec::bernoulli_logit(), vec({std::nan("")})), DomainError);
  EXPECT_THROW(var_stat(FamilySpec::poisson(), vec({1.0, 2.0})), ContractError);
}

TEST(Families, MeanVarExamples)
{
  EXPECT_DOUBLE_EQ(mean_stat(FamilySpec::bernoulli_logit(), vec({0}))(0), 0.5);
  EXPECT_DOUBLE_EQ(var_stat(FamilySpec::bernoulli_logit(), vec({0}))(0, 0), 0.25);
  EXPECT_DOUBLE_EQ(mean_stat(FamilySpec::poisson(), vec({0}))(0), 1.0);
  EXPECT_DOUBLE_EQ(var_stat(FamilySpec::poisson(), vec({0}))(0, 0), 1.0);

  const auto f = FamilySpec::bernoulli_logit();
  const double h = 1e-5;
  const double fd = (log_partition(f, vec({1 + h})) - log_partition(f, vec({1 - h}))) / (2 * h);
  EXPECT_NEAR(mean_stat(f, vec({1}))(0), fd, 1e-9);
  EXPECT_NEAR(mean_stat(f, vec({1}))(0), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
}

TEST(Families, GradientMatchesFiniteDifferences)
{
  Rng rng(11);
  for (const auto& f : catalog()) {
    const auto free = f.free_coords();
    for (int rep = 0; rep < 100; ++rep) {
      const Eigen::VectorXd eta = random_eta(f, rng);
      const Eigen::VectorXd grad = mean_stat(f, eta);
      const Eigen::MatrixXd hess = var_stat(f, eta);
      for (int c : free) {
        const double h = 1e-5;
        Eigen::VectorXd ep = eta, em = eta;
        ep(c) += h;
        em(c) -= h;
        const double fd = (log_partition(f, ep) - log_partition(f, em)) / (2 * h);
        EXPECT_NEAR(grad(c), fd, 1e-6 * std::max(1.0, std::abs(grad(c)))) << f.name() << " coord " << c;
        const Eigen::VectorXd fd2 = (mean_stat(f, ep) - mean_stat(f, em)) / (2 * h);
        for (int r : free)
          EXPECT_NEAR(hess(r, c), fd2(r), 1e-6 * std::max(1.0, std::abs(hess(r, c)))) << f.name();
      }
    }
  }
}

TEST(Families, VarStatIsSymmetricPsd)
{
  Rng rng(5);
  for (const auto& f : catalog())
    for (int rep = 0; rep < 20; ++rep) {
      const Eigen::MatrixXd v = var_stat(f, random_eta(f, rng));
      EXPECT_LE((v - v.transpose()).cwiseAbs().maxCoeff(), 1e-12);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(v);
      EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10) << f.name();
    }
}

TEST(Families, CategoricalProbabilitiesSumToOne)
{
  Rng rng(3);
  const auto f = FamilySpec::categorical(6);
  for (int rep = 0; rep < 100; ++rep)
    EXPECT_NEAR(mean_stat(f, random_eta(f, rng)).sum(), 1.0, 1e-15);
}

TEST(Families, DensityIntegratesToOneOnDiscreteSupport)
{
  const auto pois = FamilySpec::poisson();
  double total = 0;
  for (int k = 0; k < 100; ++k)
    total += std::exp(log_density(pois, vec({std::log(3.0)}), one(k)));
  EXPECT_NEAR(total, 1.0, 1e-12);
  const auto cat = FamilySpec::categorical(3);
  total = 0;
  for (int k = 1; k <= 3; ++k)
    total += std::exp(log_density(cat, vec({0.3, -1.0, 0.0}), one(k)));
  EXPECT_NEAR(total, 1.0, 1e-14);
}

TEST(Families, SaturatedBernoulliSampling)
{
  Rng rng(1);
  const auto f = FamilySpec::bernoulli_logit();
  int ones = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i)
    ones += sample(f, vec({std::numeric_limits<double>::infinity()}), rng)(0) == 1.0;
  EXPECT_GE(ones, n * (1 - 1e-9));
  ones = 0;
  for (int i = 0; i < n; ++i)
    ones += sample(f, vec({30.0}), rng)(0) == 1.0;
  EXPECT_GE(ones, n * (1 - 1e-9));
}

TEST(Families, SampleMeansConverge)
{
  Rng rng(2);
  const int n = 1000000;
  double s = 0;
  for (int i = 0; i < n; ++i)
    s += sample(FamilySpec::gaussian_known_var(1.0), vec({0}), rng)(0);
  EXPECT_LE(std::abs(s / n), 4.0 / std::sqrt(n));
  s = 0;
  for (int i = 0; i < n; ++i)
    s += sample(FamilySpec::poisson(), vec({std::log(3.0)}), rng)(0);
  EXPECT_LE(std::abs(s / n - 3.0), 4.0 * std::sqrt(3.0) / std::sqrt(n));
}

// Empirical covariance of T over 1e6 draws against var_stat, entrywise within
// 5 Monte-Carlo standard errors.
TEST(Families, VarStatMatchesEmpiricalCovariance)
{
  Rng rng(8);
  const int n = 1000000;
  for (const auto& f : catalog()) {
    const Eigen::VectorXd eta = random_eta(f, rng);
    const int m = f.dim_t();
    const Eigen::VectorXd mean = mean_stat(f, eta);
    const Eigen::MatrixXd var = var_stat(f, eta);
    Eigen::MatrixXd s1 = Eigen::MatrixXd::Zero(m, m);
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(m, m);
    Eigen::VectorXd tbar = Eigen::VectorXd::Zero(m);
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd w = sample(f, eta, rng);
      const Eigen::VectorXd t = sufficient_stat(f, std::vector<double>(w.data(), w.data() + w.size())) - mean;
      const Eigen::MatrixXd prod = t * t.transpose();
      s1 += prod;
      s2 += prod.cwiseProduct(prod);
      tbar += t;
    }
    tbar /= n;
    const Eigen::MatrixXd emp = s1 / n;
    const Eigen::MatrixXd se = ((s2 / n - emp.cwiseProduct(emp)) / n).cwiseSqrt();
    for (int a = 0; a < m; ++a) {
      EXPECT_LE(std::abs(tbar(a)), 5 * std::sqrt(var(a, a) / n) + 1e-12) << f.name();
      for (int b = 0; b < m; ++b)
        EXPECT_LE(std::abs(emp(a, b) - var(a, b)), 5 * se(a, b) + 1e-12) << f.name() << " (" << a << "," << b << ")";
    }
  }
}
