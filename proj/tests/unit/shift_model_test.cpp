#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "binary_network.hpp"
#include "models.hpp"
#include "shiftbench/error.hpp"
#include "shiftbench/shift_model.hpp"

using namespace shiftbench;
using testmodels::row;
using testmodels::v1;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> xs)
{
  Eigen::VectorXd v(xs.size());
  int i = 0;
  for (double x : xs)
    v(i++) = x;
  return v;
}

// Parents B1, B2 (binary) and X (Gaussian) feeding a target T.
ShiftModel harness(const FamilySpec& family, const EtaFn& eta, const ShiftSpec& shift,
                   std::vector<std::string> parents = {"B1", "B2", "X"})
{
  std::vector<VariableSpec> vars;
  vars.push_back({"B1", FamilySpec::bernoulli_logit(), {}, EtaFn::constant(v1(0.2))});
  vars.push_back({"X", FamilySpec::gaussian_known_var(1.0), {}, EtaFn::constant(v1(0.0))});
  vars.push_back({"B2", FamilySpec::bernoulli_logit(), {"B1"}, EtaFn::linear(v1(-0.3), row({0.8}))});
  vars.push_back({"T", family, parents, eta});
  return ShiftModel(vars, {{"T", shift}});
}

void expect_jacobians_match_fd(const ShiftModel& m, int var, const Eigen::VectorXd& z, double tol)
{
  const DeltaBlock* b = m.block(var);
  ASSERT_NE(b, nullptr);
  const int d = b->size;
  const Eigen::VectorXd eta = m.eta(var, z);
  auto s = [&](const Eigen::VectorXd& delta) { return m.shift_value(var, z, eta, delta); };
  const ShiftJacobians J = m.shift_jacobians(var, z);
  const int dt = m.variable(var).family.dim_t();
  ASSERT_EQ(J.d1.rows(), dt);
  ASSERT_EQ(J.d1.cols(), d);
  const double h = 1e-4;
  for (int a = 0; a < d; ++a) {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(d), q = Eigen::VectorXd::Zero(d);
    p(a) = h;
    q(a) = -h;
    const Eigen::VectorXd fd = (s(p) - s(q)) / (2 * h);
    for (int c = 0; c < dt; ++c)
      EXPECT_NEAR(J.d1(c, a), fd(c), tol) << "D1(" << c << "," << a << ")";
    for (int bb = 0; bb < d; ++bb) {
      Eigen::VectorXd pp = Eigen::VectorXd::Zero(d), pm = pp, mp = pp, mm = pp;
      pp(a) += h, pp(bb) += h;
      pm(a) += h, pm(bb) -= h;
      mp(a) -= h, mp(bb) += h;
      mm(a) -= h, mm(bb) -= h;
      const Eigen::VectorXd fd2 = (s(pp) - s(pm) - s(mp) + s(mm)) / (4 * h * h);
      for (int c = 0; c < dt; ++c) {
        const double an = J.d2.empty() ? 0.0 : J.d2[c](a, bb);
        EXPECT_NEAR(an, fd2(c), 10 * tol) << "D2[" << c << "](" << a << "," << bb << ")";
      }
    }
  }
}

Eigen::VectorXd random_parents(Rng& rng)
{
  std::bernoulli_distribution b(0.5);
  std::normal_distribution<double> g;
  return vec({double(b(rng)), double(b(rng)), g(rng)});
}

} // namespace

TEST(ShiftModel, ApplyShiftLabExample)
{
  const auto m = testmodels::lab_model(ShiftSpec::linear_in_z({"1-Y", "Y"}));
  ASSERT_EQ(m.d_delta(), 2);
  const Eigen::VectorXd eta = m.apply_shift("O", vec({0.0, 1.0}), vec({0.0, 2.0}));
  EXPECT_DOUBLE_EQ(eta(0), 3.0);
  const Eigen::VectorXd base = m.apply_shift("O", vec({0.3, 1.0}), vec({0.0, 0.0}));
  EXPECT_EQ(base(0), m.eta(m.variable_index("O"), vec({0.3, 1.0}))(0));
}

TEST(ShiftModel, MultiplicativeScalesEta)
{
  std::vector<VariableSpec> vars{{"W", FamilySpec::bernoulli_logit(), {}, EtaFn::constant(v1(-2.0))}};
  ShiftModel m(vars, {{"W", ShiftSpec::multiplicative()}});
  EXPECT_DOUBLE_EQ(m.apply_shift("W", Eigen::VectorXd(0), v1(0.5))(0), -3.0);
}

TEST(ShiftModel, JacobianExamples)
{
  std::vector<VariableSpec> vars{{"P", FamilySpec::bernoulli_logit(), {}, EtaFn::constant(v1(0.0))},
                                 {"W", FamilySpec::bernoulli_logit(), {"P"}, EtaFn::linear(v1(0.1), row({1.0}))}};
  ShiftModel c(vars, {{"W", ShiftSpec::constant()}});
  const auto jc = c.shift_jacobians(1, v1(1.0));
  EXPECT_EQ(jc.d1, Eigen::MatrixXd::Ones(1, 1));
  EXPECT_TRUE(jc.d2.empty());
  ShiftModel s(vars, {{"W", ShiftSpec::per_stratum()}});
  const auto js = s.shift_jacobians(1, v1(1.0));
  EXPECT_EQ(js.d1, row({0.0, 1.0}));
}

TEST(ShiftModel, JacobiansMatchFiniteDifferencesAllForms)
{
  Rng rng(21);
  const auto bern = FamilySpec::bernoulli_logit();
  const EtaFn lin = EtaFn::linear(v1(0.1), row({0.5, -0.7, 0.3}));

  // Gaussian (d = 2) whose mean depends on X; precision fixed.
  const auto gf = FamilySpec::gaussian_full(2);
  Eigen::VectorXd g0(6);
  g0 << 0.2, -0.1, -0.5, 0.1, 0.1, -0.8;
  Eigen::MatrixXd gc = Eigen::MatrixXd::Zero(6, 3);
  gc(0, 2) = 0.4;
  gc(1, 0) = -0.3;
  const EtaFn glin = EtaFn::linear(g0, gc);

  Eigen::MatrixXd cat_coef = Eigen::MatrixXd::Zero(3, 3);
  cat_coef(0, 2) = 0.5;
  cat_coef(1, 0) = -0.4;
  const EtaFn cat_eta = EtaFn::linear(vec({0.3, -0.2, 0.0}), cat_coef);

  Eigen::MatrixXd gam_coef = Eigen::MatrixXd::Zero(2, 3);
  gam_coef(0, 0) = 0.3;
  const EtaFn gam_eta = EtaFn::linear(vec({0.5, -1.2}), gam_coef);

  std::vector<ShiftModel> models;
  models.push_back(harness(bern, lin, ShiftSpec::constant()));
  models.push_back(harness(bern, EtaFn::linear(v1(0.1), row({0.5, -0.7})), ShiftSpec::per_stratum(), {"B1", "B2"}));
  models.push_back(harness(bern, lin, ShiftSpec::linear_in_z({"1", "X", "1-B1", "B1*X"})));
  models.push_back(harness(bern, lin, ShiftSpec::multiplicative()));
  models.push_back(harness(gf, glin, ShiftSpec::variance_scaled_mean()));
  models.push_back(harness(gf, glin, ShiftSpec::domain_guarded(ShiftSpec::constant())));
  models.push_back(harness(gf, glin, ShiftSpec::domain_guarded(ShiftSpec::multiplicative(), 1e-3, 3.0)));
  models.push_back(harness(bern, lin,
                           ShiftSpec::domain_guarded(ShiftSpec::linear_in_z({"1", "X"}), 1e-3, 2.0,
                                                     {GuardBound{0, false, -1.0}})));
  models.push_back(harness(FamilySpec::categorical(3), EtaFn::linear(vec({0.3, -0.2, 0.0}), cat_coef.leftCols(2)),
                           ShiftSpec::per_stratum(), {"B1", "B2"}));
  models.push_back(harness(FamilySpec::categorical(3), cat_eta, ShiftSpec::linear_in_z({"1", "X"})));
  models.push_back(harness(FamilySpec::gamma(), gam_eta, ShiftSpec::domain_guarded(ShiftSpec::constant(), 1e-3, 1.5)));

  for (std::size_t k = 0; k < models.size(); ++k) {
    const auto& m = models[k];
    const int t = m.variable_index("T");
    for (int rep = 0; rep < 50; ++rep) {
      Eigen::VectorXd z = random_parents(rng);
      z.conservativeResize(static_cast<Eigen::Index>(m.variable(t).parents.size()));
      SCOPED_TRACE("model " + std::to_string(k));
      expect_jacobians_match_fd(m, t, z, 1e-7);
    }
  }
}

TEST(ShiftModel, SmoothGuardHasCurvature)
{
  const auto m = harness(FamilySpec::bernoulli_logit(), EtaFn::linear(v1(0.1), row({0.5, -0.7, 0.3})),
                         ShiftSpec::domain_guarded(ShiftSpec::constant(), 1e-3, 2.0, {GuardBound{0, false, -1.0}}));
  const int t = m.variable_index("T");
  EXPECT_TRUE(m.has_second_order(t));
  const auto J = m.shift_jacobians(t, vec({1, 0, 0.2}));
  ASSERT_EQ(J.d2.size(), 1u);
  EXPECT_GT(std::abs(J.d2[0](0, 0)), 1e-3);
}

TEST(ShiftModel, DeltaIndexOrderAndLabels)
{
  std::vector<VariableSpec> vars{
      {"Young", FamilySpec::bernoulli_logit(), {}, EtaFn::constant(v1(0.0))},
      {"Male", FamilySpec::bernoulli_logit(), {}, EtaFn::constant(v1(0.0))},
      {"Bald", FamilySpec::bernoulli_logit(), {"Young", "Male"}, EtaFn::linear(v1(-3.0), row({-1.0, 3.5}))}};
  ShiftModel m(vars, {{"Bald", ShiftSpec::per_stratum()}, {"Young", ShiftSpec::per_stratum()}});
  ASSERT_EQ(m.d_delta(), 5);
  const auto labels = m.delta_labels();
  EXPECT_EQ(labels[0], "Young");
  EXPECT_EQ(labels[1], "Bald | Young=0, Male=0");
  EXPECT_EQ(labels[2], "Bald | Young=0, Male=1");
  EXPECT_EQ(labels[3], "Bald | Young=1, Male=0");
  EXPECT_EQ(labels[4], "Bald | Young=1, Male=1");
  EXPECT_EQ(m.blocks()[0].variable, "Young");
  EXPECT_EQ(m.blocks()[1].offset, 1);
  EXPECT_EQ(m.stratum(2, vec({1, 0})), 2);
}

TEST(ShiftModel, DensityRatioBernoulliExample)
{
  std::vector<VariableSpec> vars{{"W", FamilySpec::bernoulli_logit(), {}, EtaFn::constant(v1(0.0))}};
  ShiftModel m(vars, {{"W", ShiftSpec::constant()}});
  const Eigen::VectorXd d = v1(std::log(3.0));
  const double w1 = density_ratio(m, d, std::vector<double>{1.0});
  const double w0 = density_ratio(m, d, std::vector<double>{0.0});
  EXPECT_NEAR(w1, 1.5, 1e-14);
  EXPECT_NEAR(w0, 0.5, 1e-14);
  EXPECT_NEAR(0.5 * w1 + 0.5 * w0, 1.0, 1e-14);
  EXPECT_EQ(density_ratio(m, v1(0.0), std::vector<double>{1.0}), 1.0);
}

TEST(ShiftModel, DensityRatioLabFormula)
{
  const auto m = testmodels::lab_model(ShiftSpec::linear_in_z({"1-Y", "Y"}));
  const Eigen::VectorXd delta = vec({-0.7, 1.3});
  for (double a : {-0.4, 0.0, 0.9})
    for (double y : {0.0, 1.0})
      for (double o : {0.0, 1.0}) {
        const std::vector<double> rec{a, y, o, o == 1.0 ? 0.25 : 0.0};
        const double eta = -1.0 + 0.5 * a + 2.0 * y;
        const double s = delta(0) * (1 - y) + delta(1) * y;
        const double expect = std::exp(s * o) * (1 + std::exp(eta)) / (1 + std::exp(eta + s));
        EXPECT_NEAR(density_ratio(m, delta, rec), expect, 1e-13);
      }
}

TEST(ShiftModel, ZeroDeltaLeavesEverythingExact)
{
  const auto m = testmodels::lab_model(ShiftSpec::linear_in_z({"1", "Y"}));
  Rng rng(4);
  const auto t = sample_joint(m, Eigen::VectorXd::Zero(2), 500, rng);
  const auto bind = m.bind(t);
  std::vector<double> rec(m.row_width());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    m.gather(t, bind, r, rec);
    EXPECT_EQ(density_ratio(m, Eigen::VectorXd::Zero(2), rec), 1.0);
  }
}

TEST(ShiftModel, RatioIntegratesToOneByEnumeration)
{
  Rng rng(99);
  for (int net_i = 0; net_i < 5; ++net_i) {
    const auto net = oracle::random_network(rng, 12, 3);
    const auto m = oracle::to_model(net);
    ASSERT_EQ(m.d_delta(), net.d_delta());
    const auto p0 = oracle::joint_probabilities(net, Eigen::VectorXd::Zero(net.d_delta()));
    std::normal_distribution<double> g;
    for (int rep = 0; rep < 3; ++rep) {
      Eigen::VectorXd delta(net.d_delta());
      for (auto& x : delta)
        x = g(rng);
      delta *= 2.0 / delta.norm() * std::uniform_real_distribution<double>(0, 1)(rng);
      double ew = 0, ewl = 0;
      std::vector<double> rec(net.n);
      for (unsigned c = 0; c < p0.size(); ++c) {
        for (int i = 0; i < net.n; ++i)
          rec[i] = (c >> i) & 1u;
        const double w = density_ratio(m, delta, rec);
        ew += p0[c] * w;
        ewl += p0[c] * w * net.loss[c];
      }
      EXPECT_NEAR(ew, 1.0, 1e-12);
      EXPECT_NEAR(ewl, oracle::expected_loss(net, delta), 1e-10);
    }
  }
}

TEST(ShiftModel, RatioMeanIsOneOnContinuousModel)
{
  const auto m = testmodels::lab_model(ShiftSpec::linear_in_z({"1", "Y"}));
  Rng rng(17);
  const std::size_t n = 100000;
  const auto t = sample_joint(m, Eigen::VectorXd::Zero(2), n, rng);
  const auto bind = m.bind(t);
  std::vector<double> rec(m.row_width());
  std::normal_distribution<double> g;
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd delta = vec({g(rng), g(rng)});
    delta *= 2.0 * std::uniform_real_distribution<double>(0, 1)(rng) / delta.norm();
    double s = 0, s2 = 0;
    for (std::size_t r = 0; r < n; ++r) {
      m.gather(t, bind, r, rec);
      const double w = density_ratio(m, delta, rec);
      s += w;
      s2 += w * w;
    }
    const double mean = s / n;
    const double se = std::sqrt((s2 / n - mean * mean) / n);
    EXPECT_LE(std::abs(mean - 1.0), 4 * se) << "delta " << delta.transpose();
  }
}

TEST(ShiftModel, GatedVariableTakesDummyValue)
{
  const auto m = testmodels::lab_model(ShiftSpec::constant());
  Rng rng(6);
  const auto t = sample_joint(m, Eigen::VectorXd::Zero(1), 20000, rng);
  const auto o = t.column("O");
  const auto l = t.column("L");
  int nonzero = 0;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    if (o[r] == 0.0)
      EXPECT_EQ(l[r], 0.0);
    else
      nonzero += l[r] != 0.0;
  }
  EXPECT_GT(nonzero, 1000);
}

TEST(ShiftModel, ValidationErrors)
{
  std::vector<VariableSpec> cyc{{"A", FamilySpec::bernoulli_logit(), {"B"}, EtaFn::linear(v1(0), row({1}))},
                                {"B", FamilySpec::bernoulli_logit(), {"A"}, EtaFn::linear(v1(0), row({1}))}};
  EXPECT_THROW(ShiftModel(cyc, {}), SchemaError);
  std::vector<VariableSpec> unknown{{"A", FamilySpec::bernoulli_logit(), {"Q"}, EtaFn::linear(v1(0), row({1}))}};
  EXPECT_THROW(ShiftModel(unknown, {}), SchemaError);
}

TEST(ShiftModel, GatedVariableCannotBeShifted)
{
  const auto base = testmodels::lab_model(ShiftSpec::constant());
  EXPECT_THROW(ShiftModel(base.variables(), {{"L", ShiftSpec::constant()}}), SchemaError);
}

TEST(ShiftModel, PrecisionPushedNonnegativeIsShiftDomainError)
{
  Eigen::VectorXd eta(2);
  eta << 0.0, -0.5;  // N(0, 1)
  std::vector<VariableSpec> vars{{"G", FamilySpec::gaussian_full(1), {}, EtaFn::constant(eta)}};
  ShiftModel raw(vars, {{"G", ShiftSpec::constant()}});
  try {
    raw.apply_shift("G", Eigen::VectorXd(0), vec({0.0, 1.0}));
    FAIL() << "expected a shift-domain error";
  } catch (const ShiftDomainError& e) {
    EXPECT_EQ(e.variable(), "G");
    EXPECT_EQ(e.coordinate(), 1);
  }
  ShiftModel guarded(vars, {{"G", ShiftSpec::domain_guarded(ShiftSpec::constant())}});
  const Eigen::VectorXd out = guarded.apply_shift("G", Eigen::VectorXd(0), vec({0.3, 1.0}));
  EXPECT_DOUBLE_EQ(out(0), 0.3);
  EXPECT_DOUBLE_EQ(out(1), -0.5);
  const Eigen::VectorXd ok = guarded.apply_shift("G", Eigen::VectorXd(0), vec({0.0, 0.2}));
  EXPECT_DOUBLE_EQ(ok(1), -0.3);
}

TEST(ShiftModel, MarginalMappingClosedForm)
{
  std::vector<VariableSpec> vars{{"W", FamilySpec::bernoulli_logit(), {}, EtaFn::constant(v1(0.0))}};
  ShiftModel m(vars, {{"W", ShiftSpec::constant()}});
  SampleTable t({"W"});
  for (int i = 0; i < 10; ++i)
    t.append_row(std::vector<double>{double(i % 2)});
  const auto sol = solve_delta_for_marginal(m, "W", 0.75, t);
  EXPECT_NEAR(sol.delta, std::log(3.0), 1e-9);
  EXPECT_NEAR(solve_delta_for_marginal(m, "W", 0.5, t).delta, 0.0, 1e-9);
  EXPECT_THROW(solve_delta_for_marginal(m, "W", 1.0, t), InfeasibleTargetError);
  EXPECT_THROW(solve_delta_for_marginal(m, "W", 0.0, t), InfeasibleTargetError);
}

TEST(ShiftModel, MarginalSaturationRange)
{
  // Parent P=1 forces W=1 through an infinite logit.
  std::vector<VariableSpec> vars{
      {"P", FamilySpec::bernoulli_logit(), {}, EtaFn::constant(v1(0.0))},
      {"W", FamilySpec::bernoulli_logit(), {"P"}, EtaFn::tabular({v1(0.0), v1(std::numeric_limits<double>::infinity())})}};
  ShiftModel m(vars, {{"W", ShiftSpec::constant()}});
  SampleTable t({"P", "W"});
  for (int i = 0; i < 8; ++i)
    t.append_row(std::vector<double>{double(i < 2), double(i < 5)});
  try {
    solve_delta_for_marginal(m, "W", 0.2, t);
    FAIL();
  } catch (const InfeasibleTargetError& e) {
    EXPECT_DOUBLE_EQ(e.lo(), 0.25);
    EXPECT_DOUBLE_EQ(e.hi(), 1.0);
  }
  const auto sol = solve_delta_for_marginal(m, "W", 0.6, t);
  EXPECT_NEAR(shifted_marginal(m, "W", sol.delta, t), 0.6, 1e-9);
  EXPECT_DOUBLE_EQ(sol.p_plus, 0.25);
}

TEST(ShiftModel, MarginalMonotoneOnGrid)
{
  const auto m = testmodels::lab_model(ShiftSpec::constant());
  Rng rng(8);
  const auto t = sample_joint(m, Eigen::VectorXd::Zero(1), 2000, rng);
  double prev = -1;
  for (int k = 0; k < 1000; ++k) {
    const double d = -10.0 + 20.0 * k / 999.0;
    const double p = shifted_marginal(m, "O", d, t);
    EXPECT_GE(p, prev);
    prev = p;
  }
}

TEST(ShiftModel, MarginalTargetVerifiedByResimulation)
{
  const auto m = testmodels::lab_model(ShiftSpec::constant());
  Rng rng(31);
  const auto t = sample_joint(m, Eigen::VectorXd::Zero(1), 100000, rng);
  const auto sol = solve_delta_for_marginal(m, "O", 0.15, t);
  EXPECT_NEAR(sol.achieved, 0.15, 1e-6);
  Rng rng2(32);
  const auto shifted = sample_joint(m, v1(sol.delta), 100000, rng2);
  const auto o = shifted.column("O");
  const double rate = std::accumulate(o.begin(), o.end(), 0.0) / o.size();
  EXPECT_NEAR(rate, 0.15, 0.005);
}
