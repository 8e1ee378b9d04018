#include <algorithm>
#include <cmath>
#include <memory>

#include "shiftbench/error.hpp"
#include "shiftbench/regression.hpp"
#include "shiftbench/sim_bench.hpp"

namespace shiftbench::sim {

namespace {

Eigen::VectorXd v1(double x) { return Eigen::VectorXd::Constant(1, x); }

Eigen::MatrixXd row(std::initializer_list<double> xs)
{
  Eigen::MatrixXd m(1, xs.size());
  int i = 0;
  for (double x : xs)
    m(0, i++) = x;
  return m;
}

std::function<SampleTable(const Eigen::VectorXd&, std::size_t, Rng&)> joint_sampler(
    const ShiftModel& model, std::function<std::vector<double>(const SampleTable&)> loss_fn)
{
  return [model, loss_fn](const Eigen::VectorXd& delta, std::size_t n, Rng& rng) {
    SampleTable t = sample_joint(model, delta, n, rng);
    t.set_loss(loss_fn(t));
    return t;
  };
}

std::vector<double> support_values(const FamilySpec& f)
{
  switch (f.kind()) {
  case FamilyKind::BernoulliLogit:
    return {0.0, 1.0};
  case FamilyKind::Categorical: {
    std::vector<double> out;
    for (int c = 1; c <= f.categories(); ++c)
      out.push_back(c);
    return out;
  }
  default:
    return {};
  }
}

// --- lab testing -----------------------------------------------------------

struct LabPredictor {
  bool uses_age = false;
  double untested_rate = 0.0;
  LogisticRegression untested;
  LogisticRegression tested;

  double predict(double a, double o, double l) const
  {
    if (o == 0.0) {
      if (!uses_age)
        return untested_rate;
      return untested.predict_proba(v1(a));
    }
    if (!uses_age)
      return tested.predict_proba(v1(l));
    Eigen::Vector2d x(a, l);
    return tested.predict_proba(x);
  }
};

ShiftSpec lab_shift_spec(LabShift s)
{
  switch (s) {
  case LabShift::Uniform:
    return ShiftSpec::constant();
  case LabShift::ByDisease:
    return ShiftSpec::linear_in_z({"1-Y", "Y"});
  case LabShift::InterceptSlope:
    return ShiftSpec::linear_in_z({"1", "Y"});
  }
  throw ContractError("unknown lab shift");
}

std::string lab_shift_name(LabShift s)
{
  switch (s) {
  case LabShift::Uniform:
    return "s = delta";
  case LabShift::ByDisease:
    return "s = delta_0 (1 - Y) + delta_1 Y";
  case LabShift::InterceptSlope:
    return "s = delta_0 + delta_1 Y";
  }
  return {};
}

Scenario lab_scenario(const std::string& id, bool with_age, const LabConfig& cfg, LabShift default_shift)
{
  std::vector<VariableSpec> vars;
  if (with_age) {
    vars.push_back({"A", FamilySpec::gaussian_known_var(0.5), {}, EtaFn::constant(v1(0.0))});
    vars.push_back({"Y", FamilySpec::bernoulli_logit(), {"A"}, EtaFn::linear(v1(-1.0), row({0.5}))});
    vars.push_back({"O", FamilySpec::bernoulli_logit(), {"A", "Y"}, EtaFn::linear(v1(-1.0), row({0.5, 2.0}))});
  } else {
    vars.push_back({"Y", FamilySpec::bernoulli_logit(), {}, EtaFn::constant(v1(0.0))});
    vars.push_back({"O", FamilySpec::bernoulli_logit(), {"Y"}, EtaFn::linear(v1(cfg.alpha), row({cfg.beta}))});
  }
  vars.push_back({"L", FamilySpec::gaussian_known_var(1.0), {"O", "Y"},
                  EtaFn::gated("O", 0.0, EtaFn::linear(v1(-0.5), row({0.0, 1.0})))});
  const LabShift shift = cfg.shift.value_or(default_shift);
  ShiftModel model(vars, {{"O", lab_shift_spec(shift)}});

  // Fit the two-branch predictor on training draws.
  Rng rng = make_rng(cfg.seed, "labtest_train");
  const SampleTable train = sample_joint(model, Eigen::VectorXd::Zero(model.d_delta()), cfg.train_n, rng);
  auto pred = std::make_shared<LabPredictor>();
  pred->uses_age = with_age;
  const auto y = train.column("Y");
  const auto o = train.column("O");
  const auto l = train.column("L");
  std::vector<std::size_t> tested, untested;
  for (std::size_t r = 0; r < train.rows(); ++r)
    (o[r] == 1.0 ? tested : untested).push_back(r);
  if (tested.empty() || untested.empty())
    throw ContractError(id + ": training sample needs tested and untested rows");
  const int p1 = with_age ? 2 : 1;
  Eigen::MatrixXd X1(tested.size(), p1);
  Eigen::VectorXd y1(tested.size());
  for (std::size_t k = 0; k < tested.size(); ++k) {
    const std::size_t r = tested[k];
    if (with_age) {
      X1(k, 0) = train.column("A")[r];
      X1(k, 1) = l[r];
    } else {
      X1(k, 0) = l[r];
    }
    y1(k) = y[r];
  }
  pred->tested.fit(X1, y1);
  if (with_age) {
    Eigen::MatrixXd X0(untested.size(), 1);
    Eigen::VectorXd y0(untested.size());
    for (std::size_t k = 0; k < untested.size(); ++k) {
      X0(k, 0) = train.column("A")[untested[k]];
      y0(k) = y[untested[k]];
    }
    pred->untested.fit(X0, y0);
  } else {
    double s = 0.0;
    for (std::size_t r : untested)
      s += y[r];
    pred->untested_rate = s / untested.size();
  }

  const LossKind loss = cfg.loss;
  auto loss_fn = [pred, loss, with_age](const SampleTable& t) {
    const auto ty = t.column("Y");
    const auto to = t.column("O");
    const auto tl = t.column("L");
    std::span<const double> ta;
    if (with_age)
      ta = t.column("A");
    std::vector<double> out(t.rows());
    for (std::size_t r = 0; r < t.rows(); ++r)
      out[r] = binary_loss(loss, pred->predict(with_age ? ta[r] : 0.0, to[r], tl[r]), ty[r]);
    return out;
  };

  Scenario s{.id = id,
             .predictor = with_age ? "logistic(Y ~ A) if O = 0, logistic(Y ~ A + L) if O = 1; shift " +
                                         lab_shift_name(shift)
                                   : "P(Y = 1 | O = 0) if O = 0, logistic(Y ~ L) if O = 1; shift " +
                                         lab_shift_name(shift),
             .loss = loss,
             .model = model,
             .sampler = joint_sampler(model, loss_fn),
             .loss_fn = loss_fn,
             .closed_form = {},
             .enumerable = false};
  return s;
}

// --- attributes ------------------------------------------------------------

ShiftModel attributes_model()
{
  const auto ber = FamilySpec::bernoulli_logit();
  std::vector<VariableSpec> vars{
      {"Young", ber, {}, EtaFn::constant(v1(0.0))},
      {"Male", ber, {}, EtaFn::constant(v1(0.0))},
      {"Eyeglasses", ber, {"Young"}, EtaFn::linear(v1(0.0), row({-0.4}))},
      {"Bald", ber, {"Young", "Male"}, EtaFn::linear(v1(-3.0), row({-1.0, 3.5}))},
      {"Mustache", ber, {"Young", "Male"}, EtaFn::linear(v1(-2.5), row({-1.0, 2.5}))},
      {"Smiling", ber, {"Young", "Male"}, EtaFn::linear(v1(0.25), row({0.5, -0.5}))},
      {"Wearing_Lipstick", ber, {"Young", "Male"}, EtaFn::linear(v1(3.0), row({-0.5, -5.0}))},
      {"Mouth_Slightly_Open", ber, {"Young", "Smiling"}, EtaFn::linear(v1(-1.0), row({0.5, 1.0}))},
      {"Narrow_Eyes", ber, {"Male", "Young", "Smiling"}, EtaFn::linear(v1(-0.5), row({0.3, 0.2, 1.0}))},
  };
  std::vector<Intervention> iv;
  for (const auto& v : vars)
    if (v.name != "Male")
      iv.push_back({v.name, ShiftSpec::per_stratum()});
  return ShiftModel(vars, iv);
}

} // namespace

std::string to_string(LossKind loss)
{
  switch (loss) {
  case LossKind::ZeroOne:
    return "zero_one";
  case LossKind::CrossEntropy:
    return "cross_entropy";
  case LossKind::Squared:
    return "squared";
  case LossKind::Identity:
    return "identity";
  }
  return {};
}

LossKind parse_loss(std::string_view name)
{
  if (name == "zero_one")
    return LossKind::ZeroOne;
  if (name == "cross_entropy")
    return LossKind::CrossEntropy;
  if (name == "squared")
    return LossKind::Squared;
  if (name == "identity")
    return LossKind::Identity;
  throw SchemaError("", "unknown loss '" + std::string(name) + "'");
}

double binary_loss(LossKind loss, double p, double y)
{
  switch (loss) {
  case LossKind::ZeroOne:
    return (p >= 0.5 ? 1.0 : 0.0) != y ? 1.0 : 0.0;
  case LossKind::CrossEntropy: {
    const double q = std::clamp(p, 1e-15, 1.0 - 1e-15);
    return y == 1.0 ? -std::log(q) : -std::log1p(-q);
  }
  case LossKind::Squared:
    return (p - y) * (p - y);
  case LossKind::Identity:
    break;
  }
  throw ContractError("loss " + to_string(loss) + " does not apply to a binary prediction");
}

SampleTable enumerate_support(const ShiftModel& model)
{
  for (const auto& v : model.variables())
    if (v.family.cardinality() == 0)
      throw ScopeError(v.name + " is not finite discrete; enumeration needs a fully discrete model");
  SampleTable table(model.column_names());
  std::vector<double> weights;
  std::vector<double> record(model.row_width(), 0.0);
  const auto& order = model.topological_order();
  std::function<void(std::size_t, double)> rec = [&](std::size_t k, double p) {
    if (k == order.size()) {
      table.append_row(record);
      weights.push_back(p);
      return;
    }
    const int i = order[k];
    const auto& v = model.variable(i);
    const Eigen::VectorXd z = model.parent_values(i, record);
    double* out = record.data() + model.value_offset(i);
    if (model.gated_off(i, z)) {
      out[0] = v.eta.dummy;
      rec(k + 1, p);
      return;
    }
    const Eigen::VectorXd eta = model.eta(i, z);
    for (double w : support_values(v.family)) {
      out[0] = w;
      const double pw = std::exp(log_density(v.family, eta, std::span<const double>(&w, 1)));
      if (pw > 0.0)
        rec(k + 1, p * pw);
    }
  };
  rec(0, 1.0);
  table.set_weights(std::move(weights));
  return table;
}

SampleTable enumerate(const Scenario& scenario)
{
  if (!scenario.enumerable)
    throw ScopeError(scenario.id + " cannot be enumerated");
  SampleTable t = enumerate_support(scenario.model);
  t.set_loss(scenario.loss_fn(t));
  return t;
}

Scenario labtest_small(const LabConfig& config)
{
  return lab_scenario("labtest_small", false, config, LabShift::ByDisease);
}

Scenario labtest_age(const LabConfig& config)
{
  return lab_scenario("labtest_age", true, config, LabShift::InterceptSlope);
}

AnchorConfig default_anchor_config()
{
  AnchorConfig c;
  c.B.resize(4, 4);
  c.B << 2, 1, 0, 1, 2, 2, 0, 3, 3, 3, 0, 2, 4, 2, 4, 0;
  c.M.resize(4, 3);
  c.M << 2, 1, 0, 2, 1, 1, 2, 2, 0, 4, 1, 1;
  c.mu = Eigen::Vector3d(0.5, -0.5, 0.25);
  c.Sigma = Eigen::Matrix3d::Identity();
  c.d_x = 3;
  return c;
}

namespace {

struct AnchorParts {
  Eigen::MatrixXd K;  // (I - B)^-1
  Eigen::VectorXd gamma;
  Eigen::VectorXd r;  // residual Y - gamma^T X = r^T (M A + eps)
};

AnchorParts anchor_parts(const AnchorConfig& c)
{
  const int p = static_cast<int>(c.B.rows());
  const int da = static_cast<int>(c.mu.size());
  if (c.B.cols() != p || c.M.rows() != p || c.M.cols() != da || c.Sigma.rows() != da || c.Sigma.cols() != da)
    throw SchemaError("/linear_anchor", "inconsistent B, M, mu, Sigma shapes");
  if (c.d_x < 1 || c.d_x + 1 > p)
    throw SchemaError("/linear_anchor/d_x", "d_x must leave room for Y");
  if (!(c.noise_sd > 0))
    throw SchemaError("/linear_anchor/noise_sd", "noise_sd must be positive");
  const Eigen::MatrixXd IB = Eigen::MatrixXd::Identity(p, p) - c.B;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(IB);
  if (!lu.isInvertible())
    throw SchemaError("/linear_anchor/B", "I - B is singular");
  AnchorParts out;
  out.K = lu.inverse();
  const Eigen::MatrixXd KM = out.K * c.M;
  const Eigen::VectorXd mean = KM * c.mu;
  const Eigen::MatrixXd second =
      KM * c.Sigma * KM.transpose() + c.noise_sd * c.noise_sd * out.K * out.K.transpose() + mean * mean.transpose();
  if (c.gamma) {
    if (c.gamma->size() != c.d_x)
      throw SchemaError("/linear_anchor/gamma", "gamma must have d_x entries");
    out.gamma = *c.gamma;
  } else {
    out.gamma = second.topLeftCorner(c.d_x, c.d_x).ldlt().solve(second.col(c.d_x).head(c.d_x));
  }
  Eigen::VectorXd cvec = Eigen::VectorXd::Zero(p);
  cvec.head(c.d_x) = -out.gamma;
  cvec(c.d_x) = 1.0;
  out.r = out.K.transpose() * cvec;
  return out;
}

} // namespace

double AnchorQuadratic::operator()(const Eigen::VectorXd& delta) const
{
  const double vd = v.dot(delta);
  return base + u.dot(delta) + 0.5 * vd * vd;
}

AnchorQuadratic anchor_quadratic(const AnchorConfig& c)
{
  const auto parts = anchor_parts(c);
  const Eigen::VectorXd beta = c.M.transpose() * parts.r;
  const double a = beta.dot(c.mu);
  const double noise = c.noise_sd * c.noise_sd * parts.r.squaredNorm();
  AnchorQuadratic q;
  q.base = a * a + beta.dot(c.Sigma * beta) + noise;
  q.u = 2.0 * a * (c.Sigma * beta);
  q.v = std::sqrt(2.0) * (c.Sigma * beta);
  q.gamma = parts.gamma;
  return q;
}

Scenario linear_anchor(const AnchorConfig& c)
{
  const auto parts = anchor_parts(c);
  const int da = static_cast<int>(c.mu.size());
  const int p = static_cast<int>(c.B.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(c.Sigma);
  if (llt.info() != Eigen::Success || !c.Sigma.isApprox(c.Sigma.transpose()))
    throw SchemaError("/linear_anchor/Sigma", "Sigma must be symmetric positive definite");
  const Eigen::MatrixXd prec = llt.solve(Eigen::MatrixXd::Identity(da, da));
  Eigen::VectorXd eta(da + da * da);
  eta.head(da) = prec * c.mu;
  for (int i = 0; i < da; ++i)
    for (int j = 0; j < da; ++j)
      eta(da + i * da + j) = -0.5 * prec(i, j);
  ShiftModel model({{"A", FamilySpec::gaussian_full(da), {}, EtaFn::constant(eta)}},
                   {{"A", ShiftSpec::variance_scaled_mean()}});

  std::vector<std::string> extra;
  for (int k = 0; k < p; ++k) {
    if (k < c.d_x)
      extra.push_back("X[" + std::to_string(k) + "]");
    else if (k == c.d_x)
      extra.push_back("Y");
    else
      extra.push_back("H[" + std::to_string(k - c.d_x - 1) + "]");
  }
  const Eigen::VectorXd gamma = parts.gamma;
  const int d_x = c.d_x;
  auto loss_fn = [gamma, d_x](const SampleTable& t) {
    std::vector<std::span<const double>> xs;
    for (int k = 0; k < d_x; ++k)
      xs.push_back(t.column("X[" + std::to_string(k) + "]"));
    const auto y = t.column("Y");
    std::vector<double> out(t.rows());
    for (std::size_t r = 0; r < t.rows(); ++r) {
      double res = y[r];
      for (int k = 0; k < d_x; ++k)
        res -= gamma(k) * xs[k][r];
      out[r] = res * res;
    }
    return out;
  };
  const Eigen::MatrixXd K = parts.K;
  const Eigen::MatrixXd M = c.M;
  const double sd = c.noise_sd;
  auto sampler = [model, K, M, sd, extra, loss_fn, da, p](const Eigen::VectorXd& delta, std::size_t n, Rng& rng) {
    SampleTable t = sample_joint(model, delta, n, rng);
    std::normal_distribution<double> normal;
    std::vector<std::vector<double>> cols(p, std::vector<double>(n));
    Eigen::VectorXd a(da), e(p);
    std::vector<std::span<const double>> acol;
    for (int j = 0; j < da; ++j)
      acol.push_back(t.column("A[" + std::to_string(j) + "]"));
    for (std::size_t r = 0; r < n; ++r) {
      for (int j = 0; j < da; ++j)
        a(j) = acol[j][r];
      for (int k = 0; k < p; ++k)
        e(k) = sd * normal(rng);
      const Eigen::VectorXd v = K * (M * a + e);
      for (int k = 0; k < p; ++k)
        cols[k][r] = v(k);
    }
    for (int k = 0; k < p; ++k)
      t.add_column(extra[k], std::move(cols[k]));
    t.set_loss(loss_fn(t));
    return t;
  };
  const AnchorQuadratic q = anchor_quadratic(c);
  Scenario s{.id = "linear_anchor",
             .predictor = "linear gamma^T X (population least squares unless given)",
             .loss = LossKind::Squared,
             .model = model,
             .sampler = sampler,
             .loss_fn = loss_fn,
             .closed_form = q,
             .enumerable = false};
  return s;
}

Attributes31Classifier attributes31_classifier()
{
  return {0.5,
          {{"Bald", 3.0},
           {"Mustache", 1.5},
           {"Wearing_Lipstick", -3.5},
           {"Smiling", -0.25},
           {"Narrow_Eyes", 0.2}}};
}

double Attributes31Classifier::score(const ShiftModel& model, std::span<const double> record) const
{
  double s = intercept;
  for (const auto& [name, w] : weights)
    s += w * record[model.value_offset(model.variable_index(name))];
  return sigmoid(s);
}

Scenario attributes31(LossKind loss)
{
  ShiftModel model = attributes_model();
  const auto clf = attributes31_classifier();
  auto loss_fn = [model, clf, loss](const SampleTable& t) {
    std::vector<std::pair<std::span<const double>, double>> cols;
    for (const auto& [name, w] : clf.weights)
      cols.emplace_back(t.column(name), w);
    const auto male = t.column("Male");
    std::vector<double> out(t.rows());
    for (std::size_t r = 0; r < t.rows(); ++r) {
      double s = clf.intercept;
      for (const auto& [col, w] : cols)
        s += w * col[r];
      out[r] = binary_loss(loss, sigmoid(s), male[r]);
    }
    return out;
  };
  Scenario s{.id = "attributes31",
             .predictor = "sigmoid(0.5 + 3 Bald + 1.5 Mustache - 3.5 Wearing_Lipstick - 0.25 Smiling + 0.2 "
                          "Narrow_Eyes) against Male",
             .loss = loss,
             .model = model,
             .sampler = joint_sampler(model, loss_fn),
             .loss_fn = loss_fn,
             .closed_form = {},
             .enumerable = true};
  return s;
}

Scenario gauss1d()
{
  ShiftModel model({{"X", FamilySpec::gaussian_known_var(1.0), {}, EtaFn::constant(v1(0.0))}},
                   {{"X", ShiftSpec::constant()}});
  auto loss_fn = [](const SampleTable& t) {
    const auto x = t.column("X");
    return std::vector<double>(x.begin(), x.end());
  };
  Scenario s{.id = "gauss1d",
             .predictor = "none; loss is X itself",
             .loss = LossKind::Identity,
             .model = model,
             .sampler = joint_sampler(model, loss_fn),
             .loss_fn = loss_fn,
             .closed_form = [](const Eigen::VectorXd& d) { return d(0); },
             .enumerable = false};
  return s;
}

std::vector<std::string> scenario_ids()
{
  return {"labtest_small", "labtest_age", "linear_anchor", "attributes31", "gauss1d"};
}

Scenario make_scenario(std::string_view id, std::uint64_t seed)
{
  LabConfig lab;
  lab.seed = seed;
  if (id == "labtest_small")
    return labtest_small(lab);
  if (id == "labtest_age")
    return labtest_age(lab);
  if (id == "linear_anchor")
    return linear_anchor();
  if (id == "attributes31")
    return attributes31();
  if (id == "gauss1d")
    return gauss1d();
  throw NotFoundError("unknown scenario '" + std::string(id) + "'");
}

} // namespace shiftbench::sim
