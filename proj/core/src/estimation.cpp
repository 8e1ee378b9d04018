#include "shiftbench/estimation.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "shiftbench/error.hpp"

namespace shiftbench {

namespace {

struct Records {
  std::size_t n = 0;
  int width = 0;
  std::vector<double> data;
  std::span<const double> row(std::size_t r) const { return {data.data() + r * width, std::size_t(width)}; }
};

Records gather_all(const ShiftModel& model, const SampleTable& sample)
{
  Records rec;
  rec.n = sample.rows();
  rec.width = model.row_width();
  rec.data.resize(rec.n * rec.width);
  const auto binding = model.bind(sample);
  for (std::size_t r = 0; r < rec.n; ++r)
    model.gather(sample, binding, r, {rec.data.data() + r * rec.width, std::size_t(rec.width)});
  return rec;
}

void split_rows(std::size_t n, bool split, std::vector<std::size_t>& fit_rows, std::vector<std::size_t>& eval_rows)
{
  fit_rows.clear();
  eval_rows.clear();
  for (std::size_t r = 0; r < n; ++r) {
    if (!split || r % 2 == 0)
      fit_rows.push_back(r);
    if (!split || r % 2 == 1)
      eval_rows.push_back(r);
  }
}

// Sequential accumulation so that unit weights reproduce weighted_mean bit for bit.
double sequential_mean(const Eigen::VectorXd& x, const Eigen::VectorXd& w)
{
  double s = 0, wsum = 0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    s += w(k) * x(k);
    wsum += w(k);
  }
  return s / wsum;
}

Estimate mean_and_se(const Eigen::VectorXd& x, const Eigen::VectorXd& w)
{
  Estimate e;
  e.mean = sequential_mean(x, w);
  const Eigen::VectorXd wn = w / w.sum();
  const double neff = 1.0 / wn.squaredNorm();
  if (neff > 1.0) {
    const double var = (wn.array() * (x.array() - e.mean).square()).sum();
    e.std_error = std::sqrt(var / (neff - 1.0));
  }
  return e;
}

Eigen::VectorXd row_weights(const SampleTable& sample, const std::vector<std::size_t>& rows)
{
  Eigen::VectorXd w(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k)
    w(k) = sample.weight(rows[k]);
  if (!(w.sum() > 0))
    throw ContractError("sample weights sum to zero");
  return w;
}

void require_loss(const SampleTable& sample)
{
  if (!sample.has_loss())
    throw ContractError(std::string("sample has no ") + kLossColumn + " column");
}

std::string format_double(double x)
{
  std::ostringstream os;
  os << x;
  return os.str();
}

} // namespace

ConditionalMean ConditionalMean::fit(const ShiftModel& model, int var, const std::vector<Eigen::VectorXd>& z,
                                     const Eigen::MatrixXd& y, std::span<const double> w,
                                     const AuxiliaryConfig& config)
{
  ConditionalMean cm;
  const Eigen::Index n = y.rows();
  const Eigen::Index m = y.cols();
  const int strata = model.num_strata(var);
  if (strata > 0) {
    cm.kind_ = Kind::StratumMeans;
    std::vector<Eigen::VectorXd> sum(strata, Eigen::VectorXd::Zero(m));
    std::vector<double> wsum(strata, 0.0);
    std::vector<int> sid(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      sid[r] = model.stratum(var, z[r]);
      const double wr = w.empty() ? 1.0 : w[r];
      sum[sid[r]] += wr * y.row(r).transpose();
      wsum[sid[r]] += wr;
    }
    cm.strata_.resize(strata);
    for (int s = 0; s < strata; ++s) {
      if (!(wsum[s] > 0))
        throw CoverageError(model.variable(var).name, model.stratum_label(var, s),
                            "no rows in stratum " + model.stratum_label(var, s) + " of " + model.variable(var).name);
      cm.strata_[s] = sum[s] / wsum[s];
    }
    // In-sample R^2 for diagnostics.
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(m);
    double wt = 0;
    for (Eigen::Index r = 0; r < n; ++r) {
      const double wr = w.empty() ? 1.0 : w[r];
      mean += wr * y.row(r).transpose();
      wt += wr;
    }
    mean /= wt;
    Eigen::VectorXd sst = Eigen::VectorXd::Zero(m), sse = Eigen::VectorXd::Zero(m);
    for (Eigen::Index r = 0; r < n; ++r) {
      const double wr = w.empty() ? 1.0 : w[r];
      sst += wr * (y.row(r).transpose() - mean).cwiseAbs2();
      sse += wr * (y.row(r).transpose() - cm.strata_[sid[r]]).cwiseAbs2();
    }
    cm.r2_.resize(m);
    for (Eigen::Index c = 0; c < m; ++c)
      cm.r2_(c) = sst(c) > 0 ? 1.0 - sse(c) / sst(c) : 1.0;
    return cm;
  }

  cm.kind_ = Kind::PolynomialRidge;
  const auto& parents = model.parent_indices(var);
  std::vector<bool> binary;
  for (int p : parents)
    binary.push_back(model.variable(p).family.kind() == FamilyKind::BernoulliLogit);
  cm.features_ = PolynomialFeatures(static_cast<int>(parents.size()), config.poly_degree, binary);
  Eigen::MatrixXd X(n, cm.features_.size());
  for (Eigen::Index r = 0; r < n; ++r) {
    Eigen::VectorXd f(cm.features_.size());
    cm.features_.expand(z[r], f);
    X.row(r) = f.transpose();
  }
  cm.ridge_.fit(X, y, w, config.ridge_lambda);
  cm.r2_ = cm.ridge_.r_squared();
  return cm;
}

Eigen::VectorXd ConditionalMean::predict(const ShiftModel& model, int var, const Eigen::VectorXd& z) const
{
  if (kind_ == Kind::StratumMeans)
    return strata_[model.stratum(var, z)];
  Eigen::VectorXd f(features_.size());
  features_.expand(z, f);
  return ridge_.predict(f);
}

AuxiliaryRegressors fit_auxiliaries(const ShiftModel& model, const SampleTable& sample, const AuxiliaryConfig& config)
{
  require_loss(sample);
  if (config.poly_degree < 1 || config.poly_degree > 3)
    throw DomainError("poly_degree must be between 1 and 3");
  if (!(config.ridge_lambda >= 0))
    throw DomainError("ridge_lambda must be nonnegative");
  const Records rec = gather_all(model, sample);
  std::vector<std::size_t> fit_rows, eval_rows;
  split_rows(rec.n, config.sample_split, fit_rows, eval_rows);
  if (fit_rows.empty() || eval_rows.empty())
    throw ContractError("sample too small");
  const auto loss = sample.loss();

  AuxiliaryRegressors aux;
  aux.sample_split = config.sample_split;
  bool any_ridge = false, any_strata = false;
  std::vector<double> w(fit_rows.size());
  for (std::size_t k = 0; k < fit_rows.size(); ++k)
    w[k] = sample.weight(fit_rows[k]);

  for (const auto& b : model.blocks()) {
    const int i = b.var_index;
    const auto& v = model.variable(i);
    const int dim_t = v.family.dim_t();
    std::vector<Eigen::VectorXd> z(fit_rows.size());
    Eigen::MatrixXd t(fit_rows.size(), dim_t);
    Eigen::MatrixXd l(fit_rows.size(), 1);
    std::vector<bool> used(dim_t, config.fit_unused_coords);
    for (std::size_t k = 0; k < fit_rows.size(); ++k) {
      const auto row = rec.row(fit_rows[k]);
      z[k] = model.parent_values(i, row);
      t.row(k) = sufficient_stat(v.family, model.value(i, row), v.name).transpose();
      l(k, 0) = loss[fit_rows[k]];
      const ShiftJacobians jac = model.shift_jacobians(i, z[k]);
      for (int c = 0; c < dim_t; ++c) {
        if (!jac.d1.row(c).isZero(0))
          used[c] = true;
        if (!jac.d2.empty() && !jac.d2[c].isZero(0))
          used[c] = true;
      }
    }
    AuxiliaryRegressors::Entry e;
    e.var = i;
    for (int c = 0; c < dim_t; ++c)
      if (used[c])
        e.coords.push_back(c);
    Eigen::MatrixXd tc(fit_rows.size(), e.coords.size());
    for (std::size_t c = 0; c < e.coords.size(); ++c)
      tc.col(c) = t.col(e.coords[c]);
    e.mu_w = ConditionalMean::fit(model, i, z, tc, w, config);
    e.mu_ell = ConditionalMean::fit(model, i, z, l, w, config);
    (e.mu_w.kind() == ConditionalMean::Kind::StratumMeans ? any_strata : any_ridge) = true;
    aux.entries.push_back(std::move(e));
  }
  const std::string ridge = "ridge(degree=" + std::to_string(config.poly_degree) +
                            ", lambda=" + format_double(config.ridge_lambda) + ")";
  if (any_strata && any_ridge)
    aux.model_class = "stratum_means+" + ridge;
  else if (any_ridge)
    aux.model_class = ridge;
  else
    aux.model_class = "stratum_means";
  if (config.sample_split)
    aux.model_class += ", split=even/odd";
  return aux;
}

Residuals compute_residuals(const ShiftModel& model, const SampleTable& sample, const AuxiliaryRegressors& aux)
{
  require_loss(sample);
  if (aux.entries.size() != model.blocks().size())
    throw ContractError("auxiliaries do not match the model's delta blocks");
  const Records rec = gather_all(model, sample);
  std::vector<std::size_t> fit_rows;
  Residuals res;
  split_rows(rec.n, aux.sample_split, fit_rows, res.rows);
  const std::size_t n = res.rows.size();
  if (n == 0)
    throw ContractError("no rows to average over");
  res.weight = row_weights(sample, res.rows);
  res.loss.resize(n);
  for (std::size_t k = 0; k < n; ++k)
    res.loss(k) = sample.loss()[res.rows[k]];

  const auto& blocks = model.blocks();
  res.blocks.resize(blocks.size());
  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    const auto& b = blocks[bi];
    const auto& e = aux.entries[bi];
    const int i = b.var_index;
    if (e.var != i)
      throw ContractError("auxiliaries do not match the model's delta blocks");
    const auto& v = model.variable(i);
    const int dim_t = v.family.dim_t();
    auto& out = res.blocks[bi];
    out.eps_ell.resize(n);
    out.u.resize(n, b.size);
    out.eps_t = Eigen::MatrixXd::Zero(n, dim_t);
    const bool second = model.has_second_order(i);
    if (second)
      out.d2_eps.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const auto row = rec.row(res.rows[k]);
      const Eigen::VectorXd z = model.parent_values(i, row);
      const Eigen::VectorXd t = sufficient_stat(v.family, model.value(i, row), v.name);
      const Eigen::VectorXd mu = e.mu_w.predict(model, i, z);
      for (std::size_t c = 0; c < e.coords.size(); ++c)
        out.eps_t(k, e.coords[c]) = t(e.coords[c]) - mu(c);
      out.eps_ell(k) = res.loss(k) - e.mu_ell.predict(model, i, z)(0);
      const ShiftJacobians jac = model.shift_jacobians(i, z);
      out.u.row(k) = (jac.d1.transpose() * out.eps_t.row(k).transpose()).transpose();
      if (second) {
        Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(b.size, b.size);
        for (int c = 0; c < dim_t; ++c)
          if (out.eps_t(k, c) != 0.0)
            acc += out.eps_t(k, c) * jac.d2[c];
        out.d2_eps[k] = std::move(acc);
      }
    }
  }
  return res;
}

std::vector<std::string> CurvatureEstimate::labels() const
{
  std::vector<std::string> out;
  for (const auto& b : block_index)
    out.insert(out.end(), b.labels.begin(), b.labels.end());
  return out;
}

CurvatureEstimate estimate_curvature(const ShiftModel& model, const Residuals& res)
{
  const int d = model.d_delta();
  const auto& blocks = model.blocks();
  if (res.blocks.size() != blocks.size())
    throw ContractError("residuals do not match the model's delta blocks");
  const Eigen::Index n = res.loss.size();
  CurvatureEstimate curv;
  curv.n = static_cast<std::size_t>(n);
  curv.block_index = blocks;
  curv.base_loss = sequential_mean(res.loss, res.weight);
  const Eigen::VectorXd wn = res.weight / res.weight.sum();
  curv.sg1 = Eigen::VectorXd::Zero(d);

  Eigen::MatrixXd u_all(n, d);
  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    if (res.blocks[bi].u.cols() != blocks[bi].size)
      throw ContractError("d_delta mismatch between residuals and model");
    u_all.middleCols(blocks[bi].offset, blocks[bi].size) = res.blocks[bi].u;
  }
  // Cross-block terms use the centered loss.
  const Eigen::VectorXd centered = wn.cwiseProduct((res.loss.array() - curv.base_loss).matrix());
  Eigen::MatrixXd sg2 = u_all.transpose() * (u_all.array().colwise() * centered.array()).matrix();

  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    const auto& b = blocks[bi];
    const auto& rb = res.blocks[bi];
    const Eigen::VectorXd we = wn.cwiseProduct(rb.eps_ell);
    curv.sg1.segment(b.offset, b.size) = rb.u.transpose() * we;
    Eigen::MatrixXd diag = rb.u.transpose() * (rb.u.array().colwise() * we.array()).matrix();
    if (!rb.d2_eps.empty())
      for (Eigen::Index k = 0; k < n; ++k)
        diag += we(k) * rb.d2_eps[k];
    sg2.block(b.offset, b.offset, b.size, b.size) = diag;
  }
  curv.asymmetry = d > 0 ? (sg2 - sg2.transpose()).cwiseAbs().maxCoeff() : 0.0;
  curv.sg2 = 0.5 * (sg2 + sg2.transpose());
  return curv;
}

CurvatureEstimate estimate_curvature(const ShiftModel& model, const SampleTable& sample, const AuxiliaryRegressors& aux)
{
  return estimate_curvature(model, compute_residuals(model, sample, aux));
}

double taylor_estimate(const CurvatureEstimate& curv, const Eigen::VectorXd& delta)
{
  if (delta.size() != curv.sg1.size())
    throw ContractError("delta has length " + std::to_string(delta.size()) + ", estimate has d_delta " +
                        std::to_string(curv.sg1.size()));
  if (delta.isZero(0))
    return curv.base_loss;
  return curv.base_loss + delta.dot(curv.sg1) + 0.5 * delta.dot(curv.sg2 * delta);
}

Estimate taylor_estimate_with_se(const Residuals& res, const Eigen::VectorXd& delta)
{
  const Eigen::Index n = res.loss.size();
  const double lbar = sequential_mean(res.loss, res.weight);
  Eigen::VectorXd summand = res.loss;
  Eigen::VectorXd lin_total = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd lin_sq = Eigen::VectorXd::Zero(n);
  Eigen::Index offset = 0;
  for (const auto& rb : res.blocks) {
    const Eigen::Index size = rb.u.cols();
    if (offset + size > delta.size())
      throw ContractError("delta is shorter than the residual blocks");
    const Eigen::VectorXd db = delta.segment(offset, size);
    const Eigen::VectorXd lin = rb.u * db;
    for (Eigen::Index k = 0; k < n; ++k) {
      double quad = lin(k) * lin(k);
      if (!rb.d2_eps.empty())
        quad += db.dot(rb.d2_eps[k] * db);
      summand(k) += rb.eps_ell(k) * (lin(k) + 0.5 * quad);
    }
    lin_total += lin;
    lin_sq += lin.cwiseAbs2();
    offset += size;
  }
  if (offset != delta.size())
    throw ContractError("delta length does not match the residual blocks");
  summand += 0.5 * ((res.loss.array() - lbar) * (lin_total.array().square() - lin_sq.array())).matrix();
  return mean_and_se(summand, res.weight);
}

IsObjective::IsObjective(const ShiftModel& model, const SampleTable& sample) : model_(&model)
{
  require_loss(sample);
  const Records rec = gather_all(model, sample);
  const std::size_t n = rec.n;
  if (n == 0)
    throw ContractError("empty sample");
  loss_ = Eigen::Map<const Eigen::VectorXd>(sample.loss().data(), n);
  std::vector<std::size_t> all(n);
  for (std::size_t r = 0; r < n; ++r)
    all[r] = r;
  row_weight_ = row_weights(sample, all);

  for (const auto& b : model.blocks()) {
    PerVar pv;
    pv.var = b.var_index;
    pv.block = &b;
    const auto& v = model.variable(b.var_index);
    std::map<std::vector<double>, int> index;
    pv.row_key.resize(n);
    std::vector<double> key;
    for (std::size_t r = 0; r < n; ++r) {
      const auto row = rec.row(r);
      const Eigen::VectorXd z = model.parent_values(pv.var, row);
      const auto w = model.value(pv.var, row);
      key.assign(z.data(), z.data() + z.size());
      key.insert(key.end(), w.begin(), w.end());
      auto [it, fresh] = index.try_emplace(key, static_cast<int>(pv.unique.size()));
      if (fresh) {
        Unique u;
        u.z = z;
        u.eta = model.eta(pv.var, z);
        u.t = sufficient_stat(v.family, w, v.name);
        u.skip = v.family.kind() == FamilyKind::BernoulliLogit && std::isinf(u.eta(0));
        pv.unique.push_back(std::move(u));
      }
      pv.row_key[r] = it->second;
    }
    vars_.push_back(std::move(pv));
  }
}

Eigen::VectorXd IsObjective::weights(const Eigen::VectorXd& delta) const
{
  if (delta.size() != model_->d_delta())
    throw ContractError("delta has length " + std::to_string(delta.size()) + ", model expects " +
                        std::to_string(model_->d_delta()));
  const Eigen::Index n = loss_.size();
  Eigen::VectorXd logw = Eigen::VectorXd::Zero(n);
  if (delta.isZero(0))
    return Eigen::VectorXd::Ones(n);
  for (const auto& pv : vars_) {
    const auto& v = model_->variable(pv.var);
    const Eigen::VectorXd db = delta.segment(pv.block->offset, pv.block->size);
    if (db.isZero(0))
      continue;
    std::vector<double> factor(pv.unique.size(), 0.0);
    for (std::size_t u = 0; u < pv.unique.size(); ++u) {
      const auto& q = pv.unique[u];
      if (q.skip)
        continue;
      const Eigen::VectorXd s = model_->shift_value(pv.var, q.z, q.eta, db);
      if (s.isZero(0))
        continue;
      const Eigen::VectorXd eta_s = q.eta + s;
      if (!in_domain(v.family, eta_s)) {
        // Delegate to apply_shift for the typed error.
        model_->apply_shift(pv.var, q.z, delta);
      }
      factor[u] = s.dot(q.t) - log_partition(v.family, eta_s) + log_partition(v.family, q.eta);
    }
    for (Eigen::Index r = 0; r < n; ++r)
      logw(r) += factor[pv.row_key[r]];
  }
  return logw.array().exp();
}

Estimate IsObjective::estimate(const Eigen::VectorXd& delta) const
{
  const Eigen::VectorXd x = weights(delta).cwiseProduct(loss_);
  return mean_and_se(x, row_weight_);
}

Estimate is_estimate(const ShiftModel& model, const SampleTable& sample, const Eigen::VectorXd& delta)
{
  return IsObjective(model, sample).estimate(delta);
}

BoundResult taylor_error_bound(const ShiftModel& model, const CurvatureEstimate& curv, const Eigen::VectorXd& delta,
                               const BoundConfig& config)
{
  if (delta.size() != curv.sg1.size() || delta.size() != model.d_delta())
    throw ContractError("delta length does not match the estimate");
  BoundResult out;
  if (delta.isZero(0))
    return out;
  if (model.blocks().size() != 1 || model.shift(model.blocks()[0].var_index)->form != ShiftSpec::Form::Constant)
    throw ScopeError("the Taylor error bound covers a single intervened variable with a Constant shift");
  if (!config.simulate)
    throw ContractError("taylor_error_bound needs a simulator");
  if (config.grid_points < 2)
    throw DomainError("grid_points must be at least 2");

  const int i = model.blocks()[0].var_index;
  const auto& v = model.variable(i);
  const int d = model.d_delta();
  Eigen::MatrixXd m0;
  for (int g = 0; g < config.grid_points; ++g) {
    const double t = static_cast<double>(g) / (config.grid_points - 1);
    const Eigen::VectorXd td = t * delta;
    Rng rng = make_rng(config.seed, "taylor_bound");
    const SampleTable s = config.simulate(td, config.n, rng);
    require_loss(s);
    const Records rec = gather_all(model, s);
    const auto loss = s.loss();
    double lbar = 0;
    for (double l : loss)
      lbar += l;
    lbar /= static_cast<double>(rec.n);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t r = 0; r < rec.n; ++r) {
      const auto row = rec.row(r);
      const Eigen::VectorXd z = model.parent_values(i, row);
      const Eigen::VectorXd eta_t = model.apply_shift(i, z, td);
      if (v.family.kind() == FamilyKind::BernoulliLogit && std::isinf(eta_t(0)))
        continue;
      const Eigen::MatrixXd d1 = model.shift_jacobians(i, z).d1;
      const Eigen::VectorXd eps =
          d1.transpose() * (sufficient_stat(v.family, model.value(i, row), v.name) - mean_stat(v.family, eta_t));
      const Eigen::MatrixXd vt = d1.transpose() * var_stat(v.family, eta_t) * d1;
      m += (loss[r] - lbar) * (eps * eps.transpose() - vt);
    }
    m /= static_cast<double>(rec.n);
    if (g == 0)
      m0 = m;
    const Eigen::MatrixXd k = m - m0;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (k + k.transpose()), Eigen::EigenvaluesOnly);
    const double rho = es.eigenvalues().cwiseAbs().maxCoeff();
    out.t.push_back(t);
    out.spectral_radius.push_back(rho);
  }
  std::size_t best = 0;
  for (std::size_t g = 1; g < out.spectral_radius.size(); ++g)
    if (out.spectral_radius[g] > out.spectral_radius[best])
      best = g;
  out.argmax_t = out.t[best];
  out.bound = 0.5 * out.spectral_radius[best] * delta.squaredNorm();
  return out;
}

} // namespace shiftbench
