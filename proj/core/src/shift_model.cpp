#include "shiftbench/shift_model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "shiftbench/error.hpp"

namespace shiftbench {

EtaFn EtaFn::constant(Eigen::VectorXd v)
{
  EtaFn f;
  f.form = Form::Constant;
  f.value = std::move(v);
  return f;
}

EtaFn EtaFn::linear(Eigen::VectorXd intercept, Eigen::MatrixXd coefficients)
{
  EtaFn f;
  f.form = Form::Linear;
  f.intercept = std::move(intercept);
  f.coefficients = std::move(coefficients);
  return f;
}

EtaFn EtaFn::tabular(std::vector<Eigen::VectorXd> rows)
{
  EtaFn f;
  f.form = Form::Tabular;
  f.table = std::move(rows);
  return f;
}

EtaFn EtaFn::gated(std::string gate, double dummy, EtaFn inner)
{
  EtaFn f;
  f.form = Form::Gated;
  f.gate = std::move(gate);
  f.dummy = dummy;
  f.inner = std::make_shared<const EtaFn>(std::move(inner));
  return f;
}

ShiftSpec ShiftSpec::constant(std::vector<int> coords)
{
  ShiftSpec s;
  s.form = Form::Constant;
  s.target_coords = std::move(coords);
  return s;
}

ShiftSpec ShiftSpec::per_stratum(std::vector<int> coords)
{
  ShiftSpec s;
  s.form = Form::PerStratum;
  s.target_coords = std::move(coords);
  return s;
}

ShiftSpec ShiftSpec::linear_in_z(std::vector<std::string> features, std::vector<int> coords)
{
  ShiftSpec s;
  s.form = Form::LinearInZ;
  s.features = std::move(features);
  s.target_coords = std::move(coords);
  return s;
}

ShiftSpec ShiftSpec::multiplicative(std::vector<int> coords)
{
  ShiftSpec s;
  s.form = Form::Multiplicative;
  s.target_coords = std::move(coords);
  return s;
}

ShiftSpec ShiftSpec::variance_scaled_mean()
{
  ShiftSpec s;
  s.form = Form::VarianceScaledMean;
  return s;
}

ShiftSpec ShiftSpec::domain_guarded(ShiftSpec inner, double epsilon, double temperature,
                                    std::vector<GuardBound> bounds)
{
  ShiftSpec s;
  s.form = Form::DomainGuarded;
  s.inner = std::make_shared<const ShiftSpec>(std::move(inner));
  s.guard_epsilon = epsilon;
  s.guard_temperature = temperature;
  s.bounds = std::move(bounds);
  return s;
}

// ---------------------------------------------------------------------------
// Shift forms

struct FormContext {
  std::string var;
  FamilySpec family;
  std::vector<std::string> parent_names;
  std::vector<int> parent_card;  // 0 for non-finite parents
  std::vector<bool> parent_one_based;
};

class ShiftForm {
public:
  virtual ~ShiftForm() = default;
  virtual std::unique_ptr<ShiftForm> clone() const = 0;
  virtual int d() const = 0;
  virtual std::vector<std::string> labels() const = 0;
  virtual Eigen::VectorXd value(const Eigen::VectorXd& z, const Eigen::VectorXd& eta,
                                const Eigen::VectorXd& delta) const = 0;
  /// Fills d1 (dim_T x d) and, for forms with curvature, d2.
  virtual void jacobians(const Eigen::VectorXd& z, const Eigen::VectorXd& eta, ShiftJacobians& out) const = 0;
  virtual bool second_order() const { return false; }
};

namespace {

std::string coord_suffix(const std::vector<int>& coords, int a)
{
  return coords.size() > 1 ? "[" + std::to_string(coords[a]) + "]" : std::string();
}

int stratum_of(const FormContext& ctx, const Eigen::VectorXd& z)
{
  int s = 0;
  for (std::size_t p = 0; p < ctx.parent_card.size(); ++p) {
    const int card = ctx.parent_card[p];
    const int v = static_cast<int>(z(p));
    const int vi = ctx.parent_one_based[p] ? v - 1 : v;
    if (static_cast<double>(v) != z(p) || vi < 0 || vi >= card) {
      std::ostringstream os;
      os << ctx.var << ": parent '" << ctx.parent_names[p] << "' has value " << z(p)
         << " outside its discrete support";
      throw DomainError(os.str());
    }
    s = s * card + vi;
  }
  return s;
}

class ConstantForm : public ShiftForm {
public:
  ConstantForm(FormContext ctx, std::vector<int> coords) : ctx_(std::move(ctx)), coords_(std::move(coords)) {}
  std::unique_ptr<ShiftForm> clone() const override { return std::make_unique<ConstantForm>(*this); }
  int d() const override { return static_cast<int>(coords_.size()); }
  std::vector<std::string> labels() const override
  {
    std::vector<std::string> out;
    for (std::size_t a = 0; a < coords_.size(); ++a)
      out.push_back(ctx_.var + coord_suffix(coords_, a));
    return out;
  }
  Eigen::VectorXd value(const Eigen::VectorXd&, const Eigen::VectorXd&, const Eigen::VectorXd& delta) const override
  {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(ctx_.family.dim_t());
    for (std::size_t a = 0; a < coords_.size(); ++a)
      s(coords_[a]) += delta(a);
    return s;
  }
  void jacobians(const Eigen::VectorXd&, const Eigen::VectorXd&, ShiftJacobians& out) const override
  {
    out.d1 = Eigen::MatrixXd::Zero(ctx_.family.dim_t(), d());
    for (std::size_t a = 0; a < coords_.size(); ++a)
      out.d1(coords_[a], a) = 1.0;
    out.d2.clear();
  }

private:
  FormContext ctx_;
  std::vector<int> coords_;
};

class PerStratumForm : public ShiftForm {
public:
  PerStratumForm(FormContext ctx, std::vector<int> coords, int strata, std::vector<std::string> stratum_labels)
      : ctx_(std::move(ctx)), coords_(std::move(coords)), strata_(strata), stratum_labels_(std::move(stratum_labels))
  {
  }
  std::unique_ptr<ShiftForm> clone() const override { return std::make_unique<PerStratumForm>(*this); }
  int d() const override { return strata_ * static_cast<int>(coords_.size()); }
  std::vector<std::string> labels() const override
  {
    std::vector<std::string> out;
    for (int s = 0; s < strata_; ++s)
      for (std::size_t a = 0; a < coords_.size(); ++a) {
        std::string l = ctx_.var;
        if (!stratum_labels_[s].empty())
          l += " | " + stratum_labels_[s];
        out.push_back(l + coord_suffix(coords_, a));
      }
    return out;
  }
  Eigen::VectorXd value(const Eigen::VectorXd& z, const Eigen::VectorXd&, const Eigen::VectorXd& delta) const override
  {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(ctx_.family.dim_t());
    const int k = stratum_of(ctx_, z);
    const int m = static_cast<int>(coords_.size());
    for (int a = 0; a < m; ++a)
      s(coords_[a]) += delta(k * m + a);
    return s;
  }
  void jacobians(const Eigen::VectorXd& z, const Eigen::VectorXd&, ShiftJacobians& out) const override
  {
    out.d1 = Eigen::MatrixXd::Zero(ctx_.family.dim_t(), d());
    const int k = stratum_of(ctx_, z);
    const int m = static_cast<int>(coords_.size());
    for (int a = 0; a < m; ++a)
      out.d1(coords_[a], k * m + a) = 1.0;
    out.d2.clear();
  }

private:
  FormContext ctx_;
  std::vector<int> coords_;
  int strata_;
  std::vector<std::string> stratum_labels_;
};

struct Factor {
  int parent = -1;  // -1: the constant 1
  bool one_minus = false;
};

class LinearInZForm : public ShiftForm {
public:
  LinearInZForm(FormContext ctx, std::vector<int> coords, std::vector<std::string> names,
                std::vector<std::vector<Factor>> features)
      : ctx_(std::move(ctx)), coords_(std::move(coords)), names_(std::move(names)), features_(std::move(features))
  {
  }
  std::unique_ptr<ShiftForm> clone() const override { return std::make_unique<LinearInZForm>(*this); }
  int d() const override { return static_cast<int>(features_.size() * coords_.size()); }
  std::vector<std::string> labels() const override
  {
    std::vector<std::string> out;
    for (const auto& f : names_)
      for (std::size_t a = 0; a < coords_.size(); ++a)
        out.push_back(ctx_.var + coord_suffix(coords_, a) + " : " + f);
    return out;
  }
  Eigen::VectorXd phi(const Eigen::VectorXd& z) const
  {
    Eigen::VectorXd out(features_.size());
    for (std::size_t k = 0; k < features_.size(); ++k) {
      double v = 1.0;
      for (const auto& f : features_[k])
        if (f.parent >= 0)
          v *= f.one_minus ? 1.0 - z(f.parent) : z(f.parent);
      out(k) = v;
    }
    return out;
  }
  Eigen::VectorXd value(const Eigen::VectorXd& z, const Eigen::VectorXd&, const Eigen::VectorXd& delta) const override
  {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(ctx_.family.dim_t());
    const Eigen::VectorXd p = phi(z);
    const int m = static_cast<int>(coords_.size());
    for (int k = 0; k < p.size(); ++k)
      for (int a = 0; a < m; ++a)
        s(coords_[a]) += delta(k * m + a) * p(k);
    return s;
  }
  void jacobians(const Eigen::VectorXd& z, const Eigen::VectorXd&, ShiftJacobians& out) const override
  {
    out.d1 = Eigen::MatrixXd::Zero(ctx_.family.dim_t(), d());
    const Eigen::VectorXd p = phi(z);
    const int m = static_cast<int>(coords_.size());
    for (int k = 0; k < p.size(); ++k)
      for (int a = 0; a < m; ++a)
        out.d1(coords_[a], k * m + a) = p(k);
    out.d2.clear();
  }

private:
  FormContext ctx_;
  std::vector<int> coords_;
  std::vector<std::string> names_;
  std::vector<std::vector<Factor>> features_;
};

class MultiplicativeForm : public ShiftForm {
public:
  MultiplicativeForm(FormContext ctx, std::vector<int> coords) : ctx_(std::move(ctx)), coords_(std::move(coords)) {}
  std::unique_ptr<ShiftForm> clone() const override { return std::make_unique<MultiplicativeForm>(*this); }
  int d() const override { return 1; }
  std::vector<std::string> labels() const override { return {ctx_.var + " : scale"}; }
  Eigen::VectorXd value(const Eigen::VectorXd&, const Eigen::VectorXd& eta, const Eigen::VectorXd& delta) const override
  {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(ctx_.family.dim_t());
    for (int c : coords_)
      s(c) = delta(0) * eta(c);
    return s;
  }
  void jacobians(const Eigen::VectorXd&, const Eigen::VectorXd& eta, ShiftJacobians& out) const override
  {
    out.d1 = Eigen::MatrixXd::Zero(ctx_.family.dim_t(), 1);
    for (int c : coords_)
      out.d1(c, 0) = eta(c);
    out.d2.clear();
  }

private:
  FormContext ctx_;
  std::vector<int> coords_;
};

class VarianceScaledMeanForm : public ShiftForm {
public:
  explicit VarianceScaledMeanForm(FormContext ctx) : ctx_(std::move(ctx)) {}
  std::unique_ptr<ShiftForm> clone() const override { return std::make_unique<VarianceScaledMeanForm>(*this); }
  int d() const override { return ctx_.family.value_dim(); }
  std::vector<std::string> labels() const override
  {
    std::vector<std::string> out;
    for (int a = 0; a < d(); ++a)
      out.push_back(ctx_.var + " : mean[" + std::to_string(a) + "]");
    return out;
  }
  Eigen::VectorXd value(const Eigen::VectorXd&, const Eigen::VectorXd&, const Eigen::VectorXd& delta) const override
  {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(ctx_.family.dim_t());
    s.head(d()) = delta;
    return s;
  }
  void jacobians(const Eigen::VectorXd&, const Eigen::VectorXd&, ShiftJacobians& out) const override
  {
    out.d1 = Eigen::MatrixXd::Zero(ctx_.family.dim_t(), d());
    out.d1.topRows(d()).setIdentity();
    out.d2.clear();
  }

private:
  FormContext ctx_;
};

struct CoordGuard {
  bool has_lower = false;
  bool has_upper = false;
  double lower = 0.0;
  double upper = 0.0;
};

class DomainGuardedForm : public ShiftForm {
public:
  DomainGuardedForm(FormContext ctx, std::unique_ptr<ShiftForm> inner, std::vector<CoordGuard> guards,
                    double epsilon, double temperature)
      : ctx_(std::move(ctx)), inner_(std::move(inner)), guards_(std::move(guards)), eps_(epsilon), temp_(temperature)
  {
  }
  DomainGuardedForm(const DomainGuardedForm& o)
      : ctx_(o.ctx_), inner_(o.inner_->clone()), guards_(o.guards_), eps_(o.eps_), temp_(o.temp_)
  {
  }
  std::unique_ptr<ShiftForm> clone() const override { return std::make_unique<DomainGuardedForm>(*this); }
  int d() const override { return inner_->d(); }
  std::vector<std::string> labels() const override { return inner_->labels(); }
  bool second_order() const override { return temp_ > 0 || inner_->second_order(); }

  // Gate and its derivative with respect to the coordinate value x.
  std::pair<double, double> gate(int c, double x) const
  {
    const CoordGuard& g = guards_[c];
    if (temp_ <= 0) {
      bool ok = true;
      if (g.has_lower)
        ok = ok && x > g.lower + eps_;
      if (g.has_upper)
        ok = ok && x < g.upper - eps_;
      return {ok ? 1.0 : 0.0, 0.0};
    }
    double val = 1.0;
    double der = 0.0;
    if (g.has_lower) {
      const double s = sigmoid(temp_ * (x - g.lower - eps_));
      der = der * s + val * temp_ * s * (1.0 - s);
      val *= s;
    }
    if (g.has_upper) {
      const double s = sigmoid(temp_ * (g.upper - eps_ - x));
      der = der * s - val * temp_ * s * (1.0 - s);
      val *= s;
    }
    return {val, der};
  }

  Eigen::VectorXd value(const Eigen::VectorXd& z, const Eigen::VectorXd& eta, const Eigen::VectorXd& delta) const override
  {
    Eigen::VectorXd s = inner_->value(z, eta, delta);
    for (Eigen::Index c = 0; c < s.size(); ++c) {
      if (s(c) == 0.0)
        continue;
      if (!guards_[c].has_lower && !guards_[c].has_upper)
        continue;
      s(c) *= gate(static_cast<int>(c), eta(c) + s(c)).first;
    }
    return s;
  }
  void jacobians(const Eigen::VectorXd& z, const Eigen::VectorXd& eta, ShiftJacobians& out) const override
  {
    ShiftJacobians in;
    inner_->jacobians(z, eta, in);
    const int m = d();
    out.d1 = in.d1;
    out.d2.clear();
    const bool curv = second_order();
    if (curv)
      out.d2.assign(in.d1.rows(), Eigen::MatrixXd::Zero(m, m));
    for (Eigen::Index c = 0; c < in.d1.rows(); ++c) {
      if (!guards_[c].has_lower && !guards_[c].has_upper) {
        if (curv && !in.d2.empty())
          out.d2[c] = in.d2[c];
        continue;
      }
      const auto [g, dg] = gate(static_cast<int>(c), eta(c));
      out.d1.row(c) = g * in.d1.row(c);
      if (curv) {
        const Eigen::VectorXd r = in.d1.row(c).transpose();
        out.d2[c] = 2.0 * dg * r * r.transpose();
        if (!in.d2.empty())
          out.d2[c] += g * in.d2[c];
      }
    }
  }

private:
  FormContext ctx_;
  std::unique_ptr<ShiftForm> inner_;
  std::vector<CoordGuard> guards_;
  double eps_;
  double temp_;
};

std::vector<std::vector<Factor>> parse_features(const FormContext& ctx, const std::vector<std::string>& names)
{
  std::vector<std::vector<Factor>> out;
  for (const auto& raw : names) {
    std::vector<Factor> fs;
    std::string expr;
    for (char c : raw)
      if (c != ' ')
        expr += c;
    if (expr.empty())
      throw SchemaError("", ctx.var + ": empty feature expression");
    std::size_t pos = 0;
    while (pos <= expr.size()) {
      const auto next = expr.find('*', pos);
      const std::string term = expr.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
      Factor f;
      std::string name = term;
      if (term == "1") {
        name.clear();
      } else if (term.rfind("1-", 0) == 0) {
        f.one_minus = true;
        name = term.substr(2);
      }
      if (!name.empty()) {
        auto it = std::find(ctx.parent_names.begin(), ctx.parent_names.end(), name);
        if (it == ctx.parent_names.end())
          throw SchemaError("", ctx.var + ": feature '" + raw + "' references '" + name +
                                    "', which is not a parent");
        f.parent = static_cast<int>(it - ctx.parent_names.begin());
      }
      fs.push_back(f);
      if (next == std::string::npos)
        break;
      pos = next + 1;
    }
    out.push_back(std::move(fs));
  }
  return out;
}

} // namespace

// ---------------------------------------------------------------------------
// ShiftModel

ShiftModel::ShiftModel(std::vector<VariableSpec> variables, std::vector<Intervention> interventions)
    : vars_(std::move(variables)), interventions_(std::move(interventions))
{
  validate_and_compile();
}

ShiftModel::~ShiftModel() = default;
ShiftModel::ShiftModel(ShiftModel&&) noexcept = default;
ShiftModel& ShiftModel::operator=(ShiftModel&&) noexcept = default;

ShiftModel::ShiftModel(const ShiftModel& o)
    : vars_(o.vars_), interventions_(o.interventions_), parent_idx_(o.parent_idx_), topo_(o.topo_),
      offsets_(o.offsets_), row_width_(o.row_width_), blocks_(o.blocks_), block_of_(o.block_of_),
      d_delta_(o.d_delta_)
{
  for (const auto& f : o.forms_)
    forms_.push_back(f ? f->clone() : nullptr);
}

ShiftModel& ShiftModel::operator=(const ShiftModel& o)
{
  if (this != &o) {
    ShiftModel tmp(o);
    *this = std::move(tmp);
  }
  return *this;
}

namespace {

void check_eta_vector(const VariableSpec& v, const Eigen::VectorXd& eta, const std::string& where)
{
  if (eta.size() != v.family.dim_t())
    throw SchemaError(where, v.name + ": eta has length " + std::to_string(eta.size()) + ", expected " +
                                 std::to_string(v.family.dim_t()));
  if (!in_domain(v.family, eta)) {
    std::ostringstream os;
    os << v.name << ": eta [" << eta.transpose() << "] outside the " << v.family.name() << " domain";
    throw SchemaError(where, os.str());
  }
}

} // namespace

void ShiftModel::validate_and_compile()
{
  const int nv = static_cast<int>(vars_.size());
  if (nv == 0)
    throw SchemaError("/variables", "model has no variables");
  std::map<std::string, int> index;
  for (int i = 0; i < nv; ++i) {
    const auto& name = vars_[i].name;
    if (name.empty())
      throw SchemaError("/variables/" + std::to_string(i) + "/name", "variable name is empty");
    if (name.rfind("__", 0) == 0)
      throw SchemaError("/variables/" + std::to_string(i) + "/name", "names starting with '__' are reserved");
    if (!index.emplace(name, i).second)
      throw SchemaError("/variables/" + std::to_string(i) + "/name", "duplicate variable '" + name + "'");
  }

  parent_idx_.assign(nv, {});
  offsets_.assign(nv, 0);
  row_width_ = 0;
  for (int i = 0; i < nv; ++i) {
    offsets_[i] = row_width_;
    row_width_ += vars_[i].family.value_dim();
  }
  for (int i = 0; i < nv; ++i) {
    const auto& v = vars_[i];
    const std::string at = "/variables/" + std::to_string(i);
    std::set<std::string> seen;
    for (std::size_t p = 0; p < v.parents.size(); ++p) {
      const auto& pn = v.parents[p];
      auto it = index.find(pn);
      if (it == index.end())
        throw SchemaError(at + "/parents/" + std::to_string(p), v.name + ": unknown parent '" + pn + "'");
      if (it->second == i)
        throw SchemaError(at + "/parents/" + std::to_string(p), v.name + " lists itself as a parent");
      if (!seen.insert(pn).second)
        throw SchemaError(at + "/parents/" + std::to_string(p), v.name + ": duplicate parent '" + pn + "'");
      if (vars_[it->second].family.value_dim() != 1)
        throw SchemaError(at + "/parents/" + std::to_string(p),
                          v.name + ": parent '" + pn + "' is vector-valued; parents must be scalar");
      parent_idx_[i].push_back(it->second);
    }
  }

  // Kahn's algorithm; among ready nodes, declaration order wins.
  std::vector<int> indeg(nv, 0);
  std::vector<std::vector<int>> children(nv);
  for (int i = 0; i < nv; ++i)
    for (int p : parent_idx_[i]) {
      ++indeg[i];
      children[p].push_back(i);
    }
  std::set<int> ready;
  for (int i = 0; i < nv; ++i)
    if (indeg[i] == 0)
      ready.insert(i);
  topo_.clear();
  while (!ready.empty()) {
    const int i = *ready.begin();
    ready.erase(ready.begin());
    topo_.push_back(i);
    for (int c : children[i])
      if (--indeg[c] == 0)
        ready.insert(c);
  }
  if (static_cast<int>(topo_.size()) != nv)
    throw SchemaError("/variables", "parent relation has a cycle");

  for (int i = 0; i < nv; ++i) {
    const auto& v = vars_[i];
    const std::string at = "/variables/" + std::to_string(i) + "/eta";
    const EtaFn* fn = &v.eta;
    if (fn->form == EtaFn::Form::Gated) {
      auto it = std::find(v.parents.begin(), v.parents.end(), fn->gate);
      if (it == v.parents.end())
        throw SchemaError(at + "/gate", v.name + ": gate '" + fn->gate + "' is not a parent");
      if (vars_[index[fn->gate]].family.kind() != FamilyKind::BernoulliLogit)
        throw SchemaError(at + "/gate", v.name + ": gate '" + fn->gate + "' must be binary");
      if (!fn->inner)
        throw SchemaError(at + "/inner", v.name + ": gated eta needs an inner form");
      if (v.family.value_dim() != 1)
        throw SchemaError(at, v.name + ": gated eta needs a scalar family");
      fn = fn->inner.get();
      if (fn->form == EtaFn::Form::Gated)
        throw SchemaError(at + "/inner", v.name + ": nested gates are not supported");
    }
    switch (fn->form) {
    case EtaFn::Form::Constant:
      check_eta_vector(v, fn->value, at + "/value");
      break;
    case EtaFn::Form::Linear: {
      if (fn->intercept.size() != v.family.dim_t())
        throw SchemaError(at + "/intercept", v.name + ": intercept length does not match dim_T");
      if (fn->coefficients.rows() != v.family.dim_t() ||
          fn->coefficients.cols() != static_cast<Eigen::Index>(v.parents.size()))
        throw SchemaError(at + "/coefficients", v.name + ": coefficients must be dim_T x |parents|");
      if (v.family.kind() == FamilyKind::Categorical) {
        const int last = v.family.categories() - 1;
        if (fn->intercept(last) != 0.0 || !fn->coefficients.row(last).isZero(0))
          throw SchemaError(at, v.name + ": the last categorical logit is pinned to 0");
      }
      break;
    }
    case EtaFn::Form::Tabular: {
      const int s = num_strata(i);
      if (s == 0)
        throw SchemaError(at, v.name + ": tabular eta needs finite discrete parents");
      if (static_cast<int>(fn->table.size()) != s)
        throw SchemaError(at + "/table", v.name + ": table has " + std::to_string(fn->table.size()) +
                                             " rows, expected " + std::to_string(s));
      for (std::size_t r = 0; r < fn->table.size(); ++r)
        check_eta_vector(v, fn->table[r], at + "/table/" + std::to_string(r));
      break;
    }
    case EtaFn::Form::Gated:
      break;
    }
  }

  // Interventions, compiled in declaration order of their variables.
  block_of_.assign(nv, -1);
  forms_.clear();
  forms_.resize(nv);
  std::vector<int> intervened(nv, -1);
  for (std::size_t k = 0; k < interventions_.size(); ++k) {
    const auto& iv = interventions_[k];
    const std::string at = "/interventions/" + std::to_string(k);
    auto it = index.find(iv.variable);
    if (it == index.end())
      throw SchemaError(at + "/variable", "intervention on unknown variable '" + iv.variable + "'");
    if (intervened[it->second] >= 0)
      throw SchemaError(at + "/variable", "variable '" + iv.variable + "' is intervened twice");
    if (vars_[it->second].eta.form == EtaFn::Form::Gated)
      throw SchemaError(at + "/variable", "'" + iv.variable +
                                              "' is gated; its conditional is degenerate when the gate is 0 and "
                                              "cannot be shifted");
    intervened[it->second] = static_cast<int>(k);
  }

  std::function<std::unique_ptr<ShiftForm>(int, const ShiftSpec&, const std::string&)> build;
  build = [&](int i, const ShiftSpec& spec, const std::string& at) -> std::unique_ptr<ShiftForm> {
    const auto& v = vars_[i];
    FormContext ctx{v.name, v.family, v.parents, {}, {}};
    for (int p : parent_idx_[i]) {
      ctx.parent_card.push_back(vars_[p].family.cardinality());
      ctx.parent_one_based.push_back(vars_[p].family.kind() == FamilyKind::Categorical);
    }
    const auto free = v.family.free_coords();
    std::vector<int> coords = spec.target_coords.empty() ? free : spec.target_coords;
    if (spec.form != ShiftSpec::Form::VarianceScaledMean && spec.form != ShiftSpec::Form::DomainGuarded) {
      std::set<int> uniq;
      for (int c : coords) {
        if (std::find(free.begin(), free.end(), c) == free.end())
          throw SchemaError(at + "/target_coords", v.name + ": coordinate " + std::to_string(c) +
                                                       " is not a free natural coordinate");
        if (!uniq.insert(c).second)
          throw SchemaError(at + "/target_coords", v.name + ": duplicate target coordinate");
      }
    }
    switch (spec.form) {
    case ShiftSpec::Form::Constant:
      return std::make_unique<ConstantForm>(ctx, coords);
    case ShiftSpec::Form::PerStratum: {
      const int s = num_strata(i);
      if (s == 0)
        throw SchemaError(at, v.name + ": per-stratum shifts need finite discrete parents");
      std::vector<std::string> sl;
      for (int k = 0; k < s; ++k)
        sl.push_back(stratum_label(i, k));
      return std::make_unique<PerStratumForm>(ctx, coords, s, sl);
    }
    case ShiftSpec::Form::LinearInZ: {
      if (spec.features.empty())
        throw SchemaError(at + "/features", v.name + ": linear_in_z needs at least one feature");
      std::vector<std::vector<Factor>> fs;
      try {
        fs = parse_features(ctx, spec.features);
      } catch (const SchemaError& e) {
        throw SchemaError(at + "/features", e.what());
      }
      return std::make_unique<LinearInZForm>(ctx, coords, spec.features, fs);
    }
    case ShiftSpec::Form::Multiplicative:
      return std::make_unique<MultiplicativeForm>(ctx, coords);
    case ShiftSpec::Form::VarianceScaledMean:
      if (v.family.kind() != FamilyKind::GaussianFull && v.family.kind() != FamilyKind::GaussianKnownVar)
        throw SchemaError(at + "/form", v.name + ": variance_scaled_mean needs a Gaussian family");
      return std::make_unique<VarianceScaledMeanForm>(ctx);
    case ShiftSpec::Form::DomainGuarded: {
      if (!spec.inner)
        throw SchemaError(at + "/inner", v.name + ": domain_guarded needs an inner shift");
      if (!(spec.guard_epsilon >= 0) || !(spec.guard_temperature >= 0))
        throw SchemaError(at, v.name + ": guard epsilon and temperature must be nonnegative");
      auto inner = build(i, *spec.inner, at + "/inner");
      std::vector<CoordGuard> guards(v.family.dim_t());
      if (spec.bounds.empty()) {
        const auto dom = v.family.param_domain();
        for (int c = 0; c < v.family.dim_t(); ++c) {
          if (std::isfinite(dom[c].lower) && dom[c].lower < dom[c].upper) {
            guards[c].has_lower = true;
            guards[c].lower = dom[c].lower;
          }
          if (std::isfinite(dom[c].upper) && dom[c].lower < dom[c].upper) {
            guards[c].has_upper = true;
            guards[c].upper = dom[c].upper;
          }
        }
      } else {
        for (std::size_t b = 0; b < spec.bounds.size(); ++b) {
          const auto& gb = spec.bounds[b];
          if (gb.coord < 0 || gb.coord >= v.family.dim_t())
            throw SchemaError(at + "/bounds/" + std::to_string(b), v.name + ": guard coordinate out of range");
          if (gb.upper) {
            guards[gb.coord].has_upper = true;
            guards[gb.coord].upper = gb.value;
          } else {
            guards[gb.coord].has_lower = true;
            guards[gb.coord].lower = gb.value;
          }
        }
      }
      return std::make_unique<DomainGuardedForm>(ctx, std::move(inner), guards, spec.guard_epsilon,
                                                 spec.guard_temperature);
    }
    }
    return nullptr;
  };

  blocks_.clear();
  d_delta_ = 0;
  for (int i = 0; i < nv; ++i) {
    if (intervened[i] < 0)
      continue;
    const auto& iv = interventions_[intervened[i]];
    forms_[i] = build(i, iv.shift, "/interventions/" + std::to_string(intervened[i]) + "/shift");
    DeltaBlock b;
    b.variable = vars_[i].name;
    b.var_index = i;
    b.offset = d_delta_;
    b.size = forms_[i]->d();
    b.labels = forms_[i]->labels();
    block_of_[i] = static_cast<int>(blocks_.size());
    blocks_.push_back(std::move(b));
    d_delta_ += blocks_.back().size;
  }
}

int ShiftModel::variable_index(const std::string& name) const
{
  for (std::size_t i = 0; i < vars_.size(); ++i)
    if (vars_[i].name == name)
      return static_cast<int>(i);
  throw SchemaError("/variables", "unknown variable '" + name + "'");
}

const DeltaBlock* ShiftModel::block(int var) const
{
  return block_of_[var] >= 0 ? &blocks_[block_of_[var]] : nullptr;
}

std::vector<std::string> ShiftModel::delta_labels() const
{
  std::vector<std::string> out;
  for (const auto& b : blocks_)
    out.insert(out.end(), b.labels.begin(), b.labels.end());
  return out;
}

const ShiftSpec* ShiftModel::shift(int var) const
{
  for (const auto& iv : interventions_)
    if (iv.variable == vars_[var].name)
      return &iv.shift;
  return nullptr;
}

std::vector<std::string> ShiftModel::column_names() const
{
  std::vector<std::string> out;
  for (const auto& v : vars_) {
    const int d = v.family.value_dim();
    if (d == 1) {
      out.push_back(v.name);
    } else {
      for (int a = 0; a < d; ++a)
        out.push_back(v.name + "[" + std::to_string(a) + "]");
    }
  }
  return out;
}

Eigen::VectorXd ShiftModel::parent_values(int var, std::span<const double> record) const
{
  const auto& pi = parent_idx_[var];
  Eigen::VectorXd z(pi.size());
  for (std::size_t p = 0; p < pi.size(); ++p)
    z(p) = record[offsets_[pi[p]]];
  return z;
}

std::span<const double> ShiftModel::value(int var, std::span<const double> record) const
{
  return record.subspan(offsets_[var], vars_[var].family.value_dim());
}

bool ShiftModel::gated_off(int var, const Eigen::VectorXd& z) const
{
  const auto& fn = vars_[var].eta;
  if (fn.form != EtaFn::Form::Gated)
    return false;
  const auto& ps = vars_[var].parents;
  const auto p = std::find(ps.begin(), ps.end(), fn.gate) - ps.begin();
  return z(p) == 0.0;
}

namespace {

Eigen::VectorXd eval_eta(const EtaFn& fn, int strat, const Eigen::VectorXd& z)
{
  switch (fn.form) {
  case EtaFn::Form::Constant:
    return fn.value;
  case EtaFn::Form::Linear:
    return fn.intercept + fn.coefficients * z;
  case EtaFn::Form::Tabular:
    return fn.table[strat];
  case EtaFn::Form::Gated:
    return eval_eta(*fn.inner, strat, z);
  }
  return {};
}

bool needs_stratum(const EtaFn& fn)
{
  return fn.form == EtaFn::Form::Tabular || (fn.form == EtaFn::Form::Gated && fn.inner->form == EtaFn::Form::Tabular);
}

} // namespace

Eigen::VectorXd ShiftModel::eta(int var, const Eigen::VectorXd& z) const
{
  const auto& fn = vars_[var].eta;
  return eval_eta(fn, needs_stratum(fn) ? stratum(var, z) : 0, z);
}

int ShiftModel::num_strata(int var) const
{
  int s = 1;
  for (int p : parent_idx_[var]) {
    const int c = vars_[p].family.cardinality();
    if (c == 0)
      return 0;
    s *= c;
  }
  return s;
}

int ShiftModel::stratum(int var, const Eigen::VectorXd& z) const
{
  FormContext ctx{vars_[var].name, vars_[var].family, vars_[var].parents, {}, {}};
  for (int p : parent_idx_[var]) {
    ctx.parent_card.push_back(vars_[p].family.cardinality());
    ctx.parent_one_based.push_back(vars_[p].family.kind() == FamilyKind::Categorical);
  }
  for (int c : ctx.parent_card)
    if (c == 0)
      throw ContractError(vars_[var].name + ": strata need finite discrete parents");
  return stratum_of(ctx, z);
}

Eigen::VectorXd ShiftModel::stratum_values(int var, int stratum) const
{
  const auto& pi = parent_idx_[var];
  Eigen::VectorXd z(pi.size());
  for (int p = static_cast<int>(pi.size()) - 1; p >= 0; --p) {
    const auto& f = vars_[pi[p]].family;
    const int card = f.cardinality();
    const int vi = stratum % card;
    stratum /= card;
    z(p) = f.kind() == FamilyKind::Categorical ? vi + 1 : vi;
  }
  return z;
}

std::string ShiftModel::stratum_label(int var, int stratum) const
{
  const Eigen::VectorXd z = stratum_values(var, stratum);
  std::ostringstream os;
  for (Eigen::Index p = 0; p < z.size(); ++p)
    os << (p ? ", " : "") << vars_[var].parents[p] << "=" << z(p);
  return os.str();
}

Eigen::VectorXd ShiftModel::shift_value(int var, const Eigen::VectorXd& z, const Eigen::VectorXd& eta,
                                        const Eigen::VectorXd& delta_block) const
{
  if (!forms_[var])
    return Eigen::VectorXd::Zero(vars_[var].family.dim_t());
  return forms_[var]->value(z, eta, delta_block);
}

namespace {

[[noreturn]] void throw_shift_domain(const VariableSpec& v, const Eigen::VectorXd& eta_shifted)
{
  const auto dom = v.family.param_domain();
  int coord = -1;
  for (Eigen::Index c = 0; c < eta_shifted.size(); ++c)
    if (std::isnan(eta_shifted(c)) ||
        (dom[c].lower < dom[c].upper && !dom[c].contains(eta_shifted(c)) && std::isfinite(eta_shifted(c)))) {
      coord = static_cast<int>(c);
      break;
    }
  std::ostringstream os;
  os << v.name << ": shifted natural parameter [" << eta_shifted.transpose() << "] left the " << v.family.name()
     << " domain";
  if (coord >= 0)
    os << " at coordinate " << coord;
  os << "; wrap the shift in domain_guarded to keep it interior";
  throw ShiftDomainError(v.name, coord, os.str());
}

} // namespace

Eigen::VectorXd ShiftModel::apply_shift(int var, const Eigen::VectorXd& z, const Eigen::VectorXd& delta) const
{
  if (delta.size() != d_delta_)
    throw ContractError("delta has length " + std::to_string(delta.size()) + ", model expects " +
                        std::to_string(d_delta_));
  if (z.size() != static_cast<Eigen::Index>(parent_idx_[var].size()))
    throw ContractError(vars_[var].name + ": wrong number of parent values");
  Eigen::VectorXd e = eta(var, z);
  const DeltaBlock* b = block(var);
  if (b) {
    e += forms_[var]->value(z, e, delta.segment(b->offset, b->size));
    if (!in_domain(vars_[var].family, e))
      throw_shift_domain(vars_[var], e);
  }
  return e;
}

Eigen::VectorXd ShiftModel::apply_shift(const std::string& var, const Eigen::VectorXd& z,
                                        const Eigen::VectorXd& delta) const
{
  return apply_shift(variable_index(var), z, delta);
}

ShiftJacobians ShiftModel::shift_jacobians(int var, const Eigen::VectorXd& z) const
{
  if (!forms_[var])
    throw ContractError(vars_[var].name + " is not intervened");
  ShiftJacobians out;
  forms_[var]->jacobians(z, eta(var, z), out);
  return out;
}

bool ShiftModel::has_second_order(int var) const
{
  return forms_[var] && forms_[var]->second_order();
}

std::vector<int> ShiftModel::bind(const SampleTable& table) const
{
  std::vector<int> out;
  for (const auto& name : column_names())
    out.push_back(table.column_index(name));
  return out;
}

void ShiftModel::gather(const SampleTable& table, const std::vector<int>& binding, std::size_t row,
                        std::span<double> record) const
{
  for (std::size_t c = 0; c < binding.size(); ++c)
    record[c] = table.at(row, binding[c]);
}

// ---------------------------------------------------------------------------

double log_density_ratio(const ShiftModel& model, const Eigen::VectorXd& delta, std::span<const double> record)
{
  if (delta.size() != model.d_delta())
    throw ContractError("delta has length " + std::to_string(delta.size()) + ", model expects " +
                        std::to_string(model.d_delta()));
  double lw = 0.0;
  for (const auto& b : model.blocks()) {
    const int i = b.var_index;
    const auto& v = model.variable(i);
    const Eigen::VectorXd z = model.parent_values(i, record);
    const Eigen::VectorXd eta = model.eta(i, z);
    const Eigen::VectorXd s = model.shift_value(i, z, eta, delta.segment(b.offset, b.size));
    if (s.isZero(0))
      continue;
    if (v.family.kind() == FamilyKind::BernoulliLogit && std::isinf(eta(0)))
      continue;
    const Eigen::VectorXd eta_s = eta + s;
    if (!in_domain(v.family, eta_s))
      throw_shift_domain(v, eta_s);
    const Eigen::VectorXd t = sufficient_stat(v.family, model.value(i, record), v.name);
    lw += s.dot(t) - log_partition(v.family, eta_s) + log_partition(v.family, eta);
  }
  return lw;
}

double density_ratio(const ShiftModel& model, const Eigen::VectorXd& delta, std::span<const double> record)
{
  return std::exp(log_density_ratio(model, delta, record));
}

SampleTable sample_joint(const ShiftModel& model, const Eigen::VectorXd& delta, std::size_t n, Rng& rng)
{
  if (delta.size() != model.d_delta())
    throw ContractError("delta has length " + std::to_string(delta.size()) + ", model expects " +
                        std::to_string(model.d_delta()));
  SampleTable table(model.column_names());
  table.reserve(n);
  std::vector<double> record(model.row_width());
  const bool zero = delta.isZero(0);
  for (std::size_t r = 0; r < n; ++r) {
    for (int i : model.topological_order()) {
      const auto& v = model.variable(i);
      const Eigen::VectorXd z = model.parent_values(i, record);
      double* out = record.data() + model.value_offset(i);
      if (model.gated_off(i, z)) {
        out[0] = v.eta.dummy;
        continue;
      }
      Eigen::VectorXd e = (zero || !model.block(i)) ? model.eta(i, z) : model.apply_shift(i, z, delta);
      const Eigen::VectorXd w = sample(v.family, e, rng);
      for (Eigen::Index a = 0; a < w.size(); ++a)
        out[a] = w(a);
    }
    table.append_row(record);
  }
  return table;
}

namespace {

struct LogitColumn {
  std::vector<double> eta;
  double p_plus = 0;
  double p_minus = 0;
};

LogitColumn logits(const ShiftModel& model, int var, const SampleTable& sample)
{
  const auto binding = model.bind(sample);
  std::vector<double> record(model.row_width());
  LogitColumn out;
  out.eta.reserve(sample.rows());
  const double tw = sample.total_weight();
  for (std::size_t r = 0; r < sample.rows(); ++r) {
    model.gather(sample, binding, r, record);
    const double e = model.eta(var, model.parent_values(var, record))(0);
    out.eta.push_back(e);
    if (e == std::numeric_limits<double>::infinity())
      out.p_plus += sample.weight(r) / tw;
    if (e == -std::numeric_limits<double>::infinity())
      out.p_minus += sample.weight(r) / tw;
  }
  return out;
}

double marginal_at(const LogitColumn& col, const SampleTable& sample, double offset)
{
  double s = 0;
  double wsum = 0;
  for (std::size_t r = 0; r < col.eta.size(); ++r) {
    const double e = col.eta[r];
    const double p = std::isinf(e) ? (e > 0 ? 1.0 : 0.0) : sigmoid(e + offset);
    const double w = sample.weight(r);
    s += w * p;
    wsum += w;
  }
  return s / wsum;
}

} // namespace

double shifted_marginal(const ShiftModel& model, const std::string& var, double offset, const SampleTable& sample)
{
  const int i = model.variable_index(var);
  if (model.variable(i).family.kind() != FamilyKind::BernoulliLogit)
    throw ContractError(var + " is not a Bernoulli variable");
  return marginal_at(logits(model, i, sample), sample, offset);
}

MarginalSolution solve_delta_for_marginal(const ShiftModel& model, const std::string& var, double target_p,
                                          const SampleTable& sample)
{
  const int i = model.variable_index(var);
  const auto* spec = model.shift(i);
  if (model.variable(i).family.kind() != FamilyKind::BernoulliLogit || !spec ||
      spec->form != ShiftSpec::Form::Constant)
    throw ContractError(var + ": marginal mapping needs a Bernoulli variable with a constant shift");
  if (sample.rows() == 0)
    throw ContractError("marginal mapping needs a nonempty sample");
  const LogitColumn col = logits(model, i, sample);
  MarginalSolution sol;
  sol.p_plus = col.p_plus;
  sol.p_minus = col.p_minus;
  const double hi_p = 1.0 - col.p_minus;
  if (!(target_p > col.p_plus && target_p < hi_p)) {
    std::ostringstream os;
    os << var << ": target marginal " << target_p << " outside the achievable range (" << col.p_plus << ", " << hi_p
       << ")";
    throw InfeasibleTargetError(col.p_plus, hi_p, os.str());
  }
  double lo = -kBernoulliEtaCap;
  double hi = kBernoulliEtaCap;
  const double m_lo = marginal_at(col, sample, lo);
  const double m_hi = marginal_at(col, sample, hi);
  if (target_p < m_lo || target_p > m_hi) {
    std::ostringstream os;
    os << var << ": target marginal " << target_p << " outside the range [" << m_lo << ", " << m_hi
       << "] reachable with |delta| <= " << kBernoulliEtaCap;
    throw InfeasibleTargetError(m_lo, m_hi, os.str());
  }
  int it = 0;
  while (hi - lo > 1e-13 && it < 200) {
    const double mid = 0.5 * (lo + hi);
    if (marginal_at(col, sample, mid) < target_p)
      lo = mid;
    else
      hi = mid;
    ++it;
  }
  sol.delta = 0.5 * (lo + hi);
  sol.achieved = marginal_at(col, sample, sol.delta);
  sol.iterations = it;
  return sol;
}

} // namespace shiftbench
