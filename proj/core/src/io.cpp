#include "shiftbench/io.hpp"

#include <cmath>

#include "shiftbench/error.hpp"

namespace shiftbench::io {

namespace {

std::string index_path(const std::string& at, std::size_t i)
{
  return at + "/" + std::to_string(i);
}

const char* type_name(const json& j)
{
  return j.type_name();
}

double finite_number(const json& j, const std::string& at)
{
  if (!j.is_number())
    throw SchemaError(at, std::string("expected a number, got ") + type_name(j));
  const double x = j.get<double>();
  if (!std::isfinite(x))
    throw SchemaError(at, "number is not finite");
  return x;
}

struct NamedForm {
  const char* name;
  int value;
};

template <class E, std::size_t N>
E parse_enum(const NamedForm (&table)[N], const std::string& s, const std::string& at, const char* what)
{
  for (const auto& f : table)
    if (s == f.name)
      return static_cast<E>(f.value);
  std::string known;
  for (const auto& f : table)
    known += std::string(known.empty() ? "" : ", ") + f.name;
  throw SchemaError(at, "unknown " + std::string(what) + " '" + s + "' (expected one of " + known + ")");
}

template <class E, std::size_t N>
const char* enum_name(const NamedForm (&table)[N], E value)
{
  for (const auto& f : table)
    if (f.value == static_cast<int>(value))
      return f.name;
  return "unknown";
}

constexpr NamedForm kEtaForms[] = {
    {"constant", static_cast<int>(EtaFn::Form::Constant)},
    {"linear", static_cast<int>(EtaFn::Form::Linear)},
    {"tabular", static_cast<int>(EtaFn::Form::Tabular)},
    {"gated", static_cast<int>(EtaFn::Form::Gated)},
};

constexpr NamedForm kShiftForms[] = {
    {"constant", static_cast<int>(ShiftSpec::Form::Constant)},
    {"per_stratum", static_cast<int>(ShiftSpec::Form::PerStratum)},
    {"linear_in_z", static_cast<int>(ShiftSpec::Form::LinearInZ)},
    {"multiplicative", static_cast<int>(ShiftSpec::Form::Multiplicative)},
    {"variance_scaled_mean", static_cast<int>(ShiftSpec::Form::VarianceScaledMean)},
    {"domain_guarded", static_cast<int>(ShiftSpec::Form::DomainGuarded)},
};

constexpr NamedForm kConstraintForms[] = {
    {"ball", static_cast<int>(ConstraintSpec::Form::Ball)},
    {"quadratic", static_cast<int>(ConstraintSpec::Form::Quadratic)},
    {"box", static_cast<int>(ConstraintSpec::Form::Box)},
};

} // namespace

// ---------------------------------------------------------------------------
// Reader

Reader::Reader(const json& j, std::string at) : j_(j), at_(std::move(at))
{
  if (!j_.is_object())
    throw SchemaError(at_, std::string("expected an object, got ") + type_name(j_));
}

bool Reader::has(const std::string& key) const
{
  return j_.contains(key) && !j_.at(key).is_null();
}

const json& Reader::get(const std::string& key) const
{
  if (!has(key))
    throw SchemaError(path(key), "missing required field '" + key + "'");
  return j_.at(key);
}

std::string Reader::string(const std::string& key) const
{
  const json& v = get(key);
  if (!v.is_string())
    throw SchemaError(path(key), std::string("expected a string, got ") + type_name(v));
  return v.get<std::string>();
}

std::string Reader::string(const std::string& key, const std::string& fallback) const
{
  return has(key) ? string(key) : fallback;
}

double Reader::number(const std::string& key) const
{
  return finite_number(get(key), path(key));
}

double Reader::number(const std::string& key, double fallback) const
{
  return has(key) ? number(key) : fallback;
}

long long Reader::integer(const std::string& key) const
{
  const json& v = get(key);
  if (!v.is_number_integer())
    throw SchemaError(path(key), std::string("expected an integer, got ") + type_name(v));
  return v.get<long long>();
}

long long Reader::integer(const std::string& key, long long fallback) const
{
  return has(key) ? integer(key) : fallback;
}

std::uint64_t Reader::seed(const std::string& key, std::uint64_t fallback) const
{
  if (!has(key))
    return fallback;
  const json& v = get(key);
  if (v.is_number_unsigned())
    return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<long long>() >= 0)
    return static_cast<std::uint64_t>(v.get<long long>());
  throw SchemaError(path(key), "seed must be a nonnegative integer");
}

bool Reader::boolean(const std::string& key, bool fallback) const
{
  if (!has(key))
    return fallback;
  const json& v = get(key);
  if (!v.is_boolean())
    throw SchemaError(path(key), std::string("expected a boolean, got ") + type_name(v));
  return v.get<bool>();
}

std::vector<std::string> Reader::strings(const std::string& key) const
{
  std::vector<std::string> out;
  if (!has(key))
    return out;
  const json& v = get(key);
  if (!v.is_array())
    throw SchemaError(path(key), std::string("expected an array, got ") + type_name(v));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_string())
      throw SchemaError(index_path(path(key), i), "expected a string");
    out.push_back(v[i].get<std::string>());
  }
  return out;
}

std::vector<int> Reader::ints(const std::string& key) const
{
  std::vector<int> out;
  if (!has(key))
    return out;
  const json& v = get(key);
  if (!v.is_array())
    throw SchemaError(path(key), std::string("expected an array, got ") + type_name(v));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number_integer())
      throw SchemaError(index_path(path(key), i), "expected an integer");
    out.push_back(v[i].get<int>());
  }
  return out;
}

void Reader::only(std::initializer_list<const char*> allowed) const
{
  for (const auto& [key, _] : j_.items()) {
    bool ok = false;
    for (const char* a : allowed)
      ok = ok || key == a;
    if (!ok)
      throw SchemaError(path(key), "unknown field '" + key + "'");
  }
}

void check_schema_version(const json& doc, const std::string& at)
{
  Reader r(doc, at);
  if (r.has("schema_version") && r.integer("schema_version") != kSchemaVersion)
    throw SchemaError(r.path("schema_version"),
                      "unsupported schema_version (this build reads " + std::to_string(kSchemaVersion) + ")");
}

// ---------------------------------------------------------------------------
// Vectors and matrices

json to_json(const Eigen::VectorXd& v)
{
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i)
    a.push_back(v(i));
  return a;
}

json to_json(const Eigen::MatrixXd& m)
{
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k)
      row.push_back(m(i, k));
    a.push_back(std::move(row));
  }
  return a;
}

Eigen::VectorXd vector_from_json(const json& j, const std::string& at, int expected_size)
{
  Eigen::VectorXd v;
  if (j.is_number()) {
    v = Eigen::VectorXd::Constant(1, finite_number(j, at));
  } else if (j.is_array()) {
    v.resize(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i)
      v(i) = finite_number(j[i], index_path(at, i));
  } else {
    throw SchemaError(at, std::string("expected an array of numbers, got ") + type_name(j));
  }
  if (expected_size >= 0 && v.size() != expected_size)
    throw SchemaError(at, "expected " + std::to_string(expected_size) + " entries, got " + std::to_string(v.size()));
  return v;
}

Eigen::MatrixXd matrix_from_json(const json& j, const std::string& at, int rows, int cols)
{
  if (!j.is_array())
    throw SchemaError(at, std::string("expected an array of rows, got ") + type_name(j));
  const int r = static_cast<int>(j.size());
  if (rows >= 0 && r != rows)
    throw SchemaError(at, "expected " + std::to_string(rows) + " rows, got " + std::to_string(r));
  int c = cols;
  if (c < 0)
    c = r > 0 && j[0].is_array() ? static_cast<int>(j[0].size()) : 0;
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i) {
    const std::string ai = index_path(at, i);
    if (!j[i].is_array())
      throw SchemaError(ai, "expected a row array");
    if (static_cast<int>(j[i].size()) != c)
      throw SchemaError(ai, "expected " + std::to_string(c) + " columns, got " + std::to_string(j[i].size()));
    for (int k = 0; k < c; ++k)
      m(i, k) = finite_number(j[i][k], index_path(ai, k));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Families, eta, shifts

json to_json(const FamilySpec& f)
{
  switch (f.kind()) {
  case FamilyKind::BernoulliLogit:
    return {{"kind", "bernoulli_logit"}};
  case FamilyKind::Categorical:
    return {{"kind", "categorical"}, {"k", f.categories()}};
  case FamilyKind::GaussianKnownVar:
    return {{"kind", "gaussian_known_var"}, {"sigma", f.sigma()}};
  case FamilyKind::GaussianFull:
    return {{"kind", "gaussian_full"}, {"d", f.dim()}};
  case FamilyKind::Poisson:
    return {{"kind", "poisson"}};
  case FamilyKind::Gamma:
    return {{"kind", "gamma"}};
  }
  return {};
}

FamilySpec family_from_json(const json& j, const std::string& at)
{
  if (j.is_string())
    return family_from_json(json{{"kind", j}}, at);
  Reader r(j, at);
  const std::string kind = r.string("kind");
  try {
    if (kind == "bernoulli_logit" || kind == "bernoulli") {
      r.only({"kind"});
      return FamilySpec::bernoulli_logit();
    }
    if (kind == "categorical") {
      r.only({"kind", "k"});
      return FamilySpec::categorical(static_cast<int>(r.integer("k")));
    }
    if (kind == "gaussian_known_var") {
      r.only({"kind", "sigma"});
      return FamilySpec::gaussian_known_var(r.number("sigma", 1.0));
    }
    if (kind == "gaussian_full") {
      r.only({"kind", "d"});
      return FamilySpec::gaussian_full(static_cast<int>(r.integer("d")));
    }
    if (kind == "poisson") {
      r.only({"kind"});
      return FamilySpec::poisson();
    }
    if (kind == "gamma") {
      r.only({"kind"});
      return FamilySpec::gamma();
    }
  } catch (const DomainError& e) {
    throw SchemaError(at, e.what());
  }
  throw SchemaError(r.path("kind"), "unknown family '" + kind + "'");
}

json to_json(const EtaFn& eta)
{
  json j{{"form", enum_name(kEtaForms, eta.form)}};
  switch (eta.form) {
  case EtaFn::Form::Constant:
    j["value"] = to_json(eta.value);
    break;
  case EtaFn::Form::Linear:
    j["intercept"] = to_json(eta.intercept);
    j["coefficients"] = to_json(eta.coefficients);
    break;
  case EtaFn::Form::Tabular: {
    json t = json::array();
    for (const auto& row : eta.table)
      t.push_back(to_json(row));
    j["table"] = std::move(t);
    break;
  }
  case EtaFn::Form::Gated:
    j["gate"] = eta.gate;
    j["dummy"] = eta.dummy;
    j["inner"] = eta.inner ? to_json(*eta.inner) : json();
    break;
  }
  return j;
}

EtaFn eta_from_json(const json& j, const std::string& at)
{
  Reader r(j, at);
  const auto form = parse_enum<EtaFn::Form>(kEtaForms, r.string("form"), r.path("form"), "eta form");
  switch (form) {
  case EtaFn::Form::Constant:
    r.only({"form", "value"});
    return EtaFn::constant(vector_from_json(r.get("value"), r.path("value")));
  case EtaFn::Form::Linear: {
    r.only({"form", "intercept", "coefficients"});
    Eigen::VectorXd b = vector_from_json(r.get("intercept"), r.path("intercept"));
    Eigen::MatrixXd c = matrix_from_json(r.get("coefficients"), r.path("coefficients"), static_cast<int>(b.size()));
    return EtaFn::linear(std::move(b), std::move(c));
  }
  case EtaFn::Form::Tabular: {
    r.only({"form", "table"});
    const json& t = r.get("table");
    if (!t.is_array())
      throw SchemaError(r.path("table"), "expected an array of rows");
    std::vector<Eigen::VectorXd> rows;
    for (std::size_t i = 0; i < t.size(); ++i)
      rows.push_back(vector_from_json(t[i], index_path(r.path("table"), i)));
    return EtaFn::tabular(std::move(rows));
  }
  case EtaFn::Form::Gated:
    r.only({"form", "gate", "dummy", "inner"});
    return EtaFn::gated(r.string("gate"), r.number("dummy", 0.0), eta_from_json(r.get("inner"), r.path("inner")));
  }
  throw SchemaError(at, "unreachable eta form");
}

json to_json(const ShiftSpec& s)
{
  json j{{"form", enum_name(kShiftForms, s.form)}};
  if (!s.target_coords.empty())
    j["coords"] = s.target_coords;
  if (s.form == ShiftSpec::Form::LinearInZ)
    j["features"] = s.features;
  if (s.form == ShiftSpec::Form::DomainGuarded) {
    j["inner"] = s.inner ? to_json(*s.inner) : json();
    j["epsilon"] = s.guard_epsilon;
    j["temperature"] = s.guard_temperature;
    json b = json::array();
    for (const auto& g : s.bounds)
      b.push_back({{"coord", g.coord}, {"side", g.upper ? "upper" : "lower"}, {"value", g.value}});
    if (!b.empty())
      j["bounds"] = std::move(b);
  }
  return j;
}

ShiftSpec shift_from_json(const json& j, const std::string& at)
{
  if (j.is_string())
    return shift_from_json(json{{"form", j}}, at);
  Reader r(j, at);
  const auto form = parse_enum<ShiftSpec::Form>(kShiftForms, r.string("form"), r.path("form"), "shift form");
  const std::vector<int> coords = r.ints("coords");
  switch (form) {
  case ShiftSpec::Form::Constant:
    r.only({"form", "coords"});
    return ShiftSpec::constant(coords);
  case ShiftSpec::Form::PerStratum:
    r.only({"form", "coords"});
    return ShiftSpec::per_stratum(coords);
  case ShiftSpec::Form::LinearInZ:
    r.only({"form", "coords", "features"});
    return ShiftSpec::linear_in_z(r.strings("features"), coords);
  case ShiftSpec::Form::Multiplicative:
    r.only({"form", "coords"});
    return ShiftSpec::multiplicative(coords);
  case ShiftSpec::Form::VarianceScaledMean:
    r.only({"form"});
    return ShiftSpec::variance_scaled_mean();
  case ShiftSpec::Form::DomainGuarded: {
    r.only({"form", "inner", "epsilon", "temperature", "bounds"});
    std::vector<GuardBound> bounds;
    if (r.has("bounds")) {
      const json& b = r.get("bounds");
      if (!b.is_array())
        throw SchemaError(r.path("bounds"), "expected an array");
      for (std::size_t i = 0; i < b.size(); ++i) {
        Reader br(b[i], index_path(r.path("bounds"), i));
        br.only({"coord", "side", "value"});
        const std::string side = br.string("side", "upper");
        if (side != "upper" && side != "lower")
          throw SchemaError(br.path("side"), "side must be 'upper' or 'lower'");
        bounds.push_back({static_cast<int>(br.integer("coord")), side == "upper", br.number("value")});
      }
    }
    return ShiftSpec::domain_guarded(shift_from_json(r.get("inner"), r.path("inner")), r.number("epsilon", 1e-3),
                                     r.number("temperature", 0.0), std::move(bounds));
  }
  }
  throw SchemaError(at, "unreachable shift form");
}

// ---------------------------------------------------------------------------
// Models

json to_json(const ShiftModel& model)
{
  json vars = json::array();
  for (const auto& v : model.variables())
    vars.push_back({{"name", v.name}, {"family", to_json(v.family)}, {"parents", v.parents}, {"eta", to_json(v.eta)}});
  json ivs = json::array();
  for (const auto& iv : model.interventions())
    ivs.push_back({{"variable", iv.variable}, {"shift", to_json(iv.shift)}});
  return {{"variables", std::move(vars)}, {"interventions", std::move(ivs)}};
}

ShiftModel model_from_json(const json& j, const std::string& at)
{
  check_schema_version(j, at);
  Reader r(j, at);
  r.only({"schema_version", "variables", "interventions"});
  const json& vs = r.get("variables");
  if (!vs.is_array())
    throw SchemaError(r.path("variables"), "expected an array");
  std::vector<VariableSpec> vars;
  for (std::size_t i = 0; i < vs.size(); ++i) {
    Reader vr(vs[i], index_path(r.path("variables"), i));
    vr.only({"name", "family", "parents", "eta"});
    VariableSpec v;
    v.name = vr.string("name");
    v.family = family_from_json(vr.get("family"), vr.path("family"));
    v.parents = vr.strings("parents");
    v.eta = eta_from_json(vr.get("eta"), vr.path("eta"));
    vars.push_back(std::move(v));
  }
  std::vector<Intervention> ivs;
  if (r.has("interventions")) {
    const json& is = r.get("interventions");
    if (!is.is_array())
      throw SchemaError(r.path("interventions"), "expected an array");
    for (std::size_t i = 0; i < is.size(); ++i) {
      Reader ir(is[i], index_path(r.path("interventions"), i));
      ir.only({"variable", "shift"});
      ivs.push_back({ir.string("variable"), shift_from_json(ir.get("shift"), ir.path("shift"))});
    }
  }
  try {
    return ShiftModel(std::move(vars), std::move(ivs));
  } catch (const SchemaError& e) {
    throw SchemaError(at + e.pointer(), e.what());
  } catch (const DomainError& e) {
    throw SchemaError(at, e.what());
  }
}

// ---------------------------------------------------------------------------
// Estimates, constraints, results

json to_json(const AuxiliaryConfig& c)
{
  return {{"poly_degree", c.poly_degree},
          {"ridge_lambda", c.ridge_lambda},
          {"sample_split", c.sample_split},
          {"fit_unused_coords", c.fit_unused_coords}};
}

AuxiliaryConfig aux_from_json(const json& j, const std::string& at)
{
  Reader r(j, at);
  r.only({"poly_degree", "ridge_lambda", "sample_split", "fit_unused_coords"});
  AuxiliaryConfig c;
  c.poly_degree = static_cast<int>(r.integer("poly_degree", c.poly_degree));
  if (c.poly_degree < 1 || c.poly_degree > 4)
    throw SchemaError(r.path("poly_degree"), "poly_degree must be between 1 and 4");
  c.ridge_lambda = r.number("ridge_lambda", c.ridge_lambda);
  if (c.ridge_lambda < 0)
    throw SchemaError(r.path("ridge_lambda"), "ridge_lambda must be nonnegative");
  c.sample_split = r.boolean("sample_split", c.sample_split);
  c.fit_unused_coords = r.boolean("fit_unused_coords", c.fit_unused_coords);
  return c;
}

json to_json(const CurvatureEstimate& c)
{
  json blocks = json::array();
  for (const auto& b : c.block_index)
    blocks.push_back({{"variable", b.variable},
                      {"var_index", b.var_index},
                      {"offset", b.offset},
                      {"size", b.size},
                      {"labels", b.labels}});
  return {{"base_loss", c.base_loss},
          {"sg1", to_json(c.sg1)},
          {"sg2", to_json(c.sg2)},
          {"n", c.n},
          {"labels", c.labels()},
          {"blocks", std::move(blocks)},
          {"asymmetry", c.asymmetry}};
}

CurvatureEstimate curvature_from_json(const json& j, const std::string& at)
{
  Reader r(j, at);
  r.only({"base_loss", "sg1", "sg2", "n", "labels", "blocks", "asymmetry"});
  CurvatureEstimate c;
  c.base_loss = r.number("base_loss");
  c.sg1 = vector_from_json(r.get("sg1"), r.path("sg1"));
  const int d = static_cast<int>(c.sg1.size());
  c.sg2 = matrix_from_json(r.get("sg2"), r.path("sg2"), d, d);
  const long long n = r.integer("n", 0);
  if (n < 0)
    throw SchemaError(r.path("n"), "n must be nonnegative");
  c.n = static_cast<std::size_t>(n);
  c.asymmetry = r.number("asymmetry", 0.0);
  if (r.has("blocks")) {
    const json& bs = r.get("blocks");
    if (!bs.is_array())
      throw SchemaError(r.path("blocks"), "expected an array");
    int next = 0;
    for (std::size_t i = 0; i < bs.size(); ++i) {
      Reader br(bs[i], index_path(r.path("blocks"), i));
      br.only({"variable", "var_index", "offset", "size", "labels"});
      DeltaBlock b;
      b.variable = br.string("variable");
      b.var_index = static_cast<int>(br.integer("var_index", 0));
      b.offset = static_cast<int>(br.integer("offset"));
      b.size = static_cast<int>(br.integer("size"));
      b.labels = br.strings("labels");
      if (b.offset != next || b.size < 0 || b.offset + b.size > d)
        throw SchemaError(br.at(), "blocks must tile the delta index in order");
      if (static_cast<int>(b.labels.size()) != b.size)
        throw SchemaError(br.path("labels"), "expected one label per coordinate");
      next += b.size;
      c.block_index.push_back(std::move(b));
    }
    if (next != d)
      throw SchemaError(r.path("blocks"), "blocks cover " + std::to_string(next) + " of " + std::to_string(d) +
                                              " coordinates");
  } else {
    // Without a block index, one anonymous block labeled by position (or by
    // the given labels).
    DeltaBlock b;
    b.variable = "delta";
    b.size = d;
    b.labels = r.strings("labels");
    if (b.labels.empty())
      for (int k = 0; k < d; ++k)
        b.labels.push_back("delta[" + std::to_string(k) + "]");
    else if (static_cast<int>(b.labels.size()) != d)
      throw SchemaError(r.path("labels"), "expected one label per coordinate");
    c.block_index.push_back(std::move(b));
  }
  return c;
}

json to_json(const ConstraintSpec& c)
{
  json j{{"form", enum_name(kConstraintForms, c.form)}};
  switch (c.form) {
  case ConstraintSpec::Form::Ball:
    j["lambda"] = c.lambda;
    break;
  case ConstraintSpec::Form::Quadratic:
    j["A"] = to_json(c.A);
    j["b"] = to_json(c.b);
    j["lambda"] = c.lambda;
    break;
  case ConstraintSpec::Form::Box:
    j["lower"] = to_json(c.lower);
    j["upper"] = to_json(c.upper);
    break;
  }
  if (!c.description.empty())
    j["description"] = c.description;
  return j;
}

ConstraintSpec constraint_from_json(const json& j, const std::string& at)
{
  Reader r(j, at);
  const auto form =
      parse_enum<ConstraintSpec::Form>(kConstraintForms, r.string("form", "ball"), r.path("form"), "constraint form");
  ConstraintSpec c;
  switch (form) {
  case ConstraintSpec::Form::Ball:
    r.only({"form", "lambda", "description"});
    c = ConstraintSpec::ball(r.number("lambda"));
    break;
  case ConstraintSpec::Form::Quadratic: {
    r.only({"form", "A", "b", "lambda", "description"});
    Eigen::MatrixXd A = matrix_from_json(r.get("A"), r.path("A"));
    if (A.rows() != A.cols())
      throw SchemaError(r.path("A"), "A must be square");
    Eigen::VectorXd b = r.has("b") ? vector_from_json(r.get("b"), r.path("b"), static_cast<int>(A.rows()))
                                   : Eigen::VectorXd::Zero(A.rows());
    c = ConstraintSpec::quadratic(std::move(A), std::move(b), r.number("lambda"));
    break;
  }
  case ConstraintSpec::Form::Box: {
    r.only({"form", "lower", "upper", "description"});
    Eigen::VectorXd lo = vector_from_json(r.get("lower"), r.path("lower"));
    Eigen::VectorXd hi = vector_from_json(r.get("upper"), r.path("upper"), static_cast<int>(lo.size()));
    c = ConstraintSpec::box(std::move(lo), std::move(hi));
    break;
  }
  }
  c.description = r.string("description", "");
  return c;
}

json to_json(const TrustRegionResult& t)
{
  return {{"delta_star", to_json(t.delta_star)},
          {"base_loss", t.base_loss},
          {"predicted_loss", t.predicted_loss},
          {"gain", t.gain()},
          {"multiplier", t.multiplier},
          {"on_boundary", t.on_boundary},
          {"kkt_residual", t.kkt_residual},
          {"complementary_slackness", t.complementary_slackness},
          {"dual_min_eigenvalue", t.dual_min_eigenvalue},
          {"hard_case", t.hard_case},
          {"approximate", t.approximate},
          {"iterations", t.iterations}};
}

} // namespace shiftbench::io
