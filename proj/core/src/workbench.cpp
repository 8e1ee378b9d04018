#include "shiftbench/workbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <regex>
#include <sstream>

#include "shiftbench/sim_bench.hpp"

namespace shiftbench::workbench {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kMaxSweepPoints = 100000;
constexpr std::size_t kDefaultN = 100000;

std::string hex64(std::uint64_t x)
{
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

std::string utc_now()
{
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

bool valid_id(const std::string& id)
{
  static const std::regex re("[A-Za-z0-9_.-]{1,64}");
  return std::regex_match(id, re) && id != "." && id != "..";
}

bool valid_run_id(const std::string& id)
{
  static const std::regex re("[0-9a-f]{16}");
  return std::regex_match(id, re);
}

json read_json_file(const fs::path& p)
{
  std::ifstream in(p);
  return json::parse(in);
}

void write_atomically(const fs::path& p, const std::string& text)
{
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << text;
    if (!out)
      throw Error("cannot write " + tmp.string());
  }
  fs::rename(tmp, p);
}

json gt_to_json(const sim::GroundTruth& g)
{
  return {{"mean", g.mean}, {"std_error", g.std_error}, {"n", g.n}, {"exact", g.exact}};
}

// Keys that describe where the curvature estimate comes from.
const std::vector<std::string> kEstimateKeys = {"scenario", "model", "model_ref", "data", "data_digest", "n", "aux"};

bool has_estimate_fields(const io::Reader& r)
{
  return r.has("scenario") || r.has("model") || r.has("model_ref");
}

SampleTable inline_table(const json& j, const std::string& at)
{
  io::Reader r(j, at);
  r.only({"columns", "rows"});
  const auto cols = r.strings("columns");
  if (cols.empty())
    throw SchemaError(r.path("columns"), "at least one column is required");
  const json& rows = r.get("rows");
  if (!rows.is_array())
    throw SchemaError(r.path("rows"), "expected an array of rows");
  const auto loss_it = std::find(cols.begin(), cols.end(), kLossColumn);
  const int loss_col = loss_it == cols.end() ? -1 : static_cast<int>(loss_it - cols.begin());
  std::vector<std::string> names;
  for (int c = 0; c < static_cast<int>(cols.size()); ++c)
    if (c != loss_col)
      names.push_back(cols[c]);
  SampleTable t(names);
  t.reserve(rows.size());
  std::vector<double> loss;
  std::vector<double> rec(names.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::string ai = r.path("rows") + "/" + std::to_string(i);
    const Eigen::VectorXd v = io::vector_from_json(rows[i], ai, static_cast<int>(cols.size()));
    std::size_t k = 0;
    for (int c = 0; c < v.size(); ++c) {
      if (c == loss_col)
        loss.push_back(v(c));
      else
        rec[k++] = v(c);
    }
    t.append_row(rec);
  }
  if (loss_col >= 0)
    t.set_loss(std::move(loss));
  return t;
}

std::string file_digest(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw SchemaError("/data", "cannot open data file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a64(ss.str()));
}

struct ModelSource {
  std::optional<sim::Scenario> scenario;
  std::optional<ShiftModel> model;
};

/// Builds the model (and scenario) named by an estimate config.
ModelSource model_source(RunStore& store, const json& config)
{
  io::Reader r(config, "");
  ModelSource out;
  const int given = r.has("scenario") + r.has("model") + r.has("model_ref");
  if (given != 1)
    throw SchemaError("", "exactly one of 'scenario', 'model', 'model_ref' is required");
  if (r.has("scenario")) {
    const std::string id = r.string("scenario");
    const auto ids = sim::scenario_ids();
    if (std::find(ids.begin(), ids.end(), id) == ids.end())
      throw SchemaError(r.path("scenario"), "unknown scenario '" + id + "'");
    out.scenario = sim::make_scenario(id, r.seed("seed", 0));
    out.model = out.scenario->model;
  } else if (r.has("model")) {
    out.model = io::model_from_json(r.get("model"), r.path("model"));
  } else {
    out.model = io::model_from_json(store.get_model(r.string("model_ref")));
  }
  return out;
}

struct Estimated {
  json record;
  CurvatureEstimate curv;
  ModelSource source;
};

/// Curvature estimate from an estimate run's config.
CurvatureEstimate compute_estimate(const json& config, const ModelSource& src)
{
  io::Reader r(config, "");
  const std::uint64_t seed = r.seed("seed", 0);
  const AuxiliaryConfig aux = r.has("aux") ? io::aux_from_json(r.get("aux"), r.path("aux")) : AuxiliaryConfig{};
  const ShiftModel& model = *src.model;

  SampleTable sample;
  if (r.has("data")) {
    const json& d = r.get("data");
    if (d.is_string()) {
      const std::string path = d.get<std::string>();
      if (r.has("data_digest") && r.string("data_digest") != file_digest(path))
        throw SchemaError(r.path("data_digest"), "data file '" + path + "' changed since this config was recorded");
      try {
        sample = SampleTable::read_csv_file(path);
      } catch (const SchemaError& e) {
        throw SchemaError(r.path("data"), e.what(), e.line());
      }
    } else {
      sample = inline_table(d, r.path("data"));
    }
    if (!sample.has_loss()) {
      if (src.scenario && src.scenario->loss_fn)
        sample.set_loss(src.scenario->loss_fn(sample));
      else
        throw SchemaError(r.path("data"), std::string("data has no '") + kLossColumn + "' column");
    }
  } else {
    if (!src.scenario)
      throw SchemaError(r.path("data"), "data is required unless a scenario is named");
    Rng rng = make_rng(seed, "workbench_estimate");
    sample = src.scenario->simulate(src.scenario->zero(), static_cast<std::size_t>(r.integer("n")), rng);
  }
  try {
    model.bind(sample);
  } catch (const SchemaError& e) {
    throw SchemaError(r.path("data"), e.what());
  }
  return estimate_curvature(model, sample, fit_auxiliaries(model, sample, aux));
}

json make_record(const std::string& kind, const json& config, const std::string& started)
{
  return {{"schema_version", io::kSchemaVersion},
          {"run_id", make_run_id(kind, config)},
          {"kind", kind},
          {"config", config},
          {"started_at", started},
          {"toolkit_version", toolkit_version()}};
}

/// Normalized estimate request: the echo stored in the run config.
json normalize_estimate(const json& request)
{
  io::check_schema_version(request);
  io::Reader r(request, "");
  json c = json::object();
  c["seed"] = r.seed("seed", 0);
  const int given = r.has("scenario") + r.has("model") + r.has("model_ref");
  if (given != 1)
    throw SchemaError("", "exactly one of 'scenario', 'model', 'model_ref' is required");
  if (r.has("scenario"))
    c["scenario"] = r.string("scenario");
  if (r.has("model"))
    c["model"] = io::to_json(io::model_from_json(r.get("model"), r.path("model")));
  if (r.has("model_ref")) {
    const std::string id = r.string("model_ref");
    if (!valid_id(id))
      throw SchemaError(r.path("model_ref"), "invalid model id");
    c["model_ref"] = id;
  }
  if (r.has("data")) {
    const json& d = r.get("data");
    if (d.is_string()) {
      c["data"] = d;
      c["data_digest"] = file_digest(d.get<std::string>());
      if (r.has("data_digest") && r.string("data_digest") != c["data_digest"].get<std::string>())
        throw SchemaError(r.path("data_digest"), "data file changed since this config was recorded");
    } else if (d.is_object()) {
      inline_table(d, r.path("data"));
      c["data"] = d;
    } else {
      throw SchemaError(r.path("data"), "expected a file path or {columns, rows}");
    }
  } else {
    const long long n = r.integer("n", static_cast<long long>(kDefaultN));
    if (n < 100 || n > 100000000)
      throw SchemaError(r.path("n"), "n must be between 100 and 1e8");
    c["n"] = n;
  }
  c["aux"] = io::to_json(r.has("aux") ? io::aux_from_json(r.get("aux"), r.path("aux")) : AuxiliaryConfig{});
  return c;
}

json estimate_results(const CurvatureEstimate& curv)
{
  return io::to_json(curv);
}

/// Resolves the estimate a worst-case or sweep request refers to. Writes the
/// source part of the config echo into `config`.
struct ResolvedEstimate {
  CurvatureEstimate curv;
  ModelSource source;
  std::uint64_t estimate_seed = 0;
};

ResolvedEstimate resolve_estimate(Workbench& wb, const io::Reader& r, json& config)
{
  ResolvedEstimate out;
  const int given = has_estimate_fields(r) + r.has("estimate_ref") + r.has("estimate");
  if (given != 1)
    throw SchemaError("", "exactly one estimate source is required: 'estimate_ref', 'estimate', or "
                          "'scenario' / 'model' / 'model_ref'");
  if (r.has("estimate")) {
    out.curv = io::curvature_from_json(r.get("estimate"), r.path("estimate"));
    config["estimate"] = io::to_json(out.curv);
    return out;
  }
  std::string ref;
  if (r.has("estimate_ref")) {
    ref = r.string("estimate_ref");
  } else {
    json sub = json::object();
    for (const auto& k : kEstimateKeys)
      if (r.has(k))
        sub[k] = r.get(k);
    if (r.has("seed"))
      sub["seed"] = r.get("seed");
    ref = wb.estimate(sub)["run_id"].get<std::string>();
  }
  const auto rec = wb.store().find(valid_run_id(ref) ? ref : std::string("-"));
  if (!rec)
    throw NotFoundError("unknown estimate run '" + ref + "'");
  if ((*rec)["kind"] != "estimate")
    throw SchemaError(r.path("estimate_ref"), "run '" + ref + "' is not an estimate");
  config["estimate_ref"] = ref;
  out.curv = io::curvature_from_json((*rec)["estimate"], "/estimate");
  out.source = model_source(wb.store(), (*rec)["config"]);
  out.estimate_seed = (*rec)["config"].value("seed", std::uint64_t{0});
  return out;
}

/// Table-1 style rows: label, delta_i, and for Bernoulli per-stratum
/// coordinates the base and shifted conditional probabilities.
json coordinate_table(const CurvatureEstimate& curv, const std::optional<ShiftModel>& model,
                      const Eigen::VectorXd& delta)
{
  json rows = json::array();
  for (const auto& b : curv.block_index) {
    int var = -1;
    const ShiftSpec* spec = nullptr;
    if (model) {
      var = model->variable_index(b.variable);
      spec = var >= 0 ? model->shift(var) : nullptr;
    }
    const bool bern = spec && model->variable(var).family.kind() == FamilyKind::BernoulliLogit;
    const bool stratified =
        spec && (spec->form == ShiftSpec::Form::PerStratum ||
                 (spec->form == ShiftSpec::Form::Constant && model->variable(var).parents.empty()));
    for (int k = 0; k < b.size; ++k) {
      const int i = b.offset + k;
      json row{{"index", i}, {"label", b.labels[k]}, {"delta", delta(i)}, {"p", nullptr}, {"p_delta", nullptr}};
      if (bern && stratified) {
        const Eigen::VectorXd z = model->stratum_values(var, k);
        if (!model->gated_off(var, z)) {
          const double eta = model->eta(var, z)(0);
          row["p"] = sigmoid(eta);
          row["p_delta"] = sigmoid(eta + delta(i));
        }
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

json validation_config(const io::Reader& r, const std::string& key, std::uint64_t seed)
{
  io::Reader v(r.get(key), r.path(key));
  v.only({"n", "seed", "exact"});
  const long long n = v.integer("n", static_cast<long long>(kDefaultN));
  const bool exact = v.boolean("exact", false);
  if (!exact && (n < 100 || n > 100000000))
    throw SchemaError(v.path("n"), "n must be between 100 and 1e8");
  return {{"n", n}, {"seed", v.seed("seed", seed)}, {"exact", exact}};
}

const sim::Scenario& require_scenario(const ResolvedEstimate& est, const std::string& pointer)
{
  if (!est.source.scenario)
    throw SchemaError(pointer, "ground truth needs an estimate built from a scenario");
  return *est.source.scenario;
}

ConstraintSpec checked_constraint(const json& j, const std::string& at, int d)
{
  ConstraintSpec cons = io::constraint_from_json(j, at);
  try {
    cons.validate(d);
  } catch (const DomainError& e) {
    std::string where = at;
    if (cons.form != ConstraintSpec::Form::Box)
      where += "/lambda";
    throw RequestDomainError(where, e.what());
  } catch (const ContractError& e) {
    throw SchemaError(at, e.what());
  }
  return cons;
}

TrustRegionResult solve(const CurvatureEstimate& curv, const ConstraintSpec& cons, std::uint64_t seed)
{
  BoxSearchConfig box;
  box.seed = derive_seed(seed, "workbench_box");
  return surrogate_max(curv, cons, box);
}

} // namespace

const char* toolkit_version()
{
#ifdef SHIFTBENCH_VERSION
  return SHIFTBENCH_VERSION;
#else
  return "0.0.0";
#endif
}

json ErrorInfo::to_json() const
{
  json e{{"type", type}, {"message", message}};
  if (!pointer.empty() || type == "schema")
    e["pointer"] = pointer;
  if (line > 0)
    e["line"] = line;
  return {{"error", std::move(e)}};
}

ErrorInfo describe_error(const std::exception& e)
{
  ErrorInfo info;
  info.message = e.what();
  if (const auto* s = dynamic_cast<const SchemaError*>(&e)) {
    info.status = 400;
    info.type = "schema";
    info.pointer = s->pointer();
    info.line = s->line();
  } else if (const auto* d = dynamic_cast<const RequestDomainError*>(&e)) {
    info.status = 400;
    info.type = "domain";
    info.pointer = d->pointer();
  } else if (dynamic_cast<const ShiftDomainError*>(&e)) {
    info.status = 400;
    info.type = "shift_domain";
  } else if (dynamic_cast<const DomainError*>(&e)) {
    info.status = 400;
    info.type = "domain";
  } else if (dynamic_cast<const NotFoundError*>(&e)) {
    info.status = 404;
    info.type = "not_found";
  } else if (dynamic_cast<const ConflictError*>(&e)) {
    info.status = 409;
    info.type = "conflict";
  } else if (dynamic_cast<const CoverageError*>(&e)) {
    info.status = 400;
    info.type = "coverage";
  } else if (dynamic_cast<const ScopeError*>(&e)) {
    info.status = 400;
    info.type = "scope";
  } else if (dynamic_cast<const UnsupportedConstraintError*>(&e)) {
    info.status = 400;
    info.type = "unsupported_constraint";
  } else if (dynamic_cast<const InfeasibleTargetError*>(&e)) {
    info.status = 400;
    info.type = "infeasible_target";
  } else if (dynamic_cast<const ContractError*>(&e)) {
    info.status = 400;
    info.type = "contract";
  } else if (const auto* p = dynamic_cast<const json::parse_error*>(&e)) {
    info.status = 400;
    info.type = "schema";
    info.message = std::string("request body is not valid JSON: ") + p->what();
  } else {
    info.status = 500;
    info.type = "internal";
  }
  return info;
}

std::string make_run_id(const std::string& kind, const json& config)
{
  return hex64(fnv1a64(kind + "\n" + config.dump()));
}

// ---------------------------------------------------------------------------
// RunStore

RunStore::RunStore(fs::path root) : root_(std::move(root))
{
  fs::create_directories(root_ / "runs");
  fs::create_directories(root_ / "models");
}

json RunStore::put(const json& record)
{
  const std::string id = record.at("run_id").get<std::string>();
  std::lock_guard lock(mutex_);
  const fs::path p = root_ / "runs" / (id + ".json");
  if (fs::exists(p))
    return read_json_file(p);
  write_atomically(p, record.dump(2) + "\n");
  std::ofstream index(root_ / "runs.jsonl", std::ios::app);
  index << json{{"run_id", id}, {"kind", record.at("kind")}, {"started_at", record.value("started_at", "")}}.dump()
        << "\n";
  return record;
}

std::optional<json> RunStore::find(const std::string& run_id) const
{
  if (!valid_run_id(run_id))
    return std::nullopt;
  std::lock_guard lock(mutex_);
  const fs::path p = root_ / "runs" / (run_id + ".json");
  if (!fs::exists(p))
    return std::nullopt;
  return read_json_file(p);
}

json RunStore::get(const std::string& run_id) const
{
  auto r = find(run_id);
  if (!r)
    throw NotFoundError("unknown run '" + run_id + "'");
  return *r;
}

std::vector<json> RunStore::list() const
{
  std::lock_guard lock(mutex_);
  std::vector<json> out;
  std::ifstream in(root_ / "runs.jsonl");
  std::string line;
  while (std::getline(in, line))
    if (!line.empty())
      out.push_back(json::parse(line));
  return out;
}

bool RunStore::put_model(const std::string& id, const json& model)
{
  if (!valid_id(id))
    throw SchemaError("/id", "model id must match [A-Za-z0-9_.-]{1,64}");
  std::lock_guard lock(mutex_);
  const fs::path p = root_ / "models" / (id + ".json");
  if (fs::exists(p)) {
    if (read_json_file(p) == model)
      return false;
    throw ConflictError("model '" + id + "' is already registered with different content");
  }
  write_atomically(p, model.dump(2) + "\n");
  return true;
}

json RunStore::get_model(const std::string& id) const
{
  std::lock_guard lock(mutex_);
  const fs::path p = root_ / "models" / (id + ".json");
  if (!valid_id(id) || !fs::exists(p))
    throw NotFoundError("unknown model '" + id + "'");
  return read_json_file(p);
}

// ---------------------------------------------------------------------------
// Operations

Workbench::Workbench(RunStore& store) : store_(store) {}

json Workbench::register_model(const json& request)
{
  io::check_schema_version(request);
  io::Reader r(request, "");
  r.only({"schema_version", "id", "model"});
  const std::string id = r.string("id");
  if (!valid_id(id))
    throw SchemaError(r.path("id"), "model id must match [A-Za-z0-9_.-]{1,64}");
  const ShiftModel model = io::model_from_json(r.get("model"), r.path("model"));
  const bool created = store_.put_model(id, io::to_json(model));
  return {{"id", id}, {"created", created}, {"d_delta", model.d_delta()}, {"labels", model.delta_labels()}};
}

json Workbench::estimate(const json& request)
{
  const std::string started = utc_now();
  {
    io::Reader r(request, "");
    r.only({"schema_version", "scenario", "model", "model_ref", "data", "data_digest", "n", "seed", "aux"});
  }
  const json config = normalize_estimate(request);
  json record = make_record("estimate", config, started);
  if (auto stored = store_.find(record["run_id"]))
    return *stored;
  const ModelSource src = model_source(store_, config);
  const CurvatureEstimate curv = compute_estimate(config, src);
  record["estimate"] = estimate_results(curv);
  record["finished_at"] = utc_now();
  return store_.put(record);
}

json Workbench::worst_case(const json& request)
{
  const std::string started = utc_now();
  io::check_schema_version(request);
  io::Reader r(request, "");
  r.only({"schema_version", "scenario", "model", "model_ref", "data", "data_digest", "n", "seed", "aux",
          "estimate_ref", "estimate", "constraint", "validate"});
  json config = json::object();
  const std::uint64_t seed = r.seed("seed", 0);
  config["seed"] = seed;
  const ResolvedEstimate est = resolve_estimate(*this, r, config);
  const ConstraintSpec cons = checked_constraint(r.get("constraint"), r.path("constraint"), est.curv.d_delta());
  config["constraint"] = io::to_json(cons);
  if (r.has("validate")) {
    config["validate"] = validation_config(r, "validate", seed);
    require_scenario(est, r.path("validate"));
  }

  json record = make_record("worst_case", config, started);
  if (auto stored = store_.find(record["run_id"]))
    return *stored;
  const TrustRegionResult res = solve(est.curv, cons, seed);
  record["d_delta"] = est.curv.d_delta();
  record["estimate"] = io::to_json(est.curv);
  record["constraint"] = config["constraint"];
  record["result"] = io::to_json(res);
  record["coordinates"] = coordinate_table(est.curv, est.source.model, res.delta_star);
  if (config.contains("validate")) {
    const auto& v = config["validate"];
    const auto& scen = *est.source.scenario;
    const auto n = v["n"].get<std::size_t>();
    const auto s = v["seed"].get<std::uint64_t>();
    const bool exact = v["exact"].get<bool>();
    record["validation"] = {{"base", gt_to_json(sim::mc_ground_truth(scen, scen.zero(), n, s, exact))},
                            {"at_delta_star", gt_to_json(sim::mc_ground_truth(scen, res.delta_star, n, s, exact))}};
  }
  record["finished_at"] = utc_now();
  return store_.put(record);
}

json Workbench::sweep(const json& request)
{
  const std::string started = utc_now();
  io::check_schema_version(request);
  io::Reader r(request, "");
  r.only({"schema_version", "scenario", "model", "model_ref", "data", "data_digest", "n", "seed", "aux",
          "estimate_ref", "estimate", "grid", "base", "truth", "constraint"});
  json config = json::object();
  const std::uint64_t seed = r.seed("seed", 0);
  config["seed"] = seed;
  const ResolvedEstimate est = resolve_estimate(*this, r, config);
  const int d = est.curv.d_delta();

  io::Reader g(r.get("grid"), r.path("grid"));
  g.only({"coords", "lo", "hi", "step"});
  const std::vector<int> coords = g.ints("coords");
  if (coords.empty() || coords.size() > 2)
    throw SchemaError(g.path("coords"), "a sweep covers one or two coordinates");
  for (std::size_t a = 0; a < coords.size(); ++a) {
    if (coords[a] < 0 || coords[a] >= d)
      throw SchemaError(g.path("coords") + "/" + std::to_string(a),
                        "coordinate out of range [0, " + std::to_string(d) + ")");
    if (a > 0 && coords[a] == coords[0])
      throw SchemaError(g.path("coords") + "/" + std::to_string(a), "coordinates must be distinct");
  }
  const int m = static_cast<int>(coords.size());
  const Eigen::VectorXd lo = io::vector_from_json(g.get("lo"), g.path("lo"), m);
  const Eigen::VectorXd hi = io::vector_from_json(g.get("hi"), g.path("hi"), m);
  const Eigen::VectorXd step = g.get("step").is_number() ? Eigen::VectorXd::Constant(m, g.number("step"))
                                                         : io::vector_from_json(g.get("step"), g.path("step"), m);
  std::vector<std::vector<double>> axes(m);
  std::size_t total = 1;
  for (int a = 0; a < m; ++a) {
    if (!(step(a) > 0))
      throw SchemaError(g.path("step"), "step must be positive");
    if (hi(a) < lo(a))
      throw SchemaError(g.path("hi"), "hi must not be below lo");
    const long count = std::lround(std::floor((hi(a) - lo(a)) / step(a) + 1e-9)) + 1;
    if (count <= 0 || static_cast<std::size_t>(count) > kMaxSweepPoints)
      throw SchemaError(g.path("step"), "grid too large");
    // Step-aligned grids are generated as integer multiples so 0 is hit exactly.
    const double k0 = lo(a) / step(a);
    const bool aligned = std::abs(k0 - std::round(k0)) < 1e-9;
    for (long i = 0; i < count; ++i)
      axes[a].push_back(aligned ? (std::round(k0) + static_cast<double>(i)) * step(a) : lo(a) + i * step(a));
    total *= static_cast<std::size_t>(count);
  }
  if (total > kMaxSweepPoints)
    throw SchemaError(g.path("step"), "grid too large");
  config["grid"] = {{"coords", coords}, {"lo", io::to_json(lo)}, {"hi", io::to_json(hi)}, {"step", io::to_json(step)}};

  const Eigen::VectorXd base = r.has("base") ? io::vector_from_json(r.get("base"), r.path("base"), d)
                                             : Eigen::VectorXd::Zero(d);
  config["base"] = io::to_json(base);
  std::optional<ConstraintSpec> cons;
  if (r.has("constraint")) {
    cons = checked_constraint(r.get("constraint"), r.path("constraint"), d);
    config["constraint"] = io::to_json(*cons);
  }
  if (r.has("truth")) {
    config["truth"] = validation_config(r, "truth", seed);
    require_scenario(est, r.path("truth"));
  }

  json record = make_record("sweep", config, started);
  if (auto stored = store_.find(record["run_id"]))
    return *stored;

  json labels = json::array();
  for (int c : coords)
    labels.push_back(est.curv.labels()[c]);
  json points = json::array();
  const std::size_t n1 = m == 2 ? axes[1].size() : 1;
  for (std::size_t idx = 0; idx < total; ++idx) {
    Eigen::VectorXd delta = base;
    json at = json::array();
    const std::size_t i0 = idx / n1;
    delta(coords[0]) = axes[0][i0];
    at.push_back(axes[0][i0]);
    if (m == 2) {
      delta(coords[1]) = axes[1][idx % n1];
      at.push_back(axes[1][idx % n1]);
    }
    json p{{"at", at}, {"taylor", taylor_estimate(est.curv, delta)}};
    if (config.contains("truth")) {
      const auto& t = config["truth"];
      try {
        p["truth"] = gt_to_json(sim::mc_ground_truth(*est.source.scenario, delta, t["n"].get<std::size_t>(),
                                                     t["seed"].get<std::uint64_t>(), t["exact"].get<bool>()));
      } catch (const DomainError& e) {
        p["truth"] = nullptr;
        p["gap"] = e.what();
      }
    }
    points.push_back(std::move(p));
  }
  record["d_delta"] = d;
  record["estimate"] = io::to_json(est.curv);
  record["labels"] = labels;
  record["points"] = std::move(points);
  if (cons) {
    const TrustRegionResult res = solve(est.curv, *cons, seed);
    record["constraint"] = config["constraint"];
    record["result"] = io::to_json(res);
  }
  record["finished_at"] = utc_now();
  return store_.put(record);
}

json Workbench::list_runs() const
{
  return {{"runs", store_.list()}};
}

std::vector<json> top_coordinates(const json& record, std::size_t top)
{
  std::vector<json> rows;
  for (const auto& row : record.at("coordinates"))
    rows.push_back(row);
  std::stable_sort(rows.begin(), rows.end(), [](const json& a, const json& b) {
    return std::abs(a["delta"].get<double>()) > std::abs(b["delta"].get<double>());
  });
  if (top > 0 && rows.size() > top)
    rows.resize(top);
  return rows;
}

} // namespace shiftbench::workbench
