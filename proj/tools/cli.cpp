#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <CLI11.hpp>

#include "shiftbench/server.hpp"
#include "shiftbench/sim_bench.hpp"
#include "shiftbench/workbench.hpp"

namespace shiftbench::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using workbench::Workbench;

namespace {

struct SourceFlags {
  std::string config;
  std::string scenario;
  std::string data;
  std::string estimate;
  long long n = 0;
};

struct CommonFlags {
  std::uint64_t seed = 0;
  std::string out;
  std::string format = "json";
  std::string run_dir = "shiftbench-runs";
  std::size_t top = 10;
};

void add_common(CLI::App* cmd, CommonFlags& c)
{
  cmd->add_option("--seed", c.seed, "Root seed for every random stream")->capture_default_str();
  cmd->add_option("--out", c.out, "Write the result to this file");
  cmd->add_option("--format", c.format, "Output format for --out")
      ->check(CLI::IsMember({"json", "csv"}))
      ->capture_default_str();
  cmd->add_option("--run-dir", c.run_dir, "Run store directory")->capture_default_str();
}

void add_source(CLI::App* cmd, SourceFlags& s, bool allow_estimate)
{
  cmd->add_option("--config", s.config, "Model config or request JSON file");
  cmd->add_option("--scenario", s.scenario, "Builtin scenario id");
  cmd->add_option("--data", s.data, "CSV sample with a __loss column");
  cmd->add_option("--n", s.n, "Rows drawn from the scenario when no data is given");
  if (allow_estimate)
    cmd->add_option("--estimate", s.estimate, "Estimate run id or estimate JSON file");
}

json read_json(const std::string& path)
{
  std::ifstream in(path);
  if (!in)
    throw SchemaError("", "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError("", path + ": " + e.what());
  }
}

bool looks_like_run_id(const std::string& s)
{
  return s.size() == 16 && std::all_of(s.begin(), s.end(), [](char c) {
           return std::isdigit(static_cast<unsigned char>(c)) || (c >= 'a' && c <= 'f');
         });
}

/// Request fields naming the estimate source, from flags.
json source_request(const SourceFlags& s, const CommonFlags& c, workbench::RunStore& store)
{
  json req = json::object();
  if (!s.config.empty()) {
    json cfg = read_json(s.config);
    if (cfg.is_object() && cfg.contains("variables"))
      req["model"] = cfg;
    else if (cfg.is_object())
      req = cfg;
    else
      throw SchemaError("", s.config + ": expected a JSON object");
  }
  if (!s.scenario.empty())
    req["scenario"] = s.scenario;
  if (!s.data.empty())
    req["data"] = s.data;
  if (s.n > 0)
    req["n"] = s.n;
  if (!s.estimate.empty()) {
    if (looks_like_run_id(s.estimate)) {
      req["estimate_ref"] = s.estimate;
    } else {
      json e = read_json(s.estimate);
      if (e.is_object() && e.value("kind", "") == "estimate" && e.contains("run_id")) {
        store.put(e);
        req["estimate_ref"] = e["run_id"];
      } else {
        req["estimate"] = e;
      }
    }
  }
  if (!req.contains("seed") || c.seed != 0)
    req["seed"] = c.seed;
  return req;
}

std::string fmt(double x, int prec = 4)
{
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << x;
  return os.str();
}

std::string fmt_opt(const json& j, int prec = 4)
{
  return j.is_null() ? std::string("-") : fmt(j.get<double>(), prec);
}

void write_text(const std::string& path, const std::string& text)
{
  std::ofstream out(path);
  if (!out)
    throw Error("cannot write '" + path + "'");
  out << text;
}

std::string csv_field(const std::string& s)
{
  if (s.find_first_of(",\"\n") == std::string::npos)
    return s;
  std::string q = "\"";
  for (char c : s)
    q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

std::string num(const json& j)
{
  if (j.is_null())
    return "";
  std::ostringstream os;
  os << std::setprecision(17) << j.get<double>();
  return os.str();
}

std::string record_csv(const json& rec)
{
  std::ostringstream os;
  const std::string kind = rec["kind"];
  if (kind == "estimate") {
    const auto& e = rec["estimate"];
    os << "index,label,sg1\n";
    for (std::size_t i = 0; i < e["sg1"].size(); ++i)
      os << i << "," << csv_field(e["labels"][i]) << "," << num(e["sg1"][i]) << "\n";
  } else if (kind == "worst_case") {
    os << "index,label,delta,p,p_delta\n";
    for (const auto& r : rec["coordinates"])
      os << r["index"].get<int>() << "," << csv_field(r["label"]) << "," << num(r["delta"]) << "," << num(r["p"])
         << "," << num(r["p_delta"]) << "\n";
  } else {
    const auto& labels = rec["labels"];
    for (std::size_t a = 0; a < labels.size(); ++a)
      os << csv_field(labels[a]) << ",";
    os << "taylor,truth,truth_se,gap\n";
    for (const auto& p : rec["points"]) {
      for (const auto& a : p["at"])
        os << num(a) << ",";
      os << num(p["taylor"]);
      if (p.contains("truth") && !p["truth"].is_null())
        os << "," << num(p["truth"]["mean"]) << "," << num(p["truth"]["std_error"]) << ",";
      else
        os << ",,,";
      os << csv_field(p.value("gap", "")) << "\n";
    }
  }
  return os.str();
}

void emit(const json& rec, const CommonFlags& c)
{
  if (c.out.empty())
    return;
  write_text(c.out, c.format == "csv" ? record_csv(rec) : rec.dump(2) + "\n");
}

void print_estimate(const json& rec, std::size_t top, std::ostream& out)
{
  const auto& e = rec["estimate"];
  out << "run_id " << rec["run_id"].get<std::string>() << "\n";
  out << "n " << e["n"].get<std::size_t>() << "  base loss " << fmt(e["base_loss"].get<double>()) << "  d_delta "
      << e["sg1"].size() << "\n";
  std::vector<std::size_t> idx(e["sg1"].size());
  for (std::size_t i = 0; i < idx.size(); ++i)
    idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(e["sg1"][a].get<double>()) > std::abs(e["sg1"][b].get<double>());
  });
  if (top > 0 && idx.size() > top)
    idx.resize(top);
  out << std::setw(10) << "sg1" << "  coordinate\n";
  for (std::size_t i : idx)
    out << std::setw(10) << fmt(e["sg1"][i].get<double>()) << "  " << e["labels"][i].get<std::string>() << "\n";
}

std::string describe_constraint(const json& c)
{
  const std::string form = c["form"];
  if (form == "ball")
    return "ball lambda=" + num(c["lambda"]);
  if (form == "quadratic")
    return "quadratic lambda=" + num(c["lambda"]);
  return "box";
}

void print_worst_case(const json& rec, std::size_t top, std::ostream& out)
{
  const auto& r = rec["result"];
  out << "run_id " << rec["run_id"].get<std::string>() << "\n";
  out << "constraint " << describe_constraint(rec["constraint"]) << "\n";
  out << "predicted worst-case loss " << fmt(r["predicted_loss"].get<double>()) << " (base "
      << fmt(r["base_loss"].get<double>()) << ", gain " << fmt(r["gain"].get<double>()) << ")\n";
  out << "on_boundary " << (r["on_boundary"].get<bool>() ? "yes" : "no") << "  kkt_residual " << std::scientific
      << std::setprecision(2) << r["kkt_residual"].get<double>() << std::defaultfloat
      << (r["approximate"].get<bool>() ? "  (approximate)" : "") << "\n";
  if (rec.contains("validation")) {
    const auto& v = rec["validation"];
    out << "MC truth: base " << fmt(v["base"]["mean"].get<double>()) << " +- "
        << fmt(v["base"]["std_error"].get<double>()) << ", at delta* " << fmt(v["at_delta_star"]["mean"].get<double>())
        << " +- " << fmt(v["at_delta_star"]["std_error"].get<double>()) << "\n";
  }
  out << std::setw(10) << "delta_i" << std::setw(9) << "P" << std::setw(9) << "P_delta" << "  coordinate\n";
  for (const auto& row : workbench::top_coordinates(rec, top))
    out << std::setw(10) << fmt(row["delta"].get<double>()) << std::setw(9) << fmt_opt(row["p"]) << std::setw(9)
        << fmt_opt(row["p_delta"]) << "  " << row["label"].get<std::string>() << "\n";
}

void print_sweep(const json& rec, std::ostream& out)
{
  out << "run_id " << rec["run_id"].get<std::string>() << "\n";
  out << "points " << rec["points"].size() << " over";
  for (const auto& l : rec["labels"])
    out << " [" << l.get<std::string>() << "]";
  out << "\n";
  if (rec.contains("result"))
    out << "worst case " << fmt(rec["result"]["predicted_loss"].get<double>()) << " at "
        << rec["result"]["delta_star"].dump() << "\n";
  std::size_t gaps = 0;
  for (const auto& p : rec["points"])
    gaps += p.contains("gap");
  if (gaps > 0)
    out << "gaps " << gaps << " (outside the shift domain)\n";
}

struct BoundFlag {
  int index;
  double lo;
  double hi;
};

std::pair<double, double> parse_range(const std::string& s, const std::string& flag)
{
  const auto colon = s.find(':');
  try {
    if (colon == std::string::npos)
      throw std::invalid_argument(s);
    return {std::stod(s.substr(0, colon)), std::stod(s.substr(colon + 1))};
  } catch (const std::exception&) {
    throw SchemaError("", flag + " expects LO:HI, got '" + s + "'");
  }
}

json constraint_from_flags(const std::string& file, const std::vector<double>& lambda, const std::string& box,
                           const std::vector<std::string>& bounds, int d)
{
  if (!file.empty())
    return read_json(file);
  if (box.empty() && bounds.empty()) {
    if (lambda.empty())
      throw SchemaError("/constraint", "one of --lambda, --box, --bound or --constraint is required");
    return {{"form", "ball"}, {"lambda", lambda.front()}};
  }
  if (d <= 0)
    throw SchemaError("/constraint", "box flags need a known d_delta");
  double lo0 = 0, hi0 = 0;
  if (!box.empty())
    std::tie(lo0, hi0) = parse_range(box, "--box");
  else if (!lambda.empty())
    lo0 = -lambda.front(), hi0 = lambda.front();
  else
    throw SchemaError("/constraint", "--bound needs --box or --lambda for the remaining coordinates");
  std::vector<double> lo(d, lo0), hi(d, hi0);
  for (const auto& b : bounds) {
    const auto eq = b.find('=');
    if (eq == std::string::npos)
      throw SchemaError("/constraint", "--bound expects I=LO:HI, got '" + b + "'");
    int i = -1;
    try {
      i = std::stoi(b.substr(0, eq));
    } catch (const std::exception&) {
      throw SchemaError("/constraint", "--bound index is not an integer in '" + b + "'");
    }
    if (i < 0 || i >= d)
      throw SchemaError("/constraint", "--bound index " + std::to_string(i) + " out of range");
    std::tie(lo[i], hi[i]) = parse_range(b.substr(eq + 1), "--bound");
  }
  return {{"form", "box"}, {"lower", lo}, {"upper", hi}};
}

/// d_delta of the estimate a request refers to, computing it if needed.
int estimate_dim(Workbench& wb, json& req)
{
  if (req.contains("estimate"))
    return static_cast<int>(req["estimate"]["sg1"].size());
  if (!req.contains("estimate_ref")) {
    json sub = json::object();
    for (const char* k : {"scenario", "model", "model_ref", "data", "data_digest", "n", "aux", "seed"})
      if (req.contains(k))
        sub[k] = req[k];
    const json rec = wb.estimate(sub);
    for (const char* k : {"scenario", "model", "model_ref", "data", "data_digest", "n", "aux"})
      req.erase(k);
    req["estimate_ref"] = rec["run_id"];
    return static_cast<int>(rec["estimate"]["sg1"].size());
  }
  return static_cast<int>(wb.get_run(req["estimate_ref"])["estimate"]["sg1"].size());
}

// ---------------------------------------------------------------------------
// simulate

json gt_json(const sim::GroundTruth& g)
{
  return {{"mean", g.mean}, {"std_error", g.std_error}, {"n", g.n}, {"exact", g.exact}};
}

json stats_json(const sim::EstimatorStats& s, bool keep)
{
  json j{{"mean", s.mean}, {"variance", s.variance}, {"coverage", s.coverage}};
  if (keep)
    j["values"] = s.values;
  return j;
}

Eigen::VectorXd parse_delta(const std::string& s, int d)
{
  Eigen::VectorXd v = Eigen::VectorXd::Zero(d);
  if (s.empty())
    return v;
  std::stringstream ss(s);
  std::string item;
  int i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= d)
      throw SchemaError("", "--delta has more than " + std::to_string(d) + " entries");
    try {
      v(i++) = std::stod(item);
    } catch (const std::exception&) {
      throw SchemaError("", "--delta entry '" + item + "' is not a number");
    }
  }
  if (i != d)
    throw SchemaError("", "--delta needs " + std::to_string(d) + " entries");
  return v;
}

json fig3_json(const sim::Fig3Record& f)
{
  return {{"experiment", "fig3"},
          {"delta0", f.delta0},
          {"truth_mean", f.truth_mean},
          {"truth_se", f.truth_se},
          {"taylor", f.taylor},
          {"curvature", io::to_json(f.curvature)},
          {"worst_case", io::to_json(f.worst_case)},
          {"mc_argmax", f.mc_argmax},
          {"p_o1_y0", f.p_o1_y0},
          {"p_o1_y1", f.p_o1_y1},
          {"p_o1", f.p_o1},
          {"marginal",
           {{"target", f.marginal_target},
            {"delta0", f.marginal_delta0},
            {"truth", f.marginal_truth},
            {"truth_se", f.marginal_truth_se},
            {"taylor", f.marginal_taylor}}}};
}

json is_taylor_json(const sim::IsTaylorTable& t, bool keep)
{
  json rows = json::array();
  for (const auto& r : t.rows)
    rows.push_back({{"delta", io::to_json(r.delta)},
                    {"truth", gt_json(r.truth)},
                    {"is", stats_json(r.is, keep)},
                    {"taylor", stats_json(r.taylor, keep)},
                    {"taylor_uncentered", stats_json(r.taylor_uncentered, keep)},
                    {"clipped_is", stats_json(r.clipped_is, keep)}});
  return {{"experiment", "is-vs-taylor"}, {"scenario", t.scenario}, {"reps", t.reps}, {"n", t.n}, {"rows", rows}};
}

json attributes_block_json(const sim::Attributes31Block& b)
{
  const auto& s = b.summary;
  json reps = json::array();
  for (const auto& r : b.reps)
    reps.push_back({{"rep", r.rep},
                    {"delta_taylor", io::to_json(r.delta_taylor)},
                    {"delta_is", io::to_json(r.delta_is)},
                    {"truth_taylor", gt_json(r.truth_taylor)},
                    {"truth_is", gt_json(r.truth_is)},
                    {"taylor_self", r.taylor_self},
                    {"is_at_taylor", r.is_at_taylor},
                    {"is_self", r.is_self},
                    {"taylor_seconds", r.taylor_seconds},
                    {"is_seconds", r.is_seconds}});
  return {{"lambda", b.lambda},
          {"summary",
           {{"truth_taylor", s.truth_taylor},
            {"truth_taylor_se", s.truth_taylor_se},
            {"truth_is", s.truth_is},
            {"truth_is_se", s.truth_is_se},
            {"taylor_self", s.taylor_self},
            {"is_at_taylor", s.is_at_taylor},
            {"is_self", s.is_self},
            {"taylor_wins", s.taylor_wins},
            {"ties", s.ties},
            {"win_rate", s.win_rate},
            {"taylor_abs_error", s.taylor_abs_error},
            {"is_abs_error", s.is_abs_error},
            {"taylor_seconds", s.taylor_seconds},
            {"is_seconds", s.is_seconds}}},
          {"reps", reps}};
}

json attributes_json(const sim::Attributes31Record& a)
{
  json sweep = json::array();
  for (const auto& b : a.sweep)
    sweep.push_back(attributes_block_json(b));
  return {{"experiment", "attributes31"},
          {"d_delta", a.d_delta},
          {"base", gt_json(a.base)},
          {"main", attributes_block_json(a.main)},
          {"sweep", sweep}};
}

struct SimFlags {
  std::string scenario;
  std::string experiment = "sample";
  std::size_t n = 0;
  int reps = 0;
  double lambda = 0;
  std::size_t truth_n = 0;
  std::string delta;
  std::string plot_data;
  std::uint64_t seed = 0;
  std::string out;
};

int simulate(const SimFlags& f, std::ostream& out)
{
  if (f.experiment == "sample") {
    if (f.scenario.empty())
      throw SchemaError("", "--scenario is required");
    const auto ids = sim::scenario_ids();
    if (std::find(ids.begin(), ids.end(), f.scenario) == ids.end())
      throw SchemaError("", "unknown scenario '" + f.scenario + "'");
    const auto scen = sim::make_scenario(f.scenario, f.seed);
    Rng rng = make_rng(f.seed, "cli_simulate");
    const auto t = scen.simulate(parse_delta(f.delta, scen.model.d_delta()), f.n > 0 ? f.n : 1000, rng);
    if (f.out.empty()) {
      t.write_csv(out);
    } else {
      std::ofstream os(f.out);
      t.write_csv(os);
      out << "wrote " << t.rows() << " rows to " << f.out << "\n";
    }
    return 0;
  }

  json result;
  if (f.experiment == "fig3") {
    sim::Fig3Config cfg;
    cfg.seed = f.seed;
    cfg.lab.seed = f.seed;
    if (f.n > 0)
      cfg.estimate_n = f.n;
    if (f.truth_n > 0)
      cfg.mc_n = f.truth_n;
    const auto rec = sim::run_fig3(cfg);
    result = fig3_json(rec);
    out << "P(O=1|Y=0) " << fmt(rec.p_o1_y0) << "  P(O=1|Y=1) " << fmt(rec.p_o1_y1) << "\n";
    out << "worst case delta0 " << fmt(rec.worst_case.delta_star(0)) << "  MC argmax " << fmt(rec.mc_argmax) << "\n";
    if (!f.plot_data.empty()) {
      fs::create_directories(f.plot_data);
      std::ofstream os(fs::path(f.plot_data) / "fig3_curve.csv");
      os << "delta0,truth,truth_se,taylor\n" << std::setprecision(17);
      for (std::size_t i = 0; i < rec.delta0.size(); ++i)
        os << rec.delta0[i] << "," << rec.truth_mean[i] << "," << rec.truth_se[i] << "," << rec.taylor[i] << "\n";
      std::ofstream ms(fs::path(f.plot_data) / "fig3_marginal.csv");
      ms << "target,delta0,truth,truth_se,taylor\n" << std::setprecision(17);
      for (std::size_t i = 0; i < rec.marginal_target.size(); ++i)
        ms << rec.marginal_target[i] << "," << rec.marginal_delta0[i] << "," << rec.marginal_truth[i] << ","
           << rec.marginal_truth_se[i] << "," << rec.marginal_taylor[i] << "\n";
    }
  } else if (f.experiment == "is-vs-taylor") {
    const auto scen = sim::make_scenario(f.scenario.empty() ? "gauss1d" : f.scenario, f.seed);
    sim::IsTaylorConfig cfg;
    cfg.seed = f.seed;
    if (f.reps > 0)
      cfg.reps = f.reps;
    if (f.n > 0)
      cfg.n = f.n;
    if (f.truth_n > 0)
      cfg.truth_n = f.truth_n;
    const int d = scen.model.d_delta();
    if (!f.delta.empty()) {
      cfg.path = {parse_delta(f.delta, d)};
    } else {
      for (double t : {0.0, 0.5, 1.0, 1.5})
        cfg.path.push_back(Eigen::VectorXd::Constant(d, t / std::sqrt(static_cast<double>(d))));
    }
    const auto tab = sim::run_is_vs_taylor(scen, cfg);
    result = is_taylor_json(tab, false);
    out << std::setw(8) << "|delta|" << std::setw(10) << "truth" << std::setw(12) << "var_is" << std::setw(12)
        << "var_taylor" << std::setw(12) << "var_uncent" << "\n";
    for (const auto& r : tab.rows)
      out << std::setw(8) << fmt(r.delta.norm(), 2) << std::setw(10) << fmt(r.truth.mean) << std::setw(12)
          << std::scientific << std::setprecision(3) << r.is.variance << std::setw(12) << r.taylor.variance
          << std::setw(12) << r.taylor_uncentered.variance << std::defaultfloat << "\n";
    if (!f.plot_data.empty()) {
      fs::create_directories(f.plot_data);
      std::ofstream os(fs::path(f.plot_data) / "is_vs_taylor.csv");
      os << "delta_norm,truth,is_mean,is_var,taylor_mean,taylor_var,uncentered_mean,uncentered_var,clipped_mean,"
            "clipped_var\n"
         << std::setprecision(17);
      for (const auto& r : tab.rows)
        os << r.delta.norm() << "," << r.truth.mean << "," << r.is.mean << "," << r.is.variance << ","
           << r.taylor.mean << "," << r.taylor.variance << "," << r.taylor_uncentered.mean << ","
           << r.taylor_uncentered.variance << "," << r.clipped_is.mean << "," << r.clipped_is.variance << "\n";
    }
  } else if (f.experiment == "attributes31") {
    sim::Attributes31Config cfg;
    cfg.seed = f.seed;
    if (f.reps > 0)
      cfg.reps = f.reps;
    if (f.lambda > 0)
      cfg.lambda = f.lambda;
    if (f.n > 0)
      cfg.n_val = f.n;
    if (f.truth_n > 0)
      cfg.truth_n = f.truth_n;
    const auto rec = sim::run_attributes31(cfg);
    result = attributes_json(rec);
    out << "d_delta " << rec.d_delta << "  base loss " << fmt(rec.base.mean) << "\n";
    out << std::setw(6) << "lambda" << std::setw(10) << "GT_taylor" << std::setw(10) << "GT_IS" << std::setw(10)
        << "win_rate" << std::setw(11) << "MAPE_tay" << std::setw(11) << "MAPE_IS" << "\n";
    std::vector<const sim::Attributes31Block*> blocks{&rec.main};
    for (const auto& b : rec.sweep)
      blocks.push_back(&b);
    for (const auto* b : blocks)
      out << std::setw(6) << fmt(b->lambda, 1) << std::setw(10) << fmt(b->summary.truth_taylor) << std::setw(10)
          << fmt(b->summary.truth_is) << std::setw(10) << fmt(b->summary.win_rate, 2) << std::setw(11)
          << fmt(b->summary.taylor_abs_error) << std::setw(11) << fmt(b->summary.is_abs_error) << "\n";
    if (!f.plot_data.empty()) {
      fs::create_directories(f.plot_data);
      std::ofstream os(fs::path(f.plot_data) / "attributes31_sweep.csv");
      os << "lambda,truth_taylor,truth_taylor_se,truth_is,truth_is_se,win_rate\n" << std::setprecision(17);
      for (const auto& b : rec.sweep)
        os << b.lambda << "," << b.summary.truth_taylor << "," << b.summary.truth_taylor_se << ","
           << b.summary.truth_is << "," << b.summary.truth_is_se << "," << b.summary.win_rate << "\n";
    }
  } else {
    throw SchemaError("", "unknown experiment '" + f.experiment + "'");
  }
  result["seed"] = f.seed;
  result["toolkit_version"] = workbench::toolkit_version();
  if (!f.out.empty())
    write_text(f.out, result.dump(2) + "\n");
  return 0;
}

workbench::Server* g_server = nullptr;

extern "C" void on_signal(int)
{
  if (g_server)
    g_server->stop();
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
  CLI::App app{"Shift-robustness estimates, worst-case shifts and sweeps", "shiftbench"};
  app.require_subcommand(1);
  app.set_version_flag("--version", workbench::toolkit_version());

  SourceFlags src;
  CommonFlags common;

  auto* est = app.add_subcommand("estimate", "Estimate the shift gradient and Hessian");
  add_source(est, src, false);
  add_common(est, common);
  est->add_option("--top", common.top, "Coordinates to print")->capture_default_str();

  std::vector<double> lambda;
  std::string box, constraint_file;
  std::vector<std::string> bounds;
  std::size_t validate_n = 0;
  auto* wc = app.add_subcommand("worst-case", "Maximize the quadratic surrogate over a constraint set");
  add_source(wc, src, true);
  add_common(wc, common);
  wc->add_option("--lambda", lambda, "Ball radius (or default box half-width)")->expected(1);
  wc->add_option("--box", box, "Box LO:HI for every coordinate");
  wc->add_option("--bound", bounds, "Per-coordinate box I=LO:HI (repeatable)");
  wc->add_option("--constraint", constraint_file, "Constraint JSON file");
  wc->add_option("--validate-n", validate_n, "MC rows for ground truth at 0 and delta*");
  wc->add_option("--top", common.top, "Coordinates to print")->capture_default_str();

  std::vector<std::string> grid;
  std::size_t truth_n = 0;
  std::string plot_data;
  auto* sw = app.add_subcommand("sweep", "Evaluate the surrogate (and MC truth) on a 1-D or 2-D grid");
  add_source(sw, src, true);
  add_common(sw, common);
  sw->add_option("--grid", grid, "I:LO:HI:STEP per swept coordinate (one or two)")->required();
  sw->add_option("--truth-n", truth_n, "MC rows per grid point (scenarios only)");
  sw->add_option("--lambda", lambda, "Also solve the ball problem of this radius")->expected(1);
  sw->add_option("--plot-data", plot_data, "Directory for sweep.csv");

  SimFlags sf;
  auto* simc = app.add_subcommand("simulate", "Draw samples or run a simulation experiment");
  simc->add_option("--scenario", sf.scenario, "Builtin scenario id");
  simc->add_option("--experiment", sf.experiment, "sample | fig3 | is-vs-taylor | attributes31")
      ->check(CLI::IsMember({"sample", "fig3", "is-vs-taylor", "attributes31"}))
      ->capture_default_str();
  simc->add_option("--n", sf.n, "Rows per sample");
  simc->add_option("--reps", sf.reps, "Replications");
  simc->add_option("--lambda", sf.lambda, "Ball radius (attributes31)");
  simc->add_option("--truth-n", sf.truth_n, "MC rows for ground truth");
  simc->add_option("--delta", sf.delta, "Comma-separated shift");
  simc->add_option("--plot-data", sf.plot_data, "Directory for curve CSVs");
  simc->add_option("--seed", sf.seed, "Root seed")->capture_default_str();
  simc->add_option("--out", sf.out, "Output file");

  std::string addr = "127.0.0.1:8080";
  auto* serve = app.add_subcommand("serve", "Run the HTTP/JSON service");
  serve->add_option("--addr", addr, "host:port")->capture_default_str();
  serve->add_option("--run-dir", common.run_dir, "Run store directory")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (simc->parsed())
      return simulate(sf, out);

    workbench::RunStore store(common.run_dir);
    Workbench wb(store);

    if (serve->parsed()) {
      const auto colon = addr.rfind(':');
      if (colon == std::string::npos)
        throw SchemaError("", "--addr expects host:port");
      workbench::Server server(wb);
      const int port = server.bind(addr.substr(0, colon), std::stoi(addr.substr(colon + 1)));
      if (port < 0) {
        err << "error: cannot bind " << addr << "\n";
        return 1;
      }
      out << "listening on " << addr.substr(0, colon) << ":" << port << " (runs in " << common.run_dir << ")"
          << std::endl;
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      const bool ok = server.run();
      g_server = nullptr;
      return ok ? 0 : 1;
    }

    json req = source_request(src, common, store);
    if (est->parsed()) {
      const json rec = wb.estimate(req);
      print_estimate(rec, common.top, out);
      emit(rec, common);
      return 0;
    }
    if (wc->parsed()) {
      const int d = (box.empty() && bounds.empty()) ? 0 : estimate_dim(wb, req);
      req["constraint"] = constraint_from_flags(constraint_file, lambda, box, bounds, d);
      if (validate_n > 0)
        req["validate"] = {{"n", validate_n}};
      const json rec = wb.worst_case(req);
      print_worst_case(rec, common.top, out);
      emit(rec, common);
      return 0;
    }
    if (sw->parsed()) {
      if (grid.empty() || grid.size() > 2)
        throw SchemaError("/grid", "--grid is given once or twice");
      json coords = json::array(), lo = json::array(), hi = json::array(), step = json::array();
      for (const auto& g : grid) {
        std::stringstream ss(g);
        std::string part;
        std::vector<std::string> parts;
        while (std::getline(ss, part, ':'))
          parts.push_back(part);
        if (parts.size() != 4)
          throw SchemaError("/grid", "--grid expects I:LO:HI:STEP, got '" + g + "'");
        try {
          coords.push_back(std::stoi(parts[0]));
          lo.push_back(std::stod(parts[1]));
          hi.push_back(std::stod(parts[2]));
          step.push_back(std::stod(parts[3]));
        } catch (const std::exception&) {
          throw SchemaError("/grid", "--grid expects numbers in '" + g + "'");
        }
      }
      req["grid"] = {{"coords", coords}, {"lo", lo}, {"hi", hi}, {"step", step}};
      if (truth_n > 0)
        req["truth"] = {{"n", truth_n}};
      if (!lambda.empty())
        req["constraint"] = {{"form", "ball"}, {"lambda", lambda.front()}};
      const json rec = wb.sweep(req);
      print_sweep(rec, out);
      emit(rec, common);
      if (!plot_data.empty()) {
        fs::create_directories(plot_data);
        write_text((fs::path(plot_data) / "sweep.csv").string(), record_csv(rec));
      }
      return 0;
    }
  } catch (const std::exception& e) {
    const auto info = workbench::describe_error(e);
    err << "error (" << info.type << ")";
    if (!info.pointer.empty())
      err << " at " << info.pointer;
    if (info.line > 0)
      err << ", line " << info.line;
    err << ": " << info.message << "\n";
    return info.status == 500 ? 3 : 2;
  }
  return 0;
}

} // namespace shiftbench::cli
