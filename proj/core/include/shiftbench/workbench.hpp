#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "shiftbench/error.hpp"
#include "shiftbench/io.hpp"

/// Operations behind the CLI and the HTTP service. Each operation takes a
/// JSON request, normalizes it into a config echo, computes from that echo
/// alone and persists a RunRecord:
///
///   {"schema_version", "run_id", "kind", "config", <results>, "started_at",
///    "finished_at", "toolkit_version"}
///
/// run_id is a hash of kind and the canonical dump of the config echo
/// (which carries the seed), so re-running the same request, or the stored
/// config, yields the same id.
namespace shiftbench::workbench {

using nlohmann::json;

const char* toolkit_version();

/// A domain violation located in a request document.
class RequestDomainError : public DomainError {
public:
  RequestDomainError(std::string pointer, const std::string& what) : DomainError(what), pointer_(std::move(pointer)) {}
  const std::string& pointer() const { return pointer_; }

private:
  std::string pointer_;
};

struct ErrorInfo {
  int status = 500;
  std::string type;
  std::string message;
  std::string pointer;
  std::size_t line = 0;
  json to_json() const;
};

/// HTTP status and body fields for an exception escaping an operation.
ErrorInfo describe_error(const std::exception& e);

/// 16 hex digits of the hash of kind + canonical config.
std::string make_run_id(const std::string& kind, const json& config);

/// Directory of JSON files: runs/<run_id>.json, runs.jsonl (index, one line
/// per stored run), models/<id>.json. Appends go through one mutex and files
/// are written by rename, so readers never see partial records.
class RunStore {
public:
  explicit RunStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }

  /// Stores a record unless its run_id exists; returns the stored record.
  json put(const json& record);
  std::optional<json> find(const std::string& run_id) const;
  /// Throws NotFoundError.
  json get(const std::string& run_id) const;
  /// Index entries {run_id, kind, started_at} in insertion order.
  std::vector<json> list() const;

  /// Returns true when newly stored, false when identical content exists;
  /// throws ConflictError when the id holds different content.
  bool put_model(const std::string& id, const json& model);
  /// Throws NotFoundError.
  json get_model(const std::string& id) const;

private:
  std::filesystem::path root_;
  mutable std::mutex mutex_;
};

class Workbench {
public:
  explicit Workbench(RunStore& store);

  RunStore& store() { return store_; }

  /// {"id", "model"} -> {"id", "created", "d_delta", "labels"}
  json register_model(const json& request);

  /// Estimate source (exactly one): "scenario" (builtin id), "model" (inline
  /// config) or "model_ref" (registered id). "data" is a CSV path or
  /// {"columns", "rows"[, "loss"]}; required unless a scenario is named, in
  /// which case "n" rows are drawn at delta = 0. Also "seed", "aux".
  json estimate(const json& request);

  /// Estimate source as above, or "estimate_ref" (run id of an estimate), or
  /// "estimate" (inline curvature). "constraint" required. Optional
  /// "validate": {"n", "seed"} adds MC truth at 0 and delta* for scenarios.
  json worst_case(const json& request);

  /// Estimate source as above plus "grid": {"coords", "lo", "hi", "step"}
  /// over one or two coordinates, optional "base" delta for the rest,
  /// optional "truth": {"n", "seed"} for scenarios, optional "constraint".
  json sweep(const json& request);

  json get_run(const std::string& run_id) const { return store_.get(run_id); }
  json list_runs() const;

private:
  RunStore& store_;
};

/// Rows of the named-coordinate table of a worst-case record, ordered by
/// decreasing |delta_i| and truncated to `top` (0 keeps all).
std::vector<json> top_coordinates(const json& record, std::size_t top);

} // namespace shiftbench::workbench
