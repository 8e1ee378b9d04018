#pragma once

#include <string>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "shiftbench/estimation.hpp"
#include "shiftbench/shift_model.hpp"
#include "shiftbench/worst_case.hpp"

/// JSON forms of models, estimates, constraints and solver results. Readers
/// throw SchemaError whose pointer is relative to the document passed in,
/// prefixed by `at`.
namespace shiftbench::io {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

/// Fails unless `doc` is an object whose optional "schema_version" equals kSchemaVersion.
void check_schema_version(const json& doc, const std::string& at = "");

json to_json(const Eigen::VectorXd& v);
json to_json(const Eigen::MatrixXd& m);
Eigen::VectorXd vector_from_json(const json& j, const std::string& at, int expected_size = -1);
Eigen::MatrixXd matrix_from_json(const json& j, const std::string& at, int rows = -1, int cols = -1);

json to_json(const FamilySpec& family);
FamilySpec family_from_json(const json& j, const std::string& at = "");

json to_json(const EtaFn& eta);
EtaFn eta_from_json(const json& j, const std::string& at = "");

json to_json(const ShiftSpec& shift);
ShiftSpec shift_from_json(const json& j, const std::string& at = "");

/// {"variables": [...], "interventions": [...]}
json to_json(const ShiftModel& model);
ShiftModel model_from_json(const json& j, const std::string& at = "");

json to_json(const AuxiliaryConfig& config);
AuxiliaryConfig aux_from_json(const json& j, const std::string& at = "");

json to_json(const CurvatureEstimate& curv);
CurvatureEstimate curvature_from_json(const json& j, const std::string& at = "");

json to_json(const ConstraintSpec& cons);
/// Shape checks only; ConstraintSpec::validate applies the numeric ones.
ConstraintSpec constraint_from_json(const json& j, const std::string& at = "");

json to_json(const TrustRegionResult& result);

/// Typed field access with pointer-carrying errors.
class Reader {
public:
  Reader(const json& j, std::string at);

  const json& doc() const { return j_; }
  const std::string& at() const { return at_; }
  std::string path(const std::string& key) const { return at_ + "/" + key; }
  bool has(const std::string& key) const;
  const json& get(const std::string& key) const;

  std::string string(const std::string& key) const;
  std::string string(const std::string& key, const std::string& fallback) const;
  double number(const std::string& key) const;
  double number(const std::string& key, double fallback) const;
  long long integer(const std::string& key) const;
  long long integer(const std::string& key, long long fallback) const;
  std::uint64_t seed(const std::string& key, std::uint64_t fallback) const;
  bool boolean(const std::string& key, bool fallback) const;
  std::vector<std::string> strings(const std::string& key) const;
  std::vector<int> ints(const std::string& key) const;
  /// Rejects keys outside `allowed`.
  void only(std::initializer_list<const char*> allowed) const;

private:
  const json& j_;
  std::string at_;
};

} // namespace shiftbench::io
