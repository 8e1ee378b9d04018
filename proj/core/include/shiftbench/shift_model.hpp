#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "shiftbench/families.hpp"
#include "shiftbench/random.hpp"
#include "shiftbench/sample_table.hpp"

namespace shiftbench {

/// Map from parent values to a natural-parameter vector.
struct EtaFn {
  enum class Form { Constant, Linear, Tabular, Gated };

  Form form = Form::Constant;
  Eigen::VectorXd value;                  // Constant
  Eigen::VectorXd intercept;              // Linear
  Eigen::MatrixXd coefficients;           // Linear: dim_T x |parents|
  std::vector<Eigen::VectorXd> table;     // Tabular: one row per parent stratum
  std::string gate;                       // Gated: binary parent
  double dummy = 0.0;                     // Gated: value taken when gate == 0
  std::shared_ptr<const EtaFn> inner;     // Gated: eta when gate == 1

  static EtaFn constant(Eigen::VectorXd v);
  static EtaFn linear(Eigen::VectorXd intercept, Eigen::MatrixXd coefficients);
  static EtaFn tabular(std::vector<Eigen::VectorXd> rows);
  static EtaFn gated(std::string gate, double dummy, EtaFn inner);
};

/// Explicit guard bound for DomainGuarded. Without any, the family's
/// param_domain supplies the bounds.
struct GuardBound {
  int coord = 0;
  bool upper = true;
  double value = 0.0;
};

struct ShiftSpec {
  enum class Form { Constant, PerStratum, LinearInZ, Multiplicative, VarianceScaledMean, DomainGuarded };

  Form form = Form::Constant;
  /// Natural coordinates the shift adds to; empty means the family's free coords
  /// (for VarianceScaledMean: the mean block).
  std::vector<int> target_coords;
  /// LinearInZ feature expressions: "1", "Y", "1-Y", products with '*'.
  std::vector<std::string> features;
  std::shared_ptr<const ShiftSpec> inner;  // DomainGuarded
  double guard_epsilon = 1e-3;
  /// 0 selects the hard indicator; > 0 a sigmoid gate with this slope.
  double guard_temperature = 0.0;
  std::vector<GuardBound> bounds;

  static ShiftSpec constant(std::vector<int> coords = {});
  static ShiftSpec per_stratum(std::vector<int> coords = {});
  static ShiftSpec linear_in_z(std::vector<std::string> features, std::vector<int> coords = {});
  static ShiftSpec multiplicative(std::vector<int> coords = {});
  static ShiftSpec variance_scaled_mean();
  static ShiftSpec domain_guarded(ShiftSpec inner, double epsilon = 1e-3, double temperature = 0.0,
                                  std::vector<GuardBound> bounds = {});
};

struct VariableSpec {
  std::string name;
  FamilySpec family;
  std::vector<std::string> parents;
  EtaFn eta;
};

struct Intervention {
  std::string variable;
  ShiftSpec shift;
};

struct DeltaBlock {
  std::string variable;
  int var_index = 0;
  int offset = 0;
  int size = 0;
  std::vector<std::string> labels;
};

/// D1 is dim_T x d_delta; D2 holds one d_delta x d_delta matrix per natural
/// coordinate (empty when the form is linear in delta).
struct ShiftJacobians {
  Eigen::MatrixXd d1;
  std::vector<Eigen::MatrixXd> d2;
};

class ShiftForm;

/// Immutable factorized model with a global delta index.
class ShiftModel {
public:
  ShiftModel(std::vector<VariableSpec> variables, std::vector<Intervention> interventions);
  ~ShiftModel();
  ShiftModel(const ShiftModel&);
  ShiftModel& operator=(const ShiftModel&);
  ShiftModel(ShiftModel&&) noexcept;
  ShiftModel& operator=(ShiftModel&&) noexcept;

  const std::vector<VariableSpec>& variables() const { return vars_; }
  const std::vector<Intervention>& interventions() const { return interventions_; }
  const VariableSpec& variable(int i) const { return vars_[i]; }
  int variable_index(const std::string& name) const;
  const std::vector<int>& topological_order() const { return topo_; }
  const std::vector<int>& parent_indices(int var) const { return parent_idx_[var]; }

  int d_delta() const { return d_delta_; }
  const std::vector<DeltaBlock>& blocks() const { return blocks_; }
  /// Block of an intervened variable, or nullptr.
  const DeltaBlock* block(int var) const;
  std::vector<std::string> delta_labels() const;
  const ShiftSpec* shift(int var) const;

  /// Flattened record layout: variables in declaration order, value_dim each.
  int row_width() const { return row_width_; }
  int value_offset(int var) const { return offsets_[var]; }
  std::vector<std::string> column_names() const;

  Eigen::VectorXd parent_values(int var, std::span<const double> record) const;
  std::span<const double> value(int var, std::span<const double> record) const;
  /// True when a gated variable takes its dummy value at these parent values.
  bool gated_off(int var, const Eigen::VectorXd& z) const;
  Eigen::VectorXd eta(int var, const Eigen::VectorXd& z) const;

  int num_strata(int var) const;
  int stratum(int var, const Eigen::VectorXd& z) const;
  Eigen::VectorXd stratum_values(int var, int stratum) const;
  std::string stratum_label(int var, int stratum) const;

  /// s(z; delta_block) for an intervened variable given eta(z).
  Eigen::VectorXd shift_value(int var, const Eigen::VectorXd& z, const Eigen::VectorXd& eta,
                              const Eigen::VectorXd& delta_block) const;
  /// eta(z) + s(z; delta), checked against the family domain.
  Eigen::VectorXd apply_shift(int var, const Eigen::VectorXd& z, const Eigen::VectorXd& delta) const;
  Eigen::VectorXd apply_shift(const std::string& var, const Eigen::VectorXd& z,
                              const Eigen::VectorXd& delta) const;
  ShiftJacobians shift_jacobians(int var, const Eigen::VectorXd& z) const;
  /// Whether D2 can be nonzero for this variable's form.
  bool has_second_order(int var) const;

  /// Column indices of every model column in `table`.
  std::vector<int> bind(const SampleTable& table) const;
  void gather(const SampleTable& table, const std::vector<int>& binding, std::size_t row,
              std::span<double> record) const;

private:
  void validate_and_compile();

  std::vector<VariableSpec> vars_;
  std::vector<Intervention> interventions_;
  std::vector<std::vector<int>> parent_idx_;
  std::vector<int> topo_;
  std::vector<int> offsets_;
  int row_width_ = 0;
  std::vector<DeltaBlock> blocks_;
  std::vector<int> block_of_;  // per variable, -1 if not intervened
  std::vector<std::unique_ptr<ShiftForm>> forms_;  // per variable, null if not intervened
  int d_delta_ = 0;
};

/// log w_delta for one flattened record.
double log_density_ratio(const ShiftModel& model, const Eigen::VectorXd& delta,
                         std::span<const double> record);
double density_ratio(const ShiftModel& model, const Eigen::VectorXd& delta, std::span<const double> record);

/// Ancestral sampling at eta_delta. Columns follow column_names().
SampleTable sample_joint(const ShiftModel& model, const Eigen::VectorXd& delta, std::size_t n, Rng& rng);

/// Sample-averaged P_delta(W = 1) for a Bernoulli variable under an additive
/// scalar offset `offset` on its logit.
double shifted_marginal(const ShiftModel& model, const std::string& var, double offset,
                        const SampleTable& sample);

struct MarginalSolution {
  double delta = 0.0;
  double achieved = 0.0;
  /// Fractions of rows whose logit is +inf / -inf.
  double p_plus = 0.0;
  double p_minus = 0.0;
  int iterations = 0;
};

/// Monotone bisection on [-30, 30] for the offset that moves the
/// sample-averaged marginal of a Constant-shifted Bernoulli variable to target_p.
MarginalSolution solve_delta_for_marginal(const ShiftModel& model, const std::string& var, double target_p,
                                          const SampleTable& sample);

} // namespace shiftbench
