#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "shiftbench/regression.hpp"
#include "shiftbench/shift_model.hpp"

namespace shiftbench {

struct AuxiliaryConfig {
  int poly_degree = 2;
  double ridge_lambda = 1e-3;
  /// Fit on even rows, average residual moments on odd rows.
  bool sample_split = false;
  /// Also regress stat coordinates whose D1 rows are identically zero.
  bool fit_unused_coords = false;
};

/// Fitted map z -> estimate of E[y | Z = z] for a vector target.
class ConditionalMean {
public:
  enum class Kind { StratumMeans, PolynomialRidge };

  static ConditionalMean fit(const ShiftModel& model, int var, const std::vector<Eigen::VectorXd>& z,
                             const Eigen::MatrixXd& y, std::span<const double> w, const AuxiliaryConfig& config);

  Kind kind() const { return kind_; }
  Eigen::VectorXd predict(const ShiftModel& model, int var, const Eigen::VectorXd& z) const;
  /// Per-output in-sample R^2.
  const Eigen::VectorXd& r_squared() const { return r2_; }

private:
  Kind kind_ = Kind::StratumMeans;
  std::vector<Eigen::VectorXd> strata_;
  PolynomialFeatures features_;
  RidgeRegression ridge_;
  Eigen::VectorXd r2_;
};

struct AuxiliaryRegressors {
  struct Entry {
    int var = 0;
    /// Stat coordinates regressed; residuals of the others are treated as 0
    /// (their D1 rows vanish).
    std::vector<int> coords;
    ConditionalMean mu_w;    // outputs follow `coords`
    ConditionalMean mu_ell;  // scalar
  };
  std::vector<Entry> entries;  // one per delta block, in block order
  std::string model_class;
  bool sample_split = false;
};

AuxiliaryRegressors fit_auxiliaries(const ShiftModel& model, const SampleTable& sample,
                                    const AuxiliaryConfig& config = {});

/// Per-row residual quantities for each delta block.
struct Residuals {
  std::vector<std::size_t> rows;  // sample rows averaged over
  Eigen::VectorXd weight;         // row weights (unit for plain samples)
  Eigen::VectorXd loss;
  struct Block {
    Eigen::VectorXd eps_ell;                // l - mu_ell(z)
    Eigen::MatrixXd u;                      // rows: (D1^T eps_T)^T
    std::vector<Eigen::MatrixXd> d2_eps;    // sum_c D2_c eps_c per row (empty if linear)
    Eigen::MatrixXd eps_t;                  // raw stat residuals over all dim_T coords
  };
  std::vector<Block> blocks;
};

Residuals compute_residuals(const ShiftModel& model, const SampleTable& sample, const AuxiliaryRegressors& aux);

struct CurvatureEstimate {
  double base_loss = 0.0;
  Eigen::VectorXd sg1;
  Eigen::MatrixXd sg2;
  std::size_t n = 0;
  std::vector<DeltaBlock> block_index;
  /// Largest |sg2 - sg2^T| entry before symmetrization.
  double asymmetry = 0.0;

  int d_delta() const { return static_cast<int>(sg1.size()); }
  std::vector<std::string> labels() const;
};

CurvatureEstimate estimate_curvature(const ShiftModel& model, const Residuals& res);
CurvatureEstimate estimate_curvature(const ShiftModel& model, const SampleTable& sample,
                                     const AuxiliaryRegressors& aux);

double taylor_estimate(const CurvatureEstimate& curv, const Eigen::VectorXd& delta);

struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Taylor estimate with the standard error of its per-row summands.
Estimate taylor_estimate_with_se(const Residuals& res, const Eigen::VectorXd& delta);

/// Importance-sampling objective over one sample. Distinct (parents, value)
/// tuples per shifted variable are evaluated once per delta.
class IsObjective {
public:
  IsObjective(const ShiftModel& model, const SampleTable& sample);

  Estimate estimate(const Eigen::VectorXd& delta) const;
  double operator()(const Eigen::VectorXd& delta) const { return estimate(delta).mean; }
  /// Per-row density ratios at delta.
  Eigen::VectorXd weights(const Eigen::VectorXd& delta) const;

private:
  struct Unique {
    Eigen::VectorXd z;
    Eigen::VectorXd eta;
    Eigen::VectorXd t;
    bool skip = false;  // gated off or infinite Bernoulli logit
  };
  struct PerVar {
    int var = 0;
    const DeltaBlock* block = nullptr;
    std::vector<Unique> unique;
    std::vector<int> row_key;
  };
  const ShiftModel* model_;
  std::vector<PerVar> vars_;
  Eigen::VectorXd loss_;
  Eigen::VectorXd row_weight_;
};

Estimate is_estimate(const ShiftModel& model, const SampleTable& sample, const Eigen::VectorXd& delta);

struct BoundConfig {
  std::size_t n = 100000;
  int grid_points = 11;
  std::uint64_t seed = 0;
  /// Draws a sample with a loss column from P_delta. Required.
  std::function<SampleTable(const Eigen::VectorXd& delta, std::size_t n, Rng& rng)> simulate;
};

struct BoundResult {
  double bound = 0.0;
  double argmax_t = 0.0;
  std::vector<double> t;
  std::vector<double> spectral_radius;
};

/// Grid estimate of the Taylor remainder bound for a single Constant shift.
/// Random numbers are common across t.
BoundResult taylor_error_bound(const ShiftModel& model, const CurvatureEstimate& curv, const Eigen::VectorXd& delta,
                               const BoundConfig& config);

} // namespace shiftbench
