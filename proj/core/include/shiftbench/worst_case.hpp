#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "shiftbench/estimation.hpp"

namespace shiftbench {

struct ConstraintSpec {
  enum class Form { Ball, Quadratic, Box };

  Form form = Form::Ball;
  /// Ball radius, or right-hand side of delta^T A delta + b^T delta <= lambda.
  double lambda = 1.0;
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  /// Box bounds; lower == upper fixes a coordinate.
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  std::string description;

  static ConstraintSpec ball(double lambda);
  static ConstraintSpec quadratic(Eigen::MatrixXd A, Eigen::VectorXd b, double lambda);
  static ConstraintSpec box(Eigen::VectorXd lower, Eigen::VectorXd upper);

  /// Throws DomainError / UnsupportedConstraintError / ContractError.
  void validate(int d) const;
  bool contains(const Eigen::VectorXd& delta, double tol = 1e-12) const;
  /// Euclidean projection for Ball and Box; for Quadratic, radial scaling
  /// toward the ellipsoid center (feasible, not the exact projection).
  Eigen::VectorXd project(const Eigen::VectorXd& delta) const;
};

struct TrustRegionResult {
  Eigen::VectorXd delta_star;
  double base_loss = 0.0;
  double predicted_loss = 0.0;
  double multiplier = 0.0;
  bool on_boundary = false;
  /// Stationarity residual of the Lagrangian in original coordinates.
  double kkt_residual = 0.0;
  /// |multiplier * slack|.
  double complementary_slackness = 0.0;
  /// Smallest eigenvalue of multiplier * A - sg2 (A = I for the ball).
  double dual_min_eigenvalue = 0.0;
  bool hard_case = false;
  /// Box results come from a search and are not certified.
  bool approximate = false;
  int iterations = 0;

  double gain() const { return predicted_loss - base_loss; }
};

/// Global maximizer of base + g^T d + 1/2 d^T H d over ||d|| <= radius.
TrustRegionResult trust_region_max(const Eigen::VectorXd& g, const Eigen::MatrixXd& H, double radius,
                                   double base = 0.0);
TrustRegionResult trust_region_max(const CurvatureEstimate& curv, double lambda);

/// Maximizer over {d : d^T A d + b^T d <= lambda} with A positive definite.
TrustRegionResult quad_constrained_max(const Eigen::VectorXd& g, const Eigen::MatrixXd& H,
                                       const ConstraintSpec& cons, double base = 0.0);
TrustRegionResult quad_constrained_max(const CurvatureEstimate& curv, const ConstraintSpec& cons);

struct BoxSearchConfig {
  /// Exact face enumeration up to this many free coordinates.
  int max_exact_dim = 10;
  int starts = 20;
  int iterations = 2000;
  std::uint64_t seed = 0;
};

/// Maximizer of the quadratic surrogate over a box. Exact for small d,
/// otherwise projected multi-start ascent flagged approximate.
TrustRegionResult box_constrained_max(const Eigen::VectorXd& g, const Eigen::MatrixXd& H,
                                      const ConstraintSpec& cons, double base = 0.0,
                                      const BoxSearchConfig& config = {});

/// Dispatch on constraint form.
TrustRegionResult surrogate_max(const CurvatureEstimate& curv, const ConstraintSpec& cons,
                                const BoxSearchConfig& box_config = {});

struct IsSearchConfig {
  int starts = 20;
  int max_evals_per_start = 2000;
  /// Stop a start when the simplex size falls below this fraction of the constraint scale.
  double tolerance = 1e-4;
  double penalty = 100.0;
  std::uint64_t seed = 0;
};

struct IsSearchResult {
  Eigen::VectorXd delta;
  double value = 0.0;
  long evals = 0;
  double wall_seconds = 0.0;
};

/// Multi-start Nelder-Mead on the importance-sampling estimate, evaluated at
/// the projection onto the constraint set with a squared-distance penalty.
IsSearchResult is_objective_max(const ShiftModel& model, const SampleTable& sample, const ConstraintSpec& cons,
                                const IsSearchConfig& config = {});
IsSearchResult is_objective_max(const IsObjective& objective, int d_delta, const ConstraintSpec& cons,
                                const IsSearchConfig& config = {});

struct Subpop2x2Result {
  double q11 = 0.0;
  double q10 = 0.0;
  double worst_loss = 0.0;
  std::array<double, 2> q11_range{};
  std::array<double, 2> q10_range{};
  /// Every optimal corner (q11, q10); more than one under ties.
  std::vector<std::array<double, 2>> corners;
};

/// Worst-case conditional (1 - alpha)-subpopulation shift of P(O | Y) for
/// binary O, Y. mu[o][y] is E[loss | O = o, Y = y]; p11 = P(O=1|Y=1),
/// p10 = P(O=1|Y=0).
Subpop2x2Result subpop_worst_case_2x2(double p11, double p10, const std::array<std::array<double, 2>, 2>& mu,
                                      double p_y1, double alpha);

} // namespace shiftbench
