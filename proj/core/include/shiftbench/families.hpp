#pragma once

#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "shiftbench/random.hpp"

namespace shiftbench {

enum class FamilyKind { BernoulliLogit, Categorical, GaussianKnownVar, GaussianFull, Poisson, Gamma };

/// Open interval (lower, upper) on one natural coordinate.
struct Interval {
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
  bool contains(double x) const { return x > lower && x < upper; }
};

class FamilySpec {
public:
  static FamilySpec bernoulli_logit();
  /// Values are 1..k. The last natural coordinate is pinned to 0.
  static FamilySpec categorical(int k);
  /// T(w) = w / sigma, eta = mu / sigma.
  static FamilySpec gaussian_known_var(double sigma);
  /// T(w) = (w, vec(w w^T)), eta = (Sigma^-1 mu, vec(-Sigma^-1 / 2)).
  static FamilySpec gaussian_full(int d);
  static FamilySpec poisson();
  /// T(w) = (log w, w), alpha = eta_1 + 1, beta = -eta_2.
  static FamilySpec gamma();

  FamilyKind kind() const { return kind_; }
  int dim_t() const;
  int value_dim() const;
  int categories() const { return k_; }
  double sigma() const { return sigma_; }
  int dim() const { return d_; }
  bool is_discrete() const;
  /// Number of distinct values for finite discrete families (Bernoulli 2,
  /// Categorical k), 0 otherwise.
  int cardinality() const;
  /// Per-coordinate open intervals. GaussianFull additionally requires the
  /// symmetric part of the second block to be negative definite.
  std::vector<Interval> param_domain() const;
  /// Natural coordinates a shift may target (all but the pinned Categorical logit).
  std::vector<int> free_coords() const;
  std::string name() const;

  bool operator==(const FamilySpec&) const = default;

private:
  FamilyKind kind_ = FamilyKind::BernoulliLogit;
  int k_ = 0;
  double sigma_ = 1.0;
  int d_ = 1;
};

bool in_domain(const FamilySpec& family, const Eigen::VectorXd& eta);
/// Throws DomainError naming `variable` when eta is outside the domain.
void check_domain(const FamilySpec& family, const Eigen::VectorXd& eta, std::string_view variable = {});
/// Throws DomainError naming `variable` when w is outside the support.
void check_support(const FamilySpec& family, std::span<const double> w, std::string_view variable = {});

Eigen::VectorXd sufficient_stat(const FamilySpec& family, std::span<const double> w,
                                std::string_view variable = {});
double log_partition(const FamilySpec& family, const Eigen::VectorXd& eta);
Eigen::VectorXd mean_stat(const FamilySpec& family, const Eigen::VectorXd& eta);
Eigen::MatrixXd var_stat(const FamilySpec& family, const Eigen::VectorXd& eta);
double log_base_measure(const FamilySpec& family, std::span<const double> w);
double log_density(const FamilySpec& family, const Eigen::VectorXd& eta, std::span<const double> w);
Eigen::VectorXd sample(const FamilySpec& family, const Eigen::VectorXd& eta, Rng& rng);

/// Bernoulli sampling cap on |eta|.
inline constexpr double kBernoulliEtaCap = 30.0;

double sigmoid(double x);
double softplus(double x);

} // namespace shiftbench
