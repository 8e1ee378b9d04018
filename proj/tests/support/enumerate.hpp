#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "shiftbench/shift_model.hpp"

namespace oracle {

/// Every configuration of an all-binary model, weighted by its probability
/// under eta (no shift), with loss(config) attached.
inline shiftbench::SampleTable enumerate_binary_model(const shiftbench::ShiftModel& model,
                                                      const std::function<double(std::span<const double>)>& loss)
{
  using namespace shiftbench;
  const int n = static_cast<int>(model.variables().size());
  SampleTable t(model.column_names());
  std::vector<double> weights, losses;
  std::vector<double> rec(model.row_width());
  for (unsigned c = 0; c < (1u << n); ++c) {
    for (int i = 0; i < n; ++i)
      rec[model.value_offset(i)] = (c >> i) & 1u;
    double p = 1.0;
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd z = model.parent_values(i, rec);
      const double q = 1.0 / (1.0 + std::exp(-model.eta(i, z)(0)));
      p *= rec[model.value_offset(i)] > 0.5 ? q : 1.0 - q;
    }
    t.append_row(rec);
    weights.push_back(p);
    losses.push_back(loss(rec));
  }
  t.set_weights(weights);
  t.set_loss(losses);
  return t;
}

/// Exact E_delta[loss] for an all-binary model by enumeration of shifted probabilities.
inline double enumerated_expectation(const shiftbench::ShiftModel& model, const Eigen::VectorXd& delta,
                                     const std::function<double(std::span<const double>)>& loss)
{
  const int n = static_cast<int>(model.variables().size());
  std::vector<double> rec(model.row_width());
  double e = 0.0;
  for (unsigned c = 0; c < (1u << n); ++c) {
    for (int i = 0; i < n; ++i)
      rec[model.value_offset(i)] = (c >> i) & 1u;
    double p = 1.0;
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd z = model.parent_values(i, rec);
      const double eta = model.block(i) ? model.apply_shift(i, z, delta)(0) : model.eta(i, z)(0);
      const double q = 1.0 / (1.0 + std::exp(-eta));
      p *= rec[model.value_offset(i)] > 0.5 ? q : 1.0 - q;
    }
    e += p * loss(rec);
  }
  return e;
}

} // namespace oracle
