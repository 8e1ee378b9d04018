#pragma once

#include <vector>

#include "shiftbench/shift_model.hpp"

namespace testmodels {

inline Eigen::VectorXd v1(double x) { return Eigen::VectorXd::Constant(1, x); }

inline Eigen::MatrixXd row(std::initializer_list<double> xs)
{
  Eigen::MatrixXd m(1, xs.size());
  int i = 0;
  for (double x : xs)
    m(0, i++) = x;
  return m;
}

/// Age -> Disease -> Order -> Result with Order shifted by `shift`.
inline shiftbench::ShiftModel lab_model(const shiftbench::ShiftSpec& shift)
{
  using namespace shiftbench;
  std::vector<VariableSpec> vars;
  vars.push_back({"A", FamilySpec::gaussian_known_var(0.5), {}, EtaFn::constant(v1(0.0))});
  vars.push_back({"Y", FamilySpec::bernoulli_logit(), {"A"}, EtaFn::linear(v1(-1.0), row({0.5}))});
  vars.push_back({"O", FamilySpec::bernoulli_logit(), {"A", "Y"}, EtaFn::linear(v1(-1.0), row({0.5, 2.0}))});
  vars.push_back({"L", FamilySpec::gaussian_known_var(1.0), {"O", "Y"},
                  EtaFn::gated("O", 0.0, EtaFn::linear(v1(-0.5), row({0.0, 1.0})))});
  return ShiftModel(vars, {{"O", shift}});
}

} // namespace testmodels
