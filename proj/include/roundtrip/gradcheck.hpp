#pragma once

#include <functional>
#include <string>

#include "roundtrip/tape.hpp"

namespace roundtrip::ad {

/// Builds a scalar on the tape of its argument.
using ScalarFn = std::function<Var(Var)>;
/// Builds a scalar loss from parameters bound on the given tape.
using LossFn = std::function<Var(Tape&)>;

struct GradCheckReport {
  Real max_rel_error = 0;
  std::size_t worst_index = 0;  // flat coordinate over all checked entries
  std::string worst_name;
  std::size_t checked = 0;
};

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
Real grad_check(const ScalarFn& f, const Tensor& point, Real h = Real(1e-5));
GradCheckReport grad_check_report(const ScalarFn& f, const Tensor& point, Real h = Real(1e-5));

/// Same measure over every coordinate of every parameter in `store`. `stride`
/// > 1 checks every stride-th coordinate of each parameter.
GradCheckReport grad_check_params(const LossFn& loss, ParameterStore& store, Real h = Real(1e-5),
                                  std::size_t stride = 1);

}  // namespace roundtrip::ad
