#pragma once

#include <functional>
#include <string>
#include <vector>

#include "e2stn/tensor.hpp"

namespace e2stn {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences with step `eps`, coordinate by coordinate:
///   |analytic - numeric| / max(1, |analytic|, |numeric|).
/// `loss` must rebuild its graph from the current leaf values on each call.
/// Throws NumericError if `loss` is non-finite at a perturbed point.
GradCheckResult grad_check(const std::function<Tensor()>& loss, std::vector<NamedTensor> params,
                           double eps = 1e-5);

}  // namespace e2stn
