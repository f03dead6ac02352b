#include "e2stn/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "e2stn/error.hpp"

namespace e2stn {

namespace {

double evaluate(const std::function<Tensor()>& loss) {
  double v = 0.0;
  try {
    v = loss().item();
  } catch (const NumericError& e) {
    throw NumericError(std::string("grad_check: loss not finite at perturbed point: ") + e.what());
  }
  if (!std::isfinite(v)) throw NumericError("grad_check: loss not finite at perturbed point");
  return v;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor()>& loss, std::vector<NamedTensor> params, double eps) {
  for (auto& p : params) {
    if (!p.tensor.requires_grad()) throw ConfigError("grad_check: parameter '" + p.name + "' does not require grad");
    p.tensor.zero_grad();
  }
  loss().backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    auto g = p.tensor.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(p.tensor.size(), 0.0);
  }

  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].tensor.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = evaluate(loss);
      values[i] = saved - eps;
      const double down = evaluate(loss);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      ++result.coordinates;
      if (err >= result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_parameter = params[k].name;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace e2stn
