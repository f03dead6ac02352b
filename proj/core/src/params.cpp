#include "e2stn/params.hpp"

#include <algorithm>
#include <cmath>

#include "e2stn/error.hpp"

namespace e2stn {

Tensor ParamStore::add(std::string name, Tensor value, bool trainable) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  value.set_requires_grad(trainable);
  params_.push_back({std::move(name), value, trainable});
  return value;
}

bool ParamStore::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name == name; });
}

const Tensor& ParamStore::get(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.tensor;
  throw ConfigError("unknown parameter '" + name + "'");
}

std::vector<Tensor> ParamStore::trainable() const {
  std::vector<Tensor> out;
  for (const auto& p : params_)
    if (p.trainable) out.push_back(p.tensor);
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

std::size_t ParamStore::count_with_prefix(const std::string& prefix) const {
  return static_cast<std::size_t>(std::count_if(params_.begin(), params_.end(), [&](const Parameter& p) {
    return p.trainable && p.name.rfind(prefix, 0) == 0;
  }));
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Tensor xavier_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return Tensor::from(shape, std::move(v));
}

Tensor zeros_param(const Shape& shape) { return Tensor::zeros(shape); }
Tensor ones_param(const Shape& shape) { return Tensor::full(shape, 1.0); }

}  // namespace e2stn
