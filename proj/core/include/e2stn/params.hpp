#pragma once

#include <string>
#include <vector>

#include "e2stn/random.hpp"
#include "e2stn/tensor.hpp"

namespace e2stn {

struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

/// Ordered registry of named leaf tensors. Insertion order is the
/// serialization order, so checkpoints are byte-stable.
class ParamStore {
 public:
  Tensor add(std::string name, Tensor value, bool trainable = true);

  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  const std::vector<Parameter>& entries() const noexcept { return params_; }
  std::vector<Parameter>& entries() noexcept { return params_; }

  std::vector<Tensor> trainable() const;
  std::size_t scalar_count() const;
  /// Number of trainable tensors whose name starts with `prefix`.
  std::size_t count_with_prefix(const std::string& prefix) const;

  void zero_grad();

 private:
  std::vector<Parameter> params_;
};

// Initializers used by the model builders.
Tensor xavier_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor zeros_param(const Shape& shape);
Tensor ones_param(const Shape& shape);

}  // namespace e2stn
