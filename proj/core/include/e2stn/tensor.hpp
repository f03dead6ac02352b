#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace e2stn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape) noexcept;
std::string to_string(const Shape& shape);

namespace detail {

struct Node;
using BackwardFn = std::function<void(const Node& out)>;

// One vertex of the define-by-run graph. Parents are kept alive by the
// child, so dropping the root tensor frees the whole graph.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
  const char* op = "leaf";

  bool is_leaf() const noexcept { return parents.empty(); }
  // Lazily allocates a zeroed gradient buffer.
  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major f64 array that records the operations producing it.
///
/// A Tensor is a cheap handle: copies share the same node. Values of
/// non-leaf tensors never change after creation; leaves (parameters) can
/// be updated in place between graph constructions.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(node_); }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  /// Size of `axis`; negative values count from the back.
  std::size_t dim(int axis) const;
  std::size_t size() const { return data().size(); }

  std::span<const double> data() const;
  /// Writable view of a leaf's values. Throws for non-leaf tensors.
  std::span<double> mutable_data();
  /// Gradient after backward(); empty span if none has been accumulated.
  std::span<const double> grad() const;

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  void zero_grad();
  const char* op_name() const;

  /// Reverse-mode sweep from a single-element tensor. Leaf gradients
  /// accumulate across calls; interior gradients are recomputed.
  void backward() const;

  /// Same values, no history, no gradient.
  Tensor detach() const;

  detail::Node& node() const;
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  /// Records an op result. Throws NumericError on non-finite output.
  static Tensor make_result(Shape shape, std::vector<double> value, const char* op,
                            std::initializer_list<Tensor> parents,
                            detail::BackwardFn backward);
  static Tensor make_result(Shape shape, std::vector<double> value, const char* op,
                            const std::vector<Tensor>& parents, detail::BackwardFn backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;
};

}  // namespace e2stn
