#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace meunet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Tensor;

// Receives d(loss)/d(output) and accumulates (+=) into the gradient buffers of
// the node inputs. A null entry means that input does not track gradients.
using BackwardFn =
    std::function<void(std::span<const double> grad_output, std::span<double* const> input_grads)>;

struct Node {
  std::string op;
  std::vector<Tensor> inputs;
  BackwardFn backward;
  bool consumed = false;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;  // leaves only; empty until first accumulation
  std::shared_ptr<Node> node;
};

/// Dense row-major array of doubles with an optional link into the
/// reverse-mode differentiation graph. Copies share storage, like a handle.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;
  std::span<const double> values() const;
  double item() const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Only leaves may be mutated in place (parameter updates, test fixtures).
  std::span<double> mutable_values();
  std::span<double> mutable_grad();

  const Node* node() const;
  Tensor detach() const;

  /// Populates gradients of every reachable leaf that requires grad, then
  /// frees the graph. Throws GraphError for non-scalar or consumed graphs.
  void backward() const;

  const TensorImpl* impl() const { return impl_.get(); }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  friend Tensor make_op_result(std::string_view op, Shape shape, std::vector<double> values,
                               std::vector<Tensor> inputs, BackwardFn backward);
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  const TensorImpl& checked() const;

  std::shared_ptr<TensorImpl> impl_;
};

/// Wraps an op output. The result joins the graph iff gradients are enabled
/// and at least one input requires grad; otherwise `backward` is dropped.
Tensor make_op_result(std::string_view op, Shape shape, std::vector<double> values,
                      std::vector<Tensor> inputs, BackwardFn backward);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class F>
auto no_grad(F&& computation) {
  NoGradGuard guard;
  return computation();
}

// ---------------------------------------------------------------------------
// Byte accounting

struct CensusEntry {
  std::string op;
  std::string tag;
  std::size_t elements = 0;
  std::size_t activation_bytes = 0;
  std::size_t gradient_bytes = 0;
  bool leaf = false;
};

/// Records every tensor produced by an op while a CensusScope is active,
/// including outputs produced under no-grad (gradient_bytes = 0).
class Census {
 public:
  explicit Census(std::size_t bytes_per_element = sizeof(double))
      : bytes_per_element_(bytes_per_element) {}

  void record(std::string_view op, std::size_t elements, bool with_grad, bool leaf = false);
  const std::vector<CensusEntry>& entries() const { return entries_; }
  std::size_t activation_bytes() const;
  std::size_t gradient_bytes() const;
  std::size_t total_bytes() const { return activation_bytes() + gradient_bytes(); }
  std::size_t bytes_per_element() const { return bytes_per_element_; }

 private:
  std::size_t bytes_per_element_;
  std::vector<CensusEntry> entries_;
};

class CensusScope {
 public:
  explicit CensusScope(Census& census);
  ~CensusScope();
  CensusScope(const CensusScope&) = delete;
  CensusScope& operator=(const CensusScope&) = delete;

 private:
  Census* previous_;
};

// Labels census entries recorded inside the scope ("std/enc1", ...).
class CensusTag {
 public:
  explicit CensusTag(std::string tag);
  ~CensusTag();
  CensusTag(const CensusTag&) = delete;
  CensusTag& operator=(const CensusTag&) = delete;
};

/// Walks the graph reachable from `root` and reports each distinct tensor it
/// retains: activation bytes, plus gradient bytes when backward will
/// allocate a gradient for it.
Census byte_census(const Tensor& root, std::size_t bytes_per_element = sizeof(double));

}  // namespace meunet
