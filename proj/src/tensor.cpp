#include "meunet/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>
#include <utility>

namespace meunet {

namespace {

thread_local int no_grad_depth = 0;
thread_local Census* active_census = nullptr;
thread_local std::vector<std::string> census_tags;

std::string current_tag() {
  std::string tag;
  for (const auto& t : census_tags) {
    if (!tag.empty()) tag += '/';
    tag += t;
  }
  return tag;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " elements, got " +
                     std::to_string(values.size()));
  }
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape));
  }
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
  impl_->requires_grad = requires_grad;
  if (active_census) active_census->record("leaf", impl_->values.size(), requires_grad, true);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor(Shape{}, {value}, requires_grad); }

const TensorImpl& Tensor::checked() const {
  if (!impl_) throw GraphError("tensor: use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::size_t Tensor::size(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked().values.size(); }

std::span<const double> Tensor::values() const { return checked().values; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return impl_->values[0];
}

bool Tensor::requires_grad() const { return checked().requires_grad; }

bool Tensor::has_grad() const { return !checked().grad.empty(); }

std::span<const double> Tensor::grad() const { return checked().grad; }

void Tensor::zero_grad() {
  auto& g = impl_->grad;
  std::fill(g.begin(), g.end(), 0.0);
}

std::span<double> Tensor::mutable_values() {
  checked();
  if (impl_->node) throw GraphError("mutable_values: only leaf tensors may be modified in place");
  return impl_->values;
}

std::span<double> Tensor::mutable_grad() {
  checked();
  if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
  return impl_->grad;
}

const Node* Tensor::node() const { return checked().node.get(); }

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape();
  impl->values = impl_->values;
  impl->requires_grad = false;
  if (active_census) active_census->record("detach", impl->values.size(), false);
  return Tensor(std::move(impl));
}

Tensor make_op_result(std::string_view op, Shape shape, std::vector<double> values,
                      std::vector<Tensor> inputs, BackwardFn backward) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError(std::string(op) + ": produced " + std::to_string(values.size()) +
                     " values for shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  const bool track = grad_enabled() &&
                     std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (track) {
    impl->requires_grad = true;
    auto node = std::make_shared<Node>();
    node->op = std::string(op);
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    impl->node = std::move(node);
  }
  if (active_census) active_census->record(op, impl->values.size(), track);
  return Tensor(std::move(impl));
}

void Tensor::backward() const {
  const auto& root = checked();
  if (root.values.size() != 1) {
    throw GraphError("backward: loss must have exactly one element, got shape " + shape_str(root.shape));
  }
  if (!root.requires_grad) throw GraphError("backward: loss does not require grad");
  if (!root.node) {
    impl_->grad.resize(1, 0.0);
    impl_->grad[0] += 1.0;
    return;
  }

  // Iterative post-order DFS over graph nodes; reversed it is a topological order.
  std::vector<TensorImpl*> order;
  std::unordered_set<const TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    if (t->node->consumed) {
      throw GraphError("backward: graph already consumed by a previous backward (op " + t->node->op + ")");
    }
    auto& ins = t->node->inputs;
    if (next < ins.size()) {
      auto* child = const_cast<TensorImpl*>(ins[next].impl());
      ++next;
      if (child->node && child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(t);
      stack.pop_back();
    }
  }

  std::unordered_map<const TensorImpl*, std::vector<double>> grads;
  grads[impl_.get()] = {1.0};
  std::vector<double*> input_grads;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = *it;
    Node& node = *t->node;
    auto found = grads.find(t);
    std::vector<double> grad_out =
        found != grads.end() ? std::move(found->second) : std::vector<double>(t->values.size(), 0.0);
    if (found != grads.end()) grads.erase(found);

    input_grads.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      auto* in = const_cast<TensorImpl*>(node.inputs[i].impl());
      if (!in || !in->requires_grad) continue;
      if (in->node) {
        auto& buf = grads[in];
        if (buf.empty()) buf.assign(in->values.size(), 0.0);
        input_grads[i] = buf.data();
      } else {
        if (in->grad.empty()) in->grad.assign(in->values.size(), 0.0);
        input_grads[i] = in->grad.data();
      }
    }
    if (node.backward) node.backward(grad_out, input_grads);
    node.consumed = true;
    node.backward = nullptr;
  }
  // Inputs own the upstream tensors that `order` points into; release last.
  for (auto* t : order) t->node->inputs.clear();
}

bool grad_enabled() { return no_grad_depth == 0; }

NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }

void Census::record(std::string_view op, std::size_t elements, bool with_grad, bool leaf) {
  CensusEntry e;
  e.op = std::string(op);
  e.tag = current_tag();
  e.elements = elements;
  e.activation_bytes = elements * bytes_per_element_;
  e.gradient_bytes = with_grad ? e.activation_bytes : 0;
  e.leaf = leaf;
  entries_.push_back(std::move(e));
}

std::size_t Census::activation_bytes() const {
  std::size_t s = 0;
  for (const auto& e : entries_) s += e.activation_bytes;
  return s;
}

std::size_t Census::gradient_bytes() const {
  std::size_t s = 0;
  for (const auto& e : entries_) s += e.gradient_bytes;
  return s;
}

CensusScope::CensusScope(Census& census) : previous_(active_census) { active_census = &census; }
CensusScope::~CensusScope() { active_census = previous_; }

CensusTag::CensusTag(std::string tag) { census_tags.push_back(std::move(tag)); }
CensusTag::~CensusTag() { census_tags.pop_back(); }

Census byte_census(const Tensor& root, std::size_t bytes_per_element) {
  Census census(bytes_per_element);
  if (!root.defined()) return census;
  std::unordered_set<const TensorImpl*> seen;
  std::vector<const TensorImpl*> stack{root.impl()};
  seen.insert(root.impl());
  while (!stack.empty()) {
    const TensorImpl* t = stack.back();
    stack.pop_back();
    const bool leaf = !t->node;
    census.record(leaf ? "leaf" : t->node->op, t->values.size(), t->requires_grad, leaf);
    if (leaf) continue;
    for (const auto& in : t->node->inputs) {
      if (in.defined() && seen.insert(in.impl()).second) stack.push_back(in.impl());
    }
  }
  return census;
}

}  // namespace meunet
