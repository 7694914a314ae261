#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "mixseg/errors.hpp"
#include "mixseg/rng.hpp"

namespace mixseg {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
struct Tensor;

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

// Reverse-mode autodiff node. Forward results own their values; backprop
// closures pull the node's grad and accumulate into the parents' grads.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  std::vector<T> grad;  // sized lazily; same length as data once touched

  std::vector<TensorPtr<T>> parents;
  std::function<void(Tensor<T>&)> backprop;
  const char* op = "";

  Tensor(Shape s, std::vector<T> d, bool rg) : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
    if (static_cast<std::int64_t>(data.size()) != mixseg::numel(shape)) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t dim(std::size_t i) const { return shape[i]; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }

  void zero_grad() {
    if (grad.empty()) return;
    std::fill(grad.begin(), grad.end(), T(0));
  }

  void accumulate_grad(const std::vector<T>& g) {
    ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
  }

  T item() const {
    if (numel() != 1) throw ContractError("item() requires a single-element tensor, got " + shape_str(shape));
    return data[0];
  }
};

namespace detail {
inline thread_local int no_grad_depth = 0;
inline thread_local SeedHasher* gate_trace = nullptr;
}

// While alive, newly created tensors record no graph edges (evaluation mode).
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

// Records the discrete decisions (relu sign pattern, pooling argmax picks)
// of every forward evaluated while the guard is alive. Two evaluations with
// equal digests lie on the same smooth piece of the function, which is what
// a central-difference comparison requires.
class GateTrace {
 public:
  GateTrace() : prev_(detail::gate_trace) { detail::gate_trace = &hasher_; }
  ~GateTrace() { detail::gate_trace = prev_; }
  GateTrace(const GateTrace&) = delete;
  GateTrace& operator=(const GateTrace&) = delete;
  std::uint64_t digest() const { return hasher_.finish(); }

 private:
  SeedHasher hasher_;
  SeedHasher* prev_;
};

inline void trace_gate(bool open) {
  if (detail::gate_trace) detail::gate_trace->mix(static_cast<int>(open));
}

inline void trace_gate_index(std::int64_t index) {
  if (detail::gate_trace) detail::gate_trace->mix(index);
}

template <typename T>
TensorPtr<T> make_tensor(Shape shape, std::vector<T> data, bool requires_grad = false) {
  return std::make_shared<Tensor<T>>(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
TensorPtr<T> zeros(const Shape& shape, bool requires_grad = false) {
  return make_tensor<T>(shape, std::vector<T>(static_cast<std::size_t>(numel(shape)), T(0)), requires_grad);
}

template <typename T>
TensorPtr<T> full(const Shape& shape, T value, bool requires_grad = false) {
  return make_tensor<T>(shape, std::vector<T>(static_cast<std::size_t>(numel(shape)), value), requires_grad);
}

template <typename T>
TensorPtr<T> randn(const Shape& shape, Rng& rng, T stddev = T(1), bool requires_grad = false) {
  std::vector<T> d(static_cast<std::size_t>(numel(shape)));
  for (auto& v : d) v = static_cast<T>(rng.next_normal()) * stddev;
  return make_tensor<T>(shape, std::move(d), requires_grad);
}

// Wires a freshly computed result into the graph. Skipped entirely when no
// parent needs gradients or a NoGradGuard is active, so evaluation passes
// carry no graph.
template <typename T>
void attach(const TensorPtr<T>& out, std::vector<TensorPtr<T>> parents, const char* op,
            std::function<void(Tensor<T>&)> backprop) {
  bool any = false;
  for (const auto& p : parents) {
    if (p && p->requires_grad) any = true;
  }
  if (!any || !grad_enabled()) {
    out->requires_grad = false;
    return;
  }
  out->requires_grad = true;
  out->parents = std::move(parents);
  out->op = op;
  out->backprop = std::move(backprop);
}

// Reverse-mode sweep from a scalar loss. Populates .grad on every reachable
// tensor with requires_grad; repeated calls accumulate. The graph edges are
// released afterwards unless retain_graph is set.
template <typename T>
void backward(const TensorPtr<T>& loss, bool retain_graph = false) {
  if (!loss) throw ContractError("backward called on null tensor");
  if (loss->numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss->shape));
  }
  if (!loss->requires_grad) return;

  // Iterative post-order topological sort.
  std::vector<Tensor<T>*> order;
  std::unordered_set<Tensor<T>*> visited;
  std::vector<std::pair<Tensor<T>*, std::size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->parents.size()) {
      Tensor<T>* child = node->parents[next_child].get();
      ++next_child;
      if (child && child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior nodes start each sweep from zero; only leaves accumulate
  // across repeated backward calls.
  for (Tensor<T>* node : order) {
    if (node->backprop) node->zero_grad();
  }
  loss->ensure_grad();
  loss->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor<T>* node = *it;
    if (node->backprop) node->backprop(*node);
  }
  if (!retain_graph) {
    for (Tensor<T>* node : order) {
      node->backprop = nullptr;
      node->parents.clear();
    }
  }
}

}  // namespace mixseg
