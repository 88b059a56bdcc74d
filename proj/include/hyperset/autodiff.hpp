#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "hyperset/tensor.hpp"

namespace hyperset {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Append-only record of primitive operations. Nodes are stored in creation
// order, which is a topological order, so backward() is a single reverse pass.
// A tape belongs to one thread.
class Tape {
 public:
  // grad_out is dL/d(output); output is the node's own forward value.
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out, const Tensor& output)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Records an op result. The node requires grad iff any input does; the
  // backward rule is dropped otherwise.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  // Adds g into the gradient of v. No-op when v does not require grad.
  void accumulate(Var v, const Tensor& g);
  void accumulate(Var v, Tensor&& g);

  bool has_grad(Var v) const { return nodes_[v.id()].grad.has_value(); }
  // Gradient of the last backward root w.r.t. v; zeros if nothing reached v.
  Tensor grad(Var v) const;

  // Reverse-mode sweep from a scalar root. Throws ContractError otherwise.
  void backward(Var root);
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }
  std::size_t last_backward_visits() const { return last_visits_; }

 private:
  struct Node {
    Tensor value;
    std::optional<Tensor> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::size_t last_visits_ = 0;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }
inline bool Var::requires_grad() const { return tape_->requires_grad(*this); }

Var matmul(Var a, Var b, bool transpose_a = false, bool transpose_b = false);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var relu(Var a);
Var gelu(Var a);
Var sigmoid(Var a);
// Elementwise f with derivative df supplied by the caller.
Var apply_map(Var a, UnaryFn f, UnaryFn df, const char* op);
Var softmax(Var a, Axis axis);
Var log_softmax(Var a, Axis axis);
Var logsumexp(Var a, Axis axis);
Var rmsnorm(Var z, std::optional<Var> gain = std::nullopt);
Var add_colvec(Var a, Var v);
Var mul_colvec(Var a, Var v);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var gather_rows(Var table, std::span<const std::size_t> ids);
Var sum(Var a);
Var mean(Var a);
// sum_k weights[k] * a(k, index[k]) for an a with one row per entry.
Var weighted_pick(Var a, std::span<const std::size_t> index, std::span<const double> weights);

using ScalarFn = std::function<double(const Tensor&)>;

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
Tensor finite_diff(const ScalarFn& f, const Tensor& x, double h = 1e-5);

// Convenience: builds a tape, evaluates f on a grad-requiring leaf for x and
// returns df/dx.
Tensor autodiff_grad(const std::function<Var(Var)>& f, const Tensor& x);

}  // namespace hyperset
