#include "hyperset/autodiff.hpp"

#include <cmath>

#include "hyperset/errors.hpp"

namespace hyperset {

Var Tape::leaf(Tensor value, bool requires_grad) {
  ensure_finite(value, "leaf");
  nodes_.push_back(Node{std::move(value), std::nullopt, requires_grad, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw ContractError("operands recorded on different tapes");
    needs = needs || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), std::nullopt, needs, needs ? std::move(backward) : nullptr});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(Var v, const Tensor& g) {
  Node& node = nodes_[v.id()];
  if (!node.requires_grad) return;
  if (g.numel() != node.value.numel()) {
    throw DimensionError("gradient " + shape_string(g.shape()) + " for value " +
                         shape_string(node.value.shape()));
  }
  if (!node.grad) {
    node.grad = g.shape() == node.value.shape() ? g : g.reshaped(node.value.shape());
    return;
  }
  auto dst = node.grad->data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::accumulate(Var v, Tensor&& g) {
  Node& node = nodes_[v.id()];
  if (!node.requires_grad) return;
  if (!node.grad && g.shape() == node.value.shape()) {
    node.grad = std::move(g);
    return;
  }
  accumulate(v, static_cast<const Tensor&>(g));
}

Tensor Tape::grad(Var v) const {
  const Node& node = nodes_[v.id()];
  return node.grad ? *node.grad : Tensor(node.value.shape());
}

void Tape::backward(Var root) {
  if (&root.tape() != this) throw ContractError("backward root recorded on another tape");
  if (nodes_[root.id()].value.numel() != 1) {
    throw ContractError("backward requires a scalar root, got " +
                        shape_string(nodes_[root.id()].value.shape()));
  }
  last_visits_ = 0;
  if (!nodes_[root.id()].requires_grad) return;
  accumulate(root, Tensor(nodes_[root.id()].value.shape(), 1.0));
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.grad || !node.backward) continue;
    ++last_visits_;
    // Rules only accumulate into inputs, which always have smaller ids.
    const Tensor& g = *node.grad;
    node.backward(*this, g, node.value);
  }
}

void Tape::zero_grad() {
  for (Node& node : nodes_) node.grad.reset();
}

namespace {

Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

}  // namespace

Var matmul(Var a, Var b, bool ta, bool tb) {
  Tape& t = a.tape();
  Tensor out = matmul(a.value(), b.value(), ta, tb);
  return t.record(std::move(out), {a, b}, [a, b, ta, tb](Tape& tp, const Tensor& g, const Tensor&) {
    const Tensor& av = tp.value(a);
    const Tensor& bv = tp.value(b);
    if (tp.requires_grad(a)) {
      if (!ta && !tb) tp.accumulate(a, matmul(g, bv, false, true));
      else if (ta && !tb) tp.accumulate(a, matmul(bv, g, false, true));
      else if (!ta && tb) tp.accumulate(a, matmul(g, bv, false, false));
      else tp.accumulate(a, matmul(bv, g, true, true));
    }
    if (tp.requires_grad(b)) {
      if (!ta && !tb) tp.accumulate(b, matmul(av, g, true, false));
      else if (ta && !tb) tp.accumulate(b, matmul(av, g, false, false));
      else if (!ta && tb) tp.accumulate(b, matmul(g, av, true, false));
      else tp.accumulate(b, matmul(g, av, true, true));
    }
  });
}

Var transpose(Var a) {
  return a.tape().record(transpose(a.value()), {a}, [a](Tape& tp, const Tensor& g, const Tensor&) {
    tp.accumulate(a, transpose(g));
  });
}

Var add(Var a, Var b) {
  return a.tape().record(add(a.value(), b.value()), {a, b},
                         [a, b](Tape& tp, const Tensor& g, const Tensor&) {
                           tp.accumulate(a, g);
                           tp.accumulate(b, g);
                         });
}

Var sub(Var a, Var b) {
  return a.tape().record(sub(a.value(), b.value()), {a, b},
                         [a, b](Tape& tp, const Tensor& g, const Tensor&) {
                           tp.accumulate(a, g);
                           if (tp.requires_grad(b)) tp.accumulate(b, scale(g, -1.0));
                         });
}

Var mul(Var a, Var b) {
  return a.tape().record(mul(a.value(), b.value()), {a, b},
                         [a, b](Tape& tp, const Tensor& g, const Tensor&) {
                           if (tp.requires_grad(a)) tp.accumulate(a, mul(g, tp.value(b)));
                           if (tp.requires_grad(b)) tp.accumulate(b, mul(g, tp.value(a)));
                         });
}

Var scale(Var a, double c) {
  return a.tape().record(scale(a.value(), c), {a}, [a, c](Tape& tp, const Tensor& g, const Tensor&) {
    tp.accumulate(a, scale(g, c));
  });
}

Var add_scalar(Var a, double c) {
  return a.tape().record(add_scalar(a.value(), c), {a},
                         [a](Tape& tp, const Tensor& g, const Tensor&) { tp.accumulate(a, g); });
}

Var relu(Var a) {
  return a.tape().record(relu(a.value()), {a}, [a](Tape& tp, const Tensor& g, const Tensor&) {
    const Tensor& x = tp.value(a);
    Tensor dx(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) dx[i] = x[i] > 0.0 ? g[i] : 0.0;
    tp.accumulate(a, std::move(dx));
  });
}

Var gelu(Var a) {
  return a.tape().record(gelu(a.value()), {a}, [a](Tape& tp, const Tensor& g, const Tensor&) {
    const Tensor& x = tp.value(a);
    Tensor dx(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) dx[i] = g[i] * gelu_derivative(x[i]);
    tp.accumulate(a, std::move(dx));
  });
}

Var sigmoid(Var a) {
  return a.tape().record(sigmoid(a.value()), {a}, [a](Tape& tp, const Tensor& g, const Tensor& y) {
    Tensor dx(y.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) dx[i] = g[i] * y[i] * (1.0 - y[i]);
    tp.accumulate(a, std::move(dx));
  });
}

Var apply_map(Var a, UnaryFn f, UnaryFn df, const char* op) {
  return a.tape().record(apply_map(a.value(), f, op), {a}, [a, df](Tape& tp, const Tensor& g, const Tensor&) {
    const Tensor& x = tp.value(a);
    Tensor dx(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) dx[i] = g[i] * df(x[i]);
    tp.accumulate(a, std::move(dx));
  });
}

Var softmax(Var a, Axis axis) {
  return a.tape().record(softmax(a.value(), axis), {a},
                         [a, axis](Tape& tp, const Tensor& g, const Tensor& y) {
                           const std::size_t r = y.rows();
                           const std::size_t c = y.cols();
                           Tensor dx(y.shape());
                           if (axis == Axis::kCols) {
                             for (std::size_t j = 0; j < c; ++j) {
                               double dot = 0.0;
                               for (std::size_t i = 0; i < r; ++i) dot += g[i * c + j] * y[i * c + j];
                               for (std::size_t i = 0; i < r; ++i) {
                                 dx[i * c + j] = y[i * c + j] * (g[i * c + j] - dot);
                               }
                             }
                           } else {
                             for (std::size_t i = 0; i < r; ++i) {
                               double dot = 0.0;
                               for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
                               for (std::size_t j = 0; j < c; ++j) {
                                 dx[i * c + j] = y[i * c + j] * (g[i * c + j] - dot);
                               }
                             }
                           }
                           tp.accumulate(a, std::move(dx));
                         });
}

Var log_softmax(Var a, Axis axis) {
  return a.tape().record(log_softmax(a.value(), axis), {a},
                         [a, axis](Tape& tp, const Tensor& g, const Tensor& y) {
                           const std::size_t r = y.rows();
                           const std::size_t c = y.cols();
                           Tensor dx(y.shape());
                           if (axis == Axis::kCols) {
                             for (std::size_t j = 0; j < c; ++j) {
                               double gs = 0.0;
                               for (std::size_t i = 0; i < r; ++i) gs += g[i * c + j];
                               for (std::size_t i = 0; i < r; ++i) {
                                 dx[i * c + j] = g[i * c + j] - std::exp(y[i * c + j]) * gs;
                               }
                             }
                           } else {
                             for (std::size_t i = 0; i < r; ++i) {
                               double gs = 0.0;
                               for (std::size_t j = 0; j < c; ++j) gs += g[i * c + j];
                               for (std::size_t j = 0; j < c; ++j) {
                                 dx[i * c + j] = g[i * c + j] - std::exp(y[i * c + j]) * gs;
                               }
                             }
                           }
                           tp.accumulate(a, std::move(dx));
                         });
}

Var logsumexp(Var a, Axis axis) {
  return a.tape().record(logsumexp(a.value(), axis), {a},
                         [a, axis](Tape& tp, const Tensor& g, const Tensor& lse) {
                           const Tensor& x = tp.value(a);
                           const std::size_t r = x.rows();
                           const std::size_t c = x.cols();
                           Tensor dx(x.shape());
                           for (std::size_t i = 0; i < r; ++i) {
                             for (std::size_t j = 0; j < c; ++j) {
                               const std::size_t k = axis == Axis::kCols ? j : i;
                               dx[i * c + j] = std::exp(x[i * c + j] - lse[k]) * g[k];
                             }
                           }
                           tp.accumulate(a, std::move(dx));
                         });
}

Var rmsnorm(Var z, std::optional<Var> gain) {
  Tape& t = z.tape();
  Tensor out = gain ? rmsnorm(z.value(), &gain->value()) : rmsnorm(z.value());
  auto rule = [z, gain](Tape& tp, const Tensor& g, const Tensor&) {
    const Tensor& zv = tp.value(z);
    const std::size_t p = zv.rows();
    const std::size_t n = zv.cols();
    const Tensor* gv = gain ? &tp.value(*gain) : nullptr;
    Tensor dz(zv.shape());
    Tensor dgain = gv ? Tensor(gv->shape()) : Tensor();
    std::vector<double> u(p);
    std::vector<double> du(p);
    for (std::size_t j = 0; j < n; ++j) {
      double ms = 0.0;
      for (std::size_t i = 0; i < p; ++i) ms += zv[i * n + j] * zv[i * n + j];
      const double r = 1.0 / std::sqrt(ms / static_cast<double>(p) + kRmsNormEps);
      double dot = 0.0;
      for (std::size_t i = 0; i < p; ++i) {
        u[i] = zv[i * n + j] * r;
        du[i] = g[i * n + j] * (gv ? (*gv)[i] : 1.0);
        if (gv) dgain[i] += g[i * n + j] * u[i];
        dot += du[i] * u[i];
      }
      dot /= static_cast<double>(p);
      for (std::size_t i = 0; i < p; ++i) dz[i * n + j] = r * (du[i] - u[i] * dot);
    }
    tp.accumulate(z, std::move(dz));
    if (gain) tp.accumulate(*gain, std::move(dgain));
  };
  if (gain) return t.record(std::move(out), {z, *gain}, std::move(rule));
  return t.record(std::move(out), {z}, std::move(rule));
}

Var add_colvec(Var a, Var v) {
  return a.tape().record(add_colvec(a.value(), v.value()), {a, v},
                         [a, v](Tape& tp, const Tensor& g, const Tensor&) {
                           tp.accumulate(a, g);
                           if (tp.requires_grad(v)) tp.accumulate(v, row_sums(g));
                         });
}

Var mul_colvec(Var a, Var v) {
  return a.tape().record(mul_colvec(a.value(), v.value()), {a, v},
                         [a, v](Tape& tp, const Tensor& g, const Tensor&) {
                           const Tensor& av = tp.value(a);
                           const Tensor& vv = tp.value(v);
                           if (tp.requires_grad(a)) tp.accumulate(a, mul_colvec(g, vv));
                           if (tp.requires_grad(v)) {
                             Tensor dv(vv.shape());
                             const std::size_t c = av.cols();
                             for (std::size_t i = 0; i < av.rows(); ++i) {
                               for (std::size_t j = 0; j < c; ++j) dv[i] += g[i * c + j] * av[i * c + j];
                             }
                             tp.accumulate(v, std::move(dv));
                           }
                         });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  return a.tape().record(slice_rows(a.value(), begin, end), {a},
                         [a, begin](Tape& tp, const Tensor& g, const Tensor&) {
                           Tensor dx = zeros_like(tp.value(a));
                           std::copy(g.data().begin(), g.data().end(),
                                     dx.data().begin() + static_cast<std::ptrdiff_t>(begin * g.cols()));
                           tp.accumulate(a, std::move(dx));
                         });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  return a.tape().record(slice_cols(a.value(), begin, end), {a},
                         [a, begin](Tape& tp, const Tensor& g, const Tensor&) {
                           Tensor dx = zeros_like(tp.value(a));
                           for (std::size_t i = 0; i < g.rows(); ++i) {
                             for (std::size_t j = 0; j < g.cols(); ++j) dx(i, begin + j) = g(i, j);
                           }
                           tp.accumulate(a, std::move(dx));
                         });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_rows of nothing");
  std::vector<Tensor> values;
  values.reserve(parts.size());
  for (const Var& p : parts) values.push_back(p.value());
  return parts.front().tape().record(
      concat_rows(values), std::span<const Var>(parts), [parts](Tape& tp, const Tensor& g, const Tensor&) {
        std::size_t offset = 0;
        for (const Var& p : parts) {
          const std::size_t r = tp.value(p).rows();
          if (tp.requires_grad(p)) tp.accumulate(p, slice_rows(g, offset, offset + r));
          offset += r;
        }
      });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols of nothing");
  std::vector<Tensor> values;
  values.reserve(parts.size());
  for (const Var& p : parts) values.push_back(p.value());
  return parts.front().tape().record(
      concat_cols(values), std::span<const Var>(parts), [parts](Tape& tp, const Tensor& g, const Tensor&) {
        std::size_t offset = 0;
        for (const Var& p : parts) {
          const std::size_t c = tp.value(p).cols();
          if (tp.requires_grad(p)) tp.accumulate(p, slice_cols(g, offset, offset + c));
          offset += c;
        }
      });
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return table.tape().record(gather_rows(table.value(), ids), {table},
                             [table, idv](Tape& tp, const Tensor& g, const Tensor&) {
                               Tensor dt = zeros_like(tp.value(table));
                               const std::size_t d = g.cols();
                               for (std::size_t k = 0; k < idv.size(); ++k) {
                                 for (std::size_t j = 0; j < d; ++j) dt[idv[k] * d + j] += g[k * d + j];
                               }
                               tp.accumulate(table, std::move(dt));
                             });
}

Var sum(Var a) {
  return a.tape().record(Tensor::scalar(sum(a.value())), {a},
                         [a](Tape& tp, const Tensor& g, const Tensor&) {
                           tp.accumulate(a, Tensor(tp.value(a).shape(), g.item()));
                         });
}

Var mean(Var a) {
  return a.tape().record(Tensor::scalar(mean(a.value())), {a},
                         [a](Tape& tp, const Tensor& g, const Tensor&) {
                           const Tensor& x = tp.value(a);
                           tp.accumulate(a, Tensor(x.shape(), g.item() / static_cast<double>(x.numel())));
                         });
}

Var weighted_pick(Var a, std::span<const std::size_t> index, std::span<const double> weights) {
  const Tensor& x = a.value();
  if (index.size() != x.rows() || weights.size() != x.rows()) {
    throw DimensionError("weighted_pick: " + std::to_string(index.size()) + " indices for " +
                         shape_string(x.shape()));
  }
  double s = 0.0;
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= x.cols()) throw ContractError("weighted_pick: column index out of range");
    s += weights[k] * x(k, index[k]);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> w(weights.begin(), weights.end());
  return a.tape().record(Tensor::scalar(s), {a}, [a, idx, w](Tape& tp, const Tensor& g, const Tensor&) {
    Tensor dx = zeros_like(tp.value(a));
    for (std::size_t k = 0; k < idx.size(); ++k) dx(k, idx[k]) = w[k] * g.item();
    tp.accumulate(a, std::move(dx));
  });
}

Tensor finite_diff(const ScalarFn& f, const Tensor& x, double h) {
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

Tensor autodiff_grad(const std::function<Var(Var)>& f, const Tensor& x) {
  Tape tape;
  Var xv = tape.leaf(x, true);
  Var out = f(xv);
  tape.backward(out);
  return tape.grad(xv);
}

}  // namespace hyperset
