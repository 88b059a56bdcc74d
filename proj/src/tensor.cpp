#include "hyperset/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hyperset/errors.hpp"

namespace hyperset {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

template <class Fn>
Tensor map_unary(const Tensor& a, const char* op, Fn fn) {
  Tensor out(a.shape());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = fn(src[i]);
  ensure_finite(out, op);
  return out;
}

template <class Fn>
Tensor map_binary(const Tensor& a, const Tensor& b, const char* op, Fn fn) {
  require_same_shape(a, b, op);
  Tensor out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = fn(x[i], y[i]);
  ensure_finite(out, op);
  return out;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto e : shape_) {
    if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_string(shape_));
  }
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto e : shape_) {
    if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_string(shape_));
  }
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor out(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
  return out;
}

std::size_t Tensor::rows() const {
  switch (shape_.size()) {
    case 0: return 1;
    case 1:
    case 2: return shape_[0];
    default: throw DimensionError("matrix view of rank-" + std::to_string(shape_.size()) + " tensor");
  }
}

std::size_t Tensor::cols() const {
  switch (shape_.size()) {
    case 0:
    case 1: return 1;
    case 2: return shape_[1];
    default: throw DimensionError("matrix view of rank-" + std::to_string(shape_.size()) + " tensor");
  }
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ContractError("item() on non-scalar tensor " + shape_string(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void ensure_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite value in result of shape " +
                         shape_string(t.shape()));
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  const std::size_t m = transpose_a ? a.cols() : a.rows();
  const std::size_t ka = transpose_a ? a.rows() : a.cols();
  const std::size_t kb = transpose_b ? b.cols() : b.rows();
  const std::size_t n = transpose_b ? b.rows() : b.cols();
  if (a.rank() != 2 || b.rank() != 2 || ka != kb) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) +
                         (transpose_a ? "^T" : "") + " * " + shape_string(b.shape()) +
                         (transpose_b ? "^T" : ""));
  }
  Tensor out(Shape{m, n});
  MutMap c(out.data().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  auto am = as_matrix(a);
  auto bm = as_matrix(b);
  if (!transpose_a && !transpose_b) {
    c.noalias() = am * bm;
  } else if (transpose_a && !transpose_b) {
    c.noalias() = am.transpose() * bm;
  } else if (!transpose_a && transpose_b) {
    c.noalias() = am * bm.transpose();
  } else {
    c.noalias() = am.transpose() * bm.transpose();
  }
  ensure_finite(out, "matmul");
  return out;
}

Tensor transpose(const Tensor& a) {
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out(j, i) = a(i, j);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return map_binary(a, b, "add", [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return map_binary(a, b, "sub", [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return map_binary(a, b, "mul", [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& a, double c) {
  return map_unary(a, "scale", [c](double x) { return c * x; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return map_unary(a, "add_scalar", [c](double x) { return x + c; });
}

Tensor relu(const Tensor& a) {
  return map_unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; });
}

double gelu_scalar(double x) {
  const double inner = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(inner));
}

double gelu_derivative(double x) {
  const double inner = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(inner);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor gelu(const Tensor& a) { return map_unary(a, "gelu", gelu_scalar); }

Tensor sigmoid(const Tensor& a) { return map_unary(a, "sigmoid", sigmoid_scalar); }

Tensor apply_map(const Tensor& a, UnaryFn f, const char* op) { return map_unary(a, op, f); }

Tensor softmax(const Tensor& a, Axis axis) {
  ensure_finite(a, "softmax input");
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  Tensor out(a.shape());
  if (axis == Axis::kCols) {
    for (std::size_t j = 0; j < c; ++j) {
      double mx = a(0, j);
      for (std::size_t i = 1; i < r; ++i) mx = std::max(mx, a(i, j));
      double s = 0.0;
      for (std::size_t i = 0; i < r; ++i) {
        const double e = std::exp(a(i, j) - mx);
        out.data()[i * c + j] = e;
        s += e;
      }
      for (std::size_t i = 0; i < r; ++i) out.data()[i * c + j] /= s;
    }
  } else {
    for (std::size_t i = 0; i < r; ++i) {
      const double* row = a.data().data() + i * c;
      double* dst = out.data().data() + i * c;
      const double mx = *std::max_element(row, row + c);
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        dst[j] = std::exp(row[j] - mx);
        s += dst[j];
      }
      for (std::size_t j = 0; j < c; ++j) dst[j] /= s;
    }
  }
  return out;
}

Tensor logsumexp(const Tensor& a, Axis axis) {
  ensure_finite(a, "logsumexp input");
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  if (axis == Axis::kCols) {
    Tensor out(Shape{1, c});
    for (std::size_t j = 0; j < c; ++j) {
      double mx = a(0, j);
      for (std::size_t i = 1; i < r; ++i) mx = std::max(mx, a(i, j));
      double s = 0.0;
      for (std::size_t i = 0; i < r; ++i) s += std::exp(a(i, j) - mx);
      out[j] = mx + std::log(s);
    }
    return out;
  }
  Tensor out(Shape{r, 1});
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = a.data().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    out[i] = mx + std::log(s);
  }
  return out;
}

Tensor log_softmax(const Tensor& a, Axis axis) {
  const Tensor lse = logsumexp(a, axis);
  Tensor out(a.shape());
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      out.data()[i * c + j] = a(i, j) - (axis == Axis::kCols ? lse[j] : lse[i]);
    }
  }
  return out;
}

Tensor rmsnorm(const Tensor& z, const Tensor* gain) {
  const std::size_t p = z.rows();
  const std::size_t n = z.cols();
  if (gain && gain->numel() != p) {
    throw DimensionError("rmsnorm: gain of length " + std::to_string(gain->numel()) +
                         " for " + std::to_string(p) + " rows");
  }
  Tensor out(z.shape());
  for (std::size_t j = 0; j < n; ++j) {
    double ms = 0.0;
    for (std::size_t i = 0; i < p; ++i) ms += z(i, j) * z(i, j);
    const double inv = 1.0 / std::sqrt(ms / static_cast<double>(p) + kRmsNormEps);
    for (std::size_t i = 0; i < p; ++i) {
      out.data()[i * n + j] = z(i, j) * inv * (gain ? (*gain)[i] : 1.0);
    }
  }
  ensure_finite(out, "rmsnorm");
  return out;
}

Tensor add_colvec(const Tensor& a, const Tensor& v) {
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  if (v.numel() != r) {
    throw DimensionError("add_colvec: " + shape_string(a.shape()) + " + " + shape_string(v.shape()));
  }
  Tensor out(a.shape());
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out.data()[i * c + j] = a(i, j) + v[i];
  }
  ensure_finite(out, "add_colvec");
  return out;
}

Tensor mul_colvec(const Tensor& a, const Tensor& v) {
  const std::size_t r = a.rows();
  const std::size_t c = a.cols();
  if (v.numel() != r) {
    throw DimensionError("mul_colvec: " + shape_string(a.shape()) + " * " + shape_string(v.shape()));
  }
  Tensor out(a.shape());
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out.data()[i * c + j] = a(i, j) * v[i];
  }
  ensure_finite(out, "mul_colvec");
  return out;
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin >= end || end > a.rows()) {
    throw DimensionError("slice_rows [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") of " + shape_string(a.shape()));
  }
  const std::size_t c = a.cols();
  std::vector<double> data(a.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
                           a.data().begin() + static_cast<std::ptrdiff_t>(end * c));
  return Tensor(Shape{end - begin, c}, std::move(data));
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin >= end || end > a.cols()) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") of " + shape_string(a.shape()));
  }
  const std::size_t r = a.rows();
  const std::size_t w = end - begin;
  Tensor out(Shape{r, w});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < w; ++j) out(i, j) = a(i, begin + j);
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows of nothing");
  const std::size_t c = parts.front().cols();
  std::size_t r = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) throw DimensionError("concat_rows: column counts differ");
    r += p.rows();
  }
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return Tensor(Shape{r, c}, std::move(data));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols of nothing");
  const std::size_t r = parts.front().rows();
  std::size_t c = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw DimensionError("concat_cols: row counts differ");
    c += p.cols();
  }
  Tensor out(Shape{r, c});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < p.cols(); ++j) out(i, offset + j) = p(i, j);
    }
    offset += p.cols();
  }
  return out;
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  const std::size_t v = table.rows();
  const std::size_t d = table.cols();
  if (ids.empty()) throw ContractError("gather_rows: empty id list");
  Tensor out(Shape{ids.size(), d});
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] >= v) {
      throw ContractError("gather_rows: id " + std::to_string(ids[k]) + " out of range [0," +
                          std::to_string(v) + ")");
    }
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[k] * d), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(k * d));
  }
  return out;
}

double sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s;
}

double mean(const Tensor& a) { return sum(a) / static_cast<double>(a.numel()); }

Tensor row_sums(const Tensor& a) {
  Tensor out(Shape{a.rows(), 1});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out[i] += a(i, j);
  }
  return out;
}

Tensor col_sums(const Tensor& a) {
  Tensor out(Shape{1, a.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out[j] += a(i, j);
  }
  return out;
}

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

double frobenius_norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

double relative_error(const Tensor& a, const Tensor& b, double floor) {
  require_same_shape(a, b, "relative_error");
  double diff = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(diff) / std::max(frobenius_norm(b), floor);
}

}  // namespace hyperset
