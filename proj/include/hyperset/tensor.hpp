#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hyperset {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major array of doubles. Rank 0 (shape {}) is a scalar, rank 1 is
// treated as a column vector by the matrix accessors, rank 2 is a matrix.
// Plain value type: copies are deep.
class Tensor {
 public:
  Tensor() : shape_{}, data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }

  // Value of a single-element tensor.
  double item() const;
  Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Selects which direction a reduction or normalization runs along.
// kCols: each column is reduced/normalized independently (output 1 x n).
// kRows: each row is reduced/normalized independently (output m x 1).
enum class Axis { kCols, kRows };

inline constexpr double kRmsNormEps = 1e-6;

// Throws NumericError naming `op` if any entry is NaN or Inf.
void ensure_finite(const Tensor& t, const char* op);

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false,
              bool transpose_b = false);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

using UnaryFn = double (*)(double);
// Elementwise f(a); `op` names the op in error messages.
Tensor apply_map(const Tensor& a, UnaryFn f, const char* op);
Tensor softmax(const Tensor& a, Axis axis);
Tensor log_softmax(const Tensor& a, Axis axis);
Tensor logsumexp(const Tensor& a, Axis axis);
Tensor rmsnorm(const Tensor& z, const Tensor* gain = nullptr);
Tensor add_colvec(const Tensor& a, const Tensor& v);
Tensor mul_colvec(const Tensor& a, const Tensor& v);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);
double sum(const Tensor& a);
double mean(const Tensor& a);
Tensor row_sums(const Tensor& a);
Tensor col_sums(const Tensor& a);

double gelu_scalar(double x);
double gelu_derivative(double x);
double sigmoid_scalar(double x);

double max_abs(const Tensor& a);
double frobenius_norm(const Tensor& a);
// ||a - b||_2 / max(||b||_2, floor)
double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-12);

}  // namespace hyperset
