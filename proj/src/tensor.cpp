#include "fcca/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace fcca {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t trailing(const std::vector<std::size_t>& shape) {
  if (shape.empty()) return 1;
  if (shape.size() == 1) return shape[0];
  return std::accumulate(shape.begin() + 1, shape.end(), std::size_t{1}, std::multiplies<>());
}

// Zero-row batches are legal; zero-width features are not.
void check_shape(const std::vector<std::size_t>& shape) {
  for (std::size_t i = 0; i < shape.size(); ++i) {
    const bool batch_axis = i == 0 && shape.size() > 1;
    if (shape[i] == 0 && !batch_axis) {
      throw ShapeError("tensor dimensions must be positive: " + shape_string(shape));
    }
  }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  values_.assign(product(shape_), fill);
  cols_ = trailing(shape_);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  check_shape(shape_);
  if (product(shape_) != values_.size()) {
    throw ShapeError("tensor of shape " + shape_string(shape_) + " cannot hold " +
                     std::to_string(values_.size()) + " values");
  }
  cols_ = trailing(shape_);
}

std::size_t Tensor::rows() const noexcept {
  if (shape_.empty()) return 0;
  return shape_.size() == 1 ? 1 : shape_[0];
}

std::size_t Tensor::cols() const noexcept { return shape_.empty() ? 0 : cols_; }

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor slice_cols(const Tensor& m, std::size_t begin, std::size_t width) {
  if (begin + width > m.cols()) throw ShapeError("column slice out of range");
  Tensor out = Tensor::matrix(m.rows(), width);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto src = m.row(r).subspan(begin, width);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_cols row mismatch: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  Tensor out = Tensor::matrix(a.rows(), a.cols() + b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto dst = out.row(r);
    std::copy(a.row(r).begin(), a.row(r).end(), dst.begin());
    std::copy(b.row(r).begin(), b.row(r).end(), dst.begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return out;
}

Tensor gather_rows(const Tensor& m, std::span<const std::size_t> indices) {
  Tensor out = Tensor::matrix(indices.size(), m.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= m.rows()) throw ShapeError("row index out of range");
    auto src = m.row(indices[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

Tensor row_mean(const Tensor& m) {
  Tensor out({m.cols()});
  if (m.rows() == 0) return out;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto src = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) out[c] += src[c];
  }
  for (std::size_t c = 0; c < m.cols(); ++c) out[c] /= static_cast<double>(m.rows());
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace fcca
