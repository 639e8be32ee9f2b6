#pragma once

// Dense f32 kernels shared by the model, grounding and guidance code.
// Every function here is pure: no globals, no hidden state.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "vga/errors.hpp"

namespace vga {

using Vector = std::vector<float>;

namespace tol {
inline constexpr double kNormEpsilon = 1e-12;    // sum_normalize degeneracy cut-off
inline constexpr double kLiveEpsilon = 1e-12;    // l0_fraction default
inline constexpr double kSoftmaxRowSum = 1e-6;
}  // namespace tol

// Row-major matrix with explicit shape. Shape always matches data().size().
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data has " + std::to_string(data_.size()) +
                       " elements, shape is " + std::to_string(rows_) + "x" +
                       std::to_string(cols_));
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  // Grows or shrinks the row count, keeping existing rows.
  void resize_rows(std::size_t rows) {
    rows_ = rows;
    data_.resize(rows_ * cols_);
  }
  void reserve_rows(std::size_t rows) { data_.reserve(rows * cols_); }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

inline bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

inline void require_finite(std::span<const float> v, const char* what) {
  if (!all_finite(v)) throw InvalidInput(std::string(what) + ": non-finite value");
}

// In-place numerically stable softmax of one row.
inline void softmax_inplace(std::span<float> row) {
  if (row.empty()) return;
  const float mx = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (float x : row) sum += std::exp(static_cast<double>(x) - mx);
  for (float& x : row) x = static_cast<float>(std::exp(static_cast<double>(x) - mx) / sum);
}

inline Matrix row_softmax(const Matrix& m) {
  require_finite(m.data(), "row_softmax");
  Matrix out = m;
  for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r));
  return out;
}

struct Normalized {
  Vector values;
  bool degenerate = false;
};

// Sum normalization. An input whose mass is below kNormEpsilon comes back
// uniform with `degenerate` set; callers decide what a degenerate result means.
inline Normalized sum_normalize(std::span<const float> v) {
  if (v.empty()) throw InvalidInput("sum_normalize: empty vector");
  require_finite(v, "sum_normalize");
  double sum = 0.0;
  for (float x : v) {
    if (x < 0.0f) throw InvalidInput("sum_normalize: negative entry");
    sum += x;
  }
  Normalized out;
  out.values.resize(v.size());
  if (sum < tol::kNormEpsilon) {
    std::fill(out.values.begin(), out.values.end(), static_cast<float>(1.0 / v.size()));
    out.degenerate = true;
    return out;
  }
  for (std::size_t i = 0; i < v.size(); ++i) out.values[i] = static_cast<float>(v[i] / sum);
  return out;
}

inline double dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

// Cosine similarity clamped to [0, 1]; a zero argument gives 0.
inline double cosine_sim_clamped(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_sim_clamped: length mismatch");
  require_finite(a, "cosine_sim_clamped");
  require_finite(b, "cosine_sim_clamped");
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot(a, b) / (na * nb), 0.0, 1.0);
}

// Fraction of entries with |x| > eps.
inline double l0_fraction(std::span<const float> v, double eps = tol::kLiveEpsilon) {
  if (v.empty()) return 0.0;
  const auto live = std::count_if(v.begin(), v.end(),
                                  [eps](float x) { return std::fabs(x) > eps; });
  return static_cast<double>(live) / static_cast<double>(v.size());
}

// out[j] = sum_i x[i] * w(i, j), w is (x.size() x out.size()).
inline void vec_mat(std::span<const float> x, const Matrix& w, std::span<float> out) {
  if (x.size() != w.rows() || out.size() != w.cols()) throw ShapeError("vec_mat: shape mismatch");
  std::fill(out.begin(), out.end(), 0.0f);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float xi = x[i];
    if (xi == 0.0f) continue;
    const auto wr = w.row(i);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += xi * wr[j];
  }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  Matrix out(a.rows(), b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) vec_mat(a.row(r), b, out.row(r));
  return out;
}

// Index of the maximum; ties resolve to the lowest index.
inline std::size_t argmax(std::span<const float> v) {
  if (v.empty()) throw InvalidInput("argmax: empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace vga
