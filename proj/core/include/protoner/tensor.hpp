#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace protoner {

using Vec = std::vector<double>;

// Dense row-major matrix of doubles. Parameters are kept in doubles but
// snapped to float32-representable values at init and after every optimizer
// step so checkpoints (32-bit floats on disk) round-trip bit-exactly.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const {
    return data.data() + static_cast<std::size_t>(r) * cols;
  }
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * cols + c];
  }
  std::span<const double> row_span(int r) const {
    return {row(r), static_cast<std::size_t>(cols)};
  }
  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

inline void snap_to_float(Matrix& m) {
  for (double& v : m.data) v = static_cast<double>(static_cast<float>(v));
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace protoner
