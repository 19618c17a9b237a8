#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace gsr {

/// Dense row-major matrix of doubles. Vectors are 1xN or Nx1 matrices.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}

  static Matrix zeros(int r, int c) { return Matrix(r, c, 0.0); }

  double& operator()(int r, int c) {
    assert(r >= 0 && r < rows && c >= 0 && c < cols);
    return data[static_cast<size_t>(r) * cols + c];
  }
  double operator()(int r, int c) const {
    assert(r >= 0 && r < rows && c >= 0 && c < cols);
    return data[static_cast<size_t>(r) * cols + c];
  }

  int size() const { return rows * cols; }
  bool same_shape(const Matrix& o) const {
    return rows == o.rows && cols == o.cols;
  }
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

}  // namespace gsr
