#include "gsr/matrix.hpp"

namespace gsr {

Matrix matmul(const Matrix& a, const Matrix& b) {
  assert(a.cols == b.rows);
  Matrix out(a.rows, b.cols, 0.0);
  // ikj order keeps the inner loop contiguous in both b and out.
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = &a.data[static_cast<size_t>(i) * a.cols];
    double* orow = &out.data[static_cast<size_t>(i) * b.cols];
    for (int k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = &b.data[static_cast<size_t>(k) * b.cols];
      for (int j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
  return out;
}

}  // namespace gsr
