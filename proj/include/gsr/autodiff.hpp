#pragma once

#include <functional>
#include <vector>

#include "gsr/matrix.hpp"

namespace gsr::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid as long as the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  int rows() const { return value().rows; }
  int cols() const { return value().cols; }
};

/// Reverse-mode tape over matrices. Nodes are created in topological order;
/// backward() replays them in reverse.
class Tape {
 public:
  Var leaf(Matrix value);

  /// Runs reverse accumulation from a 1x1 scalar node.
  void backward(Var scalar_output);

  const Matrix& value(int id) const { return nodes_[id].value; }
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
  Matrix& grad_mut(int id) { return nodes_[id].grad; }

  int push(Matrix value, std::function<void(Tape&, int)> backprop);
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Tape&, int)> backprop;  // null for leaves
  };
  std::vector<Node> nodes_;
};

// Elementwise / scalar
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double s);
Var add_const(Var a, double c);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var reciprocal(Var a);
Var swish(Var a);

// Linear algebra
Var matmul(Var a, Var b);
Var transpose(Var a);

// Broadcasting: v is 1xC, u is Rx1
Var add_rowvec(Var a, Var v);
Var mul_rowvec(Var a, Var v);
Var add_colvec(Var a, Var u);
Var mul_colvec(Var a, Var u);
Var tile_rows(Var v, int r);  // 1xC -> RxC

// Reductions
Var sum_rows(Var a);  // RxC -> 1xC
Var sum_cols(Var a);  // RxC -> Rx1
Var sum_all(Var a);   // RxC -> 1x1

// Softmax
Var softmax_rows(Var a);  // normalize across each row
Var softmax_cols(Var a);  // normalize down each column

// Shape
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(Var a, int start, int n);
Var reshape(Var a, int r, int c);

// Convolution support (time runs down the rows)
Var unfold_time(Var a, int k, int dilation, int pad);  // TxC -> Tx(k*C)
Var sum_fold(Var a, int k);                            // Tx(k*C) -> TxC
Var unfold2d(Var a, int kt, int kf, int stride_t, int stride_f, int pad_t,
             int pad_f);  // TxF -> (T'*F')x(kt*kf)

/// Relative-position shift: a is Tx(2T-1) with column r holding the score for
/// key offset r-(T-1); output[t][s] = a[t][t-s+T-1].
Var rel_shift(Var a);

/// Elementwise select: mask entries are 1 (take a) or 0 (take b). The mask is
/// a constant; gradients flow through the chosen branch only.
Var select(const Matrix& mask, Var a, Var b);

// Composite helpers
Var linear(Var x, Var w, Var b);                         // x*w + b (b is 1xC)
Var layer_norm(Var x, Var gamma, Var beta, double eps);  // per row
Var norm_over_time(Var x, Var gamma, Var beta,
                   double eps);  // per column (time axis)
Var glu_cols(Var x);             // Tx2C -> TxC
Var l2_normalize_rows(Var x, double eps);
Var mean_rows(Var a);  // RxC -> 1xC
Var mean_cols(Var a);  // RxC -> Rx1

}  // namespace gsr::ad
