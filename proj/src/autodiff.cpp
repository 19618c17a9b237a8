#include "gsr/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace gsr::ad {

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

Matrix& acc(Tape& t, int id) { return t.grad_mut(id); }

}  // namespace

const Matrix& Var::value() const { return tape->value(id); }

Var Tape::leaf(Matrix value) {
  return {this, push(std::move(value), nullptr)};
}

int Tape::push(Matrix value, std::function<void(Tape&, int)> backprop) {
  nodes_.push_back(Node{std::move(value), Matrix(), std::move(backprop)});
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::backward(Var scalar_output) {
  const Matrix& out = scalar_output.value();
  if (out.rows != 1 || out.cols != 1)
    throw std::invalid_argument("backward: output must be 1x1");
  for (auto& n : nodes_) n.grad = Matrix::zeros(n.value.rows, n.value.cols);
  nodes_[scalar_output.id].grad(0, 0) = 1.0;
  for (int i = scalar_output.id; i >= 0; --i) {
    if (nodes_[i].backprop) nodes_[i].backprop(*this, i);
  }
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  Matrix out = a.value();
  for (int i = 0; i < out.size(); ++i) out.data[i] += b.value().data[i];
  int ia = a.id, ib = b.id;
  int id = a.tape->push(std::move(out), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad_mut(self);
    Matrix& ga = acc(t, ia);
    Matrix& gb = acc(t, ib);
    for (int i = 0; i < g.size(); ++i) {
      ga.data[i] += g.data[i];
      gb.data[i] += g.data[i];
    }
  });
  return {a.tape, id};
}

Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  Matrix out = a.value();
  for (int i = 0; i < out.size(); ++i) out.data[i] -= b.value().data[i];
  int ia = a.id, ib = b.id;
  int id = a.tape->push(std::move(out), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad_mut(self);
    Matrix& ga = acc(t, ia);
    Matrix& gb = acc(t, ib);
    for (int i = 0; i < g.size(); ++i) {
      ga.data[i] += g.data[i];
      gb.data[i] -= g.data[i];
    }
  });
  return {a.tape, id};
}

Var mul(Var a, Var b) {
  check_same_shape(a, b, "mul");
  Matrix out = a.value();
  for (int i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
  int ia = a.id, ib = b.id;
  int id = a.tape->push(std::move(out), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad_mut(self);
    const Matrix& av = t.value(ia);
    const Matrix& bv = t.value(ib);
    Matrix& ga = acc(t, ia);
    Matrix& gb = acc(t, ib);
    for (int i = 0; i < g.size(); ++i) {
      ga.data[i] += g.data[i] * bv.data[i];
      gb.data[i] += g.data[i] * av.data[i];
    }
  });
  return {a.tape, id};
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double s) {
  Matrix out = a.value();
  for (auto& v : out.data) v *= s;
  int ia = a.id;
  int id = a.tape->push(std::move(out), [ia, s](Tape& t, int self) {
    const Matrix& g = t.grad_mut(self);
    Matrix& ga = acc(t, ia);
    for (int i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * s;
  });
  return {a.tape, id};
}

Var add_const(Var a, double c) {
  Matrix out = a.value();
  for (auto& v : out.data) v += c;
  int ia = a.id;
  int id = a.tape->push(std::move(out), [ia](Tape& t, int self) {
    const Matrix& g = t.grad_mut(self);
    Matrix& ga = acc(t, ia);
    for (int i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
  });
  return {a.tape, id};
}

namespace {

// Unary op whose derivative is a function of the output value.
template <typename F, typename DF>
Var unary_from_output(Var a, F f, DF df) {
  Matrix out = a.value();
  for (auto& v : out.data) v = f(v);
  int ia = a.id;
  int id = a.tape->push(std::move(out), [ia, df](Tape& t, int self) {
    const Matrix& g = t.grad_mut(self);
    const Matrix& y = t.value(self);
    Matrix& ga = acc(t, ia);
    for (int i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * df(y.data[i]);
  });
  return {a.tape, id};
}

// Unary op whose derivative is a function of the input value.
template <typename F, typename DF>
Var unary_from_input(Var a, F f, DF df) {
  Matrix out = a.value();
  for (auto& v : out.data) v = f(v);
  int ia = a.id;
  int id = a.tape->push(std::move(out), [ia, df](Tape& t, int self) {
    const Matrix& g = t.grad_mut(self);
    const Matrix& x = t.value(ia);
    Matrix& ga = acc(t, ia);
    for (int i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * df(x.data[i]);
  });
  return {a.tape, id};
}

}  // namespace

Var tanh(Var a) {
  return unary_from_output(
      a, [](double x) { return std::tanh(x); },
      [](double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary_from_output(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary_from_input(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary_from_output(
      a, [](double x) { return std::exp(x); }, [](double y) { return y; });
}

Var log(Var a) {
  return unary_from_input(
      a, [](double x) { return std::log(x); },
      [](double x) { return 1.0 / x; });
}

Var sqrt(Var a) {
  return unary_from_output(
      a, [](double x) { return std::sqrt(x); },
      [](double y) { return 0.5 / y; });
}

Var reciprocal(Var a) {
  return unary_from_output(
      a, [](double x) { return 1.0 / x; }, [](double y) { return -y * y; });
}

Var swish(Var a) {
  return unary_from_input(
      a,
      [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s + x * s * (1.0 - s);
      });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions differ");
  Matrix out = gsr::matmul(a.value(), b.value());
  int ia = a.id, ib = b.id;
  int id = a.tape->push(std::move(out), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad_mut(self);
    const Matrix& av = t.value(ia);
    const Matrix& bv = t.value(ib);
    Matrix da = gsr::matmul(g, gsr::transpose(bv));
    Matrix db = gsr::matmul(gsr::transpose(av), g);
    Matrix& ga = acc(t, ia);
    Matrix& gb = acc(t, ib);
    for (int i = 0; i < da.size(); ++i) ga.data[i] += da.data[i];
    for (int i = 0; i < db.size(); ++i) gb.data[i] += db.data[i];
  });
  return {a.tape, id};
}

Var transpose(Var a) {
  Matrix out = gsr::transpose(a.value());
  int ia = a.id;
  int id = a.tape->push(std::move(out), [ia](Tape& t, int self) {
    Matrix gt = gsr::transpose(t.grad_mut(self));
    Matrix& ga = acc(t, ia);
    for (int i = 0; i < gt.size(); ++i) ga.data[i] += gt.data[i];
  });
  return {a.tape, id};
}

// ---------------------------------------------------------------------------
// Broadcasting

Var add_rowvec(Var a, Var v) {
  if (v.rows() != 1 || v.cols() != a.cols())
    throw std::invalid_argument("add_rowvec: v must be 1 x cols(a)");
  Matrix out = a.value();
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < out.cols; ++c) out(r, c) += v.value()(0, c);
  int ia = a.id, iv = v.id;
  int id = a.tape->push(std::move(out), [ia, iv](Tape& t, int self) {
    const Matrix& g = t.grad_mut(self);
    Matrix& ga = acc(t, ia);
    Matrix& gv = acc(t, iv);
    for (int r = 0; r < g.rows; ++r)
      for (int c = 0; c < g.cols; ++c) {
        ga(r, c) += g(r, c);
        gv(0, c) += g(r, c);
      }
  });
  return {a.tape, id};
}

Var mul_rowvec(Var a, Var v) {
  if (v.rows() != 1 || v.cols() != a.cols())
    throw std::invalid_argument("mul_rowvec: v must be 1 x cols(a)");
  Matrix out = a.value();
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < out.cols; ++c) out(r, c) *= v.value()(0, c);
  int ia = a.id, iv = v.id;
  int id = a.tape->push(std::move(out), [ia, iv](Tape& t, int self) {
    const Matrix& g = t.grad_mut(self);
    const Matrix& av = t.value(ia);
    const Matrix& vv = t.value(iv);
    Matrix& ga = acc(t, ia);
    Matrix& gv = acc(t, iv);
    for (int r = 0; r < g.rows; ++r)
      for (int c = 0; c < g.cols; ++c) {
        ga(r, c) += g(r, c) * vv(0, c);
        gv(0, c) += g(r, c) * av(r, c);
      }
  });
  return {a.tape, id};
}

Var add_colvec(Var a, Var u) {
  if (u.cols() != 1 || u.rows() != a.rows())
    throw std::invalid_argument("add_colvec: u must be rows(a) x 1");
  Matrix out = a.value();
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < out.cols; ++c) out(r, c) += u.value()(r, 0);
  int ia = a.id, iu = u.id;
  int id = a.tape->push(std::move(out), [ia, iu](Tape& t, int self) {
    const Matrix& g = t.grad_mut(self);
    Matrix& ga = acc(t, ia);
    Matrix& gu = acc(t, iu);
    for (int r = 0; r < g.rows; ++r)
      for (int c = 0; c < g.cols; ++c) {
        ga(r, c) += g(r, c);
        gu(r, 0) += g(r, c);
      }
  });
  return {a.tape, id};
}

Var mul_colvec(Var a, Var u) {
  if (u.cols() != 1 || u.rows() != a.rows())
    throw std::invalid_argument("mul_colvec: u must be rows(a) x 1");
  Matrix out = a.value();
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < out.cols; ++c) out(r, c) *= u.value()(r, 0);
  int ia = a.id, iu = u.id;
  int id = a.tape->push(std::move(out), [ia, iu](Tape& t, int self) {
    const Matrix& g = t.grad_mut(self);
    const Matrix& av = t.value(ia);
    const Matrix& uv = t.value(iu);
    Matrix& ga = acc(t, ia);
    Matrix& gu = acc(t, iu);
    for (int r = 0; r < g.rows; ++r)
      for (int c = 0; c < g.cols; ++c) {
        ga(r, c) += g(r, c) * uv(r, 0);
        gu(r, 0) += g(r, c) * av(r, c);
      }
  });
  return {a.tape, id};
}

Var tile_rows(Var v, int r) {
  if (v.rows() != 1) throw std::invalid_argument("tile_rows: v must be 1xC");
  Matrix out(r, v.cols());
  for (int i = 0; i < r; ++i)
    for (int c = 0; c < v.cols(); ++c) out(i, c) = v.value()(0, c);
  int iv = v.id;
  int id = v.tape->push(std::move(out), [iv](Tape& t, int self) {
    const Matrix& g = t.grad_mut(self);
    Matrix& gv = acc(t, iv);
    for (int i = 0; i < g.rows; ++i)
      for (int c = 0; c < g.cols; ++c) gv(0, c) += g(i, c);
  });
  return {v.tape, id};
}

// ---------------------------------------------------------------------------
// Reductions

Var sum_rows(Var a) {
  Matrix out(1, a.cols());
  for (int r = 0; r < a.rows(); ++r)
    for (int c = 0; c < a.cols(); ++c) out(0, c) += a.value()(r, c);
  int ia = a.id;
  int id = a.tape->push(std::move(out), [ia](Tape& t, int self) {
    const Matrix& g = t.grad_mut(self);
    Matrix& ga = acc(t, ia);
    for (int r = 0; r < ga.rows; ++r)
      for (int c = 0; c < ga.cols; ++c) ga(r, c) += g(0, c);
  });
  return {a.tape, id};
}

Var sum_cols(Var a) {
  Matrix out(a.rows(), 1);
  for (int r = 0; r < a.rows(); ++r)
    for (int c = 0; c < a.cols(); ++c) out(r, 0) += a.value()(r, c);
  int ia = a.id;
  int id = a.tape->push(std::move(out), [ia](Tape& t, int self) {
    const Matrix& g = t.grad_mut(self);
    Matrix& ga = acc(t, ia);
    for (int r = 0; r < ga.rows; ++r)
      for (int c = 0; c < ga.cols; ++c) ga(r, c) += g(r, 0);
  });
  return {a.tape, id};
}

Var sum_all(Var a) {
  Matrix out(1, 1);
  for (double v : a.value().data) out(0, 0) += v;
  int ia = a.id;
  int id = a.tape->push(std::move(out), [ia](Tape& t, int self) {
    const double g = t.grad_mut(self)(0, 0);
    Matrix& ga = acc(t, ia);
    for (auto& v : ga.data) v += g;
  });
  return {a.tape, id};
}

// ---------------------------------------------------------------------------
// Softmax

namespace {

// axis 0: normalize down columns; axis 1: normalize across rows.
Var softmax_impl(Var a, int axis) {
  const Matrix& x = a.value();
  Matrix out(x.rows, x.cols);
  if (axis == 1) {
    for (int r = 0; r < x.rows; ++r) {
      double mx = x(r, 0);
      for (int c = 1; c < x.cols; ++c) mx = std::max(mx, x(r, c));
      double z = 0.0;
      for (int c = 0; c < x.cols; ++c) z += std::exp(x(r, c) - mx);
      for (int c = 0; c < x.cols; ++c) out(r, c) = std::exp(x(r, c) - mx) / z;
    }
  } else {
    for (int c = 0; c < x.cols; ++c) {
      double mx = x(0, c);
      for (int r = 1; r < x.rows; ++r) mx = std::max(mx, x(r, c));
      double z = 0.0;
      for (int r = 0; r < x.rows; ++r) z += std::exp(x(r, c) - mx);
      for (int r = 0; r < x.rows; ++r) out(r, c) = std::exp(x(r, c) - mx) / z;
    }
  }
  int ia = a.id;
  int id = a.tape->push(std::move(out), [ia, axis](Tape& t, int self) {
    const Matrix& g = t.grad_mut(self);
    const Matrix& y = t.value(self);
    Matrix& ga = acc(t, ia);
    if (axis == 1) {
      for (int r = 0; r < y.rows; ++r) {
        double dot = 0.0;
        for (int c = 0; c < y.cols; ++c) dot += g(r, c) * y(r, c);
        for (int c = 0; c < y.cols; ++c)
          ga(r, c) += y(r, c) * (g(r, c) - dot);
      }
    } else {
      for (int c = 0; c < y.cols; ++c) {
        double dot = 0.0;
        for (int r = 0; r < y.rows; ++r) dot += g(r, c) * y(r, c);
        for (int r = 0; r < y.rows; ++r)
          ga(r, c) += y(r, c) * (g(r, c) - dot);
      }
    }
  });
  return {a.tape, id};
}

}  // namespace

Var softmax_rows(Var a) { return softmax_impl(a, 1); }
Var softmax_cols(Var a) { return softmax_impl(a, 0); }

// ---------------------------------------------------------------------------
// Shape ops

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  const int rows = parts[0].rows();
  int total = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows)
      throw std::invalid_argument("concat_cols: row mismatch");
    total += p.cols();
  }
  Matrix out(rows, total);
  std::vector<int> ids, offsets, widths;
  int off = 0;
  for (const Var& p : parts) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < p.cols(); ++c) out(r, off + c) = p.value()(r, c);
    ids.push_back(p.id);
    offsets.push_back(off);
    widths.push_back(p.cols());
    off += p.cols();
  }
  Tape* tape = parts[0].tape;
  int id = tape->push(std::move(out), [ids, offsets, widths](Tape& t, int self) {
    const Matrix& g = t.grad_mut(self);
    for (size_t k = 0; k < ids.size(); ++k) {
      Matrix& gp = acc(t, ids[k]);
      for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < widths[k]; ++c) gp(r, c) += g(r, offsets[k] + c);
    }
  });
  return {tape, id};
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  const int cols = parts[0].cols();
  int total = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols)
      throw std::invalid_argument("concat_rows: column mismatch");
    total += p.rows();
  }
  Matrix out(total, cols);
  std::vector<int> ids, offsets, heights;
  int off = 0;
  for (const Var& p : parts) {
    for (int r = 0; r < p.rows(); ++r)
      for (int c = 0; c < cols; ++c) out(off + r, c) = p.value()(r, c);
    ids.push_back(p.id);
    offsets.push_back(off);
    heights.push_back(p.rows());
    off += p.rows();
  }
  Tape* tape = parts[0].tape;
  int id = tape->push(std::move(out), [ids, offsets, heights](Tape& t, int self) {
    const Matrix& g = t.grad_mut(self);
    for (size_t k = 0; k < ids.size(); ++k) {
      Matrix& gp = acc(t, ids[k]);
      for (int r = 0; r < heights[k]; ++r)
        for (int c = 0; c < g.cols; ++c) gp(r, c) += g(offsets[k] + r, c);
    }
  });
  return {tape, id};
}

Var slice_cols(Var a, int start, int n) {
  if (start < 0 || n < 0 || start + n > a.cols())
    throw std::invalid_argument("slice_cols: range out of bounds");
  Matrix out(a.rows(), n);
  for (int r = 0; r < a.rows(); ++r)
    for (int c = 0; c < n; ++c) out(r, c) = a.value()(r, start + c);
  int ia = a.id;
  int id = a.tape->push(std::move(out), [ia, start](Tape& t, int self) {
    const Matrix& g = t.grad_mut(self);
    Matrix& ga = acc(t, ia);
    for (int r = 0; r < g.rows; ++r)
      for (int c = 0; c < g.cols; ++c) ga(r, start + c) += g(r, c);
  });
  return {a.tape, id};
}

Var reshape(Var a, int r, int c) {
  if (r * c != a.rows() * a.cols())
    throw std::invalid_argument("reshape: element count differs");
  Matrix out(r, c);
  out.data = a.value().data;
  int ia = a.id;
  int id = a.tape->push(std::move(out), [ia](Tape& t, int self) {
    const Matrix& g = t.grad_mut(self);
    Matrix& ga = acc(t, ia);
    for (int i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
  });
  return {a.tape, id};
}

// ---------------------------------------------------------------------------
// Convolution support

Var unfold_time(Var a, int k, int dilation, int pad) {
  const Matrix& x = a.value();
  const int rows = x.rows, cols = x.cols;
  Matrix out(rows, k * cols);
  for (int t = 0; t < rows; ++t)
    for (int j = 0; j < k; ++j) {
      const int src = t - pad + j * dilation;
      if (src < 0 || src >= rows) continue;
      for (int c = 0; c < cols; ++c) out(t, j * cols + c) = x(src, c);
    }
  int ia = a.id;
  int id = a.tape->push(std::move(out), [ia, k, dilation, pad](Tape& t,
                                                               int self) {
    const Matrix& g = t.grad_mut(self);
    Matrix& ga = acc(t, ia);
    const int cols = ga.cols;
    for (int r = 0; r < ga.rows; ++r)
      for (int j = 0; j < k; ++j) {
        const int src = r - pad + j * dilation;
        if (src < 0 || src >= ga.rows) continue;
        for (int c = 0; c < cols; ++c) ga(src, c) += g(r, j * cols + c);
      }
  });
  return {a.tape, id};
}

Var sum_fold(Var a, int k) {
  if (a.cols() % k != 0)
    throw std::invalid_argument("sum_fold: cols not divisible by k");
  const int cols = a.cols() / k;
  Matrix out(a.rows(), cols);
  for (int r = 0; r < a.rows(); ++r)
    for (int j = 0; j < k; ++j)
      for (int c = 0; c < cols; ++c) out(r, c) += a.value()(r, j * cols + c);
  int ia = a.id;
  int id = a.tape->push(std::move(out), [ia, k](Tape& t, int self) {
    const Matrix& g = t.grad_mut(self);
    Matrix& ga = acc(t, ia);
    const int cols = g.cols;
    for (int r = 0; r < g.rows; ++r)
      for (int j = 0; j < k; ++j)
        for (int c = 0; c < cols; ++c) ga(r, j * cols + c) += g(r, c);
  });
  return {a.tape, id};
}

Var unfold2d(Var a, int kt, int kf, int stride_t, int stride_f, int pad_t,
             int pad_f) {
  const Matrix& x = a.value();
  const int out_t = (x.rows + 2 * pad_t - kt) / stride_t + 1;
  const int out_f = (x.cols + 2 * pad_f - kf) / stride_f + 1;
  if (out_t < 1 || out_f < 1)
    throw std::invalid_argument("unfold2d: input smaller than kernel");
  Matrix out(out_t * out_f, kt * kf);
  for (int ot = 0; ot < out_t; ++ot)
    for (int of = 0; of < out_f; ++of)
      for (int dt = 0; dt < kt; ++dt)
        for (int df = 0; df < kf; ++df) {
          const int st = ot * stride_t - pad_t + dt;
          const int sf = of * stride_f - pad_f + df;
          if (st < 0 || st >= x.rows || sf < 0 || sf >= x.cols) continue;
          out(ot * out_f + of, dt * kf + df) = x(st, sf);
        }
  int ia = a.id;
  auto back = [ia, kt, kf, stride_t, stride_f, pad_t, pad_f,
               out_t, out_f](Tape& t, int self) {
    const Matrix& g = t.grad_mut(self);
    Matrix& ga = acc(t, ia);
    for (int ot = 0; ot < out_t; ++ot)
      for (int of = 0; of < out_f; ++of)
        for (int dt = 0; dt < kt; ++dt)
          for (int df = 0; df < kf; ++df) {
            const int st = ot * stride_t - pad_t + dt;
            const int sf = of * stride_f - pad_f + df;
            if (st < 0 || st >= ga.rows || sf < 0 || sf >= ga.cols) continue;
            ga(st, sf) += g(ot * out_f + of, dt * kf + df);
          }
  };
  int id = a.tape->push(std::move(out), back);
  return {a.tape, id};
}

Var rel_shift(Var a) {
  const Matrix& x = a.value();
  const int rows = x.rows;
  if (x.cols != 2 * rows - 1)
    throw std::invalid_argument("rel_shift: expected Tx(2T-1)");
  Matrix out(rows, rows);
  for (int t = 0; t < rows; ++t)
    for (int s = 0; s < rows; ++s) out(t, s) = x(t, t - s + rows - 1);
  int ia = a.id;
  int id = a.tape->push(std::move(out), [ia](Tape& t, int self) {
    const Matrix& g = t.grad_mut(self);
    Matrix& ga = acc(t, ia);
    const int rows = g.rows;
    for (int r = 0; r < rows; ++r)
      for (int s = 0; s < rows; ++s) ga(r, r - s + rows - 1) += g(r, s);
  });
  return {a.tape, id};
}

Var select(const Matrix& mask, Var a, Var b) {
  check_same_shape(a, b, "select");
  if (!mask.same_shape(a.value()))
    throw std::invalid_argument("select: mask shape mismatch");
  Matrix out = a.value();
  for (int i = 0; i < out.size(); ++i)
    if (mask.data[i] == 0.0) out.data[i] = b.value().data[i];
  int ia = a.id, ib = b.id;
  Matrix m = mask;
  int id = a.tape->push(std::move(out), [ia, ib, m](Tape& t, int self) {
    const Matrix& g = t.grad_mut(self);
    Matrix& ga = acc(t, ia);
    Matrix& gb = acc(t, ib);
    for (int i = 0; i < g.size(); ++i) {
      if (m.data[i] != 0.0)
        ga.data[i] += g.data[i];
      else
        gb.data[i] += g.data[i];
    }
  });
  return {a.tape, id};
}

// ---------------------------------------------------------------------------
// Composites

Var linear(Var x, Var w, Var b) { return add_rowvec(matmul(x, w), b); }

Var mean_rows(Var a) { return scale(sum_rows(a), 1.0 / a.rows()); }
Var mean_cols(Var a) { return scale(sum_cols(a), 1.0 / a.cols()); }

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Var mu = mean_cols(x);                           // Rx1
  Var centered = add_colvec(x, neg(mu));           // RxC
  Var var = mean_cols(mul(centered, centered));    // Rx1
  Var inv = reciprocal(sqrt(add_const(var, eps)));
  Var normed = mul_colvec(centered, inv);
  return add_rowvec(mul_rowvec(normed, gamma), beta);
}

Var norm_over_time(Var x, Var gamma, Var beta, double eps) {
  Var mu = mean_rows(x);                           // 1xC
  Var centered = add_rowvec(x, neg(mu));
  Var var = mean_rows(mul(centered, centered));    // 1xC
  Var inv = reciprocal(sqrt(add_const(var, eps)));
  Var normed = mul_rowvec(centered, inv);
  return add_rowvec(mul_rowvec(normed, gamma), beta);
}

Var glu_cols(Var x) {
  if (x.cols() % 2 != 0) throw std::invalid_argument("glu_cols: odd width");
  const int half = x.cols() / 2;
  return mul(slice_cols(x, 0, half), sigmoid(slice_cols(x, half, half)));
}

Var l2_normalize_rows(Var x, double eps) {
  Var sq = sum_cols(mul(x, x));                    // Rx1
  Var inv = reciprocal(sqrt(add_const(sq, eps)));
  return mul_colvec(x, inv);
}

}  // namespace gsr::ad
