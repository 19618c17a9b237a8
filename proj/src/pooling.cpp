#include "gsr/pooling.hpp"

#include <stdexcept>

namespace gsr {

namespace ad {

namespace {

void require_frames(Var H, const char* op) {
  if (H.rows() < 1)
    throw std::invalid_argument(std::string(op) + ": empty frame sequence");
}

// sqrt(m2 - mu^2 + eps), the shared sigma shape.
Var guarded_std(Var m2, Var mu, double eps) {
  return ad::sqrt(add_const(sub(m2, mul(mu, mu)), eps));
}

// T x 1 attention from the tanh scorer, normalized over time.
Var frame_attention(Var H, Var W, Var b, Var w) {
  if (W.rows() != H.cols() || b.cols() != W.cols() || w.rows() != W.cols() ||
      w.cols() != 1)
    throw std::invalid_argument("attentive pooling: parameter shape mismatch");
  Var scores = matmul(ad::tanh(add_rowvec(matmul(H, W), b)), w);
  return softmax_cols(scores);
}

}  // namespace

Var stats_pool(Var H, double eps) {
  require_frames(H, "stats_pool");
  Var mu = mean_rows(H);
  Var m2 = mean_rows(mul(H, H));
  return concat_cols({mu, guarded_std(m2, mu, eps)});
}

Var attentive_stats_pool(Var H, Var W, Var b, Var w, double eps) {
  require_frames(H, "attentive_stats_pool");
  Var alpha = frame_attention(H, W, b, w);
  Var mu = sum_rows(mul_colvec(H, alpha));
  Var m2 = sum_rows(mul_colvec(mul(H, H), alpha));
  return concat_cols({mu, guarded_std(m2, mu, eps)});
}

Var channel_context_stats_pool(Var H, Var W1, Var b1, Var W2, Var b2,
                               double eps) {
  require_frames(H, "channel_context_stats_pool");
  const int T = H.rows();
  const int D = H.cols();
  if (W1.rows() != 3 * D || b1.cols() != W1.cols() || W2.rows() != W1.cols() ||
      W2.cols() != D || b2.cols() != D)
    throw std::invalid_argument(
        "channel_context_stats_pool: parameter shape mismatch");

  // Global context from unweighted statistics, tiled onto every frame.
  Var mu0 = mean_rows(H);
  Var m20 = mean_rows(mul(H, H));
  Var sd0 = guarded_std(m20, mu0, eps);
  Var x = concat_cols({H, tile_rows(mu0, T), tile_rows(sd0, T)});

  Var scores = add_rowvec(matmul(ad::tanh(add_rowvec(matmul(x, W1), b1)), W2),
                          b2);
  Var alpha = softmax_cols(scores);  // over time, per channel

  Var mu = sum_rows(mul(alpha, H));
  Var m2 = sum_rows(mul(alpha, mul(H, H)));
  return concat_cols({mu, guarded_std(m2, mu, eps)});
}

Var self_attentive_pool(Var H, Var W, Var b, Var w) {
  require_frames(H, "self_attentive_pool");
  Var alpha = frame_attention(H, W, b, w);
  return sum_rows(mul_colvec(H, alpha));
}

}  // namespace ad

namespace {

// Runs a tape expression on constant inputs and returns its value.
template <typename Fn>
Matrix run_plain(Fn&& fn) {
  ad::Tape tape;
  ad::Var out = fn(tape);
  return out.value();
}

}  // namespace

Matrix stats_pool(const Matrix& H, double eps) {
  return run_plain(
      [&](ad::Tape& t) { return ad::stats_pool(t.leaf(H), eps); });
}

Matrix attentive_stats_pool(const Matrix& H, const AttentivePoolParams& p,
                            double eps) {
  return run_plain([&](ad::Tape& t) {
    return ad::attentive_stats_pool(t.leaf(H), t.leaf(p.W), t.leaf(p.b),
                                    t.leaf(p.w), eps);
  });
}

Matrix channel_context_stats_pool(const Matrix& H,
                                  const ChannelContextPoolParams& p,
                                  double eps) {
  return run_plain([&](ad::Tape& t) {
    return ad::channel_context_stats_pool(t.leaf(H), t.leaf(p.W1),
                                          t.leaf(p.b1), t.leaf(p.W2),
                                          t.leaf(p.b2), eps);
  });
}

Matrix self_attentive_pool(const Matrix& H, const AttentivePoolParams& p) {
  return run_plain([&](ad::Tape& t) {
    return ad::self_attentive_pool(t.leaf(H), t.leaf(p.W), t.leaf(p.b),
                                   t.leaf(p.w));
  });
}

}  // namespace gsr
