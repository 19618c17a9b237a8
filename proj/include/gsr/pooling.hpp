#pragma once

#include "gsr/autodiff.hpp"
#include "gsr/matrix.hpp"

namespace gsr {

inline constexpr double kPoolEps = 1e-6;

/// Scorer for attentive pooling: e_t = w' * tanh(W * h_t + b).
struct AttentivePoolParams {
  Matrix W;  // D x A
  Matrix b;  // 1 x A
  Matrix w;  // A x 1
};

/// Scorer for channel- and context-dependent pooling. Input per frame is
/// [h_t; mean(H); std(H)] (3D wide); output is one score per channel.
struct ChannelContextPoolParams {
  Matrix W1;  // 3D x A
  Matrix b1;  // 1 x A
  Matrix W2;  // A x D
  Matrix b2;  // 1 x D
};

namespace ad {

/// Mean and epsilon-guarded standard deviation over time: T x D -> 1 x 2D.
Var stats_pool(Var H, double eps = kPoolEps);

/// Attentive statistics pooling with a scalar score per frame: 1 x 2D.
Var attentive_stats_pool(Var H, Var W, Var b, Var w, double eps = kPoolEps);

/// ECAPA-style pooling with per-channel attention over time: 1 x 2D.
Var channel_context_stats_pool(Var H, Var W1, Var b1, Var W2, Var b2,
                               double eps = kPoolEps);

/// Attention-weighted mean only: T x D -> 1 x D.
Var self_attentive_pool(Var H, Var W, Var b, Var w);

}  // namespace ad

// Inference-path wrappers over the differentiable implementations.
Matrix stats_pool(const Matrix& H, double eps = kPoolEps);
Matrix attentive_stats_pool(const Matrix& H, const AttentivePoolParams& p,
                            double eps = kPoolEps);
Matrix channel_context_stats_pool(const Matrix& H,
                                  const ChannelContextPoolParams& p,
                                  double eps = kPoolEps);
Matrix self_attentive_pool(const Matrix& H, const AttentivePoolParams& p);

}  // namespace gsr
