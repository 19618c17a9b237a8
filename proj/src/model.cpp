#include "gsr/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "gsr/pooling.hpp"

namespace gsr {

namespace {
constexpr double kLnEps = 1e-5;

// Frequency width after the 3x3 stride-2 padded subsampling convolution.
int subsampled_width(int input_dim) { return (input_dim - 1) / 2 + 1; }
}  // namespace

void ConformerConfig::validate() const {
  if (n_layers < 1 || model_dim < 1 || n_heads < 1 || ff_units < 1 ||
      conv_kernel < 1 || embed_dim < 1 || input_dim < 1)
    throw std::invalid_argument("conformer config: sizes must be positive");
  if (model_dim % n_heads != 0)
    throw std::invalid_argument(
        "conformer config: model_dim must be divisible by n_heads");
  if (conv_kernel % 2 == 0)
    throw std::invalid_argument("conformer config: conv_kernel must be odd");
  if (subsample_factor != 2)
    throw std::invalid_argument(
        "conformer config: only subsample_factor 2 is supported");
}

void EcapaConfig::validate() const {
  if (channels < 1 || n_blocks < 1 || embed_dim < 1 || input_dim < 1)
    throw std::invalid_argument("ecapa config: sizes must be positive");
  if (channels % kRes2Scale != 0)
    throw std::invalid_argument(
        "ecapa config: channels must be divisible by the res2 scale");
  if ((3 * channels) % 2 != 0)
    throw std::invalid_argument("ecapa config: channels must be even");
}

// ---------------------------------------------------------------------------
// Parameter registry

Matrix& ModelParams::add(const std::string& name, Matrix m) {
  auto [it, inserted] = tensors_.emplace(name, std::move(m));
  if (!inserted)
    throw std::invalid_argument("duplicate parameter name: " + name);
  order_.push_back(name);
  return it->second;
}

Matrix& ModelParams::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end())
    throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

const Matrix& ModelParams::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end())
    throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

std::int64_t ModelParams::count() const {
  std::int64_t total = 0;
  for (const auto& name : order_) {
    const Matrix& m = tensors_.at(name);
    total += static_cast<std::int64_t>(m.rows) * m.cols;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Tensor layouts

namespace {

void norm_pair(std::vector<TensorSpec>& out, const std::string& prefix,
               int dim) {
  out.push_back({prefix + ".g", 1, dim, TensorSpec::Init::ones, 0});
  out.push_back({prefix + ".b", 1, dim, TensorSpec::Init::zeros, 0});
}

void weight(std::vector<TensorSpec>& out, const std::string& name, int rows,
            int cols, int fan_in = 0) {
  out.push_back({name, rows, cols, TensorSpec::Init::kaiming, fan_in});
}

void bias(std::vector<TensorSpec>& out, const std::string& name, int cols) {
  out.push_back({name, 1, cols, TensorSpec::Init::zeros, 0});
}

}  // namespace

std::vector<TensorSpec> tensor_specs(const ConformerConfig& cfg) {
  cfg.validate();
  const int D = cfg.model_dim;
  const int FF = cfg.ff_units;
  const int K = cfg.conv_kernel;
  const int LD = cfg.n_layers * D;
  const int F2 = subsampled_width(cfg.input_dim);

  std::vector<TensorSpec> s;
  weight(s, "sub.conv.w", D, 9, 9);
  bias(s, "sub.conv.b", D);
  weight(s, "sub.proj.w", F2 * D, D);
  bias(s, "sub.proj.b", D);

  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    for (const char* ff : {"ff1.", "ff2."}) {
      norm_pair(s, p + ff + "ln", D);
      weight(s, p + ff + "w1", D, FF);
      bias(s, p + ff + "b1", FF);
      weight(s, p + ff + "w2", FF, D);
      bias(s, p + ff + "b2", D);
    }
    norm_pair(s, p + "att.ln", D);
    for (const char* m : {"wq", "wk", "wv", "wo"}) {
      weight(s, p + "att." + std::string(m), D, D);
      bias(s, p + "att.b" + std::string(m + 1), D);
    }
    weight(s, p + "att.pos", D, D);
    bias(s, p + "att.u", D);
    bias(s, p + "att.v", D);
    norm_pair(s, p + "conv.ln", D);
    weight(s, p + "conv.pw1", D, 2 * D);
    bias(s, p + "conv.pb1", 2 * D);
    weight(s, p + "conv.dw", 1, K * D, K);
    bias(s, p + "conv.db", D);
    norm_pair(s, p + "conv.bn", D);
    weight(s, p + "conv.pw2", D, D);
    bias(s, p + "conv.pb2", D);
    norm_pair(s, p + "out.ln", D);
  }

  norm_pair(s, "mfa.ln", LD);
  weight(s, "asp.W", LD, kPoolHidden);
  bias(s, "asp.b", kPoolHidden);
  weight(s, "asp.w", kPoolHidden, 1);
  weight(s, "emb.w", 2 * LD, cfg.embed_dim);
  bias(s, "emb.b", cfg.embed_dim);
  return s;
}

std::vector<TensorSpec> tensor_specs(const EcapaConfig& cfg) {
  cfg.validate();
  const int C = cfg.channels;
  const int W = C / kRes2Scale;
  const int Cm = 3 * C / 2;  // channels after the aggregation convolution
  const int F = cfg.input_dim;

  std::vector<TensorSpec> s;
  weight(s, "stem.w", 5 * F, C);
  bias(s, "stem.b", C);
  norm_pair(s, "stem.bn", C);

  for (int i = 1; i <= cfg.n_blocks; ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    weight(s, p + "conv1.w", C, C);
    bias(s, p + "conv1.b", C);
    norm_pair(s, p + "bn1", C);
    for (int g = 1; g < kRes2Scale; ++g) {
      const std::string gp = p + "res2" + std::to_string(g);
      weight(s, gp + ".w", 3 * W, W);
      bias(s, gp + ".b", W);
      norm_pair(s, gp + ".bn", W);
    }
    weight(s, p + "conv2.w", C, C);
    bias(s, p + "conv2.b", C);
    norm_pair(s, p + "bn2", C);
    weight(s, p + "se.w1", C, kSeHidden);
    bias(s, p + "se.b1", kSeHidden);
    weight(s, p + "se.w2", kSeHidden, C);
    bias(s, p + "se.b2", C);
  }

  weight(s, "mfa.w", cfg.n_blocks * C, Cm);
  bias(s, "mfa.b", Cm);
  weight(s, "pool.W1", 3 * Cm, kPoolHidden);
  bias(s, "pool.b1", kPoolHidden);
  weight(s, "pool.W2", kPoolHidden, Cm);
  bias(s, "pool.b2", Cm);
  norm_pair(s, "post.bn", 2 * Cm);
  weight(s, "emb.w", 2 * Cm, cfg.embed_dim);
  bias(s, "emb.b", cfg.embed_dim);
  return s;
}

ModelParams init_params(const std::vector<TensorSpec>& specs, unsigned seed) {
  std::mt19937 rng(seed);
  ModelParams params;
  for (const auto& spec : specs) {
    Matrix m(spec.rows, spec.cols);
    switch (spec.init) {
      case TensorSpec::Init::zeros:
        break;
      case TensorSpec::Init::ones:
        for (auto& v : m.data) v = 1.0;
        break;
      case TensorSpec::Init::kaiming: {
        const int fan = spec.fan_in > 0 ? spec.fan_in : spec.rows;
        const double bound = std::sqrt(6.0 / fan);
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : m.data) v = dist(rng);
        break;
      }
    }
    params.add(spec.name, std::move(m));
  }
  return params;
}

namespace {
std::int64_t total_of(const std::vector<TensorSpec>& specs) {
  std::int64_t total = 0;
  for (const auto& s : specs)
    total += static_cast<std::int64_t>(s.rows) * s.cols;
  return total;
}
}  // namespace

std::int64_t count_params(const ConformerConfig& cfg) {
  return total_of(tensor_specs(cfg));
}

std::int64_t count_params(const EcapaConfig& cfg) {
  return total_of(tensor_specs(cfg));
}

// ---------------------------------------------------------------------------
// Tape plumbing

ad::Var TapeParams::at(const std::string& name) const {
  auto it = vars.find(name);
  if (it == vars.end())
    throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

TapeParams lift(ad::Tape& tape, const ModelParams& params) {
  TapeParams tp;
  tp.tape = &tape;
  for (const auto& name : params.names())
    tp.vars.emplace(name, tape.leaf(params.at(name)));
  return tp;
}

std::unordered_map<std::string, Matrix> collect_grads(const TapeParams& tp) {
  std::unordered_map<std::string, Matrix> grads;
  for (const auto& [name, var] : tp.vars) grads.emplace(name, tp.tape->grad(var));
  return grads;
}

Matrix relative_position_table(int T, int dim) {
  Matrix table(2 * T - 1, dim);
  for (int r = 0; r < table.rows; ++r) {
    const double offset = static_cast<double>(r - (T - 1));
    for (int i = 0; i < dim / 2; ++i) {
      const double rate = std::pow(10000.0, -2.0 * i / dim);
      table(r, 2 * i) = std::sin(offset * rate);
      table(r, 2 * i + 1) = std::cos(offset * rate);
    }
    if (dim % 2 == 1)
      table(r, dim - 1) = std::sin(offset * std::pow(10000.0, -1.0));
  }
  return table;
}

namespace ad {

namespace {

// x -> w2(swish(w1 x + b1)) + b2 under layer norm, the conformer feed-forward.
Var feed_forward(const TapeParams& P, const std::string& p, Var x) {
  Var y = layer_norm(x, P.at(p + "ln.g"), P.at(p + "ln.b"), kLnEps);
  y = linear(y, P.at(p + "w1"), P.at(p + "b1"));
  return linear(swish(y), P.at(p + "w2"), P.at(p + "b2"));
}

Var relative_mhsa(const TapeParams& P, const std::string& p, Var x,
                  const ConformerConfig& cfg) {
  const int T = x.rows();
  const int D = cfg.model_dim;
  const int dh = D / cfg.n_heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Var y = layer_norm(x, P.at(p + "ln.g"), P.at(p + "ln.b"), kLnEps);
  Var q = linear(y, P.at(p + "wq"), P.at(p + "bq"));
  Var k = linear(y, P.at(p + "wk"), P.at(p + "bk"));
  Var v = linear(y, P.at(p + "wv"), P.at(p + "bv"));
  Var pos = matmul(P.tape->leaf(relative_position_table(T, D)),
                   P.at(p + "pos"));

  std::vector<Var> heads;
  heads.reserve(cfg.n_heads);
  for (int h = 0; h < cfg.n_heads; ++h) {
    const int off = h * dh;
    Var qi = slice_cols(q, off, dh);
    Var ki = slice_cols(k, off, dh);
    Var vi = slice_cols(v, off, dh);
    Var pi = slice_cols(pos, off, dh);
    Var content = matmul(add_rowvec(qi, slice_cols(P.at(p + "u"), off, dh)),
                         transpose(ki));
    Var position = rel_shift(
        matmul(add_rowvec(qi, slice_cols(P.at(p + "v"), off, dh)),
               transpose(pi)));
    Var att = softmax_rows(scale(add(content, position), inv_scale));
    heads.push_back(matmul(att, vi));
  }
  return linear(concat_cols(heads), P.at(p + "wo"), P.at(p + "bo"));
}

Var conv_module(const TapeParams& P, const std::string& p, Var x,
                const ConformerConfig& cfg) {
  const int K = cfg.conv_kernel;
  Var y = layer_norm(x, P.at(p + "ln.g"), P.at(p + "ln.b"), kLnEps);
  y = glu_cols(linear(y, P.at(p + "pw1"), P.at(p + "pb1")));
  Var u = unfold_time(y, K, 1, (K - 1) / 2);
  y = add_rowvec(sum_fold(mul_rowvec(u, P.at(p + "dw")), K), P.at(p + "db"));
  y = norm_over_time(y, P.at(p + "bn.g"), P.at(p + "bn.b"), kLnEps);
  return linear(swish(y), P.at(p + "pw2"), P.at(p + "pb2"));
}

}  // namespace

Var conformer_block_forward(const TapeParams& P, const std::string& prefix,
                            Var x, const ConformerConfig& cfg) {
  if (x.cols() != cfg.model_dim)
    throw std::invalid_argument("conformer block: input width != model_dim");
  Var x1 = add(x, scale(feed_forward(P, prefix + "ff1.", x), 0.5));
  Var x2 = add(x1, relative_mhsa(P, prefix + "att.", x1, cfg));
  Var x3 = add(x2, conv_module(P, prefix + "conv.", x2, cfg));
  Var x4 = add(x3, scale(feed_forward(P, prefix + "ff2.", x3), 0.5));
  return layer_norm(x4, P.at(prefix + "out.ln.g"), P.at(prefix + "out.ln.b"),
                    kLnEps);
}

Var mfa_concat(const std::vector<Var>& layers, Var gamma, Var beta) {
  if (layers.empty())
    throw std::invalid_argument("mfa_concat: no layer outputs");
  for (const Var& l : layers)
    if (l.rows() != layers[0].rows() || l.cols() != layers[0].cols())
      throw std::invalid_argument("mfa_concat: mismatched layer shapes");
  return layer_norm(concat_cols(layers), gamma, beta, kLnEps);
}

Var mfa_conformer_embed(const TapeParams& P, Var features,
                        const ConformerConfig& cfg) {
  cfg.validate();
  if (features.cols() != cfg.input_dim)
    throw std::invalid_argument("conformer: feature width != input_dim");
  if (features.rows() < 3)
    throw std::invalid_argument(
        "conformer: input shorter than the subsampling receptive field");

  // 3x3 stride-2 subsampling convolution over the time-frequency plane.
  const int T2 = (features.rows() - 1) / 2 + 1;
  const int F2 = subsampled_width(cfg.input_dim);
  Var patches = unfold2d(features, 3, 3, 2, 2, 1, 1);
  Var conv = relu(add_rowvec(matmul(patches, transpose(P.at("sub.conv.w"))),
                             P.at("sub.conv.b")));
  Var x = linear(reshape(conv, T2, F2 * cfg.model_dim), P.at("sub.proj.w"),
                 P.at("sub.proj.b"));

  std::vector<Var> outputs;
  outputs.reserve(cfg.n_layers);
  for (int i = 0; i < cfg.n_layers; ++i) {
    x = conformer_block_forward(P, "block" + std::to_string(i) + ".", x, cfg);
    outputs.push_back(x);
  }

  Var mfa = mfa_concat(outputs, P.at("mfa.ln.g"), P.at("mfa.ln.b"));
  Var pooled = attentive_stats_pool(mfa, P.at("asp.W"), P.at("asp.b"),
                                    P.at("asp.w"));
  return linear(pooled, P.at("emb.w"), P.at("emb.b"));
}

Var ecapa_embed(const TapeParams& P, Var features, const EcapaConfig& cfg) {
  cfg.validate();
  if (features.cols() != cfg.input_dim)
    throw std::invalid_argument("ecapa: feature width != input_dim");
  if (features.rows() < 1)
    throw std::invalid_argument("ecapa: empty feature sequence");

  const int C = cfg.channels;
  const int W = C / kRes2Scale;

  Var stem = relu(linear(unfold_time(features, 5, 1, 2), P.at("stem.w"),
                         P.at("stem.b")));
  stem = norm_over_time(stem, P.at("stem.bn.g"), P.at("stem.bn.b"), kLnEps);

  std::vector<Var> block_outputs;
  for (int i = 1; i <= cfg.n_blocks; ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    const int dilation = i + 1;

    Var in = stem;
    for (const Var& prev : block_outputs) in = add(in, prev);

    Var h = relu(linear(in, P.at(p + "conv1.w"), P.at(p + "conv1.b")));
    h = norm_over_time(h, P.at(p + "bn1.g"), P.at(p + "bn1.b"), kLnEps);

    // Res2 ladder: group 0 passes through, each later group convolves its
    // slice plus the previous group's output.
    std::vector<Var> groups;
    groups.push_back(slice_cols(h, 0, W));
    for (int g = 1; g < kRes2Scale; ++g) {
      const std::string gp = p + "res2" + std::to_string(g);
      Var xg = add(slice_cols(h, g * W, W), groups.back());
      Var conv = add_rowvec(
          matmul(unfold_time(xg, 3, dilation, dilation), P.at(gp + ".w")),
          P.at(gp + ".b"));
      groups.push_back(norm_over_time(relu(conv), P.at(gp + ".bn.g"),
                                      P.at(gp + ".bn.b"), kLnEps));
    }
    Var merged = concat_cols(groups);

    merged = relu(linear(merged, P.at(p + "conv2.w"), P.at(p + "conv2.b")));
    merged = norm_over_time(merged, P.at(p + "bn2.g"), P.at(p + "bn2.b"),
                            kLnEps);

    Var se = sigmoid(linear(
        relu(linear(mean_rows(merged), P.at(p + "se.w1"), P.at(p + "se.b1"))),
        P.at(p + "se.w2"), P.at(p + "se.b2")));
    block_outputs.push_back(add(in, mul_rowvec(merged, se)));
  }

  Var agg = relu(linear(concat_cols(block_outputs), P.at("mfa.w"),
                        P.at("mfa.b")));
  Var pooled = channel_context_stats_pool(agg, P.at("pool.W1"),
                                          P.at("pool.b1"), P.at("pool.W2"),
                                          P.at("pool.b2"));
  Var post = add(mul(pooled, P.at("post.bn.g")), P.at("post.bn.b"));
  return linear(post, P.at("emb.w"), P.at("emb.b"));
}

}  // namespace ad

// ---------------------------------------------------------------------------
// Inference wrappers

namespace {

SpeakerEmbedding to_embedding(const Matrix& row) {
  SpeakerEmbedding v(row.data.begin(), row.data.end());
  return v;
}

}  // namespace

Matrix conformer_block_forward(const ModelParams& params,
                               const std::string& prefix, const Matrix& x,
                               const ConformerConfig& cfg) {
  ad::Tape tape;
  TapeParams tp = lift(tape, params);
  return ad::conformer_block_forward(tp, prefix, tape.leaf(x), cfg).value();
}

Matrix mfa_concat(const std::vector<Matrix>& layers, const Matrix& gamma,
                  const Matrix& beta) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  vars.reserve(layers.size());
  for (const auto& l : layers) vars.push_back(tape.leaf(l));
  return ad::mfa_concat(vars, tape.leaf(gamma), tape.leaf(beta)).value();
}

SpeakerEmbedding mfa_conformer_embed(const FeatureMatrix& features,
                                     const ModelParams& params,
                                     const ConformerConfig& cfg) {
  ad::Tape tape;
  TapeParams tp = lift(tape, params);
  return to_embedding(
      ad::mfa_conformer_embed(tp, tape.leaf(features.frames), cfg).value());
}

SpeakerEmbedding ecapa_embed(const FeatureMatrix& features,
                             const ModelParams& params,
                             const EcapaConfig& cfg) {
  ad::Tape tape;
  TapeParams tp = lift(tape, params);
  return to_embedding(
      ad::ecapa_embed(tp, tape.leaf(features.frames), cfg).value());
}

}  // namespace gsr
