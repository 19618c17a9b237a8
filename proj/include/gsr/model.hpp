#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "gsr/autodiff.hpp"
#include "gsr/frontend.hpp"
#include "gsr/matrix.hpp"

namespace gsr {

struct ConformerConfig {
  int n_layers = 6;
  int model_dim = 512;
  int n_heads = 8;
  int ff_units = 2048;
  int conv_kernel = 15;
  int embed_dim = 256;
  int input_dim = 80;
  int subsample_factor = 2;

  void validate() const;
};

struct EcapaConfig {
  int channels = 1024;
  int n_blocks = 3;
  int embed_dim = 256;
  int input_dim = 80;

  void validate() const;
};

using SpeakerEmbedding = std::vector<double>;

// Attention bottleneck width shared by both pooling heads.
inline constexpr int kPoolHidden = 128;
// Squeeze-excitation bottleneck width.
inline constexpr int kSeHidden = 128;
// Res2Net split count.
inline constexpr int kRes2Scale = 8;

// Reference sizes (millions of parameters) of the two baseline bodies we do
// not implement; kept for documentation and reporting only.
inline constexpr double kRes2NetSE50MParams = 9.29;
inline constexpr double kRawNet3MParams = 16.28;

/// Shape and initialization recipe for one named parameter tensor.
struct TensorSpec {
  enum class Init { kaiming, zeros, ones };
  std::string name;
  int rows = 0;
  int cols = 0;
  Init init = Init::kaiming;
  int fan_in = 0;  // 0 means "use rows"
};

/// Ordered, named parameter tensors; iteration order is creation order.
class ModelParams {
 public:
  Matrix& add(const std::string& name, Matrix m);
  bool has(const std::string& name) const { return tensors_.count(name) > 0; }
  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  std::int64_t count() const;

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Matrix> tensors_;
};

std::vector<TensorSpec> tensor_specs(const ConformerConfig& cfg);
std::vector<TensorSpec> tensor_specs(const EcapaConfig& cfg);

/// Fills every tensor per its spec; weights are fan-in-scaled uniform draws
/// from a generator seeded once, so (specs, seed) reproduces the parameters.
ModelParams init_params(const std::vector<TensorSpec>& specs, unsigned seed);

/// Analytic totals, no allocation; cheap even at full size.
std::int64_t count_params(const ConformerConfig& cfg);
std::int64_t count_params(const EcapaConfig& cfg);

/// Model parameters lifted onto a tape as leaves, addressable by name.
struct TapeParams {
  ad::Tape* tape = nullptr;
  std::unordered_map<std::string, ad::Var> vars;

  ad::Var at(const std::string& name) const;
};
TapeParams lift(ad::Tape& tape, const ModelParams& params);

/// Gradients accumulated on the tape, keyed back to parameter names.
std::unordered_map<std::string, Matrix> collect_grads(const TapeParams& tp);

/// Sinusoidal table for relative offsets -(T-1)..(T-1), one row per offset.
Matrix relative_position_table(int T, int dim);

namespace ad {

/// One macaron conformer block (half-step FF, relative-position MHSA,
/// convolution module, half-step FF, closing layer norm), pre-norm residuals.
/// Parameter names are looked up under `prefix` (e.g. "block0.").
Var conformer_block_forward(const TapeParams& P, const std::string& prefix,
                            Var x, const ConformerConfig& cfg);

/// Feature-axis concatenation of per-layer outputs followed by layer norm.
Var mfa_concat(const std::vector<Var>& layers, Var gamma, Var beta);

/// Full embedding pipelines; `features` is T x input_dim. Output 1 x embed.
Var mfa_conformer_embed(const TapeParams& P, Var features,
                        const ConformerConfig& cfg);
Var ecapa_embed(const TapeParams& P, Var features, const EcapaConfig& cfg);

}  // namespace ad

// Inference wrappers (fresh tape per call; deterministic).
Matrix conformer_block_forward(const ModelParams& params,
                               const std::string& prefix, const Matrix& x,
                               const ConformerConfig& cfg);
Matrix mfa_concat(const std::vector<Matrix>& layers, const Matrix& gamma,
                  const Matrix& beta);
SpeakerEmbedding mfa_conformer_embed(const FeatureMatrix& features,
                                     const ModelParams& params,
                                     const ConformerConfig& cfg);
SpeakerEmbedding ecapa_embed(const FeatureMatrix& features,
                             const ModelParams& params,
                             const EcapaConfig& cfg);

}  // namespace gsr
