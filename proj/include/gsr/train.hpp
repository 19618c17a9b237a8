#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gsr/dataconfig.hpp"
#include "gsr/frontend.hpp"
#include "gsr/model.hpp"
#include "gsr/wav.hpp"

namespace gsr {

struct AamConfig {
  double margin = 0.3;
  double scale = 30.0;
  int n_classes = 0;
  int embed_dim = 0;
  void validate() const;
};

struct ScheduleSpec {
  enum class Kind { cosine_warmup, warm_restarts };
  Kind kind = Kind::cosine_warmup;
  double lr_max = 1e-3;
  double lr_min = 1e-8;
  long long warmup_steps = 5000;   // cosine_warmup ramp
  long long period = 100000;      // warm_restarts cycle length
  long long total_steps = 100000; // cosine_warmup decay horizon
  void validate() const;
};

struct BatchSpec {
  int batch_size = 200;
  bool distinct_speakers = true;
  double crop_seconds = 2.0;
};

namespace ad {
/// Margin-penalized softmax cross-entropy over scaled cosine logits.
/// Embeddings and class weights are L2-normalized internally; the true-class
/// logit uses cos(theta + margin), falling back to the monotone linear form
/// cos(theta) - margin*sin(margin) once theta + margin passes pi.
Var aam_softmax_loss(Var embeddings, const std::vector<int>& labels,
                     Var class_weights, const AamConfig& cfg);
}  // namespace ad

std::pair<double, Matrix> aam_softmax_loss(const Matrix& embeddings,
                                           const std::vector<int>& labels,
                                           const Matrix& class_weights,
                                           const AamConfig& cfg);

/// Learning rate at a step (first update is step 1). cosine_warmup ramps
/// linearly from 0 to lr_max over warmup_steps then cosine-decays to lr_min
/// at total_steps; warm_restarts cosine-decays within each period and resets
/// to lr_max at every period boundary.
double lr_at(long long step, const ScheduleSpec& spec);

/// Draws batch_size (utterance_id, speaker_id) pairs. With distinct_speakers,
/// speakers are pairwise distinct (one uniformly chosen utterance each).
std::vector<std::pair<std::string, std::string>> sample_batch(
    const std::vector<UtteranceRecord>& manifest, const BatchSpec& spec,
    unsigned rng_seed);

class training_diverged : public std::runtime_error {
 public:
  training_diverged(const std::string& what, long long last_good)
      : std::runtime_error(what), last_good_step(last_good) {}
  long long last_good_step;
};

/// First-order update rule applied tensor-by-tensor. Tensors missing from the
/// gradient map are left untouched.
struct Optimizer {
  enum class Kind { sgd, adam, adamw };
  Kind kind = Kind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // adamw only, decoupled

  void step(ModelParams& params,
            const std::unordered_map<std::string, Matrix>& grads, double lr);

 private:
  long long t_ = 0;
  std::map<std::string, Matrix> m_;
  std::map<std::string, Matrix> v_;
};

/// Which network an artifact holds and how its inputs were featurized.
struct ModelSpec {
  std::string arch = "mfa_conformer";  // mfa_conformer | ecapa_tdnn
  ConformerConfig conformer;
  EcapaConfig ecapa;
  FeatureKind features = FeatureKind::log_mel;

  int embed_dim() const;
  void validate() const;
};

std::string model_spec_json(const ModelSpec& spec);
ModelSpec parse_model_spec(const std::string& json_text);

/// Features then forward pass; resamples to 16 kHz first when needed.
SpeakerEmbedding embed_waveform(const Waveform& wave,
                                const ModelParams& params,
                                const ModelSpec& spec);

struct TrainConfig {
  ModelSpec model;
  std::string data_manifest;
  AamConfig aam;  // n_classes/embed_dim are filled from the data and model
  ScheduleSpec schedule;
  BatchSpec batch;
  std::string optimizer = "adamw";  // sgd | adam | adamw
  double weight_decay = 0.01;
  long long max_steps = 100;
  unsigned seed = 1;
  double augment_prob = 0.0;
  double noise_snr_min = 5.0;
  double noise_snr_max = 20.0;
  long long checkpoint_every = 0;  // 0: only the final artifact
  std::string out_dir;             // needed for periodic checkpoints
};

/// Strict key-value parse of a UTF-8 JSON config; unknown or mistyped keys
/// raise invalid_argument naming the key.
TrainConfig parse_train_config(const std::string& json_text);

struct TrainResult {
  ModelParams params;       // network tensors plus the class weight matrix
  std::string config_json;  // checkpoint payload (model_spec_json)
  std::string metrics;      // one "step\tlr\tloss" line per step
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int n_classes = 0;
  std::map<std::string, int> speaker_to_class;
};

/// Runs the optimization loop over the manifest. Deterministic for a fixed
/// seed on one thread. Raises training_diverged when the loss leaves the
/// finite range, carrying the last step that was still good.
TrainResult train(const TrainConfig& cfg,
                  const std::vector<UtteranceRecord>& manifest);

}  // namespace gsr
