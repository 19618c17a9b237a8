#include "gsr/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>
#include <unordered_map>

#include "gsr/checkpoint.hpp"

namespace gsr {

using nlohmann::json;

void AamConfig::validate() const {
  if (!(margin >= 0.0) || margin >= 1.5707963267948966)
    throw std::invalid_argument("aam: margin must lie in [0, pi/2)");
  if (!(scale > 0.0)) throw std::invalid_argument("aam: scale must be > 0");
  if (n_classes < 2)
    throw std::invalid_argument("aam: need at least 2 classes");
  if (embed_dim < 1) throw std::invalid_argument("aam: bad embed_dim");
}

void ScheduleSpec::validate() const {
  if (!(lr_max > lr_min) || !(lr_min > 0.0))
    throw std::invalid_argument("schedule: need lr_max > lr_min > 0");
  if (kind == Kind::cosine_warmup) {
    if (warmup_steps < 1)
      throw std::invalid_argument("schedule: warmup_steps must be >= 1");
    if (total_steps <= warmup_steps)
      throw std::invalid_argument(
          "schedule: total_steps must exceed warmup_steps");
  } else {
    if (period < 1) throw std::invalid_argument("schedule: period must be >= 1");
  }
}

// ---------------------------------------------------------------------------
// Margin softmax

namespace ad {

namespace {

std::pair<Var, Var> aam_loss_and_logits(Var embeddings,
                                        const std::vector<int>& labels,
                                        Var class_weights,
                                        const AamConfig& cfg) {
  cfg.validate();
  const int b = embeddings.rows();
  const int c = class_weights.rows();
  if (embeddings.cols() != cfg.embed_dim ||
      class_weights.cols() != cfg.embed_dim || c != cfg.n_classes)
    throw std::invalid_argument("aam: shape mismatch with config");
  if (static_cast<int>(labels.size()) != b)
    throw std::invalid_argument("aam: one label per embedding row required");
  for (int label : labels)
    if (label < 0 || label >= c)
      throw std::invalid_argument("aam: label " + std::to_string(label) +
                                  " out of range [0, " + std::to_string(c) +
                                  ")");

  Tape& tape = *embeddings.tape;
  Var x = l2_normalize_rows(embeddings, 1e-20);
  Var w = l2_normalize_rows(class_weights, 1e-20);
  Var cos_t = matmul(x, transpose(w));  // b x c

  // cos(theta + m), with relu guarding sqrt against 1 - cos^2 rounding below
  // zero, and the monotone linear fallback past theta + m = pi.
  Var one = tape.leaf(Matrix(b, c, 1.0));
  Var sin_t = sqrt(relu(sub(one, mul(cos_t, cos_t))));
  Var phi = sub(scale(cos_t, std::cos(cfg.margin)),
                scale(sin_t, std::sin(cfg.margin)));
  Var fallback = add_const(cos_t, -cfg.margin * std::sin(cfg.margin));
  const double boundary = std::cos(3.141592653589793 - cfg.margin);
  Matrix past_pi(b, c);
  for (int i = 0; i < past_pi.size(); ++i)
    past_pi.data[i] = cos_t.value().data[i] <= boundary ? 1.0 : 0.0;
  phi = select(past_pi, fallback, phi);

  Matrix onehot(b, c);
  for (int i = 0; i < b; ++i) onehot(i, labels[i]) = 1.0;
  Var logits = scale(select(onehot, phi, cos_t), cfg.scale);

  Var log_p = log(softmax_rows(logits));
  Var picked = mul(tape.leaf(onehot), log_p);
  Var loss = scale(sum_all(picked), -1.0 / b);
  return {loss, logits};
}

}  // namespace

Var aam_softmax_loss(Var embeddings, const std::vector<int>& labels,
                     Var class_weights, const AamConfig& cfg) {
  return aam_loss_and_logits(embeddings, labels, class_weights, cfg).first;
}

}  // namespace ad

std::pair<double, Matrix> aam_softmax_loss(const Matrix& embeddings,
                                           const std::vector<int>& labels,
                                           const Matrix& class_weights,
                                           const AamConfig& cfg) {
  ad::Tape tape;
  auto [loss, logits] = ad::aam_loss_and_logits(
      tape.leaf(embeddings), labels, tape.leaf(class_weights), cfg);
  return {loss.value()(0, 0), logits.value()};
}

// ---------------------------------------------------------------------------
// Schedules and batching

double lr_at(long long step, const ScheduleSpec& spec) {
  spec.validate();
  if (step < 0) throw std::invalid_argument("lr_at: negative step");
  constexpr double kPi = 3.141592653589793;
  if (spec.kind == ScheduleSpec::Kind::warm_restarts) {
    const double t = static_cast<double>(step % spec.period) /
                     static_cast<double>(spec.period);
    return spec.lr_min +
           0.5 * (spec.lr_max - spec.lr_min) * (1.0 + std::cos(kPi * t));
  }
  if (step == 0) return 0.0;
  if (step <= spec.warmup_steps) {
    const double ramp = spec.lr_max * static_cast<double>(step) /
                        static_cast<double>(spec.warmup_steps);
    return std::min(spec.lr_max, std::max(spec.lr_min, ramp));
  }
  if (step >= spec.total_steps) return spec.lr_min;
  const double t = static_cast<double>(step - spec.warmup_steps) /
                   static_cast<double>(spec.total_steps - spec.warmup_steps);
  return spec.lr_min +
         0.5 * (spec.lr_max - spec.lr_min) * (1.0 + std::cos(kPi * t));
}

std::vector<std::pair<std::string, std::string>> sample_batch(
    const std::vector<UtteranceRecord>& manifest, const BatchSpec& spec,
    unsigned rng_seed) {
  if (spec.batch_size < 1)
    throw std::invalid_argument("sample_batch: batch_size must be >= 1");
  if (manifest.empty())
    throw std::invalid_argument("sample_batch: empty manifest");

  // mt19937 with modulo draws keeps batches identical across toolchains.
  std::mt19937 rng(rng_seed);
  std::vector<std::pair<std::string, std::string>> batch;
  batch.reserve(spec.batch_size);

  if (!spec.distinct_speakers) {
    for (int i = 0; i < spec.batch_size; ++i) {
      const auto& r = manifest[rng() % manifest.size()];
      batch.emplace_back(r.utterance_id, r.speaker_id);
    }
    return batch;
  }

  std::vector<std::string> speakers;
  std::unordered_map<std::string, std::vector<std::size_t>> utts;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    auto [it, inserted] = utts.try_emplace(manifest[i].speaker_id);
    if (inserted) speakers.push_back(manifest[i].speaker_id);
    it->second.push_back(i);
  }
  if (static_cast<int>(speakers.size()) < spec.batch_size)
    throw std::invalid_argument(
        "sample_batch: " + std::to_string(speakers.size()) +
        " speakers cannot fill a distinct-speaker batch of " +
        std::to_string(spec.batch_size));

  for (int i = 0; i < spec.batch_size; ++i) {
    const std::size_t j = i + rng() % (speakers.size() - i);
    std::swap(speakers[i], speakers[j]);
    const auto& ids = utts[speakers[i]];
    batch.emplace_back(manifest[ids[rng() % ids.size()]].utterance_id,
                       speakers[i]);
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Optimizer

void Optimizer::step(ModelParams& params,
                     const std::unordered_map<std::string, Matrix>& grads,
                     double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (const auto& name : params.names()) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    Matrix& p = params.at(name);
    const Matrix& g = it->second;
    if (!p.same_shape(g))
      throw std::invalid_argument("optimizer: gradient shape mismatch for '" +
                                  name + "'");
    if (kind == Kind::sgd) {
      for (int i = 0; i < p.size(); ++i) p.data[i] -= lr * g.data[i];
      continue;
    }
    Matrix& m = m_.try_emplace(name, Matrix(p.rows, p.cols)).first->second;
    Matrix& v = v_.try_emplace(name, Matrix(p.rows, p.cols)).first->second;
    for (int i = 0; i < p.size(); ++i) {
      m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * g.data[i];
      v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * g.data[i] * g.data[i];
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      if (kind == Kind::adamw) p.data[i] -= lr * weight_decay * p.data[i];
      p.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Model spec serialization

int ModelSpec::embed_dim() const {
  return arch == "ecapa_tdnn" ? ecapa.embed_dim : conformer.embed_dim;
}

void ModelSpec::validate() const {
  if (arch == "mfa_conformer")
    conformer.validate();
  else if (arch == "ecapa_tdnn")
    ecapa.validate();
  else
    throw std::invalid_argument("unknown arch '" + arch + "'");
}

namespace {

std::string feature_kind_name(FeatureKind kind) {
  return kind == FeatureKind::mfcc ? "mfcc" : "log_mel";
}

FeatureKind feature_kind_from(const std::string& name) {
  if (name == "log_mel") return FeatureKind::log_mel;
  if (name == "mfcc") return FeatureKind::mfcc;
  throw std::invalid_argument("config: unknown feature kind '" + name + "'");
}

[[noreturn]] void key_fail(const std::string& key, const std::string& what) {
  throw std::invalid_argument("config: key '" + key + "' " + what);
}

void require_known_keys(const json& obj, const std::string& prefix,
                        const std::set<std::string>& allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw std::invalid_argument("config: unknown key '" + prefix +
                                  it.key() + "'");
}

double get_number(const json& obj, const std::string& prefix,
                  const std::string& key, double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number()) key_fail(prefix + key, "must be a number");
  return obj[key].get<double>();
}

long long get_integer(const json& obj, const std::string& prefix,
                      const std::string& key, long long fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number_integer())
    key_fail(prefix + key, "must be an integer");
  return obj[key].get<long long>();
}

std::string get_string(const json& obj, const std::string& prefix,
                       const std::string& key, const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_string()) key_fail(prefix + key, "must be a string");
  return obj[key].get<std::string>();
}

bool get_bool(const json& obj, const std::string& prefix,
              const std::string& key, bool fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_boolean()) key_fail(prefix + key, "must be a boolean");
  return obj[key].get<bool>();
}

ModelSpec model_spec_from(const json& root) {
  ModelSpec spec;
  spec.arch = get_string(root, "", "arch", spec.arch);
  spec.features =
      feature_kind_from(get_string(root, "", "features", "log_mel"));
  if (root.contains("model")) {
    const json& m = root["model"];
    if (!m.is_object()) key_fail("model", "must be an object");
    if (spec.arch == "mfa_conformer") {
      require_known_keys(m, "model.",
                         {"n_layers", "model_dim", "n_heads", "ff_units",
                          "conv_kernel", "embed_dim", "input_dim"});
      ConformerConfig& c = spec.conformer;
      c.n_layers = static_cast<int>(get_integer(m, "model.", "n_layers",
                                                c.n_layers));
      c.model_dim = static_cast<int>(get_integer(m, "model.", "model_dim",
                                                 c.model_dim));
      c.n_heads = static_cast<int>(get_integer(m, "model.", "n_heads",
                                               c.n_heads));
      c.ff_units = static_cast<int>(get_integer(m, "model.", "ff_units",
                                                c.ff_units));
      c.conv_kernel = static_cast<int>(get_integer(m, "model.", "conv_kernel",
                                                   c.conv_kernel));
      c.embed_dim = static_cast<int>(get_integer(m, "model.", "embed_dim",
                                                 c.embed_dim));
      c.input_dim = static_cast<int>(get_integer(m, "model.", "input_dim",
                                                 c.input_dim));
    } else if (spec.arch == "ecapa_tdnn") {
      require_known_keys(m, "model.",
                         {"channels", "n_blocks", "embed_dim", "input_dim"});
      EcapaConfig& c = spec.ecapa;
      c.channels = static_cast<int>(get_integer(m, "model.", "channels",
                                                c.channels));
      c.n_blocks = static_cast<int>(get_integer(m, "model.", "n_blocks",
                                                c.n_blocks));
      c.embed_dim = static_cast<int>(get_integer(m, "model.", "embed_dim",
                                                 c.embed_dim));
      c.input_dim = static_cast<int>(get_integer(m, "model.", "input_dim",
                                                 c.input_dim));
    }
  }
  spec.validate();
  return spec;
}

json model_spec_to_json(const ModelSpec& spec) {
  json m;
  if (spec.arch == "ecapa_tdnn") {
    m["channels"] = spec.ecapa.channels;
    m["n_blocks"] = spec.ecapa.n_blocks;
    m["embed_dim"] = spec.ecapa.embed_dim;
    m["input_dim"] = spec.ecapa.input_dim;
  } else {
    m["n_layers"] = spec.conformer.n_layers;
    m["model_dim"] = spec.conformer.model_dim;
    m["n_heads"] = spec.conformer.n_heads;
    m["ff_units"] = spec.conformer.ff_units;
    m["conv_kernel"] = spec.conformer.conv_kernel;
    m["embed_dim"] = spec.conformer.embed_dim;
    m["input_dim"] = spec.conformer.input_dim;
  }
  return json{{"arch", spec.arch},
              {"features", feature_kind_name(spec.features)},
              {"model", m}};
}

json parse_json_or_fail(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: not valid JSON: ") +
                                e.what());
  }
}

}  // namespace

std::string model_spec_json(const ModelSpec& spec) {
  return model_spec_to_json(spec).dump();
}

ModelSpec parse_model_spec(const std::string& json_text) {
  json root = parse_json_or_fail(json_text);
  if (!root.is_object())
    throw std::invalid_argument("config: top level must be an object");
  require_known_keys(root, "", {"arch", "features", "model"});
  return model_spec_from(root);
}

SpeakerEmbedding embed_waveform(const Waveform& wave,
                                const ModelParams& params,
                                const ModelSpec& spec) {
  Waveform w = wave.sample_rate == kFeatureRate
                   ? wave
                   : resample(wave, kFeatureRate);
  FeatureMatrix f = spec.features == FeatureKind::mfcc ? mfcc(w) : logmel(w);
  if (spec.arch == "ecapa_tdnn") return ecapa_embed(f, params, spec.ecapa);
  return mfa_conformer_embed(f, params, spec.conformer);
}

// ---------------------------------------------------------------------------
// Config file

TrainConfig parse_train_config(const std::string& json_text) {
  json root = parse_json_or_fail(json_text);
  if (!root.is_object())
    throw std::invalid_argument("config: top level must be an object");
  require_known_keys(
      root, "",
      {"arch", "features", "model", "data_manifest", "aam", "schedule",
       "batch", "optimizer", "weight_decay", "max_steps", "seed",
       "augment_prob", "noise_snr_min", "noise_snr_max", "checkpoint_every",
       "out_dir"});

  TrainConfig cfg;
  cfg.model = model_spec_from(root);

  if (!root.contains("data_manifest"))
    throw std::invalid_argument("config: missing key 'data_manifest'");
  cfg.data_manifest = get_string(root, "", "data_manifest", "");

  if (root.contains("aam")) {
    const json& a = root["aam"];
    if (!a.is_object()) key_fail("aam", "must be an object");
    require_known_keys(a, "aam.", {"margin", "scale"});
    cfg.aam.margin = get_number(a, "aam.", "margin", cfg.aam.margin);
    cfg.aam.scale = get_number(a, "aam.", "scale", cfg.aam.scale);
  }

  if (root.contains("schedule")) {
    const json& s = root["schedule"];
    if (!s.is_object()) key_fail("schedule", "must be an object");
    require_known_keys(s, "schedule.",
                       {"kind", "lr_max", "lr_min", "warmup_steps", "period",
                        "total_steps"});
    const std::string kind = get_string(s, "schedule.", "kind",
                                        "cosine_warmup");
    if (kind == "cosine_warmup")
      cfg.schedule.kind = ScheduleSpec::Kind::cosine_warmup;
    else if (kind == "warm_restarts")
      cfg.schedule.kind = ScheduleSpec::Kind::warm_restarts;
    else
      key_fail("schedule.kind", "must be cosine_warmup or warm_restarts");
    cfg.schedule.lr_max = get_number(s, "schedule.", "lr_max",
                                     cfg.schedule.lr_max);
    cfg.schedule.lr_min = get_number(s, "schedule.", "lr_min",
                                     cfg.schedule.lr_min);
    cfg.schedule.warmup_steps = get_integer(s, "schedule.", "warmup_steps",
                                            cfg.schedule.warmup_steps);
    cfg.schedule.period = get_integer(s, "schedule.", "period",
                                      cfg.schedule.period);
    cfg.schedule.total_steps = get_integer(s, "schedule.", "total_steps",
                                           cfg.schedule.total_steps);
  }

  if (root.contains("batch")) {
    const json& b = root["batch"];
    if (!b.is_object()) key_fail("batch", "must be an object");
    require_known_keys(b, "batch.",
                       {"batch_size", "distinct_speakers", "crop_seconds"});
    cfg.batch.batch_size = static_cast<int>(
        get_integer(b, "batch.", "batch_size", cfg.batch.batch_size));
    cfg.batch.distinct_speakers = get_bool(b, "batch.", "distinct_speakers",
                                           cfg.batch.distinct_speakers);
    cfg.batch.crop_seconds = get_number(b, "batch.", "crop_seconds",
                                        cfg.batch.crop_seconds);
  }

  cfg.optimizer = get_string(root, "", "optimizer", cfg.optimizer);
  if (cfg.optimizer != "sgd" && cfg.optimizer != "adam" &&
      cfg.optimizer != "adamw")
    key_fail("optimizer", "must be sgd, adam, or adamw");
  cfg.weight_decay = get_number(root, "", "weight_decay", cfg.weight_decay);
  cfg.max_steps = get_integer(root, "", "max_steps", cfg.max_steps);
  cfg.seed = static_cast<unsigned>(get_integer(root, "", "seed", cfg.seed));
  cfg.augment_prob = get_number(root, "", "augment_prob", cfg.augment_prob);
  cfg.noise_snr_min = get_number(root, "", "noise_snr_min", cfg.noise_snr_min);
  cfg.noise_snr_max = get_number(root, "", "noise_snr_max", cfg.noise_snr_max);
  cfg.checkpoint_every = get_integer(root, "", "checkpoint_every",
                                     cfg.checkpoint_every);
  cfg.out_dir = get_string(root, "", "out_dir", cfg.out_dir);

  if (cfg.max_steps < 1)
    key_fail("max_steps", "must be >= 1");
  if (cfg.augment_prob < 0.0 || cfg.augment_prob > 1.0)
    key_fail("augment_prob", "must lie in [0, 1]");
  return cfg;
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

std::vector<double> crop_or_tile(const std::vector<double>& samples,
                                 std::size_t len, std::mt19937& rng) {
  std::vector<double> out(len);
  if (samples.size() <= len) {
    for (std::size_t i = 0; i < len; ++i) out[i] = samples[i % samples.size()];
    return out;
  }
  const std::size_t start = rng() % (samples.size() - len + 1);
  std::copy(samples.begin() + start, samples.begin() + start + len,
            out.begin());
  return out;
}

double unit_uniform(std::mt19937& rng) {
  return (rng() & 0xFFFFFF) / 16777216.0;
}

}  // namespace

TrainResult train(const TrainConfig& cfg,
                  const std::vector<UtteranceRecord>& manifest) {
  cfg.model.validate();
  cfg.schedule.validate();
  if (manifest.empty()) throw std::invalid_argument("train: empty manifest");
  const std::size_t crop_len = static_cast<std::size_t>(
      std::lround(cfg.batch.crop_seconds * kFeatureRate));
  if (static_cast<int>(crop_len) < kWinSamples + 2 * kHopSamples)
    throw std::invalid_argument("train: crop_seconds too short for features");

  std::unordered_map<std::string, std::size_t> record_index;
  for (std::size_t i = 0; i < manifest.size(); ++i)
    record_index.try_emplace(manifest[i].utterance_id, i);

  TrainResult result;
  {
    std::set<std::string> distinct;
    for (const auto& r : manifest) distinct.insert(r.speaker_id);
    int next = 0;
    for (const auto& s : distinct) result.speaker_to_class[s] = next++;
    result.n_classes = next;
  }
  if (cfg.batch.distinct_speakers &&
      cfg.batch.batch_size > result.n_classes)
    throw std::invalid_argument(
        "train: batch_size exceeds the manifest's speaker count");

  AamConfig aam = cfg.aam;
  aam.n_classes = result.n_classes;
  aam.embed_dim = cfg.model.embed_dim();
  aam.validate();

  std::vector<TensorSpec> specs = cfg.model.arch == "ecapa_tdnn"
                                      ? tensor_specs(cfg.model.ecapa)
                                      : tensor_specs(cfg.model.conformer);
  specs.push_back({"aam.w", aam.n_classes, aam.embed_dim,
                   TensorSpec::Init::kaiming, aam.embed_dim});
  ModelParams params = init_params(specs, cfg.seed);
  result.config_json = model_spec_json(cfg.model);

  Optimizer opt;
  opt.kind = cfg.optimizer == "sgd"    ? Optimizer::Kind::sgd
             : cfg.optimizer == "adam" ? Optimizer::Kind::adam
                                       : Optimizer::Kind::adamw;
  opt.weight_decay = cfg.weight_decay;

  std::unordered_map<std::string, Waveform> cache;
  auto waveform_of = [&](const UtteranceRecord& r) -> const Waveform& {
    auto it = cache.find(r.utterance_id);
    if (it != cache.end()) return it->second;
    if (r.path.empty())
      throw std::runtime_error("train: record '" + r.utterance_id +
                               "' has no audio path");
    Waveform w = read_wav(r.path);
    if (w.sample_rate != kFeatureRate) w = resample(w, kFeatureRate);
    return cache.emplace(r.utterance_id, std::move(w)).first->second;
  };

  std::mt19937 master(cfg.seed);
  long long last_good = 0;
  char line[96];

  for (long long step = 1; step <= cfg.max_steps; ++step) {
    const double lr = lr_at(step, cfg.schedule);
    const unsigned batch_seed = static_cast<unsigned>(master());
    auto batch = sample_batch(manifest, cfg.batch, batch_seed);

    ad::Tape tape;
    TapeParams tp = lift(tape, params);
    std::vector<ad::Var> rows;
    std::vector<int> labels;
    rows.reserve(batch.size());
    for (const auto& [utt_id, speaker_id] : batch) {
      const UtteranceRecord& rec = manifest[record_index.at(utt_id)];
      const Waveform& full = waveform_of(rec);
      Waveform crop;
      crop.sample_rate = kFeatureRate;
      crop.samples = crop_or_tile(full.samples, crop_len, master);

      bool drop_bins = false;
      int drop_start = 0, drop_width = 0;
      if (unit_uniform(master) < cfg.augment_prob) {
        const bool can_drop = cfg.model.features == FeatureKind::log_mel;
        if (can_drop && master() % 2 == 0) {
          drop_width = 4 + static_cast<int>(master() % 9);
          drop_start = static_cast<int>(master() % (kNumMels - drop_width));
          drop_bins = true;
        } else {
          Waveform noise;
          noise.sample_rate = kFeatureRate;
          noise.samples.resize(crop.samples.size());
          for (auto& v : noise.samples) v = 2.0 * unit_uniform(master) - 1.0;
          const double snr =
              cfg.noise_snr_min +
              unit_uniform(master) * (cfg.noise_snr_max - cfg.noise_snr_min);
          crop = add_noise(crop, noise, snr);
        }
      }

      FeatureMatrix f = cfg.model.features == FeatureKind::mfcc ? mfcc(crop)
                                                                : logmel(crop);
      if (drop_bins) f = freq_drop(f, drop_start, drop_width);

      ad::Var x = tape.leaf(f.frames);
      rows.push_back(cfg.model.arch == "ecapa_tdnn"
                         ? ad::ecapa_embed(tp, x, cfg.model.ecapa)
                         : ad::mfa_conformer_embed(tp, x,
                                                   cfg.model.conformer));
      labels.push_back(result.speaker_to_class.at(speaker_id));
    }

    ad::Var embeddings = ad::concat_rows(rows);
    ad::Var loss =
        ad::aam_softmax_loss(embeddings, labels, tp.at("aam.w"), aam);
    const double loss_value = loss.value()(0, 0);
    if (!std::isfinite(loss_value))
      throw training_diverged("training diverged at step " +
                                  std::to_string(step) +
                                  " (last good step " +
                                  std::to_string(last_good) + ")",
                              last_good);

    tape.backward(loss);
    opt.step(params, collect_grads(tp), lr);

    std::snprintf(line, sizeof(line), "%lld\t%.10g\t%.10g\n", step, lr,
                  loss_value);
    result.metrics += line;
    if (step == 1) result.initial_loss = loss_value;
    result.final_loss = loss_value;
    last_good = step;

    if (cfg.checkpoint_every > 0 && !cfg.out_dir.empty() &&
        step % cfg.checkpoint_every == 0)
      save_checkpoint(cfg.out_dir + "/checkpoint_step" +
                          std::to_string(step) + ".gsrm",
                      result.config_json, params);
  }

  result.params = std::move(params);
  return result;
}

}  // namespace gsr
