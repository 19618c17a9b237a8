#include "gsr/frontend.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "gsr/dsp.hpp"

namespace gsr {

namespace {

constexpr double kPi = 3.14159265358979323846;

double sinc(double t) {
  if (t == 0.0) return 1.0;
  const double p = kPi * t;
  return std::sin(p) / p;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

// Triangular mel filterbank as (n_mels x n_bins) weights.
Matrix mel_filterbank(int n_mels, int n_fft, int sample_rate, double low_hz,
                      double high_hz) {
  const int n_bins = n_fft / 2 + 1;
  std::vector<double> corners(n_mels + 2);
  const double mel_lo = hz_to_mel(low_hz);
  const double mel_hi = hz_to_mel(high_hz);
  for (int i = 0; i < n_mels + 2; ++i)
    corners[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));

  Matrix fb(n_mels, n_bins);
  for (int m = 0; m < n_mels; ++m) {
    const double left = corners[m], centre = corners[m + 1],
                 right = corners[m + 2];
    for (int b = 0; b < n_bins; ++b) {
      const double freq = static_cast<double>(b) * sample_rate / n_fft;
      if (freq <= left || freq >= right) continue;
      fb(m, b) = freq <= centre ? (freq - left) / (centre - left)
                                : (right - freq) / (right - centre);
    }
  }
  return fb;
}

double mean_square(const std::vector<double>& x, size_t begin, size_t end) {
  double acc = 0.0;
  for (size_t i = begin; i < end; ++i) acc += x[i] * x[i];
  const size_t n = end > begin ? end - begin : 1;
  return acc / static_cast<double>(n);
}

double mean_square(const std::vector<double>& x) {
  return mean_square(x, 0, x.size());
}

}  // namespace

Waveform resample(const Waveform& wave, int target_rate) {
  if (wave.sample_rate <= 0 || target_rate <= 0)
    throw std::invalid_argument("resample: rates must be positive");
  if (wave.sample_rate == target_rate) return wave;

  const double ratio =
      static_cast<double>(target_rate) / wave.sample_rate;
  const int64_t in_len = static_cast<int64_t>(wave.samples.size());
  const int64_t out_len = std::llround(in_len * ratio);

  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(out_len);

  constexpr int kTaps = 16;  // per side
  const double cutoff = std::min(1.0, ratio);  // anti-alias on downsampling
  for (int64_t i = 0; i < out_len; ++i) {
    const double pos = static_cast<double>(i) / ratio;
    const int64_t centre = static_cast<int64_t>(std::floor(pos));
    double acc = 0.0, wsum = 0.0;
    for (int64_t j = centre - kTaps + 1; j <= centre + kTaps; ++j) {
      if (j < 0 || j >= in_len) continue;
      const double t = pos - static_cast<double>(j);
      const double w = cutoff * sinc(cutoff * t) *
                       (0.5 + 0.5 * std::cos(kPi * t / kTaps));
      wsum += w;
      acc += wave.samples[j] * w;
    }
    out.samples[i] = wsum != 0.0 ? acc / wsum : 0.0;
  }
  return out;
}

std::pair<Waveform, VadMask> vad_trim(const Waveform& wave,
                                      int aggressiveness) {
  if (wave.sample_rate != 8000 && wave.sample_rate != 16000)
    throw std::invalid_argument("vad_trim: sample rate must be 8 or 16 kHz");
  if (aggressiveness < 0 || aggressiveness > 3)
    throw std::invalid_argument("vad_trim: aggressiveness must be 0..3");

  const size_t hop = static_cast<size_t>(wave.sample_rate / 100);  // 10 ms
  const size_t len = wave.samples.size();
  const size_t n_frames = (len + hop - 1) / hop;
  if (n_frames == 0) return {Waveform{{}, wave.sample_rate}, {}};

  // Log energy per 10 ms hop; the last hop may be partial.
  std::vector<double> hop_energy(n_frames);
  for (size_t k = 0; k < n_frames; ++k) {
    const size_t begin = k * hop;
    const size_t end = std::min(len, begin + hop);
    hop_energy[k] = std::log(mean_square(wave.samples, begin, end) + 1e-12);
  }

  // Frame statistic: loudest hop inside the 30 ms window starting at hop k.
  std::vector<double> frame_stat(n_frames);
  for (size_t k = 0; k < n_frames; ++k) {
    double peak = hop_energy[k];
    for (size_t j = k + 1; j < std::min(n_frames, k + 3); ++j)
      peak = std::max(peak, hop_energy[j]);
    frame_stat[k] = peak;
  }

  // Threshold: aggressiveness percentile of the frame statistics, capped by
  // an absolute floor so uniformly loud audio is never trimmed.
  const int percentile = 10 * (aggressiveness + 1);
  std::vector<double> sorted = frame_stat;
  std::sort(sorted.begin(), sorted.end());
  const size_t rank = std::min(
      sorted.size() - 1,
      static_cast<size_t>(
          std::ceil(percentile / 100.0 * static_cast<double>(sorted.size())) -
          1));
  const double threshold = std::min(sorted[rank], std::log(1e-6));

  VadMask mask(n_frames, false);
  for (size_t k = 0; k < n_frames; ++k) {
    if (frame_stat[k] > threshold) {
      mask[k] = true;
      for (size_t j = k + 1; j < std::min(n_frames, k + 4); ++j)
        mask[j] = true;  // hangover
    }
  }
  return {apply_vad_mask(wave, mask), mask};
}

Waveform apply_vad_mask(const Waveform& wave, const VadMask& mask) {
  const size_t hop = static_cast<size_t>(wave.sample_rate / 100);
  const size_t len = wave.samples.size();
  Waveform out;
  out.sample_rate = wave.sample_rate;
  for (size_t k = 0; k < mask.size(); ++k) {
    if (!mask[k]) continue;
    const size_t begin = k * hop;
    const size_t end = std::min(len, begin + hop);
    out.samples.insert(out.samples.end(), wave.samples.begin() + begin,
                       wave.samples.begin() + end);
  }
  return out;
}

FeatureMatrix logmel(const Waveform& wave, int n_mels) {
  if (wave.sample_rate != kFeatureRate)
    throw std::invalid_argument("logmel: expected 16 kHz input");
  if (n_mels <= 0) throw std::invalid_argument("logmel: n_mels must be > 0");
  const int len = static_cast<int>(wave.samples.size());
  if (len < kWinSamples)
    throw std::invalid_argument("logmel: input shorter than one window");

  const int n_frames = (len - kWinSamples) / kHopSamples + 1;
  const int n_bins = kFftSize / 2 + 1;

  std::vector<double> window(kWinSamples);
  for (int i = 0; i < kWinSamples; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / kWinSamples);

  const Matrix fb = mel_filterbank(n_mels, kFftSize, kFeatureRate, kMelLowHz,
                                   kMelHighHz);

  FeatureMatrix out;
  out.frames = Matrix(n_frames, n_mels);
  out.kind = FeatureKind::log_mel;

  std::vector<std::complex<double>> buf(kFftSize);
  std::vector<double> power(n_bins);
  for (int t = 0; t < n_frames; ++t) {
    const int start = t * kHopSamples;
    for (int i = 0; i < kFftSize; ++i)
      buf[i] = {i < kWinSamples ? wave.samples[start + i] * window[i] : 0.0,
                0.0};
    fft(buf);
    for (int b = 0; b < n_bins; ++b) power[b] = std::norm(buf[b]);
    for (int m = 0; m < n_mels; ++m) {
      double energy = 0.0;
      for (int b = 0; b < n_bins; ++b) energy += fb(m, b) * power[b];
      out.frames(t, m) = std::log(energy + kLogFloor);
    }
  }
  return out;
}

FeatureMatrix mfcc(const Waveform& wave, int n_coeffs) {
  FeatureMatrix mel = logmel(wave, kNumMels);
  if (n_coeffs <= 0 || n_coeffs > kNumMels)
    throw std::invalid_argument("mfcc: n_coeffs must be in 1..80");
  FeatureMatrix out;
  out.frames = Matrix(mel.frames.rows, n_coeffs);
  out.kind = FeatureKind::mfcc;
  std::vector<double> row(kNumMels);
  for (int t = 0; t < mel.frames.rows; ++t) {
    dct2_row(&mel.frames.data[static_cast<size_t>(t) * kNumMels], row.data(),
             kNumMels);
    for (int c = 0; c < n_coeffs; ++c) out.frames(t, c) = row[c];
  }
  return out;
}

Waveform add_noise(const Waveform& wave, const Waveform& noise,
                   double snr_db) {
  if (wave.sample_rate != noise.sample_rate)
    throw std::invalid_argument("add_noise: sample rates differ");
  if (noise.samples.empty() || mean_square(noise.samples) == 0.0)
    throw std::invalid_argument("add_noise: noise has zero power");

  const size_t len = wave.samples.size();
  std::vector<double> tiled(len);
  for (size_t i = 0; i < len; ++i)
    tiled[i] = noise.samples[i % noise.samples.size()];

  const double p_signal = mean_square(wave.samples);
  const double p_noise = mean_square(tiled);
  if (p_noise == 0.0)
    throw std::invalid_argument("add_noise: noise has zero power over crop");
  const double scale =
      std::sqrt(p_signal / (p_noise * std::pow(10.0, snr_db / 10.0)));

  Waveform out = wave;
  for (size_t i = 0; i < len; ++i) out.samples[i] += scale * tiled[i];
  return out;
}

Waveform apply_rir(const Waveform& wave, const Waveform& rir) {
  if (rir.samples.empty())
    throw std::invalid_argument("apply_rir: empty impulse response");
  if (wave.sample_rate != rir.sample_rate)
    throw std::invalid_argument("apply_rir: sample rates differ");
  if (wave.samples.empty()) return wave;

  const size_t len = wave.samples.size();
  size_t n = 1;
  while (n < len + rir.samples.size() - 1) n <<= 1;
  std::vector<std::complex<double>> a(n), b(n);
  for (size_t i = 0; i < len; ++i) a[i] = {wave.samples[i], 0.0};
  for (size_t i = 0; i < rir.samples.size(); ++i) b[i] = {rir.samples[i], 0.0};
  fft(a);
  fft(b);
  for (size_t i = 0; i < n; ++i) a[i] *= b[i];
  fft(a, true);

  Waveform out;
  out.sample_rate = wave.sample_rate;
  out.samples.resize(len);
  double peak_in = 0.0, peak_out = 0.0;
  for (size_t i = 0; i < len; ++i) {
    out.samples[i] = a[i].real();
    peak_in = std::max(peak_in, std::abs(wave.samples[i]));
    peak_out = std::max(peak_out, std::abs(out.samples[i]));
  }
  if (peak_out > 0.0) {
    const double gain = peak_in / peak_out;
    for (auto& v : out.samples) v *= gain;
  }
  return out;
}

Waveform speed_perturb(const Waveform& wave, double factor) {
  if (factor <= 0.0)
    throw std::invalid_argument("speed_perturb: factor must be positive");
  if (factor == 1.0) return wave;

  // Resample to rate/factor, then relabel at the original rate: the audio
  // plays `factor` times faster and pitch scales with it.
  Waveform stretched = wave;
  stretched.sample_rate = static_cast<int>(std::lround(wave.sample_rate * factor));
  Waveform out = resample(stretched, wave.sample_rate);
  out.sample_rate = wave.sample_rate;
  // Length contract: round(len / factor), independent of rate rounding.
  const size_t want =
      static_cast<size_t>(std::llround(wave.samples.size() / factor));
  out.samples.resize(want, 0.0);
  return out;
}

FeatureMatrix freq_drop(const FeatureMatrix& features, int start_bin,
                        int width) {
  const int n_bins = features.frames.cols;
  if (start_bin < 0 || width < 0 || start_bin + width > n_bins)
    throw std::invalid_argument("freq_drop: band out of range");
  FeatureMatrix out = features;
  const int T = features.frames.rows;
  if (T == 0 || width == 0) return out;
  for (int b = start_bin; b < start_bin + width; ++b) {
    double mean = 0.0;
    for (int t = 0; t < T; ++t) mean += features.frames(t, b);
    mean /= T;
    for (int t = 0; t < T; ++t) out.frames(t, b) = mean;
  }
  return out;
}

void write_features(const std::string& path, const FeatureMatrix& features) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write features: " + path);
  out.write("GSRF", 4);
  const uint32_t t = static_cast<uint32_t>(features.frames.rows);
  const uint32_t f = static_cast<uint32_t>(features.frames.cols);
  auto put_u32 = [&out](uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff),
                 static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff),
                 static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
  };
  put_u32(t);
  put_u32(f);
  for (double v : features.frames.data) {
    const float fv = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&fv), 4);
  }
  if (!out) throw std::runtime_error("failed writing features: " + path);
}

FeatureMatrix read_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read features: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "GSRF", 4) != 0)
    throw std::runtime_error("bad feature file magic: " + path);
  auto get_u32 = [&in]() {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) |
           (static_cast<uint32_t>(b[3]) << 24);
  };
  const uint32_t t = get_u32();
  const uint32_t f = get_u32();
  FeatureMatrix out;
  out.frames = Matrix(static_cast<int>(t), static_cast<int>(f));
  for (auto& v : out.frames.data) {
    float fv = 0.0f;
    in.read(reinterpret_cast<char*>(&fv), 4);
    v = fv;
  }
  if (!in) throw std::runtime_error("truncated feature file: " + path);
  return out;
}

}  // namespace gsr
