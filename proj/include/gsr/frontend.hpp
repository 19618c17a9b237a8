#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gsr/matrix.hpp"
#include "gsr/wav.hpp"

namespace gsr {

enum class FeatureKind { log_mel, mfcc };

/// T x F feature frames; time runs down the rows.
struct FeatureMatrix {
  Matrix frames;
  double frame_shift = 0.010;
  FeatureKind kind = FeatureKind::log_mel;
};

/// Per-frame speech decisions on a 10 ms grid (frames span 30 ms).
using VadMask = std::vector<bool>;

/// One sampled augmentation recipe for a training utterance.
struct AugmentSpec {
  double noise_snr_db_min = 5.0;
  double noise_snr_db_max = 20.0;
  std::optional<Waveform> rir;
  double speed_factor = 1.0;  // one of {0.9, 1.0, 1.1}
  int freq_drop_start = 0;
  int freq_drop_width = 0;
};

// Fixed analysis parameters shared by the feature extractors.
inline constexpr int kFeatureRate = 16000;
inline constexpr int kWinSamples = 400;   // 25 ms at 16 kHz
inline constexpr int kHopSamples = 160;   // 10 ms at 16 kHz
inline constexpr int kFftSize = 512;
inline constexpr int kNumMels = 80;
inline constexpr double kMelLowHz = 20.0;
inline constexpr double kMelHighHz = 7600.0;
inline constexpr double kLogFloor = 1e-10;

/// Band-limited rate conversion (windowed-sinc, 16 taps per side, per-output
/// kernel normalization). Equal rates return the input unchanged.
Waveform resample(const Waveform& wave, int target_rate);

/// Energy VAD: 30 ms analysis windows on a 10 ms hop. A hop is kept when its
/// window's peak log energy clears min(percentile, absolute floor), widened by
/// a 3-frame hangover. Aggressiveness 0..3 maps to the 10/20/30/40th
/// percentile. Returns the concatenation of kept hops and the mask.
std::pair<Waveform, VadMask> vad_trim(const Waveform& wave,
                                      int aggressiveness);

/// Keeps the hops whose mask entry is true. An all-true mask is the identity.
Waveform apply_vad_mask(const Waveform& wave, const VadMask& mask);

/// 80-band log mel-spectrogram: 25 ms Hann window, 10 ms hop, 512-point FFT,
/// mel range 20 Hz to 7.6 kHz, natural log with a 1e-10 floor. 16 kHz only.
FeatureMatrix logmel(const Waveform& wave, int n_mels = kNumMels);

/// Full orthonormal DCT-II over each log-mel frame (invertible when
/// n_coeffs equals the mel count).
FeatureMatrix mfcc(const Waveform& wave, int n_coeffs = kNumMels);

/// Mixes in noise (tiled or cropped to the wave length) scaled to hit the
/// requested SNR exactly, measured over the full utterance.
Waveform add_noise(const Waveform& wave, const Waveform& noise,
                   double snr_db);

/// Full convolution with the impulse response, truncated to the input length
/// and renormalized to the input peak amplitude.
Waveform apply_rir(const Waveform& wave, const Waveform& rir);

/// Resampling-based speed change: duration scales by 1/factor and pitch by
/// factor. Factor 1 is the identity.
Waveform speed_perturb(const Waveform& wave, double factor);

/// Replaces mel bins [start_bin, start_bin + width) by each bin's
/// per-utterance mean; other entries are untouched.
FeatureMatrix freq_drop(const FeatureMatrix& features, int start_bin,
                        int width);

/// Binary feature dump: magic "GSRF", u32 T, u32 F, then row-major f32,
/// all little-endian.
void write_features(const std::string& path, const FeatureMatrix& features);
FeatureMatrix read_features(const std::string& path);

}  // namespace gsr
