#pragma once

#include <string>
#include <vector>

namespace gsr {

/// Audio with amplitudes nominally in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  double duration_sec() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

/// Reads a mono 16-bit PCM WAV file. Samples are normalized by 1/32768.
/// Throws std::runtime_error on malformed or unsupported files.
Waveform read_wav(const std::string& path);

/// Writes a mono 16-bit PCM WAV file; samples are clamped to [-1, 1).
void write_wav(const std::string& path, const Waveform& wave);

}  // namespace gsr
