#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>
#include <vector>

#include "gsr/dsp.hpp"
#include "gsr/frontend.hpp"
#include "gsr/wav.hpp"

using gsr::Waveform;

namespace {

constexpr double kPi = 3.14159265358979323846;

Waveform sine(double freq_hz, int rate, int n) {
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(n);
  for (int i = 0; i < n; ++i)
    w.samples[i] = 0.8 * std::sin(2.0 * kPi * freq_hz * i / rate);
  return w;
}

Waveform white_noise(int rate, int n, unsigned seed, double amp = 0.9) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> dist(-amp, amp);
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(n);
  for (auto& v : w.samples) v = dist(rng);
  return w;
}

double rms(const std::vector<double>& x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc / std::max<size_t>(1, x.size()));
}

// Frequency (Hz) of the strongest FFT bin.
double dominant_hz(const Waveform& w) {
  auto mags = gsr::magnitude_spectrum(w.samples);
  const size_t n = (mags.size() - 1) * 2;
  return gsr::peak_bin(mags) * static_cast<double>(w.sample_rate) /
         static_cast<double>(n);
}

}  // namespace

// --------------------------------------------------------------------------
// resample

TEST_CASE("resample at the same rate is the identity") {
  Waveform w = white_noise(16000, 1234, 1);
  Waveform r = gsr::resample(w, 16000);
  REQUIRE(r.samples.size() == w.samples.size());
  for (size_t i = 0; i < w.samples.size(); ++i)
    CHECK(r.samples[i] == w.samples[i]);
}

TEST_CASE("resample preserves constant signals") {
  Waveform w;
  w.sample_rate = 8000;
  w.samples.assign(4000, 0.37);
  Waveform r = gsr::resample(w, 16000);
  CHECK(r.sample_rate == 16000);
  CHECK(r.samples.size() == 8000);
  for (size_t i = 0; i < r.samples.size(); ++i)
    CHECK(r.samples[i] == doctest::Approx(0.37).epsilon(1e-3));
}

TEST_CASE("resample keeps a tone at its frequency") {
  Waveform w = sine(1000.0, 8000, 4096);
  Waveform r = gsr::resample(w, 16000);
  REQUIRE(r.samples.size() == 8192);
  const double hz = dominant_hz(r);
  const double bin_width = 16000.0 / 8192.0;
  CHECK(std::abs(hz - 1000.0) <= bin_width);
}

TEST_CASE("resample is idempotent at the target rate") {
  Waveform w = white_noise(8000, 3777, 2);
  Waveform once = gsr::resample(w, 16000);
  Waveform twice = gsr::resample(once, 16000);
  REQUIRE(twice.samples.size() == once.samples.size());
  for (size_t i = 0; i < once.samples.size(); ++i)
    CHECK(twice.samples[i] == once.samples[i]);
}

TEST_CASE("resample rejects non-positive rates") {
  Waveform w = sine(440.0, 16000, 160);
  CHECK_THROWS_AS(gsr::resample(w, 0), std::invalid_argument);
  CHECK_THROWS_AS(gsr::resample(w, -8000), std::invalid_argument);
}

// --------------------------------------------------------------------------
// vad

TEST_CASE("vad on digital silence returns nothing") {
  Waveform w;
  w.sample_rate = 16000;
  w.samples.assign(16000, 0.0);
  auto [trimmed, mask] = gsr::vad_trim(w, 2);
  CHECK(trimmed.samples.empty());
  for (bool m : mask) CHECK_FALSE(m);
  CHECK(mask.size() == 100);
}

TEST_CASE("vad keeps uniformly loud audio") {
  Waveform w = white_noise(16000, 16000, 3);
  auto [trimmed, mask] = gsr::vad_trim(w, 0);
  CHECK(trimmed.samples.size() >=
        static_cast<size_t>(0.9 * w.samples.size()));
}

TEST_CASE("vad trims a silent first half to about half duration") {
  const int n = 32000;
  Waveform w = white_noise(16000, n, 4);
  for (int i = 0; i < n / 2; ++i) w.samples[i] = 0.0;
  for (int aggressiveness : {0, 1, 2, 3}) {
    auto [trimmed, mask] = gsr::vad_trim(w, aggressiveness);
    const ptrdiff_t hop = 160;
    const ptrdiff_t kept = static_cast<ptrdiff_t>(trimmed.samples.size());
    CHECK(std::abs(kept - n / 2) <= 2 * hop);
  }
}

TEST_CASE("vad is idempotent on its own output") {
  auto run = [](const Waveform& w, int aggressiveness) {
    auto [first, mask1] = gsr::vad_trim(w, aggressiveness);
    auto [second, mask2] = gsr::vad_trim(first, aggressiveness);
    REQUIRE(second.samples.size() == first.samples.size());
    for (size_t i = 0; i < first.samples.size(); ++i)
      CHECK(second.samples[i] == first.samples[i]);
  };

  Waveform lead_silence = white_noise(16000, 32000, 5);
  for (int i = 0; i < 16000; ++i) lead_silence.samples[i] = 0.0;
  run(lead_silence, 1);

  Waveform gap = white_noise(16000, 48000, 6);
  for (int i = 16000; i < 16000 + 8 * 160; ++i) gap.samples[i] = 0.0;
  run(gap, 2);

  run(white_noise(8000, 8000, 7), 0);
}

TEST_CASE("vad rejects unsupported rates and levels") {
  Waveform w = white_noise(44100, 4410, 8);
  CHECK_THROWS_AS(gsr::vad_trim(w, 1), std::invalid_argument);
  Waveform ok = white_noise(16000, 1600, 9);
  CHECK_THROWS_AS(gsr::vad_trim(ok, 4), std::invalid_argument);
  CHECK_THROWS_AS(gsr::vad_trim(ok, -1), std::invalid_argument);
}

TEST_CASE("an all-true mask reproduces the input") {
  Waveform w = white_noise(16000, 16137, 10);  // ragged final hop
  gsr::VadMask mask((w.samples.size() + 159) / 160, true);
  Waveform back = gsr::apply_vad_mask(w, mask);
  REQUIRE(back.samples.size() == w.samples.size());
  for (size_t i = 0; i < w.samples.size(); ++i)
    CHECK(back.samples[i] == w.samples[i]);
}

// --------------------------------------------------------------------------
// features

TEST_CASE("logmel frame count and width") {
  Waveform w = white_noise(16000, 16000, 11);
  gsr::FeatureMatrix f = gsr::logmel(w);
  CHECK(f.frames.rows == 98);
  CHECK(f.frames.cols == 80);
  CHECK(f.frame_shift == doctest::Approx(0.010));
}

TEST_CASE("logmel of digital zero is the log floor everywhere") {
  Waveform w;
  w.sample_rate = 16000;
  w.samples.assign(8000, 0.0);
  gsr::FeatureMatrix f = gsr::logmel(w);
  const double expected = std::log(1e-10);
  for (double v : f.frames.data) CHECK(v == doctest::Approx(expected));
}

TEST_CASE("doubling the amplitude raises every bin by log 4") {
  Waveform w = white_noise(16000, 8000, 12, 0.4);
  Waveform loud = w;
  for (auto& v : loud.samples) v *= 2.0;
  gsr::FeatureMatrix a = gsr::logmel(w);
  gsr::FeatureMatrix b = gsr::logmel(loud);
  for (int i = 0; i < a.frames.size(); ++i)
    CHECK(b.frames.data[i] - a.frames.data[i] ==
          doctest::Approx(std::log(4.0)).epsilon(1e-6));
}

TEST_CASE("logmel shifts by one frame when audio shifts by one hop") {
  Waveform w = white_noise(16000, 8000, 13);
  Waveform shifted;
  shifted.sample_rate = 16000;
  shifted.samples.assign(160, 0.0);
  shifted.samples.insert(shifted.samples.end(), w.samples.begin(),
                         w.samples.end());
  gsr::FeatureMatrix a = gsr::logmel(w);
  gsr::FeatureMatrix b = gsr::logmel(shifted);
  REQUIRE(b.frames.rows == a.frames.rows + 1);
  for (int t = 0; t < a.frames.rows; ++t)
    for (int m = 0; m < 80; ++m)
      CHECK(b.frames(t + 1, m) == doctest::Approx(a.frames(t, m)).epsilon(1e-5));
}

TEST_CASE("logmel rejects short and wrong-rate input") {
  Waveform shorty = white_noise(16000, 399, 14);
  CHECK_THROWS_AS(gsr::logmel(shorty), std::invalid_argument);
  Waveform wrong = white_noise(8000, 8000, 15);
  CHECK_THROWS_AS(gsr::logmel(wrong), std::invalid_argument);
}

TEST_CASE("mfcc of silence concentrates in coefficient zero") {
  Waveform w;
  w.sample_rate = 16000;
  w.samples.assign(8000, 0.0);
  gsr::FeatureMatrix f = gsr::mfcc(w);
  const double c0 = std::sqrt(80.0) * std::log(1e-10);
  for (int t = 0; t < f.frames.rows; ++t) {
    CHECK(f.frames(t, 0) == doctest::Approx(c0));
    for (int c = 1; c < 80; ++c) CHECK(std::abs(f.frames(t, c)) < 1e-9);
  }
}

TEST_CASE("mfcc inverts back to logmel") {
  Waveform w = white_noise(16000, 16000, 16);
  gsr::FeatureMatrix mel = gsr::logmel(w);
  gsr::FeatureMatrix cep = gsr::mfcc(w);
  CHECK(cep.frames.rows == 98);
  CHECK(cep.frames.cols == 80);
  std::vector<double> back(80);
  for (int t = 0; t < cep.frames.rows; ++t) {
    gsr::dct3_row(&cep.frames.data[static_cast<size_t>(t) * 80], back.data(),
                  80);
    for (int m = 0; m < 80; ++m)
      CHECK(back[m] == doctest::Approx(mel.frames(t, m)).epsilon(1e-6));
  }
}

// --------------------------------------------------------------------------
// augmentation

TEST_CASE("very high snr leaves the signal unchanged") {
  Waveform w = white_noise(16000, 8000, 17);
  Waveform noise = white_noise(16000, 8000, 18);
  Waveform out = gsr::add_noise(w, noise, 100.0);
  std::vector<double> diff(w.samples.size());
  for (size_t i = 0; i < diff.size(); ++i)
    diff[i] = out.samples[i] - w.samples[i];
  CHECK(rms(diff) < 1e-4);
}

TEST_CASE("noise scale matches the closed form at 0 and 10 dB") {
  Waveform w, noise;
  w.sample_rate = noise.sample_rate = 16000;
  w.samples.resize(8000);
  noise.samples.resize(8000);
  for (int i = 0; i < 8000; ++i) {
    w.samples[i] = (i % 2) ? 1.0 : -1.0;      // unit power
    noise.samples[i] = (i % 4 < 2) ? 1.0 : -1.0;  // unit power
  }
  Waveform at0 = gsr::add_noise(w, noise, 0.0);
  Waveform at10 = gsr::add_noise(w, noise, 10.0);
  std::vector<double> d0(8000), d10(8000);
  for (int i = 0; i < 8000; ++i) {
    d0[i] = at0.samples[i] - w.samples[i];
    d10[i] = at10.samples[i] - w.samples[i];
  }
  CHECK(rms(d0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(rms(d10) == doctest::Approx(std::pow(10.0, -0.5)).epsilon(1e-6));
}

TEST_CASE("requested snr is achieved across the supported range") {
  std::mt19937 rng(19);
  std::uniform_real_distribution<double> snr_dist(-10.0, 40.0);
  for (int trial = 0; trial < 20; ++trial) {
    Waveform w = white_noise(16000, 4000, 100 + trial, 0.7);
    Waveform noise = white_noise(16000, 2719, 200 + trial, 0.3);
    const double snr = snr_dist(rng);
    Waveform out = gsr::add_noise(w, noise, snr);
    double p_signal = 0.0, p_noise = 0.0;
    for (size_t i = 0; i < w.samples.size(); ++i) {
      p_signal += w.samples[i] * w.samples[i];
      const double d = out.samples[i] - w.samples[i];
      p_noise += d * d;
    }
    const double measured = 10.0 * std::log10(p_signal / p_noise);
    CHECK(measured == doctest::Approx(snr).epsilon(0.0).scale(0.0).epsilon(1e-9));
    CHECK(std::abs(measured - snr) < 0.1);
  }
}

TEST_CASE("zero-power noise is rejected") {
  Waveform w = white_noise(16000, 1000, 20);
  Waveform silent;
  silent.sample_rate = 16000;
  silent.samples.assign(500, 0.0);
  CHECK_THROWS_AS(gsr::add_noise(w, silent, 10.0), std::invalid_argument);
}

TEST_CASE("unit impulse rir is the identity") {
  Waveform w = white_noise(16000, 3000, 21);
  Waveform rir;
  rir.sample_rate = 16000;
  rir.samples = {1.0};
  Waveform out = gsr::apply_rir(w, rir);
  REQUIRE(out.samples.size() == w.samples.size());
  for (size_t i = 0; i < w.samples.size(); ++i)
    CHECK(out.samples[i] == doctest::Approx(w.samples[i]).epsilon(1e-9));
}

TEST_CASE("delayed impulse shifts the signal") {
  Waveform w = white_noise(16000, 2000, 22);
  w.samples[10] = 1.0;  // keep the peak early so truncation keeps it
  const int delay = 7;
  Waveform rir;
  rir.sample_rate = 16000;
  rir.samples.assign(delay + 1, 0.0);
  rir.samples[delay] = 1.0;
  Waveform out = gsr::apply_rir(w, rir);
  for (size_t i = delay; i < w.samples.size(); ++i)
    CHECK(out.samples[i] ==
          doctest::Approx(w.samples[i - delay]).epsilon(1e-6));
}

TEST_CASE("rir convolution matches the direct form") {
  Waveform w = white_noise(16000, 500, 23);
  Waveform rir = white_noise(16000, 16, 24, 0.5);
  Waveform fast = gsr::apply_rir(w, rir);

  // Brute-force full convolution, truncation, peak renormalization.
  std::vector<double> direct(w.samples.size(), 0.0);
  for (size_t i = 0; i < w.samples.size(); ++i)
    for (size_t k = 0; k < rir.samples.size() && k <= i; ++k)
      direct[i] += w.samples[i - k] * rir.samples[k];
  double peak_in = 0.0, peak_out = 0.0;
  for (size_t i = 0; i < w.samples.size(); ++i) {
    peak_in = std::max(peak_in, std::abs(w.samples[i]));
    peak_out = std::max(peak_out, std::abs(direct[i]));
  }
  for (auto& v : direct) v *= peak_in / peak_out;

  for (size_t i = 0; i < direct.size(); ++i)
    CHECK(fast.samples[i] == doctest::Approx(direct[i]).epsilon(1e-6));
}

TEST_CASE("empty rir is rejected") {
  Waveform w = white_noise(16000, 100, 25);
  Waveform rir;
  rir.sample_rate = 16000;
  CHECK_THROWS_AS(gsr::apply_rir(w, rir), std::invalid_argument);
}

TEST_CASE("speed factor one is the identity") {
  Waveform w = white_noise(16000, 5000, 26);
  Waveform out = gsr::speed_perturb(w, 1.0);
  REQUIRE(out.samples.size() == w.samples.size());
  for (size_t i = 0; i < w.samples.size(); ++i)
    CHECK(out.samples[i] == w.samples[i]);
}

TEST_CASE("speed factor scales the length") {
  Waveform w = white_noise(16000, 11000, 27);
  CHECK(gsr::speed_perturb(w, 1.1).samples.size() == 10000);
  CHECK(gsr::speed_perturb(w, 0.9).samples.size() == 12222);
}

TEST_CASE("slowing down lowers the pitch") {
  Waveform w = sine(1000.0, 16000, 8192);
  Waveform slow = gsr::speed_perturb(w, 0.9);
  slow.samples.resize(8192);  // analyze an unpadded power-of-two chunk
  const double hz = dominant_hz(slow);
  const double bin_width = 16000.0 / 8192.0;
  CHECK(std::abs(hz - 900.0) <= bin_width);
}

TEST_CASE("freq_drop replaces only the requested band") {
  Waveform w = white_noise(16000, 8000, 28);
  gsr::FeatureMatrix f = gsr::logmel(w);

  gsr::FeatureMatrix same = gsr::freq_drop(f, 13, 0);
  for (int i = 0; i < f.frames.size(); ++i)
    CHECK(same.frames.data[i] == f.frames.data[i]);

  gsr::FeatureMatrix dropped = gsr::freq_drop(f, 10, 10);
  for (int b = 0; b < 80; ++b) {
    if (b >= 10 && b < 20) {
      double mean = 0.0;
      for (int t = 0; t < f.frames.rows; ++t) mean += f.frames(t, b);
      mean /= f.frames.rows;
      for (int t = 0; t < f.frames.rows; ++t)
        CHECK(dropped.frames(t, b) == doctest::Approx(mean));
    } else {
      for (int t = 0; t < f.frames.rows; ++t)
        CHECK(dropped.frames(t, b) == f.frames(t, b));
    }
  }

  gsr::FeatureMatrix all = gsr::freq_drop(f, 0, 80);
  for (int b = 0; b < 80; ++b)
    for (int t = 1; t < f.frames.rows; ++t)
      CHECK(all.frames(t, b) == doctest::Approx(all.frames(0, b)));

  CHECK_THROWS_AS(gsr::freq_drop(f, 75, 10), std::invalid_argument);
  CHECK_THROWS_AS(gsr::freq_drop(f, -1, 5), std::invalid_argument);
}

// --------------------------------------------------------------------------
// file formats

TEST_CASE("wav files round trip") {
  Waveform w = white_noise(16000, 4321, 29);
  const std::string path = "tmp_roundtrip.wav";
  gsr::write_wav(path, w);
  Waveform back = gsr::read_wav(path);
  CHECK(back.sample_rate == 16000);
  REQUIRE(back.samples.size() == w.samples.size());
  for (size_t i = 0; i < w.samples.size(); ++i)
    CHECK(std::abs(back.samples[i] - w.samples[i]) <= 1.0 / 32768.0);
  std::remove(path.c_str());
}

TEST_CASE("reading a non-wav file fails") {
  const std::string path = "tmp_not_a_wav.bin";
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("this is not audio", f);
    std::fclose(f);
  }
  CHECK_THROWS_AS(gsr::read_wav(path), std::runtime_error);
  CHECK_THROWS_AS(gsr::read_wav("no_such_file.wav"), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("feature files round trip") {
  Waveform w = white_noise(16000, 8000, 30);
  gsr::FeatureMatrix f = gsr::logmel(w);
  const std::string path = "tmp_features.gsrf";
  gsr::write_features(path, f);
  gsr::FeatureMatrix back = gsr::read_features(path);
  CHECK(back.frames.rows == f.frames.rows);
  CHECK(back.frames.cols == f.frames.cols);
  for (int i = 0; i < f.frames.size(); ++i)
    CHECK(back.frames.data[i] ==
          doctest::Approx(f.frames.data[i]).epsilon(1e-6));

  std::FILE* fh = std::fopen(path.c_str(), "rb");
  char magic[4];
  REQUIRE(std::fread(magic, 1, 4, fh) == 4);
  CHECK(magic[0] == 'G');
  CHECK(magic[1] == 'S');
  CHECK(magic[2] == 'R');
  CHECK(magic[3] == 'F');
  std::fclose(fh);
  std::remove(path.c_str());
}
