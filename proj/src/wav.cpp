#include "gsr/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace gsr {

namespace {

uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

void write_u32(std::ostream& out, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff),
               static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

void write_u16(std::ostream& out, uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  out.write(b, 2);
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open wav file: " + path);

  char riff[4], wave_tag[4];
  in.read(riff, 4);
  read_u32(in);  // overall size
  in.read(wave_tag, 4);
  if (!in || std::memcmp(riff, "RIFF", 4) != 0 ||
      std::memcmp(wave_tag, "WAVE", 4) != 0)
    throw std::runtime_error("not a RIFF/WAVE file: " + path);

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  Waveform out;

  while (in) {
    char id[4];
    in.read(id, 4);
    if (!in) break;
    const uint32_t chunk_size = read_u32(in);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      format = read_u16(in);
      channels = read_u16(in);
      rate = read_u32(in);
      read_u32(in);  // byte rate
      read_u16(in);  // block align
      bits = read_u16(in);
      if (chunk_size > 16) in.seekg(chunk_size - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw std::runtime_error("wav data before fmt: " + path);
      if (format != 1 || channels != 1 || bits != 16)
        throw std::runtime_error("unsupported wav (need mono PCM16): " + path);
      const uint32_t n = chunk_size / 2;
      out.samples.resize(n);
      std::vector<char> raw(chunk_size);
      in.read(raw.data(), chunk_size);
      if (!in) throw std::runtime_error("truncated wav data: " + path);
      for (uint32_t i = 0; i < n; ++i) {
        const int16_t s = static_cast<int16_t>(
            static_cast<unsigned char>(raw[2 * i]) |
            (static_cast<unsigned char>(raw[2 * i + 1]) << 8));
        out.samples[i] = s / 32768.0;
      }
      out.sample_rate = static_cast<int>(rate);
      return out;
    } else {
      in.seekg(chunk_size + (chunk_size & 1), std::ios::cur);
    }
  }
  throw std::runtime_error("wav file has no data chunk: " + path);
}

void write_wav(const std::string& path, const Waveform& wave) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write wav file: " + path);

  const uint32_t n = static_cast<uint32_t>(wave.samples.size());
  const uint32_t data_bytes = n * 2;
  const uint32_t rate = static_cast<uint32_t>(wave.sample_rate);

  out.write("RIFF", 4);
  write_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_u32(out, 16);
  write_u16(out, 1);   // PCM
  write_u16(out, 1);   // mono
  write_u32(out, rate);
  write_u32(out, rate * 2);
  write_u16(out, 2);   // block align
  write_u16(out, 16);  // bits
  out.write("data", 4);
  write_u32(out, data_bytes);

  for (uint32_t i = 0; i < n; ++i) {
    double v = std::clamp(wave.samples[i], -1.0, 32767.0 / 32768.0);
    const int16_t s = static_cast<int16_t>(std::lround(v * 32768.0));
    char b[2] = {static_cast<char>(s & 0xff),
                 static_cast<char>((s >> 8) & 0xff)};
    out.write(b, 2);
  }
  if (!out) throw std::runtime_error("failed writing wav file: " + path);
}

}  // namespace gsr
