#include "gsr/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace gsr {

namespace {

constexpr uint32_t kFormatVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff),
               static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

float get_f32(std::istream& in, const std::string& path) {
  const uint32_t bits = get_u32(in, path);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& config_json,
                     const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);

  out.write("GSRM", 4);
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<uint32_t>(config_json.size()));
  out.write(config_json.data(),
            static_cast<std::streamsize>(config_json.size()));
  put_u32(out, static_cast<uint32_t>(params.names().size()));

  for (const auto& name : params.names()) {
    const Matrix& m = params.at(name);
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<uint32_t>(m.rows));
    put_u32(out, static_cast<uint32_t>(m.cols));
    for (double v : m.data) put_f32(out, static_cast<float>(v));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);

  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "GSRM", 4) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path);
  const uint32_t version = get_u32(in, path);
  if (version != kFormatVersion)
    throw std::runtime_error("unsupported checkpoint version: " + path);

  Checkpoint ckpt;
  const uint32_t config_len = get_u32(in, path);
  ckpt.config_json.resize(config_len);
  in.read(ckpt.config_json.data(), config_len);
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);

  const uint32_t n_tensors = get_u32(in, path);
  for (uint32_t i = 0; i < n_tensors; ++i) {
    const uint32_t name_len = get_u32(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const uint32_t rows = get_u32(in, path);
    const uint32_t cols = get_u32(in, path);
    Matrix m(static_cast<int>(rows), static_cast<int>(cols));
    for (auto& v : m.data) v = get_f32(in, path);
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    ckpt.params.add(name, std::move(m));
  }
  return ckpt;
}

}  // namespace gsr
