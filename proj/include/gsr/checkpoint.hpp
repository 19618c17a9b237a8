#pragma once

#include <string>

#include "gsr/model.hpp"

namespace gsr {

/// A loaded model file: the architecture config (JSON text, uninterpreted at
/// this layer) plus the named tensors.
struct Checkpoint {
  std::string config_json;
  ModelParams params;
};

/// Writes magic "GSRM", format version, the config, then every tensor as
/// (name, rows, cols, row-major f32), all little-endian. Tensors are written
/// in registry order so save(load(f)) reproduces f byte for byte.
void save_checkpoint(const std::string& path, const std::string& config_json,
                     const ModelParams& params);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace gsr
