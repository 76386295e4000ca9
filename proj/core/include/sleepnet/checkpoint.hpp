#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sleepnet/layers.hpp"

namespace sleepnet::train {

// Optimizer state as stored in a checkpoint: named slot arrays per parameter.
struct OptimizerState {
  std::string kind;  // "sgd" | "adam" | "adamax"
  double lr = 0.0;
  std::int64_t step = 0;
  // slot name (e.g. "m", "v"), one vector per parameter in checkpoint order.
  std::vector<std::pair<std::string, std::vector<std::vector<float>>>> slots;
};

// File layout: 8-byte magic, little-endian u32 header length, JSON header
// (format version, topology descriptor + digest, parameter offset table,
// optimizer state offsets, epoch, best metric), then one float32
// little-endian blob. Loading a checkpoint back into an identically built
// model reproduces forward outputs bitwise.
struct Checkpoint {
  int format_version = 1;
  std::string topology_json;
  std::string topology_digest;
  struct Entry {
    std::string name;
    Shape shape;
    bool trainable = true;
    std::int64_t offset = 0;  // in floats
  };
  std::vector<Entry> entries;
  std::vector<float> blob;
  std::optional<OptimizerState> optimizer;
  int epoch = 0;
  double best_metric = 0.0;

  // Copies stored values into the model's parameters; names and shapes must
  // match exactly.
  void apply_to(const nn::ParamList<float>& params) const;
};

void save_checkpoint(const std::filesystem::path& path, const std::string& topology_json,
                     const nn::ParamList<float>& params,
                     const OptimizerState* optimizer, int epoch, double best_metric);

Checkpoint load_checkpoint(const std::filesystem::path& path);

// Digest over parameter values, used to confirm bitwise restores.
std::string params_digest(const nn::ParamList<float>& params);

}  // namespace sleepnet::train
