#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "daunet/adam.hpp"
#include "daunet/model.hpp"

// Binary layout, all integers little-endian:
//   "DAUN" | u32 version | u64 n + n bytes JSON header |
//   u64 count | count x (u32 n + name | u32 rank | rank x u64 dim | f64 data)
// The header echoes the model config, epoch, metrics and Adam step count.
// Adam moments are stored as tensors named "adam.m.<param>" / "adam.v.<param>".
namespace daunet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model;
  std::vector<NamedTensor> tensors;  // model parameters, then buffers
  std::optional<AdamState> adam;
  int epoch = 0;
  std::map<std::string, double> metrics;
};

// Deep copy of the model state (and optimizer state when given).
Checkpoint make_checkpoint(const Model& model, const AdamState* adam, int epoch,
                           std::map<std::string, double> metrics = {});

std::string serialize_checkpoint(const Checkpoint& ckpt);
// Throws FormatError on bad magic, version, truncation or trailing bytes.
Checkpoint parse_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint tensors into a model. Throws ShapeError naming the
// parameter on a shape mismatch and FormatError on missing or unknown names;
// the model is left untouched on error.
void load_into(Model& model, const Checkpoint& ckpt);
Model restore_model(const Checkpoint& ckpt);

}  // namespace daunet
