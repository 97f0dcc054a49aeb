#pragma once

// Checkpoint container:
//
//   YYNET-CHECKPOINT 1
//   config <single-line JSON>
//   state <single-line JSON>
//   tensor <name> f32 <d0>x<d1>... <offset> <nbytes>
//   ...
//   end <payload bytes>
//   <payload: little-endian float32 arrays at the listed offsets>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "yynet/config_io.hpp"

namespace yynet {

struct TrainState {
  std::size_t epochs_completed = 0;
  std::uint64_t global_step = 0;
  double current_wd = 0.0;
  std::uint64_t adam_step = 0;
  bool ema_active = false;
  std::uint64_t ema_updates = 0;
  double last_test_accuracy = -1.0;  // < 0 when never evaluated
  double wall_time_s = 0.0;

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  RunConfig config;
  TrainState state;
  std::vector<CheckpointTensor> tensors;

  /// Tensor by name, nullptr when absent.
  const CheckpointTensor* find(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// FormatError on any structural problem.
Checkpoint decode_checkpoint(const std::string& bytes);

/// Writes to a temporary file and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace yynet
