#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stereosed/model.hpp"

namespace stereosed {

/// A trained model plus what is needed to run it on new audio and, optionally,
/// to resume training.
///
/// Binary layout (little-endian, version 1):
///   "SEDM" u32 version
///   str combination, str extraction (JSON text of the feature settings)
///   u32 blocks  { str name, u32 width }
///   u32 classes { str name }
///   u32 layers  { u32 size }
///   u32 dims, f64 mean[dims], f64 std[dims]
///   u64 count, f64 params[count]
///   u8 has_state, then when 1:
///     f64 current[count], u64 adam_step, u8 has_moments [f64 m[count], f64 v[count]],
///     i32 epoch, i32 best_epoch, f64 best_er, i32 epochs_since_improvement,
///     str rng_state
/// where str is u32 length followed by the bytes.
struct Checkpoint {
  std::string combination;
  std::string extraction;
  FeatureLayout layout;
  std::vector<std::string> class_order;
  Scaler scaler;
  NetworkParams params;
  std::optional<TrainState> train_state;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace stereosed
