#pragma once

// Single-file binary checkpoint:
//
//   "SPNRCKPT" | version (1 byte) | payload | crc32(everything before) (4 bytes)
//
// The payload holds the seed, the run configuration as key/value text, the
// vocabulary, the shipped class descriptions and every parameter tensor
// (name, frozen flag, rows, cols, raw doubles) in model order. Integers and
// doubles are stored little-endian.

#include "spanner/config.hpp"
#include "spanner/model.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace spanner {

inline constexpr std::uint8_t kCheckpointVersion = 1;

struct Checkpoint {
  SpanNerModel model;
  TrainConfig train;
};

std::string serialize_checkpoint(const SpanNerModel& model, const TrainConfig& train);
void save_checkpoint(const SpanNerModel& model, const TrainConfig& train,
                     const std::filesystem::path& path);

// CheckpointError on bad magic, version mismatch, checksum failure,
// truncation or tensor shape mismatch. Never returns a partial model.
Checkpoint deserialize_checkpoint(const std::string& bytes);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies the tensors of `source` into `target` by position, checking names
// and shapes. CheckpointError naming the tensor on mismatch; `target` is left
// untouched on error.
void copy_parameters(const SpanNerModel& source, SpanNerModel& target);

}  // namespace spanner
