#pragma once

// Named-tensor archive (little-endian):
//   "FFCK" | version u32 (=1) | count u32
//   count x { name_len u16 | name (UTF-8) | rank u8 | dims u32[rank] | f32[prod(dims)] }
//   metadata: UTF-8 JSON text running to the end of the file

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "forensicflow/layers.hpp"

namespace ff {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

struct Checkpoint {
  std::vector<CheckpointEntry> entries;
  std::string metadata = "{}";
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError on bad magic, version, truncation or a dims/payload mismatch.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws IoError when the file cannot be read, FormatError when it is not a checkpoint.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Snapshot of every registered parameter, in registry order.
Checkpoint snapshot(const ParamRegistry& registry, std::string metadata);
/// Copies values into `registry`. Throws IntegrityError unless the names and
/// shapes match one-to-one.
void restore(ParamRegistry& registry, const Checkpoint& ckpt);

}  // namespace ff
