#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fatsim/params.hpp"

namespace fatsim {

// Binary layout, all integers little-endian:
//   "FATC" | u32 version | u32 tensor count
//   per tensor: u16 name length | name bytes | u8 rank | u32 dims[rank] | f64 data
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const ParameterSet& params);
ParameterSet read_checkpoint(std::istream& in);

void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path);
// The last layer is taken to be the head.* tensors when present, otherwise
// the final tensor.
ParameterSet load_checkpoint(const std::filesystem::path& path);

struct CheckpointEntry {
  std::string name;
  Shape shape;
};

// Reads only the header and per-tensor descriptors.
std::vector<CheckpointEntry> read_checkpoint_index(const std::filesystem::path& path);

}  // namespace fatsim
