#pragma once

// Binary checkpoint layout, all integers little-endian:
//
//   magic      4 bytes  "XMCK"
//   version    u32      kCheckpointVersion
//   kind       u8       ModelKind
//   config     u32 length + UTF-8 JSON (model and optimizer settings)
//   count      u32      number of entries
//   entry      u32 name length + UTF-8 name, u8 rank, rank x u32 dims,
//              product(dims) x IEEE-754 binary64 values
//
// Externally converted weights can be imported by writing this layout with
// the matcher's parameter names.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "xmatch/matcher.hpp"

namespace xmatch {

inline constexpr char kCheckpointMagic[4] = {'X', 'M', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  ModelKind kind = ModelKind::kCross;
  std::string config_json;
  std::vector<CheckpointEntry> entries;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

Checkpoint checkpoint_from(const Matcher& model, const std::string& config_json);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies entry values into the model. Throws LoadError when the model kind
// differs or the entry names/shapes do not match the model's parameters
// one-for-one; the message names the first mismatch.
void apply_checkpoint(const Checkpoint& ckpt, Matcher& model);

// Rebuilds the model described by the header and loads its weights.
std::unique_ptr<Matcher> matcher_from_checkpoint(const Checkpoint& ckpt);

}  // namespace xmatch
