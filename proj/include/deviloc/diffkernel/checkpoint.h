#pragma once

#include <filesystem>
#include <string>

#include "deviloc/diffkernel/tape.h"

namespace deviloc::dk {

// Binary layout (little-endian):
//   "DVLCKPT\0" | u32 version | u64 config length | config bytes (JSON)
//   | u64 tensor count | per tensor: u32 name length, name, u64 rows,
//   u64 cols, rows*cols doubles in row-major order
// The manifest is text: a header line "checkpoint <file sha256>" followed by
// one line per tensor "NAME ROWS COLS SHA256" (hash of the tensor bytes).
inline constexpr uint32_t kCheckpointVersion = 1;

void SaveCheckpoint(const ParameterSet& params, const std::string& config_json,
                    const std::filesystem::path& path);
// Writes `path` and `path` + ".manifest".
void SaveCheckpointWithManifest(const ParameterSet& params,
                                const std::string& config_json,
                                const std::filesystem::path& path);

struct Checkpoint {
  std::string config_json;
  ParameterSet params;
};
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

// Copies tensor values into an existing set; names and shapes must agree.
void LoadInto(const ParameterSet& source, ParameterSet* target);

std::string FormatManifest(const ParameterSet& params,
                           const std::string& file_sha256);

}  // namespace deviloc::dk
