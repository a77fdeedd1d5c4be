#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "deviloc/scene.h"

namespace deviloc {

// Reads a COLMAP text reconstruction. Only PINHOLE and SIMPLE_PINHOLE
// cameras are accepted (anything else throws kUnsupportedCameraModel).
// Observations with POINT3D_ID == -1 are dropped and track indices are
// remapped onto the kept observations. Malformed content throws ParseError
// with the 1-based line number.
SceneModel ParseColmapText(const std::filesystem::path& cameras_path,
                           const std::filesystem::path& images_path,
                           const std::filesystem::path& points3d_path);

// Convenience overload for a directory holding cameras.txt, images.txt and
// points3D.txt.
SceneModel ParseColmapTextDir(const std::filesystem::path& dir);

// Writes the three files into `dir` (created if needed). Doubles use the
// shortest representation that parses back to the same value.
void WriteColmapText(const SceneModel& scene, const std::filesystem::path& dir);

// Shortest round-trip decimal form; -0 is written as 0.
std::string FormatDouble(double value);

}  // namespace deviloc
