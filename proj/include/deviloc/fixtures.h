#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "deviloc/synthetic_scene.h"

namespace deviloc {

struct FixtureFile {
  std::string name;
  std::string path;  // relative to the fixture directory
  std::string sha256;
};

struct FixtureManifest {
  uint64_t seed = 0;
  std::vector<FixtureFile> files;

  nlohmann::json ToJson() const;
  static FixtureManifest FromJson(const nlohmann::json& j);
};

// Writes scene.json, colmap/, pairs.txt (top-k co-visible references),
// queries.txt and gt_poses.txt for a synthetic scene; returns the written
// paths relative to `dir`.
std::vector<std::string> WriteSceneBundle(const SyntheticScene& scene,
                                          const std::filesystem::path& dir, int topk);

// Scene used for the committed fixtures: small enough that the match dump
// stays a few hundred kilobytes.
SyntheticSceneConfig FixtureSceneConfig(uint64_t seed);

// Writes into `dir`:
//   scene.json           generator config of the synthetic scene
//   colmap/              cameras.txt, images.txt, points3D.txt
//   pairs.txt            top-3 co-visible references per query
//   queries.txt          query intrinsics
//   gt_poses.txt         ground-truth query poses
//   matches.txt          oracle match dump for every pair (no noise)
//   manifest.json        name, path and sha256 of each file above, and the seed
// Single-threaded; output is byte-identical for a given seed.
FixtureManifest MakeFixtures(uint64_t seed, const std::filesystem::path& dir);

// Recomputes every checksum; returns the names that do not match.
std::vector<std::string> VerifyFixtures(const std::filesystem::path& dir);

}  // namespace deviloc
