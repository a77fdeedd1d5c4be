#include "deviloc/fixtures.h"

#include <fstream>

#include "deviloc/colmap_io.h"
#include "deviloc/config.h"
#include "deviloc/error.h"
#include "deviloc/hashing.h"
#include "deviloc/matching.h"
#include "deviloc/pipeline.h"

namespace deviloc {
namespace {

void WriteText(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) Throw(ErrorCode::kIoError, "cannot write " + path.string());
  out << text;
  if (!out) Throw(ErrorCode::kIoError, "failed writing " + path.string());
}

}  // namespace

std::vector<std::string> WriteSceneBundle(const SyntheticScene& scene,
                                          const std::filesystem::path& dir, int topk) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) Throw(ErrorCode::kIoError, "cannot create " + dir.string());
  WriteText(dir / "scene.json", SceneConfigToJson(scene.config).dump(2) + "\n");
  WriteColmapText(scene.model, dir / "colmap");
  WriteRetrieval(SyntheticRetrieval(scene, scene.QueryIds(), topk), dir / "pairs.txt");
  std::map<std::string, CameraIntrinsics> intrinsics;
  std::string gt;
  for (const int id : scene.QueryIds()) {
    const SyntheticView& view = scene.View(id);
    intrinsics[view.name] = scene.intrinsics();
    gt += FormatPoseLine(view.name, view.pose) + "\n";
  }
  WriteText(dir / "queries.txt", FormatQueryIntrinsics(intrinsics));
  WriteText(dir / "gt_poses.txt", gt);
  return {"scene.json",  "colmap/cameras.txt", "colmap/images.txt", "colmap/points3D.txt",
          "pairs.txt",   "queries.txt",        "gt_poses.txt"};
}

nlohmann::json FixtureManifest::ToJson() const {
  nlohmann::json files = nlohmann::json::array();
  for (const FixtureFile& f : this->files) {
    files.push_back({{"name", f.name}, {"path", f.path}, {"sha256", f.sha256}});
  }
  return {{"seed", seed}, {"files", files}};
}

FixtureManifest FixtureManifest::FromJson(const nlohmann::json& j) {
  FixtureManifest m;
  try {
    m.seed = j.at("seed").get<uint64_t>();
    for (const auto& f : j.at("files")) {
      m.files.push_back({f.at("name").get<std::string>(), f.at("path").get<std::string>(),
                         f.at("sha256").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    Throw(ErrorCode::kConfigError, std::string("malformed fixture manifest: ") + e.what());
  }
  return m;
}

SyntheticSceneConfig FixtureSceneConfig(uint64_t seed) {
  SyntheticSceneConfig c;
  c.num_points = 200;
  c.num_cameras = 8;
  c.num_queries = 3;
  c.width = 320;
  c.height = 240;
  c.focal = 250.0;
  c.seed = seed;
  c.query_seed = seed + 1;
  return c;
}

FixtureManifest MakeFixtures(uint64_t seed, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) Throw(ErrorCode::kIoError, "cannot create " + dir.string());

  const SyntheticSceneConfig scene_config = FixtureSceneConfig(seed);
  const SyntheticScene scene = GenerateSyntheticScene(scene_config);

  FixtureManifest manifest;
  manifest.seed = seed;
  auto add = [&](const std::string& name, const std::string& relative) {
    manifest.files.push_back({name, relative, Sha256File(dir / relative)});
  };

  const std::vector<std::string> written = WriteSceneBundle(scene, dir, 3);
  const char* kNames[] = {"scene_config",    "colmap_cameras",   "colmap_images",
                          "colmap_points3d", "retrieval_pairs",  "query_intrinsics",
                          "ground_truth_poses"};
  for (size_t i = 0; i < written.size(); ++i) add(kNames[i], written[i]);
  const RetrievalList retrieval = SyntheticRetrieval(scene, scene.QueryIds(), 3);

  SyntheticMatchConfig match;
  match.max_matches = 48;
  match.feature_channels = 4;
  match.feature_stride = 32.0;
  std::vector<MatchSet> sets;
  for (const auto& [query, refs] : retrieval.queries) {
    const int query_id = scene.ViewByName(query).view_id;
    for (const std::string& ref : refs) {
      const int ref_id = scene.model.ImageByName(ref).image_id;
      sets.push_back(SyntheticMatch(scene, query_id, ref_id, match,
                                    SyntheticFeatureMap(scene, ref_id, match, false)));
    }
  }
  DumpMatches(sets, dir / "matches.txt");
  add("match_dump", "matches.txt");

  WriteText(dir / "manifest.json", manifest.ToJson().dump(2) + "\n");
  return manifest;
}

std::vector<std::string> VerifyFixtures(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) Throw(ErrorCode::kIoError, "cannot read " + (dir / "manifest.json").string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    Throw(ErrorCode::kConfigError, std::string("malformed fixture manifest: ") + e.what());
  }
  std::vector<std::string> bad;
  for (const FixtureFile& f : FixtureManifest::FromJson(j).files) {
    const std::filesystem::path path = dir / f.path;
    if (!std::filesystem::exists(path) || Sha256File(path) != f.sha256) bad.push_back(f.name);
  }
  return bad;
}

}  // namespace deviloc
