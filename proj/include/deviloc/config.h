#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "deviloc/matching.h"
#include "deviloc/pin.h"
#include "deviloc/pose_solver.h"
#include "deviloc/synthetic_scene.h"
#include "deviloc/training.h"

namespace deviloc {

struct PipelineConfig {
  double tau = 0.5;
  double s = 4.0;
  int topk = 10;
  RansacConfig ransac;  // threshold 20 px by default
  uint64_t seed = 0;
  // (translation, rotation in degrees) pairs; recall needs both strictly
  // below the thresholds.
  std::vector<std::pair<double, double>> recall_thresholds = {
      {0.25, 2.0}, {0.5, 5.0}, {5.0, 10.0}};
  std::vector<double> auc_thresholds = {2.0, 5.0, 10.0};

  void Validate() const;
};

// Everything a run can be configured with. Files are either JSON objects
// with one sub-object per section, or "section.key = value" lines ('#'
// comments allowed) where value is any JSON literal or a bare string.
struct AppConfig {
  SyntheticSceneConfig scene;
  SyntheticMatchConfig match;
  PinConfig pin;
  TrainingConfig training;
  PipelineConfig pipeline;
};

// Throws kConfigError on unknown keys, bad values or unreadable files.
AppConfig LoadConfig(const std::filesystem::path& path);
AppConfig ParseConfig(const std::string& text);
// Applies the keys present in `j` on top of `config`.
void ApplyConfig(const nlohmann::json& j, AppConfig* config);
nlohmann::json ConfigToJson(const AppConfig& config);

nlohmann::json SceneConfigToJson(const SyntheticSceneConfig& config);
SyntheticSceneConfig SceneConfigFromJson(const nlohmann::json& j);
nlohmann::json PinConfigToJson(const PinConfig& config);
PinConfig PinConfigFromJson(const nlohmann::json& j);

// Training samples drawn with the run's matcher settings and the training
// match cap.
SampleConfig TrainingSampleConfig(const AppConfig& config);

// Rebuilds a model from a checkpoint whose config blob is PinConfigToJson.
PinModel LoadPinCheckpoint(const std::filesystem::path& path);

// Small configuration that trains in minutes on one core: used by the
// acceptance run, the fixtures and the CLI defaults for `train`.
AppConfig DeskConfig();

}  // namespace deviloc
