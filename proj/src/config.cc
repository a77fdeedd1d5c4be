#include "deviloc/config.h"

#include <fstream>
#include <sstream>

#include "deviloc/diffkernel/checkpoint.h"
#include "deviloc/error.h"

namespace deviloc {
namespace {

using nlohmann::json;

// Reads `section[key]` into `value` when present and removes it, so the
// keys left over afterwards are unknown.
template <typename T>
void Take(json& section, const char* key, T* value, const std::string& where) {
  const auto it = section.find(key);
  if (it == section.end()) return;
  try {
    *value = it->get<T>();
  } catch (const json::exception&) {
    Throw(ErrorCode::kConfigError, "bad value for " + where + "." + key + ": " +
                                       it->dump());
  }
  section.erase(it);
}

void RejectLeftovers(const json& section, const std::string& where) {
  if (!section.empty()) {
    Throw(ErrorCode::kConfigError, "unknown key " + where + "." + section.begin().key());
  }
}

json SectionOf(const json& j, const char* name) {
  const auto it = j.find(name);
  if (it == j.end()) return json::object();
  if (!it->is_object()) {
    Throw(ErrorCode::kConfigError, std::string("section ") + name + " must be an object");
  }
  return *it;
}

void ApplyScene(json s, SyntheticSceneConfig* c) {
  const std::string w = "scene";
  Take(s, "num_points", &c->num_points, w);
  Take(s, "num_cameras", &c->num_cameras, w);
  Take(s, "num_queries", &c->num_queries, w);
  Take(s, "box_extent", &c->box_extent, w);
  Take(s, "pixel_noise", &c->pixel_noise, w);
  Take(s, "outlier_fraction", &c->outlier_fraction, w);
  Take(s, "seed", &c->seed, w);
  Take(s, "query_seed", &c->query_seed, w);
  Take(s, "width", &c->width, w);
  Take(s, "height", &c->height, w);
  Take(s, "focal", &c->focal, w);
  Take(s, "camera_distance", &c->camera_distance, w);
  Take(s, "min_elevation_deg", &c->min_elevation_deg, w);
  Take(s, "max_elevation_deg", &c->max_elevation_deg, w);
  Take(s, "terrain_amplitude", &c->terrain_amplitude, w);
  Take(s, "point_keep_fraction", &c->point_keep_fraction, w);
  RejectLeftovers(s, w);
}

void ApplyMatch(json s, SyntheticMatchConfig* c) {
  const std::string w = "match";
  Take(s, "pixel_noise", &c->pixel_noise, w);
  Take(s, "outlier_fraction", &c->outlier_fraction, w);
  Take(s, "grid_step", &c->grid_step, w);
  Take(s, "max_matches", &c->max_matches, w);
  Take(s, "feature_channels", &c->feature_channels, w);
  Take(s, "feature_stride", &c->feature_stride, w);
  Take(s, "feature_noise", &c->feature_noise, w);
  Take(s, "outlier_min_distance", &c->outlier_min_distance, w);
  RejectLeftovers(s, w);
}

void ApplyPin(json s, PinConfig* c) {
  const std::string w = "pin";
  Take(s, "dim", &c->dim, w);
  Take(s, "feature_channels", &c->feature_channels, w);
  Take(s, "heads", &c->heads, w);
  Take(s, "geometric_layers", &c->geometric_layers, w);
  Take(s, "visual_pairs", &c->visual_pairs, w);
  Take(s, "encoder_layers", &c->encoder_layers, w);
  Take(s, "head_layers", &c->head_layers, w);
  Take(s, "max_observed", &c->max_observed, w);
  Take(s, "seed", &c->seed, w);
  RejectLeftovers(s, w);
}

void ApplyTraining(json s, TrainingConfig* c) {
  const std::string w = "training";
  Take(s, "lr", &c->lr, w);
  Take(s, "batch", &c->batch, w);
  Take(s, "epochs", &c->epochs, w);
  Take(s, "max_steps", &c->max_steps, w);
  Take(s, "lambda", &c->lambda, w);
  Take(s, "theta", &c->theta, w);
  Take(s, "tau", &c->tau, w);
  Take(s, "s", &c->s, w);
  Take(s, "num_refs", &c->num_refs, w);
  Take(s, "max_matches", &c->max_matches, w);
  Take(s, "weight_decay", &c->weight_decay, w);
  Take(s, "target_point_loss", &c->target_point_loss, w);
  Take(s, "seed", &c->seed, w);
  RejectLeftovers(s, w);
}

void ApplyPipeline(json s, PipelineConfig* c) {
  const std::string w = "pipeline";
  Take(s, "tau", &c->tau, w);
  Take(s, "s", &c->s, w);
  Take(s, "topk", &c->topk, w);
  Take(s, "ransac_threshold", &c->ransac.threshold, w);
  Take(s, "ransac_max_iterations", &c->ransac.max_iterations, w);
  Take(s, "ransac_confidence", &c->ransac.confidence, w);
  Take(s, "seed", &c->seed, w);
  Take(s, "recall_thresholds", &c->recall_thresholds, w);
  Take(s, "auc_thresholds", &c->auc_thresholds, w);
  RejectLeftovers(s, w);
}

json ParseKeyValue(const std::string& text) {
  json root = json::object();
  std::istringstream in(text);
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      Throw(ErrorCode::kConfigError,
            "config line " + std::to_string(line_number) + ": expected key = value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string raw = trim(line.substr(eq + 1));
    const auto dot = key.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 == key.size()) {
      Throw(ErrorCode::kConfigError, "config line " + std::to_string(line_number) +
                                         ": key must be section.name, got " + key);
    }
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::exception&) {
      value = raw;
    }
    root[key.substr(0, dot)][key.substr(dot + 1)] = value;
  }
  return root;
}

}  // namespace

void PipelineConfig::Validate() const {
  if (!(tau >= 0.0 && tau < 1.0)) Throw(ErrorCode::kConfigError, "tau must lie in [0, 1)");
  if (!(s > 0.0)) Throw(ErrorCode::kConfigError, "s must be positive");
  if (topk < 1) Throw(ErrorCode::kConfigError, "topk must be >= 1");
  if (!(ransac.threshold > 0.0)) {
    Throw(ErrorCode::kConfigError, "RANSAC threshold must be positive");
  }
}

void ApplyConfig(const json& j, AppConfig* config) {
  if (!j.is_object()) Throw(ErrorCode::kConfigError, "config root must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    if (key != "scene" && key != "match" && key != "pin" && key != "training" &&
        key != "pipeline") {
      Throw(ErrorCode::kConfigError, "unknown config section " + key);
    }
  }
  ApplyScene(SectionOf(j, "scene"), &config->scene);
  ApplyMatch(SectionOf(j, "match"), &config->match);
  ApplyPin(SectionOf(j, "pin"), &config->pin);
  ApplyTraining(SectionOf(j, "training"), &config->training);
  ApplyPipeline(SectionOf(j, "pipeline"), &config->pipeline);
  config->scene.Validate();
  config->pin.Validate();
  config->training.Validate();
  config->pipeline.Validate();
}

AppConfig ParseConfig(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  json j;
  if (first != std::string::npos && text[first] == '{') {
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      Throw(ErrorCode::kConfigError, std::string("invalid JSON config: ") + e.what());
    }
  } else {
    j = ParseKeyValue(text);
  }
  AppConfig config = DeskConfig();
  ApplyConfig(j, &config);
  return config;
}

AppConfig LoadConfig(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) Throw(ErrorCode::kConfigError, "cannot read config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return ParseConfig(buffer.str());
}

json SceneConfigToJson(const SyntheticSceneConfig& c) {
  return {{"num_points", c.num_points},
          {"num_cameras", c.num_cameras},
          {"num_queries", c.num_queries},
          {"box_extent", c.box_extent},
          {"pixel_noise", c.pixel_noise},
          {"outlier_fraction", c.outlier_fraction},
          {"seed", c.seed},
          {"query_seed", c.query_seed},
          {"width", c.width},
          {"height", c.height},
          {"focal", c.focal},
          {"camera_distance", c.camera_distance},
          {"min_elevation_deg", c.min_elevation_deg},
          {"max_elevation_deg", c.max_elevation_deg},
          {"terrain_amplitude", c.terrain_amplitude},
          {"point_keep_fraction", c.point_keep_fraction}};
}

SyntheticSceneConfig SceneConfigFromJson(const json& j) {
  SyntheticSceneConfig c;
  ApplyScene(j, &c);
  c.Validate();
  return c;
}

json PinConfigToJson(const PinConfig& c) {
  return {{"dim", c.dim},
          {"feature_channels", c.feature_channels},
          {"heads", c.heads},
          {"geometric_layers", c.geometric_layers},
          {"visual_pairs", c.visual_pairs},
          {"encoder_layers", c.encoder_layers},
          {"head_layers", c.head_layers},
          {"max_observed", c.max_observed},
          {"seed", c.seed}};
}

PinConfig PinConfigFromJson(const json& j) {
  PinConfig c;
  ApplyPin(j, &c);
  c.Validate();
  return c;
}

json ConfigToJson(const AppConfig& config) {
  const SyntheticMatchConfig& m = config.match;
  const TrainingConfig& t = config.training;
  const PipelineConfig& p = config.pipeline;
  return {{"scene", SceneConfigToJson(config.scene)},
          {"match",
           {{"pixel_noise", m.pixel_noise},
            {"outlier_fraction", m.outlier_fraction},
            {"grid_step", m.grid_step},
            {"max_matches", m.max_matches},
            {"feature_channels", m.feature_channels},
            {"feature_stride", m.feature_stride},
            {"feature_noise", m.feature_noise},
            {"outlier_min_distance", m.outlier_min_distance}}},
          {"pin", PinConfigToJson(config.pin)},
          {"training",
           {{"lr", t.lr},
            {"batch", t.batch},
            {"epochs", t.epochs},
            {"max_steps", t.max_steps},
            {"lambda", t.lambda},
            {"theta", t.theta},
            {"tau", t.tau},
            {"s", t.s},
            {"num_refs", t.num_refs},
            {"max_matches", t.max_matches},
            {"weight_decay", t.weight_decay},
            {"target_point_loss", t.target_point_loss},
            {"seed", t.seed}}},
          {"pipeline",
           {{"tau", p.tau},
            {"s", p.s},
            {"topk", p.topk},
            {"ransac_threshold", p.ransac.threshold},
            {"ransac_max_iterations", p.ransac.max_iterations},
            {"ransac_confidence", p.ransac.confidence},
            {"seed", p.seed},
            {"recall_thresholds", p.recall_thresholds},
            {"auc_thresholds", p.auc_thresholds}}}};
}

AppConfig DeskConfig() {
  AppConfig c;
  c.scene.num_points = 200;
  c.scene.num_cameras = 12;
  c.scene.num_queries = 4;
  c.scene.seed = 1;
  // Localization sees every co-visible grid match; training caps each pair
  // to keep a step cheap.
  c.match.max_matches = 0;
  c.training.max_matches = 64;
  c.match.feature_channels = 16;
  c.pin.dim = 16;
  c.pin.feature_channels = 16;
  c.pin.visual_pairs = 1;
  // Every observed point of a reference: a capped subset keeps only the
  // image center and leaves the borders to extrapolation.
  c.pin.max_observed = 256;
  c.training.max_steps = 2000;
  return c;
}

SampleConfig TrainingSampleConfig(const AppConfig& config) {
  SampleConfig c;
  c.num_refs = config.training.num_refs;
  c.match = config.match;
  if (config.training.max_matches > 0) c.match.max_matches = config.training.max_matches;
  return c;
}

PinModel LoadPinCheckpoint(const std::filesystem::path& path) {
  dk::Checkpoint checkpoint = dk::LoadCheckpoint(path);
  PinConfig config;
  try {
    config = PinConfigFromJson(nlohmann::json::parse(checkpoint.config_json));
  } catch (const nlohmann::json::exception& e) {
    Throw(ErrorCode::kConfigError, "checkpoint config: " + std::string(e.what()));
  }
  PinModel model(config);
  dk::LoadInto(checkpoint.params, &model.params());
  return model;
}

}  // namespace deviloc
