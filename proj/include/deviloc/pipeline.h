#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "deviloc/error.h"
#include "deviloc/matching.h"
#include "deviloc/pin.h"
#include "deviloc/pose_solver.h"
#include "deviloc/scene.h"
#include "deviloc/synthetic_scene.h"

namespace deviloc {

// Ordered reference names per query, in the order queries first appear.
struct RetrievalList {
  std::vector<std::pair<std::string, std::vector<std::string>>> queries;

  const std::vector<std::string>* Find(const std::string& query_name) const;
  size_t NumPairs() const;
};

// Pairs file: "QUERY_NAME REF_NAME" per line, '#' comments and blank lines
// skipped. Keeps the first k references of each query. Throws ParseError on
// malformed lines and kUnknownImage naming every reference missing from the
// scene.
RetrievalList LoadRetrieval(const std::filesystem::path& path,
                            const SceneModel& scene, int k);
// Top-k database images by co-visible ground-truth point count.
RetrievalList SyntheticRetrieval(const SyntheticScene& scene,
                                 const std::vector<int>& query_ids, int k);
std::string FormatRetrieval(const RetrievalList& list);
void WriteRetrieval(const RetrievalList& list, const std::filesystem::path& path);

// Query intrinsics file, one line per query:
//   NAME PINHOLE W H FX FY CX CY   or   NAME SIMPLE_PINHOLE W H F CX CY
std::map<std::string, CameraIntrinsics> LoadQueryIntrinsics(
    const std::filesystem::path& path);
std::string FormatQueryIntrinsics(const std::map<std::string, CameraIntrinsics>& queries);

struct MatchStats {
  int raw_2d2d = 0;       // matcher correspondences over all pairs
  int pre_filter = 0;     // 2D-3D matches before the confidence filter
  int post_filter = 0;    // after keeping c > tau
  int post_cpa = 0;       // aggregated matches handed to PnP
  int pairs_used = 0;
  int pairs_skipped = 0;
};

struct LocalizationResult {
  std::string query_name;
  std::optional<PoseEstimate> estimate;
  std::optional<ErrorCode> failure;
  std::string failure_message;
  MatchStats stats;
  std::vector<std::string> warnings;
  double wall_time = 0.0;  // seconds

  bool ok() const { return estimate.has_value(); }
  double inlier_ratio() const;
};

// Lifts the keypoints of one reference to scene points with confidences.
// Must be safe to call concurrently.
using PointPredictor = std::function<PinOutput(const Image& reference, const PinInput& input)>;
PointPredictor PinPredictor(const PinModel& model);
// Exact ray-cast depths of the synthetic surface with confidence 1 (0 and a
// NaN point on holes); isolates the geometric part of the pipeline.
PointPredictor OraclePredictor(const SyntheticScene& scene);

struct LocalizeOptions {
  double tau = 0.5;
  double s = 4.0;
  RansacConfig ransac;  // seed is mixed with the query name per query
  bool parallel = true;  // per-pair inference with OpenMP
};

// Matcher -> observed points -> PIN per reference pair, then confidence
// filter and aggregation over all pairs, then RANSAC PnP. Pairs without
// observations or matches are skipped with a warning; if every pair fails
// the call throws kAllPairsFailed. Too few matches or no RANSAC model
// become a failure entry rather than an exception.
LocalizationResult LocalizeQuery(const std::string& query_name,
                                 const CameraIntrinsics& intrinsics,
                                 const std::vector<std::string>& reference_names,
                                 const SceneModel& scene, const Matcher& matcher,
                                 const PointPredictor& predictor, const LocalizeOptions& options);

// Every query of the retrieval list; kAllPairsFailed is recorded as a
// failure entry here.
std::vector<LocalizationResult> LocalizeAll(
    const RetrievalList& retrieval,
    const std::map<std::string, CameraIntrinsics>& intrinsics,
    const SceneModel& scene, const Matcher& matcher, const PointPredictor& predictor,
    const LocalizeOptions& options);

// Pose file: "NAME QW QX QY QZ TX TY TZ" (scene to camera, qw >= 0) for each
// success, failures listed as "NAME REASON" in path + ".failed".
void WritePoses(const std::vector<LocalizationResult>& results,
                const std::filesystem::path& path);
std::string FormatPoses(const std::vector<LocalizationResult>& results);
std::map<std::string, Pose> ReadPoses(const std::filesystem::path& path);
std::string FormatPoseLine(const std::string& name, const Pose& pose);
// Names from the sidecar; empty when it does not exist.
std::vector<std::string> ReadFailures(const std::filesystem::path& pose_path);

}  // namespace deviloc
