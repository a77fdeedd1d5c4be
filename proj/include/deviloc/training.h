#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "deviloc/cpa.h"
#include "deviloc/diffkernel/optimizer.h"
#include "deviloc/matching.h"
#include "deviloc/pin.h"
#include "deviloc/synthetic_scene.h"

namespace deviloc {

struct TrainingConfig {
  double lr = 1e-3;
  int batch = 4;
  int epochs = 40;
  int max_steps = 0;       // 0: run all epochs
  double lambda = 0.25;    // weight of the confidence loss
  double theta = 8.0;      // label threshold in pixels
  double tau = 0.0;        // confidence filter before aggregation
  double s = 4.0;          // quantization size
  int num_refs = 3;        // N_v references per query
  int max_matches = 0;     // per-pair match cap for training samples (0: matcher's)
  double weight_decay = 0.0;
  // Stops before the update of the first step whose batch L_point is below
  // this value, so the returned model is the one that reached it. 0: off.
  double target_point_loss = 0.0;
  uint64_t seed = 0;

  void Validate() const;
};

struct TrainingReference {
  int ref_id = 0;
  Pose pose;
  MatchSet matches;
  ObservedPoints observed;
};

struct TrainingSample {
  int query_id = 0;
  std::string query_name;
  Pose query_pose;
  CameraIntrinsics intrinsics;
  DepthMap depth;  // ground-truth query depth, NaN on holes
  std::vector<TrainingReference> refs;
};

struct LossBreakdown {
  double point = 0.0;  // L_point (sigma-normalized)
  double conf = 0.0;   // L_conf
  double total = 0.0;  // L_point + lambda * L_conf
  double sigma = 0.0;
  int num_matches = 0;     // aggregated matches |M|
  int num_supervised = 0;  // matches with ground-truth depth
  int num_excluded = 0;    // matches on depth holes
};

// Nearest-pixel lookup (integer coordinates are pixel centers); nullopt on
// holes and outside the map.
std::optional<double> NearestDepth(const DepthMap& depth, const Point2D& pixel);

// p = cam_to_scene(unproject(k, D(k))); nullopt where depth is missing.
std::vector<std::optional<Point3D>> GroundTruthPoints(
    std::span<const Point2D> keypoints, const DepthMap& depth, const Pose& pose,
    const CameraIntrinsics& intrinsics);

// (1/|M|) sum |p_agg - p_gt|_1 / sigma. Throws kEmptyMatches.
double PointMatchingLoss(std::span<const Point3D> predicted,
                         std::span<const Point3D> truth, double sigma);
// 1 iff the point lies in front of the camera and reprojects strictly
// closer than theta pixels to its keypoint.
std::vector<int> ConfidenceLabels(std::span<const Point2D> keypoints,
                                  std::span<const Point3D> points,
                                  const Pose& pose,
                                  const CameraIntrinsics& intrinsics,
                                  double theta);
// Binary cross-entropy with confidences clamped to [1e-7, 1 - 1e-7].
// Throws kEmptyMatches.
double ConfidenceLoss(std::span<const double> confidences,
                      std::span<const int> labels);
double TotalLoss(double point_loss, double conf_loss, double lambda = 0.25);

// Population standard deviation, floored at 1e-9.
double DepthScale(std::span<const double> depths);

// Differentiable loss of one query: PIN per reference, concatenation, tau
// filter, aggregation, then L_point + lambda * L_conf on the supervised
// aggregated matches. Throws kEmptyMatches when nothing is supervised.
dk::Var QueryLoss(const dk::Context& ctx, const PinModel& model,
                  const TrainingSample& sample, const TrainingConfig& config,
                  LossBreakdown* breakdown);

// Evaluation of a trained model on one sample without gradients.
struct SampleEvaluation {
  LossBreakdown loss;
  std::vector<AggregatedMatch> matches;
  int num_within_theta = 0;  // aggregated points reprojecting < theta px
};
SampleEvaluation EvaluateSample(const PinModel& model, const TrainingSample& sample,
                                const TrainingConfig& config);

struct SampleConfig {
  int num_refs = 3;
  SyntheticMatchConfig match;
  bool parallel = true;  // render depth maps with OpenMP
};

// One sample per query view of the scene, with the top covisible database
// images as references. Queries without any usable reference are skipped.
std::vector<TrainingSample> BuildTrainingSamples(const SyntheticScene& scene,
                                                 const SampleConfig& config);

struct TrainStep {
  int step = 0;
  LossBreakdown loss;  // mean over the batch
};

// AdamW over batches of samples. Logs every step to `csv` (header
// "step,L_point,L_conf,L_total") when given. Throws kNonFiniteLoss with the
// offending sample in the message.
std::vector<TrainStep> Train(PinModel& model, std::span<const TrainingSample> samples,
                             const TrainingConfig& config, std::ostream* csv = nullptr,
                             const std::function<void(const TrainStep&)>& on_step = {});

}  // namespace deviloc
