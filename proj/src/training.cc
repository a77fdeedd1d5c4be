#include "deviloc/training.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "deviloc/diffkernel/ops.h"
#include "deviloc/error.h"
#include "deviloc/random.h"

namespace deviloc {

using dk::Matrix;
using dk::Var;

void TrainingConfig::Validate() const {
  if (!(lr > 0.0) || batch < 1 || epochs < 0 || max_steps < 0 || num_refs < 1) {
    Throw(ErrorCode::kConfigError, "training needs lr > 0, batch >= 1, N_v >= 1");
  }
  if (max_matches < 0) Throw(ErrorCode::kConfigError, "training needs max_matches >= 0");
  if (!(target_point_loss >= 0.0)) {
    Throw(ErrorCode::kConfigError, "training needs target_point_loss >= 0");
  }
  if (!(lambda >= 0.0) || !(theta > 0.0) || !(s > 0.0)) {
    Throw(ErrorCode::kConfigError, "training needs lambda >= 0, theta > 0, s > 0");
  }
  if (!(tau >= 0.0 && tau < 1.0)) {
    Throw(ErrorCode::kConfigError, "tau must lie in [0, 1)");
  }
}

std::optional<double> NearestDepth(const DepthMap& depth, const Point2D& pixel) {
  const double x = std::round(pixel.x());
  const double y = std::round(pixel.y());
  if (!(x >= 0 && y >= 0 && x <= depth.width - 1 && y <= depth.height - 1)) {
    return std::nullopt;
  }
  const double d = depth.At(static_cast<int>(x), static_cast<int>(y));
  if (!std::isfinite(d) || !(d > 0.0)) return std::nullopt;
  return d;
}

std::vector<std::optional<Point3D>> GroundTruthPoints(
    std::span<const Point2D> keypoints, const DepthMap& depth, const Pose& pose,
    const CameraIntrinsics& intrinsics) {
  std::vector<std::optional<Point3D>> out;
  out.reserve(keypoints.size());
  for (const Point2D& k : keypoints) {
    const auto d = NearestDepth(depth, k);
    if (!d) {
      out.push_back(std::nullopt);
    } else {
      out.push_back(pose.CamToScene(Unproject(k, *d, intrinsics)));
    }
  }
  return out;
}

double PointMatchingLoss(std::span<const Point3D> predicted,
                         std::span<const Point3D> truth, double sigma) {
  if (predicted.empty()) Throw(ErrorCode::kEmptyMatches, "point loss over no matches");
  if (predicted.size() != truth.size()) {
    Throw(ErrorCode::kDimensionMismatch, "point loss needs one truth per prediction");
  }
  double sum = 0.0;
  for (size_t i = 0; i < predicted.size(); ++i) {
    sum += (predicted[i] - truth[i]).cwiseAbs().sum();
  }
  return sum / double(predicted.size()) / sigma;
}

std::vector<int> ConfidenceLabels(std::span<const Point2D> keypoints,
                                  std::span<const Point3D> points,
                                  const Pose& pose,
                                  const CameraIntrinsics& intrinsics,
                                  double theta) {
  if (keypoints.size() != points.size()) {
    Throw(ErrorCode::kDimensionMismatch, "labels need one point per keypoint");
  }
  std::vector<int> labels(keypoints.size(), 0);
  for (size_t i = 0; i < keypoints.size(); ++i) {
    const Point3D c = pose.SceneToCam(points[i]);
    if (!(c.z() > 0.0)) continue;
    labels[i] = (Project(c, intrinsics) - keypoints[i]).norm() < theta ? 1 : 0;
  }
  return labels;
}

double ConfidenceLoss(std::span<const double> confidences,
                      std::span<const int> labels) {
  if (confidences.empty()) {
    Throw(ErrorCode::kEmptyMatches, "confidence loss over no matches");
  }
  if (confidences.size() != labels.size()) {
    Throw(ErrorCode::kDimensionMismatch, "confidence loss needs one label per match");
  }
  double sum = 0.0;
  for (size_t i = 0; i < confidences.size(); ++i) {
    const double c = std::clamp(confidences[i], 1e-7, 1.0 - 1e-7);
    sum += labels[i] ? std::log(c) : std::log(1.0 - c);
  }
  return -sum / double(confidences.size());
}

double TotalLoss(double point_loss, double conf_loss, double lambda) {
  return point_loss + lambda * conf_loss;
}

double DepthScale(std::span<const double> depths) {
  if (depths.empty()) return 1e-9;
  const double mean =
      std::accumulate(depths.begin(), depths.end(), 0.0) / double(depths.size());
  double var = 0.0;
  for (const double d : depths) var += (d - mean) * (d - mean);
  return std::max(std::sqrt(var / double(depths.size())), 1e-9);
}

namespace {

struct QueryForward {
  AggregatedVars aggregated;
  std::vector<int> supervised;  // aggregated rows with ground truth
  Matrix truth;                 // |supervised| x 3
  std::vector<double> truth_depths;
  int excluded = 0;
};

// PIN per reference, concatenation in reference order, tau filter and
// aggregation. Pairs without observed points are skipped.
QueryForward ForwardQuery(const dk::Context& ctx, const PinModel& model,
                          const TrainingSample& sample,
                          const TrainingConfig& config) {
  std::vector<Var> points, confidences;
  std::vector<Point2D> keypoints;
  for (const TrainingReference& ref : sample.refs) {
    if (ref.matches.size() == 0 || ref.observed.size() == 0) continue;
    PinInput input;
    input.ref_keypoints = ref.matches.ref_kpts;
    input.observed = &ref.observed;
    input.feature_map = ref.matches.feature_map.get();
    input.intrinsics = sample.intrinsics;
    input.pose = ref.pose;
    const PinVars out = model.Forward(ctx, input);
    points.push_back(out.points);
    confidences.push_back(out.confidences);
    keypoints.insert(keypoints.end(), ref.matches.query_kpts.begin(),
                     ref.matches.query_kpts.end());
  }
  if (points.empty()) {
    Throw(ErrorCode::kEmptyMatches, "sample " + sample.query_name + " has no usable pairs");
  }
  Var all_points = dk::ConcatRows(points);
  Var all_conf = dk::ConcatRows(confidences);

  if (config.tau > 0.0) {
    std::vector<int> keep;
    std::vector<Point2D> kept_keypoints;
    for (Eigen::Index i = 0; i < all_conf.rows(); ++i) {
      if (all_conf.value()(i, 0) > config.tau) {
        keep.push_back(static_cast<int>(i));
        kept_keypoints.push_back(keypoints[i]);
      }
    }
    if (keep.empty()) {
      Throw(ErrorCode::kEmptyMatches, "tau filtered every match of " + sample.query_name);
    }
    all_points = dk::GatherRows(all_points, keep);
    all_conf = dk::GatherRows(all_conf, keep);
    keypoints = std::move(kept_keypoints);
  }

  QueryForward fwd;
  fwd.aggregated = AggregateVars(all_points, all_conf, keypoints, config.s);
  const auto& keys = fwd.aggregated.grouping.keys;
  const auto truth =
      GroundTruthPoints(keys, sample.depth, sample.query_pose, sample.intrinsics);
  for (size_t j = 0; j < keys.size(); ++j) {
    if (!truth[j]) {
      ++fwd.excluded;
      continue;
    }
    fwd.supervised.push_back(static_cast<int>(j));
    fwd.truth_depths.push_back(sample.query_pose.SceneToCam(*truth[j]).z());
  }
  fwd.truth.resize(static_cast<Eigen::Index>(fwd.supervised.size()), 3);
  for (size_t i = 0; i < fwd.supervised.size(); ++i) {
    fwd.truth.row(i) = truth[fwd.supervised[i]]->transpose();
  }
  return fwd;
}

}  // namespace

Var QueryLoss(const dk::Context& ctx, const PinModel& model,
              const TrainingSample& sample, const TrainingConfig& config,
              LossBreakdown* breakdown) {
  const QueryForward fwd = ForwardQuery(ctx, model, sample, config);
  const int m = static_cast<int>(fwd.supervised.size());
  if (m == 0) {
    Throw(ErrorCode::kEmptyMatches,
          "no supervised matches for " + sample.query_name);
  }
  const Var points = dk::GatherRows(fwd.aggregated.points, fwd.supervised);
  const Var conf = dk::GatherRows(fwd.aggregated.confidences, fwd.supervised);
  const double sigma = DepthScale(fwd.truth_depths);

  const Var point_loss = dk::Affine(
      dk::Sum(dk::Abs(dk::Sub(points, ctx.Constant(fwd.truth)))),
      1.0 / (double(m) * sigma), 0.0);

  std::vector<Point2D> keys;
  std::vector<Point3D> predicted;
  for (int i = 0; i < m; ++i) {
    keys.push_back(fwd.aggregated.grouping.keys[fwd.supervised[i]]);
    predicted.push_back(points.value().row(i).transpose());
  }
  const std::vector<int> labels = ConfidenceLabels(
      keys, predicted, sample.query_pose, sample.intrinsics, config.theta);
  Matrix positive(m, 1), negative(m, 1);
  for (int i = 0; i < m; ++i) {
    positive(i, 0) = labels[i];
    negative(i, 0) = 1.0 - labels[i];
  }
  const Var clamped = dk::Clamp(conf, 1e-7, 1.0 - 1e-7);
  const Var log_likelihood = dk::Add(
      dk::Mul(dk::Log(clamped), ctx.Constant(positive)),
      dk::Mul(dk::Log(dk::Affine(clamped, -1.0, 1.0)), ctx.Constant(negative)));
  const Var conf_loss = dk::Affine(dk::Sum(log_likelihood), -1.0 / double(m), 0.0);
  const Var total = dk::Add(point_loss, dk::Affine(conf_loss, config.lambda, 0.0));

  if (breakdown) {
    breakdown->point = point_loss.scalar();
    breakdown->conf = conf_loss.scalar();
    breakdown->total = total.scalar();
    breakdown->sigma = sigma;
    breakdown->num_matches = static_cast<int>(fwd.aggregated.grouping.keys.size());
    breakdown->num_supervised = m;
    breakdown->num_excluded = fwd.excluded;
  }
  return total;
}

SampleEvaluation EvaluateSample(const PinModel& model, const TrainingSample& sample,
                                const TrainingConfig& config) {
  dk::Tape tape;
  const dk::Context ctx{&tape, false};
  SampleEvaluation eval;
  QueryLoss(ctx, model, sample, config, &eval.loss);

  const QueryForward fwd = ForwardQuery(ctx, model, sample, config);
  const auto& grouping = fwd.aggregated.grouping;
  const Matrix& points = fwd.aggregated.points.value();
  const Matrix& conf = fwd.aggregated.confidences.value();
  for (size_t j = 0; j < grouping.keys.size(); ++j) {
    AggregatedMatch m;
    m.keypoint = grouping.keys[j];
    m.point = points.row(j).transpose();
    m.confidence = conf(j, 0);
    m.count = grouping.counts[j];
    eval.matches.push_back(m);
    const Point3D c = sample.query_pose.SceneToCam(m.point);
    if (c.z() > 0.0 &&
        (Project(c, sample.intrinsics) - m.keypoint).norm() < config.theta) {
      ++eval.num_within_theta;
    }
  }
  return eval;
}

std::vector<TrainingSample> BuildTrainingSamples(const SyntheticScene& scene,
                                                 const SampleConfig& config) {
  SyntheticMatcher matcher(scene, config.match);
  std::vector<TrainingSample> samples;
  for (const int query_id : scene.QueryIds()) {
    const SyntheticView& view = scene.View(query_id);
    TrainingSample sample;
    sample.query_id = query_id;
    sample.query_name = view.name;
    sample.query_pose = view.pose;
    sample.intrinsics = scene.intrinsics();
    for (const auto& [ref_id, count] :
         CovisibleReferences(scene, query_id, config.num_refs)) {
      TrainingReference ref;
      ref.ref_id = ref_id;
      ref.pose = scene.model.images.at(ref_id).pose;
      try {
        ref.matches = matcher.Match(view.name, scene.model.images.at(ref_id));
        ref.observed = ObservedForImage(scene.model, ref_id);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::kNoOverlap || e.code() == ErrorCode::kNoObservations) {
          continue;
        }
        throw;
      }
      sample.refs.push_back(std::move(ref));
    }
    if (sample.refs.empty()) continue;
    sample.depth = scene.RenderDepthMap(query_id, config.parallel);
    samples.push_back(std::move(sample));
  }
  return samples;
}

std::vector<TrainStep> Train(PinModel& model, std::span<const TrainingSample> samples,
                             const TrainingConfig& config, std::ostream* csv,
                             const std::function<void(const TrainStep&)>& on_step) {
  config.Validate();
  if (samples.empty()) Throw(ErrorCode::kConfigError, "training without samples");
  dk::AdamW optimizer({config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
  if (csv) *csv << "step,L_point,L_conf,L_total\n";

  std::vector<TrainStep> curve;
  std::vector<size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  const int batches_per_epoch =
      static_cast<int>((samples.size() + config.batch - 1) / config.batch);
  const int total_steps = config.max_steps > 0
                              ? config.max_steps
                              : config.epochs * batches_per_epoch;
  int step = 0;
  for (int epoch = 0; step < total_steps; ++epoch) {
    std::mt19937_64 rng(DeriveSeed({config.seed, 31, uint64_t(epoch)}));
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t start = 0; start < order.size() && step < total_steps;
         start += config.batch) {
      const size_t end = std::min(order.size(), start + config.batch);
      dk::Tape tape;
      const dk::Context ctx{&tape, true};
      std::vector<Var> losses;
      TrainStep record;
      record.step = ++step;
      for (size_t b = start; b < end; ++b) {
        const TrainingSample& sample = samples[order[b]];
        LossBreakdown loss;
        losses.push_back(QueryLoss(ctx, model, sample, config, &loss));
        if (!std::isfinite(loss.total)) {
          std::ostringstream msg;
          msg << "non-finite loss at step " << record.step << " on "
              << sample.query_name << ": L_point=" << loss.point
              << " L_conf=" << loss.conf << " sigma=" << loss.sigma
              << " matches=" << loss.num_matches;
          Throw(ErrorCode::kNonFiniteLoss, msg.str());
        }
        const double w = 1.0 / double(end - start);
        record.loss.point += w * loss.point;
        record.loss.conf += w * loss.conf;
        record.loss.total += w * loss.total;
        record.loss.sigma += w * loss.sigma;
        record.loss.num_matches += loss.num_matches;
        record.loss.num_supervised += loss.num_supervised;
        record.loss.num_excluded += loss.num_excluded;
      }
      const bool reached = config.target_point_loss > 0.0 &&
                           record.loss.point < config.target_point_loss;
      if (!reached) {
        const Var batch_loss =
            dk::Affine(dk::Sum(dk::ConcatRows(losses)), 1.0 / double(losses.size()), 0.0);
        model.params().ZeroGrad();
        tape.Backward(batch_loss);
        optimizer.Step(model.params());
      }

      if (csv) {
        *csv << record.step << ',' << record.loss.point << ',' << record.loss.conf
             << ',' << record.loss.total << '\n';
      }
      if (on_step) on_step(record);
      curve.push_back(record);
      if (reached) return curve;
    }
  }
  return curve;
}

}  // namespace deviloc
