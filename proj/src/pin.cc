#include "deviloc/pin.h"

#include <algorithm>
#include <random>

#include "deviloc/error.h"

namespace deviloc {

using dk::Context;
using dk::Matrix;
using dk::Var;

void PinConfig::Validate() const {
  if (dim < 1 || feature_channels < 1 || heads < 1) {
    Throw(ErrorCode::kConfigError, "PIN dims and heads must be positive");
  }
  if (dim % heads != 0 || latent_dim() % heads != 0) {
    Throw(ErrorCode::kConfigError,
          "PIN widths d and d + c must be divisible by the head count");
  }
  if (geometric_layers < 1 || visual_pairs < 0 || encoder_layers < 1 ||
      head_layers < 1 || max_observed < 1) {
    Throw(ErrorCode::kConfigError, "PIN layer counts and N_o cap must be positive");
  }
}

DepthNormalization DepthNormalization::FromDepths(std::span<const double> depths) {
  if (depths.empty()) Throw(ErrorCode::kEmptyObserved, "no observed depths");
  DepthNormalization norm;
  norm.d_min = *std::min_element(depths.begin(), depths.end());
  norm.d_max = *std::max_element(depths.begin(), depths.end());
  if (!(norm.d_min > 0.0)) {
    Throw(ErrorCode::kNonPositiveDepth, "observed depths must be positive");
  }
  return norm;
}

Matrix CameraRays(std::span<const Point2D> pixels,
                  const CameraIntrinsics& intrinsics) {
  Matrix rays(static_cast<Eigen::Index>(pixels.size()), 3);
  for (size_t i = 0; i < pixels.size(); ++i) {
    const Eigen::Vector2d n = NormalizeKeypoint(pixels[i], intrinsics);
    rays.row(i) << n.x(), n.y(), 1.0;
  }
  return rays;
}

namespace {

std::vector<int> Widths(int in, int hidden, int out, int layers) {
  std::vector<int> dims{in};
  for (int i = 1; i < layers; ++i) dims.push_back(hidden);
  dims.push_back(out);
  return dims;
}

}  // namespace

PinModel::PinModel(const PinConfig& config) : config_(config) {
  config_.Validate();
  std::mt19937_64 rng(config_.seed);
  const int d = config_.dim;
  const int dl = config_.latent_dim();
  depth_encoder_ = dk::Mlp(params_, "depth_enc", Widths(1, d, d, config_.encoder_layers), rng);
  depth_self_ = dk::AttentionBlock(params_, "depth_self", d, config_.heads, rng);
  keypoint_encoder_ =
      dk::Mlp(params_, "keypoint_enc", Widths(2, d, d, config_.encoder_layers), rng);
  for (int i = 0; i < config_.geometric_layers; ++i) {
    geometric_cross_.emplace_back(params_, "geo_cross" + std::to_string(i), d,
                                  config_.heads, rng);
  }
  for (int i = 0; i < config_.visual_pairs; ++i) {
    visual_self_.emplace_back(params_, "vis_self" + std::to_string(i), dl,
                              config_.heads, rng);
    visual_cross_.emplace_back(params_, "vis_cross" + std::to_string(i), dl,
                               config_.heads, rng);
  }
  depth_head_ = dk::Mlp(params_, "depth_head", Widths(dl, dl, 1, config_.head_layers), rng);
  confidence_head_ =
      dk::Mlp(params_, "conf_head", Widths(dl + 1, dl, 1, config_.head_layers), rng);
}

Var PinModel::EncodeDepths(const Context& ctx, std::span<const double> depths,
                           const DepthNormalization& norm) const {
  if (depths.empty()) Throw(ErrorCode::kEmptyObserved, "no observed depths");
  Matrix normalized(static_cast<Eigen::Index>(depths.size()), 1);
  for (size_t i = 0; i < depths.size(); ++i) {
    if (!(depths[i] > 0.0)) {
      Throw(ErrorCode::kNonPositiveDepth, "observed depths must be positive");
    }
    normalized(i, 0) = norm.Normalize(depths[i]);
  }
  const Var embedded = depth_encoder_(ctx, ctx.Constant(std::move(normalized)));
  return depth_self_(ctx, embedded, embedded);
}

Var PinModel::EncodeKeypoints(const Context& ctx, std::span<const Point2D> pixels,
                              const CameraIntrinsics& intrinsics) const {
  return keypoint_encoder_(ctx,
                           ctx.Constant(CameraRays(pixels, intrinsics).leftCols(2)));
}

std::pair<Var, Var> PinModel::GeometricGuidance(const Context& ctx,
                                                Var ref_embedding,
                                                Var observed_embedding,
                                                Var depth_embedding) const {
  if (observed_embedding.rows() == 0) {
    Throw(ErrorCode::kEmptyObserved, "geometric guidance without observed points");
  }
  const Var observed = dk::Add(observed_embedding, depth_embedding);
  Var ref = ref_embedding;
  for (const dk::AttentionBlock& block : geometric_cross_) {
    ref = block(ctx, ref, observed);
  }
  return {ref, observed};
}

Var PinModel::VisualGuidance(const Context& ctx, Var ref_latent,
                             Var observed_latent, const FeatureMap& fm,
                             std::span<const Point2D> ref_pixels,
                             std::span<const Point2D> observed_pixels,
                             const Var* grid) const {
  if (fm.c != config_.feature_channels) {
    Throw(ErrorCode::kShapeMismatch,
          "feature map has " + std::to_string(fm.c) + " channels, PIN expects " +
              std::to_string(config_.feature_channels));
  }
  auto sample = [&](std::span<const Point2D> pixels) {
    const auto taps = kernels::ComputeBilinearTaps(fm.h, fm.w, fm.stride, pixels);
    if (grid) return dk::SampleBilinear(*grid, taps);
    RowMatrix features;
    kernels::GatherBilinearSerial(fm.data, taps, &features);
    return ctx.Constant(Matrix(features));
  };
  const Var ref_parts[] = {ref_latent, sample(ref_pixels)};
  const Var observed_parts[] = {observed_latent, sample(observed_pixels)};
  Var ref = dk::ConcatCols(ref_parts);
  Var observed = dk::ConcatCols(observed_parts);
  for (int i = 0; i < config_.visual_pairs; ++i) {
    observed = visual_self_[i](ctx, observed, observed);
    ref = visual_cross_[i](ctx, ref, observed);
  }
  return ref;
}

std::pair<Var, Var> PinModel::PredictHeads(const Context& ctx, Var final_latent,
                                           const DepthNormalization& norm) const {
  const Var unit_depth = dk::Sigmoid(depth_head_(ctx, final_latent));
  const Var depth = dk::Affine(unit_depth, norm.d_max - norm.d_min, norm.d_min);
  const Var parts[] = {final_latent, unit_depth};
  const Var confidence =
      dk::Sigmoid(confidence_head_(ctx, dk::ConcatCols(parts)));
  return {depth, confidence};
}

PinVars PinModel::Forward(const Context& ctx, const PinInput& input) const {
  if (input.ref_keypoints.empty()) {
    Throw(ErrorCode::kEmptyMatches, "PIN forward without reference keypoints");
  }
  if (!input.observed || input.observed->size() == 0) {
    Throw(ErrorCode::kEmptyObserved, "PIN forward without observed points");
  }
  if (!input.feature_map) {
    Throw(ErrorCode::kShapeMismatch, "PIN forward without a feature map");
  }
  const ObservedPoints* observed = input.observed;
  ObservedPoints capped;
  if (observed->size() > static_cast<size_t>(config_.max_observed)) {
    capped = CapObservedPoints(*observed, config_.max_observed, input.intrinsics);
    observed = &capped;
  }

  const DepthNormalization norm = DepthNormalization::FromDepths(observed->depths);
  const Var depth_embedding = EncodeDepths(ctx, observed->depths, norm);
  const Var ref_embedding = EncodeKeypoints(ctx, input.ref_keypoints, input.intrinsics);
  const Var observed_embedding =
      EncodeKeypoints(ctx, observed->keypoints, input.intrinsics);
  const auto [ref_latent, observed_latent] =
      GeometricGuidance(ctx, ref_embedding, observed_embedding, depth_embedding);
  const Var final_latent =
      VisualGuidance(ctx, ref_latent, observed_latent, *input.feature_map,
                     input.ref_keypoints, observed->keypoints);
  const auto [depths, confidences] = PredictHeads(ctx, final_latent, norm);

  // Row form of X = R^T (d * ray - t): X^T = (d * ray)^T R - t^T R.
  const Eigen::Matrix3d R = input.pose.RotationMatrix();
  const Eigen::RowVector3d offset = -input.pose.translation().transpose() * R;
  const Var cam_points = dk::MulColumn(
      ctx.Constant(CameraRays(input.ref_keypoints, input.intrinsics)), depths);
  const Var points = dk::AddRow(dk::MatMul(cam_points, ctx.Constant(Matrix(R))),
                                ctx.Constant(Matrix(offset)));
  return {depths, confidences, points};
}

PinOutput PinModel::Infer(const PinInput& input) const {
  dk::Tape tape;
  const Context ctx{&tape, false};
  const PinVars vars = Forward(ctx, input);
  PinOutput out;
  out.depths = vars.depths.value().col(0);
  out.confidences = vars.confidences.value().col(0);
  out.points = vars.points.value();
  return out;
}

}  // namespace deviloc
