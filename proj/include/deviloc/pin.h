#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "deviloc/diffkernel/layers.h"
#include "deviloc/matching.h"
#include "deviloc/scene.h"

namespace deviloc {

struct PinConfig {
  int dim = 128;               // d
  int feature_channels = 64;   // c; attention after concatenation runs at d + c
  int heads = 4;
  int geometric_layers = 1;    // cross-attention layers for geometric guidance
  int visual_pairs = 3;        // self/cross pairs for visual guidance
  int encoder_layers = 2;      // linear layers in DepthEnc / KeypointEnc
  int head_layers = 2;         // linear layers in the depth / confidence heads
  int max_observed = 1024;     // N_o cap, nearest to the principal point kept
  uint64_t seed = 0;           // parameter initialization

  int latent_dim() const { return dim + feature_channels; }
  void Validate() const;
};

// Min-max range of the observed depths of one reference image.
struct DepthNormalization {
  static constexpr double kEpsilon = 1e-6;
  double d_min = 1.0;
  double d_max = 1.0;

  // Throws kEmptyObserved on no depths, kNonPositiveDepth on d <= 0.
  static DepthNormalization FromDepths(std::span<const double> depths);
  double Normalize(double d) const { return (d - d_min) / (d_max - d_min + kEpsilon); }
  double Denormalize(double x) const { return d_min + x * (d_max - d_min); }
};

// One reference image as seen by the network: its keypoints K^r (pixels),
// observed sparse points O^r, visual feature map F^r and camera.
struct PinInput {
  std::span<const Point2D> ref_keypoints;
  const ObservedPoints* observed = nullptr;
  const FeatureMap* feature_map = nullptr;
  CameraIntrinsics intrinsics;
  Pose pose;  // scene -> reference camera
};

struct PinVars {
  dk::Var depths;       // N_r x 1, scene units
  dk::Var confidences;  // N_r x 1
  dk::Var points;       // N_r x 3, scene frame
};

struct PinOutput {
  Eigen::VectorXd depths;
  Eigen::VectorXd confidences;
  Eigen::Matrix<double, Eigen::Dynamic, 3> points;
};

class PinModel {
 public:
  explicit PinModel(const PinConfig& config);
  // Layers point into params_, so copies would alias; moves keep the map
  // nodes in place.
  PinModel(const PinModel&) = delete;
  PinModel& operator=(const PinModel&) = delete;
  PinModel(PinModel&&) = default;
  PinModel& operator=(PinModel&&) = default;

  const PinConfig& config() const { return config_; }
  dk::ParameterSet& params() { return params_; }
  const dk::ParameterSet& params() const { return params_; }

  // D^o -> D_emb^o (N_o x d): min-max normalize, embed, one self-attention.
  dk::Var EncodeDepths(const dk::Context& ctx, std::span<const double> depths,
                       const DepthNormalization& norm) const;
  // Shared encoder over normalized camera-plane keypoints.
  dk::Var EncodeKeypoints(const dk::Context& ctx, std::span<const Point2D> pixels,
                          const CameraIntrinsics& intrinsics) const;
  // P_lc^o = K_emb^o + D_emb^o, P_lc^r = CrsAtt(K_emb^r, P_lc^o).
  std::pair<dk::Var, dk::Var> GeometricGuidance(const dk::Context& ctx,
                                                dk::Var ref_embedding,
                                                dk::Var observed_embedding,
                                                dk::Var depth_embedding) const;
  // Appends bilinear features to both latent sets and runs the
  // self/cross-attention pairs; returns P_final^r (N_r x (d + c)). When
  // `grid` is given it replaces the feature map values and receives
  // gradients (used for checking the sampling path).
  dk::Var VisualGuidance(const dk::Context& ctx, dk::Var ref_latent,
                         dk::Var observed_latent, const FeatureMap& fm,
                         std::span<const Point2D> ref_pixels,
                         std::span<const Point2D> observed_pixels,
                         const dk::Var* grid = nullptr) const;
  // Depth in [d_min, d_max] through a sigmoid; confidence from
  // [P_final, normalized depth] through a sigmoid.
  std::pair<dk::Var, dk::Var> PredictHeads(const dk::Context& ctx,
                                           dk::Var final_latent,
                                           const DepthNormalization& norm) const;

  // Full network plus lifting P = cam_to_scene(unproject(K^r, D^r)).
  PinVars Forward(const dk::Context& ctx, const PinInput& input) const;
  // Inference on a private tape with frozen parameters; safe to call
  // concurrently.
  PinOutput Infer(const PinInput& input) const;

 private:
  PinConfig config_;
  dk::ParameterSet params_;
  dk::Mlp depth_encoder_;
  dk::AttentionBlock depth_self_;
  dk::Mlp keypoint_encoder_;
  std::vector<dk::AttentionBlock> geometric_cross_;
  std::vector<dk::AttentionBlock> visual_self_;
  std::vector<dk::AttentionBlock> visual_cross_;
  dk::Mlp depth_head_;
  dk::Mlp confidence_head_;
};

// Rays (x_n, y_n, 1) of pixels, N x 3.
dk::Matrix CameraRays(std::span<const Point2D> pixels,
                      const CameraIntrinsics& intrinsics);

}  // namespace deviloc
