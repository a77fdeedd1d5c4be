#include <random>

#include <gtest/gtest.h>

#include "deviloc/diffkernel/grad_check.h"
#include "deviloc/error.h"
#include "deviloc/matching.h"
#include "deviloc/pin.h"

namespace deviloc {
namespace {

PinConfig TinyConfig() {
  PinConfig c;
  c.dim = 8;
  c.feature_channels = 4;
  c.heads = 2;
  c.visual_pairs = 2;
  c.max_observed = 64;
  c.seed = 3;
  return c;
}

// A reference view with a handful of observed points and reference keypoints.
struct Fixture {
  CameraIntrinsics intrinsics{100, 100, 80, 60, 160, 120};
  Pose pose{AngleAxisQuaternion({0.2, 1, 0}, 0.3), Eigen::Vector3d(0.5, -0.2, 1.0)};
  ObservedPoints observed;
  std::vector<Point2D> ref_kpts;
  FeatureMap fm;

  explicit Fixture(uint64_t seed, int n_obs = 12, int n_ref = 9) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ux(2.0, 158.0), uy(2.0, 118.0), ud(3.0, 9.0);
    for (int i = 0; i < n_obs; ++i) {
      observed.keypoints.emplace_back(ux(rng), uy(rng));
      observed.depths.push_back(ud(rng));
      observed.scene_points.push_back(
          pose.CamToScene(Unproject(observed.keypoints.back(), observed.depths.back(), intrinsics)));
      observed.point3d_ids.push_back(i);
    }
    for (int i = 0; i < n_ref; ++i) ref_kpts.emplace_back(ux(rng), uy(rng));
    fm.h = 8;
    fm.w = 10;
    fm.c = 4;
    fm.stride = 16.0;
    fm.data.resize(80, 4);
    std::normal_distribution<double> n(0.0, 1.0);
    for (Eigen::Index i = 0; i < fm.data.size(); ++i) fm.data.data()[i] = n(rng);
  }

  PinInput Input() const {
    PinInput in;
    in.ref_keypoints = ref_kpts;
    in.observed = &observed;
    in.feature_map = &fm;
    in.intrinsics = intrinsics;
    in.pose = pose;
    return in;
  }
};

TEST(DepthNormalizationTest, EndpointsAndDegenerateRange) {
  const double d[] = {2.0, 10.0, 6.0};
  const DepthNormalization n = DepthNormalization::FromDepths(d);
  EXPECT_EQ(n.Normalize(2.0), 0.0);
  EXPECT_NEAR(n.Normalize(10.0), 1.0, 1e-6);
  EXPECT_LT(n.Normalize(10.0), 1.0);
  const double single[] = {4.0};
  EXPECT_EQ(DepthNormalization::FromDepths(single).Normalize(4.0), 0.0);
  EXPECT_THROW(DepthNormalization::FromDepths(std::span<const double>()), Error);
  const double bad[] = {1.0, -1.0};
  EXPECT_THROW(DepthNormalization::FromDepths(bad), Error);
}

TEST(PinTest, EncoderShapesAndSharedKeypointEncoder) {
  const PinModel model(TinyConfig());
  const Fixture f(1);
  dk::Tape t;
  const dk::Context ctx{&t, false};
  const auto norm = DepthNormalization::FromDepths(f.observed.depths);
  const dk::Var depth = model.EncodeDepths(ctx, f.observed.depths, norm);
  EXPECT_EQ(depth.rows(), 12);
  EXPECT_EQ(depth.cols(), 8);

  const Point2D same[] = {{37.0, 81.0}, {80.0, 60.0}};
  const Point2D other[] = {{10.0, 10.0}, {37.0, 81.0}};
  const dk::Matrix a = model.EncodeKeypoints(ctx, same, f.intrinsics).value();
  const dk::Matrix b = model.EncodeKeypoints(ctx, other, f.intrinsics).value();
  EXPECT_EQ(a.row(0), b.row(1));
  EXPECT_TRUE(CameraRays(same, f.intrinsics).row(1).isApprox(Eigen::RowVector3d(0, 0, 1)));
}

TEST(PinTest, KeypointEncoderGradient) {
  PinModel model(TinyConfig());
  const Fixture f(2);
  auto fn = [&](dk::Tape& t) {
    const dk::Context ctx{&t, true};
    const dk::Var e = model.EncodeKeypoints(ctx, f.ref_kpts, f.intrinsics);
    return dk::Sum(dk::Mul(e, e));
  };
  dk::GradCheckConfig config;
  config.probes = 64;
  EXPECT_LE(dk::GradCheck(fn, model.params(), config).max_rel_error, 1e-6);
}

TEST(PinTest, ForwardShapesRangesAndLifting) {
  const PinModel model(TinyConfig());
  const Fixture f(3);
  const PinOutput out = model.Infer(f.Input());
  ASSERT_EQ(out.depths.size(), 9);
  ASSERT_EQ(out.confidences.size(), 9);
  ASSERT_EQ(out.points.rows(), 9);
  const auto norm = DepthNormalization::FromDepths(f.observed.depths);
  for (int i = 0; i < 9; ++i) {
    EXPECT_GE(out.depths(i), norm.d_min);
    EXPECT_LE(out.depths(i), norm.d_max);
    EXPECT_GT(out.confidences(i), 0.0);
    EXPECT_LT(out.confidences(i), 1.0);
    const Point3D cam = f.pose.SceneToCam(out.points.row(i).transpose());
    EXPECT_NEAR(cam.z(), out.depths(i), 1e-9);
    EXPECT_LT((Project(cam, f.intrinsics) - f.ref_kpts[i]).norm(), 1e-9);
  }
}

TEST(PinTest, ReferencePermutationEquivarianceObservedInvariance) {
  const PinModel model(TinyConfig());
  Fixture f(4);
  const PinOutput base = model.Infer(f.Input());

  Fixture g = f;
  std::vector<int> perm{3, 0, 8, 1, 7, 2, 6, 4, 5};
  for (size_t i = 0; i < perm.size(); ++i) g.ref_kpts[i] = f.ref_kpts[perm[i]];
  std::reverse(g.observed.keypoints.begin(), g.observed.keypoints.end());
  std::reverse(g.observed.depths.begin(), g.observed.depths.end());
  const PinOutput permuted = model.Infer(g.Input());
  for (size_t i = 0; i < perm.size(); ++i) {
    EXPECT_NEAR(permuted.depths(i), base.depths(perm[i]), 1e-12);
    EXPECT_NEAR(permuted.confidences(i), base.confidences(perm[i]), 1e-12);
  }
}

TEST(PinTest, ForwardIsDeterministic) {
  const PinModel a(TinyConfig()), b(TinyConfig());
  const Fixture f(5);
  const PinOutput x = a.Infer(f.Input()), y = b.Infer(f.Input());
  EXPECT_EQ(x.depths, y.depths);
  EXPECT_EQ(x.points, y.points);
}

TEST(PinTest, ZeroLogitsGiveMidDepthAndHalfConfidence) {
  PinModel model(TinyConfig());
  for (auto& [name, p] : model.params()) {
    if (name.rfind("depth_head.1.", 0) == 0 || name.rfind("conf_head.1.", 0) == 0) {
      p.value.setZero();
    }
  }
  const Fixture f(6);
  const PinOutput out = model.Infer(f.Input());
  const auto norm = DepthNormalization::FromDepths(f.observed.depths);
  for (int i = 0; i < out.depths.size(); ++i) {
    EXPECT_NEAR(out.depths(i), 0.5 * (norm.d_min + norm.d_max), 1e-12);
    EXPECT_NEAR(out.confidences(i), 0.5, 1e-15);
  }
}

TEST(PinTest, SingleObservedPointFeedsEveryReferenceAlike) {
  const PinModel model(TinyConfig());
  Fixture f(7, 1, 4);
  // Identical reference keypoints must receive identical latents.
  f.ref_kpts = {{50, 50}, {50, 50}, {50, 50}, {120, 30}};
  dk::Tape t;
  const dk::Context ctx{&t, false};
  const auto norm = DepthNormalization::FromDepths(f.observed.depths);
  const auto [ref, obs] = model.GeometricGuidance(
      ctx, model.EncodeKeypoints(ctx, f.ref_kpts, f.intrinsics),
      model.EncodeKeypoints(ctx, f.observed.keypoints, f.intrinsics),
      model.EncodeDepths(ctx, f.observed.depths, norm));
  EXPECT_EQ(ref.rows(), 4);
  EXPECT_EQ(obs.rows(), 1);
  EXPECT_EQ(ref.value().row(0), ref.value().row(2));
}

TEST(PinTest, ConstantFeatureMapGivesIdenticalVisualFeatures) {
  const PinModel model(TinyConfig());
  Fixture f(8);
  f.fm = FeatureMap::Constant(8, 10, 4, 16.0, 0.25);
  const PinOutput a = model.Infer(f.Input());
  // Any other constant-valued map changes nothing per keypoint relative to
  // the others; moving a keypoint only changes the geometric path.
  Fixture g = f;
  g.fm = FeatureMap::Constant(8, 10, 4, 16.0, 0.25);
  g.ref_kpts[0] = f.ref_kpts[1];
  const PinOutput b = model.Infer(g.Input());
  EXPECT_NEAR(b.depths(0), a.depths(1), 1e-12);
}

TEST(PinTest, VisualGuidanceGradientThroughSampling) {
  PinModel model(TinyConfig());
  const Fixture f(9);
  model.params().Add("probe.grid", f.fm.data);
  auto fn = [&](dk::Tape& t) {
    const dk::Context ctx{&t, true};
    const auto norm = DepthNormalization::FromDepths(f.observed.depths);
    const auto [ref, obs] = model.GeometricGuidance(
        ctx, model.EncodeKeypoints(ctx, f.ref_kpts, f.intrinsics),
        model.EncodeKeypoints(ctx, f.observed.keypoints, f.intrinsics),
        model.EncodeDepths(ctx, f.observed.depths, norm));
    const dk::Var grid = t.Param(model.params().Get("probe.grid"));
    const dk::Var out = model.VisualGuidance(ctx, ref, obs, f.fm, f.ref_kpts,
                                             f.observed.keypoints, &grid);
    EXPECT_EQ(out.cols(), 12);
    return dk::Sum(dk::Mul(out, out));
  };
  dk::GradCheckConfig config;
  config.probes = 96;
  EXPECT_LE(dk::GradCheck(fn, model.params(), config).max_rel_error, 1e-4);
}

TEST(PinTest, InputValidation) {
  const PinModel model(TinyConfig());
  Fixture f(10);
  f.fm.c = 3;
  f.fm.data.conservativeResize(Eigen::NoChange, 3);
  try {
    model.Infer(f.Input());
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
  Fixture g(11);
  g.observed = ObservedPoints{};
  try {
    model.Infer(g.Input());
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyObserved);
  }
  PinConfig bad = TinyConfig();
  bad.heads = 3;
  EXPECT_THROW(PinModel{bad}, Error);
}

}  // namespace
}  // namespace deviloc
