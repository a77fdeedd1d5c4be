#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "deviloc/diffkernel/grad_check.h"
#include "deviloc/diffkernel/ops.h"
#include "deviloc/error.h"
#include "deviloc/training.h"

namespace deviloc {
namespace {

const CameraIntrinsics kIntrinsics{100, 100, 320, 240, 640, 480};

TEST(GroundTruthTest, IdentityPoseExampleAndHoles) {
  DepthMap depth{640, 480, std::vector<double>(640 * 480, 2.0)};
  depth.depth[10 * 640 + 10] = std::nan("");
  const Point2D kps[] = {{320, 240}, {10.2, 9.8}, {700, 10}};
  const auto gt = GroundTruthPoints(kps, depth, Pose::Identity(), kIntrinsics);
  ASSERT_TRUE(gt[0].has_value());
  EXPECT_EQ(*gt[0], Point3D(0, 0, 2));
  EXPECT_FALSE(gt[1].has_value());
  EXPECT_FALSE(gt[2].has_value());
}

TEST(GroundTruthTest, SyntheticPointsLieOnTheSurface) {
  SyntheticSceneConfig config;
  config.num_points = 100;
  config.num_cameras = 3;
  config.num_queries = 1;
  config.width = 160;
  config.height = 120;
  config.focal = 125.0;
  const SyntheticScene scene = GenerateSyntheticScene(config);
  const int q = scene.QueryIds().front();
  const DepthMap depth = scene.RenderDepthMap(q, false);
  std::vector<Point2D> kps;
  for (int y = 4; y < 120; y += 9) {
    for (int x = 3; x < 160; x += 11) kps.emplace_back(x, y);
  }
  const auto gt = GroundTruthPoints(kps, depth, scene.View(q).pose, scene.intrinsics());
  int checked = 0;
  for (size_t i = 0; i < kps.size(); ++i) {
    const auto surface = scene.SurfacePoint(q, kps[i]);
    ASSERT_EQ(gt[i].has_value(), surface.has_value());
    if (!surface) continue;
    EXPECT_LT((*gt[i] - *surface).norm(), 1e-9);
    ++checked;
  }
  EXPECT_GT(checked, 100);
}

TEST(LossTest, PointMatchingLossExamples) {
  const Point3D pred[] = {{1, 2, 3}};
  const Point3D truth[] = {{1, 2, 5}};
  EXPECT_EQ(PointMatchingLoss(pred, truth, 1.0), 2.0);
  EXPECT_EQ(PointMatchingLoss(pred, truth, 2.0), 1.0);
  EXPECT_EQ(PointMatchingLoss(pred, pred, 1.0), 0.0);
  EXPECT_THROW(PointMatchingLoss({}, {}, 1.0), Error);
}

TEST(LossTest, ConfidenceLabels) {
  const Pose pose = Pose::Identity();
  // Power-of-two focal length so the 8 px boundary case is exact: points at
  // depth 2 projecting 5, 8 and 7.99 px right of the keypoint, and one
  // behind the camera.
  const CameraIntrinsics k{128, 128, 320, 240, 640, 480};
  const Point2D kps[] = {{320, 240}, {320, 240}, {320, 240}, {320, 240}};
  const Point3D pts[] = {{0.078125, 0, 2}, {0.125, 0, 2}, {0.1248, 0, 2}, {0, 0, -2}};
  const auto labels = ConfidenceLabels(kps, pts, pose, k, 8.0);
  EXPECT_EQ(labels, (std::vector<int>{1, 0, 1, 0}));

  // Scaling the image, intrinsics and the threshold together keeps labels.
  const CameraIntrinsics half{64, 64, 160, 120, 320, 240};
  const Point2D half_kps[] = {{160, 120}, {160, 120}, {160, 120}, {160, 120}};
  EXPECT_EQ(ConfidenceLabels(half_kps, pts, pose, half, 4.0), labels);
}

TEST(LossTest, ConfidenceLossExamples) {
  const double half[] = {0.5};
  const int one[] = {1};
  EXPECT_NEAR(ConfidenceLoss(half, one), std::log(2.0), 1e-15);
  const double sure[] = {1.0 - 1e-7};
  EXPECT_NEAR(ConfidenceLoss(sure, one), 1e-7, 1e-12);
  const double halves[] = {0.5, 0.5, 0.5};
  const int mixed[] = {1, 0, 0};
  EXPECT_NEAR(ConfidenceLoss(halves, mixed), std::log(2.0), 1e-15);
  // Clamping keeps the loss finite at the extremes.
  const double zero[] = {0.0};
  EXPECT_TRUE(std::isfinite(ConfidenceLoss(zero, one)));
}

TEST(LossTest, TotalLossExamples) {
  EXPECT_NEAR(TotalLoss(1.0, 0.6931, 0.25), 1.1733, 1e-4);
  EXPECT_EQ(TotalLoss(0.0, 0.0), 0.0);
  EXPECT_EQ(TotalLoss(0.7, 3.0, 0.0), 0.7);
  EXPECT_NEAR(TotalLoss(0.7, 3.0, 0.25) - TotalLoss(0.7, 2.0, 0.25), 0.25, 1e-15);
}

TEST(LossTest, DepthScaleIsPopulationStd) {
  const double d[] = {2, 4, 4, 4, 5, 5, 7, 9};
  EXPECT_NEAR(DepthScale(d), 2.0, 1e-15);
}

// Confidences reach L_point through the aggregation weights.
TEST(LossTest, PointLossGradientFlowsIntoConfidences) {
  dk::ParameterSet params;
  dk::Matrix pts(3, 3);
  pts << 1, 0, 0, 0, 1, 0, 3, 3, 3;
  params.Add("points", pts);
  params.Add("conf", (dk::Matrix(3, 1) << 0.8, 0.2, 0.6).finished());
  const Point2D kps[] = {{10, 9}, {11, 9}, {40, 40}};
  dk::Matrix truth(2, 3);
  truth << 0.5, 0.5, 0.1, 3, 2, 3;
  auto fn = [&](dk::Tape& t) {
    const AggregatedVars agg = AggregateVars(t.Param(params.Get("points")),
                                             t.Param(params.Get("conf")), kps, 4.0);
    return dk::Affine(dk::Sum(dk::Abs(dk::Sub(agg.points, t.Constant(truth)))), 0.5, 0.0);
  };
  dk::GradCheckConfig config;
  config.probes = 100;
  const auto result = dk::GradCheck(fn, params, config);
  EXPECT_LE(result.max_rel_error, 1e-4);
  double conf_grad = 0.0;
  for (const auto& probe : result.probes) {
    if (probe.parameter == "conf" && probe.index < 2) conf_grad += std::abs(probe.analytic);
  }
  EXPECT_GT(conf_grad, 1e-3);
}

class TinyTraining : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    SyntheticSceneConfig scene_config;
    scene_config.num_points = 160;
    scene_config.num_cameras = 6;
    scene_config.num_queries = 2;
    scene_config.width = 160;
    scene_config.height = 120;
    scene_config.focal = 125.0;
    scene_config.seed = 2;
    scene_ = new SyntheticScene(GenerateSyntheticScene(scene_config));
    SampleConfig sample;
    sample.num_refs = 2;
    sample.match.max_matches = 24;
    sample.match.grid_step = 8;
    sample.match.feature_channels = 4;
    sample.match.feature_stride = 16.0;
    samples_ = new std::vector<TrainingSample>(BuildTrainingSamples(*scene_, sample));
  }
  static void TearDownTestSuite() {
    delete samples_;
    delete scene_;
  }

  static PinConfig Pin() {
    PinConfig pin;
    pin.dim = 8;
    pin.feature_channels = 4;
    pin.heads = 2;
    pin.visual_pairs = 1;
    pin.max_observed = 32;
    return pin;
  }

  static SyntheticScene* scene_;
  static std::vector<TrainingSample>* samples_;
};

SyntheticScene* TinyTraining::scene_ = nullptr;
std::vector<TrainingSample>* TinyTraining::samples_ = nullptr;

TEST_F(TinyTraining, SamplesHaveReferencesAndDepth) {
  ASSERT_EQ(samples_->size(), 2u);
  for (const TrainingSample& s : *samples_) {
    EXPECT_FALSE(s.refs.empty());
    EXPECT_LE(s.refs.size(), 2u);
    EXPECT_EQ(s.depth.width, 160);
  }
}

TEST_F(TinyTraining, LossIsReproducibleWithoutAStep) {
  const PinModel model(Pin());
  TrainingConfig config;
  LossBreakdown a, b;
  dk::Tape t1, t2;
  QueryLoss(dk::Context{&t1, false}, model, samples_->front(), config, &a);
  QueryLoss(dk::Context{&t2, true}, model, samples_->front(), config, &b);
  EXPECT_EQ(a.total, b.total);
  EXPECT_EQ(a.point, b.point);
  EXPECT_NEAR(a.total, a.point + 0.25 * a.conf, 1e-15);
  EXPECT_GT(a.sigma, 0.0);
  EXPECT_LE(a.num_supervised, a.num_matches);
  EXPECT_EQ(a.num_supervised + a.num_excluded, a.num_matches);
}

TEST_F(TinyTraining, FixedSeedGivesIdenticalCurveAndCsv) {
  TrainingConfig config;
  config.max_steps = 6;
  config.batch = 2;
  PinModel a(Pin()), b(Pin());
  std::ostringstream csv_a, csv_b;
  const auto curve_a = Train(a, *samples_, config, &csv_a);
  const auto curve_b = Train(b, *samples_, config, &csv_b);
  ASSERT_EQ(curve_a.size(), 6u);
  for (size_t i = 0; i < curve_a.size(); ++i) {
    EXPECT_EQ(curve_a[i].loss.total, curve_b[i].loss.total);
  }
  EXPECT_EQ(csv_a.str(), csv_b.str());
  EXPECT_EQ(csv_a.str().rfind("step,L_point,L_conf,L_total\n", 0), 0u);
}

TEST_F(TinyTraining, LossDecreasesTrendwise) {
  TrainingConfig config;
  config.max_steps = 80;
  config.batch = 2;
  PinModel model(Pin());
  const auto curve = Train(model, *samples_, config);
  const size_t q = curve.size() / 4;
  double first = 0.0, last = 0.0;
  for (size_t i = 0; i < q; ++i) {
    first += curve[i].loss.total;
    last += curve[curve.size() - 1 - i].loss.total;
  }
  EXPECT_LT(last, first);
}

TEST_F(TinyTraining, RejectsBadConfig) {
  PinModel model(Pin());
  TrainingConfig config;
  config.tau = 1.0;
  EXPECT_THROW(Train(model, *samples_, config), Error);
  config = TrainingConfig{};
  EXPECT_THROW(Train(model, std::span<const TrainingSample>(), config), Error);
}

}  // namespace
}  // namespace deviloc
