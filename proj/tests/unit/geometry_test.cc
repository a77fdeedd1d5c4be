#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "deviloc/error.h"
#include "deviloc/geometry.h"

namespace deviloc {
namespace {

CameraIntrinsics Intrinsics100() {
  CameraIntrinsics k;
  k.fx = k.fy = 100.0;
  k.cx = 320.0;
  k.cy = 240.0;
  k.width = 640;
  k.height = 480;
  return k;
}

Pose RandomPose(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return Pose(q, Eigen::Vector3d(n(rng), n(rng), n(rng)) * 3.0);
}

TEST(ProjectTest, OpticalAxisAndOffset) {
  const CameraIntrinsics k = Intrinsics100();
  EXPECT_TRUE(Project({0, 0, 2}, k).isApprox(Point2D(320, 240)));
  EXPECT_TRUE(Project({1, 0, 2}, k).isApprox(Point2D(370, 240)));
}

TEST(ProjectTest, RejectsNonPositiveDepth) {
  const CameraIntrinsics k = Intrinsics100();
  for (const double z : {0.0, -1.0}) {
    try {
      Project({0, 0, z}, k);
      FAIL() << "expected an error";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kNonPositiveDepth);
    }
  }
  EXPECT_THROW(Unproject({1, 1}, 0.0, k), Error);
}

TEST(UnprojectTest, KnownValues) {
  const CameraIntrinsics k = Intrinsics100();
  EXPECT_TRUE(Unproject({320, 240}, 2.0, k).isApprox(Point3D(0, 0, 2)));
  EXPECT_TRUE(Unproject({370, 240}, 2.0, k).isApprox(Point3D(1, 0, 2)));
}

TEST(UnprojectTest, RoundTripsWithProject) {
  const CameraIntrinsics k = Intrinsics100();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0), z(0.1, 50.0);
  for (int i = 0; i < 1000; ++i) {
    const Point3D p(u(rng) * 10, u(rng) * 10, z(rng));
    EXPECT_LT((Unproject(Project(p, k), p.z(), k) - p).norm(), 1e-9 * p.norm());
  }
}

TEST(PoseTest, CamToSceneKnownValues) {
  EXPECT_TRUE(CamToScene({1, 2, 3}, Pose::Identity()).isApprox(Point3D(1, 2, 3)));
  const Pose shifted(Eigen::Quaterniond::Identity(), Eigen::Vector3d(1, 0, 0));
  EXPECT_TRUE(CamToScene({0, 0, 2}, shifted).isApprox(Point3D(-1, 0, 2)));
}

TEST(PoseTest, SceneToCamInvertsCamToScene) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 5.0);
  for (int i = 0; i < 1000; ++i) {
    const Pose pose = RandomPose(rng);
    const Point3D p(n(rng), n(rng), n(rng));
    EXPECT_LT((SceneToCam(CamToScene(p, pose), pose) - p).norm(), 1e-9);
  }
}

TEST(PoseTest, QuaternionSignDoesNotMatter) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 100; ++i) {
    const Pose a = RandomPose(rng);
    Eigen::Quaterniond flipped = a.rotation();
    flipped.coeffs() *= -1.0;
    const Pose b(flipped, a.translation());
    EXPECT_TRUE(a == b);
    const Point3D p(1.0, -2.0, 0.5);
    EXPECT_LT((a.SceneToCam(p) - b.SceneToCam(p)).norm(), 1e-12);
    const PoseError err = ComputePoseError(a, b);
    EXPECT_LT(err.rotation_error, 1e-9);
    EXPECT_LT(err.translation_error, 1e-12);
  }
}

TEST(PoseTest, ZeroQuaternionRejected) {
  EXPECT_THROW(Pose(Eigen::Quaterniond(0, 0, 0, 0), Eigen::Vector3d::Zero()), Error);
}

TEST(PoseErrorTest, KnownValues) {
  const Pose a = Pose::Identity();
  const PoseError same = ComputePoseError(a, a);
  EXPECT_EQ(same.translation_error, 0.0);
  EXPECT_EQ(same.rotation_error, 0.0);

  // Same rotation: camera center difference equals the translation offset.
  const Pose b(Eigen::Quaterniond::Identity(), Eigen::Vector3d(0.05, 0, 0));
  const PoseError shifted = ComputePoseError(a, b);
  EXPECT_NEAR(shifted.translation_error, 0.05, 1e-15);
  EXPECT_EQ(shifted.rotation_error, 0.0);

  const Pose c(AngleAxisQuaternion({0, 0, 1}, 10.0 * M_PI / 180.0), Eigen::Vector3d::Zero());
  const PoseError rotated = ComputePoseError(c, a);
  EXPECT_NEAR(rotated.translation_error, 0.0, 1e-15);
  EXPECT_NEAR(rotated.rotation_error, 10.0, 1e-12);
}

TEST(PoseErrorTest, SymmetricAndAccurateNearExtremes) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const Pose a = RandomPose(rng);
    const Pose b = RandomPose(rng);
    const PoseError ab = ComputePoseError(a, b);
    const PoseError ba = ComputePoseError(b, a);
    EXPECT_NEAR(ab.translation_error, ba.translation_error, 1e-12);
    EXPECT_NEAR(ab.rotation_error, ba.rotation_error, 1e-9);
    EXPECT_GE(ab.rotation_error, 0.0);
    EXPECT_LE(ab.rotation_error, 180.0);
  }
  // Tiny and near-180 degree rotations keep full relative precision.
  for (const double deg : {1e-7, 1e-3, 179.9999}) {
    const Pose r(AngleAxisQuaternion({1, 2, 3}, deg * M_PI / 180.0), Eigen::Vector3d::Zero());
    EXPECT_NEAR(ComputePoseError(r, Pose::Identity()).rotation_error, deg, 1e-9 * 180.0);
  }
}

TEST(IntrinsicsTest, Validation) {
  CameraIntrinsics k = Intrinsics100();
  EXPECT_NO_THROW(k.Validate());
  k.fx = 0.0;
  EXPECT_THROW(k.Validate(), Error);
  k = Intrinsics100();
  k.cx = 700.0;
  EXPECT_THROW(k.Validate(), Error);
}

TEST(NormalizeKeypointTest, PrincipalPointIsOrigin) {
  const CameraIntrinsics k = Intrinsics100();
  EXPECT_TRUE(NormalizeKeypoint({320, 240}, k).isZero());
  EXPECT_TRUE(NormalizeKeypoint({420, 190}, k).isApprox(Eigen::Vector2d(1.0, -0.5)));
}

}  // namespace
}  // namespace deviloc
