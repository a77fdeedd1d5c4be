#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace deviloc {

using Point2D = Eigen::Vector2d;
using Point3D = Eigen::Vector3d;

// Pinhole intrinsics in pixels. Image coordinates are continuous with the
// origin at the top-left image corner.
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  // Throws kConfigError if fx, fy <= 0 or the principal point is outside
  // the image.
  void Validate() const;
  bool Contains(const Point2D& pixel) const;

  bool operator==(const CameraIntrinsics&) const = default;
};

// Rigid transform from scene to camera coordinates: x_cam = R * x_scene + t.
// This is the COLMAP images.txt convention.
class Pose {
 public:
  Pose();
  // Normalizes the quaternion; throws kConfigError on a zero quaternion.
  Pose(const Eigen::Quaterniond& rotation, const Eigen::Vector3d& translation);
  Pose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

  static Pose Identity() { return Pose(); }

  const Eigen::Quaterniond& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }
  Eigen::Matrix3d RotationMatrix() const;

  Eigen::Vector3d CameraCenter() const;
  Pose Inverse() const;

  Point3D SceneToCam(const Point3D& scene_point) const;
  Point3D CamToScene(const Point3D& cam_point) const;

  // Same quaternion up to sign and same translation.
  bool operator==(const Pose& other) const;

 private:
  Eigen::Quaterniond rotation_;
  Eigen::Vector3d translation_;
};

// ((u - cx) / fx, (v - cy) / fy).
Eigen::Vector2d NormalizeKeypoint(const Point2D& pixel,
                                  const CameraIntrinsics& intrinsics);

// Throws kNonPositiveDepth if point.z() <= 0.
Point2D Project(const Point3D& cam_point, const CameraIntrinsics& intrinsics);

// depth * (normalized.x, normalized.y, 1). Throws kNonPositiveDepth.
Point3D Unproject(const Point2D& pixel, double depth,
                  const CameraIntrinsics& intrinsics);

Point3D CamToScene(const Point3D& cam_point, const Pose& pose);
Point3D SceneToCam(const Point3D& scene_point, const Pose& pose);

struct PoseError {
  double translation_error = 0.0;  // distance between camera centers
  double rotation_error = 0.0;     // degrees, in [0, 180]
};

// Camera-center distance and the angle of R_est * R_truth^T.
PoseError ComputePoseError(const Pose& estimate, const Pose& truth);

double RotationAngleDeg(const Eigen::Quaterniond& a,
                        const Eigen::Quaterniond& b);

// Rotation of `angle_rad` about `axis` (need not be unit length).
Eigen::Quaterniond AngleAxisQuaternion(const Eigen::Vector3d& axis,
                                       double angle_rad);

}  // namespace deviloc
