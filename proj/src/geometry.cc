#include "deviloc/geometry.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "deviloc/error.h"

namespace deviloc {

void CameraIntrinsics::Validate() const {
  std::ostringstream why;
  if (!(fx > 0.0) || !(fy > 0.0)) {
    why << "focal lengths must be positive (fx=" << fx << ", fy=" << fy << ")";
  } else if (width <= 0 || height <= 0) {
    why << "image size must be positive (" << width << "x" << height << ")";
  } else if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height)) {
    why << "principal point (" << cx << ", " << cy << ") outside the "
        << width << "x" << height << " image";
  } else {
    return;
  }
  Throw(ErrorCode::kConfigError, why.str());
}

bool CameraIntrinsics::Contains(const Point2D& pixel) const {
  return pixel.x() >= 0.0 && pixel.y() >= 0.0 && pixel.x() <= width &&
         pixel.y() <= height;
}

Pose::Pose()
    : rotation_(Eigen::Quaterniond::Identity()),
      translation_(Eigen::Vector3d::Zero()) {}

Pose::Pose(const Eigen::Quaterniond& rotation,
           const Eigen::Vector3d& translation)
    : rotation_(rotation), translation_(translation) {
  const double norm = rotation_.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    Throw(ErrorCode::kConfigError, "pose quaternion has zero or invalid norm");
  }
  // Leaves unit quaternions untouched so that renormalizing is idempotent
  // and a sign flip of a stored rotation compares equal.
  if (std::abs(norm - 1.0) > 4.0 * std::numeric_limits<double>::epsilon()) {
    rotation_.coeffs() /= norm;
  }
}

Pose::Pose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
    : Pose(Eigen::Quaterniond(rotation), translation) {}

Eigen::Matrix3d Pose::RotationMatrix() const {
  return rotation_.toRotationMatrix();
}

Eigen::Vector3d Pose::CameraCenter() const {
  return -(rotation_.conjugate() * translation_);
}

Pose Pose::Inverse() const {
  const Eigen::Quaterniond inv = rotation_.conjugate();
  return Pose(inv, -(inv * translation_));
}

Point3D Pose::SceneToCam(const Point3D& scene_point) const {
  return rotation_ * scene_point + translation_;
}

Point3D Pose::CamToScene(const Point3D& cam_point) const {
  return rotation_.conjugate() * (cam_point - translation_);
}

bool Pose::operator==(const Pose& other) const {
  const bool same_rotation =
      rotation_.coeffs() == other.rotation_.coeffs() ||
      rotation_.coeffs() == -other.rotation_.coeffs();
  return same_rotation && translation_ == other.translation_;
}

Eigen::Vector2d NormalizeKeypoint(const Point2D& pixel,
                                  const CameraIntrinsics& intrinsics) {
  return {(pixel.x() - intrinsics.cx) / intrinsics.fx,
          (pixel.y() - intrinsics.cy) / intrinsics.fy};
}

Point2D Project(const Point3D& cam_point, const CameraIntrinsics& intrinsics) {
  if (!(cam_point.z() > 0.0)) {
    Throw(ErrorCode::kNonPositiveDepth,
          "cannot project point with z=" + std::to_string(cam_point.z()));
  }
  return {intrinsics.fx * cam_point.x() / cam_point.z() + intrinsics.cx,
          intrinsics.fy * cam_point.y() / cam_point.z() + intrinsics.cy};
}

Point3D Unproject(const Point2D& pixel, double depth,
                  const CameraIntrinsics& intrinsics) {
  if (!(depth > 0.0)) {
    Throw(ErrorCode::kNonPositiveDepth,
          "cannot unproject with depth=" + std::to_string(depth));
  }
  const Eigen::Vector2d n = NormalizeKeypoint(pixel, intrinsics);
  return {depth * n.x(), depth * n.y(), depth};
}

Point3D CamToScene(const Point3D& cam_point, const Pose& pose) {
  return pose.CamToScene(cam_point);
}

Point3D SceneToCam(const Point3D& scene_point, const Pose& pose) {
  return pose.SceneToCam(scene_point);
}

double RotationAngleDeg(const Eigen::Quaterniond& a,
                        const Eigen::Quaterniond& b) {
  // The trace formula acos((tr(R) - 1) / 2) bottoms out near 1e-6 degrees
  // for identical rotations; the half-angle atan2 form is exact at both ends.
  const Eigen::Quaterniond rel = a * b.conjugate();
  const double s = rel.vec().norm();
  const double c = std::abs(rel.w());
  const double angle = 2.0 * std::atan2(s, c);
  return std::clamp(angle, 0.0, std::numbers::pi) * 180.0 / std::numbers::pi;
}

PoseError ComputePoseError(const Pose& estimate, const Pose& truth) {
  PoseError error;
  error.translation_error =
      (estimate.CameraCenter() - truth.CameraCenter()).norm();
  error.rotation_error = RotationAngleDeg(estimate.rotation(), truth.rotation());
  return error;
}

Eigen::Quaterniond AngleAxisQuaternion(const Eigen::Vector3d& axis,
                                       double angle_rad) {
  return Eigen::Quaterniond(Eigen::AngleAxisd(angle_rad, axis.normalized()));
}

}  // namespace deviloc
