#include "deviloc/kernels.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace deviloc::kernels {

BilinearTap ComputeBilinearTap(int h, int w, double stride,
                               const Point2D& keypoint) {
  // Cell-center alignment, clamped to the grid border.
  const double gx = std::clamp(keypoint.x() / stride - 0.5, 0.0, double(w - 1));
  const double gy = std::clamp(keypoint.y() / stride - 0.5, 0.0, double(h - 1));
  const int x0 = std::min(static_cast<int>(std::floor(gx)), std::max(w - 2, 0));
  const int y0 = std::min(static_cast<int>(std::floor(gy)), std::max(h - 2, 0));
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double ax = (x1 == x0) ? 0.0 : gx - x0;
  const double ay = (y1 == y0) ? 0.0 : gy - y0;
  BilinearTap tap;
  tap.index = {y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1};
  tap.weight = {(1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay,
                ax * ay};
  return tap;
}

std::vector<BilinearTap> ComputeBilinearTaps(
    int h, int w, double stride, std::span<const Point2D> keypoints) {
  std::vector<BilinearTap> taps(keypoints.size());
  for (size_t i = 0; i < keypoints.size(); ++i) {
    taps[i] = ComputeBilinearTap(h, w, stride, keypoints[i]);
  }
  return taps;
}

void GatherBilinearSerial(const RowMatrix& grid,
                          std::span<const BilinearTap> taps, RowMatrix* out) {
  out->setZero(static_cast<Eigen::Index>(taps.size()), grid.cols());
  for (size_t i = 0; i < taps.size(); ++i) {
    for (int k = 0; k < 4; ++k) {
      const double w = taps[i].weight[k];
      if (w == 0.0) continue;
      out->row(i) += w * grid.row(taps[i].index[k]);
    }
  }
}

void GatherBilinearParallel(const RowMatrix& grid,
                            std::span<const BilinearTap> taps, RowMatrix* out) {
  out->setZero(static_cast<Eigen::Index>(taps.size()), grid.cols());
  const long n = static_cast<long>(taps.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    for (int k = 0; k < 4; ++k) {
      const double w = taps[i].weight[k];
      if (w == 0.0) continue;
      out->row(i) += w * grid.row(taps[i].index[k]);
    }
  }
}

namespace {

inline double SquaredError(const Eigen::Matrix3d& R, const Eigen::Vector3d& t,
                           const CameraIntrinsics& k, const Point2D& x,
                           const Point3D& X) {
  const Eigen::Vector3d c = R * X + t;
  if (!(c.z() > 0.0)) return std::numeric_limits<double>::infinity();
  const double u = k.fx * c.x() / c.z() + k.cx - x.x();
  const double v = k.fy * c.y() / c.z() + k.cy - x.y();
  return u * u + v * v;
}

}  // namespace

void SquaredReprojectionErrorsSerial(const Pose& pose,
                                     const CameraIntrinsics& intrinsics,
                                     std::span<const Point2D> points2d,
                                     std::span<const Point3D> points3d,
                                     std::vector<double>* errors) {
  const Eigen::Matrix3d R = pose.RotationMatrix();
  const Eigen::Vector3d t = pose.translation();
  errors->resize(points2d.size());
  for (size_t i = 0; i < points2d.size(); ++i) {
    (*errors)[i] = SquaredError(R, t, intrinsics, points2d[i], points3d[i]);
  }
}

void SquaredReprojectionErrorsParallel(const Pose& pose,
                                       const CameraIntrinsics& intrinsics,
                                       std::span<const Point2D> points2d,
                                       std::span<const Point3D> points3d,
                                       std::vector<double>* errors) {
  const Eigen::Matrix3d R = pose.RotationMatrix();
  const Eigen::Vector3d t = pose.translation();
  errors->resize(points2d.size());
  const long n = static_cast<long>(points2d.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    (*errors)[i] = SquaredError(R, t, intrinsics, points2d[i], points3d[i]);
  }
}

Point2D QuantizeKeypoint(const Point2D& keypoint, double cell_size) {
  // std::round rounds halfway cases away from zero.
  return {std::round(keypoint.x() / cell_size) * cell_size,
          std::round(keypoint.y() / cell_size) * cell_size};
}

void QuantizeSerial(std::span<const Point2D> keypoints, double cell_size,
                    std::vector<Point2D>* quantized) {
  quantized->resize(keypoints.size());
  for (size_t i = 0; i < keypoints.size(); ++i) {
    (*quantized)[i] = QuantizeKeypoint(keypoints[i], cell_size);
  }
}

void QuantizeParallel(std::span<const Point2D> keypoints, double cell_size,
                      std::vector<Point2D>* quantized) {
  quantized->resize(keypoints.size());
  const long n = static_cast<long>(keypoints.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    (*quantized)[i] = QuantizeKeypoint(keypoints[i], cell_size);
  }
}

}  // namespace deviloc::kernels
