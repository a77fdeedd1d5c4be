#pragma once

// Data-parallel inner loops. Each kernel has a plain serial version, kept as
// the reference the OpenMP version is tested and benchmarked against. Every
// parallel kernel writes disjoint outputs per iteration, so the two agree
// bit-for-bit at any thread count.

#include <array>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "deviloc/geometry.h"

namespace deviloc {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace kernels {

// Four grid cells and weights interpolating one keypoint on an h x w feature
// grid whose cell centers sit at (i + 0.5) * stride pixels.
struct BilinearTap {
  std::array<int, 4> index;  // row-major cell index
  std::array<double, 4> weight;
};

BilinearTap ComputeBilinearTap(int h, int w, double stride,
                               const Point2D& keypoint);

std::vector<BilinearTap> ComputeBilinearTaps(int h, int w, double stride,
                                             std::span<const Point2D> keypoints);

// out(i, :) = sum_k tap[i].weight[k] * grid(tap[i].index[k], :)
void GatherBilinearSerial(const RowMatrix& grid,
                          std::span<const BilinearTap> taps, RowMatrix* out);
void GatherBilinearParallel(const RowMatrix& grid,
                            std::span<const BilinearTap> taps, RowMatrix* out);

// Squared pixel distance between observed keypoints and projected scene
// points under `pose`; points at or behind the camera give +inf.
void SquaredReprojectionErrorsSerial(const Pose& pose,
                                     const CameraIntrinsics& intrinsics,
                                     std::span<const Point2D> points2d,
                                     std::span<const Point3D> points3d,
                                     std::vector<double>* errors);
void SquaredReprojectionErrorsParallel(const Pose& pose,
                                       const CameraIntrinsics& intrinsics,
                                       std::span<const Point2D> points2d,
                                       std::span<const Point3D> points3d,
                                       std::vector<double>* errors);

// Per-axis round-half-away-from-zero of k / s, times s.
Point2D QuantizeKeypoint(const Point2D& keypoint, double cell_size);
void QuantizeSerial(std::span<const Point2D> keypoints, double cell_size,
                    std::vector<Point2D>* quantized);
void QuantizeParallel(std::span<const Point2D> keypoints, double cell_size,
                      std::vector<Point2D>* quantized);

}  // namespace kernels
}  // namespace deviloc
