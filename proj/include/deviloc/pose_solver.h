#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "deviloc/geometry.h"

namespace deviloc {

// Minimal absolute pose from three 2D-3D correspondences (Grunert's
// quartic). Returns every real solution with positive depths that
// reprojects the three points within 1e-6 px. Throws
// kDegenerateConfiguration for collinear points or coincident rays.
std::vector<Pose> P3PSolve(const std::array<Point2D, 3>& pixels,
                           const std::array<Point3D, 3>& points,
                           const CameraIntrinsics& intrinsics);

// Real roots of c[0] x^4 + c[1] x^3 + c[2] x^2 + c[3] x + c[4], polished by
// Newton steps. Lower degree when leading coefficients vanish.
std::vector<double> SolveQuartic(const std::array<double, 5>& coefficients);

struct RansacConfig {
  double threshold = 20.0;  // pixels
  int max_iterations = 10000;
  double confidence = 0.9999;
  uint64_t seed = 0;
};

struct PoseEstimate {
  Pose pose;
  std::vector<bool> inliers;
  int num_inliers = 0;
  double mean_reprojection_error = 0.0;  // pixels, over inliers
  int iterations = 0;
};

// P3P hypotheses from random 3-point samples, disambiguated by a fourth
// point, scored by inlier count (reprojection error <= threshold), with
// adaptive termination; then refinement on the inliers and a final inlier
// mask recomputed under the returned pose. Throws kTooFewMatches for fewer
// than 4 matches and kNoModelFound when no hypothesis reaches 4 inliers.
PoseEstimate RansacPnP(std::span<const Point2D> pixels,
                       std::span<const Point3D> points,
                       const CameraIntrinsics& intrinsics,
                       const RansacConfig& config);

struct RefineResult {
  Pose pose;
  double initial_cost = 0.0;  // sum of squared pixel residuals
  double final_cost = 0.0;
  int iterations = 0;
};

// Levenberg-Marquardt on the summed squared reprojection error with the
// left increment R <- Exp(w) R, t <- Exp(w) t + v. Stops on gradient norm
// < 1e-10, step norm < 1e-12 or 100 iterations. Only cost-decreasing steps
// are accepted. Throws kTooFewMatches below 4 points and kNumericalFailure
// when the normal equations cannot be solved at any damping.
RefineResult RefinePose(const Pose& initial, std::span<const Point2D> pixels,
                        std::span<const Point3D> points,
                        const CameraIntrinsics& intrinsics);

// Sum of squared pixel residuals; +inf if a point is at or behind the camera.
double ReprojectionCost(const Pose& pose, std::span<const Point2D> pixels,
                        std::span<const Point3D> points,
                        const CameraIntrinsics& intrinsics);

}  // namespace deviloc
