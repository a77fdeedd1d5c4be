#pragma once

// Synthetic absolute-pose problems with labeled outliers.

#include <random>
#include <vector>

#include "deviloc/geometry.h"

namespace deviloc::testing {

struct PnPCase {
  Pose truth;
  CameraIntrinsics intrinsics{500, 500, 320, 240, 640, 480};
  std::vector<Point2D> pixels;
  std::vector<Point3D> points;
  std::vector<bool> is_outlier;
};

// Points spread over a 10-unit cube, camera 8 to 14 units away looking at
// it. Outlier pixels are uniform over the image but at least
// `outlier_min_distance` px from the true projection, so that a labeled
// outlier is actually wrong under any reasonable threshold.
inline PnPCase RandomPnPCase(uint64_t seed, int num_inliers, int num_outliers,
                             double pixel_noise, double outlier_min_distance = 40.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  PnPCase c;
  const Eigen::Vector3d axis(n(rng), n(rng), n(rng));
  const Eigen::Quaterniond q = AngleAxisQuaternion(axis, M_PI * u(rng));
  const double distance = 11.0 + 3.0 * u(rng);
  // Camera center at distance along the rotated optical axis behind the
  // origin: x_cam = R x + t with t = (0, 0, distance).
  c.truth = Pose(q, Eigen::Vector3d(0.3 * u(rng), 0.3 * u(rng), distance));
  const int total = num_inliers + num_outliers;
  while (static_cast<int>(c.points.size()) < total) {
    const Point3D p(5 * u(rng), 5 * u(rng), 5 * u(rng));
    const Point3D cam = c.truth.SceneToCam(p);
    if (cam.z() < 1.0) continue;
    const Point2D px = Project(cam, c.intrinsics);
    if (!c.intrinsics.Contains(px)) continue;
    const bool outlier = static_cast<int>(c.points.size()) >= num_inliers;
    Point2D observed = px;
    if (outlier) {
      std::uniform_real_distribution<double> ux(0.0, c.intrinsics.width),
          uy(0.0, c.intrinsics.height);
      do {
        observed = {ux(rng), uy(rng)};
      } while ((observed - px).norm() < outlier_min_distance);
    } else {
      observed += pixel_noise * Point2D(n(rng), n(rng));
    }
    c.points.push_back(p);
    c.pixels.push_back(observed);
    c.is_outlier.push_back(outlier);
  }
  // Interleave so outliers are not all at the tail.
  std::vector<size_t> order(total);
  for (int i = 0; i < total; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  PnPCase shuffled = c;
  for (int i = 0; i < total; ++i) {
    shuffled.points[i] = c.points[order[i]];
    shuffled.pixels[i] = c.pixels[order[i]];
    shuffled.is_outlier[i] = c.is_outlier[order[i]];
  }
  return shuffled;
}

}  // namespace deviloc::testing
