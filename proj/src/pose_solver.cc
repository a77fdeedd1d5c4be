#include "deviloc/pose_solver.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Cholesky>

#include "deviloc/error.h"
#include "deviloc/kernels.h"

namespace deviloc {
namespace {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

Eigen::Matrix3d Skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

Pose ApplyIncrement(const Pose& pose, const Vector6d& delta) {
  const Eigen::Vector3d w = delta.head<3>();
  const double angle = w.norm();
  const Eigen::Quaterniond dq =
      angle > 0.0 ? AngleAxisQuaternion(w, angle) : Eigen::Quaterniond::Identity();
  // Pose's constructor renormalizes the quaternion.
  return Pose(dq * pose.rotation(), dq * pose.translation() + delta.tail<3>());
}

// Normal equations J^T J and gradient J^T r at `pose`; false if a point is
// at or behind the camera.
bool BuildNormalEquations(const Pose& pose, std::span<const Point2D> pixels,
                          std::span<const Point3D> points,
                          const CameraIntrinsics& k, Matrix6d* jtj,
                          Vector6d* jtr) {
  jtj->setZero();
  jtr->setZero();
  const Eigen::Matrix3d R = pose.RotationMatrix();
  const Eigen::Vector3d t = pose.translation();
  for (size_t i = 0; i < pixels.size(); ++i) {
    const Eigen::Vector3d c = R * points[i] + t;
    if (!(c.z() > 0.0)) return false;
    const double iz = 1.0 / c.z();
    const Eigen::Vector2d r(k.fx * c.x() * iz + k.cx - pixels[i].x(),
                            k.fy * c.y() * iz + k.cy - pixels[i].y());
    Eigen::Matrix<double, 2, 3> dproj;
    dproj << k.fx * iz, 0, -k.fx * c.x() * iz * iz, 0, k.fy * iz,
        -k.fy * c.y() * iz * iz;
    Eigen::Matrix<double, 3, 6> dc;
    dc.leftCols<3>() = -Skew(c);
    dc.rightCols<3>().setIdentity();
    const Eigen::Matrix<double, 2, 6> J = dproj * dc;
    *jtj += J.transpose() * J;
    *jtr += J.transpose() * r;
  }
  return true;
}

std::vector<bool> InlierMask(const std::vector<double>& squared_errors,
                             double threshold, int* count) {
  const double t2 = threshold * threshold;
  std::vector<bool> mask(squared_errors.size());
  *count = 0;
  for (size_t i = 0; i < squared_errors.size(); ++i) {
    mask[i] = squared_errors[i] <= t2;
    *count += mask[i];
  }
  return mask;
}

}  // namespace

double ReprojectionCost(const Pose& pose, std::span<const Point2D> pixels,
                        std::span<const Point3D> points,
                        const CameraIntrinsics& intrinsics) {
  std::vector<double> errors;
  kernels::SquaredReprojectionErrorsSerial(pose, intrinsics, pixels, points, &errors);
  return std::accumulate(errors.begin(), errors.end(), 0.0);
}

RefineResult RefinePose(const Pose& initial, std::span<const Point2D> pixels,
                        std::span<const Point3D> points,
                        const CameraIntrinsics& intrinsics) {
  if (pixels.size() != points.size()) {
    Throw(ErrorCode::kDimensionMismatch, "refinement needs one 3D point per pixel");
  }
  if (pixels.size() < 4) {
    Throw(ErrorCode::kTooFewMatches, "refinement needs at least 4 matches");
  }
  RefineResult result;
  result.pose = initial;
  result.initial_cost = ReprojectionCost(initial, pixels, points, intrinsics);
  double cost = result.initial_cost;
  if (!std::isfinite(cost)) {
    Throw(ErrorCode::kNumericalFailure, "refinement starts with a point behind the camera");
  }

  double lambda = 1e-4;
  Matrix6d jtj;
  Vector6d jtr;
  for (int iter = 0; iter < 100; ++iter) {
    result.iterations = iter + 1;
    if (!BuildNormalEquations(result.pose, pixels, points, intrinsics, &jtj, &jtr) ||
        !jtj.allFinite() || !jtr.allFinite()) {
      Throw(ErrorCode::kNumericalFailure, "non-finite normal equations");
    }
    if (jtr.norm() < 1e-10) break;

    bool accepted = false;
    bool converged = false;
    while (lambda < 1e16) {
      Matrix6d damped = jtj;
      damped.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-12);
      const Eigen::LDLT<Matrix6d> ldlt(damped);
      if (ldlt.info() != Eigen::Success) {
        lambda *= 10.0;
        continue;
      }
      const Vector6d delta = -ldlt.solve(jtr);
      if (!delta.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      if (delta.norm() < 1e-12) {
        converged = true;
        break;
      }
      const Pose candidate = ApplyIncrement(result.pose, delta);
      const double candidate_cost =
          ReprojectionCost(candidate, pixels, points, intrinsics);
      if (candidate_cost < cost) {
        result.pose = candidate;
        cost = candidate_cost;
        lambda = std::max(lambda / 10.0, 1e-12);
        accepted = true;
        break;
      }
      lambda *= 10.0;
    }
    if (converged) break;
    if (!accepted) {
      if (iter == 0 && jtj.diagonal().maxCoeff() == 0.0) {
        Throw(ErrorCode::kNumericalFailure, "singular normal equations");
      }
      break;
    }
  }
  result.final_cost = cost;
  return result;
}

PoseEstimate RansacPnP(std::span<const Point2D> pixels,
                       std::span<const Point3D> points,
                       const CameraIntrinsics& intrinsics,
                       const RansacConfig& config) {
  if (pixels.size() != points.size()) {
    Throw(ErrorCode::kDimensionMismatch, "RANSAC needs one 3D point per pixel");
  }
  const int n = static_cast<int>(pixels.size());
  if (n < 4) {
    Throw(ErrorCode::kTooFewMatches,
          "PnP needs at least 4 matches, got " + std::to_string(n));
  }
  if (!(config.threshold > 0.0) || config.max_iterations < 1 ||
      !(config.confidence > 0.0 && config.confidence < 1.0)) {
    Throw(ErrorCode::kConfigError, "invalid RANSAC configuration");
  }

  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<int> pick(0, n - 1);
  const double t2 = config.threshold * config.threshold;

  Pose best_pose;
  int best_count = 0;
  double best_score = std::numeric_limits<double>::infinity();
  int iterations = 0;
  int required = config.max_iterations;
  std::vector<double> errors;

  while (iterations < std::min(required, config.max_iterations)) {
    ++iterations;
    std::array<int, 4> sample;
    for (int s = 0; s < 4; ++s) {
      int idx;
      do {
        idx = pick(rng);
      } while (std::find(sample.begin(), sample.begin() + s, idx) !=
               sample.begin() + s);
      sample[s] = idx;
    }

    std::vector<Pose> candidates;
    try {
      candidates = P3PSolve({pixels[sample[0]], pixels[sample[1]], pixels[sample[2]]},
                            {points[sample[0]], points[sample[1]], points[sample[2]]},
                            intrinsics);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDegenerateConfiguration) throw;
      continue;
    }
    // The fourth point picks among the up to four P3P solutions.
    const Pose* chosen = nullptr;
    double chosen_error = std::numeric_limits<double>::infinity();
    for (const Pose& candidate : candidates) {
      const Eigen::Vector3d c = candidate.SceneToCam(points[sample[3]]);
      if (!(c.z() > 0.0)) continue;
      const double e = (Project(c, intrinsics) - pixels[sample[3]]).squaredNorm();
      if (e < chosen_error) {
        chosen_error = e;
        chosen = &candidate;
      }
    }
    if (!chosen || chosen_error > t2) continue;

    kernels::SquaredReprojectionErrorsSerial(*chosen, intrinsics, pixels, points,
                                             &errors);
    int count = 0;
    double score = 0.0;
    for (const double e : errors) {
      if (e <= t2) {
        ++count;
        score += e;
      }
    }
    if (count > best_count || (count == best_count && score < best_score)) {
      best_count = count;
      best_score = score;
      best_pose = *chosen;
      const double w = double(count) / n;
      const double miss = 1.0 - std::pow(w, 4);
      if (miss <= 0.0) {
        required = 0;
      } else {
        required = static_cast<int>(std::min<double>(
            config.max_iterations,
            std::ceil(std::log(1.0 - config.confidence) / std::log(miss))));
      }
    }
  }

  if (best_count < 4) {
    Throw(ErrorCode::kNoModelFound, "no pose hypothesis reached 4 inliers in " +
                                        std::to_string(iterations) + " iterations");
  }

  // Refine on the inliers, re-select the inliers under the refined pose and
  // repeat until the set settles. A refined pose is kept when it lowers the
  // truncated cost sum(min(e^2, t^2)); comparing raw inlier counts would
  // throw away a much tighter fit that loses one borderline match.
  auto truncated_cost = [&](const std::vector<double>& e) {
    double sum = 0.0;
    for (const double v : e) sum += std::min(v, t2);
    return sum;
  };
  Pose pose = best_pose;
  kernels::SquaredReprojectionErrorsSerial(pose, intrinsics, pixels, points, &errors);
  int count = 0;
  std::vector<bool> mask = InlierMask(errors, config.threshold, &count);
  double cost = truncated_cost(errors);
  for (int round = 0; round < 4; ++round) {
    std::vector<Point2D> in_pixels;
    std::vector<Point3D> in_points;
    for (int i = 0; i < n; ++i) {
      if (mask[i]) {
        in_pixels.push_back(pixels[i]);
        in_points.push_back(points[i]);
      }
    }
    const Pose refined = RefinePose(pose, in_pixels, in_points, intrinsics).pose;
    kernels::SquaredReprojectionErrorsSerial(refined, intrinsics, pixels, points,
                                             &errors);
    int refined_count = 0;
    std::vector<bool> refined_mask = InlierMask(errors, config.threshold, &refined_count);
    const double refined_cost = truncated_cost(errors);
    if (refined_count < 4 || refined_cost > cost) break;
    const bool same = refined_mask == mask;
    pose = refined;
    mask = std::move(refined_mask);
    count = refined_count;
    cost = refined_cost;
    if (same) break;
  }

  kernels::SquaredReprojectionErrorsSerial(pose, intrinsics, pixels, points, &errors);
  PoseEstimate estimate;
  estimate.pose = pose;
  estimate.inliers = InlierMask(errors, config.threshold, &estimate.num_inliers);
  estimate.iterations = iterations;
  if (estimate.num_inliers < 4) {
    Throw(ErrorCode::kNoModelFound, "fewer than 4 inliers after refinement");
  }
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    if (estimate.inliers[i]) sum += std::sqrt(errors[i]);
  }
  estimate.mean_reprojection_error = sum / estimate.num_inliers;
  return estimate;
}

}  // namespace deviloc
