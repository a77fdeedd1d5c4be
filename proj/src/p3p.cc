#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>

#include "deviloc/error.h"
#include "deviloc/pose_solver.h"

namespace deviloc {
namespace {

double EvalPoly(const std::vector<double>& c, double x) {
  double y = 0.0;
  for (const double a : c) y = y * x + a;
  return y;
}

double EvalDerivative(const std::vector<double>& c, double x) {
  const int n = static_cast<int>(c.size()) - 1;
  double y = 0.0;
  for (int i = 0; i < n; ++i) y = y * x + c[i] * (n - i);
  return y;
}

// Rigid transform with cam = R * scene + t for three exact correspondences.
Pose AlignPoints(const std::array<Point3D, 3>& scene,
                 const std::array<Eigen::Vector3d, 3>& cam) {
  const Eigen::Vector3d scene_mean = (scene[0] + scene[1] + scene[2]) / 3.0;
  const Eigen::Vector3d cam_mean = (cam[0] + cam[1] + cam[2]) / 3.0;
  Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
  for (int i = 0; i < 3; ++i) {
    H += (scene[i] - scene_mean) * (cam[i] - cam_mean).transpose();
  }
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU |
                                                     Eigen::ComputeFullV);
  Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
  D(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1 : 1;
  const Eigen::Matrix3d R = svd.matrixV() * D * svd.matrixU().transpose();
  return Pose(R, cam_mean - R * scene_mean);
}

// Newton on the three law-of-cosines equations in the ray distances. The
// quartic route loses digits when its roots cluster; these equations do not.
Eigen::Vector3d PolishDistances(Eigen::Vector3d d, double a2, double b2, double c2,
                                double ca, double cb, double cg) {
  auto residual = [&](const Eigen::Vector3d& x) {
    return Eigen::Vector3d(x[1] * x[1] + x[2] * x[2] - 2 * x[1] * x[2] * ca - a2,
                           x[0] * x[0] + x[2] * x[2] - 2 * x[0] * x[2] * cb - b2,
                           x[0] * x[0] + x[1] * x[1] - 2 * x[0] * x[1] * cg - c2);
  };
  Eigen::Vector3d r = residual(d);
  for (int it = 0; it < 5; ++it) {
    Eigen::Matrix3d J;
    J << 0, 2 * (d[1] - d[2] * ca), 2 * (d[2] - d[1] * ca),
        2 * (d[0] - d[2] * cb), 0, 2 * (d[2] - d[0] * cb),
        2 * (d[0] - d[1] * cg), 2 * (d[1] - d[0] * cg), 0;
    const Eigen::Vector3d next = d - J.partialPivLu().solve(r);
    const Eigen::Vector3d next_r = residual(next);
    if (!next.allFinite() || !(next_r.norm() < r.norm())) break;
    d = next;
    r = next_r;
  }
  return d;
}

}  // namespace

std::vector<double> SolveQuartic(const std::array<double, 5>& coefficients) {
  const double scale =
      std::max({std::abs(coefficients[0]), std::abs(coefficients[1]),
                std::abs(coefficients[2]), std::abs(coefficients[3]),
                std::abs(coefficients[4])});
  if (scale == 0.0) return {};
  std::vector<double> c(coefficients.begin(), coefficients.end());
  for (double& a : c) a /= scale;
  while (c.size() > 1 && std::abs(c.front()) < 1e-14) c.erase(c.begin());
  const int degree = static_cast<int>(c.size()) - 1;
  if (degree < 1) return {};

  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(degree, degree);
  for (int i = 0; i < degree; ++i) companion(0, i) = -c[i + 1] / c[0];
  for (int i = 1; i < degree; ++i) companion(i, i - 1) = 1.0;
  const Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, false);

  std::vector<double> roots;
  for (int i = 0; i < degree; ++i) {
    const std::complex<double> z = solver.eigenvalues()(i);
    if (std::abs(z.imag()) > 1e-6 * std::max(1.0, std::abs(z.real()))) continue;
    double x = z.real();
    for (int it = 0; it < 8; ++it) {
      const double d = EvalDerivative(c, x);
      if (d == 0.0) break;
      const double step = EvalPoly(c, x) / d;
      x -= step;
      if (std::abs(step) <= 1e-16 * std::max(1.0, std::abs(x))) break;
    }
    roots.push_back(x);
  }
  std::sort(roots.begin(), roots.end());
  return roots;
}

std::vector<Pose> P3PSolve(const std::array<Point2D, 3>& pixels,
                           const std::array<Point3D, 3>& points,
                           const CameraIntrinsics& intrinsics) {
  const Point3D& P1 = points[0];
  const Point3D& P2 = points[1];
  const Point3D& P3 = points[2];
  const double a = (P2 - P3).norm();
  const double b = (P1 - P3).norm();
  const double c = (P1 - P2).norm();
  const double span = std::max({a, b, c});
  if (span == 0.0 || (P2 - P1).cross(P3 - P1).norm() <= 1e-10 * span * span) {
    Throw(ErrorCode::kDegenerateConfiguration, "collinear scene points");
  }

  std::array<Eigen::Vector3d, 3> j;
  for (int i = 0; i < 3; ++i) {
    const Eigen::Vector2d n = NormalizeKeypoint(pixels[i], intrinsics);
    j[i] = Eigen::Vector3d(n.x(), n.y(), 1.0).normalized();
  }
  if (j[0].cross(j[1]).norm() < 1e-12 || j[0].cross(j[2]).norm() < 1e-12 ||
      j[1].cross(j[2]).norm() < 1e-12) {
    Throw(ErrorCode::kDegenerateConfiguration, "coincident rays");
  }

  const double ca = j[1].dot(j[2]);
  const double cb = j[0].dot(j[2]);
  const double cg = j[0].dot(j[1]);
  const double a2 = a * a, b2 = b * b, c2 = c * c;
  const double k = (a2 - c2) / b2;
  const double ac_b = (a2 + c2) / b2;

  const std::array<double, 5> coeffs = {
      (k - 1) * (k - 1) - 4 * c2 / b2 * ca * ca,
      4 * (k * (1 - k) * cb - (1 - ac_b) * ca * cg + 2 * c2 / b2 * ca * ca * cb),
      2 * (k * k - 1 + 2 * k * k * cb * cb + 2 * (b2 - c2) / b2 * ca * ca -
           4 * ac_b * ca * cb * cg + 2 * (b2 - a2) / b2 * cg * cg),
      4 * (-k * (1 + k) * cb + 2 * a2 / b2 * cg * cg * cb - (1 - ac_b) * ca * cg),
      (1 + k) * (1 + k) - 4 * a2 / b2 * cg * cg};

  std::vector<Pose> solutions;
  for (const double v : SolveQuartic(coeffs)) {
    if (!(v > 0.0)) continue;
    const double q = 1 + v * v - 2 * v * cb;
    if (!(q > 0.0)) continue;
    const double s1 = std::sqrt(b2 / q);

    // u from the linear relation; near its singularity fall back to the
    // quadratic from side c and keep the root that best fits side a.
    std::vector<double> u_candidates;
    const double denom = 2 * b2 * (v * ca - cg);
    if (std::abs(denom) > 1e-10 * b2) {
      u_candidates.push_back((v * v * b2 - a2 * q - b2 + c2 * q) / denom);
    } else {
      const double disc = cg * cg - 1 + c2 / (s1 * s1);
      if (disc >= 0.0) {
        u_candidates.push_back(cg + std::sqrt(disc));
        u_candidates.push_back(cg - std::sqrt(disc));
      }
    }
    for (const double u : u_candidates) {
      if (!(u > 0.0)) continue;
      const Eigen::Vector3d d =
          PolishDistances({s1, u * s1, v * s1}, a2, b2, c2, ca, cb, cg);
      if (!(d.minCoeff() > 0.0)) continue;
      const std::array<Eigen::Vector3d, 3> cam = {d[0] * j[0], d[1] * j[1], d[2] * j[2]};
      const Pose pose = AlignPoints(points, cam);
      bool ok = true;
      for (int i = 0; i < 3 && ok; ++i) {
        const Eigen::Vector3d x = pose.SceneToCam(points[i]);
        ok = x.z() > 0.0 &&
             (Project(x, intrinsics) - pixels[i]).norm() <= 1e-6;
      }
      if (ok) solutions.push_back(pose);
    }
  }
  return solutions;
}

}  // namespace deviloc
