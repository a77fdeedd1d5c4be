#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "deviloc/scene.h"

namespace deviloc {

struct SyntheticSceneConfig {
  int num_points = 1500;
  int num_cameras = 12;
  int num_queries = 0;
  double box_extent = 10.0;
  double pixel_noise = 0.0;       // sigma of recorded observations (px)
  double outlier_fraction = 0.0;  // observations re-pointed at a wrong 3D id
  uint64_t seed = 0;
  uint64_t query_seed = 1;  // query poses are drawn from their own stream

  int width = 640;
  int height = 480;
  double focal = 500.0;
  double camera_distance = 11.0;
  double min_elevation_deg = 45.0;
  double max_elevation_deg = 75.0;
  double terrain_amplitude = 0.12;  // fraction of box_extent
  // Random fraction of generated points kept in the model (1 keeps all).
  double point_keep_fraction = 1.0;

  // Throws kConfigError on degenerate parameters.
  void Validate() const;
};

// Smooth heightfield z = h(x, y) over the square footprint
// |x|, |y| <= extent / 2. Outside the footprint there is no surface.
class Terrain {
 public:
  Terrain() = default;
  Terrain(double extent, double amplitude, uint64_t seed);

  double Height(double x, double y) const;
  Eigen::Vector2d Gradient(double x, double y) const;
  bool InFootprint(double x, double y) const;
  double extent() const { return extent_; }
  double amplitude() const { return amplitude_; }

  // First intersection o + s * d with s > 0, where d is not required to be
  // unit length (with d = R^T (x_n, y_n, 1) the parameter s is the camera
  // depth). Rays that enter the surface block through a side wall or miss
  // it return nullopt.
  std::optional<double> RayCast(const Eigen::Vector3d& origin,
                                const Eigen::Vector3d& direction) const;

 private:
  struct Wave {
    Eigen::Vector2d frequency;
    double phase = 0.0;
    double weight = 0.0;
  };
  double extent_ = 0.0;
  double amplitude_ = 0.0;
  double lipschitz_ = 0.0;
  std::vector<Wave> waves_;
};

struct SyntheticView {
  int view_id = 0;
  std::string name;
  Pose pose;
  int camera_id = 1;
  bool is_query = false;
};

struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<double> depth;  // row-major, NaN marks holes

  double At(int x, int y) const { return depth[size_t(y) * width + x]; }
};

class SyntheticScene {
 public:
  SyntheticSceneConfig config;
  SceneModel model;
  Terrain terrain;
  // Every generated view: database images (ids 1..num_cameras, also present
  // in `model`) followed by held-out queries (ids from kFirstQueryId).
  std::map<int, SyntheticView> views;
  // outlier_labels[image_id][i] marks model.images[image_id].observations[i]
  // as an injected wrong association.
  std::map<int, std::vector<bool>> outlier_labels;

  static constexpr int kFirstQueryId = 100001;

  const CameraIntrinsics& intrinsics() const;
  const SyntheticView& View(int view_id) const;
  const SyntheticView& ViewByName(const std::string& name) const;
  std::vector<int> QueryIds() const;
  std::vector<int> DatabaseIds() const;

  // Ray-cast depth through an exact pixel position.
  std::optional<double> ExactDepth(int view_id, const Point2D& pixel) const;
  // Ground-truth depth map lookup: nearest pixel (integer coordinates are
  // pixel centers). nullopt on holes or outside the image.
  std::optional<double> DepthAt(int view_id, const Point2D& pixel) const;
  // Surface point seen through `pixel`, or nullopt on holes.
  std::optional<Point3D> SurfacePoint(int view_id, const Point2D& pixel) const;

  // Projects inside the image, lies in front of the camera and is not
  // occluded by the surface.
  bool IsVisible(int view_id, const Point3D& scene_point) const;

  DepthMap RenderDepthMap(int view_id, bool parallel = true) const;
};

SyntheticScene GenerateSyntheticScene(const SyntheticSceneConfig& config);

// Draws camera poses on the sphere segment around the box center; exposed so
// tests and tools can create extra query views with the scene's geometry.
Pose SampleLookAtPose(const SyntheticSceneConfig& config, double azimuth,
                      double elevation, const Eigen::Vector3d& target);

}  // namespace deviloc
