#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "deviloc/geometry.h"

namespace deviloc {

enum class CameraModel { kSimplePinhole, kPinhole };

struct Camera {
  int camera_id = 0;
  CameraModel model = CameraModel::kPinhole;
  CameraIntrinsics intrinsics;

  bool operator==(const Camera&) const = default;
};

struct Observation {
  Point2D pixel;
  int64_t point3d_id = -1;

  bool operator==(const Observation&) const = default;
};

struct Image {
  int image_id = 0;
  std::string name;
  Pose pose;
  int camera_id = 0;
  std::vector<Observation> observations;

  bool operator==(const Image&) const = default;
};

struct TrackElement {
  int image_id = 0;
  int point2d_idx = 0;  // index into Image::observations

  bool operator==(const TrackElement&) const = default;
};

struct ScenePoint {
  int64_t point3d_id = 0;
  Point3D xyz;
  std::array<uint8_t, 3> color = {0, 0, 0};
  double error = 0.0;
  std::vector<TrackElement> track;

  bool operator==(const ScenePoint&) const = default;
};

// Cameras, posed reference images and the sparse point cloud of an SfM
// reconstruction. Maps are ordered so iteration (and every file written from
// a model) is deterministic.
struct SceneModel {
  std::map<int, Camera> cameras;
  std::map<int, Image> images;
  std::map<int64_t, ScenePoint> points3d;

  const Image& ImageById(int image_id) const;
  const Image& ImageByName(const std::string& name) const;
  const Image* FindImageByName(const std::string& name) const;
  const CameraIntrinsics& IntrinsicsOf(const Image& image) const;

  // Checks camera/point cross references and name uniqueness; throws
  // kConfigError describing the first violation.
  void Validate() const;

  bool operator==(const SceneModel&) const = default;
};

// Observed 3D points of one reference image decomposed into pixel keypoints
// and camera-frame depths.
struct ObservedPoints {
  std::vector<Point2D> keypoints;
  std::vector<double> depths;
  std::vector<Point3D> scene_points;
  std::vector<int64_t> point3d_ids;

  size_t size() const { return keypoints.size(); }
};

// Keypoints are the recorded 2D observations; depths come from transforming
// the 3D point into the image's camera frame. Points with non-positive depth
// or recorded pixels outside the image are dropped. Throws kNoObservations
// when nothing survives and kUnknownImage for a missing image id.
ObservedPoints ObservedForImage(const SceneModel& scene, int image_id);

// Keeps the `cap` observations closest to the principal point (stable
// order otherwise). cap == 0 means no limit.
ObservedPoints CapObservedPoints(const ObservedPoints& observed, size_t cap,
                                 const CameraIntrinsics& intrinsics);

}  // namespace deviloc
