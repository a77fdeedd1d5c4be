#include "deviloc/scene.h"

#include <algorithm>
#include <numeric>
#include <set>

#include "deviloc/error.h"

namespace deviloc {

const Image& SceneModel::ImageById(int image_id) const {
  const auto it = images.find(image_id);
  if (it == images.end()) {
    Throw(ErrorCode::kUnknownImage, "no image with id " + std::to_string(image_id));
  }
  return it->second;
}

const Image* SceneModel::FindImageByName(const std::string& name) const {
  for (const auto& [id, image] : images) {
    if (image.name == name) return &image;
  }
  return nullptr;
}

const Image& SceneModel::ImageByName(const std::string& name) const {
  const Image* image = FindImageByName(name);
  if (image == nullptr) {
    Throw(ErrorCode::kUnknownImage, "no image named '" + name + "'");
  }
  return *image;
}

const CameraIntrinsics& SceneModel::IntrinsicsOf(const Image& image) const {
  const auto it = cameras.find(image.camera_id);
  if (it == cameras.end()) {
    Throw(ErrorCode::kConfigError, "image " + image.name +
                                       " references missing camera " +
                                       std::to_string(image.camera_id));
  }
  return it->second.intrinsics;
}

void SceneModel::Validate() const {
  std::set<std::string> names;
  for (const auto& [id, image] : images) {
    if (!cameras.count(image.camera_id)) {
      Throw(ErrorCode::kConfigError,
            "image " + std::to_string(id) + " references missing camera " +
                std::to_string(image.camera_id));
    }
    if (!names.insert(image.name).second) {
      Throw(ErrorCode::kConfigError, "duplicate image name " + image.name);
    }
    for (const Observation& obs : image.observations) {
      if (obs.point3d_id >= 0 && !points3d.count(obs.point3d_id)) {
        Throw(ErrorCode::kConfigError,
              "image " + std::to_string(id) + " observes missing point " +
                  std::to_string(obs.point3d_id));
      }
    }
  }
}

ObservedPoints ObservedForImage(const SceneModel& scene, int image_id) {
  const Image& image = scene.ImageById(image_id);
  const CameraIntrinsics& intrinsics = scene.IntrinsicsOf(image);
  ObservedPoints observed;
  for (const Observation& obs : image.observations) {
    if (obs.point3d_id < 0) continue;
    const auto it = scene.points3d.find(obs.point3d_id);
    if (it == scene.points3d.end()) continue;
    if (!intrinsics.Contains(obs.pixel)) continue;
    const Point3D cam = image.pose.SceneToCam(it->second.xyz);
    if (!(cam.z() > 0.0)) continue;
    observed.keypoints.push_back(obs.pixel);
    observed.depths.push_back(cam.z());
    observed.scene_points.push_back(it->second.xyz);
    observed.point3d_ids.push_back(obs.point3d_id);
  }
  if (observed.size() == 0) {
    Throw(ErrorCode::kNoObservations,
          "image " + image.name + " observes no valid 3D points");
  }
  return observed;
}

ObservedPoints CapObservedPoints(const ObservedPoints& observed, size_t cap,
                                 const CameraIntrinsics& intrinsics) {
  if (cap == 0 || observed.size() <= cap) return observed;
  const Point2D center(intrinsics.cx, intrinsics.cy);
  std::vector<size_t> order(observed.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return (observed.keypoints[a] - center).squaredNorm() <
           (observed.keypoints[b] - center).squaredNorm();
  });
  order.resize(cap);
  std::sort(order.begin(), order.end());
  ObservedPoints kept;
  for (const size_t i : order) {
    kept.keypoints.push_back(observed.keypoints[i]);
    kept.depths.push_back(observed.depths[i]);
    kept.scene_points.push_back(observed.scene_points[i]);
    kept.point3d_ids.push_back(observed.point3d_ids[i]);
  }
  return kept;
}

}  // namespace deviloc
