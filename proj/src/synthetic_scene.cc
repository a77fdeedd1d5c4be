#include "deviloc/synthetic_scene.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "deviloc/error.h"
#include "deviloc/random.h"

namespace deviloc {
namespace {

constexpr double kPi = std::numbers::pi;

std::string ViewName(const char* prefix, int index) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%s_%04d.png", prefix, index);
  return buffer;
}

}  // namespace

void SyntheticSceneConfig::Validate() const {
  auto fail = [](const std::string& why) { Throw(ErrorCode::kConfigError, why); };
  if (num_points < 50) fail("num_points must be >= 50");
  if (num_cameras < 2) fail("num_cameras must be >= 2");
  if (num_queries < 0) fail("num_queries must be >= 0");
  if (!(box_extent > 0.0)) fail("box_extent must be positive");
  if (!(pixel_noise >= 0.0)) fail("pixel_noise must be >= 0");
  if (!(outlier_fraction >= 0.0 && outlier_fraction < 1.0)) {
    fail("outlier_fraction must lie in [0, 1)");
  }
  if (width < 16 || height < 16) fail("image size too small");
  if (!(focal > 0.0)) fail("focal must be positive");
  if (!(terrain_amplitude >= 0.0 && terrain_amplitude < 0.5)) {
    fail("terrain_amplitude must lie in [0, 0.5)");
  }
  if (!(min_elevation_deg > 5.0 && max_elevation_deg <= 90.0 &&
        min_elevation_deg <= max_elevation_deg)) {
    fail("elevation range must satisfy 5 < min <= max <= 90");
  }
  if (!(camera_distance * std::sin(min_elevation_deg * kPi / 180.0) >
        1.5 * terrain_amplitude * box_extent)) {
    fail("cameras would sit inside the terrain slab");
  }
  if (!(point_keep_fraction > 0.0 && point_keep_fraction <= 1.0)) {
    fail("point_keep_fraction must lie in (0, 1]");
  }
}

Terrain::Terrain(double extent, double amplitude, uint64_t seed)
    : extent_(extent), amplitude_(amplitude) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  constexpr int kWaves = 3;
  double total_weight = 0.0;
  for (int k = 0; k < kWaves; ++k) {
    const double angle = 2.0 * kPi * unit(rng);
    const double wavelength = extent * (0.6 + 0.9 * unit(rng));
    Wave wave;
    wave.frequency = Eigen::Vector2d(std::cos(angle), std::sin(angle)) *
                     (2.0 * kPi / wavelength);
    wave.phase = 2.0 * kPi * unit(rng);
    wave.weight = 0.5 + unit(rng);
    total_weight += wave.weight;
    waves_.push_back(wave);
  }
  lipschitz_ = 0.0;
  for (Wave& wave : waves_) {
    wave.weight *= amplitude_ / total_weight;
    lipschitz_ += wave.weight * wave.frequency.norm();
  }
}

double Terrain::Height(double x, double y) const {
  double z = 0.0;
  for (const Wave& w : waves_) {
    z += w.weight * std::sin(w.frequency.x() * x + w.frequency.y() * y + w.phase);
  }
  return z;
}

Eigen::Vector2d Terrain::Gradient(double x, double y) const {
  Eigen::Vector2d g = Eigen::Vector2d::Zero();
  for (const Wave& w : waves_) {
    g += w.weight *
         std::cos(w.frequency.x() * x + w.frequency.y() * y + w.phase) *
         w.frequency;
  }
  return g;
}

bool Terrain::InFootprint(double x, double y) const {
  const double half = 0.5 * extent_;
  return std::abs(x) <= half && std::abs(y) <= half;
}

std::optional<double> Terrain::RayCast(const Eigen::Vector3d& o,
                                       const Eigen::Vector3d& d) const {
  const double half = 0.5 * extent_;
  double t_in = 0.0;
  double t_out = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 2; ++axis) {
    if (std::abs(d[axis]) < 1e-300) {
      if (std::abs(o[axis]) > half) return std::nullopt;
      continue;
    }
    double t1 = (-half - o[axis]) / d[axis];
    double t2 = (half - o[axis]) / d[axis];
    if (t1 > t2) std::swap(t1, t2);
    t_in = std::max(t_in, t1);
    t_out = std::min(t_out, t2);
  }
  if (!(t_in < t_out)) return std::nullopt;

  auto g = [&](double t) {
    return o.z() + t * d.z() - Height(o.x() + t * d.x(), o.y() + t * d.y());
  };
  auto dg = [&](double t) {
    const Eigen::Vector2d grad = Gradient(o.x() + t * d.x(), o.y() + t * d.y());
    return d.z() - grad.x() * d.x() - grad.y() * d.y();
  };

  double t = t_in;
  if (g(t) < 0.0) return std::nullopt;  // side wall or camera below surface
  if (d.z() < 0.0) {
    const double t_top = (amplitude_ - o.z()) / d.z();
    if (t_top > t) t = t_top;
    if (t > t_out) return std::nullopt;
  }

  // Conservative marching never steps past the first root because g cannot
  // decrease faster than `rate`; Newton then polishes to machine precision.
  const double rate = std::abs(d.z()) + lipschitz_ * d.head<2>().norm();
  const double tolerance = 1e-9 * extent_;
  const double nudge = 1e-5 * extent_ / std::max(d.norm(), 1e-300);
  for (int iter = 0; iter < 200000; ++iter) {
    const double gt = g(t);
    if (gt > tolerance) {
      t += gt / rate;
      if (t > t_out) return std::nullopt;
      continue;
    }
    double tn = t;
    bool converged = false;
    for (int k = 0; k < 60; ++k) {
      const double slope = dg(tn);
      if (!(slope < 0.0)) break;
      const double step = -g(tn) / slope;
      tn += step;
      if (tn < t || tn > t_out + nudge) break;
      if (std::abs(step) <= 1e-15 * (1.0 + std::abs(tn))) {
        converged = true;
        break;
      }
    }
    if (converged && std::abs(g(tn)) <= 1e-6 * tolerance + 1e-13) {
      if (tn > t_out || !(tn > 0.0)) return std::nullopt;
      return tn;
    }
    // Grazing contact without a crossing: skip ahead a little, bisecting if
    // the nudge happens to jump over a root.
    const double next = t + nudge;
    if (next > t_out) return std::nullopt;
    if (g(next) < 0.0) {
      double lo = t;
      double hi = next;
      for (int k = 0; k < 200 && hi - lo > 1e-15 * (1.0 + hi); ++k) {
        const double mid = 0.5 * (lo + hi);
        (g(mid) >= 0.0 ? lo : hi) = mid;
      }
      return 0.5 * (lo + hi);
    }
    t = next;
  }
  return std::nullopt;
}

const CameraIntrinsics& SyntheticScene::intrinsics() const {
  return model.cameras.at(1).intrinsics;
}

const SyntheticView& SyntheticScene::View(int view_id) const {
  const auto it = views.find(view_id);
  if (it == views.end()) {
    Throw(ErrorCode::kUnknownImage, "no synthetic view " + std::to_string(view_id));
  }
  return it->second;
}

const SyntheticView& SyntheticScene::ViewByName(const std::string& name) const {
  for (const auto& [id, view] : views) {
    if (view.name == name) return view;
  }
  Throw(ErrorCode::kUnknownImage, "no synthetic view named " + name);
}

std::vector<int> SyntheticScene::QueryIds() const {
  std::vector<int> ids;
  for (const auto& [id, view] : views) {
    if (view.is_query) ids.push_back(id);
  }
  return ids;
}

std::vector<int> SyntheticScene::DatabaseIds() const {
  std::vector<int> ids;
  for (const auto& [id, view] : views) {
    if (!view.is_query) ids.push_back(id);
  }
  return ids;
}

std::optional<double> SyntheticScene::ExactDepth(int view_id,
                                                 const Point2D& pixel) const {
  const SyntheticView& view = View(view_id);
  const Eigen::Vector2d n = NormalizeKeypoint(pixel, intrinsics());
  const Eigen::Vector3d direction =
      view.pose.rotation().conjugate() * Eigen::Vector3d(n.x(), n.y(), 1.0);
  return terrain.RayCast(view.pose.CameraCenter(), direction);
}

std::optional<double> SyntheticScene::DepthAt(int view_id,
                                              const Point2D& pixel) const {
  const CameraIntrinsics& k = intrinsics();
  const double x = std::round(pixel.x());
  const double y = std::round(pixel.y());
  if (!(x >= 0 && y >= 0 && x <= k.width - 1 && y <= k.height - 1)) {
    return std::nullopt;
  }
  return ExactDepth(view_id, Point2D(x, y));
}

std::optional<Point3D> SyntheticScene::SurfacePoint(int view_id,
                                                    const Point2D& pixel) const {
  const auto depth = ExactDepth(view_id, pixel);
  if (!depth) return std::nullopt;
  return View(view_id).pose.CamToScene(Unproject(pixel, *depth, intrinsics()));
}

bool SyntheticScene::IsVisible(int view_id, const Point3D& scene_point) const {
  const SyntheticView& view = View(view_id);
  const Point3D cam = view.pose.SceneToCam(scene_point);
  if (!(cam.z() > 0.0)) return false;
  const Point2D pixel = Project(cam, intrinsics());
  if (!intrinsics().Contains(pixel)) return false;
  const auto depth = ExactDepth(view_id, pixel);
  return depth && std::abs(*depth - cam.z()) <= 1e-6 * cam.z();
}

DepthMap SyntheticScene::RenderDepthMap(int view_id, bool parallel) const {
  const CameraIntrinsics& k = intrinsics();
  DepthMap map;
  map.width = k.width;
  map.height = k.height;
  map.depth.assign(size_t(k.width) * k.height,
                   std::numeric_limits<double>::quiet_NaN());
#pragma omp parallel for schedule(dynamic, 4) if (parallel)
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const auto depth = ExactDepth(view_id, Point2D(x, y));
      if (depth) map.depth[size_t(y) * k.width + x] = *depth;
    }
  }
  return map;
}

Pose SampleLookAtPose(const SyntheticSceneConfig& config, double azimuth,
                      double elevation, const Eigen::Vector3d& target) {
  const double r = config.camera_distance;
  const Eigen::Vector3d center(r * std::cos(elevation) * std::cos(azimuth),
                               r * std::cos(elevation) * std::sin(azimuth),
                               r * std::sin(elevation));
  const Eigen::Vector3d z_axis = (target - center).normalized();
  Eigen::Vector3d up = Eigen::Vector3d::UnitZ();
  if (std::abs(z_axis.dot(up)) > 0.999) up = Eigen::Vector3d::UnitY();
  const Eigen::Vector3d x_axis = z_axis.cross(up).normalized();
  const Eigen::Vector3d y_axis = z_axis.cross(x_axis);
  Eigen::Matrix3d rotation;
  rotation.row(0) = x_axis.transpose();
  rotation.row(1) = y_axis.transpose();
  rotation.row(2) = z_axis.transpose();
  return Pose(rotation, -rotation * center);
}

namespace {

Pose DrawPose(const SyntheticSceneConfig& config, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double azimuth = 2.0 * kPi * unit(rng);
  const double elevation =
      (config.min_elevation_deg +
       (config.max_elevation_deg - config.min_elevation_deg) * unit(rng)) *
      kPi / 180.0;
  const double jitter = 0.05 * config.box_extent;
  const Eigen::Vector3d target(jitter * (2.0 * unit(rng) - 1.0),
                               jitter * (2.0 * unit(rng) - 1.0), 0.0);
  return SampleLookAtPose(config, azimuth, elevation, target);
}

}  // namespace

SyntheticScene GenerateSyntheticScene(const SyntheticSceneConfig& config) {
  config.Validate();
  SyntheticScene scene;
  scene.config = config;
  scene.terrain = Terrain(config.box_extent,
                          config.terrain_amplitude * config.box_extent,
                          DeriveSeed({config.seed, 1}));

  Camera camera;
  camera.camera_id = 1;
  camera.model = CameraModel::kPinhole;
  camera.intrinsics = {config.focal, config.focal, 0.5 * config.width,
                       0.5 * config.height, config.width, config.height};
  scene.model.cameras.emplace(1, camera);

  std::mt19937_64 pose_rng(DeriveSeed({config.seed, 2}));
  for (int i = 1; i <= config.num_cameras; ++i) {
    SyntheticView view;
    view.view_id = i;
    view.name = ViewName("db", i);
    view.pose = DrawPose(config, pose_rng);
    scene.views.emplace(i, view);
  }
  std::mt19937_64 query_rng(DeriveSeed({config.query_seed, 3}));
  for (int i = 0; i < config.num_queries; ++i) {
    SyntheticView view;
    view.view_id = SyntheticScene::kFirstQueryId + i;
    view.name = ViewName("query", i + 1);
    view.pose = DrawPose(config, query_rng);
    view.is_query = true;
    scene.views.emplace(view.view_id, view);
  }

  // Surface samples and their database observations.
  std::mt19937_64 point_rng(DeriveSeed({config.seed, 4}));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double half = 0.5 * config.box_extent;
  std::vector<Point3D> samples;
  for (int i = 0; i < config.num_points; ++i) {
    const double x = -half + config.box_extent * unit(point_rng);
    const double y = -half + config.box_extent * unit(point_rng);
    const bool keep = unit(point_rng) < config.point_keep_fraction;
    if (keep) samples.emplace_back(x, y, scene.terrain.Height(x, y));
  }

  const std::vector<int> db_ids = scene.DatabaseIds();
  std::vector<std::vector<char>> visible(samples.size(),
                                         std::vector<char>(db_ids.size(), 0));
#pragma omp parallel for schedule(dynamic, 16)
  for (size_t p = 0; p < samples.size(); ++p) {
    for (size_t v = 0; v < db_ids.size(); ++v) {
      visible[p][v] = scene.IsVisible(db_ids[v], samples[p]) ? 1 : 0;
    }
  }

  for (const int id : db_ids) {
    Image image;
    image.image_id = id;
    image.name = scene.views.at(id).name;
    image.pose = scene.views.at(id).pose;
    image.camera_id = 1;
    scene.model.images.emplace(id, image);
  }

  int64_t next_point_id = 1;
  for (size_t p = 0; p < samples.size(); ++p) {
    int count = 0;
    for (const char v : visible[p]) count += v;
    if (count < 2) continue;
    ScenePoint point;
    point.point3d_id = next_point_id++;
    point.xyz = samples[p];
    point.color = {128, 128, 128};
    for (size_t v = 0; v < db_ids.size(); ++v) {
      if (!visible[p][v]) continue;
      Image& image = scene.model.images.at(db_ids[v]);
      Point2D pixel = Project(image.pose.SceneToCam(point.xyz), camera.intrinsics);
      if (config.pixel_noise > 0.0) {
        pixel.x() += config.pixel_noise * noise(point_rng);
        pixel.y() += config.pixel_noise * noise(point_rng);
      }
      point.track.push_back(
          {image.image_id, static_cast<int>(image.observations.size())});
      image.observations.push_back({pixel, point.point3d_id});
    }
    scene.model.points3d.emplace(point.point3d_id, point);
  }

  for (const auto& [id, image] : scene.model.images) {
    scene.outlier_labels[id].assign(image.observations.size(), false);
  }

  if (config.outlier_fraction > 0.0 && scene.model.points3d.size() > 1) {
    std::vector<std::pair<int, int>> all_obs;
    for (const auto& [id, image] : scene.model.images) {
      for (size_t i = 0; i < image.observations.size(); ++i) {
        all_obs.emplace_back(id, static_cast<int>(i));
      }
    }
    std::mt19937_64 outlier_rng(DeriveSeed({config.seed, 5}));
    std::shuffle(all_obs.begin(), all_obs.end(), outlier_rng);
    const size_t num_outliers = static_cast<size_t>(
        std::llround(config.outlier_fraction * double(all_obs.size())));
    const int64_t num_points = static_cast<int64_t>(scene.model.points3d.size());
    std::uniform_int_distribution<int64_t> pick(1, num_points);
    for (size_t k = 0; k < num_outliers; ++k) {
      const auto [image_id, idx] = all_obs[k];
      Observation& obs = scene.model.images.at(image_id).observations[idx];
      int64_t wrong = obs.point3d_id;
      while (wrong == obs.point3d_id) wrong = pick(outlier_rng);
      auto& old_track = scene.model.points3d.at(obs.point3d_id).track;
      old_track.erase(std::remove(old_track.begin(), old_track.end(),
                                  TrackElement{image_id, idx}),
                      old_track.end());
      auto& new_track = scene.model.points3d.at(wrong).track;
      new_track.push_back({image_id, idx});
      std::sort(new_track.begin(), new_track.end(),
                [](const TrackElement& a, const TrackElement& b) {
                  return std::tie(a.image_id, a.point2d_idx) <
                         std::tie(b.image_id, b.point2d_idx);
                });
      obs.point3d_id = wrong;
      scene.outlier_labels[image_id][idx] = true;
    }
  }
  return scene;
}

}  // namespace deviloc
