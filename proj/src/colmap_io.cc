#include "deviloc/colmap_io.h"

#include <charconv>
#include <fstream>
#include <sstream>
#include <set>
#include <unordered_map>
#include <vector>

#include "deviloc/error.h"
#include "text_io.h"

namespace deviloc {
namespace {

Camera ParseCameraLine(const std::vector<std::string_view>& tokens,
                       const LineReader& reader) {
  if (tokens.size() < 4) reader.Fail("camera line needs ID MODEL WIDTH HEIGHT");
  Camera camera;
  camera.camera_id = ParseNumber<int>(tokens[0], reader, "CAMERA_ID");
  const std::string_view model = tokens[1];
  camera.intrinsics.width = ParseNumber<int>(tokens[2], reader, "WIDTH");
  camera.intrinsics.height = ParseNumber<int>(tokens[3], reader, "HEIGHT");
  std::vector<double> params;
  for (size_t i = 4; i < tokens.size(); ++i) {
    params.push_back(ParseNumber<double>(tokens[i], reader, "PARAM"));
  }
  if (model == "PINHOLE") {
    if (params.size() != 4) reader.Fail("PINHOLE expects 4 params: fx fy cx cy");
    camera.model = CameraModel::kPinhole;
    camera.intrinsics.fx = params[0];
    camera.intrinsics.fy = params[1];
    camera.intrinsics.cx = params[2];
    camera.intrinsics.cy = params[3];
  } else if (model == "SIMPLE_PINHOLE") {
    if (params.size() != 3) reader.Fail("SIMPLE_PINHOLE expects 3 params: f cx cy");
    camera.model = CameraModel::kSimplePinhole;
    camera.intrinsics.fx = params[0];
    camera.intrinsics.fy = params[0];
    camera.intrinsics.cx = params[1];
    camera.intrinsics.cy = params[2];
  } else {
    Throw(ErrorCode::kUnsupportedCameraModel,
          reader.path() + ":" + std::to_string(reader.line_number()) +
              ": camera model " + std::string(model) +
              " is not supported (only PINHOLE and SIMPLE_PINHOLE)");
  }
  try {
    camera.intrinsics.Validate();
  } catch (const Error& e) {
    reader.Fail(e.what());
  }
  return camera;
}

struct RawImage {
  Image image;
  // Original POINT2D index -> index in image.observations (or -1).
  std::vector<int> kept_index;
  int header_line = 0;
};

}  // namespace

std::string FormatDouble(double value) {
  if (value == 0.0) return "0";
  char buffer[64];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  (void)ec;
  return std::string(buffer, ptr);
}

SceneModel ParseColmapText(const std::filesystem::path& cameras_path,
                           const std::filesystem::path& images_path,
                           const std::filesystem::path& points3d_path) {
  SceneModel scene;
  std::string line;

  {
    LineReader reader(cameras_path);
    while (reader.NextContent(&line)) {
      Camera camera = ParseCameraLine(Tokenize(line), reader);
      if (!scene.cameras.emplace(camera.camera_id, camera).second) {
        reader.Fail("duplicate CAMERA_ID " + std::to_string(camera.camera_id));
      }
    }
  }

  std::unordered_map<int, RawImage> raw_images;
  {
    LineReader reader(images_path);
    while (reader.NextContent(&line)) {
      const auto tokens = Tokenize(line);
      if (tokens.size() != 10) {
        reader.Fail("image line needs IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME");
      }
      RawImage raw;
      raw.header_line = reader.line_number();
      Image& image = raw.image;
      image.image_id = ParseNumber<int>(tokens[0], reader, "IMAGE_ID");
      const double qw = ParseNumber<double>(tokens[1], reader, "QW");
      const double qx = ParseNumber<double>(tokens[2], reader, "QX");
      const double qy = ParseNumber<double>(tokens[3], reader, "QY");
      const double qz = ParseNumber<double>(tokens[4], reader, "QZ");
      const Eigen::Vector3d t(ParseNumber<double>(tokens[5], reader, "TX"),
                              ParseNumber<double>(tokens[6], reader, "TY"),
                              ParseNumber<double>(tokens[7], reader, "TZ"));
      try {
        image.pose = Pose(Eigen::Quaterniond(qw, qx, qy, qz), t);
      } catch (const Error& e) {
        reader.Fail(e.what());
      }
      image.camera_id = ParseNumber<int>(tokens[8], reader, "CAMERA_ID");
      image.name = std::string(tokens[9]);
      if (!scene.cameras.count(image.camera_id)) {
        reader.Fail("unknown CAMERA_ID " + std::to_string(image.camera_id));
      }

      // The observation line may legitimately be empty (no keypoints).
      if (!reader.NextNonComment(&line)) {
        reader.Fail("missing observation line for image " + image.name);
      }
      const auto obs_tokens = Tokenize(line);
      if (obs_tokens.size() % 3 != 0) {
        reader.Fail("observation line must hold X Y POINT3D_ID triplets");
      }
      for (size_t i = 0; i < obs_tokens.size(); i += 3) {
        Observation obs;
        obs.pixel.x() = ParseNumber<double>(obs_tokens[i], reader, "X");
        obs.pixel.y() = ParseNumber<double>(obs_tokens[i + 1], reader, "Y");
        obs.point3d_id =
            ParseNumber<int64_t>(obs_tokens[i + 2], reader, "POINT3D_ID");
        if (obs.point3d_id == -1) {
          raw.kept_index.push_back(-1);
          continue;
        }
        if (obs.point3d_id < 0) reader.Fail("negative POINT3D_ID");
        raw.kept_index.push_back(static_cast<int>(image.observations.size()));
        image.observations.push_back(obs);
      }
      const int id = image.image_id;
      if (!raw_images.emplace(id, std::move(raw)).second) {
        reader.Fail("duplicate IMAGE_ID " + std::to_string(id));
      }
    }
  }

  {
    LineReader reader(points3d_path);
    while (reader.NextContent(&line)) {
      const auto tokens = Tokenize(line);
      if (tokens.size() < 8 || (tokens.size() - 8) % 2 != 0) {
        reader.Fail("point line needs POINT3D_ID X Y Z R G B ERROR (IMAGE_ID POINT2D_IDX)...");
      }
      ScenePoint point;
      point.point3d_id = ParseNumber<int64_t>(tokens[0], reader, "POINT3D_ID");
      point.xyz = {ParseNumber<double>(tokens[1], reader, "X"),
                   ParseNumber<double>(tokens[2], reader, "Y"),
                   ParseNumber<double>(tokens[3], reader, "Z")};
      for (int c = 0; c < 3; ++c) {
        const int value = ParseNumber<int>(tokens[4 + c], reader, "RGB");
        if (value < 0 || value > 255) reader.Fail("RGB value out of range");
        point.color[c] = static_cast<uint8_t>(value);
      }
      point.error = ParseNumber<double>(tokens[7], reader, "ERROR");
      for (size_t i = 8; i < tokens.size(); i += 2) {
        const int image_id = ParseNumber<int>(tokens[i], reader, "IMAGE_ID");
        const int idx = ParseNumber<int>(tokens[i + 1], reader, "POINT2D_IDX");
        const auto it = raw_images.find(image_id);
        if (it == raw_images.end()) {
          reader.Fail("track references unknown IMAGE_ID " +
                      std::to_string(image_id));
        }
        const auto& kept = it->second.kept_index;
        if (idx < 0 || idx >= static_cast<int>(kept.size()) || kept[idx] < 0) {
          reader.Fail("track references invalid POINT2D_IDX " +
                      std::to_string(idx) + " of image " +
                      std::to_string(image_id));
        }
        point.track.push_back({image_id, kept[idx]});
      }
      if (!scene.points3d.emplace(point.point3d_id, point).second) {
        reader.Fail("duplicate POINT3D_ID " + std::to_string(point.point3d_id));
      }
    }
  }

  std::map<int, const RawImage*> ordered;
  for (const auto& [id, raw] : raw_images) ordered.emplace(id, &raw);
  std::set<std::string> names;
  for (const auto& [id, raw] : ordered) {
    for (const Observation& obs : raw->image.observations) {
      if (!scene.points3d.count(obs.point3d_id)) {
        throw ParseError(images_path.string(), raw->header_line + 1,
                         "observation references unknown POINT3D_ID " +
                             std::to_string(obs.point3d_id));
      }
    }
    if (!names.insert(raw->image.name).second) {
      throw ParseError(images_path.string(), raw->header_line,
                       "duplicate image name " + raw->image.name);
    }
    scene.images.emplace(id, raw->image);
  }
  return scene;
}

SceneModel ParseColmapTextDir(const std::filesystem::path& dir) {
  return ParseColmapText(dir / "cameras.txt", dir / "images.txt",
                         dir / "points3D.txt");
}

void WriteColmapText(const SceneModel& scene, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out) Throw(ErrorCode::kIoError, "cannot write " + (dir / name).string());
    return out;
  };

  {
    std::ofstream out = open("cameras.txt");
    out << "# Camera list with one line of data per camera:\n"
        << "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n"
        << "# Number of cameras: " << scene.cameras.size() << "\n";
    for (const auto& [id, camera] : scene.cameras) {
      const CameraIntrinsics& k = camera.intrinsics;
      out << id << ' ';
      if (camera.model == CameraModel::kSimplePinhole) {
        out << "SIMPLE_PINHOLE " << k.width << ' ' << k.height << ' '
            << FormatDouble(k.fx);
      } else {
        out << "PINHOLE " << k.width << ' ' << k.height << ' '
            << FormatDouble(k.fx) << ' ' << FormatDouble(k.fy);
      }
      out << ' ' << FormatDouble(k.cx) << ' ' << FormatDouble(k.cy) << '\n';
    }
  }

  {
    std::ofstream out = open("images.txt");
    out << "# Image list with two lines of data per image:\n"
        << "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n"
        << "#   POINTS2D[] as (X, Y, POINT3D_ID)\n"
        << "# Number of images: " << scene.images.size() << "\n";
    for (const auto& [id, image] : scene.images) {
      const Eigen::Quaterniond& q = image.pose.rotation();
      const Eigen::Vector3d& t = image.pose.translation();
      out << id << ' ' << FormatDouble(q.w()) << ' ' << FormatDouble(q.x())
          << ' ' << FormatDouble(q.y()) << ' ' << FormatDouble(q.z()) << ' '
          << FormatDouble(t.x()) << ' ' << FormatDouble(t.y()) << ' '
          << FormatDouble(t.z()) << ' ' << image.camera_id << ' ' << image.name
          << '\n';
      for (size_t i = 0; i < image.observations.size(); ++i) {
        const Observation& obs = image.observations[i];
        if (i > 0) out << ' ';
        out << FormatDouble(obs.pixel.x()) << ' ' << FormatDouble(obs.pixel.y())
            << ' ' << obs.point3d_id;
      }
      out << '\n';
    }
  }

  {
    std::ofstream out = open("points3D.txt");
    out << "# 3D point list with one line of data per point:\n"
        << "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n"
        << "# Number of points: " << scene.points3d.size() << "\n";
    for (const auto& [id, point] : scene.points3d) {
      out << id << ' ' << FormatDouble(point.xyz.x()) << ' '
          << FormatDouble(point.xyz.y()) << ' ' << FormatDouble(point.xyz.z())
          << ' ' << int(point.color[0]) << ' ' << int(point.color[1]) << ' '
          << int(point.color[2]) << ' ' << FormatDouble(point.error);
      for (const TrackElement& el : point.track) {
        out << ' ' << el.image_id << ' ' << el.point2d_idx;
      }
      out << '\n';
    }
  }
}

}  // namespace deviloc
