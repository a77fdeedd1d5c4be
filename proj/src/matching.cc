#include "deviloc/matching.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "deviloc/colmap_io.h"
#include "deviloc/error.h"
#include "deviloc/random.h"
#include "text_io.h"

namespace deviloc {

FeatureMap FeatureMap::Constant(int h, int w, int c, double stride,
                                double value) {
  FeatureMap fm;
  fm.h = h;
  fm.w = w;
  fm.c = c;
  fm.stride = stride;
  fm.data = RowMatrix::Constant(int64_t(h) * w, c, value);
  fm.constant_value = value;
  fm.Validate();
  return fm;
}

void FeatureMap::Validate() const {
  if (h < 1 || w < 1 || c < 1) {
    Throw(ErrorCode::kDimensionMismatch, "feature map needs h, w, c >= 1");
  }
  if (!(stride > 0.0)) {
    Throw(ErrorCode::kDimensionMismatch, "feature map stride must be positive");
  }
  if (data.rows() != int64_t(h) * w || data.cols() != c) {
    Throw(ErrorCode::kDimensionMismatch, "feature map data is not (h*w) x c");
  }
  if (!data.allFinite()) {
    Throw(ErrorCode::kDimensionMismatch, "feature map holds non-finite values");
  }
}

RowMatrix BilinearSample(const FeatureMap& fm, std::span<const Point2D> kpts,
                         bool parallel) {
  const auto taps = kernels::ComputeBilinearTaps(fm.h, fm.w, fm.stride, kpts);
  RowMatrix out;
  if (parallel) {
    kernels::GatherBilinearParallel(fm.data, taps, &out);
  } else {
    kernels::GatherBilinearSerial(fm.data, taps, &out);
  }
  return out;
}

std::shared_ptr<const FeatureMap> SyntheticFeatureMap(
    const SyntheticScene& scene, int view_id, const SyntheticMatchConfig& config,
    bool parallel) {
  const CameraIntrinsics& k = scene.intrinsics();
  auto fm = std::make_shared<FeatureMap>();
  fm->stride = config.feature_stride;
  fm->w = std::max(1, static_cast<int>(std::ceil(k.width / fm->stride)));
  fm->h = std::max(1, static_cast<int>(std::ceil(k.height / fm->stride)));
  fm->c = config.feature_channels;

  // Random Fourier features of the scene point; shared by all views so
  // corresponding cells carry similar descriptors.
  std::mt19937_64 rng(DeriveSeed({scene.config.seed, 11}));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double base = 2.0 * std::numbers::pi / scene.config.box_extent;
  std::vector<Eigen::Vector3d> freq(fm->c);
  std::vector<double> phase(fm->c);
  for (int ch = 0; ch < fm->c; ++ch) {
    Eigen::Vector3d dir(normal(rng), normal(rng), normal(rng));
    dir.normalize();
    freq[ch] = dir * base * (0.5 + 2.5 * unit(rng));
    phase[ch] = 2.0 * std::numbers::pi * unit(rng);
  }

  fm->data.resize(int64_t(fm->h) * fm->w, fm->c);
  const int rows = fm->h;
#pragma omp parallel for schedule(dynamic, 2) if (parallel)
  for (int y = 0; y < rows; ++y) {
    std::mt19937_64 cell_rng(DeriveSeed({scene.config.seed, 12,
                                         uint64_t(view_id), uint64_t(y)}));
    std::normal_distribution<double> cell_noise(0.0, 1.0);
    for (int x = 0; x < fm->w; ++x) {
      const Point2D center((x + 0.5) * fm->stride, (y + 0.5) * fm->stride);
      const auto point = scene.SurfacePoint(view_id, center);
      auto row = fm->data.row(int64_t(y) * fm->w + x);
      for (int ch = 0; ch < fm->c; ++ch) {
        const double signal =
            point ? std::sin(freq[ch].dot(*point) + phase[ch]) : 0.0;
        row(ch) = signal + config.feature_noise * cell_noise(cell_rng);
      }
    }
  }
  return fm;
}

MatchSet SyntheticMatch(const SyntheticScene& scene, int query_id, int ref_id,
                        const SyntheticMatchConfig& config,
                        std::shared_ptr<const FeatureMap> feature_map) {
  const SyntheticView& query = scene.View(query_id);
  const SyntheticView& ref = scene.View(ref_id);
  const CameraIntrinsics& k = scene.intrinsics();

  struct Candidate {
    Point2D query_kpt;
    Point2D ref_kpt;
    size_t priority;
  };

  // Query grid points with ground-truth depth, in a query-specific random
  // priority order shared across references (so every pair of one query
  // samples the same keypoints first).
  std::vector<Point2D> grid;
  const double step = config.grid_step;
  for (double y = 0.5 * step; y < k.height; y += step) {
    for (double x = 0.5 * step; x < k.width; x += step) grid.emplace_back(x, y);
  }
  std::vector<size_t> rank(grid.size());
  {
    std::vector<size_t> order(grid.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(DeriveSeed({scene.config.seed, 21, uint64_t(query_id)}));
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
  }

  std::vector<Candidate> candidates;
  for (size_t i = 0; i < grid.size(); ++i) {
    const auto point = scene.SurfacePoint(query_id, grid[i]);
    if (!point || !scene.IsVisible(ref_id, *point)) continue;
    candidates.push_back(
        {grid[i], Project(ref.pose.SceneToCam(*point), k), rank[i]});
  }
  if (candidates.empty()) {
    Throw(ErrorCode::kNoOverlap,
          "no co-visible points between " + query.name + " and " + ref.name);
  }
  if (config.max_matches > 0 &&
      candidates.size() > static_cast<size_t>(config.max_matches)) {
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) {
                       return a.priority < b.priority;
                     });
    candidates.resize(config.max_matches);
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) {
                       return std::tie(a.query_kpt.y(), a.query_kpt.x()) <
                              std::tie(b.query_kpt.y(), b.query_kpt.x());
                     });
  }

  MatchSet set;
  set.query_name = query.name;
  set.ref_name = ref.name;
  set.query_id = query_id;
  set.ref_id = ref_id;
  const size_t n = candidates.size();
  set.is_outlier.assign(n, false);

  std::mt19937_64 rng(DeriveSeed(
      {scene.config.seed, 22, uint64_t(query_id), uint64_t(ref_id)}));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const Candidate& c : candidates) {
    Point2D ref_kpt = c.ref_kpt;
    if (config.pixel_noise > 0.0) {
      ref_kpt.x() += config.pixel_noise * noise(rng);
      ref_kpt.y() += config.pixel_noise * noise(rng);
      ref_kpt.x() = std::clamp(ref_kpt.x(), 0.0, double(k.width));
      ref_kpt.y() = std::clamp(ref_kpt.y(), 0.0, double(k.height));
    }
    set.query_kpts.push_back(c.query_kpt);
    set.ref_kpts.push_back(ref_kpt);
  }

  const size_t num_outliers =
      static_cast<size_t>(std::llround(config.outlier_fraction * double(n)));
  if (num_outliers > 0) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t j = 0; j < num_outliers; ++j) {
      const size_t i = order[j];
      Point2D random_kpt;
      for (int attempt = 0; attempt < 1000; ++attempt) {
        random_kpt = {k.width * unit(rng), k.height * unit(rng)};
        if ((random_kpt - candidates[i].ref_kpt).norm() >=
            config.outlier_min_distance) {
          break;
        }
      }
      set.ref_kpts[i] = random_kpt;
      set.is_outlier[i] = true;
    }
  }

  set.feature_map = feature_map ? std::move(feature_map)
                                : SyntheticFeatureMap(scene, ref_id, config);
  return set;
}

std::vector<std::pair<int, int>> CovisibleReferences(const SyntheticScene& scene,
                                                     int query_id, int k) {
  std::map<int64_t, bool> visible;
  for (const auto& [id, point] : scene.model.points3d) {
    visible[id] = scene.IsVisible(query_id, point.xyz);
  }
  std::vector<std::pair<int, int>> ranked;
  for (const auto& [image_id, image] : scene.model.images) {
    int count = 0;
    for (const Observation& obs : image.observations) {
      const auto it = visible.find(obs.point3d_id);
      if (it != visible.end() && it->second) ++count;
    }
    if (count > 0) ranked.emplace_back(image_id, count);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (static_cast<int>(ranked.size()) > k) ranked.resize(std::max(k, 0));
  return ranked;
}

SyntheticMatcher::SyntheticMatcher(const SyntheticScene& scene,
                                   SyntheticMatchConfig config)
    : scene_(scene), config_(config) {}

std::shared_ptr<const FeatureMap> SyntheticMatcher::FeatureMapFor(
    int view_id) const {
  {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    const auto it = cache_.find(view_id);
    if (it != cache_.end()) return it->second;
  }
  // Rendering is deterministic, so a concurrent duplicate is harmless.
  auto fm = SyntheticFeatureMap(scene_, view_id, config_, /*parallel=*/false);
  std::lock_guard<std::mutex> lock(cache_mutex_);
  return cache_.emplace(view_id, std::move(fm)).first->second;
}

MatchSet SyntheticMatcher::Match(const std::string& query_name,
                                 const Image& reference) const {
  const int query_id = scene_.ViewByName(query_name).view_id;
  return SyntheticMatch(scene_, query_id, reference.image_id, config_,
                        FeatureMapFor(reference.image_id));
}

FileMatcher::FileMatcher(std::vector<MatchSet> match_sets) {
  for (MatchSet& set : match_sets) {
    auto key = std::make_pair(set.query_name, set.ref_name);
    sets_.insert_or_assign(std::move(key), std::move(set));
  }
}

MatchSet FileMatcher::Match(const std::string& query_name,
                            const Image& reference) const {
  const auto it = sets_.find({query_name, reference.name});
  if (it == sets_.end()) {
    Throw(ErrorCode::kNoOverlap,
          "no matches for pair " + query_name + " / " + reference.name);
  }
  MatchSet set = it->second;
  set.ref_id = reference.image_id;
  return set;
}

std::vector<MatchSet> LoadMatches(const std::filesystem::path& path) {
  LineReader reader(path);
  std::vector<MatchSet> sets;
  std::string line;
  auto dimension_error = [&](const std::string& why) {
    Throw(ErrorCode::kDimensionMismatch, reader.path() + ":" +
                                             std::to_string(reader.line_number()) +
                                             ": " + why);
  };
  while (reader.NextContent(&line)) {
    const auto header = Tokenize(line);
    if (header.size() != 7) {
      reader.Fail("match header needs QUERY_NAME REF_NAME N_M H W C STRIDE");
    }
    MatchSet set;
    set.query_name = std::string(header[0]);
    set.ref_name = std::string(header[1]);
    const int num_matches = ParseNumber<int>(header[2], reader, "N_M");
    auto fm = std::make_shared<FeatureMap>();
    fm->h = ParseNumber<int>(header[3], reader, "H");
    fm->w = ParseNumber<int>(header[4], reader, "W");
    fm->c = ParseNumber<int>(header[5], reader, "C");
    fm->stride = ParseNumber<double>(header[6], reader, "STRIDE");
    if (num_matches < 0) reader.Fail("negative N_M");
    if (fm->h < 1 || fm->w < 1 || fm->c < 1 || !(fm->stride > 0.0)) {
      dimension_error("feature map needs H, W, C >= 1 and STRIDE > 0");
    }

    for (int i = 0; i < num_matches; ++i) {
      if (!reader.NextContent(&line)) {
        dimension_error("expected " + std::to_string(num_matches) +
                        " match lines, got " + std::to_string(i));
      }
      const auto tokens = Tokenize(line);
      if (tokens.size() != 4) dimension_error("match line needs xq yq xr yr");
      set.query_kpts.emplace_back(ParseNumber<double>(tokens[0], reader, "xq"),
                                  ParseNumber<double>(tokens[1], reader, "yq"));
      set.ref_kpts.emplace_back(ParseNumber<double>(tokens[2], reader, "xr"),
                                ParseNumber<double>(tokens[3], reader, "yr"));
    }
    set.is_outlier.assign(set.query_kpts.size(), false);

    const int64_t cells = int64_t(fm->h) * fm->w;
    fm->data.resize(cells, fm->c);
    for (int64_t r = 0; r < cells; ++r) {
      if (!reader.NextContent(&line)) {
        dimension_error("expected " + std::to_string(cells) +
                        " feature rows, got " + std::to_string(r));
      }
      const auto tokens = Tokenize(line);
      if (r == 0 && !tokens.empty() && tokens[0] == "CONSTANT") {
        if (tokens.size() != 2) reader.Fail("CONSTANT takes one value");
        const double value = ParseNumber<double>(tokens[1], reader, "CONSTANT");
        fm->data.setConstant(value);
        fm->constant_value = value;
        break;
      }
      if (static_cast<int>(tokens.size()) != fm->c) {
        dimension_error("feature row has " + std::to_string(tokens.size()) +
                        " values, expected C=" + std::to_string(fm->c));
      }
      for (int ch = 0; ch < fm->c; ++ch) {
        fm->data(r, ch) = ParseNumber<double>(tokens[ch], reader, "feature");
      }
    }
    fm->Validate();
    set.feature_map = std::move(fm);
    sets.push_back(std::move(set));
  }
  return sets;
}

std::string FormatMatches(const std::vector<MatchSet>& match_sets) {
  std::ostringstream out;
  for (const MatchSet& set : match_sets) {
    if (!set.feature_map) {
      Throw(ErrorCode::kDimensionMismatch,
            "match set " + set.query_name + "/" + set.ref_name +
                " has no feature map");
    }
    const FeatureMap& fm = *set.feature_map;
    out << set.query_name << ' ' << set.ref_name << ' ' << set.size() << ' '
        << fm.h << ' ' << fm.w << ' ' << fm.c << ' ' << FormatDouble(fm.stride)
        << '\n';
    for (size_t i = 0; i < set.size(); ++i) {
      out << FormatDouble(set.query_kpts[i].x()) << ' '
          << FormatDouble(set.query_kpts[i].y()) << ' '
          << FormatDouble(set.ref_kpts[i].x()) << ' '
          << FormatDouble(set.ref_kpts[i].y()) << '\n';
    }
    if (fm.constant_value) {
      out << "CONSTANT " << FormatDouble(*fm.constant_value) << '\n';
      continue;
    }
    for (int64_t r = 0; r < fm.data.rows(); ++r) {
      for (int ch = 0; ch < fm.c; ++ch) {
        if (ch > 0) out << ' ';
        out << FormatDouble(fm.data(r, ch));
      }
      out << '\n';
    }
  }
  return out.str();
}

void DumpMatches(const std::vector<MatchSet>& match_sets,
                 const std::filesystem::path& path) {
  const std::string text = FormatMatches(match_sets);
  std::ofstream out(path, std::ios::binary);
  if (!out) Throw(ErrorCode::kIoError, "cannot write " + path.string());
  out << text;
}

}  // namespace deviloc
