#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "deviloc/kernels.h"
#include "deviloc/synthetic_scene.h"

namespace deviloc {

// Coarse grid of visual descriptors for one reference image. Row
// (y * w + x) of `data` holds the c-channel feature of cell (x, y).
struct FeatureMap {
  int h = 0;
  int w = 0;
  int c = 0;
  double stride = 8.0;
  RowMatrix data;
  // Set when the map was declared constant in a match dump.
  std::optional<double> constant_value;

  static FeatureMap Constant(int h, int w, int c, double stride, double value);
  void Validate() const;
};

struct MatchSet {
  std::string query_name;
  std::string ref_name;
  int query_id = -1;
  int ref_id = -1;
  std::vector<Point2D> query_kpts;
  std::vector<Point2D> ref_kpts;
  std::shared_ptr<const FeatureMap> feature_map;
  // Synthetic matcher metadata: injected wrong correspondences.
  std::vector<bool> is_outlier;

  size_t size() const { return query_kpts.size(); }
};

// Features at pixel keypoints: grid coordinate = pixel / stride - 0.5,
// bilinear over the four neighbouring cells, clamped at the border.
RowMatrix BilinearSample(const FeatureMap& fm, std::span<const Point2D> kpts,
                         bool parallel = false);

struct SyntheticMatchConfig {
  double pixel_noise = 0.0;       // sigma added to reference keypoints
  double outlier_fraction = 0.0;  // exact fraction of rows made outliers
  int grid_step = 16;             // query keypoint grid spacing (px)
  int max_matches = 0;            // 0: keep every co-visible grid point
  int feature_channels = 64;
  double feature_stride = 8.0;
  double feature_noise = 0.01;
  // Outlier reference keypoints are drawn at least this far from the true
  // correspondence.
  double outlier_min_distance = 32.0;
};

// Deterministic feature map for a synthetic view: channel k of a cell is
// sin(w_k . X + b_k) at the surface point X seen through the cell center,
// plus seeded noise. Holes get noise only.
std::shared_ptr<const FeatureMap> SyntheticFeatureMap(
    const SyntheticScene& scene, int view_id, const SyntheticMatchConfig& config,
    bool parallel = true);

// Samples query keypoints on a regular grid, keeps those whose surface point
// is visible in the reference, and projects them. Gaussian noise perturbs
// the reference side; an exact fraction of rows get a random reference
// keypoint and are flagged in `is_outlier`. The RNG is derived from
// (scene seed, query id, reference id). Throws kNoOverlap if nothing is
// co-visible.
MatchSet SyntheticMatch(const SyntheticScene& scene, int query_id, int ref_id,
                        const SyntheticMatchConfig& config,
                        std::shared_ptr<const FeatureMap> feature_map = nullptr);

// Database images ranked by how many of their observed model points are
// visible in the query view (count descending, then image id). Images with
// no overlap are dropped; at most k are returned as (image id, count).
std::vector<std::pair<int, int>> CovisibleReferences(const SyntheticScene& scene,
                                                     int query_id, int k);

class Matcher {
 public:
  virtual ~Matcher() = default;
  // Matches between the named query and a database image of the model.
  virtual MatchSet Match(const std::string& query_name,
                         const Image& reference) const = 0;
};

class SyntheticMatcher : public Matcher {
 public:
  SyntheticMatcher(const SyntheticScene& scene, SyntheticMatchConfig config);

  MatchSet Match(const std::string& query_name,
                 const Image& reference) const override;

  const SyntheticMatchConfig& config() const { return config_; }

 private:
  std::shared_ptr<const FeatureMap> FeatureMapFor(int view_id) const;

  const SyntheticScene& scene_;
  SyntheticMatchConfig config_;
  mutable std::mutex cache_mutex_;
  mutable std::map<int, std::shared_ptr<const FeatureMap>> cache_;
};

// Serves match sets loaded from a dump; missing pairs throw kNoOverlap.
class FileMatcher : public Matcher {
 public:
  explicit FileMatcher(std::vector<MatchSet> match_sets);

  MatchSet Match(const std::string& query_name,
                 const Image& reference) const override;

 private:
  std::map<std::pair<std::string, std::string>, MatchSet> sets_;
};

// Match-dump text format, one block per pair:
//   QUERY_NAME REF_NAME N_M H W C STRIDE
//   N_M lines: xq yq xr yr
//   H*W lines of C values (row-major), or a single line "CONSTANT v"
// '#' comments and blank lines are ignored between blocks.
std::vector<MatchSet> LoadMatches(const std::filesystem::path& path);
void DumpMatches(const std::vector<MatchSet>& match_sets,
                 const std::filesystem::path& path);
std::string FormatMatches(const std::vector<MatchSet>& match_sets);

}  // namespace deviloc
