#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "deviloc/diffkernel/tape.h"
#include "deviloc/geometry.h"

namespace deviloc {

struct Match2D3D {
  Point2D query_keypoint;
  Point3D point;
  double confidence = 0.0;
  int pair = 0;  // source query-reference pair
};

struct AggregatedMatch {
  Point2D keypoint;  // quantized, an exact multiple of s per axis
  Point3D point;
  double confidence = 0.0;
  int count = 0;  // contributors N_k
  // Confidence-weighted mean of the contributing raw keypoints (debug only).
  Point2D mean_keypoint;
};

inline constexpr double kAggregationEpsilon = 1e-6;

// Keeps matches with confidence strictly above tau.
std::vector<Match2D3D> FilterByConfidence(std::span<const Match2D3D> matches,
                                          double tau);

// round(k / s) * s per axis, halves rounded away from zero.
Point2D Quantize(const Point2D& keypoint, double s);

// Rows grouped by quantized keypoint. Groups are numbered in ascending
// (x, y) order of their keys.
struct Grouping {
  std::vector<int> segment;    // group of each input row
  std::vector<Point2D> keys;   // quantized keypoint of each group
  std::vector<int> counts;
};
Grouping GroupByQuantizedKeypoint(std::span<const Point2D> keypoints, double s);

// Filter by tau, then per quantized keypoint
//   p_agg = mean(c * p) / (mean(c) + 1e-6),  c_agg = mean(c).
// Output is sorted by key.
std::vector<AggregatedMatch> Aggregate(std::span<const Match2D3D> matches,
                                       double s, double tau);

// Differentiable grouping mean over already-filtered rows: `points` N x 3,
// `confidences` N x 1, both on the same tape.
struct AggregatedVars {
  dk::Var points;       // G x 3
  dk::Var confidences;  // G x 1
  Grouping grouping;
};
AggregatedVars AggregateVars(dk::Var points, dk::Var confidences,
                             std::span<const Point2D> keypoints, double s);

// Debug dump: one line "kx ky px py pz conf n" per aggregated match.
std::string FormatAggregatedMatches(std::span<const AggregatedMatch> matches);
void WriteAggregatedMatches(std::span<const AggregatedMatch> matches,
                            const std::filesystem::path& path);

}  // namespace deviloc
