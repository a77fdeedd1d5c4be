#include "deviloc/cpa.h"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "deviloc/colmap_io.h"
#include "deviloc/diffkernel/ops.h"
#include "deviloc/error.h"
#include "deviloc/kernels.h"

namespace deviloc {

std::vector<Match2D3D> FilterByConfidence(std::span<const Match2D3D> matches,
                                          double tau) {
  std::vector<Match2D3D> kept;
  for (const Match2D3D& m : matches) {
    if (m.confidence > tau) kept.push_back(m);
  }
  return kept;
}

Point2D Quantize(const Point2D& keypoint, double s) {
  return kernels::QuantizeKeypoint(keypoint, s);
}

Grouping GroupByQuantizedKeypoint(std::span<const Point2D> keypoints, double s) {
  if (!(s > 0.0)) Throw(ErrorCode::kConfigError, "quantization size must be positive");
  std::vector<Point2D> quantized;
  kernels::QuantizeSerial(keypoints, s, &quantized);
  std::map<std::pair<double, double>, int> index;
  for (const Point2D& q : quantized) index.emplace(std::make_pair(q.x(), q.y()), 0);
  Grouping grouping;
  for (auto& [key, id] : index) {
    id = static_cast<int>(grouping.keys.size());
    grouping.keys.emplace_back(key.first, key.second);
  }
  grouping.counts.assign(grouping.keys.size(), 0);
  grouping.segment.reserve(quantized.size());
  for (const Point2D& q : quantized) {
    const int id = index.at({q.x(), q.y()});
    grouping.segment.push_back(id);
    ++grouping.counts[id];
  }
  return grouping;
}

std::vector<AggregatedMatch> Aggregate(std::span<const Match2D3D> matches,
                                       double s, double tau) {
  const std::vector<Match2D3D> kept = FilterByConfidence(matches, tau);
  std::vector<Point2D> keypoints;
  keypoints.reserve(kept.size());
  for (const Match2D3D& m : kept) keypoints.push_back(m.query_keypoint);
  const Grouping grouping = GroupByQuantizedKeypoint(keypoints, s);

  const size_t groups = grouping.keys.size();
  std::vector<double> conf_sum(groups, 0.0);
  std::vector<Point3D> point_sum(groups, Point3D::Zero());
  std::vector<Point2D> keypoint_sum(groups, Point2D::Zero());
  for (size_t i = 0; i < kept.size(); ++i) {
    const int g = grouping.segment[i];
    conf_sum[g] += kept[i].confidence;
    point_sum[g] += kept[i].confidence * kept[i].point;
    keypoint_sum[g] += kept[i].confidence * kept[i].query_keypoint;
  }

  std::vector<AggregatedMatch> out(groups);
  for (size_t g = 0; g < groups; ++g) {
    const double n = grouping.counts[g];
    const double mean_conf = conf_sum[g] / n;
    out[g].keypoint = grouping.keys[g];
    out[g].count = grouping.counts[g];
    out[g].confidence = mean_conf;
    out[g].point = (point_sum[g] / n) / (mean_conf + kAggregationEpsilon);
    out[g].mean_keypoint = (keypoint_sum[g] / n) / (mean_conf + kAggregationEpsilon);
  }
  return out;
}

AggregatedVars AggregateVars(dk::Var points, dk::Var confidences,
                             std::span<const Point2D> keypoints, double s) {
  if (points.cols() != 3 || confidences.cols() != 1 ||
      points.rows() != confidences.rows() ||
      points.rows() != static_cast<Eigen::Index>(keypoints.size())) {
    Throw(ErrorCode::kShapeMismatch, "AggregateVars expects N x 3, N x 1, N keypoints");
  }
  AggregatedVars out;
  out.grouping = GroupByQuantizedKeypoint(keypoints, s);
  const int groups = static_cast<int>(out.grouping.keys.size());
  out.confidences = dk::SegmentMean(confidences, out.grouping.segment, groups);
  const dk::Var weighted =
      dk::SegmentMean(dk::MulColumn(points, confidences), out.grouping.segment, groups);
  out.points = dk::DivColumn(
      weighted, dk::Affine(out.confidences, 1.0, kAggregationEpsilon));
  return out;
}

std::string FormatAggregatedMatches(std::span<const AggregatedMatch> matches) {
  std::ostringstream out;
  for (const AggregatedMatch& m : matches) {
    out << FormatDouble(m.keypoint.x()) << ' ' << FormatDouble(m.keypoint.y())
        << ' ' << FormatDouble(m.point.x()) << ' ' << FormatDouble(m.point.y())
        << ' ' << FormatDouble(m.point.z()) << ' ' << FormatDouble(m.confidence)
        << ' ' << m.count << '\n';
  }
  return out.str();
}

void WriteAggregatedMatches(std::span<const AggregatedMatch> matches,
                            const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) Throw(ErrorCode::kIoError, "cannot write " + path.string());
  out << FormatAggregatedMatches(matches);
}

}  // namespace deviloc
