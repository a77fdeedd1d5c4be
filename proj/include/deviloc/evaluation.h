#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "deviloc/geometry.h"

namespace deviloc {

struct QueryError {
  std::string name;
  bool success = false;
  double translation_error = 0.0;  // +inf for failures
  double rotation_error = 0.0;     // degrees, +inf for failures
};

struct RecallAt {
  double translation = 0.0;
  double rotation = 0.0;  // degrees
  double recall = 0.0;
};

struct AucAt {
  double threshold = 0.0;  // degrees
  double auc = 0.0;
};

struct EvalReport {
  std::vector<QueryError> rows;  // sorted by query name
  int num_queries = 0;
  int num_failed = 0;
  // Over successful queries; NaN when there are none.
  double median_translation = 0.0;
  double median_rotation = 0.0;
  std::vector<RecallAt> recalls;
  std::vector<AucAt> aucs;
  std::optional<double> wall_time;
};

// Fraction of errors with both components strictly below the thresholds.
double Recall(const std::vector<QueryError>& rows, double translation_threshold,
              double rotation_threshold);
// Area under the step recall curve of the rotation errors on [0, t],
// divided by t: sum over e_i < t of (t - e_i) / (N t). Failures carry +inf
// and contribute nothing.
double RotationAuc(const std::vector<double>& rotation_errors, double threshold);
double Median(std::vector<double> values);

// `estimates` maps every evaluated query to its pose, or nullopt for a
// failure. Throws kMissingGroundTruth for queries absent from `truth`.
EvalReport Evaluate(const std::map<std::string, std::optional<Pose>>& estimates,
                    const std::map<std::string, Pose>& truth,
                    const std::vector<std::pair<double, double>>& recall_thresholds,
                    const std::vector<double>& auc_thresholds);

// NaN and infinity are written as null.
nlohmann::json ReportToJson(const EvalReport& report);
std::string FormatReportTable(const EvalReport& report);

}  // namespace deviloc
