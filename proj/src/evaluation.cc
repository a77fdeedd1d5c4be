#include "deviloc/evaluation.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "deviloc/error.h"

namespace deviloc {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

nlohmann::json Number(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

std::string Fixed(double v, int precision) {
  if (std::isnan(v)) return "-";
  if (std::isinf(v)) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

}  // namespace

double Recall(const std::vector<QueryError>& rows, double translation_threshold,
              double rotation_threshold) {
  if (rows.empty()) return 0.0;
  int hits = 0;
  for (const QueryError& r : rows) {
    if (r.translation_error < translation_threshold && r.rotation_error < rotation_threshold) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / rows.size();
}

double RotationAuc(const std::vector<double>& rotation_errors, double threshold) {
  if (!(threshold > 0.0)) Throw(ErrorCode::kConfigError, "AUC threshold must be positive");
  if (rotation_errors.empty()) return 0.0;
  double area = 0.0;
  for (const double e : rotation_errors) {
    if (e < threshold) area += threshold - e;
  }
  return area / (rotation_errors.size() * threshold);
}

double Median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

EvalReport Evaluate(const std::map<std::string, std::optional<Pose>>& estimates,
                    const std::map<std::string, Pose>& truth,
                    const std::vector<std::pair<double, double>>& recall_thresholds,
                    const std::vector<double>& auc_thresholds) {
  EvalReport report;
  std::vector<std::string> missing;
  for (const auto& [name, pose] : estimates) {
    if (!truth.count(name)) missing.push_back(name);
  }
  if (!missing.empty()) {
    std::string names;
    for (const std::string& n : missing) names += (names.empty() ? "" : ", ") + n;
    Throw(ErrorCode::kMissingGroundTruth, "no ground-truth pose for " + names);
  }

  std::vector<double> t_ok;
  std::vector<double> r_ok;
  std::vector<double> rotations;
  for (const auto& [name, pose] : estimates) {
    QueryError row;
    row.name = name;
    if (pose) {
      const PoseError err = ComputePoseError(*pose, truth.at(name));
      row.success = true;
      row.translation_error = err.translation_error;
      row.rotation_error = err.rotation_error;
      t_ok.push_back(err.translation_error);
      r_ok.push_back(err.rotation_error);
    } else {
      row.translation_error = kInf;
      row.rotation_error = kInf;
      ++report.num_failed;
    }
    rotations.push_back(row.rotation_error);
    report.rows.push_back(row);
  }
  report.num_queries = static_cast<int>(report.rows.size());
  report.median_translation = Median(t_ok);
  report.median_rotation = Median(r_ok);
  for (const auto& [t, r] : recall_thresholds) {
    report.recalls.push_back({t, r, Recall(report.rows, t, r)});
  }
  for (const double t : auc_thresholds) {
    report.aucs.push_back({t, RotationAuc(rotations, t)});
  }
  return report;
}

nlohmann::json ReportToJson(const EvalReport& report) {
  nlohmann::json j;
  j["num_queries"] = report.num_queries;
  j["num_failed"] = report.num_failed;
  j["median_translation"] = Number(report.median_translation);
  j["median_rotation_deg"] = Number(report.median_rotation);
  j["recall"] = nlohmann::json::array();
  for (const RecallAt& r : report.recalls) {
    j["recall"].push_back(
        {{"translation", r.translation}, {"rotation_deg", r.rotation}, {"value", r.recall}});
  }
  j["auc"] = nlohmann::json::array();
  for (const AucAt& a : report.aucs) {
    j["auc"].push_back({{"threshold_deg", a.threshold}, {"value", a.auc}});
  }
  j["queries"] = nlohmann::json::array();
  for (const QueryError& row : report.rows) {
    j["queries"].push_back({{"name", row.name},
                            {"success", row.success},
                            {"translation_error", Number(row.translation_error)},
                            {"rotation_error_deg", Number(row.rotation_error)}});
  }
  if (report.wall_time) j["wall_time_s"] = *report.wall_time;
  return j;
}

std::string FormatReportTable(const EvalReport& report) {
  size_t width = 5;
  for (const QueryError& row : report.rows) width = std::max(width, row.name.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-*s  %12s  %12s\n", static_cast<int>(width), "query",
                "t_err", "r_err_deg");
  out += buf;
  for (const QueryError& row : report.rows) {
    std::snprintf(buf, sizeof(buf), "%-*s  %12s  %12s\n", static_cast<int>(width),
                  row.name.c_str(),
                  row.success ? Fixed(row.translation_error, 6).c_str() : "FAILED",
                  row.success ? Fixed(row.rotation_error, 6).c_str() : "FAILED");
    out += buf;
  }
  out += "\n";
  std::snprintf(buf, sizeof(buf), "queries %d  failed %d\n", report.num_queries,
                report.num_failed);
  out += buf;
  out += "median translation " + Fixed(report.median_translation, 6) + "  rotation " +
         Fixed(report.median_rotation, 6) + " deg\n";
  for (const RecallAt& r : report.recalls) {
    std::snprintf(buf, sizeof(buf), "recall (%g, %g deg)  %.4f\n", r.translation, r.rotation,
                  r.recall);
    out += buf;
  }
  for (const AucAt& a : report.aucs) {
    std::snprintf(buf, sizeof(buf), "AUC @ %g deg  %.4f\n", a.threshold, a.auc);
    out += buf;
  }
  if (report.wall_time) {
    std::snprintf(buf, sizeof(buf), "wall time %.3f s\n", *report.wall_time);
    out += buf;
  }
  return out;
}

}  // namespace deviloc
