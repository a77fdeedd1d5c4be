// Command-line surface of the localization pipeline.
//
// Exit codes: 0 success, 1 query-level failures under --strict (or a failed
// gradient check), 2 configuration, parse or I/O errors.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <omp.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "deviloc/colmap_io.h"
#include "deviloc/config.h"
#include "deviloc/diffkernel/checkpoint.h"
#include "deviloc/error.h"
#include "deviloc/evaluation.h"
#include "deviloc/fixtures.h"
#include "deviloc/grad_suite.h"
#include "deviloc/pipeline.h"
#include "deviloc/training.h"

namespace fs = std::filesystem;
using namespace deviloc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitQueryFailure = 1;
constexpr int kExitConfig = 2;

struct CommonFlags {
  std::string config_path;
  std::optional<uint64_t> seed;
  bool deterministic = false;
  int threads = 0;
};

AppConfig LoadAppConfig(const CommonFlags& flags) {
  AppConfig config = flags.config_path.empty() ? DeskConfig() : LoadConfig(flags.config_path);
  if (flags.seed) {
    config.pipeline.seed = *flags.seed;
    config.training.seed = *flags.seed;
  }
  return config;
}

void ApplyThreads(const CommonFlags& flags) {
  if (flags.threads > 0) omp_set_num_threads(flags.threads);
}

void WriteFile(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) Throw(ErrorCode::kIoError, "cannot write " + path.string());
  out << text;
  if (!out) Throw(ErrorCode::kIoError, "failed writing " + path.string());
}

SyntheticSceneConfig ReadSceneJson(const fs::path& path) {
  std::ifstream in(path);
  if (!in) Throw(ErrorCode::kIoError, "cannot read " + path.string());
  try {
    return SceneConfigFromJson(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    Throw(ErrorCode::kConfigError, path.string() + ": " + e.what());
  }
}

// ---- synth

struct SynthFlags {
  std::string out;
  int topk = 3;
};

int RunSynth(const CommonFlags& common, const SynthFlags& flags) {
  AppConfig config = LoadAppConfig(common);
  if (common.seed) config.scene.seed = *common.seed;
  ApplyThreads(common);
  const SyntheticScene scene = GenerateSyntheticScene(config.scene);
  WriteSceneBundle(scene, flags.out, flags.topk);
  std::fprintf(stderr, "wrote %zu database images, %zu queries, %zu points to %s\n",
               scene.model.images.size(), scene.QueryIds().size(),
               scene.model.points3d.size(), flags.out.c_str());
  return kExitOk;
}

// ---- train

struct TrainFlags {
  std::string scene_dir;
  std::string out;
  std::string csv;
  int steps = -1;
};

int RunTrain(const CommonFlags& common, const TrainFlags& flags) {
  AppConfig config = LoadAppConfig(common);
  if (flags.steps >= 0) config.training.max_steps = flags.steps;
  if (common.seed) config.pin.seed = *common.seed;
  ApplyThreads(common);
  const SyntheticSceneConfig scene_config =
      flags.scene_dir.empty() ? config.scene
                              : ReadSceneJson(fs::path(flags.scene_dir) / "scene.json");
  const SyntheticScene scene = GenerateSyntheticScene(scene_config);
  const std::vector<TrainingSample> samples =
      BuildTrainingSamples(scene, TrainingSampleConfig(config));
  std::fprintf(stderr, "training on %zu queries\n", samples.size());

  PinModel model(config.pin);
  std::ofstream csv;
  if (!flags.csv.empty()) {
    csv.open(flags.csv);
    if (!csv) Throw(ErrorCode::kIoError, "cannot write " + flags.csv);
  }
  const auto start = std::chrono::steady_clock::now();
  const std::vector<TrainStep> steps =
      Train(model, samples, config.training, csv.is_open() ? &csv : nullptr,
            [](const TrainStep& s) {
              if (s.step == 1 || s.step % 100 == 0) {
                std::fprintf(stderr, "step %5d  L_point %.5f  L_conf %.5f  L_total %.5f\n",
                             s.step, s.loss.point, s.loss.conf, s.loss.total);
              }
            });
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  dk::SaveCheckpointWithManifest(model.params(), PinConfigToJson(config.pin).dump(),
                                 flags.out);
  if (!steps.empty()) {
    const LossBreakdown& last = steps.back().loss;
    std::fprintf(stderr, "%zu steps in %.1f s, final L_point %.5f L_conf %.5f\n",
                 steps.size(), seconds, last.point, last.conf);
  }
  return kExitOk;
}

// ---- localize

struct LocalizeFlags {
  std::string scene_dir;
  std::string model;
  bool oracle = false;
  std::string pairs;
  std::string matches;
  std::string queries;
  std::string gt;
  std::string out;
  std::string report;
  std::optional<double> tau;
  std::optional<double> s;
  std::optional<int> topk;
  std::optional<double> ransac_threshold;
  bool strict = false;
};

nlohmann::json LocalizationJson(const std::vector<LocalizationResult>& results,
                                bool deterministic) {
  nlohmann::json rows = nlohmann::json::array();
  for (const LocalizationResult& r : results) {
    nlohmann::json row = {{"name", r.query_name},
                          {"success", r.ok()},
                          {"raw_2d2d", r.stats.raw_2d2d},
                          {"matches_2d3d", r.stats.pre_filter},
                          {"after_filter", r.stats.post_filter},
                          {"after_cpa", r.stats.post_cpa},
                          {"pairs_used", r.stats.pairs_used},
                          {"pairs_skipped", r.stats.pairs_skipped}};
    if (r.ok()) {
      row["inliers"] = r.estimate->num_inliers;
      row["inlier_ratio"] = r.inlier_ratio();
    } else {
      row["failure"] = r.failure ? std::string(ErrorCodeName(*r.failure)) : "Unknown";
    }
    if (!deterministic) row["wall_time_s"] = r.wall_time;
    rows.push_back(row);
  }
  return rows;
}

int RunLocalize(const CommonFlags& common, const LocalizeFlags& flags) {
  AppConfig config = LoadAppConfig(common);
  PipelineConfig& p = config.pipeline;
  if (flags.tau) p.tau = *flags.tau;
  if (flags.s) p.s = *flags.s;
  if (flags.topk) p.topk = *flags.topk;
  if (flags.ransac_threshold) p.ransac.threshold = *flags.ransac_threshold;
  p.Validate();
  ApplyThreads(common);
  if (flags.oracle == !flags.model.empty()) {
    Throw(ErrorCode::kConfigError, "exactly one of --model and --oracle is required");
  }

  const fs::path dir = flags.scene_dir;
  const fs::path scene_json = dir / "scene.json";
  std::optional<SyntheticScene> synthetic;
  if (fs::exists(scene_json)) synthetic = GenerateSyntheticScene(ReadSceneJson(scene_json));
  const SceneModel scene =
      synthetic ? synthetic->model : ParseColmapTextDir(dir / "colmap");
  if (flags.oracle && !synthetic) {
    Throw(ErrorCode::kConfigError, "--oracle needs a synthetic scene (scene.json)");
  }

  RetrievalList retrieval;
  if (!flags.pairs.empty()) {
    retrieval = LoadRetrieval(flags.pairs, scene, p.topk);
  } else if (synthetic) {
    retrieval = SyntheticRetrieval(*synthetic, synthetic->QueryIds(), p.topk);
  } else {
    Throw(ErrorCode::kConfigError, "--pairs is required for non-synthetic scenes");
  }

  std::map<std::string, CameraIntrinsics> intrinsics;
  if (!flags.queries.empty()) {
    intrinsics = LoadQueryIntrinsics(flags.queries);
  } else if (synthetic) {
    for (const int id : synthetic->QueryIds()) {
      intrinsics[synthetic->View(id).name] = synthetic->intrinsics();
    }
  } else {
    Throw(ErrorCode::kConfigError, "--queries is required for non-synthetic scenes");
  }

  std::unique_ptr<Matcher> matcher;
  if (!flags.matches.empty()) {
    matcher = std::make_unique<FileMatcher>(LoadMatches(flags.matches));
  } else if (synthetic) {
    matcher = std::make_unique<SyntheticMatcher>(*synthetic, config.match);
  } else {
    Throw(ErrorCode::kConfigError, "--matches is required for non-synthetic scenes");
  }

  std::optional<PinModel> model;
  PointPredictor predictor;
  if (flags.oracle) {
    predictor = OraclePredictor(*synthetic);
  } else {
    model.emplace(LoadPinCheckpoint(flags.model));
    predictor = PinPredictor(*model);
  }

  LocalizeOptions options;
  options.tau = p.tau;
  options.s = p.s;
  options.ransac = p.ransac;
  options.ransac.seed = p.seed;
  const auto start = std::chrono::steady_clock::now();
  const std::vector<LocalizationResult> results =
      LocalizeAll(retrieval, intrinsics, scene, *matcher, predictor, options);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (const LocalizationResult& r : results) {
    for (const std::string& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    if (!r.ok()) {
      std::fprintf(stderr, "query %s failed: %s\n", r.query_name.c_str(),
                   r.failure_message.c_str());
    }
  }
  if (!flags.out.empty()) WritePoses(results, flags.out);

  nlohmann::json report;
  report["localization"] = LocalizationJson(results, common.deterministic);
  std::map<std::string, Pose> truth;
  if (!flags.gt.empty()) {
    truth = ReadPoses(flags.gt);
  } else if (synthetic) {
    for (const int id : synthetic->QueryIds()) {
      truth[synthetic->View(id).name] = synthetic->View(id).pose;
    }
  }
  std::string table;
  if (!truth.empty()) {
    std::map<std::string, std::optional<Pose>> estimates;
    for (const LocalizationResult& r : results) {
      estimates[r.query_name] = r.ok() ? std::optional<Pose>(r.estimate->pose) : std::nullopt;
    }
    EvalReport eval = Evaluate(estimates, truth, p.recall_thresholds, p.auc_thresholds);
    if (!common.deterministic) eval.wall_time = seconds;
    report["evaluation"] = ReportToJson(eval);
    table = FormatReportTable(eval);
  }
  if (!flags.report.empty()) {
    WriteFile(flags.report, report.dump(2) + "\n");
    if (!table.empty()) WriteFile(flags.report + ".txt", table);
  }
  if (!table.empty()) std::fputs(table.c_str(), stdout);

  int failed = 0;
  for (const LocalizationResult& r : results) failed += r.ok() ? 0 : 1;
  return flags.strict && failed > 0 ? kExitQueryFailure : kExitOk;
}

// ---- eval

struct EvalFlags {
  std::string poses;
  std::string gt;
  std::string report;
  bool strict = false;
};

int RunEval(const CommonFlags& common, const EvalFlags& flags) {
  const AppConfig config = LoadAppConfig(common);
  const std::map<std::string, Pose> poses = ReadPoses(flags.poses);
  const std::map<std::string, Pose> truth = ReadPoses(flags.gt);
  std::map<std::string, std::optional<Pose>> estimates;
  for (const auto& [name, pose] : poses) estimates[name] = pose;
  for (const std::string& name : ReadFailures(flags.poses)) estimates[name] = std::nullopt;
  const EvalReport report = Evaluate(estimates, truth, config.pipeline.recall_thresholds,
                                     config.pipeline.auc_thresholds);
  const std::string table = FormatReportTable(report);
  std::fputs(table.c_str(), stdout);
  if (!flags.report.empty()) {
    WriteFile(flags.report, ReportToJson(report).dump(2) + "\n");
    WriteFile(flags.report + ".txt", table);
  }
  return flags.strict && report.num_failed > 0 ? kExitQueryFailure : kExitOk;
}

// ---- grad-check

int RunGradCheck(const CommonFlags& common) {
  const std::vector<GradSuiteEntry> entries = RunGradCheckSuite(common.seed.value_or(0));
  bool ok = true;
  for (const GradSuiteEntry& e : entries) {
    std::printf("%-18s probes %3d  max rel err %.3e  tol %.0e  %s\n", e.name.c_str(),
                e.probes, e.max_rel_error, e.tolerance, e.passed() ? "ok" : "FAIL");
    ok = ok && e.passed();
  }
  return ok ? kExitOk : kExitQueryFailure;
}

// ---- fixtures

struct FixtureFlags {
  std::string out;
  std::string verify;
};

int RunFixtures(const CommonFlags& common, const FixtureFlags& flags) {
  if (!flags.verify.empty()) {
    const std::vector<std::string> bad = VerifyFixtures(flags.verify);
    for (const std::string& name : bad) std::fprintf(stderr, "checksum mismatch: %s\n", name.c_str());
    return bad.empty() ? kExitOk : kExitQueryFailure;
  }
  if (flags.out.empty()) Throw(ErrorCode::kConfigError, "fixtures needs --out or --verify");
  const FixtureManifest manifest = MakeFixtures(common.seed.value_or(0), flags.out);
  std::fprintf(stderr, "wrote %zu fixture files to %s\n", manifest.files.size(),
               flags.out.c_str());
  return kExitOk;
}

void AddCommon(CLI::App* app, CommonFlags* flags) {
  app->add_option("--config", flags->config_path, "config file (JSON or key = value)");
  app->add_option("--seed", flags->seed, "seed override");
  app->add_flag("--deterministic", flags->deterministic,
                "omit wall-clock fields so outputs are byte-reproducible");
  app->add_option("--threads", flags->threads, "OpenMP threads (0: runtime default)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deviloc: dense-visibility visual localization on sparse scenes"};
  app.require_subcommand(1);
  CommonFlags common;

  SynthFlags synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic scene bundle");
  AddCommon(synth_cmd, &common);
  synth_cmd->add_option("--out", synth.out, "output directory")->required();
  synth_cmd->add_option("--topk", synth.topk, "references per query in pairs.txt");

  TrainFlags train;
  CLI::App* train_cmd = app.add_subcommand("train", "train PIN on a synthetic scene");
  AddCommon(train_cmd, &common);
  train_cmd->add_option("--scene", train.scene_dir, "scene bundle (uses its scene.json)");
  train_cmd->add_option("--out", train.out, "checkpoint path")->required();
  train_cmd->add_option("--csv", train.csv, "loss curve CSV");
  train_cmd->add_option("--steps", train.steps, "step limit override");

  LocalizeFlags loc;
  CLI::App* loc_cmd = app.add_subcommand("localize", "localize the queries of a scene");
  AddCommon(loc_cmd, &common);
  loc_cmd->add_option("--scene", loc.scene_dir, "scene bundle directory")->required();
  loc_cmd->add_option("--model", loc.model, "PIN checkpoint");
  loc_cmd->add_flag("--oracle", loc.oracle, "ground-truth depths instead of PIN");
  loc_cmd->add_option("--pairs", loc.pairs, "retrieval pairs file");
  loc_cmd->add_option("--matches", loc.matches, "match dump (default: synthetic matcher)");
  loc_cmd->add_option("--queries", loc.queries, "query intrinsics file");
  loc_cmd->add_option("--gt", loc.gt, "ground-truth poses for the report");
  loc_cmd->add_option("--out", loc.out, "pose file");
  loc_cmd->add_option("--report", loc.report, "report JSON (table next to it as .txt)");
  loc_cmd->add_option("--tau", loc.tau, "confidence filter threshold");
  loc_cmd->add_option("--s", loc.s, "aggregation quantization size (px)");
  loc_cmd->add_option("--topk", loc.topk, "references per query");
  loc_cmd->add_option("--ransac-threshold", loc.ransac_threshold, "RANSAC threshold (px)");
  loc_cmd->add_flag("--strict", loc.strict, "exit 1 if any query fails");

  EvalFlags eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "compare a pose file to ground truth");
  AddCommon(eval_cmd, &common);
  eval_cmd->add_option("--poses", eval.poses, "pose file")->required();
  eval_cmd->add_option("--gt", eval.gt, "ground-truth pose file")->required();
  eval_cmd->add_option("--report", eval.report, "report JSON (table next to it as .txt)");
  eval_cmd->add_flag("--strict", eval.strict, "exit 1 if any query failed");

  CLI::App* grad_cmd = app.add_subcommand("grad-check", "run the finite-difference suite");
  AddCommon(grad_cmd, &common);

  FixtureFlags fixtures;
  CLI::App* fix_cmd = app.add_subcommand("fixtures", "write or verify seeded fixtures");
  AddCommon(fix_cmd, &common);
  fix_cmd->add_option("--out", fixtures.out, "output directory");
  fix_cmd->add_option("--verify", fixtures.verify, "fixture directory to check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*synth_cmd) return RunSynth(common, synth);
    if (*train_cmd) return RunTrain(common, train);
    if (*loc_cmd) return RunLocalize(common, loc);
    if (*eval_cmd) return RunEval(common, eval);
    if (*grad_cmd) return RunGradCheck(common);
    if (*fix_cmd) return RunFixtures(common, fixtures);
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", std::string(ErrorCodeName(e.code())).c_str(),
                 e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
  return kExitConfig;
}
