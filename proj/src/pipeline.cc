#include "deviloc/pipeline.h"

#include <algorithm>
#include <chrono>
#include <exception>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "deviloc/colmap_io.h"
#include "deviloc/cpa.h"
#include "deviloc/random.h"
#include "text_io.h"

namespace deviloc {
namespace {

// FNV-1a, so the RANSAC stream of a query depends on its name only and not
// on where it sits in the query list.
uint64_t HashName(const std::string& name) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char ch : name) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool IsSkippablePairError(ErrorCode code) {
  return code == ErrorCode::kNoOverlap || code == ErrorCode::kNoObservations ||
         code == ErrorCode::kEmptyObserved;
}

struct PairOutput {
  std::vector<Match2D3D> matches;
  int raw = 0;
  std::optional<std::string> skipped;
};

PairOutput RunPair(const std::string& query_name, const Image& reference,
                   int pair_index, const SceneModel& scene, const Matcher& matcher,
                   const PointPredictor& predictor) {
  PairOutput out;
  try {
    const MatchSet set = matcher.Match(query_name, reference);
    if (set.size() == 0) Throw(ErrorCode::kNoOverlap, "matcher returned no matches");
    if (!set.feature_map) {
      Throw(ErrorCode::kConfigError, "match set without feature map for " + reference.name);
    }
    out.raw = static_cast<int>(set.size());
    const ObservedPoints observed = ObservedForImage(scene, reference.image_id);
    PinInput input;
    input.ref_keypoints = set.ref_kpts;
    input.observed = &observed;
    input.feature_map = set.feature_map.get();
    input.intrinsics = scene.IntrinsicsOf(reference);
    input.pose = reference.pose;
    const PinOutput pin = predictor(reference, input);
    out.matches.reserve(set.size());
    for (size_t i = 0; i < set.size(); ++i) {
      Match2D3D m;
      m.query_keypoint = set.query_kpts[i];
      m.point = pin.points.row(i).transpose();
      m.confidence = pin.confidences(i);
      m.pair = pair_index;
      out.matches.push_back(m);
    }
  } catch (const Error& e) {
    if (!IsSkippablePairError(e.code())) throw;
    out = PairOutput();
    out.skipped = "skipped pair " + query_name + " / " + reference.name + ": " +
                  std::string(ErrorCodeName(e.code())) + ": " + e.what();
  }
  return out;
}

}  // namespace

PointPredictor PinPredictor(const PinModel& model) {
  return [&model](const Image&, const PinInput& input) { return model.Infer(input); };
}

PointPredictor OraclePredictor(const SyntheticScene& scene) {
  return [&scene](const Image& reference, const PinInput& input) {
    const size_t n = input.ref_keypoints.size();
    PinOutput out;
    out.depths.resize(n);
    out.confidences.resize(n);
    out.points.resize(n, 3);
    for (size_t i = 0; i < n; ++i) {
      const Point2D& kp = input.ref_keypoints[i];
      const auto depth = scene.ExactDepth(reference.image_id, kp);
      if (depth) {
        out.depths(i) = *depth;
        out.confidences(i) = 1.0;
        out.points.row(i) =
            input.pose.CamToScene(Unproject(kp, *depth, input.intrinsics)).transpose();
      } else {
        out.depths(i) = std::numeric_limits<double>::quiet_NaN();
        out.confidences(i) = 0.0;
        out.points.row(i).setConstant(std::numeric_limits<double>::quiet_NaN());
      }
    }
    return out;
  };
}

const std::vector<std::string>* RetrievalList::Find(const std::string& query_name) const {
  for (const auto& [name, refs] : queries) {
    if (name == query_name) return &refs;
  }
  return nullptr;
}

size_t RetrievalList::NumPairs() const {
  size_t n = 0;
  for (const auto& entry : queries) n += entry.second.size();
  return n;
}

RetrievalList LoadRetrieval(const std::filesystem::path& path, const SceneModel& scene,
                            int k) {
  if (k < 1) Throw(ErrorCode::kConfigError, "retrieval k must be >= 1");
  LineReader reader(path);
  RetrievalList list;
  std::map<std::string, size_t> index;
  std::set<std::string> unknown;
  std::string line;
  while (reader.NextContent(&line)) {
    const auto tokens = Tokenize(line);
    if (tokens.size() != 2) reader.Fail("expected 'QUERY_NAME REF_NAME'");
    const std::string query(tokens[0]);
    const std::string ref(tokens[1]);
    if (scene.FindImageByName(ref) == nullptr) unknown.insert(ref);
    auto it = index.find(query);
    if (it == index.end()) {
      it = index.emplace(query, list.queries.size()).first;
      list.queries.emplace_back(query, std::vector<std::string>());
    }
    std::vector<std::string>& refs = list.queries[it->second].second;
    if (static_cast<int>(refs.size()) < k &&
        std::find(refs.begin(), refs.end(), ref) == refs.end()) {
      refs.push_back(ref);
    }
  }
  if (!unknown.empty()) {
    std::string names;
    for (const std::string& name : unknown) names += (names.empty() ? "" : ", ") + name;
    Throw(ErrorCode::kUnknownImage, "retrieval references unknown images: " + names);
  }
  return list;
}

RetrievalList SyntheticRetrieval(const SyntheticScene& scene,
                                 const std::vector<int>& query_ids, int k) {
  if (k < 1) Throw(ErrorCode::kConfigError, "retrieval k must be >= 1");
  RetrievalList list;
  for (const int query_id : query_ids) {
    std::vector<std::string> refs;
    for (const auto& [image_id, count] : CovisibleReferences(scene, query_id, k)) {
      refs.push_back(scene.model.ImageById(image_id).name);
    }
    list.queries.emplace_back(scene.View(query_id).name, std::move(refs));
  }
  return list;
}

std::string FormatRetrieval(const RetrievalList& list) {
  std::string out;
  for (const auto& [query, refs] : list.queries) {
    for (const std::string& ref : refs) out += query + " " + ref + "\n";
  }
  return out;
}

void WriteRetrieval(const RetrievalList& list, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) Throw(ErrorCode::kIoError, "cannot write " + path.string());
  out << FormatRetrieval(list);
  if (!out) Throw(ErrorCode::kIoError, "failed writing " + path.string());
}

std::map<std::string, CameraIntrinsics> LoadQueryIntrinsics(
    const std::filesystem::path& path) {
  LineReader reader(path);
  std::map<std::string, CameraIntrinsics> out;
  std::string line;
  while (reader.NextContent(&line)) {
    const auto tokens = Tokenize(line);
    if (tokens.size() < 2) reader.Fail("expected 'NAME MODEL W H PARAMS...'");
    CameraIntrinsics k;
    if (tokens[1] == "PINHOLE") {
      if (tokens.size() != 8) reader.Fail("PINHOLE expects W H FX FY CX CY");
      k.fx = ParseNumber<double>(tokens[4], reader, "FX");
      k.fy = ParseNumber<double>(tokens[5], reader, "FY");
      k.cx = ParseNumber<double>(tokens[6], reader, "CX");
      k.cy = ParseNumber<double>(tokens[7], reader, "CY");
    } else if (tokens[1] == "SIMPLE_PINHOLE") {
      if (tokens.size() != 7) reader.Fail("SIMPLE_PINHOLE expects W H F CX CY");
      k.fx = k.fy = ParseNumber<double>(tokens[4], reader, "F");
      k.cx = ParseNumber<double>(tokens[5], reader, "CX");
      k.cy = ParseNumber<double>(tokens[6], reader, "CY");
    } else {
      Throw(ErrorCode::kUnsupportedCameraModel,
            reader.path() + ":" + std::to_string(reader.line_number()) +
                ": unsupported camera model " + std::string(tokens[1]));
    }
    k.width = ParseNumber<int>(tokens[2], reader, "WIDTH");
    k.height = ParseNumber<int>(tokens[3], reader, "HEIGHT");
    try {
      k.Validate();
    } catch (const Error& e) {
      reader.Fail(e.what());
    }
    out[std::string(tokens[0])] = k;
  }
  return out;
}

std::string FormatQueryIntrinsics(const std::map<std::string, CameraIntrinsics>& queries) {
  std::string out;
  for (const auto& [name, k] : queries) {
    out += name + " PINHOLE " + std::to_string(k.width) + " " + std::to_string(k.height) +
           " " + FormatDouble(k.fx) + " " + FormatDouble(k.fy) + " " + FormatDouble(k.cx) +
           " " + FormatDouble(k.cy) + "\n";
  }
  return out;
}

double LocalizationResult::inlier_ratio() const {
  if (!estimate || stats.post_cpa == 0) return 0.0;
  return static_cast<double>(estimate->num_inliers) / stats.post_cpa;
}

LocalizationResult LocalizeQuery(const std::string& query_name,
                                 const CameraIntrinsics& intrinsics,
                                 const std::vector<std::string>& reference_names,
                                 const SceneModel& scene, const Matcher& matcher,
                                 const PointPredictor& predictor,
                                 const LocalizeOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  if (reference_names.empty()) {
    Throw(ErrorCode::kAllPairsFailed, "no references retrieved for " + query_name);
  }
  std::vector<const Image*> refs;
  for (const std::string& name : reference_names) refs.push_back(&scene.ImageByName(name));

  const int n = static_cast<int>(refs.size());
  std::vector<PairOutput> pairs(n);
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic) if (options.parallel && n > 1)
  for (int i = 0; i < n; ++i) {
    try {
      pairs[i] = RunPair(query_name, *refs[i], i, scene, matcher, predictor);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  // Exceptions cannot leave the parallel region; the first failing pair wins.
  for (const std::exception_ptr& error : errors) {
    if (error) std::rethrow_exception(error);
  }

  LocalizationResult result;
  result.query_name = query_name;
  std::vector<Match2D3D> all;
  for (PairOutput& pair : pairs) {
    if (pair.skipped) {
      result.warnings.push_back(*pair.skipped);
      ++result.stats.pairs_skipped;
      continue;
    }
    ++result.stats.pairs_used;
    result.stats.raw_2d2d += pair.raw;
    all.insert(all.end(), pair.matches.begin(), pair.matches.end());
  }
  if (result.stats.pairs_used == 0) {
    Throw(ErrorCode::kAllPairsFailed, "every reference pair failed for " + query_name);
  }
  result.stats.pre_filter = static_cast<int>(all.size());
  result.stats.post_filter =
      static_cast<int>(FilterByConfidence(all, options.tau).size());
  const std::vector<AggregatedMatch> aggregated = Aggregate(all, options.s, options.tau);
  result.stats.post_cpa = static_cast<int>(aggregated.size());

  std::vector<Point2D> pixels;
  std::vector<Point3D> points;
  pixels.reserve(aggregated.size());
  points.reserve(aggregated.size());
  for (const AggregatedMatch& m : aggregated) {
    pixels.push_back(m.keypoint);
    points.push_back(m.point);
  }
  RansacConfig ransac = options.ransac;
  ransac.seed = DeriveSeed({options.ransac.seed, HashName(query_name)});
  try {
    result.estimate = RansacPnP(pixels, points, intrinsics, ransac);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kTooFewMatches && e.code() != ErrorCode::kNoModelFound &&
        e.code() != ErrorCode::kDegenerateConfiguration) {
      throw;
    }
    result.failure = e.code();
    result.failure_message = e.what();
  }
  result.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::vector<LocalizationResult> LocalizeAll(
    const RetrievalList& retrieval,
    const std::map<std::string, CameraIntrinsics>& intrinsics,
    const SceneModel& scene, const Matcher& matcher, const PointPredictor& predictor,
    const LocalizeOptions& options) {
  std::vector<LocalizationResult> results;
  for (const auto& [query, refs] : retrieval.queries) {
    const auto k = intrinsics.find(query);
    if (k == intrinsics.end()) {
      Throw(ErrorCode::kConfigError, "no intrinsics for query " + query);
    }
    try {
      results.push_back(LocalizeQuery(query, k->second, refs, scene, matcher, predictor, options));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kAllPairsFailed) throw;
      LocalizationResult failed;
      failed.query_name = query;
      failed.failure = e.code();
      failed.failure_message = e.what();
      results.push_back(std::move(failed));
    }
  }
  return results;
}

std::string FormatPoseLine(const std::string& name, const Pose& pose) {
  Eigen::Quaterniond q = pose.rotation();
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  const Eigen::Vector3d& t = pose.translation();
  return name + " " + FormatDouble(q.w()) + " " + FormatDouble(q.x()) + " " +
         FormatDouble(q.y()) + " " + FormatDouble(q.z()) + " " + FormatDouble(t.x()) +
         " " + FormatDouble(t.y()) + " " + FormatDouble(t.z());
}

std::string FormatPoses(const std::vector<LocalizationResult>& results) {
  std::string out;
  for (const LocalizationResult& r : results) {
    if (r.ok()) out += FormatPoseLine(r.query_name, r.estimate->pose) + "\n";
  }
  return out;
}

void WritePoses(const std::vector<LocalizationResult>& results,
                const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) Throw(ErrorCode::kIoError, "cannot write " + path.string());
  out << FormatPoses(results);
  std::ofstream failed(path.string() + ".failed");
  if (!failed) Throw(ErrorCode::kIoError, "cannot write " + path.string() + ".failed");
  for (const LocalizationResult& r : results) {
    if (!r.ok()) {
      failed << r.query_name << " "
             << (r.failure ? ErrorCodeName(*r.failure) : std::string_view("Unknown")) << "\n";
    }
  }
  if (!out || !failed) Throw(ErrorCode::kIoError, "failed writing " + path.string());
}

std::map<std::string, Pose> ReadPoses(const std::filesystem::path& path) {
  LineReader reader(path);
  std::map<std::string, Pose> poses;
  std::string line;
  while (reader.NextContent(&line)) {
    const auto tokens = Tokenize(line);
    if (tokens.size() != 8) reader.Fail("expected 'NAME QW QX QY QZ TX TY TZ'");
    double v[7];
    static const char* kFields[] = {"QW", "QX", "QY", "QZ", "TX", "TY", "TZ"};
    for (int i = 0; i < 7; ++i) v[i] = ParseNumber<double>(tokens[i + 1], reader, kFields[i]);
    const Eigen::Quaterniond q(v[0], v[1], v[2], v[3]);
    if (q.norm() < 1e-12) reader.Fail("zero quaternion");
    if (!poses.emplace(std::string(tokens[0]), Pose(q, Eigen::Vector3d(v[4], v[5], v[6])))
             .second) {
      reader.Fail("duplicate pose for " + std::string(tokens[0]));
    }
  }
  return poses;
}

std::vector<std::string> ReadFailures(const std::filesystem::path& pose_path) {
  const std::filesystem::path sidecar = pose_path.string() + ".failed";
  std::vector<std::string> names;
  if (!std::filesystem::exists(sidecar)) return names;
  LineReader reader(sidecar);
  std::string line;
  while (reader.NextContent(&line)) {
    const auto tokens = Tokenize(line);
    names.emplace_back(tokens.at(0));
  }
  return names;
}

}  // namespace deviloc
