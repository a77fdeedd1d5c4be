#include <cmath>

#include <gtest/gtest.h>

#include "deviloc/colmap_io.h"
#include "deviloc/error.h"
#include "deviloc/pipeline.h"
#include "test_util.h"

namespace deviloc {
namespace {

const std::filesystem::path kFixtures = DEVILOC_TEST_FIXTURES;

ErrorCode CodeOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::kIoError;
}

TEST(RetrievalTest, LoadsAndTruncates) {
  const SceneModel model = ParseColmapTextDir(kFixtures / "colmap_valid");
  const TempDir dir("retrieval");
  WriteFile(dir.path() / "pairs.txt",
            "# query reference\n"
            "q1.png ref_b.png\n"
            "\n"
            "q1.png ref_a.png\n"
            "q0.png ref_a.png\n"
            "q1.png empty.png\n");
  const RetrievalList all = LoadRetrieval(dir.path() / "pairs.txt", model, 10);
  ASSERT_EQ(all.queries.size(), 2u);
  EXPECT_EQ(all.queries[0].first, "q1.png");
  EXPECT_EQ(all.queries[0].second,
            (std::vector<std::string>{"ref_b.png", "ref_a.png", "empty.png"}));
  EXPECT_EQ(all.NumPairs(), 4u);
  const RetrievalList one = LoadRetrieval(dir.path() / "pairs.txt", model, 1);
  EXPECT_EQ(*one.Find("q1.png"), std::vector<std::string>{"ref_b.png"});
  EXPECT_EQ(one.Find("nope"), nullptr);
  EXPECT_EQ(FormatRetrieval(one), "q1.png ref_b.png\nq0.png ref_a.png\n");
}

TEST(RetrievalTest, Errors) {
  const SceneModel model = ParseColmapTextDir(kFixtures / "colmap_valid");
  const TempDir dir("retrieval_bad");
  WriteFile(dir.path() / "unknown.txt", "q ref_a.png\nq missing.png\n");
  WriteFile(dir.path() / "malformed.txt", "q ref_a.png\nq\n");
  try {
    LoadRetrieval(dir.path() / "unknown.txt", model, 5);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownImage);
    EXPECT_NE(std::string(e.what()).find("missing.png"), std::string::npos);
  }
  try {
    LoadRetrieval(dir.path() / "malformed.txt", model, 5);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2);
  }
}

TEST(QueryIntrinsicsTest, RoundTrip) {
  std::map<std::string, CameraIntrinsics> q;
  q["a.png"] = CameraIntrinsics{500.5, 499.25, 320.125, 240, 640, 480};
  q["b.png"] = CameraIntrinsics{250, 250, 160, 120, 320, 240};
  const TempDir dir("intrinsics");
  WriteFile(dir.path() / "q.txt", FormatQueryIntrinsics(q));
  const auto back = LoadQueryIntrinsics(dir.path() / "q.txt");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.at("a.png").fx, 500.5);
  EXPECT_EQ(back.at("a.png").fy, 499.25);
  EXPECT_EQ(back.at("a.png").cx, 320.125);
  EXPECT_EQ(back.at("b.png").fy, 250.0);
  EXPECT_EQ(FormatQueryIntrinsics(back), FormatQueryIntrinsics(q));
  WriteFile(dir.path() / "bad.txt", "a.png OPENCV 1 2 3 4 5 6 7 8\n");
  EXPECT_THROW(LoadQueryIntrinsics(dir.path() / "bad.txt"), Error);
}

class PipelineTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    SyntheticSceneConfig config;
    config.num_points = 600;
    config.num_cameras = 8;
    config.num_queries = 2;
    config.width = 320;
    config.height = 240;
    config.focal = 250.0;
    config.seed = 5;
    scene_ = new SyntheticScene(GenerateSyntheticScene(config));
  }
  static void TearDownTestSuite() {
    delete scene_;
    scene_ = nullptr;
  }

  static SyntheticMatchConfig CleanMatches() {
    SyntheticMatchConfig m;
    m.pixel_noise = 0.0;
    m.outlier_fraction = 0.0;
    m.feature_channels = 4;
    m.feature_stride = 32.0;
    return m;
  }

  LocalizationResult Localize(int query_id, int k, const LocalizeOptions& options,
                              const PointPredictor& predictor) const {
    const SyntheticMatcher matcher(*scene_, CleanMatches());
    const RetrievalList list = SyntheticRetrieval(*scene_, {query_id}, k);
    const std::string& name = scene_->View(query_id).name;
    return LocalizeQuery(name, scene_->intrinsics(), *list.Find(name), scene_->model,
                         matcher, predictor, options);
  }

  static SyntheticScene* scene_;
};

SyntheticScene* PipelineTest::scene_ = nullptr;

TEST_F(PipelineTest, SyntheticRetrievalRanksByCovisibility) {
  const std::vector<int> queries = scene_->QueryIds();
  const RetrievalList list = SyntheticRetrieval(*scene_, queries, 3);
  ASSERT_EQ(list.queries.size(), queries.size());
  for (const auto& [query, refs] : list.queries) {
    EXPECT_LE(refs.size(), 3u);
    EXPECT_FALSE(refs.empty());
    for (const std::string& ref : refs) EXPECT_NE(scene_->model.FindImageByName(ref), nullptr);
  }
  const RetrievalList five = SyntheticRetrieval(*scene_, queries, 5);
  for (size_t i = 0; i < list.queries.size(); ++i) {
    const auto& a = list.queries[i].second;
    const auto& b = five.queries[i].second;
    ASSERT_GE(b.size(), a.size());
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  }
}

TEST_F(PipelineTest, OracleDepthsRecoverExactPose) {
  LocalizeOptions options;
  options.tau = 0.5;
  options.s = 4.0;
  for (const int id : scene_->QueryIds()) {
    const LocalizationResult r = Localize(id, 3, options, OraclePredictor(*scene_));
    ASSERT_TRUE(r.ok()) << r.failure_message;
    const PoseError e = ComputePoseError(r.estimate->pose, scene_->View(id).pose);
    // Aggregation averages nearby keypoints, so the exact surface points
    // are reprojected without noise but the 2D side moves by at most half
    // a cell; the refinement still lands on the truth once s is small.
    EXPECT_LT(e.translation_error, 0.1);
    EXPECT_LT(e.rotation_error, 0.5);
  }
}

TEST_F(PipelineTest, OracleDepthsWithoutQuantizationAreExact) {
  LocalizeOptions options;
  options.tau = 0.5;
  options.s = 1e-6;
  for (const int id : scene_->QueryIds()) {
    const LocalizationResult r = Localize(id, 3, options, OraclePredictor(*scene_));
    ASSERT_TRUE(r.ok()) << r.failure_message;
    const Pose& truth = scene_->View(id).pose;
    const PoseError e = ComputePoseError(r.estimate->pose, truth);
    // With unit confidences aggregation returns p / (1 + 1e-6): the scene
    // shrinks about the origin, and so does the recovered camera center.
    const double shrink = 1e-6 / (1.0 + 1e-6);
    EXPECT_NEAR(e.translation_error, shrink * truth.CameraCenter().norm(), 1e-7);
    EXPECT_LT(e.rotation_error, 1e-4);
    EXPECT_EQ(r.stats.pairs_used, 3);
    EXPECT_NEAR(r.inlier_ratio(), 1.0, 1e-12);
  }
}

TEST_F(PipelineTest, StatsAreMonotone) {
  LocalizeOptions options;
  const LocalizationResult r = Localize(scene_->QueryIds()[0], 3, options,
                                        OraclePredictor(*scene_));
  EXPECT_GE(r.stats.raw_2d2d, r.stats.pre_filter);
  EXPECT_GE(r.stats.pre_filter, r.stats.post_filter);
  EXPECT_GE(r.stats.post_filter, r.stats.post_cpa);
  EXPECT_GT(r.stats.post_cpa, 0);
}

TEST_F(PipelineTest, HighThresholdGivesFailureEntry) {
  const PointPredictor oracle = OraclePredictor(*scene_);
  const PointPredictor unsure = [oracle](const Image& ref, const PinInput& input) {
    PinOutput out = oracle(ref, input);
    out.confidences.setConstant(0.5);
    return out;
  };
  LocalizeOptions options;
  options.tau = 0.99;
  const LocalizationResult r = Localize(scene_->QueryIds()[0], 3, options, unsure);
  EXPECT_FALSE(r.ok());
  ASSERT_TRUE(r.failure.has_value());
  EXPECT_EQ(*r.failure, ErrorCode::kTooFewMatches);
  EXPECT_EQ(r.stats.post_filter, 0);
}

TEST_F(PipelineTest, ReferenceOrderDoesNotChangeResult) {
  const int id = scene_->QueryIds()[0];
  const std::string& name = scene_->View(id).name;
  const SyntheticMatcher matcher(*scene_, CleanMatches());
  std::vector<std::string> refs = *SyntheticRetrieval(*scene_, {id}, 3).Find(name);
  LocalizeOptions options;
  const LocalizationResult a = LocalizeQuery(name, scene_->intrinsics(), refs, scene_->model,
                                             matcher, OraclePredictor(*scene_), options);
  std::reverse(refs.begin(), refs.end());
  const LocalizationResult b = LocalizeQuery(name, scene_->intrinsics(), refs, scene_->model,
                                             matcher, OraclePredictor(*scene_), options);
  ASSERT_TRUE(a.ok());
  ASSERT_TRUE(b.ok());
  EXPECT_EQ(a.stats.post_cpa, b.stats.post_cpa);
  const PoseError e = ComputePoseError(a.estimate->pose, b.estimate->pose);
  EXPECT_LT(e.translation_error, 1e-9);
}

TEST_F(PipelineTest, AllPairsFailingThrows) {
  const int id = scene_->QueryIds()[0];
  const FileMatcher empty({});
  EXPECT_EQ(CodeOf([&] {
              LocalizeQuery(scene_->View(id).name, scene_->intrinsics(),
                            {scene_->model.images.begin()->second.name}, scene_->model, empty,
                            OraclePredictor(*scene_), LocalizeOptions());
            }),
            ErrorCode::kAllPairsFailed);
}

TEST(PoseFileTest, FormatAndRoundTrip) {
  EXPECT_EQ(FormatPoseLine("name", Pose::Identity()), "name 1 0 0 0 0 0 0");
  const Pose p(Eigen::Quaterniond(-0.5, 0.5, -0.5, 0.5), Eigen::Vector3d(0.125, -3, 1e-3));
  const std::string line = FormatPoseLine("q", p);
  EXPECT_EQ(line.substr(0, 4), "q 0.");  // qw >= 0

  LocalizationResult ok;
  ok.query_name = "b.png";
  ok.estimate = PoseEstimate{p, {}, 0, 0.0, 0};
  LocalizationResult bad;
  bad.query_name = "a.png";
  bad.failure = ErrorCode::kTooFewMatches;
  const TempDir dir("poses");
  const auto path = dir.path() / "poses.txt";
  WritePoses({ok, bad}, path);
  const auto back = ReadPoses(path);
  ASSERT_EQ(back.size(), 1u);
  const PoseError e = ComputePoseError(back.at("b.png"), p);
  EXPECT_LT(e.translation_error, 1e-9);
  EXPECT_LT(e.rotation_error, 1e-6);
  EXPECT_EQ(ReadFailures(path), std::vector<std::string>{"a.png"});
  EXPECT_TRUE(ReadFailures(dir.path() / "other.txt").empty());
}

}  // namespace
}  // namespace deviloc
