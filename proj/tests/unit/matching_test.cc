#include <random>

#include <gtest/gtest.h>

#include "deviloc/error.h"
#include "deviloc/kernels.h"
#include "deviloc/matching.h"
#include "test_util.h"

namespace deviloc {
namespace {

// 3 x 4 grid, stride 8, channel values encode the cell.
FeatureMap TestMap() {
  FeatureMap fm;
  fm.h = 3;
  fm.w = 4;
  fm.c = 2;
  fm.stride = 8.0;
  fm.data.resize(12, 2);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 4; ++x) {
      fm.data(y * 4 + x, 0) = 10.0 * y + x;
      fm.data(y * 4 + x, 1) = std::sin(1.0 + y * 4 + x);
    }
  }
  return fm;
}

// Independent formula: grid coordinate g = p / stride - 0.5, clamped into
// [0, size - 1], then the textbook four-term interpolation.
Eigen::RowVectorXd DirectBilinear(const FeatureMap& fm, const Point2D& p) {
  const double gx = std::clamp(p.x() / fm.stride - 0.5, 0.0, double(fm.w - 1));
  const double gy = std::clamp(p.y() / fm.stride - 0.5, 0.0, double(fm.h - 1));
  const int x0 = std::min(int(std::floor(gx)), fm.w - 1);
  const int y0 = std::min(int(std::floor(gy)), fm.h - 1);
  const int x1 = std::min(x0 + 1, fm.w - 1);
  const int y1 = std::min(y0 + 1, fm.h - 1);
  const double ax = gx - x0, ay = gy - y0;
  auto cell = [&](int x, int y) { return fm.data.row(y * fm.w + x); };
  return (1 - ax) * (1 - ay) * cell(x0, y0) + ax * (1 - ay) * cell(x1, y0) +
         (1 - ax) * ay * cell(x0, y1) + ax * ay * cell(x1, y1);
}

TEST(BilinearSampleTest, CellCenterReturnsCell) {
  const FeatureMap fm = TestMap();
  const Point2D kp[] = {{4.0, 4.0}, {12.0, 20.0}, {28.0, 12.0}};
  const RowMatrix out = BilinearSample(fm, kp);
  EXPECT_EQ(out.row(0), fm.data.row(0));
  EXPECT_EQ(out.row(1), fm.data.row(2 * 4 + 1));
  EXPECT_EQ(out.row(2), fm.data.row(1 * 4 + 3));
}

TEST(BilinearSampleTest, MidpointOfFourCentersIsTheirMean) {
  const FeatureMap fm = TestMap();
  const Point2D kp[] = {{8.0, 8.0}};
  const RowMatrix out = BilinearSample(fm, kp);
  const Eigen::RowVectorXd mean =
      0.25 * (fm.data.row(0) + fm.data.row(1) + fm.data.row(4) + fm.data.row(5));
  EXPECT_LT((out.row(0) - mean).norm(), 1e-15);
}

TEST(BilinearSampleTest, MatchesDirectInterpolation) {
  const FeatureMap fm = TestMap();
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ux(-6.0, 38.0), uy(-6.0, 30.0);
  std::vector<Point2D> kp;
  for (int i = 0; i < 500; ++i) kp.emplace_back(ux(rng), uy(rng));
  const RowMatrix out = BilinearSample(fm, kp);
  const RowMatrix par = BilinearSample(fm, kp, true);
  for (size_t i = 0; i < kp.size(); ++i) {
    EXPECT_LT((out.row(i) - DirectBilinear(fm, kp[i])).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(out.row(i), par.row(i));
  }
}

TEST(BilinearSampleTest, LinearAlongAnAxisAndClampedAtBorder) {
  const FeatureMap fm = TestMap();
  const Point2D kp[] = {{4.0, 12.0}, {7.0, 12.0}, {12.0, 12.0}, {-20.0, 4.0}, {100.0, 100.0}};
  const RowMatrix out = BilinearSample(fm, kp);
  const Eigen::RowVectorXd expected = out.row(0) + (3.0 / 8.0) * (out.row(2) - out.row(0));
  EXPECT_LT((out.row(1) - expected).norm(), 1e-12);
  EXPECT_EQ(out.row(3), fm.data.row(0));
  EXPECT_EQ(out.row(4), fm.data.row(11));
}

TEST(KernelsTest, SerialAndParallelAgreeBitForBit) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  RowMatrix grid(30 * 40, 8);
  for (Eigen::Index i = 0; i < grid.size(); ++i) grid.data()[i] = n(rng);
  std::vector<Point2D> kp;
  std::vector<Point3D> pts;
  for (int i = 0; i < 3000; ++i) {
    kp.emplace_back(160 + 100 * n(rng), 120 + 80 * n(rng));
    pts.emplace_back(n(rng), n(rng), 5 + n(rng));
  }
  const auto taps = kernels::ComputeBilinearTaps(30, 40, 8.0, kp);
  RowMatrix a, b;
  kernels::GatherBilinearSerial(grid, taps, &a);
  kernels::GatherBilinearParallel(grid, taps, &b);
  EXPECT_EQ(a, b);

  CameraIntrinsics k{300, 300, 160, 120, 320, 240};
  const Pose pose(AngleAxisQuaternion({0, 1, 0}, 0.1), Eigen::Vector3d(0.1, 0, 0));
  std::vector<double> ea, eb;
  kernels::SquaredReprojectionErrorsSerial(pose, k, kp, pts, &ea);
  kernels::SquaredReprojectionErrorsParallel(pose, k, kp, pts, &eb);
  EXPECT_EQ(ea, eb);
  for (size_t i = 0; i < kp.size(); i += 97) {
    const Point3D c = pose.SceneToCam(pts[i]);
    if (c.z() > 0) EXPECT_NEAR(ea[i], (Project(c, k) - kp[i]).squaredNorm(), 1e-9);
  }

  std::vector<Point2D> qa, qb;
  kernels::QuantizeSerial(kp, 4.0, &qa);
  kernels::QuantizeParallel(kp, 4.0, &qb);
  EXPECT_EQ(qa, qb);
}

TEST(KernelsTest, BehindCameraGivesInfiniteError) {
  CameraIntrinsics k{100, 100, 50, 50, 100, 100};
  const Point2D kp[] = {{50, 50}};
  const Point3D pts[] = {{0, 0, -1}};
  std::vector<double> e;
  kernels::SquaredReprojectionErrorsSerial(Pose::Identity(), k, kp, pts, &e);
  EXPECT_TRUE(std::isinf(e[0]));
}

SyntheticScene MatchScene(uint64_t seed) {
  SyntheticSceneConfig c;
  c.num_points = 300;
  c.num_cameras = 6;
  c.num_queries = 2;
  c.width = 320;
  c.height = 240;
  c.focal = 250.0;
  c.seed = seed;
  return GenerateSyntheticScene(c);
}

SyntheticMatchConfig SmallMatchConfig() {
  SyntheticMatchConfig m;
  m.feature_channels = 4;
  m.feature_stride = 16.0;
  return m;
}

TEST(SyntheticMatchTest, NoiselessMatchesAreExactCorrespondences) {
  const SyntheticScene scene = MatchScene(1);
  const int q = scene.QueryIds().front();
  const auto refs = CovisibleReferences(scene, q, 2);
  ASSERT_FALSE(refs.empty());
  const int r = refs.front().first;
  const MatchSet m = SyntheticMatch(scene, q, r, SmallMatchConfig());
  ASSERT_GT(m.size(), 20u);
  ASSERT_EQ(m.is_outlier.size(), m.size());
  const Pose& ref_pose = scene.View(r).pose;
  for (size_t i = 0; i < m.size(); ++i) {
    EXPECT_FALSE(m.is_outlier[i]);
    const auto surface = scene.SurfacePoint(q, m.query_kpts[i]);
    ASSERT_TRUE(surface.has_value());
    const Point2D reproj = Project(ref_pose.SceneToCam(*surface), scene.intrinsics());
    EXPECT_LT((reproj - m.ref_kpts[i]).norm(), 1e-9);
  }
  EXPECT_EQ(m.query_name, scene.View(q).name);
  EXPECT_EQ(m.ref_name, scene.View(r).name);
}

TEST(SyntheticMatchTest, ExactOutlierFractionAndDeterminism) {
  const SyntheticScene scene = MatchScene(2);
  const int q = scene.QueryIds().front();
  const int r = CovisibleReferences(scene, q, 1).front().first;
  SyntheticMatchConfig config = SmallMatchConfig();
  config.max_matches = 100;
  config.grid_step = 8;
  config.outlier_fraction = 0.2;
  config.pixel_noise = 1.0;
  const MatchSet a = SyntheticMatch(scene, q, r, config);
  ASSERT_EQ(a.size(), 100u);
  EXPECT_EQ(std::count(a.is_outlier.begin(), a.is_outlier.end(), true), 20);
  const MatchSet b = SyntheticMatch(scene, q, r, config);
  EXPECT_EQ(a.query_kpts, b.query_kpts);
  EXPECT_EQ(a.ref_kpts, b.ref_kpts);
  EXPECT_EQ(a.is_outlier, b.is_outlier);
}

TEST(SyntheticMatchTest, CovisibleReferencesMatchBruteForce) {
  const SyntheticScene scene = MatchScene(3);
  for (const int q : scene.QueryIds()) {
    std::vector<std::pair<int, int>> oracle;
    for (const int id : scene.DatabaseIds()) {
      int count = 0;
      for (const Observation& obs : scene.model.images.at(id).observations) {
        if (scene.IsVisible(q, scene.model.points3d.at(obs.point3d_id).xyz)) ++count;
      }
      if (count > 0) oracle.emplace_back(id, count);
    }
    std::stable_sort(oracle.begin(), oracle.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    oracle.resize(std::min<size_t>(oracle.size(), 3));
    EXPECT_EQ(CovisibleReferences(scene, q, 3), oracle);
  }
}

TEST(MatchDumpTest, LoadsThreeLineBlock) {
  const TempDir dir("matches");
  WriteFile(dir.path() / "m.txt",
            "# one pair\n"
            "q.png r.png 3 1 2 1 8\n"
            "1 2 3 4\n"
            "5 6 7 8\n"
            "9.5 10 11 12\n"
            "0.5\n"
            "-1.5\n");
  const auto sets = LoadMatches(dir.path() / "m.txt");
  ASSERT_EQ(sets.size(), 1u);
  EXPECT_EQ(sets[0].size(), 3u);
  EXPECT_EQ(sets[0].query_kpts[2], Point2D(9.5, 10));
  EXPECT_EQ(sets[0].ref_kpts[1], Point2D(7, 8));
  EXPECT_EQ(sets[0].feature_map->w, 2);
  EXPECT_EQ(sets[0].feature_map->data(1, 0), -1.5);
}

TEST(MatchDumpTest, EmptyMatchListAccepted) {
  const TempDir dir("matches_empty");
  WriteFile(dir.path() / "m.txt", "q.png r.png 0 2 2 3 8\nCONSTANT 0\n");
  const auto sets = LoadMatches(dir.path() / "m.txt");
  ASSERT_EQ(sets.size(), 1u);
  EXPECT_EQ(sets[0].size(), 0u);
  EXPECT_EQ(sets[0].feature_map->c, 3);
  EXPECT_EQ(sets[0].feature_map->constant_value, 0.0);
}

TEST(MatchDumpTest, MalformedLineReportsLineNumber) {
  const TempDir dir("matches_bad");
  WriteFile(dir.path() / "m.txt", "q.png r.png 2 1 1 1 8\n1 2 3 4\n5 6 x 8\n0\n");
  try {
    LoadMatches(dir.path() / "m.txt");
    FAIL() << "expected an error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3);
  }
}

TEST(MatchDumpTest, DumpLoadDumpIsByteIdentical) {
  const SyntheticScene scene = MatchScene(4);
  const int q = scene.QueryIds().front();
  SyntheticMatchConfig config = SmallMatchConfig();
  config.pixel_noise = 0.7;
  config.outlier_fraction = 0.1;
  std::vector<MatchSet> sets;
  for (const auto& [r, count] : CovisibleReferences(scene, q, 2)) {
    sets.push_back(SyntheticMatch(scene, q, r, config,
                                  SyntheticFeatureMap(scene, r, config, false)));
  }
  const TempDir dir("matches_rt");
  DumpMatches(sets, dir.path() / "a.txt");
  const auto loaded = LoadMatches(dir.path() / "a.txt");
  ASSERT_EQ(loaded.size(), sets.size());
  for (size_t i = 0; i < sets.size(); ++i) {
    EXPECT_EQ(loaded[i].query_kpts, sets[i].query_kpts);
    EXPECT_EQ(loaded[i].ref_kpts, sets[i].ref_kpts);
    EXPECT_EQ(loaded[i].feature_map->data, sets[i].feature_map->data);
  }
  DumpMatches(loaded, dir.path() / "b.txt");
  EXPECT_EQ(ReadFile(dir.path() / "a.txt"), ReadFile(dir.path() / "b.txt"));
}

TEST(FileMatcherTest, MissingPairIsNoOverlap) {
  MatchSet m;
  m.query_name = "q.png";
  m.ref_name = "r.png";
  m.feature_map = std::make_shared<FeatureMap>(FeatureMap::Constant(1, 1, 1, 8.0, 0.0));
  FileMatcher matcher({m});
  Image r;
  r.name = "r.png";
  EXPECT_EQ(matcher.Match("q.png", r).ref_name, "r.png");
  r.name = "other.png";
  try {
    matcher.Match("q.png", r);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoOverlap);
  }
}

}  // namespace
}  // namespace deviloc
