// Serial reference vs OpenMP version of each data-parallel kernel.

#include <random>

#include <benchmark/benchmark.h>

#include "deviloc/kernels.h"
#include "deviloc/synthetic_scene.h"

namespace deviloc {
namespace {

std::vector<Point2D> RandomKeypoints(int n, double w, double h) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> x(0.0, w), y(0.0, h);
  std::vector<Point2D> out(n);
  for (Point2D& p : out) p = {x(rng), y(rng)};
  return out;
}

template <bool kParallel>
void BM_GatherBilinear(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const RowMatrix grid = RowMatrix::Random(60 * 80, 64);
  const auto taps = kernels::ComputeBilinearTaps(60, 80, 8.0, RandomKeypoints(n, 640, 480));
  RowMatrix out;
  for (auto _ : state) {
    if (kParallel) {
      kernels::GatherBilinearParallel(grid, taps, &out);
    } else {
      kernels::GatherBilinearSerial(grid, taps, &out);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

template <bool kParallel>
void BM_ReprojectionErrors(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const CameraIntrinsics k{500, 500, 320, 240, 640, 480};
  const Pose pose(AngleAxisQuaternion({0, 1, 0}, 0.1), Eigen::Vector3d(0, 0, 10));
  const std::vector<Point2D> pixels = RandomKeypoints(n, 640, 480);
  std::vector<Point3D> points(n);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (Point3D& p : points) p = {u(rng), u(rng), u(rng)};
  std::vector<double> errors;
  for (auto _ : state) {
    if (kParallel) {
      kernels::SquaredReprojectionErrorsParallel(pose, k, pixels, points, &errors);
    } else {
      kernels::SquaredReprojectionErrorsSerial(pose, k, pixels, points, &errors);
    }
    benchmark::DoNotOptimize(errors.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

template <bool kParallel>
void BM_Quantize(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const std::vector<Point2D> keypoints = RandomKeypoints(n, 640, 480);
  std::vector<Point2D> out;
  for (auto _ : state) {
    if (kParallel) {
      kernels::QuantizeParallel(keypoints, 4.0, &out);
    } else {
      kernels::QuantizeSerial(keypoints, 4.0, &out);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

template <bool kParallel>
void BM_RenderDepthMap(benchmark::State& state) {
  SyntheticSceneConfig config;
  config.num_points = 200;
  config.num_cameras = 2;
  config.width = 320;
  config.height = 240;
  config.focal = 250.0;
  const SyntheticScene scene = GenerateSyntheticScene(config);
  const int id = scene.DatabaseIds().front();
  for (auto _ : state) benchmark::DoNotOptimize(scene.RenderDepthMap(id, kParallel));
  state.SetItemsProcessed(state.iterations() * config.width * config.height);
}

BENCHMARK(BM_GatherBilinear<false>)->Arg(1 << 12)->Arg(1 << 16);
BENCHMARK(BM_GatherBilinear<true>)->Arg(1 << 12)->Arg(1 << 16);
BENCHMARK(BM_ReprojectionErrors<false>)->Arg(1 << 12)->Arg(1 << 18);
BENCHMARK(BM_ReprojectionErrors<true>)->Arg(1 << 12)->Arg(1 << 18);
BENCHMARK(BM_Quantize<false>)->Arg(1 << 12)->Arg(1 << 18);
BENCHMARK(BM_Quantize<true>)->Arg(1 << 12)->Arg(1 << 18);
BENCHMARK(BM_RenderDepthMap<false>);
BENCHMARK(BM_RenderDepthMap<true>);

}  // namespace
}  // namespace deviloc

BENCHMARK_MAIN();
