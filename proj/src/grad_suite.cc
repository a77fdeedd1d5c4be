#include "deviloc/grad_suite.h"

#include <functional>
#include <random>

#include "deviloc/diffkernel/grad_check.h"
#include "deviloc/diffkernel/layers.h"
#include "deviloc/diffkernel/ops.h"
#include "deviloc/kernels.h"
#include "deviloc/pin.h"
#include "deviloc/random.h"
#include "deviloc/training.h"

namespace deviloc {
namespace {

using dk::Matrix;
using dk::Var;

Matrix Uniform(int rows, int cols, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = u(rng);
  }
  return m;
}

// Values bounded away from zero in magnitude, for ops with a kink or pole
// there.
Matrix AwayFromZero(int rows, int cols, std::mt19937_64& rng) {
  Matrix m = Uniform(rows, cols, 0.2, 1.5, rng);
  std::bernoulli_distribution sign(0.5);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (sign(rng)) m(i) = -m(i);
  }
  return m;
}

class OpCase {
 public:
  explicit OpCase(uint64_t seed) : rng_(seed) {}

  std::mt19937_64& rng() { return rng_; }
  dk::ParameterSet& params() { return params_; }
  void Input(const std::string& name, Matrix value) { params_.Add(name, std::move(value)); }
  Var In(dk::Tape& tape, const std::string& name) { return tape.Param(params_.Get(name)); }

  // Contracts the op output with fixed random weights so every output
  // entry reaches the scalar with a different coefficient.
  GradSuiteEntry Check(const std::string& name,
                       const std::function<Var(dk::Tape&)>& op) {
    Matrix weights;
    auto fn = [&](dk::Tape& tape) {
      const Var out = op(tape);
      if (weights.rows() != out.rows() || weights.cols() != out.cols()) {
        weights = Uniform(static_cast<int>(out.rows()), static_cast<int>(out.cols()), -1.0,
                          1.0, rng_);
      }
      return dk::Sum(dk::Mul(out, tape.Constant(weights)));
    };
    dk::GradCheckConfig config;
    config.probes = 48;
    config.seed = rng_();
    const dk::GradCheckResult result = dk::GradCheck(fn, params_, config);
    return {name, result.max_rel_error, kOpGradTolerance,
            static_cast<int>(result.probes.size())};
  }

 private:
  std::mt19937_64 rng_;
  dk::ParameterSet params_;
};

void OpChecks(uint64_t seed, std::vector<GradSuiteEntry>* out) {
  int index = 0;
  auto run = [&](const std::string& name,
                 const std::function<void(OpCase&)>& setup,
                 const std::function<Var(OpCase&, dk::Tape&)>& op) {
    OpCase c(DeriveSeed({seed, 1, uint64_t(index++)}));
    setup(c);
    out->push_back(c.Check(name, [&](dk::Tape& t) { return op(c, t); }));
  };
  auto two = [](int ar, int ac, int br, int bc) {
    return [=](OpCase& c) {
      c.Input("a", Uniform(ar, ac, -1, 1, c.rng()));
      c.Input("b", Uniform(br, bc, -1, 1, c.rng()));
    };
  };
  auto one = [](int r, int cols) {
    return [=](OpCase& c) { c.Input("a", Uniform(r, cols, -2, 2, c.rng())); };
  };

  run("MatMul", two(5, 4, 4, 3),
      [](OpCase& c, dk::Tape& t) { return dk::MatMul(c.In(t, "a"), c.In(t, "b")); });
  run("MatMulTransposed", two(5, 4, 6, 4), [](OpCase& c, dk::Tape& t) {
    return dk::MatMulTransposed(c.In(t, "a"), c.In(t, "b"));
  });
  run("Add", two(4, 3, 4, 3),
      [](OpCase& c, dk::Tape& t) { return dk::Add(c.In(t, "a"), c.In(t, "b")); });
  run("Sub", two(4, 3, 4, 3),
      [](OpCase& c, dk::Tape& t) { return dk::Sub(c.In(t, "a"), c.In(t, "b")); });
  run("Mul", two(4, 3, 4, 3),
      [](OpCase& c, dk::Tape& t) { return dk::Mul(c.In(t, "a"), c.In(t, "b")); });
  run("AddRow", two(5, 3, 1, 3),
      [](OpCase& c, dk::Tape& t) { return dk::AddRow(c.In(t, "a"), c.In(t, "b")); });
  run("MulColumn", two(5, 3, 5, 1),
      [](OpCase& c, dk::Tape& t) { return dk::MulColumn(c.In(t, "a"), c.In(t, "b")); });
  run("DivColumn",
      [](OpCase& c) {
        c.Input("a", Uniform(5, 3, -1, 1, c.rng()));
        c.Input("b", AwayFromZero(5, 1, c.rng()));
      },
      [](OpCase& c, dk::Tape& t) { return dk::DivColumn(c.In(t, "a"), c.In(t, "b")); });
  run("Affine", one(4, 3),
      [](OpCase& c, dk::Tape& t) { return dk::Affine(c.In(t, "a"), -1.7, 0.3); });
  run("Gelu", one(4, 5), [](OpCase& c, dk::Tape& t) { return dk::Gelu(c.In(t, "a")); });
  run("Sigmoid", one(4, 5),
      [](OpCase& c, dk::Tape& t) { return dk::Sigmoid(c.In(t, "a")); });
  run("Abs", [](OpCase& c) { c.Input("a", AwayFromZero(4, 5, c.rng())); },
      [](OpCase& c, dk::Tape& t) { return dk::Abs(c.In(t, "a")); });
  run("Log", [](OpCase& c) { c.Input("a", Uniform(4, 5, 0.2, 3.0, c.rng())); },
      [](OpCase& c, dk::Tape& t) { return dk::Log(c.In(t, "a")); });
  run("Clamp",
      [](OpCase& c) {
        // Entries well inside and well outside [-0.5, 0.5].
        Matrix a = AwayFromZero(4, 5, c.rng());
        for (Eigen::Index i = 0; i < a.size(); ++i) {
          if (std::abs(a(i)) < 0.7) a(i) *= 0.5;
        }
        c.Input("a", a);
      },
      [](OpCase& c, dk::Tape& t) { return dk::Clamp(c.In(t, "a"), -0.5, 0.5); });
  run("LayerNormRows",
      [](OpCase& c) {
        c.Input("a", Uniform(4, 6, -2, 2, c.rng()));
        c.Input("gamma", Uniform(1, 6, 0.5, 1.5, c.rng()));
        c.Input("beta", Uniform(1, 6, -0.5, 0.5, c.rng()));
      },
      [](OpCase& c, dk::Tape& t) {
        return dk::LayerNormRows(c.In(t, "a"), c.In(t, "gamma"), c.In(t, "beta"));
      });
  run("SoftmaxRows", one(4, 6),
      [](OpCase& c, dk::Tape& t) { return dk::SoftmaxRows(c.In(t, "a")); });
  run("ConcatCols", two(4, 2, 4, 3), [](OpCase& c, dk::Tape& t) {
    const Var parts[] = {c.In(t, "a"), c.In(t, "b")};
    return dk::ConcatCols(parts);
  });
  run("ConcatRows", two(2, 3, 4, 3), [](OpCase& c, dk::Tape& t) {
    const Var parts[] = {c.In(t, "a"), c.In(t, "b"), c.In(t, "a")};
    return dk::ConcatRows(parts);
  });
  run("SliceCols", one(4, 7),
      [](OpCase& c, dk::Tape& t) { return dk::SliceCols(c.In(t, "a"), 2, 3); });
  run("GatherRows", one(5, 3), [](OpCase& c, dk::Tape& t) {
    const int index[] = {4, 0, 2, 0, 3};
    return dk::GatherRows(c.In(t, "a"), index);
  });
  run("SampleBilinear", one(4 * 5, 3), [](OpCase& c, dk::Tape& t) {
    const Point2D kpts[] = {{3.0, 5.0}, {17.5, 9.25}, {39.0, 31.0}, {-2.0, 12.0}};
    const auto taps = kernels::ComputeBilinearTaps(4, 5, 8.0, kpts);
    return dk::SampleBilinear(c.In(t, "a"), taps);
  });
  run("SegmentMean", one(6, 3), [](OpCase& c, dk::Tape& t) {
    const int segment[] = {1, 0, 1, 2, 1, 0};
    return dk::SegmentMean(c.In(t, "a"), segment, 3);
  });
  run("Sum", one(3, 4), [](OpCase& c, dk::Tape& t) { return dk::Sum(c.In(t, "a")); });
  run("Mean", one(3, 4), [](OpCase& c, dk::Tape& t) { return dk::Mean(c.In(t, "a")); });
  run("SumRows", one(3, 4),
      [](OpCase& c, dk::Tape& t) { return dk::SumRows(c.In(t, "a")); });

  // Layers, with their own parameters probed alongside the input.
  {
    OpCase c(DeriveSeed({seed, 2, 0}));
    c.Input("x", Uniform(5, 6, -1, 1, c.rng()));
    dk::Mlp mlp(c.params(), "mlp", {6, 8, 4}, c.rng());
    out->push_back(c.Check("Mlp", [&](dk::Tape& t) {
      return mlp(dk::Context{&t, true}, c.In(t, "x"));
    }));
  }
  {
    OpCase c(DeriveSeed({seed, 2, 1}));
    c.Input("x", Uniform(5, 8, -1, 1, c.rng()));
    c.Input("kv", Uniform(7, 8, -1, 1, c.rng()));
    dk::AttentionBlock block(c.params(), "att", 8, 2, c.rng());
    out->push_back(c.Check("AttentionBlock", [&](dk::Tape& t) {
      return block(dk::Context{&t, true}, c.In(t, "x"), c.In(t, "kv"));
    }));
  }
}

GradSuiteEntry FullGraphCheck(uint64_t seed) {
  SyntheticSceneConfig scene_config;
  scene_config.num_points = 160;
  scene_config.num_cameras = 6;
  scene_config.num_queries = 1;
  scene_config.width = 160;
  scene_config.height = 120;
  scene_config.focal = 125.0;
  scene_config.seed = seed;
  const SyntheticScene scene = GenerateSyntheticScene(scene_config);

  SampleConfig sample_config;
  sample_config.num_refs = 2;
  sample_config.match.max_matches = 12;
  sample_config.match.grid_step = 8;
  sample_config.match.feature_channels = 4;
  sample_config.match.feature_stride = 16.0;
  sample_config.parallel = false;
  const std::vector<TrainingSample> samples = BuildTrainingSamples(scene, sample_config);
  if (samples.empty()) return {"PIN+CPA+loss", 1e300, kGraphGradTolerance, 0};

  PinConfig pin;
  pin.dim = 8;
  pin.feature_channels = 4;
  pin.heads = 2;
  pin.visual_pairs = 2;
  pin.max_observed = 16;
  pin.seed = seed;
  PinModel model(pin);

  TrainingConfig training;
  training.s = 4.0;
  auto fn = [&](dk::Tape& tape) {
    return QueryLoss(dk::Context{&tape, true}, model, samples.front(), training, nullptr);
  };
  dk::GradCheckConfig config;
  config.probes = 96;
  config.seed = DeriveSeed({seed, 3});
  const dk::GradCheckResult result = dk::GradCheck(fn, model.params(), config);
  return {"PIN+CPA+loss", result.max_rel_error, kGraphGradTolerance,
          static_cast<int>(result.probes.size())};
}

}  // namespace

std::vector<GradSuiteEntry> RunGradCheckSuite(uint64_t seed) {
  std::vector<GradSuiteEntry> out;
  OpChecks(seed, &out);
  out.push_back(FullGraphCheck(seed));
  return out;
}

}  // namespace deviloc
