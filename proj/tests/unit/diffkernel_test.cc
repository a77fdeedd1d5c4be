#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "deviloc/diffkernel/checkpoint.h"
#include "deviloc/diffkernel/grad_check.h"
#include "deviloc/diffkernel/layers.h"
#include "deviloc/diffkernel/ops.h"
#include "deviloc/diffkernel/optimizer.h"
#include "deviloc/error.h"
#include "deviloc/grad_suite.h"
#include "test_util.h"

namespace deviloc::dk {
namespace {

Matrix Random(int rows, int cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = u(rng);
  return m;
}

TEST(TapeTest, ForwardValuesOfBasicOps) {
  Tape t;
  Matrix a(2, 2), b(2, 2);
  a << 1, 2, 3, 4;
  b << 5, 6, 7, 8;
  const Var va = t.Constant(a), vb = t.Constant(b);
  EXPECT_EQ(MatMul(va, vb).value(), a * b);
  EXPECT_EQ(MatMulTransposed(va, vb).value(), a * b.transpose());
  EXPECT_EQ(Mul(va, vb).value(), a.cwiseProduct(b));
  EXPECT_EQ(Sum(va).scalar(), 10.0);
  EXPECT_EQ(Mean(va).scalar(), 2.5);
  EXPECT_EQ(Affine(va, 2.0, 1.0).value()(1, 1), 9.0);
  EXPECT_NEAR(Sigmoid(t.Constant(Matrix::Zero(1, 1))).scalar(), 0.5, 0);
  const Matrix soft = SoftmaxRows(va).value();
  EXPECT_NEAR(soft.row(0).sum(), 1.0, 1e-15);
  EXPECT_NEAR(soft(0, 1) / soft(0, 0), std::exp(1.0), 1e-12);
}

TEST(TapeTest, SharedParameterAccumulatesOneGradient) {
  ParameterSet params;
  Parameter& p = params.Add("p", Matrix::Constant(1, 1, 3.0));
  Tape t;
  const Var x = t.Param(p);
  const Var y = Add(Mul(x, x), t.Param(p));  // x^2 + x
  params.ZeroGrad();
  t.Backward(y);
  EXPECT_EQ(p.grad(0, 0), 7.0);
}

TEST(GradCheckTest, QuadraticHasAnalyticGradient) {
  std::mt19937_64 rng(1);
  ParameterSet params;
  params.Add("theta", Random(4, 3, rng));
  auto fn = [&](Tape& t) {
    const Var x = t.Param(params.Get("theta"));
    return Affine(Sum(Mul(x, x)), 0.5, 0.0);
  };
  GradCheckConfig config;
  config.probes = 1000;
  const GradCheckResult r = GradCheck(fn, params, config);
  EXPECT_EQ(r.probes.size(), 12u);
  // Central differences are exact on a quadratic, so only rounding of f
  // remains: a few ulps of f divided by 2h.
  const double f = 0.5 * params.Get("theta").value.squaredNorm();
  const double rounding = 8.0 * std::numeric_limits<double>::epsilon() * f /
                          (2.0 * config.epsilon);
  for (const GradCheckProbe& probe : r.probes) {
    EXPECT_NEAR(probe.analytic, params.Get("theta").value(probe.index), 1e-15);
    EXPECT_NEAR(probe.numeric, probe.analytic, rounding);
  }
}

TEST(GradCheckTest, ConstantFunctionHasZeroGradient) {
  ParameterSet params;
  params.Add("theta", Matrix::Ones(2, 2));
  auto fn = [&](Tape& t) {
    t.Param(params.Get("theta"));
    return t.Constant(Matrix::Constant(1, 1, 4.0));
  };
  const GradCheckResult r = GradCheck(fn, params);
  EXPECT_EQ(r.max_rel_error, 0.0);
  for (const GradCheckProbe& probe : r.probes) EXPECT_EQ(probe.analytic, 0.0);
}

TEST(GradCheckTest, EveryOpAndTheFullGraphPass) {
  for (const GradSuiteEntry& e : RunGradCheckSuite(0)) {
    EXPECT_TRUE(e.passed()) << e.name << " " << e.max_rel_error;
    EXPECT_GT(e.probes, 0) << e.name;
  }
}

TEST(MlpTest, IdentityWeightsAndZeroWeights) {
  std::mt19937_64 rng(2);
  ParameterSet params;
  Mlp mlp(params, "mlp", {3, 3}, rng);
  params.Get("mlp.0.weight").value = Matrix::Identity(3, 3);
  params.Get("mlp.0.bias").value.setZero();
  Tape t;
  const Context ctx{&t, false};
  const Matrix x = Random(5, 3, rng);
  EXPECT_EQ(mlp(ctx, t.Constant(x)).value(), x);

  params.Get("mlp.0.weight").value.setZero();
  params.Get("mlp.0.bias").value << 1, -2, 0.5;
  const Matrix y = mlp(ctx, t.Constant(x)).value();
  for (int r = 0; r < 5; ++r) EXPECT_EQ(y.row(r), params.Get("mlp.0.bias").value);
}

TEST(AttentionTest, SingleKeyGivesProjectedValueForEveryQuery) {
  std::mt19937_64 rng(3);
  ParameterSet params;
  AttentionBlock block(params, "att", 8, 2, rng);
  // Drop the feed-forward branch so the attention term is isolated.
  for (auto& [name, p] : params) {
    if (name.find(".ff.") != std::string::npos) p.value.setZero();
  }
  Tape t;
  const Context ctx{&t, false};
  const Matrix x = Random(4, 8, rng);
  const Var kv = t.Constant(Random(1, 8, rng));
  const Matrix out = block(ctx, t.Constant(x), kv).value();
  const Matrix delta = out - x;
  for (int r = 1; r < 4; ++r) EXPECT_LT((delta.row(r) - delta.row(0)).norm(), 1e-12);
}

TEST(AttentionTest, KeyPermutationInvarianceAndSelfAttentionEquivariance) {
  std::mt19937_64 rng(4);
  ParameterSet params;
  AttentionBlock block(params, "att", 8, 4, rng);
  Tape t;
  const Context ctx{&t, false};
  const Matrix x = Random(5, 8, rng);
  const Matrix kv = Random(7, 8, rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(7);
  perm.setIdentity();
  std::shuffle(perm.indices().data(), perm.indices().data() + 7, rng);
  const Matrix a = block(ctx, t.Constant(x), t.Constant(kv)).value();
  const Matrix b = block(ctx, t.Constant(x), t.Constant(perm * kv)).value();
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);

  Eigen::PermutationMatrix<Eigen::Dynamic> p5(5);
  p5.setIdentity();
  std::shuffle(p5.indices().data(), p5.indices().data() + 5, rng);
  const Matrix s = block(ctx, t.Constant(x), t.Constant(x)).value();
  const Matrix sp = block(ctx, t.Constant(p5 * x), t.Constant(p5 * x)).value();
  EXPECT_LT((p5 * s - sp).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(AttentionTest, EmptyKeysAndBadWidthRejected) {
  std::mt19937_64 rng(5);
  ParameterSet params;
  AttentionBlock block(params, "att", 4, 2, rng);
  Tape t;
  const Context ctx{&t, false};
  try {
    block(ctx, t.Constant(Matrix::Ones(2, 4)), t.Constant(Matrix(0, 4)));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyKeySet);
  }
  EXPECT_THROW(block(ctx, t.Constant(Matrix::Ones(2, 3)), t.Constant(Matrix::Ones(2, 3))),
               Error);
  EXPECT_THROW(AttentionBlock(params, "bad", 6, 4, rng), Error);
}

TEST(AttentionTest, ForwardIsBitDeterministic) {
  std::mt19937_64 rng(6);
  ParameterSet params;
  AttentionBlock block(params, "att", 8, 2, rng);
  const Matrix x = Random(6, 8, rng);
  Tape t1, t2;
  const Matrix a = block(Context{&t1, false}, t1.Constant(x), t1.Constant(x)).value();
  const Matrix b = block(Context{&t2, true}, t2.Constant(x), t2.Constant(x)).value();
  EXPECT_EQ(a, b);
}

TEST(AdamWTest, ZeroGradientLeavesParametersUnchanged) {
  ParameterSet params;
  params.Add("w", Matrix::Constant(2, 2, 1.5));
  params.ZeroGrad();
  AdamW opt;
  for (int i = 0; i < 10; ++i) opt.Step(params);
  EXPECT_EQ(params.Get("w").value, Matrix::Constant(2, 2, 1.5));
}

TEST(AdamWTest, ZeroGradientWithDecayScalesParameters) {
  ParameterSet params;
  params.Add("w", Matrix::Constant(1, 3, 2.0));
  params.ZeroGrad();
  AdamW opt({1e-3, 0.9, 0.999, 1e-8, 0.01});
  opt.Step(params);
  EXPECT_NEAR(params.Get("w").value(0, 0), 2.0 * (1.0 - 1e-3 * 0.01), 1e-15);
}

TEST(AdamWTest, MissingGradientRejected) {
  ParameterSet params;
  params.Add("w", Matrix::Ones(1, 1));
  AdamW opt;
  try {
    opt.Step(params);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoGradient);
  }
}

// Scalar descent on f(theta) = theta^2 from theta = 1, lr = 1e-3, checked
// against an independent run of the textbook recurrence.
TEST(AdamWTest, ScalarDescentFollowsTheRecurrence) {
  const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double theta = 1.0, m = 0.0, v = 0.0;
  std::vector<double> oracle;
  int first_below = -1;
  for (int t = 1; t <= 2000; ++t) {
    const double g = 2.0 * theta;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    theta -= lr * mh / (std::sqrt(vh) + eps);
    oracle.push_back(theta);
    if (first_below < 0 && std::abs(theta) < 0.1) first_below = t;
  }

  ParameterSet params;
  Parameter& p = params.Add("theta", Matrix::Ones(1, 1));
  AdamW opt({lr, b1, b2, eps, 0.0});
  int library_below = -1;
  for (int t = 1; t <= 2000; ++t) {
    Tape tape;
    const Var x = tape.Param(p);
    params.ZeroGrad();
    tape.Backward(Mul(x, x));
    opt.Step(params);
    ASSERT_NEAR(p.value(0, 0), oracle[t - 1], 1e-12) << "step " << t;
    if (library_below < 0 && std::abs(p.value(0, 0)) < 0.1) library_below = t;
  }
  EXPECT_EQ(library_below, first_below);
  // Each Adam step moves theta by at most about lr, so 500 steps cannot
  // cover the distance from 1 to 0.1; the recurrence needs 1452.
  EXPECT_EQ(first_below, 1452);
  EXPECT_GT(oracle[499], 0.1);
}

TEST(CheckpointTest, RoundTripsBitExactWithManifest) {
  std::mt19937_64 rng(8);
  ParameterSet params;
  params.Add("a.weight", Random(3, 4, rng));
  params.Add("b", Random(1, 7, rng));
  const TempDir dir("ckpt");
  const auto path = dir.path() / "model.ckpt";
  SaveCheckpointWithManifest(params, "{\"dim\":4}", path);
  const Checkpoint loaded = LoadCheckpoint(path);
  EXPECT_EQ(loaded.config_json, "{\"dim\":4}");
  ASSERT_EQ(loaded.params.size(), 2u);
  EXPECT_EQ(loaded.params.Get("a.weight").value, params.Get("a.weight").value);
  EXPECT_EQ(loaded.params.Get("b").value, params.Get("b").value);
  const std::string manifest = ReadFile(dir.path() / "model.ckpt.manifest");
  EXPECT_EQ(manifest.rfind("checkpoint ", 0), 0u);
  EXPECT_NE(manifest.find("a.weight 3 4 "), std::string::npos);

  ParameterSet target;
  target.Add("a.weight", Matrix::Zero(3, 4));
  target.Add("b", Matrix::Zero(1, 7));
  LoadInto(loaded.params, &target);
  EXPECT_EQ(target.Get("b").value, params.Get("b").value);
  ParameterSet wrong;
  wrong.Add("a.weight", Matrix::Zero(4, 3));
  wrong.Add("b", Matrix::Zero(1, 7));
  EXPECT_THROW(LoadInto(loaded.params, &wrong), Error);
}

TEST(CheckpointTest, CorruptFileRejected) {
  const TempDir dir("ckpt_bad");
  WriteFile(dir.path() / "x.ckpt", "not a checkpoint");
  EXPECT_THROW(LoadCheckpoint(dir.path() / "x.ckpt"), Error);
}

}  // namespace
}  // namespace deviloc::dk
