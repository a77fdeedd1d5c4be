#include "deviloc/diffkernel/layers.h"

#include <cmath>

#include "deviloc/error.h"

namespace deviloc::dk {

Matrix XavierUniform(int fan_in, int fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix w(fan_in, fan_out);
  // Fill row by row so the draw order does not depend on storage order.
  for (int i = 0; i < fan_in; ++i) {
    for (int j = 0; j < fan_out; ++j) w(i, j) = dist(rng);
  }
  return w;
}

Linear::Linear(ParameterSet& params, const std::string& prefix, int in, int out,
               std::mt19937_64& rng)
    : in_(in), out_(out) {
  if (in < 1 || out < 1) Throw(ErrorCode::kConfigError, "Linear needs positive sizes");
  weight_ = &params.Add(prefix + ".weight", XavierUniform(in, out, rng));
  bias_ = &params.Add(prefix + ".bias", Matrix::Zero(1, out));
}

Var Linear::operator()(const Context& ctx, Var x) const {
  if (x.cols() != in_) {
    Throw(ErrorCode::kShapeMismatch, weight_->name + ": input has " +
                                         std::to_string(x.cols()) +
                                         " columns, expected " + std::to_string(in_));
  }
  return AddRow(MatMul(x, ctx.Bind(*weight_)), ctx.Bind(*bias_));
}

Mlp::Mlp(ParameterSet& params, const std::string& prefix,
         const std::vector<int>& dims, std::mt19937_64& rng) {
  if (dims.size() < 2) Throw(ErrorCode::kConfigError, "Mlp needs >= 2 dims");
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    layers_.emplace_back(params, prefix + "." + std::to_string(i), dims[i],
                         dims[i + 1], rng);
  }
}

Var Mlp::operator()(const Context& ctx, Var x) const {
  for (size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i](ctx, x);
    if (i + 1 < layers_.size()) x = Gelu(x);
  }
  return x;
}

LayerNorm::LayerNorm(ParameterSet& params, const std::string& prefix, int dim) {
  gamma_ = &params.Add(prefix + ".gamma", Matrix::Ones(1, dim));
  beta_ = &params.Add(prefix + ".beta", Matrix::Zero(1, dim));
}

Var LayerNorm::operator()(const Context& ctx, Var x) const {
  return LayerNormRows(x, ctx.Bind(*gamma_), ctx.Bind(*beta_));
}

AttentionBlock::AttentionBlock(ParameterSet& params, const std::string& prefix,
                               int dim, int heads, std::mt19937_64& rng,
                               int ff_expansion)
    : dim_(dim), heads_(heads) {
  if (heads < 1 || dim % heads != 0) {
    Throw(ErrorCode::kConfigError, "attention dim " + std::to_string(dim) +
                                       " not divisible by " +
                                       std::to_string(heads) + " heads");
  }
  norm_q_ = LayerNorm(params, prefix + ".norm_q", dim);
  norm_kv_ = LayerNorm(params, prefix + ".norm_kv", dim);
  norm_ff_ = LayerNorm(params, prefix + ".norm_ff", dim);
  wq_ = Linear(params, prefix + ".q", dim, dim, rng);
  wk_ = Linear(params, prefix + ".k", dim, dim, rng);
  wv_ = Linear(params, prefix + ".v", dim, dim, rng);
  wo_ = Linear(params, prefix + ".out", dim, dim, rng);
  ff_ = Mlp(params, prefix + ".ff", {dim, ff_expansion * dim, dim}, rng);
}

Var AttentionBlock::operator()(const Context& ctx, Var x, Var kv) const {
  if (kv.rows() == 0) Throw(ErrorCode::kEmptyKeySet, "attention over zero keys");
  if (x.cols() != dim_ || kv.cols() != dim_) {
    Throw(ErrorCode::kShapeMismatch,
          "attention block of width " + std::to_string(dim_) + " got " +
              std::to_string(x.cols()) + " / " + std::to_string(kv.cols()));
  }
  const Var xq = norm_q_(ctx, x);
  const Var xkv = norm_kv_(ctx, kv);
  const Var q = wq_(ctx, xq);
  const Var k = wk_(ctx, xkv);
  const Var v = wv_(ctx, xkv);
  const int dh = dim_ / heads_;
  const double scale = 1.0 / std::sqrt(double(dh));
  std::vector<Var> heads;
  for (int h = 0; h < heads_; ++h) {
    const Var qh = SliceCols(q, h * dh, dh);
    const Var kh = SliceCols(k, h * dh, dh);
    const Var vh = SliceCols(v, h * dh, dh);
    const Var weights = SoftmaxRows(Affine(MatMulTransposed(qh, kh), scale, 0.0));
    heads.push_back(MatMul(weights, vh));
  }
  const Var attended = wo_(ctx, heads_ == 1 ? heads[0] : ConcatCols(heads));
  const Var y = Add(x, attended);
  return Add(y, ff_(ctx, norm_ff_(ctx, y)));
}

}  // namespace deviloc::dk
