#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "deviloc/diffkernel/ops.h"
#include "deviloc/diffkernel/tape.h"

namespace deviloc::dk {

// Layers register their parameters under `prefix` in a ParameterSet at
// construction and read them through a tape at call time. With `train`
// false the parameters enter the tape as frozen leaves (no gradients).
struct Context {
  Tape* tape = nullptr;
  bool train = false;

  Var Bind(Parameter& p) const { return train ? tape->Param(p) : tape->Frozen(p); }
  Var Constant(Matrix m) const { return tape->Constant(std::move(m)); }
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Matrix XavierUniform(int fan_in, int fan_out, std::mt19937_64& rng);

class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& params, const std::string& prefix, int in, int out,
         std::mt19937_64& rng);

  Var operator()(const Context& ctx, Var x) const;
  int in() const { return in_; }
  int out() const { return out_; }

 private:
  Parameter* weight_ = nullptr;  // in x out
  Parameter* bias_ = nullptr;    // 1 x out
  int in_ = 0;
  int out_ = 0;
};

// Linear layers with GELU between them; the last layer is linear.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterSet& params, const std::string& prefix,
      const std::vector<int>& dims, std::mt19937_64& rng);

  Var operator()(const Context& ctx, Var x) const;
  int in() const { return layers_.front().in(); }
  int out() const { return layers_.back().out(); }

 private:
  std::vector<Linear> layers_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterSet& params, const std::string& prefix, int dim);

  Var operator()(const Context& ctx, Var x) const;

 private:
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
};

// Pre-norm transformer block without positional encoding:
//   x <- x + MHA(LN_q(x), LN_kv(kv))
//   x <- x + FF(LN_ff(x)),  FF = Linear(d, 2d) -> GELU -> Linear(2d, d)
// Self-attention is Forward(ctx, x, x).
class AttentionBlock {
 public:
  AttentionBlock() = default;
  AttentionBlock(ParameterSet& params, const std::string& prefix, int dim,
                 int heads, std::mt19937_64& rng, int ff_expansion = 2);

  Var operator()(const Context& ctx, Var x, Var kv) const;
  int dim() const { return dim_; }
  int heads() const { return heads_; }

 private:
  int dim_ = 0;
  int heads_ = 0;
  LayerNorm norm_q_, norm_kv_, norm_ff_;
  Linear wq_, wk_, wv_, wo_;
  Mlp ff_;
};

}  // namespace deviloc::dk
