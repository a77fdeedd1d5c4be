#pragma once

#include <span>
#include <vector>

#include "deviloc/diffkernel/tape.h"
#include "deviloc/kernels.h"

namespace deviloc::dk {

// All ops check shapes and throw kShapeMismatch on disagreement. Results
// live on the tape of the first argument.

Var MatMul(Var a, Var b);            // a * b
Var MatMulTransposed(Var a, Var b);  // a * b^T
Var Add(Var a, Var b);
Var Sub(Var a, Var b);
Var Mul(Var a, Var b);           // elementwise
Var AddRow(Var a, Var row);      // a + 1 * row, row is 1 x cols(a)
Var MulColumn(Var a, Var col);   // a(i, :) * col(i)
Var DivColumn(Var a, Var col);   // a(i, :) / col(i)
Var Affine(Var a, double scale, double shift);  // scale * a + shift

Var Gelu(Var a);  // exact, x * Phi(x)
Var Sigmoid(Var a);
Var Abs(Var a);   // subgradient 0 at 0
Var Log(Var a);
// Clamps into [lo, hi]; the gradient is passed through inside the interval
// and blocked outside.
Var Clamp(Var a, double lo, double hi);

Var LayerNormRows(Var x, Var gamma, Var beta, double eps = 1e-5);
Var SoftmaxRows(Var a);

Var ConcatCols(std::span<const Var> parts);
Var ConcatRows(std::span<const Var> parts);
Var SliceCols(Var a, int start, int count);
Var GatherRows(Var a, std::span<const int> index);

// Row i = sum_k taps[i].weight[k] * grid(taps[i].index[k], :); the gradient
// is scattered back into the grid.
Var SampleBilinear(Var grid, std::span<const kernels::BilinearTap> taps);

// Mean of rows sharing a segment id: out(j, :) = mean_{i : seg(i) = j} a(i, :).
// Every segment in [0, num_segments) must be non-empty.
Var SegmentMean(Var a, std::span<const int> segment, int num_segments);

Var Sum(Var a);   // 1x1
Var Mean(Var a);  // 1x1
Var SumRows(Var a);  // N x 1, per-row sum

}  // namespace deviloc::dk
