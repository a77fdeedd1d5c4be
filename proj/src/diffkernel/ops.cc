#include "deviloc/diffkernel/ops.h"

#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "deviloc/error.h"

namespace deviloc::dk {
namespace {

void CheckSameTape(Var a, Var b) {
  if (a.tape != b.tape) Throw(ErrorCode::kShapeMismatch, "vars from different tapes");
}

[[noreturn]] void ShapeError(const char* op, const Matrix& a, const Matrix& b) {
  Throw(ErrorCode::kShapeMismatch,
        std::string(op) + ": " + std::to_string(a.rows()) + "x" +
            std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
            std::to_string(b.cols()));
}

bool NeedsGrad(Var a) { return a.tape->requires_grad(a.id); }
bool NeedsGrad(Var a, Var b) { return NeedsGrad(a) || NeedsGrad(b); }

}  // namespace

Var MatMul(Var a, Var b) {
  CheckSameTape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) ShapeError("MatMul", av, bv);
  Matrix out = av * bv;
  const int ia = a.id, ib = b.id;
  return a.tape->Push(std::move(out), NeedsGrad(a, b),
                      [ia, ib](Tape& t, const Matrix& g, const Matrix&) {
                        if (t.requires_grad(ia)) {
                          t.AccumulateGrad(ia, g * t.value(ib).transpose());
                        }
                        if (t.requires_grad(ib)) {
                          t.AccumulateGrad(ib, t.value(ia).transpose() * g);
                        }
                      });
}

Var MatMulTransposed(Var a, Var b) {
  CheckSameTape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols()) ShapeError("MatMulTransposed", av, bv);
  Matrix out = av * bv.transpose();
  const int ia = a.id, ib = b.id;
  return a.tape->Push(std::move(out), NeedsGrad(a, b),
                      [ia, ib](Tape& t, const Matrix& g, const Matrix&) {
                        if (t.requires_grad(ia)) t.AccumulateGrad(ia, g * t.value(ib));
                        if (t.requires_grad(ib)) {
                          t.AccumulateGrad(ib, g.transpose() * t.value(ia));
                        }
                      });
}

Var Add(Var a, Var b) {
  CheckSameTape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) ShapeError("Add", av, bv);
  const int ia = a.id, ib = b.id;
  return a.tape->Push(av + bv, NeedsGrad(a, b),
                      [ia, ib](Tape& t, const Matrix& g, const Matrix&) {
                        t.AccumulateGrad(ia, g);
                        t.AccumulateGrad(ib, g);
                      });
}

Var Sub(Var a, Var b) {
  CheckSameTape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) ShapeError("Sub", av, bv);
  const int ia = a.id, ib = b.id;
  return a.tape->Push(av - bv, NeedsGrad(a, b),
                      [ia, ib](Tape& t, const Matrix& g, const Matrix&) {
                        t.AccumulateGrad(ia, g);
                        t.AccumulateGrad(ib, -g);
                      });
}

Var Mul(Var a, Var b) {
  CheckSameTape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) ShapeError("Mul", av, bv);
  const int ia = a.id, ib = b.id;
  return a.tape->Push(av.cwiseProduct(bv), NeedsGrad(a, b),
                      [ia, ib](Tape& t, const Matrix& g, const Matrix&) {
                        if (t.requires_grad(ia)) {
                          t.AccumulateGrad(ia, g.cwiseProduct(t.value(ib)));
                        }
                        if (t.requires_grad(ib)) {
                          t.AccumulateGrad(ib, g.cwiseProduct(t.value(ia)));
                        }
                      });
}

Var AddRow(Var a, Var row) {
  CheckSameTape(a, row);
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) ShapeError("AddRow", av, rv);
  Matrix out = av.rowwise() + rv.row(0);
  const int ia = a.id, ir = row.id;
  return a.tape->Push(std::move(out), NeedsGrad(a, row),
                      [ia, ir](Tape& t, const Matrix& g, const Matrix&) {
                        t.AccumulateGrad(ia, g);
                        if (t.requires_grad(ir)) {
                          t.AccumulateGrad(ir, g.colwise().sum());
                        }
                      });
}

Var MulColumn(Var a, Var col) {
  CheckSameTape(a, col);
  const Matrix& av = a.value();
  const Matrix& cv = col.value();
  if (cv.cols() != 1 || cv.rows() != av.rows()) ShapeError("MulColumn", av, cv);
  Matrix out = cv.col(0).asDiagonal() * av;
  const int ia = a.id, ic = col.id;
  return a.tape->Push(
      std::move(out), NeedsGrad(a, col),
      [ia, ic](Tape& t, const Matrix& g, const Matrix&) {
        if (t.requires_grad(ia)) {
          t.AccumulateGrad(ia, t.value(ic).col(0).asDiagonal() * g);
        }
        if (t.requires_grad(ic)) {
          t.AccumulateGrad(ic, g.cwiseProduct(t.value(ia)).rowwise().sum());
        }
      });
}

Var DivColumn(Var a, Var col) {
  CheckSameTape(a, col);
  const Matrix& av = a.value();
  const Matrix& cv = col.value();
  if (cv.cols() != 1 || cv.rows() != av.rows()) ShapeError("DivColumn", av, cv);
  const Eigen::VectorXd inv = cv.col(0).cwiseInverse();
  Matrix out = inv.asDiagonal() * av;
  const int ia = a.id, ic = col.id;
  return a.tape->Push(
      std::move(out), NeedsGrad(a, col),
      [ia, ic, inv](Tape& t, const Matrix& g, const Matrix& y) {
        if (t.requires_grad(ia)) t.AccumulateGrad(ia, inv.asDiagonal() * g);
        if (t.requires_grad(ic)) {
          // d(a / c) / dc = -y / c
          t.AccumulateGrad(
              ic, -(g.cwiseProduct(y).rowwise().sum()).cwiseProduct(inv));
        }
      });
}

Var Affine(Var a, double scale, double shift) {
  const int ia = a.id;
  Matrix out = (scale * a.value()).array() + shift;
  return a.tape->Push(std::move(out), NeedsGrad(a),
                      [ia, scale](Tape& t, const Matrix& g, const Matrix&) {
                        t.AccumulateGrad(ia, scale * g);
                      });
}

Var Gelu(Var a) {
  const int ia = a.id;
  const Matrix& x = a.value();
  Matrix out = x.unaryExpr([](double v) {
    return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  });
  return a.tape->Push(std::move(out), NeedsGrad(a),
                      [ia](Tape& t, const Matrix& g, const Matrix&) {
                        const Matrix d = t.value(ia).unaryExpr([](double v) {
                          const double cdf =
                              0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
                          const double pdf = std::exp(-0.5 * v * v) *
                                             std::numbers::inv_sqrtpi /
                                             std::numbers::sqrt2;
                          return cdf + v * pdf;
                        });
                        t.AccumulateGrad(ia, g.cwiseProduct(d));
                      });
}

Var Sigmoid(Var a) {
  const int ia = a.id;
  Matrix out = a.value().unaryExpr([](double v) {
    // Split by sign so exp never overflows.
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  return a.tape->Push(std::move(out), NeedsGrad(a),
                      [ia](Tape& t, const Matrix& g, const Matrix& y) {
                        t.AccumulateGrad(
                            ia, g.cwiseProduct(y.cwiseProduct(
                                    (1.0 - y.array()).matrix())));
                      });
}

Var Abs(Var a) {
  const int ia = a.id;
  return a.tape->Push(a.value().cwiseAbs(), NeedsGrad(a),
                      [ia](Tape& t, const Matrix& g, const Matrix&) {
                        const Matrix sign = t.value(ia).unaryExpr([](double v) {
                          return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
                        });
                        t.AccumulateGrad(ia, g.cwiseProduct(sign));
                      });
}

Var Log(Var a) {
  const int ia = a.id;
  return a.tape->Push(a.value().array().log().matrix(), NeedsGrad(a),
                      [ia](Tape& t, const Matrix& g, const Matrix&) {
                        t.AccumulateGrad(ia, g.cwiseQuotient(t.value(ia)));
                      });
}

Var Clamp(Var a, double lo, double hi) {
  const int ia = a.id;
  Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
  return a.tape->Push(std::move(out), NeedsGrad(a),
                      [ia, lo, hi](Tape& t, const Matrix& g, const Matrix&) {
                        const Matrix& x = t.value(ia);
                        const Matrix pass = x.unaryExpr([lo, hi](double v) {
                          return (v >= lo && v <= hi) ? 1.0 : 0.0;
                        });
                        t.AccumulateGrad(ia, g.cwiseProduct(pass));
                      });
}

Var LayerNormRows(Var x, Var gamma, Var beta, double eps) {
  CheckSameTape(x, gamma);
  CheckSameTape(x, beta);
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.rows(), d = xv.cols();
  if (gamma.rows() != 1 || gamma.cols() != d) ShapeError("LayerNorm", xv, gamma.value());
  if (beta.rows() != 1 || beta.cols() != d) ShapeError("LayerNorm", xv, beta.value());

  auto xhat = std::make_shared<Matrix>(n, d);
  auto inv_std = std::make_shared<Eigen::VectorXd>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = xv.row(i).mean();
    const double var = (xv.row(i).array() - mean).square().mean();
    (*inv_std)(i) = 1.0 / std::sqrt(var + eps);
    xhat->row(i) = (xv.row(i).array() - mean) * (*inv_std)(i);
  }
  Matrix out = (xhat->array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);

  const int ix = x.id, ig = gamma.id, ib = beta.id;
  const bool needs = NeedsGrad(x) || NeedsGrad(gamma, beta);
  return x.tape->Push(
      std::move(out), needs,
      [ix, ig, ib, xhat, inv_std](Tape& t, const Matrix& g, const Matrix&) {
        if (t.requires_grad(ig)) {
          t.AccumulateGrad(ig, g.cwiseProduct(*xhat).colwise().sum());
        }
        if (t.requires_grad(ib)) t.AccumulateGrad(ib, g.colwise().sum());
        if (t.requires_grad(ix)) {
          const Matrix dxhat =
              (g.array().rowwise() * t.value(ig).row(0).array()).matrix();
          const Eigen::VectorXd mean_d = dxhat.rowwise().mean();
          const Eigen::VectorXd mean_dx =
              dxhat.cwiseProduct(*xhat).rowwise().mean();
          Matrix dx = dxhat;
          dx.colwise() -= mean_d;
          dx -= mean_dx.asDiagonal() * (*xhat);
          t.AccumulateGrad(ix, inv_std->asDiagonal() * dx);
        }
      });
}

Var SoftmaxRows(Var a) {
  const Matrix& x = a.value();
  if (x.cols() == 0) Throw(ErrorCode::kShapeMismatch, "SoftmaxRows on zero columns");
  // Whole-matrix expressions so exp runs over contiguous storage.
  const Eigen::VectorXd row_max = x.rowwise().maxCoeff();
  Matrix out = (x.colwise() - row_max).array().exp().matrix();
  const Eigen::ArrayXd inv_sum = out.rowwise().sum().array().inverse();
  out.array().colwise() *= inv_sum;
  const int ia = a.id;
  return a.tape->Push(std::move(out), NeedsGrad(a),
                      [ia](Tape& t, const Matrix& g, const Matrix& y) {
                        const Eigen::VectorXd dot =
                            g.cwiseProduct(y).rowwise().sum();
                        Matrix dx = g;
                        dx.colwise() -= dot;
                        t.AccumulateGrad(ia, dx.cwiseProduct(y));
                      });
}

Var ConcatCols(std::span<const Var> parts) {
  if (parts.empty()) Throw(ErrorCode::kShapeMismatch, "ConcatCols of nothing");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  bool needs = false;
  for (const Var& p : parts) {
    CheckSameTape(parts[0], p);
    if (p.rows() != rows) ShapeError("ConcatCols", parts[0].value(), p.value());
    cols += p.cols();
    needs = needs || NeedsGrad(p);
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    layout.emplace_back(p.id, offset);
    offset += p.cols();
  }
  return parts[0].tape->Push(
      std::move(out), needs,
      [layout](Tape& t, const Matrix& g, const Matrix&) {
        for (const auto& [id, off] : layout) {
          if (t.requires_grad(id)) {
            t.AccumulateGrad(id, g.middleCols(off, t.value(id).cols()));
          }
        }
      });
}

Var ConcatRows(std::span<const Var> parts) {
  if (parts.empty()) Throw(ErrorCode::kShapeMismatch, "ConcatRows of nothing");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  bool needs = false;
  for (const Var& p : parts) {
    CheckSameTape(parts[0], p);
    if (p.cols() != cols) ShapeError("ConcatRows", parts[0].value(), p.value());
    rows += p.rows();
    needs = needs || NeedsGrad(p);
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    layout.emplace_back(p.id, offset);
    offset += p.rows();
  }
  return parts[0].tape->Push(
      std::move(out), needs,
      [layout](Tape& t, const Matrix& g, const Matrix&) {
        for (const auto& [id, off] : layout) {
          if (t.requires_grad(id)) {
            t.AccumulateGrad(id, g.middleRows(off, t.value(id).rows()));
          }
        }
      });
}

Var SliceCols(Var a, int start, int count) {
  const Matrix& x = a.value();
  if (start < 0 || count < 0 || start + count > x.cols()) {
    Throw(ErrorCode::kShapeMismatch, "SliceCols out of range");
  }
  const int ia = a.id;
  return a.tape->Push(x.middleCols(start, count), NeedsGrad(a),
                      [ia, start](Tape& t, const Matrix& g, const Matrix&) {
                        t.AccumulateGradCols(ia, start, g);
                      });
}

Var GatherRows(Var a, std::span<const int> index) {
  const Matrix& x = a.value();
  Matrix out(static_cast<Eigen::Index>(index.size()), x.cols());
  for (size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= x.rows()) {
      Throw(ErrorCode::kShapeMismatch, "GatherRows index out of range");
    }
    out.row(i) = x.row(index[i]);
  }
  const int ia = a.id;
  std::vector<int> idx(index.begin(), index.end());
  return a.tape->Push(std::move(out), NeedsGrad(a),
                      [ia, idx](Tape& t, const Matrix& g, const Matrix&) {
                        const Matrix& src = t.value(ia);
                        Matrix full = Matrix::Zero(src.rows(), src.cols());
                        for (size_t i = 0; i < idx.size(); ++i) {
                          full.row(idx[i]) += g.row(i);
                        }
                        t.AccumulateGrad(ia, full);
                      });
}

Var SampleBilinear(Var grid, std::span<const kernels::BilinearTap> taps) {
  const Matrix& x = grid.value();
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(taps.size()), x.cols());
  for (size_t i = 0; i < taps.size(); ++i) {
    for (int k = 0; k < 4; ++k) {
      if (taps[i].index[k] < 0 || taps[i].index[k] >= x.rows()) {
        Throw(ErrorCode::kShapeMismatch, "bilinear tap outside the grid");
      }
      if (taps[i].weight[k] != 0.0) {
        out.row(i) += taps[i].weight[k] * x.row(taps[i].index[k]);
      }
    }
  }
  const int ig = grid.id;
  std::vector<kernels::BilinearTap> tap_copy(taps.begin(), taps.end());
  return grid.tape->Push(
      std::move(out), NeedsGrad(grid),
      [ig, tap_copy](Tape& t, const Matrix& g, const Matrix&) {
        const Matrix& src = t.value(ig);
        Matrix full = Matrix::Zero(src.rows(), src.cols());
        for (size_t i = 0; i < tap_copy.size(); ++i) {
          for (int k = 0; k < 4; ++k) {
            full.row(tap_copy[i].index[k]) += tap_copy[i].weight[k] * g.row(i);
          }
        }
        t.AccumulateGrad(ig, full);
      });
}

Var SegmentMean(Var a, std::span<const int> segment, int num_segments) {
  const Matrix& x = a.value();
  if (static_cast<Eigen::Index>(segment.size()) != x.rows()) {
    Throw(ErrorCode::kShapeMismatch, "SegmentMean: one segment id per row");
  }
  Eigen::VectorXd count = Eigen::VectorXd::Zero(num_segments);
  Matrix out = Matrix::Zero(num_segments, x.cols());
  for (size_t i = 0; i < segment.size(); ++i) {
    if (segment[i] < 0 || segment[i] >= num_segments) {
      Throw(ErrorCode::kShapeMismatch, "SegmentMean: segment id out of range");
    }
    out.row(segment[i]) += x.row(i);
    count(segment[i]) += 1.0;
  }
  for (int j = 0; j < num_segments; ++j) {
    if (count(j) == 0.0) Throw(ErrorCode::kShapeMismatch, "SegmentMean: empty segment");
    out.row(j) /= count(j);
  }
  const int ia = a.id;
  std::vector<int> seg(segment.begin(), segment.end());
  return a.tape->Push(std::move(out), NeedsGrad(a),
                      [ia, seg, count](Tape& t, const Matrix& g, const Matrix&) {
                        Matrix full(seg.size(), g.cols());
                        for (size_t i = 0; i < seg.size(); ++i) {
                          full.row(i) = g.row(seg[i]) / count(seg[i]);
                        }
                        t.AccumulateGrad(ia, full);
                      });
}

Var Sum(Var a) {
  const int ia = a.id;
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->Push(std::move(out), NeedsGrad(a),
                      [ia](Tape& t, const Matrix& g, const Matrix&) {
                        const Matrix& src = t.value(ia);
                        t.AccumulateGrad(
                            ia, Matrix::Constant(src.rows(), src.cols(), g(0, 0)));
                      });
}

Var Mean(Var a) {
  const Eigen::Index n = a.value().size();
  if (n == 0) Throw(ErrorCode::kShapeMismatch, "Mean of an empty matrix");
  return Affine(Sum(a), 1.0 / double(n), 0.0);
}

Var SumRows(Var a) {
  const int ia = a.id;
  return a.tape->Push(a.value().rowwise().sum(), NeedsGrad(a),
                      [ia](Tape& t, const Matrix& g, const Matrix&) {
                        const Matrix& src = t.value(ia);
                        Matrix full(src.rows(), src.cols());
                        full.colwise() = g.col(0);
                        t.AccumulateGrad(ia, full);
                      });
}

}  // namespace deviloc::dk
