#pragma once

// Reverse-mode differentiation over dense double matrices. A Tape records
// every op as a node holding its value and a closure that pushes the node's
// gradient into its inputs. Tapes are cheap; build one per forward pass.

#include <deque>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

namespace deviloc::dk {

using Matrix = Eigen::MatrixXd;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;  // empty until a gradient has been produced or zeroed
  Matrix m;     // optimizer moments
  Matrix v;
};

// Named parameters in a deterministic (lexicographic) order. References
// returned by Add/Get stay valid for the lifetime of the set.
class ParameterSet {
 public:
  Parameter& Add(const std::string& name, Matrix value);
  Parameter& Get(const std::string& name);
  const Parameter& Get(const std::string& name) const;
  bool Contains(const std::string& name) const { return params_.count(name) > 0; }

  void ZeroGrad();
  size_t NumScalars() const;
  size_t size() const { return params_.size(); }

  std::map<std::string, Parameter>::iterator begin() { return params_.begin(); }
  std::map<std::string, Parameter>::iterator end() { return params_.end(); }
  std::map<std::string, Parameter>::const_iterator begin() const {
    return params_.begin();
  }
  std::map<std::string, Parameter>::const_iterator end() const {
    return params_.end();
  }

 private:
  std::map<std::string, Parameter> params_;
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  // Value of a 1x1 node.
  double scalar() const;
};

class Tape {
 public:
  // Receives the node's output gradient and its forward value; adds into
  // inputs via AccumulateGrad.
  using BackwardFn =
      std::function<void(Tape&, const Matrix& grad, const Matrix& value)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var Constant(Matrix value);
  // Leaf bound to a parameter. Repeated calls return the same node, so a
  // parameter used in several places accumulates one gradient.
  Var Param(Parameter& param);
  // Read-only parameter leaf (no gradient, no copy of the value).
  Var Frozen(const Parameter& param);

  Var Push(Matrix value, bool requires_grad, BackwardFn backward);

  const Matrix& value(int id) const;
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  // Adds `g` to the gradient of node `id` if it requires one.
  template <typename Derived>
  void AccumulateGrad(int id, const Eigen::MatrixBase<Derived>& g) {
    Node& node = nodes_[id];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0) {
      node.grad = g;
    } else {
      node.grad += g;
    }
  }
  // Adds `g` into columns [col, col + g.cols()) of the gradient of `id`.
  template <typename Derived>
  void AccumulateGradCols(int id, Eigen::Index col,
                          const Eigen::MatrixBase<Derived>& g) {
    Node& node = nodes_[id];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0) {
      const Matrix& v = value(id);
      node.grad = Matrix::Zero(v.rows(), v.cols());
    }
    node.grad.middleCols(col, g.cols()) += g;
  }
  // Gradient of a node after Backward (zeros if it received none).
  Matrix grad(Var v) const;

  // Seeds d(out)/d(out) = 1 for a 1x1 node, runs the recorded closures in
  // reverse and adds leaf gradients into their bound Parameters.
  void Backward(Var out);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;  // frozen parameter storage
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  std::deque<Node> nodes_;
  std::unordered_map<const void*, int> param_nodes_;
};

}  // namespace deviloc::dk
