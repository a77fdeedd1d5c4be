#include "deviloc/diffkernel/tape.h"

#include "deviloc/error.h"

namespace deviloc::dk {

Parameter& ParameterSet::Add(const std::string& name, Matrix value) {
  if (params_.count(name)) {
    Throw(ErrorCode::kConfigError, "duplicate parameter " + name);
  }
  Parameter& p = params_[name];
  p.name = name;
  p.m = Matrix::Zero(value.rows(), value.cols());
  p.v = Matrix::Zero(value.rows(), value.cols());
  p.value = std::move(value);
  return p;
}

Parameter& ParameterSet::Get(const std::string& name) {
  const auto it = params_.find(name);
  if (it == params_.end()) {
    Throw(ErrorCode::kConfigError, "unknown parameter " + name);
  }
  return it->second;
}

const Parameter& ParameterSet::Get(const std::string& name) const {
  const auto it = params_.find(name);
  if (it == params_.end()) {
    Throw(ErrorCode::kConfigError, "unknown parameter " + name);
  }
  return it->second;
}

void ParameterSet::ZeroGrad() {
  for (auto& [name, p] : params_) {
    p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
  }
}

size_t ParameterSet::NumScalars() const {
  size_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.size();
  return n;
}

const Matrix& Var::value() const { return tape->value(id); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    Throw(ErrorCode::kShapeMismatch, "scalar() on a non 1x1 node");
  }
  return v(0, 0);
}

Var Tape::Constant(Matrix value) {
  return Push(std::move(value), false, nullptr);
}

Var Tape::Param(Parameter& param) {
  const auto it = param_nodes_.find(&param);
  if (it != param_nodes_.end() && nodes_[it->second].param == &param) {
    return {this, it->second};
  }
  Node node;
  node.external = &param.value;
  node.requires_grad = true;
  node.param = &param;
  nodes_.push_back(std::move(node));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_[&param] = id;
  return {this, id};
}

Var Tape::Frozen(const Parameter& param) {
  const auto it = param_nodes_.find(&param);
  if (it != param_nodes_.end()) return {this, it->second};
  Node node;
  node.external = &param.value;
  nodes_.push_back(std::move(node));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_[&param] = id;
  return {this, id};
}

Var Tape::Push(Matrix value, bool requires_grad, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

const Matrix& Tape::value(int id) const {
  const Node& node = nodes_[id];
  return node.external ? *node.external : node.value;
}

Matrix Tape::grad(Var v) const {
  const Node& node = nodes_[v.id];
  if (node.grad.size() == 0) {
    const Matrix& val = value(v.id);
    return Matrix::Zero(val.rows(), val.cols());
  }
  return node.grad;
}

void Tape::Backward(Var out) {
  const Matrix& v = value(out.id);
  if (v.rows() != 1 || v.cols() != 1) {
    Throw(ErrorCode::kShapeMismatch, "Backward needs a 1x1 output");
  }
  if (!nodes_[out.id].requires_grad) return;
  AccumulateGrad(out.id, Matrix::Ones(1, 1));
  for (int i = out.id; i >= 0; --i) {
    Node& node = nodes_[i];
    if (!node.requires_grad || node.grad.size() == 0) continue;
    if (node.backward) node.backward(*this, node.grad, value(i));
    if (node.param) {
      Parameter& p = *node.param;
      if (p.grad.size() == 0) {
        p.grad = node.grad;
      } else {
        p.grad += node.grad;
      }
    }
  }
}

}  // namespace deviloc::dk
