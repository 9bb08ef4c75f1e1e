#include "fsdepth/diffcore.hpp"

#include <algorithm>
#include <utility>

namespace fsdepth {

namespace {

Tape::Node make_node(Tape::Op op, std::vector<std::size_t> inputs = {}) {
  Tape::Node n;
  n.op = op;
  n.inputs = std::move(inputs);
  return n;
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw InternalError(std::string(what) + ": produced a non-finite value");
}

}  // namespace

const Tape::Node& Tape::at(Var v) const {
  if (v.slot >= nodes_.size()) throw BoundsError("tape slot " + std::to_string(v.slot) + " out of range");
  return nodes_[v.slot];
}

const Matrix& Tape::value(Var v) const { return at(v).value; }

Var Tape::push(Node node) {
  for (std::size_t in : node.inputs) {
    if (in >= nodes_.size()) throw BoundsError("tape input slot out of range");
  }
  forward(node);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::leaf(std::string name, Matrix value) {
  if (leaves_.count(name)) throw ContractError("tape leaf '" + name + "' registered twice");
  require_finite(value, "leaf");
  Node n = make_node(Op::kLeaf);
  n.value = std::move(value);
  n.name = name;
  Var v = push(std::move(n));
  leaves_[name] = v.slot;
  return v;
}

Var Tape::constant(Matrix value) {
  require_finite(value, "constant");
  Node n = make_node(Op::kConstant);
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  if (va.cols() != vb.rows()) {
    throw DimensionError("matmul: cannot multiply " + shape_str(va) + " by " + shape_str(vb));
  }
  return push(make_node(Op::kMatMul, {a.slot, b.slot}));
}

Var Tape::transpose(Var a) {
  at(a);
  return push(make_node(Op::kTranspose, {a.slot}));
}

Var Tape::vstack(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("vstack: no inputs");
  Node n = make_node(Op::kVStack);
  const Eigen::Index cols = value(parts.front()).cols();
  for (Var p : parts) {
    if (value(p).cols() != cols) {
      throw DimensionError("vstack: column mismatch " + shape_str(value(parts.front())) + " vs " +
                           shape_str(value(p)));
    }
    n.inputs.push_back(p.slot);
  }
  return push(std::move(n));
}

Var Tape::scale(Var a, double factor) {
  Node n = make_node(Op::kScale, {a.slot});
  n.param = factor;
  return push(std::move(n));
}

Var Tape::mean_pool_rows(Var a) {
  if (value(a).rows() < 1) throw DimensionError("mean_pool_rows: empty input " + shape_str(value(a)));
  return push(make_node(Op::kMeanPoolRows, {a.slot}));
}

Var Tape::gelu(Var a) { return push(make_node(Op::kGelu, {a.slot})); }

Var Tape::l2_normalize_rows(Var a, double eps) {
  if (!(eps > 0.0)) throw ContractError("l2_normalize_rows: eps must be positive");
  Node n = make_node(Op::kL2NormalizeRows, {a.slot});
  n.param = eps;
  return push(std::move(n));
}

Var Tape::softmax_rows(Var a) { return push(make_node(Op::kSoftmaxRows, {a.slot})); }

Var Tape::gather_rows(Var a, std::vector<Eigen::Index> index) {
  const Eigen::Index rows = value(a).rows();
  for (Eigen::Index i : index) {
    if (i < 0 || i >= rows) throw BoundsError("gather_rows: index " + std::to_string(i) + " outside " + std::to_string(rows) + " rows");
  }
  Node n = make_node(Op::kGatherRows, {a.slot});
  n.index = std::move(index);
  return push(std::move(n));
}

Var Tape::masked_rmse(Var pred, const Vector& target, const Vector& mask) {
  const Matrix& p = value(pred);
  if (p.cols() != 1 || p.rows() != target.size() || p.rows() != mask.size()) {
    throw DimensionError("masked_rmse: prediction " + shape_str(p) + " vs target " +
                         shape_str(target) + " and mask " + shape_str(mask));
  }
  if (mask.sum() <= 0.0) throw ValidationError("masked_rmse: mask selects no pixels");
  Node n = make_node(Op::kMaskedRmse, {pred.slot});
  n.target = target;
  n.mask = mask;
  return push(std::move(n));
}

void Tape::forward(Node& n) const {
  auto in = [&](std::size_t k) -> const Matrix& { return nodes_[n.inputs[k]].value; };
  switch (n.op) {
    case Op::kLeaf:
    case Op::kConstant:
      return;
    case Op::kMatMul:
      n.value = in(0) * in(1);
      break;
    case Op::kTranspose:
      n.value = in(0).transpose();
      break;
    case Op::kVStack: {
      Eigen::Index rows = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) rows += in(k).rows();
      n.value.resize(rows, in(0).cols());
      Eigen::Index r = 0;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        n.value.middleRows(r, in(k).rows()) = in(k);
        r += in(k).rows();
      }
      break;
    }
    case Op::kScale:
      n.value = in(0) * n.param;
      break;
    case Op::kMeanPoolRows:
      n.value = fsdepth::mean_pool_rows(in(0));
      break;
    case Op::kGelu:
      n.value = fsdepth::gelu(in(0));
      break;
    case Op::kL2NormalizeRows: {
      const Matrix& x = in(0);
      n.row_norms = x.rowwise().norm();
      n.value = fsdepth::l2_normalize_rows(x, n.param);
      break;
    }
    case Op::kSoftmaxRows:
      n.value = fsdepth::softmax_rows(in(0));
      break;
    case Op::kGatherRows: {
      const Matrix& x = in(0);
      n.value.resize(static_cast<Eigen::Index>(n.index.size()), x.cols());
      for (std::size_t r = 0; r < n.index.size(); ++r) n.value.row(static_cast<Eigen::Index>(r)) = x.row(n.index[r]);
      break;
    }
    case Op::kMaskedRmse: {
      const Vector diff = (in(0).col(0) - n.target).cwiseProduct(n.mask);
      n.mask_count = n.mask.sum();
      n.value.resize(1, 1);
      n.value(0, 0) = std::sqrt(diff.squaredNorm() / n.mask_count);
      break;
    }
  }
  require_finite(n.value, "tape forward");
}

void Tape::set_leaf(const std::string& name, const Matrix& value) {
  Node& n = nodes_.at(leaf_var(name).slot);
  if (n.value.rows() != value.rows() || n.value.cols() != value.cols()) {
    throw DimensionError("set_leaf '" + name + "': expected " + shape_str(n.value) + ", got " + shape_str(value));
  }
  n.value = value;
  stale_ = true;
}

Var Tape::leaf_var(const std::string& name) const {
  auto it = leaves_.find(name);
  if (it == leaves_.end()) throw ContractError("no tape leaf named '" + name + "'");
  return Var{it->second};
}

void Tape::replay() {
  for (Node& n : nodes_) forward(n);
  stale_ = false;
}

bool Tape::replay_matches() const {
  Tape copy = *this;
  copy.replay();
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Matrix& a = nodes_[i].value;
    const Matrix& b = copy.nodes_[i].value;
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    if (!std::equal(a.data(), a.data() + a.size(), b.data())) return false;
  }
  return true;
}

GradientSet Tape::backward(Var loss) const {
  const Node& root = at(loss);
  if (root.value.rows() != 1 || root.value.cols() != 1) {
    throw ContractError("backward: loss slot holds " + shape_str(root.value) + ", expected 1x1");
  }
  if (stale_) throw InternalError("backward: leaf values changed since the recorded forward pass; replay first");

  std::vector<Matrix> grad(nodes_.size());
  std::vector<bool> has(nodes_.size(), false);
  auto accumulate = [&](std::size_t slot, const Matrix& g) {
    const Matrix& v = nodes_[slot].value;
    if (g.rows() != v.rows() || g.cols() != v.cols()) {
      throw InternalError("backward: gradient " + shape_str(g) + " for slot of shape " + shape_str(v));
    }
    if (has[slot]) {
      grad[slot] += g;
    } else {
      grad[slot] = g;
      has[slot] = true;
    }
  };
  accumulate(loss.slot, Matrix::Ones(1, 1));

  for (std::size_t i = loss.slot + 1; i-- > 0;) {
    if (!has[i]) continue;
    const Node& n = nodes_[i];
    const Matrix& g = grad[i];
    auto in = [&](std::size_t k) -> const Matrix& { return nodes_[n.inputs[k]].value; };
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConstant:
        break;
      case Op::kMatMul:
        accumulate(n.inputs[0], g * in(1).transpose());
        accumulate(n.inputs[1], in(0).transpose() * g);
        break;
      case Op::kTranspose:
        accumulate(n.inputs[0], g.transpose());
        break;
      case Op::kVStack: {
        Eigen::Index r = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const Eigen::Index rows = in(k).rows();
          accumulate(n.inputs[k], g.middleRows(r, rows));
          r += rows;
        }
        break;
      }
      case Op::kScale:
        accumulate(n.inputs[0], g * n.param);
        break;
      case Op::kMeanPoolRows: {
        const Eigen::Index rows = in(0).rows();
        accumulate(n.inputs[0], g.replicate(rows, 1) / static_cast<double>(rows));
        break;
      }
      case Op::kGelu:
        accumulate(n.inputs[0],
                   g.cwiseProduct(in(0).unaryExpr([](double x) { return gelu_derivative(x); })));
        break;
      case Op::kL2NormalizeRows: {
        Matrix gx(g.rows(), g.cols());
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          const double norm = n.row_norms(r);
          if (norm > n.param) {
            const auto y = n.value.row(r);
            gx.row(r) = (g.row(r) - y * y.dot(g.row(r))) / norm;
          } else {
            gx.row(r) = g.row(r) / n.param;
          }
        }
        accumulate(n.inputs[0], gx);
        break;
      }
      case Op::kSoftmaxRows: {
        Matrix gx(g.rows(), g.cols());
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          const auto w = n.value.row(r);
          gx.row(r) = w.cwiseProduct((g.row(r).array() - w.dot(g.row(r))).matrix());
        }
        accumulate(n.inputs[0], gx);
        break;
      }
      case Op::kGatherRows: {
        Matrix gx = Matrix::Zero(in(0).rows(), in(0).cols());
        for (std::size_t r = 0; r < n.index.size(); ++r) gx.row(n.index[r]) += g.row(static_cast<Eigen::Index>(r));
        accumulate(n.inputs[0], gx);
        break;
      }
      case Op::kMaskedRmse: {
        const double l = n.value(0, 0);
        Matrix gx = Matrix::Zero(in(0).rows(), 1);
        // sqrt is not differentiable at zero loss.
        if (l >= 1e-12) {
          gx.col(0) = (in(0).col(0) - n.target).cwiseProduct(n.mask) * (g(0, 0) / (n.mask_count * l));
        }
        accumulate(n.inputs[0], gx);
        break;
      }
    }
  }

  GradientSet out;
  for (const auto& [name, slot] : leaves_) {
    const Matrix& v = nodes_[slot].value;
    out[name] = has[slot] ? grad[slot] : Matrix::Zero(v.rows(), v.cols());
    if (!out[name].allFinite()) throw TrainingError("backward: non-finite gradient for '" + name + "'");
  }
  return out;
}

}  // namespace fsdepth
