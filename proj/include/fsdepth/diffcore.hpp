#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "fsdepth/errors.hpp"
#include "fsdepth/types.hpp"

namespace fsdepth {

// ---------------------------------------------------------------------------
// Dense kernels. Each returns a plain matrix of the argument's scalar type and
// is shared by the tape primitives and the inference path, so both compute
// bit-identical forward values.
// ---------------------------------------------------------------------------

template <typename Derived>
MatrixX<typename Derived::Scalar> mean_pool_rows(const Eigen::MatrixBase<Derived>& x) {
  if (x.rows() < 1) throw DimensionError("mean_pool_rows: empty input " + shape_str(x));
  using Scalar = typename Derived::Scalar;
  return (x.colwise().sum() / static_cast<Scalar>(x.rows())).eval();
}

template <typename Scalar>
Scalar gelu_scalar(Scalar x) {
  constexpr Scalar kAlpha = Scalar(0.7978845608028654);  // sqrt(2/pi)
  constexpr Scalar kBeta = Scalar(0.044715);
  return Scalar(0.5) * x * (Scalar(1) + std::tanh(kAlpha * (x + kBeta * x * x * x)));
}

template <typename Scalar>
Scalar gelu_derivative(Scalar x) {
  constexpr Scalar kAlpha = Scalar(0.7978845608028654);
  constexpr Scalar kBeta = Scalar(0.044715);
  const Scalar t = std::tanh(kAlpha * (x + kBeta * x * x * x));
  const Scalar dt = (Scalar(1) - t * t) * kAlpha * (Scalar(1) + Scalar(3) * kBeta * x * x);
  return Scalar(0.5) * (Scalar(1) + t) + Scalar(0.5) * x * dt;
}

template <typename Derived>
MatrixX<typename Derived::Scalar> gelu(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return gelu_scalar(v); }).eval();
}

/// Divides each row by max(||row||_2, eps).
template <typename Derived>
MatrixX<typename Derived::Scalar> l2_normalize_rows(const Eigen::MatrixBase<Derived>& x,
                                                    typename Derived::Scalar eps = 1e-12) {
  MatrixX<typename Derived::Scalar> out = x;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const auto norm = std::max(out.row(r).norm(), eps);
    out.row(r) /= norm;
  }
  return out;
}

/// Row softmax with the row maximum subtracted first.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  MatrixX<typename Derived::Scalar> out = x;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    if (out.cols() == 0) break;
    auto row = out.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reverse-mode tape.
// ---------------------------------------------------------------------------

/// Handle to a value slot on a Tape.
struct Var {
  std::size_t slot = 0;
};

/// Gradients of a scalar loss keyed by leaf-parameter name.
using GradientSet = std::map<std::string, Matrix>;

/// Append-only record of primitive operations over double matrices.
///
/// Leaves are registered parameters (they receive gradients); constants are
/// frozen inputs. Every primitive caches the forward values its backward rule
/// needs. A tape is confined to one thread.
class Tape {
 public:
  enum class Op {
    kLeaf,
    kConstant,
    kMatMul,
    kTranspose,
    kVStack,
    kScale,
    kMeanPoolRows,
    kGelu,
    kL2NormalizeRows,
    kSoftmaxRows,
    kGatherRows,
    kMaskedRmse,
  };

  Var leaf(std::string name, Matrix value);
  Var constant(Matrix value);

  Var matmul(Var a, Var b);
  Var transpose(Var a);
  /// Row-stacks the inputs; all must share a column count.
  Var vstack(const std::vector<Var>& parts);
  Var scale(Var a, double factor);
  Var mean_pool_rows(Var a);
  Var gelu(Var a);
  Var l2_normalize_rows(Var a, double eps = 1e-12);
  Var softmax_rows(Var a);
  /// out.row(r) = a.row(index[r]).
  Var gather_rows(Var a, std::vector<Eigen::Index> index);
  /// sqrt(mean over mask of (pred - target)^2) as a 1x1 value; pred and
  /// target are column vectors, mask entries are 0 or 1.
  Var masked_rmse(Var pred, const Vector& target, const Vector& mask);

  const Matrix& value(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  Op op(Var v) const { return nodes_.at(v.slot).op; }

  /// Overwrites a leaf's value. The tape must be replayed before backward.
  void set_leaf(const std::string& name, const Matrix& value);
  Var leaf_var(const std::string& name) const;

  /// Recomputes every slot from leaves and constants in record order.
  void replay();
  /// True when a replay reproduces every cached value bit-for-bit.
  bool replay_matches() const;

  /// Exact gradients of the 1x1 value in `loss` with respect to every leaf.
  /// Throws ContractError when `loss` is not scalar and InternalError when
  /// leaf values changed since the last forward pass.
  GradientSet backward(Var loss) const;

  /// One recorded primitive with its cached forward value.
  struct Node {
    Op op = Op::kConstant;
    std::vector<std::size_t> inputs;
    Matrix value;
    std::string name;
    double param = 0.0;
    std::vector<Eigen::Index> index;
    Vector target;
    Vector mask;
    double mask_count = 0.0;
    Vector row_norms;
  };

 private:
  Var push(Node node);
  void forward(Node& node) const;
  const Node& at(Var v) const;

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> leaves_;
  bool stale_ = false;
};

}  // namespace fsdepth
