#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <deque>
#include <memory>
#include <vector>

#include "fsps/errors.hpp"

namespace fsps::graph {

using Mat = Eigen::MatrixXd;
using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

/// Index map shared by a gather node and its scatter adjoint. Entry k is the
/// linear (row-major) source index of output element k, or -1 for a zero
/// cell (convolution padding).
struct IndexTable {
  std::vector<std::int64_t> src;  // size = dst_rows * dst_cols
  int src_rows = 0, src_cols = 0;
  int dst_rows = 0, dst_cols = 0;
};

enum class Op : std::uint8_t {
  kLeaf,
  kConst,
  kAdd,
  kSub,
  kMul,       // elementwise
  kMatMul,
  kTranspose,
  kExp,
  kLog,
  kTanh,
  kRelu,
  kPow,       // x^c elementwise
  kAffine,    // c*x + d elementwise
  kSumAll,    // -> 1x1
  kBroadcastScalar,  // 1x1 -> r x c
  kRowSum,    // (r,c) -> (r,1)
  kBroadcastCol,     // (r,1) -> (r,c)
  kColSum,    // (r,c) -> (1,c)
  kBroadcastRow,     // (1,c) -> (r,c)
  kGather,
  kScatter,
  kStopGrad,
};

struct Node {
  Mat value;
  Op op = Op::kConst;
  bool requires_grad = false;
  NodeId a = kNoNode;
  NodeId b = kNoNode;
  double c = 0.0;
  double d = 0.0;
  std::shared_ptr<const IndexTable> table;
};

/// Define-by-run reverse-mode tape over Eigen matrices.
///
/// Every op's VJP is emitted as new tape nodes, so gradients are themselves
/// differentiable: calling grad() on an expression built from a previous
/// grad() result yields exact higher-order derivatives. This is what carries
/// the meta-gradients through inner-loop SGD trajectories.
class Tape {
 public:
  NodeId leaf(Mat v) { return push(std::move(v), Op::kLeaf, true); }
  NodeId constant(Mat v) { return push(std::move(v), Op::kConst, false); }
  NodeId constant(double x) {
    Mat m(1, 1);
    m(0, 0) = x;
    return constant(std::move(m));
  }

  NodeId add(NodeId x, NodeId y);
  NodeId sub(NodeId x, NodeId y);
  NodeId mul(NodeId x, NodeId y);
  NodeId matmul(NodeId x, NodeId y);
  NodeId transpose(NodeId x);
  NodeId exp(NodeId x);
  NodeId log(NodeId x);
  NodeId tanh(NodeId x);
  NodeId relu(NodeId x);
  NodeId pow(NodeId x, double c);
  /// c*x + d, elementwise.
  NodeId affine(NodeId x, double c, double d = 0.0);
  NodeId neg(NodeId x) { return affine(x, -1.0); }
  NodeId scale(NodeId x, double c) { return affine(x, c); }
  NodeId sum_all(NodeId x);
  NodeId broadcast_scalar(NodeId s, int rows, int cols);
  NodeId row_sum(NodeId x);
  NodeId broadcast_col(NodeId x, int cols);
  NodeId col_sum(NodeId x);
  NodeId broadcast_row(NodeId x, int rows);
  NodeId gather(NodeId x, std::shared_ptr<const IndexTable> table);
  NodeId scatter(NodeId x, std::shared_ptr<const IndexTable> table);
  NodeId stop_grad(NodeId x);

  /// Detached constant holding x's current value.
  NodeId detached(NodeId x) { return constant(val(x)); }

  const Mat& val(NodeId id) const { return nodes_[id].value; }
  const Node& node(NodeId id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }

  /// Reverse-mode gradient of the scalar `out` (1x1) with respect to each
  /// node in `wrt`. Non-ancestor entries yield zero matrices. When
  /// create_graph is false the results are detached constants (the severed,
  /// first-order treatment); the default keeps them differentiable.
  std::vector<NodeId> grad(NodeId out, const std::vector<NodeId>& wrt,
                           bool create_graph = true);

 private:
  NodeId push(Mat v, Op op, bool rg, NodeId a = kNoNode, NodeId b = kNoNode,
              double c = 0.0, double d = 0.0,
              std::shared_ptr<const IndexTable> table = nullptr);
  bool rg2(NodeId x, NodeId y) const {
    return nodes_[x].requires_grad || nodes_[y].requires_grad;
  }

  std::deque<Node> nodes_;
};

/// Numerically stable row-wise log-sum-exp, (r,c) -> (r,1). The max shift is
/// detached, which leaves the gradient exact (log-sum-exp is shift
/// invariant).
NodeId logsumexp_rows(Tape& t, NodeId x);

/// Row-wise softmax, (r,c) -> (r,c).
NodeId softmax_rows(Tape& t, NodeId x);

/// Mean cross-entropy of row logits against integer labels.
NodeId cross_entropy(Tape& t, NodeId logits, const std::vector<int>& labels);

/// Row-wise L2 normalization with an epsilon guard, x / (||x|| + eps).
NodeId normalize_rows(Tape& t, NodeId x, double eps = 1e-30);

/// Fraction of rows whose argmax equals the label.
double accuracy(const Mat& logits, const std::vector<int>& labels);

}  // namespace fsps::graph
