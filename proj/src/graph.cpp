#include "fsps/graph.hpp"

#include <cmath>
#include <string>

namespace fsps::graph {

namespace {

void check_same_shape(const Mat& x, const Mat& y, const char* what) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch (" +
                     std::to_string(x.rows()) + "x" + std::to_string(x.cols()) + " vs " +
                     std::to_string(y.rows()) + "x" + std::to_string(y.cols()) + ")");
  }
}

}  // namespace

NodeId Tape::push(Mat v, Op op, bool rg, NodeId a, NodeId b, double c, double d,
                  std::shared_ptr<const IndexTable> table) {
  Node n;
  n.value = std::move(v);
  n.op = op;
  n.requires_grad = rg;
  n.a = a;
  n.b = b;
  n.c = c;
  n.d = d;
  n.table = std::move(table);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::add(NodeId x, NodeId y) {
  check_same_shape(val(x), val(y), "add");
  return push(val(x) + val(y), Op::kAdd, rg2(x, y), x, y);
}

NodeId Tape::sub(NodeId x, NodeId y) {
  check_same_shape(val(x), val(y), "sub");
  return push(val(x) - val(y), Op::kSub, rg2(x, y), x, y);
}

NodeId Tape::mul(NodeId x, NodeId y) {
  check_same_shape(val(x), val(y), "mul");
  return push(val(x).cwiseProduct(val(y)), Op::kMul, rg2(x, y), x, y);
}

NodeId Tape::matmul(NodeId x, NodeId y) {
  if (val(x).cols() != val(y).rows()) {
    throw ShapeError("matmul: inner dimensions disagree (" +
                     std::to_string(val(x).cols()) + " vs " + std::to_string(val(y).rows()) + ")");
  }
  return push(val(x) * val(y), Op::kMatMul, rg2(x, y), x, y);
}

NodeId Tape::transpose(NodeId x) {
  return push(val(x).transpose(), Op::kTranspose, requires_grad(x), x);
}

NodeId Tape::exp(NodeId x) {
  return push(val(x).array().exp().matrix(), Op::kExp, requires_grad(x), x);
}

NodeId Tape::log(NodeId x) {
  return push(val(x).array().log().matrix(), Op::kLog, requires_grad(x), x);
}

NodeId Tape::tanh(NodeId x) {
  return push(val(x).array().tanh().matrix(), Op::kTanh, requires_grad(x), x);
}

NodeId Tape::relu(NodeId x) {
  return push(val(x).cwiseMax(0.0), Op::kRelu, requires_grad(x), x);
}

NodeId Tape::pow(NodeId x, double c) {
  return push(val(x).array().pow(c).matrix(), Op::kPow, requires_grad(x), x, kNoNode, c);
}

NodeId Tape::affine(NodeId x, double c, double d) {
  return push(((val(x).array() * c) + d).matrix(), Op::kAffine, requires_grad(x), x, kNoNode, c, d);
}

NodeId Tape::sum_all(NodeId x) {
  Mat m(1, 1);
  m(0, 0) = val(x).sum();
  return push(std::move(m), Op::kSumAll, requires_grad(x), x);
}

NodeId Tape::broadcast_scalar(NodeId s, int rows, int cols) {
  if (val(s).rows() != 1 || val(s).cols() != 1) {
    throw ShapeError("broadcast_scalar: input must be 1x1");
  }
  return push(Mat::Constant(rows, cols, val(s)(0, 0)), Op::kBroadcastScalar,
              requires_grad(s), s);
}

NodeId Tape::row_sum(NodeId x) {
  return push(val(x).rowwise().sum(), Op::kRowSum, requires_grad(x), x);
}

NodeId Tape::broadcast_col(NodeId x, int cols) {
  if (val(x).cols() != 1) throw ShapeError("broadcast_col: input must be a column");
  return push(val(x).replicate(1, cols), Op::kBroadcastCol, requires_grad(x), x);
}

NodeId Tape::col_sum(NodeId x) {
  return push(val(x).colwise().sum(), Op::kColSum, requires_grad(x), x);
}

NodeId Tape::broadcast_row(NodeId x, int rows) {
  if (val(x).rows() != 1) throw ShapeError("broadcast_row: input must be a row");
  return push(val(x).replicate(rows, 1), Op::kBroadcastRow, requires_grad(x), x);
}

NodeId Tape::gather(NodeId x, std::shared_ptr<const IndexTable> table) {
  const Mat& src = val(x);
  if (src.rows() != table->src_rows || src.cols() != table->src_cols) {
    throw ShapeError("gather: input does not match table source shape");
  }
  Mat dst(table->dst_rows, table->dst_cols);
  const int dc = table->dst_cols;
  const int sc = table->src_cols;
  for (int r = 0; r < table->dst_rows; ++r) {
    for (int c = 0; c < dc; ++c) {
      const std::int64_t s = table->src[static_cast<std::size_t>(r) * dc + c];
      dst(r, c) = s < 0 ? 0.0 : src(static_cast<int>(s / sc), static_cast<int>(s % sc));
    }
  }
  return push(std::move(dst), Op::kGather, requires_grad(x), x, kNoNode, 0, 0, table);
}

NodeId Tape::scatter(NodeId x, std::shared_ptr<const IndexTable> table) {
  const Mat& src = val(x);
  if (src.rows() != table->dst_rows || src.cols() != table->dst_cols) {
    throw ShapeError("scatter: input does not match table destination shape");
  }
  Mat dst = Mat::Zero(table->src_rows, table->src_cols);
  const int dc = table->dst_cols;
  const int sc = table->src_cols;
  for (int r = 0; r < table->dst_rows; ++r) {
    for (int c = 0; c < dc; ++c) {
      const std::int64_t s = table->src[static_cast<std::size_t>(r) * dc + c];
      if (s >= 0) dst(static_cast<int>(s / sc), static_cast<int>(s % sc)) += src(r, c);
    }
  }
  return push(std::move(dst), Op::kScatter, requires_grad(x), x, kNoNode, 0, 0, table);
}

NodeId Tape::stop_grad(NodeId x) {
  return push(val(x), Op::kStopGrad, false, x);
}

std::vector<NodeId> Tape::grad(NodeId out, const std::vector<NodeId>& wrt,
                               bool create_graph) {
  if (val(out).rows() != 1 || val(out).cols() != 1) {
    throw ShapeError("grad: output must be a 1x1 scalar");
  }
  const NodeId top = out;
  std::vector<NodeId> gmap(static_cast<std::size_t>(top) + 1, kNoNode);
  gmap[top] = constant(1.0);

  auto accum = [&](NodeId parent, NodeId contrib) {
    if (parent == kNoNode || !nodes_[parent].requires_grad) return;
    gmap[parent] = gmap[parent] == kNoNode ? contrib : add(gmap[parent], contrib);
  };

  for (NodeId id = top; id >= 0; --id) {
    const NodeId g = gmap[id];
    if (g == kNoNode || !nodes_[id].requires_grad) continue;
    // Copy fields; push() may reallocate node storage.
    const Op op = nodes_[id].op;
    const NodeId a = nodes_[id].a;
    const NodeId b = nodes_[id].b;
    const double c = nodes_[id].c;
    auto table = nodes_[id].table;
    switch (op) {
      case Op::kLeaf:
      case Op::kConst:
      case Op::kStopGrad:
        break;
      case Op::kAdd:
        accum(a, g);
        accum(b, g);
        break;
      case Op::kSub:
        accum(a, g);
        accum(b, neg(g));
        break;
      case Op::kMul:
        accum(a, mul(g, b));
        accum(b, mul(g, a));
        break;
      case Op::kMatMul:
        accum(a, matmul(g, transpose(b)));
        accum(b, matmul(transpose(a), g));
        break;
      case Op::kTranspose:
        accum(a, transpose(g));
        break;
      case Op::kExp:
        accum(a, mul(g, id));
        break;
      case Op::kLog:
        accum(a, mul(g, pow(a, -1.0)));
        break;
      case Op::kTanh: {
        // d tanh = 1 - tanh^2, expressed through this node's own value so
        // higher-order derivatives remain exact.
        NodeId one_minus_sq = affine(mul(id, id), -1.0, 1.0);
        accum(a, mul(g, one_minus_sq));
        break;
      }
      case Op::kRelu: {
        Mat mask = (val(a).array() > 0.0).cast<double>().matrix();
        accum(a, mul(g, constant(std::move(mask))));
        break;
      }
      case Op::kPow:
        accum(a, mul(g, scale(pow(a, c - 1.0), c)));
        break;
      case Op::kAffine:
        accum(a, scale(g, c));
        break;
      case Op::kSumAll:
        accum(a, broadcast_scalar(g, static_cast<int>(val(a).rows()),
                                  static_cast<int>(val(a).cols())));
        break;
      case Op::kBroadcastScalar:
        accum(a, sum_all(g));
        break;
      case Op::kRowSum:
        accum(a, broadcast_col(g, static_cast<int>(val(a).cols())));
        break;
      case Op::kBroadcastCol:
        accum(a, row_sum(g));
        break;
      case Op::kColSum:
        accum(a, broadcast_row(g, static_cast<int>(val(a).rows())));
        break;
      case Op::kBroadcastRow:
        accum(a, col_sum(g));
        break;
      case Op::kGather:
        accum(a, scatter(g, table));
        break;
      case Op::kScatter:
        accum(a, gather(g, table));
        break;
    }
  }

  std::vector<NodeId> result;
  result.reserve(wrt.size());
  for (NodeId w : wrt) {
    NodeId gw = (w <= top) ? gmap[w] : kNoNode;
    if (gw == kNoNode) {
      gw = constant(Mat::Zero(val(w).rows(), val(w).cols()));
    }
    result.push_back(create_graph ? gw : detached(gw));
  }
  return result;
}

NodeId logsumexp_rows(Tape& t, NodeId x) {
  const Mat& v = t.val(x);
  const int cols = static_cast<int>(v.cols());
  NodeId m = t.constant(Mat(v.rowwise().maxCoeff()));
  NodeId shifted = t.sub(x, t.broadcast_col(m, cols));
  NodeId s = t.row_sum(t.exp(shifted));
  return t.add(t.log(s), m);
}

NodeId softmax_rows(Tape& t, NodeId x) {
  const Mat& v = t.val(x);
  const int cols = static_cast<int>(v.cols());
  NodeId m = t.constant(Mat(v.rowwise().maxCoeff()));
  NodeId e = t.exp(t.sub(x, t.broadcast_col(m, cols)));
  NodeId denom = t.pow(t.row_sum(e), -1.0);
  return t.mul(e, t.broadcast_col(denom, cols));
}

NodeId cross_entropy(Tape& t, NodeId logits, const std::vector<int>& labels) {
  const Mat& v = t.val(logits);
  const int rows = static_cast<int>(v.rows());
  const int cols = static_cast<int>(v.cols());
  if (rows != static_cast<int>(labels.size())) {
    throw ShapeError("cross_entropy: logit rows and label count disagree");
  }
  Mat onehot = Mat::Zero(rows, cols);
  for (int i = 0; i < rows; ++i) {
    if (labels[i] < 0 || labels[i] >= cols) {
      throw ShapeError("cross_entropy: label out of range");
    }
    onehot(i, labels[i]) = 1.0;
  }
  NodeId picked = t.row_sum(t.mul(logits, t.constant(std::move(onehot))));
  NodeId per_row = t.sub(logsumexp_rows(t, logits), picked);
  return t.scale(t.sum_all(per_row), 1.0 / rows);
}

NodeId normalize_rows(Tape& t, NodeId x, double eps) {
  const int cols = static_cast<int>(t.val(x).cols());
  NodeId sq = t.row_sum(t.mul(x, x));
  NodeId inv_norm = t.pow(t.affine(sq, 1.0, eps * eps), -0.5);
  return t.mul(x, t.broadcast_col(inv_norm, cols));
}

double accuracy(const Mat& logits, const std::vector<int>& labels) {
  int correct = 0;
  for (int i = 0; i < logits.rows(); ++i) {
    int arg = 0;
    logits.row(i).maxCoeff(&arg);
    if (arg == labels[i]) ++correct;
  }
  return logits.rows() == 0 ? 0.0 : static_cast<double>(correct) / logits.rows();
}

}  // namespace fsps::graph
