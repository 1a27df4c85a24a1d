#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "ucf/numcore/matrix.hpp"

namespace ucf::num {

enum class Op {
  kConstant,
  kLeaf,
  kMatMul,
  kAdd,
  kAddRow,  // n x c plus a broadcast 1 x c row
  kSub,
  kHadamard,
  kMulCol,  // n x c times a broadcast n x 1 column
  kScale,
  kTanh,
  kSigmoid,
  kExp,
  kLog,
  kRelu,
  kSoftmaxRows,
  kLogSoftmaxRows,  // optionally masked
  kL2NormRows,
  kMeanRows,
  kRowSums,
  kSum,
  kConcatCols,
  kSliceCols,
  kSliceRows,
  kTranspose,
};

std::string_view op_name(Op op);

// Handle to a node on a Tape. Only meaningful for the tape that created it.
struct Var {
  std::size_t id = 0;
};

// Reverse-mode automatic differentiation over dense matrices.
//
// Nodes are appended in evaluation order, so the node vector is already a
// topological order and backward() walks it once in reverse. A tape belongs to
// one thread. Gradients accumulate into every node that depends on a leaf; a
// second backward() without zero_grad() in between is a ContractError.
class Tape {
 public:
  Var constant(Matrix value);
  Var leaf(Matrix value);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var add_row(Var a, Var row);
  Var sub(Var a, Var b);
  Var hadamard(Var a, Var b);
  Var mul_col(Var a, Var col);
  Var scale(Var a, double s);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var relu(Var a);
  Var softmax_rows(Var a);
  // Entries where mask == 0 are excluded from the normalizer, produce 0 and
  // receive no gradient. An empty mask means "all included".
  Var log_softmax_rows(Var a, const Matrix& mask = {});
  Var l2_normalize_rows(Var a);
  Var mean_rows(Var a);
  Var row_sums(Var a);
  Var sum(Var a);
  Var concat_cols(std::span<const Var> parts);
  Var slice_cols(Var a, std::size_t begin, std::size_t end);
  Var slice_rows(Var a, std::size_t begin, std::size_t end);
  Var transpose(Var a);

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  double scalar(Var v) const;
  // Gradient of the last backward() output w.r.t. `v`. Zero-filled when `v`
  // does not influence the output.
  Matrix grad(Var v) const;
  Op op(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  void backward(Var output);
  void zero_grad();

 private:
  struct Node {
    Op op = Op::kConstant;
    std::size_t in0 = 0;
    std::size_t in1 = 0;
    std::vector<std::size_t> ins;  // concat only
    Matrix value;
    Matrix grad;
    Matrix aux;  // mask or cached forward quantity
    double scalar = 0.0;
    std::size_t begin = 0;
    bool needs_grad = false;
  };

  static Node make_node(Op op, std::size_t in0 = 0, std::size_t in1 = 0) {
    Node n;
    n.op = op;
    n.in0 = in0;
    n.in1 = in1;
    return n;
  }
  Var push(Node node);
  const Node& node(Var v) const { return nodes_.at(v.id); }
  bool needs(Var v) const { return nodes_.at(v.id).needs_grad; }
  void accumulate(std::size_t id, const Matrix& g);
  Matrix& grad_slot(std::size_t id);

  std::vector<Node> nodes_;
  bool stale_ = false;
};

}  // namespace ucf::num
