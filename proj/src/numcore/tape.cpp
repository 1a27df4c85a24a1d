#include "ucf/numcore/tape.hpp"

#include <algorithm>
#include <cmath>

#include "ucf/error.hpp"

namespace ucf::num {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kLeaf: return "leaf";
    case Op::kMatMul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kAddRow: return "add-row";
    case Op::kSub: return "sub";
    case Op::kHadamard: return "hadamard";
    case Op::kMulCol: return "mul-col";
    case Op::kScale: return "scale";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kRelu: return "relu";
    case Op::kSoftmaxRows: return "softmax-rows";
    case Op::kLogSoftmaxRows: return "log-softmax-rows";
    case Op::kL2NormRows: return "l2norm-rows";
    case Op::kMeanRows: return "mean-rows";
    case Op::kRowSums: return "row-sums";
    case Op::kSum: return "sum";
    case Op::kConcatCols: return "concat-cols";
    case Op::kSliceCols: return "slice-cols";
    case Op::kSliceRows: return "slice-rows";
    case Op::kTranspose: return "transpose";
  }
  return "?";
}

namespace {

void require_same(const Matrix& a, const Matrix& b, std::string_view what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + " shape mismatch: " + a.shape_str() + " vs " +
                     b.shape_str());
  }
}

template <typename F>
Matrix map(const Matrix& a, F f) {
  Matrix out(a.rows(), a.cols());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// out += a * b^T
void add_matmul_nt(const Matrix& a, const Matrix& b, Matrix& out) {
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto br = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < ar.size(); ++k) s += ar[k] * br[k];
      out(i, j) += s;
    }
  }
}

// out += a^T * b
void add_matmul_tn(const Matrix& a, const Matrix& b, Matrix& out) {
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto ar = a.row(k);
    auto br = b.row(k);
    for (std::size_t i = 0; i < ar.size(); ++i) {
      const double aki = ar[i];
      if (aki == 0.0) continue;
      double* orow = out.row(i).data();
      for (std::size_t j = 0; j < br.size(); ++j) orow[j] += aki * br[j];
    }
  }
}

}  // namespace

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Matrix value) {
  Node n = make_node(Op::kConstant);
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::leaf(Matrix value) {
  Node n = make_node(Op::kLeaf);
  n.value = std::move(value);
  n.needs_grad = true;
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  Node n = make_node(Op::kMatMul, a.id, b.id);
  n.value = num::matmul(value(a), value(b));
  n.needs_grad = needs(a) || needs(b);
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  require_same(value(a), value(b), "add");
  Node n = make_node(Op::kAdd, a.id, b.id);
  n.value = value(a);
  auto dst = n.value.data();
  auto src = value(b).data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  n.needs_grad = needs(a) || needs(b);
  return push(std::move(n));
}

Var Tape::add_row(Var a, Var row) {
  const Matrix& r = value(row);
  if (r.rows() != 1 || r.cols() != value(a).cols()) {
    throw ShapeError("add_row shape mismatch: " + value(a).shape_str() + " + " + r.shape_str());
  }
  Node n = make_node(Op::kAddRow, a.id, row.id);
  n.value = value(a);
  for (std::size_t i = 0; i < n.value.rows(); ++i) {
    auto dst = n.value.row(i);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += r(0, j);
  }
  n.needs_grad = needs(a) || needs(row);
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  require_same(value(a), value(b), "sub");
  Node n = make_node(Op::kSub, a.id, b.id);
  n.value = value(a);
  auto dst = n.value.data();
  auto src = value(b).data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= src[i];
  n.needs_grad = needs(a) || needs(b);
  return push(std::move(n));
}

Var Tape::hadamard(Var a, Var b) {
  require_same(value(a), value(b), "hadamard");
  Node n = make_node(Op::kHadamard, a.id, b.id);
  n.value = value(a);
  auto dst = n.value.data();
  auto src = value(b).data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] *= src[i];
  n.needs_grad = needs(a) || needs(b);
  return push(std::move(n));
}

Var Tape::mul_col(Var a, Var col) {
  const Matrix& c = value(col);
  if (c.cols() != 1 || c.rows() != value(a).rows()) {
    throw ShapeError("mul_col shape mismatch: " + value(a).shape_str() + " * " + c.shape_str());
  }
  Node n = make_node(Op::kMulCol, a.id, col.id);
  n.value = value(a);
  for (std::size_t i = 0; i < n.value.rows(); ++i)
    for (double& v : n.value.row(i)) v *= c(i, 0);
  n.needs_grad = needs(a) || needs(col);
  return push(std::move(n));
}

Var Tape::scale(Var a, double s) {
  Node n = make_node(Op::kScale, a.id);
  n.value = map(value(a), [s](double x) { return x * s; });
  n.scalar = s;
  n.needs_grad = needs(a);
  return push(std::move(n));
}

Var Tape::tanh(Var a) {
  Node n = make_node(Op::kTanh, a.id);
  n.value = map(value(a), [](double x) { return std::tanh(x); });
  n.needs_grad = needs(a);
  return push(std::move(n));
}

Var Tape::sigmoid(Var a) {
  Node n = make_node(Op::kSigmoid, a.id);
  n.value = map(value(a), sigmoid_scalar);
  n.needs_grad = needs(a);
  return push(std::move(n));
}

Var Tape::exp(Var a) {
  Node n = make_node(Op::kExp, a.id);
  n.value = map(value(a), [](double x) { return std::exp(x); });
  n.needs_grad = needs(a);
  return push(std::move(n));
}

Var Tape::log(Var a) {
  Node n = make_node(Op::kLog, a.id);
  n.value = map(value(a), [](double x) { return std::log(x); });
  n.needs_grad = needs(a);
  return push(std::move(n));
}

Var Tape::relu(Var a) {
  Node n = make_node(Op::kRelu, a.id);
  n.value = map(value(a), [](double x) { return x > 0.0 ? x : 0.0; });
  n.needs_grad = needs(a);
  return push(std::move(n));
}

Var Tape::softmax_rows(Var a) {
  Node n = make_node(Op::kSoftmaxRows, a.id);
  n.value = num::softmax_rows(value(a));
  n.needs_grad = needs(a);
  return push(std::move(n));
}

Var Tape::log_softmax_rows(Var a, const Matrix& mask) {
  const Matrix& x = value(a);
  Matrix m = mask.empty() ? Matrix(x.rows(), x.cols(), 1.0) : mask;
  require_same(x, m, "log_softmax_rows mask");
  Node n = make_node(Op::kLogSoftmaxRows, a.id);
  n.value = Matrix(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < x.cols(); ++j)
      if (m(i, j) != 0.0) mx = std::max(mx, x(i, j));
    if (mx == -INFINITY) continue;
    double total = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j)
      if (m(i, j) != 0.0) total += std::exp(x(i, j) - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < x.cols(); ++j)
      if (m(i, j) != 0.0) n.value(i, j) = x(i, j) - lse;
  }
  n.aux = std::move(m);
  n.needs_grad = needs(a);
  return push(std::move(n));
}

Var Tape::l2_normalize_rows(Var a) {
  const Matrix& x = value(a);
  Node n = make_node(Op::kL2NormRows, a.id);
  n.value = num::l2_normalize_rows(x);
  n.aux = Matrix(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double ss = 0.0;
    for (double v : x.row(i)) ss += v * v;
    n.aux(i, 0) = std::sqrt(ss);
  }
  n.needs_grad = needs(a);
  return push(std::move(n));
}

Var Tape::mean_rows(Var a) {
  Node n = make_node(Op::kMeanRows, a.id);
  n.value = num::mean_rows(value(a));
  n.needs_grad = needs(a);
  return push(std::move(n));
}

Var Tape::row_sums(Var a) {
  const Matrix& x = value(a);
  Node n = make_node(Op::kRowSums, a.id);
  n.value = Matrix(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (double v : x.row(i)) s += v;
    n.value(i, 0) = s;
  }
  n.needs_grad = needs(a);
  return push(std::move(n));
}

Var Tape::sum(Var a) {
  Node n = make_node(Op::kSum, a.id);
  double s = 0.0;
  for (double v : value(a).data()) s += v;
  n.value = Matrix(1, 1, s);
  n.needs_grad = needs(a);
  return push(std::move(n));
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols needs at least one input");
  const std::size_t rows = value(parts[0]).rows();
  std::size_t cols = 0;
  for (Var p : parts) {
    if (value(p).rows() != rows) {
      throw ShapeError("concat_cols row mismatch: " + value(parts[0]).shape_str() + " vs " +
                       value(p).shape_str());
    }
    cols += value(p).cols();
  }
  Node n = make_node(Op::kConcatCols);
  n.value = Matrix(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Matrix& v = value(p);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) n.value(i, offset + j) = v(i, j);
    offset += v.cols();
    n.ins.push_back(p.id);
    n.needs_grad = n.needs_grad || needs(p);
  }
  return push(std::move(n));
}

Var Tape::slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Matrix& x = value(a);
  if (begin >= end || end > x.cols()) {
    throw ShapeError("slice_cols [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of range for " + x.shape_str());
  }
  Node n = make_node(Op::kSliceCols, a.id);
  n.begin = begin;
  n.value = Matrix(x.rows(), end - begin);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = begin; j < end; ++j) n.value(i, j - begin) = x(i, j);
  n.needs_grad = needs(a);
  return push(std::move(n));
}

Var Tape::slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Matrix& x = value(a);
  if (begin >= end || end > x.rows()) {
    throw ShapeError("slice_rows [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of range for " + x.shape_str());
  }
  Node n = make_node(Op::kSliceRows, a.id);
  n.begin = begin;
  n.value = Matrix(end - begin, x.cols());
  for (std::size_t i = begin; i < end; ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) n.value(i - begin, j) = x(i, j);
  n.needs_grad = needs(a);
  return push(std::move(n));
}

Var Tape::transpose(Var a) {
  Node n = make_node(Op::kTranspose, a.id);
  n.value = num::transpose(value(a));
  n.needs_grad = needs(a);
  return push(std::move(n));
}

double Tape::scalar(Var v) const {
  const Matrix& m = value(v);
  if (m.rows() != 1 || m.cols() != 1) {
    throw ContractError("scalar() on non-scalar node of shape " + m.shape_str());
  }
  return m(0, 0);
}

Matrix Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix& Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  if (!nodes_[id].needs_grad) return;
  Matrix& dst = grad_slot(id);
  auto d = dst.data();
  auto s = g.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

void Tape::zero_grad() {
  for (auto& n : nodes_) n.grad = Matrix();
  stale_ = false;
}

void Tape::backward(Var output) {
  const Matrix& out = value(output);
  if (out.rows() != 1 || out.cols() != 1) {
    throw ContractError("backward() requires a scalar output, got " + out.shape_str());
  }
  if (stale_) throw ContractError("backward() called again without zero_grad()");
  stale_ = true;
  if (!nodes_[output.id].needs_grad) return;
  grad_slot(output.id)(0, 0) = 1.0;

  for (std::size_t id = output.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) continue;
    const Matrix& g = n.grad;
    const Matrix& y = n.value;

    switch (n.op) {
      case Op::kConstant:
      case Op::kLeaf:
        break;
      case Op::kMatMul: {
        const Matrix& a = nodes_[n.in0].value;
        const Matrix& b = nodes_[n.in1].value;
        if (nodes_[n.in0].needs_grad) add_matmul_nt(g, b, grad_slot(n.in0));
        if (nodes_[n.in1].needs_grad) add_matmul_tn(a, g, grad_slot(n.in1));
        break;
      }
      case Op::kAdd:
        accumulate(n.in0, g);
        accumulate(n.in1, g);
        break;
      case Op::kAddRow: {
        accumulate(n.in0, g);
        if (nodes_[n.in1].needs_grad) {
          Matrix& dr = grad_slot(n.in1);
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) dr(0, j) += g(i, j);
        }
        break;
      }
      case Op::kSub: {
        accumulate(n.in0, g);
        if (nodes_[n.in1].needs_grad) {
          Matrix& d = grad_slot(n.in1);
          for (std::size_t i = 0; i < g.size(); ++i) d.data()[i] -= g.data()[i];
        }
        break;
      }
      case Op::kHadamard: {
        const Matrix& a = nodes_[n.in0].value;
        const Matrix& b = nodes_[n.in1].value;
        if (nodes_[n.in0].needs_grad) {
          Matrix& d = grad_slot(n.in0);
          for (std::size_t i = 0; i < g.size(); ++i) d.data()[i] += g.data()[i] * b.data()[i];
        }
        if (nodes_[n.in1].needs_grad) {
          Matrix& d = grad_slot(n.in1);
          for (std::size_t i = 0; i < g.size(); ++i) d.data()[i] += g.data()[i] * a.data()[i];
        }
        break;
      }
      case Op::kMulCol: {
        const Matrix& a = nodes_[n.in0].value;
        const Matrix& c = nodes_[n.in1].value;
        if (nodes_[n.in0].needs_grad) {
          Matrix& d = grad_slot(n.in0);
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) d(i, j) += g(i, j) * c(i, 0);
        }
        if (nodes_[n.in1].needs_grad) {
          Matrix& d = grad_slot(n.in1);
          for (std::size_t i = 0; i < g.rows(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < g.cols(); ++j) s += g(i, j) * a(i, j);
            d(i, 0) += s;
          }
        }
        break;
      }
      case Op::kScale: {
        if (!nodes_[n.in0].needs_grad) break;
        Matrix& d = grad_slot(n.in0);
        for (std::size_t i = 0; i < g.size(); ++i) d.data()[i] += g.data()[i] * n.scalar;
        break;
      }
      case Op::kTanh: {
        if (!nodes_[n.in0].needs_grad) break;
        Matrix& d = grad_slot(n.in0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double t = y.data()[i];
          d.data()[i] += g.data()[i] * (1.0 - t * t);
        }
        break;
      }
      case Op::kSigmoid: {
        if (!nodes_[n.in0].needs_grad) break;
        Matrix& d = grad_slot(n.in0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double s = y.data()[i];
          d.data()[i] += g.data()[i] * s * (1.0 - s);
        }
        break;
      }
      case Op::kExp: {
        if (!nodes_[n.in0].needs_grad) break;
        Matrix& d = grad_slot(n.in0);
        for (std::size_t i = 0; i < g.size(); ++i) d.data()[i] += g.data()[i] * y.data()[i];
        break;
      }
      case Op::kLog: {
        if (!nodes_[n.in0].needs_grad) break;
        const Matrix& x = nodes_[n.in0].value;
        Matrix& d = grad_slot(n.in0);
        for (std::size_t i = 0; i < g.size(); ++i) d.data()[i] += g.data()[i] / x.data()[i];
        break;
      }
      case Op::kRelu: {
        if (!nodes_[n.in0].needs_grad) break;
        const Matrix& x = nodes_[n.in0].value;
        Matrix& d = grad_slot(n.in0);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x.data()[i] > 0.0) d.data()[i] += g.data()[i];
        break;
      }
      case Op::kSoftmaxRows: {
        if (!nodes_[n.in0].needs_grad) break;
        Matrix& d = grad_slot(n.in0);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * y(i, j);
          for (std::size_t j = 0; j < g.cols(); ++j) d(i, j) += y(i, j) * (g(i, j) - dot);
        }
        break;
      }
      case Op::kLogSoftmaxRows: {
        if (!nodes_[n.in0].needs_grad) break;
        const Matrix& mask = n.aux;
        Matrix& d = grad_slot(n.in0);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          double gsum = 0.0;
          for (std::size_t j = 0; j < g.cols(); ++j)
            if (mask(i, j) != 0.0) gsum += g(i, j);
          for (std::size_t j = 0; j < g.cols(); ++j)
            if (mask(i, j) != 0.0) d(i, j) += g(i, j) - std::exp(y(i, j)) * gsum;
        }
        break;
      }
      case Op::kL2NormRows: {
        if (!nodes_[n.in0].needs_grad) break;
        Matrix& d = grad_slot(n.in0);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          const double norm = n.aux(i, 0);
          if (norm < kNormFloor) continue;
          double dot = 0.0;
          for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * y(i, j);
          for (std::size_t j = 0; j < g.cols(); ++j) d(i, j) += (g(i, j) - y(i, j) * dot) / norm;
        }
        break;
      }
      case Op::kMeanRows: {
        if (!nodes_[n.in0].needs_grad) break;
        Matrix& d = grad_slot(n.in0);
        const double inv = 1.0 / static_cast<double>(d.rows());
        for (std::size_t i = 0; i < d.rows(); ++i)
          for (std::size_t j = 0; j < d.cols(); ++j) d(i, j) += g(0, j) * inv;
        break;
      }
      case Op::kRowSums: {
        if (!nodes_[n.in0].needs_grad) break;
        Matrix& d = grad_slot(n.in0);
        for (std::size_t i = 0; i < d.rows(); ++i)
          for (std::size_t j = 0; j < d.cols(); ++j) d(i, j) += g(i, 0);
        break;
      }
      case Op::kSum: {
        if (!nodes_[n.in0].needs_grad) break;
        Matrix& d = grad_slot(n.in0);
        for (double& v : d.data()) v += g(0, 0);
        break;
      }
      case Op::kConcatCols: {
        std::size_t offset = 0;
        for (std::size_t in : n.ins) {
          const std::size_t w = nodes_[in].value.cols();
          if (nodes_[in].needs_grad) {
            Matrix& d = grad_slot(in);
            for (std::size_t i = 0; i < g.rows(); ++i)
              for (std::size_t j = 0; j < w; ++j) d(i, j) += g(i, offset + j);
          }
          offset += w;
        }
        break;
      }
      case Op::kSliceCols: {
        if (!nodes_[n.in0].needs_grad) break;
        Matrix& d = grad_slot(n.in0);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) d(i, n.begin + j) += g(i, j);
        break;
      }
      case Op::kSliceRows: {
        if (!nodes_[n.in0].needs_grad) break;
        Matrix& d = grad_slot(n.in0);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) d(n.begin + i, j) += g(i, j);
        break;
      }
      case Op::kTranspose: {
        if (!nodes_[n.in0].needs_grad) break;
        Matrix& d = grad_slot(n.in0);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < g.cols(); ++j) d(j, i) += g(i, j);
        break;
      }
    }
  }
}

}  // namespace ucf::num
