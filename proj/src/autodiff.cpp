// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#include "ins/autodiff.h"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>
#include <utility>

namespace ins::ad {

namespace {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatrixRM>;
using MapC = Eigen::Map<const MatrixRM>;

MapC as_mat(const Tensor& t, int rows, int cols) { return MapC(t.data(), rows, cols); }
MapM as_mat(Tensor& t, int rows, int cols) { return MapM(t.data(), rows, cols); }

std::shared_ptr<Node> make_node(Tensor value, std::vector<std::shared_ptr<Node>> parents,
                                std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backprop = std::move(backprop);
  return n;
}

void check_same_shape(const Value& a, const Value& b, const char* op) {
  if (!a.val().same_shape(b.val()))
    throw ArgumentError(std::string(op) + ": shape mismatch " + shape_str(a.val().shape()) +
                        " vs " + shape_str(b.val().shape()));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

void Node::ensure_grad() {
  if (!grad.defined()) grad = Tensor::zeros(value.shape());
}

Value leaf(Tensor v, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = requires_grad;
  return Value(n);
}

Value constant(Tensor v) { return leaf(std::move(v), false); }

Value detach(const Value& a) { return constant(a.val()); }

Value add(const Value& a, const Value& b) {
  check_same_shape(a, b, "add");
  Tensor out = a.val();
  const double* bd = b.val().data();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += bd[i];
  return Value(make_node(std::move(out), {a.ptr(), b.ptr()}, [](Node& n) {
    for (auto& p : n.parents) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (int64_t i = 0; i < n.grad.numel(); ++i) p->grad[i] += n.grad[i];
    }
  }));
}

Value sub(const Value& a, const Value& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a.val();
  const double* bd = b.val().data();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= bd[i];
  return Value(make_node(std::move(out), {a.ptr(), b.ptr()}, [](Node& n) {
    Node* pa = n.parents[0].get();
    Node* pb = n.parents[1].get();
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (int64_t i = 0; i < n.grad.numel(); ++i) pa->grad[i] += n.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (int64_t i = 0; i < n.grad.numel(); ++i) pb->grad[i] -= n.grad[i];
    }
  }));
}

Value mul(const Value& a, const Value& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a.val();
  const double* bd = b.val().data();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= bd[i];
  return Value(make_node(std::move(out), {a.ptr(), b.ptr()}, [](Node& n) {
    Node* pa = n.parents[0].get();
    Node* pb = n.parents[1].get();
    if (pa->requires_grad) {
      pa->ensure_grad();
      const double* bv = pb->value.data();
      for (int64_t i = 0; i < n.grad.numel(); ++i) pa->grad[i] += n.grad[i] * bv[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      const double* av = pa->value.data();
      for (int64_t i = 0; i < n.grad.numel(); ++i) pb->grad[i] += n.grad[i] * av[i];
    }
  }));
}

Value div(const Value& a, const Value& b) {
  check_same_shape(a, b, "div");
  Tensor out = a.val();
  const double* bd = b.val().data();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] /= bd[i];
  return Value(make_node(std::move(out), {a.ptr(), b.ptr()}, [](Node& n) {
    Node* pa = n.parents[0].get();
    Node* pb = n.parents[1].get();
    const double* av = pa->value.data();
    const double* bv = pb->value.data();
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (int64_t i = 0; i < n.grad.numel(); ++i) pa->grad[i] += n.grad[i] / bv[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (int64_t i = 0; i < n.grad.numel(); ++i)
        pb->grad[i] -= n.grad[i] * av[i] / (bv[i] * bv[i]);
    }
  }));
}

Value add_rowvec(const Value& m, const Value& row) {
  const Tensor& mv = m.val();
  const Tensor& rv = row.val();
  const int cols = mv.cols();
  if (rv.numel() != cols)
    throw ArgumentError("add_rowvec: row length " + std::to_string(rv.numel()) +
                        " vs cols " + std::to_string(cols));
  Tensor out = mv;
  const int rows = mv.rows();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out[static_cast<int64_t>(r) * cols + c] += rv[c];
  return Value(make_node(std::move(out), {m.ptr(), row.ptr()}, [rows, cols](Node& n) {
    Node* pm = n.parents[0].get();
    Node* pr = n.parents[1].get();
    if (pm->requires_grad) {
      pm->ensure_grad();
      for (int64_t i = 0; i < n.grad.numel(); ++i) pm->grad[i] += n.grad[i];
    }
    if (pr->requires_grad) {
      pr->ensure_grad();
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) pr->grad[c] += n.grad[static_cast<int64_t>(r) * cols + c];
    }
  }));
}

Value scale(const Value& a, double s) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return Value(make_node(std::move(out), {a.ptr()}, [s](Node& n) {
    Node* p = n.parents[0].get();
    p->ensure_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i) p->grad[i] += s * n.grad[i];
  }));
}

Value add_scalar(const Value& a, double s) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += s;
  return Value(make_node(std::move(out), {a.ptr()}, [](Node& n) {
    Node* p = n.parents[0].get();
    p->ensure_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i) p->grad[i] += n.grad[i];
  }));
}

Value rsub_scalar(double s, const Value& a) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = s - out[i];
  return Value(make_node(std::move(out), {a.ptr()}, [](Node& n) {
    Node* p = n.parents[0].get();
    p->ensure_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i) p->grad[i] -= n.grad[i];
  }));
}

Value mul_const(const Value& a, const Tensor& c) {
  if (!a.val().same_shape(c)) throw ArgumentError("mul_const: shape mismatch");
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c[i];
  Tensor cc = c;
  return Value(make_node(std::move(out), {a.ptr()}, [cc = std::move(cc)](Node& n) {
    Node* p = n.parents[0].get();
    p->ensure_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i) p->grad[i] += n.grad[i] * cc[i];
  }));
}

Value clamp_min(const Value& a, double lo) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(out[i], lo);
  return Value(make_node(std::move(out), {a.ptr()}, [lo](Node& n) {
    Node* p = n.parents[0].get();
    p->ensure_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      if (p->value[i] > lo) p->grad[i] += n.grad[i];
  }));
}

Value sin_op(const Value& a) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::sin(out[i]);
  return Value(make_node(std::move(out), {a.ptr()}, [](Node& n) {
    Node* p = n.parents[0].get();
    p->ensure_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i) p->grad[i] += n.grad[i] * std::cos(p->value[i]);
  }));
}

Value exp_op(const Value& a) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
  return Value(make_node(std::move(out), {a.ptr()}, [](Node& n) {
    Node* p = n.parents[0].get();
    p->ensure_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i) p->grad[i] += n.grad[i] * n.value[i];
  }));
}

Value relu(const Value& a) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(out[i], 0.0);
  return Value(make_node(std::move(out), {a.ptr()}, [](Node& n) {
    Node* p = n.parents[0].get();
    p->ensure_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      if (p->value[i] > 0.0) p->grad[i] += n.grad[i];
  }));
}

Value softplus(const Value& a, double beta) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) {
    const double bx = beta * out[i];
    out[i] = bx > 30.0 ? out[i] : std::log1p(std::exp(bx)) / beta;
  }
  return Value(make_node(std::move(out), {a.ptr()}, [beta](Node& n) {
    Node* p = n.parents[0].get();
    p->ensure_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      p->grad[i] += n.grad[i] * stable_sigmoid(beta * p->value[i]);
  }));
}

Value sigmoid(const Value& a) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = stable_sigmoid(out[i]);
  return Value(make_node(std::move(out), {a.ptr()}, [](Node& n) {
    Node* p = n.parents[0].get();
    p->ensure_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i)
      p->grad[i] += n.grad[i] * n.value[i] * (1.0 - n.value[i]);
  }));
}

Value abs_op(const Value& a) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::abs(out[i]);
  return Value(make_node(std::move(out), {a.ptr()}, [](Node& n) {
    Node* p = n.parents[0].get();
    p->ensure_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i) {
      const double v = p->value[i];
      // Subgradient 0 at ties.
      p->grad[i] += n.grad[i] * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
    }
  }));
}

Value square(const Value& a) {
  Tensor out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= out[i];
  return Value(make_node(std::move(out), {a.ptr()}, [](Node& n) {
    Node* p = n.parents[0].get();
    p->ensure_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i) p->grad[i] += 2.0 * n.grad[i] * p->value[i];
  }));
}

Value matmul(const Value& a, const Value& b) {
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows())
    throw ArgumentError("matmul: incompatible shapes " + shape_str(av.shape()) + " x " +
                        shape_str(bv.shape()));
  const int n = av.rows(), k = av.cols(), m = bv.cols();
  Tensor out({n, m});
  // lazyProduct keeps per-row accumulation order independent of the batch
  // size, so batched and one-at-a-time forwards are bit-identical.
  as_mat(out, n, m).noalias() = as_mat(av, n, k).lazyProduct(as_mat(bv, k, m));
  return Value(make_node(std::move(out), {a.ptr(), b.ptr()}, [n, k, m](Node& node) {
    Node* pa = node.parents[0].get();
    Node* pb = node.parents[1].get();
    const Tensor& gt = node.grad;
    MapC g = as_mat(gt, n, m);
    if (pa->requires_grad) {
      pa->ensure_grad();
      as_mat(pa->grad, n, k).noalias() += g * as_mat(pb->value, k, m).transpose();
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      as_mat(pb->grad, k, m).noalias() += as_mat(pa->value, n, k).transpose() * g;
    }
  }));
}

Value matmul_nt(const Value& a, const Value& b) {
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.cols())
    throw ArgumentError("matmul_nt: incompatible shapes " + shape_str(av.shape()) + " x " +
                        shape_str(bv.shape()) + "^T");
  const int n = av.rows(), k = av.cols(), m = bv.rows();
  Tensor out({n, m});
  as_mat(out, n, m).noalias() = as_mat(av, n, k).lazyProduct(as_mat(bv, m, k).transpose());
  return Value(make_node(std::move(out), {a.ptr(), b.ptr()}, [n, k, m](Node& node) {
    Node* pa = node.parents[0].get();
    Node* pb = node.parents[1].get();
    const Tensor& gt = node.grad;
    MapC g = as_mat(gt, n, m);
    if (pa->requires_grad) {
      pa->ensure_grad();
      as_mat(pa->grad, n, k).noalias() += g * as_mat(pb->value, m, k);
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      as_mat(pb->grad, m, k).noalias() += g.transpose() * as_mat(pa->value, n, k);
    }
  }));
}

Value reshape(const Value& a, std::vector<int> shape) {
  Tensor out = a.val().reshaped(std::move(shape));
  return Value(make_node(std::move(out), {a.ptr()}, [](Node& n) {
    Node* p = n.parents[0].get();
    p->ensure_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i) p->grad[i] += n.grad[i];
  }));
}

Value transpose(const Value& a) {
  const Tensor& av = a.val();
  const int n = av.rows(), m = av.cols();
  Tensor out({m, n});
  as_mat(out, m, n) = as_mat(av, n, m).transpose();
  return Value(make_node(std::move(out), {a.ptr()}, [n, m](Node& node) {
    Node* p = node.parents[0].get();
    p->ensure_grad();
    as_mat(p->grad, n, m) += as_mat(node.grad, m, n).transpose();
  }));
}

Value scatter_rows(const Value& a, const std::vector<int>& row_index, int total_rows) {
  const Tensor& av = a.val();
  const int rows = av.rows(), cols = av.cols();
  if (static_cast<int>(row_index.size()) != rows)
    throw ArgumentError("scatter_rows: index count must match rows");
  Tensor out({total_rows, cols});
  for (int r = 0; r < rows; ++r) {
    const int dst = row_index[static_cast<size_t>(r)];
    if (dst < 0 || dst >= total_rows) throw ArgumentError("scatter_rows: index out of range");
    std::memcpy(out.data() + static_cast<int64_t>(dst) * cols,
                av.data() + static_cast<int64_t>(r) * cols,
                sizeof(double) * static_cast<size_t>(cols));
  }
  auto idx = std::make_shared<std::vector<int>>(row_index);
  return Value(make_node(std::move(out), {a.ptr()}, [idx, cols](Node& n) {
    Node* p = n.parents[0].get();
    p->ensure_grad();
    for (size_t r = 0; r < idx->size(); ++r)
      for (int c = 0; c < cols; ++c)
        p->grad[static_cast<int64_t>(r) * cols + c] +=
            n.grad[static_cast<int64_t>((*idx)[r]) * cols + c];
  }));
}

Value concat_cols(const std::vector<Value>& parts) {
  if (parts.empty()) throw ArgumentError("concat_cols: no inputs");
  const int rows = parts[0].val().rows();
  int total = 0;
  std::vector<int> widths;
  for (const auto& p : parts) {
    if (p.val().rank() != 2 || p.val().rows() != rows)
      throw ArgumentError("concat_cols: row mismatch");
    widths.push_back(p.val().cols());
    total += p.val().cols();
  }
  Tensor out({rows, total});
  int off = 0;
  for (size_t i = 0; i < parts.size(); ++i) {
    const Tensor& pv = parts[i].val();
    for (int r = 0; r < rows; ++r)
      std::memcpy(out.data() + static_cast<int64_t>(r) * total + off,
                  pv.data() + static_cast<int64_t>(r) * widths[i],
                  sizeof(double) * static_cast<size_t>(widths[i]));
    off += widths[i];
  }
  std::vector<std::shared_ptr<Node>> parents;
  for (const auto& p : parts) parents.push_back(p.ptr());
  return Value(make_node(std::move(out), std::move(parents), [rows, total, widths](Node& n) {
    int off2 = 0;
    for (size_t i = 0; i < n.parents.size(); ++i) {
      Node* p = n.parents[i].get();
      if (p->requires_grad) {
        p->ensure_grad();
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < widths[i]; ++c)
            p->grad[static_cast<int64_t>(r) * widths[i] + c] +=
                n.grad[static_cast<int64_t>(r) * total + off2 + c];
      }
      off2 += widths[i];
    }
  }));
}

Value slice_cols(const Value& a, int c0, int c1) {
  const Tensor& av = a.val();
  const int rows = av.rows(), cols = av.cols();
  if (c0 < 0 || c1 > cols || c0 >= c1) throw ArgumentError("slice_cols: bad range");
  const int w = c1 - c0;
  Tensor out({rows, w});
  for (int r = 0; r < rows; ++r)
    std::memcpy(out.data() + static_cast<int64_t>(r) * w,
                av.data() + static_cast<int64_t>(r) * cols + c0,
                sizeof(double) * static_cast<size_t>(w));
  return Value(make_node(std::move(out), {a.ptr()}, [rows, cols, c0, w](Node& n) {
    Node* p = n.parents[0].get();
    p->ensure_grad();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < w; ++c)
        p->grad[static_cast<int64_t>(r) * cols + c0 + c] += n.grad[static_cast<int64_t>(r) * w + c];
  }));
}

Value repeat_rows(const Value& row, int n) {
  const Tensor& rv = row.val();
  if (rv.rank() != 2 || rv.rows() != 1) throw ArgumentError("repeat_rows: expected [1,D]");
  const int d = rv.cols();
  Tensor out({n, d});
  for (int r = 0; r < n; ++r)
    std::memcpy(out.data() + static_cast<int64_t>(r) * d, rv.data(),
                sizeof(double) * static_cast<size_t>(d));
  return Value(make_node(std::move(out), {row.ptr()}, [n, d](Node& node) {
    Node* p = node.parents[0].get();
    p->ensure_grad();
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < d; ++c) p->grad[c] += node.grad[static_cast<int64_t>(r) * d + c];
  }));
}

Value sum(const Value& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.val().numel(); ++i) s += a.val()[i];
  return Value(make_node(Tensor::scalar(s), {a.ptr()}, [](Node& n) {
    Node* p = n.parents[0].get();
    p->ensure_grad();
    for (int64_t i = 0; i < p->grad.numel(); ++i) p->grad[i] += n.grad[0];
  }));
}

Value mean(const Value& a) {
  const double inv = 1.0 / static_cast<double>(a.val().numel());
  double s = 0.0;
  for (int64_t i = 0; i < a.val().numel(); ++i) s += a.val()[i];
  return Value(make_node(Tensor::scalar(s * inv), {a.ptr()}, [inv](Node& n) {
    Node* p = n.parents[0].get();
    p->ensure_grad();
    for (int64_t i = 0; i < p->grad.numel(); ++i) p->grad[i] += n.grad[0] * inv;
  }));
}

Value sum_rows(const Value& a) {
  const Tensor& av = a.val();
  const int rows = av.rows(), cols = av.cols();
  Tensor out({rows, 1});
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int c = 0; c < cols; ++c) s += av.at(r, c);
    out[r] = s;
  }
  return Value(make_node(std::move(out), {a.ptr()}, [rows, cols](Node& n) {
    Node* p = n.parents[0].get();
    p->ensure_grad();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) p->grad[static_cast<int64_t>(r) * cols + c] += n.grad[r];
  }));
}

Value cumsum_exclusive_rows(const Value& a) {
  const Tensor& av = a.val();
  const int rows = av.rows(), cols = av.cols();
  Tensor out({rows, cols});
  for (int r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (int c = 0; c < cols; ++c) {
      out.at(r, c) = acc;
      acc += av.at(r, c);
    }
  }
  return Value(make_node(std::move(out), {a.ptr()}, [rows, cols](Node& n) {
    Node* p = n.parents[0].get();
    p->ensure_grad();
    // dL/dx[r,l] = sum_{k>l} g[r,k]: reversed exclusive suffix sum.
    for (int r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (int c = cols - 1; c >= 0; --c) {
        p->grad[static_cast<int64_t>(r) * cols + c] += acc;
        acc += n.grad[static_cast<int64_t>(r) * cols + c];
      }
    }
  }));
}

Value row_weighted_sum(const Value& w, const Value& x) {
  const Tensor& wv = w.val();
  const Tensor& xv = x.val();
  const int rows = wv.rows(), k = wv.cols();
  if (xv.rank() != 2 || xv.rows() != rows * k)
    throw ArgumentError("row_weighted_sum: x rows must equal R*K");
  const int chans = xv.cols();
  Tensor out({rows, chans});
  for (int r = 0; r < rows; ++r)
    for (int s = 0; s < k; ++s) {
      const double ws = wv.at(r, s);
      for (int c = 0; c < chans; ++c)
        out.at(r, c) += ws * xv[static_cast<int64_t>(r * k + s) * chans + c];
    }
  return Value(make_node(std::move(out), {w.ptr(), x.ptr()}, [rows, k, chans](Node& n) {
    Node* pw = n.parents[0].get();
    Node* px = n.parents[1].get();
    if (pw->requires_grad) pw->ensure_grad();
    if (px->requires_grad) px->ensure_grad();
    for (int r = 0; r < rows; ++r)
      for (int s = 0; s < k; ++s) {
        const int64_t xi = static_cast<int64_t>(r * k + s) * chans;
        for (int c = 0; c < chans; ++c) {
          const double g = n.grad[static_cast<int64_t>(r) * chans + c];
          if (pw->requires_grad) pw->grad[static_cast<int64_t>(r) * k + s] += g * px->value[xi + c];
          if (px->requires_grad) px->grad[xi + c] += g * pw->value[static_cast<int64_t>(r) * k + s];
        }
      }
  }));
}

Value posenc(const Value& x, int freq_count, bool include_input) {
  if (freq_count < 0) throw ArgumentError("posenc: negative frequency count");
  const Tensor& xv = x.val();
  const int rows = xv.rows(), d = xv.cols();
  const int out_cols = d * ((include_input ? 1 : 0) + 2 * freq_count);
  if (out_cols == 0) throw ArgumentError("posenc: empty encoding");
  Tensor out({rows, out_cols});
  for (int r = 0; r < rows; ++r) {
    int c = 0;
    const double* xr = xv.data() + static_cast<int64_t>(r) * d;
    double* orow = out.data() + static_cast<int64_t>(r) * out_cols;
    if (include_input)
      for (int i = 0; i < d; ++i) orow[c++] = xr[i];
    double freq = M_PI;
    for (int kf = 0; kf < freq_count; ++kf, freq *= 2.0) {
      for (int i = 0; i < d; ++i) orow[c++] = std::sin(freq * xr[i]);
      for (int i = 0; i < d; ++i) orow[c++] = std::cos(freq * xr[i]);
    }
  }
  return Value(
      make_node(std::move(out), {x.ptr()}, [rows, d, freq_count, include_input, out_cols](Node& n) {
        Node* p = n.parents[0].get();
        p->ensure_grad();
        for (int r = 0; r < rows; ++r) {
          int c = 0;
          const double* xr = p->value.data() + static_cast<int64_t>(r) * d;
          const double* grow = n.grad.data() + static_cast<int64_t>(r) * out_cols;
          double* gx = p->grad.data() + static_cast<int64_t>(r) * d;
          if (include_input)
            for (int i = 0; i < d; ++i) gx[i] += grow[c++];
          double freq = M_PI;
          for (int kf = 0; kf < freq_count; ++kf, freq *= 2.0) {
            for (int i = 0; i < d; ++i) gx[i] += grow[c++] * freq * std::cos(freq * xr[i]);
            for (int i = 0; i < d; ++i) gx[i] -= grow[c++] * freq * std::sin(freq * xr[i]);
          }
        }
      }));
}

namespace {

// Gathers rows [y0,y1) of the zero-padded 3x3 neighborhood into col
// [Cin*9, (y1-y0)*W]. Chunked so 256x256 backbone inputs stay in memory.
void im2col_rows(const Tensor& x, int cin, int h, int w, int y0, int y1, Tensor& col) {
  const int span = (y1 - y0) * w;
  col.fill(0.0);
  for (int c = 0; c < cin; ++c) {
    const double* xc = x.data() + static_cast<int64_t>(c) * h * w;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        double* crow = col.data() + (static_cast<int64_t>(c) * 9 + (dy + 1) * 3 + (dx + 1)) * span;
        for (int y = y0; y < y1; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const int xlo = std::max(0, -dx), xhi = std::min(w, w - dx);
          const double* src = xc + static_cast<int64_t>(sy) * w + dx;
          double* dst = crow + static_cast<int64_t>(y - y0) * w;
          for (int xx = xlo; xx < xhi; ++xx) dst[xx] = src[xx];
        }
      }
  }
}

constexpr int kConvChunkRows = 32;

}  // namespace

Value conv3x3(const Value& x, const Value& w, const Value& b, int h, int w_px) {
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  const int cin = xv.rows();
  const int cout = wv.rows();
  if (xv.cols() != h * w_px) throw ArgumentError("conv3x3: input spatial size mismatch");
  if (wv.cols() != cin * 9) throw ArgumentError("conv3x3: weight shape mismatch");
  if (b.val().numel() != cout) throw ArgumentError("conv3x3: bias shape mismatch");

  Tensor out({cout, h * w_px});
  Tensor col({cin * 9, std::min(kConvChunkRows, h) * w_px});
  for (int y0 = 0; y0 < h; y0 += kConvChunkRows) {
    const int y1 = std::min(h, y0 + kConvChunkRows);
    const int span = (y1 - y0) * w_px;
    if (col.cols() != span) col = Tensor({cin * 9, span});
    im2col_rows(xv, cin, h, w_px, y0, y1, col);
    // out[:, y0*W : y1*W] = W * col
    Eigen::Map<MatrixRM, 0, Eigen::OuterStride<>> oblock(
        out.data() + static_cast<int64_t>(0) * h * w_px + y0 * w_px, cout, span,
        Eigen::OuterStride<>(h * w_px));
    oblock.noalias() = as_mat(wv, cout, cin * 9) * as_mat(col, cin * 9, span);
  }
  const double* bd = b.val().data();
  for (int c = 0; c < cout; ++c) {
    double* orow = out.data() + static_cast<int64_t>(c) * h * w_px;
    for (int i = 0; i < h * w_px; ++i) orow[i] += bd[c];
  }

  return Value(make_node(std::move(out), {x.ptr(), w.ptr(), b.ptr()}, [cin, cout, h,
                                                                       w_px](Node& n) {
    Node* px = n.parents[0].get();
    Node* pw = n.parents[1].get();
    Node* pb = n.parents[2].get();
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (int c = 0; c < cout; ++c) {
        double s = 0.0;
        const double* grow = n.grad.data() + static_cast<int64_t>(c) * h * w_px;
        for (int i = 0; i < h * w_px; ++i) s += grow[i];
        pb->grad[c] += s;
      }
    }
    if (px->requires_grad) px->ensure_grad();
    if (pw->requires_grad) pw->ensure_grad();
    Tensor col({cin * 9, std::min(kConvChunkRows, h) * w_px});
    Tensor dcol({cin * 9, std::min(kConvChunkRows, h) * w_px});
    for (int y0 = 0; y0 < h; y0 += kConvChunkRows) {
      const int y1 = std::min(h, y0 + kConvChunkRows);
      const int span = (y1 - y0) * w_px;
      if (col.cols() != span) {
        col = Tensor({cin * 9, span});
        dcol = Tensor({cin * 9, span});
      }
      Eigen::Map<const MatrixRM, 0, Eigen::OuterStride<>> gblock(
          n.grad.data() + y0 * w_px, cout, span, Eigen::OuterStride<>(h * w_px));
      if (pw->requires_grad) {
        im2col_rows(px->value, cin, h, w_px, y0, y1, col);
        as_mat(pw->grad, cout, cin * 9).noalias() += gblock * as_mat(col, cin * 9, span).transpose();
      }
      if (px->requires_grad) {
        as_mat(dcol, cin * 9, span).noalias() =
            as_mat(pw->value, cout, cin * 9).transpose() * gblock;
        // col2im scatter-add.
        for (int c = 0; c < cin; ++c) {
          double* gx = px->grad.data() + static_cast<int64_t>(c) * h * w_px;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              const double* crow =
                  dcol.data() + (static_cast<int64_t>(c) * 9 + (dy + 1) * 3 + (dx + 1)) * span;
              for (int y = y0; y < y1; ++y) {
                const int sy = y + dy;
                if (sy < 0 || sy >= h) continue;
                const int xlo = std::max(0, -dx), xhi = std::min(w_px, w_px - dx);
                const double* src = crow + static_cast<int64_t>(y - y0) * w_px;
                double* dst = gx + static_cast<int64_t>(sy) * w_px + dx;
                for (int xx = xlo; xx < xhi; ++xx) dst[xx] += src[xx];
              }
            }
        }
      }
    }
  }));
}

Value maxpool2(const Value& x, int h, int w_px) {
  const Tensor& xv = x.val();
  const int chans = xv.rows();
  if (xv.cols() != h * w_px) throw ArgumentError("maxpool2: input spatial size mismatch");
  const int oh = h / 2, ow = w_px / 2;
  if (oh == 0 || ow == 0) throw ArgumentError("maxpool2: input too small");
  Tensor out({chans, oh * ow});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(chans) * oh * ow);
  for (int c = 0; c < chans; ++c) {
    const double* xc = xv.data() + static_cast<int64_t>(c) * h * w_px;
    for (int y = 0; y < oh; ++y)
      for (int xo = 0; xo < ow; ++xo) {
        int64_t best = static_cast<int64_t>(2 * y) * w_px + 2 * xo;
        double bestv = xc[best];
        const int64_t cand[3] = {best + 1, best + w_px, best + w_px + 1};
        for (int64_t idx : cand)
          if (xc[idx] > bestv) {
            bestv = xc[idx];
            best = idx;
          }
        const int64_t o = static_cast<int64_t>(c) * oh * ow + static_cast<int64_t>(y) * ow + xo;
        out[o] = bestv;
        (*argmax)[static_cast<size_t>(o)] = static_cast<int64_t>(c) * h * w_px + best;
      }
  }
  return Value(make_node(std::move(out), {x.ptr()}, [argmax](Node& n) {
    Node* p = n.parents[0].get();
    p->ensure_grad();
    for (int64_t i = 0; i < n.grad.numel(); ++i) p->grad[(*argmax)[static_cast<size_t>(i)]] += n.grad[i];
  }));
}

void backward(const Value& root) {
  if (!root.defined()) throw ArgumentError("backward: undefined root");
  if (root.val().numel() != 1) throw ArgumentError("backward: root must be scalar");
  // Iterative post-order topological sort.
  std::vector<Node*> topo;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.node(), 0);
  while (!stack.empty()) {
    auto& [node, child] = stack.back();
    if (child == 0 && visited.count(node)) {
      stack.pop_back();
      continue;
    }
    if (child < node->parents.size()) {
      Node* next = node->parents[child++].get();
      if (!visited.count(next) && next->requires_grad) stack.emplace_back(next, 0);
    } else {
      visited.insert(node);
      topo.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad();
  root.node()->grad.fill(1.0);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad.defined()) n->backprop(*n);
  }
}

}  // namespace ins::ad
