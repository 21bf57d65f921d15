// Copyright Contributors to the INS Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "ins/tensor.h"

namespace ins::ad {

// Reverse-mode tape. Every op builds a Node holding its value plus a closure
// that scatters the node's gradient into its parents. Graphs are rebuilt each
// training step; nothing here is thread-shared.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  void ensure_grad();
};

class Value {
 public:
  Value() = default;
  explicit Value(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& val() const { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.defined(); }
  bool requires_grad() const { return node_->requires_grad; }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Value leaf(Tensor v, bool requires_grad = true);
Value constant(Tensor v);
Value detach(const Value& a);

// Elementwise / broadcast.
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value div(const Value& a, const Value& b);
Value add_rowvec(const Value& m, const Value& row);  // [N,D] + [D]
Value scale(const Value& a, double s);
Value add_scalar(const Value& a, double s);
Value rsub_scalar(double s, const Value& a);  // s - a
Value mul_const(const Value& a, const Tensor& c);
Value clamp_min(const Value& a, double lo);

// Nonlinearities.
Value sin_op(const Value& a);
Value exp_op(const Value& a);
Value relu(const Value& a);
Value softplus(const Value& a, double beta = 1.0);
Value sigmoid(const Value& a);
Value abs_op(const Value& a);
Value square(const Value& a);

// Linear algebra.
Value matmul(const Value& a, const Value& b);     // [N,K]x[K,M]
Value matmul_nt(const Value& a, const Value& b);  // a * b^T, b is [M,K]

// Shape.
Value reshape(const Value& a, std::vector<int> shape);
Value transpose(const Value& a);  // [N,M] -> [M,N]
Value concat_cols(const std::vector<Value>& parts);
Value slice_cols(const Value& a, int c0, int c1);
Value repeat_rows(const Value& row, int n);  // [1,D] -> [N,D]
// Rows of a placed at row_index[i] of a zero [total_rows,C] tensor.
Value scatter_rows(const Value& a, const std::vector<int>& row_index, int total_rows);

// Reductions.
Value sum(const Value& a);   // -> [1]
Value mean(const Value& a);  // -> [1]
Value sum_rows(const Value& a);  // [R,K] -> [R,1]

// Ray-marching helpers.
Value cumsum_exclusive_rows(const Value& a);  // [R,K], prefix sums excluding self
// w:[R,K], x:[R*K,C] -> [R,C]; out[r,c] = sum_k w[r,k] * x[r*K+k,c]
Value row_weighted_sum(const Value& w, const Value& x);

// NeRF input encoding: [x | sin(2^k pi x), cos(2^k pi x) for k=0..L-1],
// each sin/cos block covering all input columns, blocks ordered by k.
Value posenc(const Value& x, int freq_count, bool include_input = true);

// 3x3 same-padding convolution over channel-major feature maps.
// x:[Cin,H*W], w:[Cout,Cin*9], b:[Cout] -> [Cout,H*W]
Value conv3x3(const Value& x, const Value& w, const Value& b, int h, int w_px);
// 2x2/stride2 max pooling (floor), x:[C,H*W] -> [C,(H/2)*(W/2)]
Value maxpool2(const Value& x, int h, int w_px);

// Seeds root.grad with ones (root must be scalar) and runs the tape in
// reverse topological order. Gradients accumulate into every node reachable
// from root that requires grad.
void backward(const Value& root);

}  // namespace ins::ad
