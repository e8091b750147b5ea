// Copyright 2026-present the eclip project
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "eclip/tensor.hpp"

// Define-by-run reverse-mode differentiation. Each operation returns a Var
// whose node remembers its inputs and a backward rule; backward() walks the
// resulting DAG once in reverse topological order. Graphs are rebuilt every
// step and are not thread-safe.
namespace eclip {

struct Node {
  Tensor value;
  Tensor grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  // Gradient buffer, allocated as zeros on first use.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;

  // Leaf that never receives a gradient.
  static Var constant(Tensor value);
  // Leaf whose gradient is accumulated by backward().
  static Var parameter(Tensor value);

  const Tensor& value() const { return node_->value; }
  const Shape& dims() const { return node_->value.dims(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }
  std::string_view op() const { return node_->op; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Accumulated gradient; an all-zero tensor when nothing has flowed in yet.
  Tensor grad() const;
  void zero_grad() { node_->grad = Tensor(); }

  // In-place update hook for optimizers. Leaves only.
  Tensor& mutable_value();

  explicit operator bool() const { return node_ != nullptr; }
  const std::shared_ptr<Node>& node() const { return node_; }

  static Var from_node(std::shared_ptr<Node> n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  std::shared_ptr<Node> node_;
};

// Accumulates d(loss)/d(leaf) into every requires-grad leaf reachable from
// loss. Intermediate gradients are reset first, so calling twice on the same
// graph doubles leaf gradients. ContractError if loss has more than one
// element.
void backward(const Var& loss);

// ---- linear algebra ------------------------------------------------------

// op(a) * op(b) for rank-2 inputs.
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
// Batched [B,m,k] x [B,k,n]; with trans_b the right operand is [B,n,k].
Var bmm(const Var& a, const Var& b, bool trans_b = false);
// x[..., in] * w[in, out] (+ bias[out]).
Var linear(const Var& x, const Var& w, const Var& bias = Var());
Var transpose(const Var& a);

// ---- elementwise ---------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
// y's extents must equal a suffix of x's extents; y is tiled over the rest.
Var add_broadcast(const Var& x, const Var& y);
Var scale(const Var& x, double s);
// s must hold exactly one element.
Var scale_by(const Var& x, const Var& s);
Var exp(const Var& x);
Var log(const Var& x);
Var gelu(const Var& x);
// Row r of the leading axis is lambdas[r]*a + (1-lambdas[r])*b. lambda 1 and 0
// return a or b bit-exactly.
Var mixup(const Var& a, const Var& b, std::span<const double> lambdas);

// ---- normalization and reductions ---------------------------------------

Var softmax(const Var& x, std::size_t axis);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
// Slices along axis with norm < eps are divided by eps instead of their norm.
Var l2_normalize(const Var& x, std::size_t axis, double eps = 1e-8);
// V[N,d] . T[M,d]^T for row-normalized inputs.
Var cosine_similarity_matrix(const Var& v, const Var& t);
Var sum(const Var& x);
Var mean(const Var& x);
Var mean_axis(const Var& x, std::size_t axis);

// ---- layout --------------------------------------------------------------

Var reshape(const Var& x, Shape dims);
Var permute(const Var& x, const std::vector<std::size_t>& perm);
// out.flat[i] = x.flat[index[i]]; backward scatters.
Var gather(const Var& x, Shape out_dims, std::vector<std::size_t> index);
Var gather_rows(const Var& x, std::span<const std::size_t> rows);
Var concat_rows(std::span<const Var> parts);

// ---- model-specific primitives ------------------------------------------

// Mean of table rows over the non-pad ids of each token row -> [rows, D].
// DataError on ids >= vocab, ContractError on an all-pad row.
Var embedding_mean(const Var& table, const IndexMatrix& tokens, std::uint32_t pad_id = 0);
// Mean over rows of -log softmax(logits[r])[targets[r]].
Var cross_entropy(const Var& logits, std::span<const std::size_t> targets);
// Mean binary cross-entropy on raw logits against 0/1 targets.
Var bce_with_logits(const Var& logits, const Tensor& targets);
// mean((a - b)^2) over all elements.
Var mse(const Var& a, const Var& b);
// 3x3 convolution, stride 1, zero padding 1. x[B,Ci,H,W], w[Co,Ci,3,3], b[Co].
Var conv2d_3x3(const Var& x, const Var& w, const Var& b);

// Non-differentiable helper used by evaluation code.
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-8);

}  // namespace eclip
