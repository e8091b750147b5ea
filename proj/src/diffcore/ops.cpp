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
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <unordered_set>

#include "eclip/autograd.hpp"
#include "eclip/errors.hpp"
#include "eclip/kernels.hpp"

namespace eclip {

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.dims());
  return grad;
}

Var Var::constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return from_node(std::move(n));
}

Var Var::parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return from_node(std::move(n));
}

Tensor Var::grad() const {
  if (node_->grad.empty()) return Tensor(node_->value.dims());
  return node_->grad;
}

Tensor& Var::mutable_value() {
  if (!node_->is_leaf) throw ContractError("mutable_value() on a non-leaf node");
  return node_->value;
}

void backward(const Var& loss) {
  if (!loss) throw ContractError("backward() on an empty Var");
  if (loss.value().size() != 1)
    throw ContractError("backward() needs a scalar loss, got extents " + shape_str(loss.dims()));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order)
    if (!n->is_leaf) n->grad = Tensor();

  Node& root = *loss.node();
  root.grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

namespace {

Var make_result(std::string_view op, Tensor value, std::initializer_list<const Var*> inputs,
                std::function<void(Node&)> fn) {
  if (!value.all_finite()) throw NumericError(std::string(op) + ": produced a non-finite value");
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  n->is_leaf = false;
  bool any = false;
  for (const Var* v : inputs) any = any || (*v && v->requires_grad());
  if (any) {
    n->requires_grad = true;
    for (const Var* v : inputs) n->inputs.push_back(*v ? v->node() : std::make_shared<Node>());
    n->backward_fn = std::move(fn);
  }
  return Var::from_node(std::move(n));
}

inline bool wants(const Node& self, std::size_t i) { return self.inputs[i]->requires_grad; }
inline Tensor& in_grad(Node& self, std::size_t i) { return self.inputs[i]->grad_buffer(); }
inline const Tensor& in_value(const Node& self, std::size_t i) { return self.inputs[i]->value; }

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

void require_same(const Var& a, const Var& b, std::string_view op) {
  require(a.dims() == b.dims(), std::string(op) + ": extents " + shape_str(a.dims()) + " vs " +
                                    shape_str(b.dims()));
}

Shape drop_axis(const Shape& dims, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < dims.size(); ++i)
    if (i != axis) out.push_back(dims[i]);
  return out;
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& dims, std::size_t axis, std::string_view op) {
  require(axis < dims.size(), std::string(op) + ": axis out of range for " + shape_str(dims));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= dims[i];
  s.n = dims[axis];
  for (std::size_t i = axis + 1; i < dims.size(); ++i) s.inner *= dims[i];
  return s;
}

}  // namespace

// ---- linear algebra ------------------------------------------------------

Var matmul(const Var& a, const Var& b, bool ta, bool tb) {
  require(a.dims().size() == 2 && b.dims().size() == 2, "matmul: rank-2 operands required");
  const std::size_t m = ta ? a.dim(1) : a.dim(0);
  const std::size_t ka = ta ? a.dim(0) : a.dim(1);
  const std::size_t kb = tb ? b.dim(1) : b.dim(0);
  const std::size_t n = tb ? b.dim(0) : b.dim(1);
  require(ka == kb, "matmul: inner dimensions " + std::to_string(ka) + " and " + std::to_string(kb) +
                        " disagree");
  const std::size_t lda = a.dim(1), ldb = b.dim(1);
  Tensor out({m, n});
  kernels::gemm({ta, tb, m, n, ka, 1.0, a.value().ptr(), lda, b.value().ptr(), ldb, 0.0, out.ptr(), n});
  return make_result("matmul", std::move(out), {&a, &b}, [=](Node& self) {
    const double* dc = self.grad.ptr();
    const double* av = in_value(self, 0).ptr();
    const double* bv = in_value(self, 1).ptr();
    if (wants(self, 0)) {
      double* da = in_grad(self, 0).ptr();
      if (!ta)
        kernels::gemm({false, !tb, m, ka, n, 1.0, dc, n, bv, ldb, 1.0, da, ka});
      else
        kernels::gemm({tb, true, ka, m, n, 1.0, bv, ldb, dc, n, 1.0, da, m});
    }
    if (wants(self, 1)) {
      double* db = in_grad(self, 1).ptr();
      if (!tb)
        kernels::gemm({!ta, false, ka, n, m, 1.0, av, lda, dc, n, 1.0, db, n});
      else
        kernels::gemm({true, ta, n, ka, m, 1.0, dc, n, av, lda, 1.0, db, ka});
    }
  });
}

Var bmm(const Var& a, const Var& b, bool tb) {
  require(a.dims().size() == 3 && b.dims().size() == 3, "bmm: rank-3 operands required");
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  require(b.dim(0) == batch, "bmm: batch extents disagree");
  const std::size_t kb = tb ? b.dim(2) : b.dim(1);
  const std::size_t n = tb ? b.dim(1) : b.dim(2);
  require(kb == k, "bmm: inner dimensions disagree");
  const std::size_t ldb = b.dim(2);
  Tensor out({batch, m, n});
  for (std::size_t i = 0; i < batch; ++i)
    kernels::gemm({false, tb, m, n, k, 1.0, a.value().ptr() + i * m * k, k,
                   b.value().ptr() + i * k * n, ldb, 0.0, out.ptr() + i * m * n, n});
  return make_result("bmm", std::move(out), {&a, &b}, [=](Node& self) {
    const double* dc = self.grad.ptr();
    const double* av = in_value(self, 0).ptr();
    const double* bv = in_value(self, 1).ptr();
    for (std::size_t i = 0; i < batch; ++i) {
      const double* dci = dc + i * m * n;
      const double* bi = bv + i * k * n;
      if (wants(self, 0))
        kernels::gemm({false, !tb, m, k, n, 1.0, dci, n, bi, ldb, 1.0, in_grad(self, 0).ptr() + i * m * k, k});
      if (wants(self, 1)) {
        double* dbi = in_grad(self, 1).ptr() + i * k * n;
        if (!tb)
          kernels::gemm({true, false, k, n, m, 1.0, av + i * m * k, k, dci, n, 1.0, dbi, n});
        else
          kernels::gemm({true, false, n, k, m, 1.0, dci, n, av + i * m * k, k, 1.0, dbi, k});
      }
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& bias) {
  require(w.dims().size() == 2, "linear: weight must be rank 2");
  require(!x.dims().empty() && x.dims().back() == w.dim(0),
          "linear: input " + shape_str(x.dims()) + " does not match weight " + shape_str(w.dims()));
  const std::size_t in = w.dim(0), outd = w.dim(1);
  const std::size_t rows = x.value().size() / in;
  if (bias) require(bias.dims() == Shape{outd}, "linear: bias extents " + shape_str(bias.dims()));
  Shape od = x.dims();
  od.back() = outd;
  Tensor out(od);
  kernels::gemm({false, false, rows, outd, in, 1.0, x.value().ptr(), in, w.value().ptr(), outd, 0.0,
                 out.ptr(), outd});
  if (bias)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < outd; ++j) out[r * outd + j] += bias.value()[j];
  const bool has_bias = static_cast<bool>(bias);
  return make_result("linear", std::move(out), {&x, &w, &bias}, [=](Node& self) {
    const double* dy = self.grad.ptr();
    if (wants(self, 0))
      kernels::gemm({false, true, rows, in, outd, 1.0, dy, outd, in_value(self, 1).ptr(), outd, 1.0,
                     in_grad(self, 0).ptr(), in});
    if (wants(self, 1))
      kernels::gemm({true, false, in, outd, rows, 1.0, in_value(self, 0).ptr(), in, dy, outd, 1.0,
                     in_grad(self, 1).ptr(), outd});
    if (has_bias && wants(self, 2)) {
      double* db = in_grad(self, 2).ptr();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < outd; ++j) db[j] += dy[r * outd + j];
    }
  });
}

Var transpose(const Var& a) {
  require(a.dims().size() == 2, "transpose: rank-2 operand required");
  return permute(a, {1, 0});
}

// ---- elementwise ---------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_result("add", std::move(out), {&a, &b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (wants(self, k)) kernels::axpy(1.0, self.grad.ptr(), in_grad(self, k).ptr(), self.grad.size());
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result("sub", std::move(out), {&a, &b}, [](Node& self) {
    if (wants(self, 0)) kernels::axpy(1.0, self.grad.ptr(), in_grad(self, 0).ptr(), self.grad.size());
    if (wants(self, 1)) kernels::axpy(-1.0, self.grad.ptr(), in_grad(self, 1).ptr(), self.grad.size());
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result("mul", std::move(out), {&a, &b}, [](Node& self) {
    const Tensor& av = in_value(self, 0);
    const Tensor& bv = in_value(self, 1);
    if (wants(self, 0)) {
      Tensor& g = in_grad(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (wants(self, 1)) {
      Tensor& g = in_grad(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Var add_broadcast(const Var& x, const Var& y) {
  const Shape& xd = x.dims();
  const Shape& yd = y.dims();
  require(yd.size() <= xd.size() && std::equal(yd.begin(), yd.end(), xd.end() - yd.size()),
          "add_broadcast: " + shape_str(yd) + " is not a suffix of " + shape_str(xd));
  const std::size_t inner = y.value().size();
  const std::size_t outer = x.value().size() / std::max<std::size_t>(inner, 1);
  Tensor out = x.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += y.value()[i];
  return make_result("add_broadcast", std::move(out), {&x, &y}, [=](Node& self) {
    if (wants(self, 0)) kernels::axpy(1.0, self.grad.ptr(), in_grad(self, 0).ptr(), self.grad.size());
    if (wants(self, 1)) {
      double* gy = in_grad(self, 1).ptr();
      for (std::size_t o = 0; o < outer; ++o) kernels::axpy(1.0, self.grad.ptr() + o * inner, gy, inner);
    }
  });
}

Var scale(const Var& x, double s) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= s;
  return make_result("scale", std::move(out), {&x}, [s](Node& self) {
    kernels::axpy(s, self.grad.ptr(), in_grad(self, 0).ptr(), self.grad.size());
  });
}

Var scale_by(const Var& x, const Var& s) {
  require(s.value().size() == 1, "scale_by: scale must hold one element");
  const double sv = s.value()[0];
  Tensor out = x.value();
  for (double& v : out.data()) v *= sv;
  return make_result("scale_by", std::move(out), {&x, &s}, [sv](Node& self) {
    if (wants(self, 0)) kernels::axpy(sv, self.grad.ptr(), in_grad(self, 0).ptr(), self.grad.size());
    if (wants(self, 1))
      in_grad(self, 1)[0] += kernels::dot(self.grad.ptr(), in_value(self, 0).ptr(), self.grad.size());
  });
}

Var exp(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = std::exp(v);
  return make_result("exp", std::move(out), {&x}, [](Node& self) {
    Tensor& g = in_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i];
  });
}

Var log(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = std::log(v);
  return make_result("log", std::move(out), {&x}, [](Node& self) {
    Tensor& g = in_grad(self, 0);
    const Tensor& xv = in_value(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / xv[i];
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluK = 0.044715;
}  // namespace

Var gelu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluK * v * v * v)));
  return make_result("gelu", std::move(out), {&x}, [](Node& self) {
    Tensor& g = in_grad(self, 0);
    const Tensor& xv = in_value(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      const double t = std::tanh(kGeluC * (v + kGeluK * v * v * v));
      const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluK * v * v);
      g[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
    }
  });
}

Var mixup(const Var& a, const Var& b, std::span<const double> lambdas) {
  require_same(a, b, "mixup");
  require(!a.dims().empty() && a.dim(0) == lambdas.size(), "mixup: one lambda per leading row required");
  const std::size_t rows = lambdas.size();
  const std::size_t inner = rows ? a.value().size() / rows : 0;
  std::vector<double> lam(lambdas.begin(), lambdas.end());
  for (double l : lam)
    if (!(l >= 0.0 && l <= 1.0)) throw ContractError("mixup: lambda outside [0,1]");
  Tensor out(a.dims());
  for (std::size_t r = 0; r < rows; ++r) {
    const double l = lam[r];
    const double* ar = a.value().ptr() + r * inner;
    const double* br = b.value().ptr() + r * inner;
    double* o = out.ptr() + r * inner;
    if (l == 1.0) {
      std::copy(ar, ar + inner, o);
    } else if (l == 0.0) {
      std::copy(br, br + inner, o);
    } else {
      for (std::size_t i = 0; i < inner; ++i) o[i] = l * ar[i] + (1.0 - l) * br[i];
    }
  }
  return make_result("mixup", std::move(out), {&a, &b}, [lam, inner](Node& self) {
    for (std::size_t r = 0; r < lam.size(); ++r) {
      const double* dy = self.grad.ptr() + r * inner;
      if (wants(self, 0)) kernels::axpy(lam[r], dy, in_grad(self, 0).ptr() + r * inner, inner);
      if (wants(self, 1)) kernels::axpy(1.0 - lam[r], dy, in_grad(self, 1).ptr() + r * inner, inner);
    }
  });
}

// ---- normalization and reductions ---------------------------------------

Var softmax(const Var& x, std::size_t axis) {
  const AxisSplit s = split_at(x.dims(), axis, "softmax");
  Tensor out(x.dims());
  const double* xv = x.value().ptr();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double e = std::exp(xv[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= total;
    }
  return make_result("softmax", std::move(out), {&x}, [s](Node& self) {
    Tensor& g = in_grad(self, 0);
    const Tensor& y = self.value;
    const Tensor& dy = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.n * s.inner + i;
        double d = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) d += dy[base + j * s.inner] * y[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t k = base + j * s.inner;
          g[k] += y[k] * (dy[k] - d);
        }
      }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require(!x.dims().empty(), "layer_norm: rank-0 input");
  const std::size_t d = x.dims().back();
  require(gamma.dims() == Shape{d} && beta.dims() == Shape{d}, "layer_norm: affine extents mismatch");
  const std::size_t rows = x.value().size() / d;
  Tensor out(x.dims());
  auto xhat = std::make_shared<std::vector<double>>(x.value().size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.value().ptr() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = gamma.value()[j] * h + beta.value()[j];
    }
  }
  return make_result("layer_norm", std::move(out), {&x, &gamma, &beta}, [=](Node& self) {
    const Tensor& dy = self.grad;
    const Tensor& gv = in_value(self, 1);
    if (wants(self, 0)) {
      Tensor& gx = in_grad(self, 0);
      const double invd = 1.0 / static_cast<double>(d);
      for (std::size_t r = 0; r < rows; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = dy[r * d + j] * gv[j];
          m1 += dh;
          m2 += dh * (*xhat)[r * d + j];
        }
        m1 *= invd;
        m2 *= invd;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = dy[r * d + j] * gv[j];
          gx[r * d + j] += (*inv_std)[r] * (dh - m1 - (*xhat)[r * d + j] * m2);
        }
      }
    }
    if (wants(self, 1)) {
      Tensor& gg = in_grad(self, 1);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) gg[j] += dy[r * d + j] * (*xhat)[r * d + j];
    }
    if (wants(self, 2)) {
      Tensor& gb = in_grad(self, 2);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) gb[j] += dy[r * d + j];
    }
  });
}

Var l2_normalize(const Var& x, std::size_t axis, double eps) {
  if (!(eps > 0.0)) throw ContractError("l2_normalize: eps must be positive");
  const AxisSplit s = split_at(x.dims(), axis, "l2_normalize");
  Tensor out(x.dims());
  auto norms = std::make_shared<std::vector<double>>(s.outer * s.inner);
  const double* xv = x.value().ptr();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      double sq = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) sq += xv[base + j * s.inner] * xv[base + j * s.inner];
      const double nrm = std::sqrt(sq);
      (*norms)[o * s.inner + i] = nrm;
      const double denom = nrm < eps ? eps : nrm;
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] = xv[base + j * s.inner] / denom;
    }
  return make_result("l2_normalize", std::move(out), {&x}, [=](Node& self) {
    Tensor& g = in_grad(self, 0);
    const Tensor& y = self.value;
    const Tensor& dy = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.n * s.inner + i;
        const double nrm = (*norms)[o * s.inner + i];
        if (nrm < eps) {
          for (std::size_t j = 0; j < s.n; ++j) g[base + j * s.inner] += dy[base + j * s.inner] / eps;
          continue;
        }
        double yd = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) yd += y[base + j * s.inner] * dy[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t k = base + j * s.inner;
          g[k] += (dy[k] - y[k] * yd) / nrm;
        }
      }
  });
}

Var cosine_similarity_matrix(const Var& v, const Var& t) {
  require(v.dims().size() == 2 && t.dims().size() == 2, "cosine_similarity_matrix: rank-2 inputs required");
  require(v.dim(1) == t.dim(1), "cosine_similarity_matrix: embedding widths " + std::to_string(v.dim(1)) +
                                    " and " + std::to_string(t.dim(1)) + " differ");
  return matmul(v, t, false, true);
}

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return make_result("sum", Tensor::scalar(total), {&x}, [](Node& self) {
    Tensor& g = in_grad(self, 0);
    const double d = self.grad[0];
    for (double& v : g.data()) v += d;
  });
}

Var mean(const Var& x) {
  require(x.value().size() > 0, "mean: empty input");
  return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var mean_axis(const Var& x, std::size_t axis) {
  const AxisSplit s = split_at(x.dims(), axis, "mean_axis");
  require(s.n > 0, "mean_axis: empty axis");
  Tensor out(drop_axis(x.dims(), axis));
  const double inv = 1.0 / static_cast<double>(s.n);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.n; ++j)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += x.value()[(o * s.n + j) * s.inner + i] * inv;
  return make_result("mean_axis", std::move(out), {&x}, [s, inv](Node& self) {
    Tensor& g = in_grad(self, 0);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < s.n; ++j)
        for (std::size_t i = 0; i < s.inner; ++i) g[(o * s.n + j) * s.inner + i] += self.grad[o * s.inner + i] * inv;
  });
}

// ---- layout --------------------------------------------------------------

Var reshape(const Var& x, Shape dims) {
  Tensor out = x.value().reshaped(std::move(dims));
  return make_result("reshape", std::move(out), {&x}, [](Node& self) {
    kernels::axpy(1.0, self.grad.ptr(), in_grad(self, 0).ptr(), self.grad.size());
  });
}

Var gather(const Var& x, Shape out_dims, std::vector<std::size_t> index) {
  require(shape_numel(out_dims) == index.size(), "gather: index length does not match output extents");
  const std::size_t n = x.value().size();
  Tensor out(std::move(out_dims));
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= n) throw ContractError("gather: index out of range");
    out[i] = x.value()[index[i]];
  }
  return make_result("gather", std::move(out), {&x}, [idx = std::move(index)](Node& self) {
    Tensor& g = in_grad(self, 0);
    for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
  });
}

Var permute(const Var& x, const std::vector<std::size_t>& perm) {
  const Shape& d = x.dims();
  require(perm.size() == d.size(), "permute: permutation rank mismatch");
  std::vector<bool> used(d.size(), false);
  for (std::size_t p : perm) {
    require(p < d.size() && !used[p], "permute: not a permutation");
    used[p] = true;
  }
  Shape od(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) od[i] = d[perm[i]];
  std::vector<std::size_t> in_stride(d.size(), 1);
  for (std::size_t i = d.size(); i-- > 1;) in_stride[i - 1] = in_stride[i] * d[i];
  const std::size_t total = x.value().size();
  std::vector<std::size_t> index(total);
  std::vector<std::size_t> counter(d.size(), 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < d.size(); ++i) src += counter[i] * in_stride[perm[i]];
    index[flat] = src;
    for (std::size_t i = d.size(); i-- > 0;) {
      if (++counter[i] < od[i]) break;
      counter[i] = 0;
    }
  }
  return gather(x, std::move(od), std::move(index));
}

Var gather_rows(const Var& x, std::span<const std::size_t> rows) {
  require(!x.dims().empty(), "gather_rows: rank-0 input");
  const std::size_t row = x.value().size() / std::max<std::size_t>(x.dim(0), 1);
  Shape od = x.dims();
  od[0] = rows.size();
  std::vector<std::size_t> index;
  index.reserve(rows.size() * row);
  for (std::size_t r : rows) {
    if (r >= x.dim(0)) throw ContractError("gather_rows: row index out of range");
    for (std::size_t j = 0; j < row; ++j) index.push_back(r * row + j);
  }
  return gather(x, std::move(od), std::move(index));
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  Shape tail(parts[0].dims().begin() + 1, parts[0].dims().end());
  std::size_t rows = 0;
  for (const Var& p : parts) {
    require(p.dims().size() == tail.size() + 1 && std::equal(tail.begin(), tail.end(), p.dims().begin() + 1),
            "concat_rows: trailing extents differ");
    rows += p.dim(0);
  }
  Shape od = parts[0].dims();
  od[0] = rows;
  Tensor out(od);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
    off += p.value().size();
  }
  // make_result takes a fixed list; wire the variadic inputs by hand.
  if (!out.all_finite()) throw NumericError("concat_rows: produced a non-finite value");
  auto n = std::make_shared<Node>();
  n->value = std::move(out);
  n->op = "concat_rows";
  n->is_leaf = false;
  bool any = false;
  for (const Var& p : parts) any = any || p.requires_grad();
  if (any) {
    n->requires_grad = true;
    for (const Var& p : parts) n->inputs.push_back(p.node());
    n->backward_fn = [offsets](Node& self) {
      for (std::size_t k = 0; k < self.inputs.size(); ++k) {
        if (!self.inputs[k]->requires_grad) continue;
        Tensor& g = self.inputs[k]->grad_buffer();
        kernels::axpy(1.0, self.grad.ptr() + offsets[k], g.ptr(), g.size());
      }
    };
  }
  return Var::from_node(std::move(n));
}

// ---- model-specific primitives ------------------------------------------

Var embedding_mean(const Var& table, const IndexMatrix& tokens, std::uint32_t pad_id) {
  require(table.dims().size() == 2, "embedding_mean: table must be rank 2");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  Tensor out({tokens.rows, d});
  auto counts = std::make_shared<std::vector<double>>(tokens.rows, 0.0);
  for (std::size_t r = 0; r < tokens.rows; ++r) {
    for (std::uint32_t id : tokens.row(r)) {
      if (id >= vocab)
        throw DataError("token id " + std::to_string(id) + " out of range for vocabulary of " + std::to_string(vocab));
      if (id == pad_id) continue;
      (*counts)[r] += 1.0;
      kernels::axpy(1.0, table.value().ptr() + id * d, out.ptr() + r * d, d);
    }
    if ((*counts)[r] == 0.0) throw ContractError("embedding_mean: row " + std::to_string(r) + " is all padding");
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] /= (*counts)[r];
  }
  return make_result("embedding_mean", std::move(out), {&table}, [=, tok = tokens](Node& self) {
    Tensor& g = in_grad(self, 0);
    for (std::size_t r = 0; r < tok.rows; ++r) {
      const double w = 1.0 / (*counts)[r];
      for (std::uint32_t id : tok.row(r))
        if (id != pad_id) kernels::axpy(w, self.grad.ptr() + r * d, g.ptr() + id * d, d);
    }
  });
}

Var cross_entropy(const Var& logits, std::span<const std::size_t> targets) {
  require(logits.dims().size() == 2, "cross_entropy: logits must be rank 2");
  const std::size_t n = logits.dim(0), m = logits.dim(1);
  require(targets.size() == n, "cross_entropy: one target per row required");
  require(n > 0 && m > 0, "cross_entropy: empty logits");
  auto probs = std::make_shared<std::vector<double>>(n * m);
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (tg[r] >= m) throw ContractError("cross_entropy: target out of range");
    const double* row = logits.value().ptr() + r * m;
    const double mx = *std::max_element(row, row + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double e = std::exp(row[j] - mx);
      (*probs)[r * m + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < m; ++j) (*probs)[r * m + j] /= z;
    total += (std::log(z) + mx) - row[tg[r]];
  }
  return make_result("cross_entropy", Tensor::scalar(total / static_cast<double>(n)), {&logits},
                     [=](Node& self) {
                       Tensor& g = in_grad(self, 0);
                       const double w = self.grad[0] / static_cast<double>(n);
                       for (std::size_t r = 0; r < n; ++r)
                         for (std::size_t j = 0; j < m; ++j)
                           g[r * m + j] += w * ((*probs)[r * m + j] - (j == tg[r] ? 1.0 : 0.0));
                     });
}

Var bce_with_logits(const Var& logits, const Tensor& targets) {
  require(logits.dims() == targets.dims(), "bce_with_logits: targets extents mismatch");
  const std::size_t n = targets.size();
  require(n > 0, "bce_with_logits: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = logits.value()[i];
    total += std::max(z, 0.0) - z * targets[i] + std::log1p(std::exp(-std::abs(z)));
  }
  return make_result("bce_with_logits", Tensor::scalar(total / static_cast<double>(n)), {&logits},
                     [targets, n](Node& self) {
                       Tensor& g = in_grad(self, 0);
                       const double w = self.grad[0] / static_cast<double>(n);
                       const Tensor& z = in_value(self, 0);
                       for (std::size_t i = 0; i < n; ++i) {
                         const double s = z[i] >= 0 ? 1.0 / (1.0 + std::exp(-z[i]))
                                                    : std::exp(z[i]) / (1.0 + std::exp(z[i]));
                         g[i] += w * (s - targets[i]);
                       }
                     });
}

Var mse(const Var& a, const Var& b) {
  require_same(a, b, "mse");
  const std::size_t n = a.value().size();
  require(n > 0, "mse: empty input");
  const double sq = kernels::squared_distance(a.value().ptr(), b.value().ptr(), n);
  return make_result("mse", Tensor::scalar(sq / static_cast<double>(n)), {&a, &b}, [n](Node& self) {
    const double w = 2.0 * self.grad[0] / static_cast<double>(n);
    const Tensor& av = in_value(self, 0);
    const Tensor& bv = in_value(self, 1);
    if (wants(self, 0)) {
      Tensor& g = in_grad(self, 0);
      for (std::size_t i = 0; i < n; ++i) g[i] += w * (av[i] - bv[i]);
    }
    if (wants(self, 1)) {
      Tensor& g = in_grad(self, 1);
      for (std::size_t i = 0; i < n; ++i) g[i] -= w * (av[i] - bv[i]);
    }
  });
}

Var conv2d_3x3(const Var& x, const Var& w, const Var& b) {
  require(x.dims().size() == 4, "conv2d_3x3: input must be [B,C,H,W]");
  const std::size_t bs = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  require(w.dims().size() == 4 && w.dim(1) == ci && w.dim(2) == 3 && w.dim(3) == 3,
          "conv2d_3x3: weight must be [Co," + std::to_string(ci) + ",3,3]");
  const std::size_t co = w.dim(0);
  require(b.dims() == Shape{co}, "conv2d_3x3: bias extents mismatch");
  Tensor out({bs, co, h, wd});
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  auto at = [=](std::size_t n, std::size_t c, std::size_t y, std::size_t xx) {
    return ((n * ci + c) * h + y) * wd + xx;
  };
  for (std::size_t n = 0; n < bs; ++n)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < wd; ++xx) {
          double acc = b.value()[o];
          for (std::size_t c = 0; c < ci; ++c)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const long yy = static_cast<long>(y) + dy, xs = static_cast<long>(xx) + dx;
                if (yy < 0 || xs < 0 || yy >= static_cast<long>(h) || xs >= static_cast<long>(wd)) continue;
                acc += wv[((o * ci + c) * 3 + (dy + 1)) * 3 + (dx + 1)] * xv[at(n, c, yy, xs)];
              }
          out[((n * co + o) * h + y) * wd + xx] = acc;
        }
  return make_result("conv2d_3x3", std::move(out), {&x, &w, &b}, [=](Node& self) {
    const Tensor& dy_t = self.grad;
    const Tensor& xin = in_value(self, 0);
    const Tensor& win = in_value(self, 1);
    Tensor* gx = wants(self, 0) ? &in_grad(self, 0) : nullptr;
    Tensor* gw = wants(self, 1) ? &in_grad(self, 1) : nullptr;
    Tensor* gb = wants(self, 2) ? &in_grad(self, 2) : nullptr;
    for (std::size_t n = 0; n < bs; ++n)
      for (std::size_t o = 0; o < co; ++o)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t xx = 0; xx < wd; ++xx) {
            const double g = dy_t[((n * co + o) * h + y) * wd + xx];
            if (gb) (*gb)[o] += g;
            for (std::size_t c = 0; c < ci; ++c)
              for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                  const long yy = static_cast<long>(y) + dy, xs = static_cast<long>(xx) + dx;
                  if (yy < 0 || xs < 0 || yy >= static_cast<long>(h) || xs >= static_cast<long>(wd)) continue;
                  const std::size_t wi = ((o * ci + c) * 3 + (dy + 1)) * 3 + (dx + 1);
                  const std::size_t xi = at(n, c, yy, xs);
                  if (gw) (*gw)[wi] += g * xin[xi];
                  if (gx) (*gx)[xi] += g * win[wi];
                }
          }
  });
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  if (x.rank() != 2) throw ShapeError("l2_normalize_rows: rank-2 input required");
  Tensor out = x;
  const std::size_t d = x.dim(1);
  for (std::size_t r = 0; r < x.dim(0); ++r) {
    double* row = out.ptr() + r * d;
    const double nrm = std::sqrt(kernels::dot(row, row, d));
    const double denom = nrm < eps ? eps : nrm;
    for (std::size_t j = 0; j < d; ++j) row[j] /= denom;
  }
  return out;
}

}  // namespace eclip
