// Copyright 2026 The PIE Authors. All Rights Reserved.
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

#include "pie/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "pie/errors.hpp"
#include "pie/kernels.hpp"

namespace pie::ad {

const Tensor& Var::value() const {
  if (!tape_) throw Error("use of an unbound Var");
  return tape_->value(index_);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const Parameter& p) {
  if (auto it = parameter_nodes_.find(&p); it != parameter_nodes_.end()) return Var(this, it->second);
  for (const auto& [name, index] : parameters_) {
    if (name == p.name) throw Error("two distinct parameters share the name '" + p.name + "'");
  }
  nodes_.push_back(Node{p.value, {}, {}, recording_});
  const std::size_t index = nodes_.size() - 1;
  parameter_nodes_.emplace(&p, index);
  parameters_.emplace_back(p.name, index);
  return Var(this, index);
}

void Tape::check_owned(Var v) const {
  if (v.tape() != this) throw Error("Var belongs to a different tape");
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (Var in : inputs) {
    check_owned(in);
    node.inputs.push_back(in.index());
    node.requires_grad = node.requires_grad || nodes_[in.index()].requires_grad;
  }
  node.requires_grad = node.requires_grad && recording_;
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(Var loss) const {
  if (loss.tape() != this) throw Error("backward: loss was not produced on this tape");
  if (!recording_) throw Error("backward: tape was created without recording");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_string(loss.shape()));
  }

  std::vector<Tensor> grads(nodes_.size());
  std::vector<char> has_grad(nodes_.size(), 0);
  grads[loss.index()] = Tensor(loss.shape(), 1.0);
  has_grad[loss.index()] = 1;

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!has_grad[i] || !node.backward) continue;
    in_values.clear();
    in_grads.clear();
    for (std::size_t in : node.inputs) {
      in_values.push_back(&nodes_[in].value);
      if (nodes_[in].requires_grad) {
        if (!has_grad[in]) {
          grads[in] = Tensor(nodes_[in].value.shape(), 0.0);
          has_grad[in] = 1;
        }
        in_grads.push_back(&grads[in]);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    node.backward(BackwardArgs{node.value, grads[i], in_values, in_grads});
  }

  Gradients out;
  for (const auto& [name, index] : parameters_) {
    out.emplace(name, has_grad[index] ? grads[index] : Tensor(nodes_[index].value.shape(), 0.0));
  }
  return out;
}

namespace {

Tape& tape_of(Var a, Var b) {
  if (!a.valid() || a.tape() != b.tape()) throw Error("operands live on different tapes");
  return *a.tape();
}

enum class Expand { None, Left, Right };

Expand binary_layout(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Expand::None;
  if (a.is_scalar()) return Expand::Left;
  if (b.is_scalar()) return Expand::Right;
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                   shape_string(b.shape()));
}

// Elementwise binary op with scalar expansion. `fwd(x, y)` computes the value,
// `da(x, y, out)` and `db(x, y, out)` the local partials.
template <class Fwd, class Da, class Db>
Var binary(Var a, Var b, const char* name, Fwd fwd, Da da, Db db) {
  Tape& tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Expand ex = binary_layout(av, bv, name);
  const Shape& shape = ex == Expand::Left ? bv.shape() : av.shape();
  Tensor out(shape);
  const std::size_t n = out.size();
  const double* ap = av.data().data();
  const double* bp = bv.data().data();
  double* op = out.data().data();
  const std::size_t sa = ex == Expand::Left ? 0 : 1;
  const std::size_t sb = ex == Expand::Right ? 0 : 1;
  kernels::for_each_index(n, [&](std::size_t i) { op[i] = fwd(ap[i * sa], bp[i * sb]); });

  return tape.record(std::move(out), {a, b}, [sa, sb, da, db](const BackwardArgs& args) {
    const double* x = args.inputs[0]->data().data();
    const double* y = args.inputs[1]->data().data();
    const double* o = args.output.data().data();
    const double* g = args.grad.data().data();
    const std::size_t count = args.output.size();
    if (Tensor* ga = args.input_grads[0]) {
      double* gp = ga->data().data();
      if (sa == 0) {
        double acc = 0.0;
        for (std::size_t i = 0; i < count; ++i) acc += g[i] * da(x[0], y[i * sb], o[i]);
        gp[0] += acc;
      } else {
        kernels::for_each_index(count, [&](std::size_t i) { gp[i] += g[i] * da(x[i], y[i * sb], o[i]); });
      }
    }
    if (Tensor* gb = args.input_grads[1]) {
      double* gp = gb->data().data();
      if (sb == 0) {
        double acc = 0.0;
        for (std::size_t i = 0; i < count; ++i) acc += g[i] * db(x[i * sa], y[0], o[i]);
        gp[0] += acc;
      } else {
        kernels::for_each_index(count, [&](std::size_t i) { gp[i] += g[i] * db(x[i * sa], y[i], o[i]); });
      }
    }
  });
}

// Elementwise unary op; `dx(x, out)` is the local derivative.
template <class Fwd, class Dx>
Var unary(Var a, Fwd fwd, Dx dx) {
  if (!a.valid()) throw Error("use of an unbound Var");
  const Tensor& av = a.value();
  Tensor out(av.shape());
  const double* ap = av.data().data();
  double* op = out.data().data();
  kernels::for_each_index(av.size(), [&](std::size_t i) { op[i] = fwd(ap[i]); });
  return a.tape()->record(std::move(out), {a}, [dx](const BackwardArgs& args) {
    const double* x = args.inputs[0]->data().data();
    const double* o = args.output.data().data();
    const double* g = args.grad.data().data();
    double* gp = args.input_grads[0]->data().data();
    kernels::for_each_index(args.output.size(), [&](std::size_t i) { gp[i] += g[i] * dx(x[i], o[i]); });
  });
}

const Tensor& require_rank2(Var a, const char* op) {
  const Tensor& v = a.value();
  if (v.rank() != 2) throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_string(v.shape()));
  return v;
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Var div(Var a, Var b) {
  const auto& bv = b.value().values();
  if (std::any_of(bv.begin(), bv.end(), [](double v) { return v == 0.0; })) {
    throw DomainError("div: division by zero");
  }
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double o) { return -o / y; });
}

Var neg(Var a) {
  return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double o) { return o; });
}

Var log(Var a) {
  const auto& av = a.value().values();
  if (std::any_of(av.begin(), av.end(), [](double v) { return !(v > 0.0); })) {
    throw DomainError("log: non-positive argument");
  }
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double o) { return 1.0 - o * o; });
}

Var abs(Var a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var clamp(Var a, double lo, double hi) {
  if (!(lo <= hi)) throw DomainError("clamp: empty interval");
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var scale(Var a, double factor) {
  return unary(a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var shift(Var a, double offset) {
  return unary(a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var operator+(Var a, Var b) { return add(a, b); }
Var operator-(Var a, Var b) { return sub(a, b); }
Var operator*(Var a, Var b) { return mul(a, b); }
Var operator/(Var a, Var b) { return div(a, b); }
Var operator-(Var a) { return neg(a); }
Var operator*(Var a, double c) { return scale(a, c); }
Var operator*(double c, Var a) { return scale(a, c); }
Var operator+(Var a, double c) { return shift(a, c); }
Var operator-(Var a, double c) { return shift(a, -c); }

Var matmul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Tensor& av = require_rank2(a, "matmul");
  const Tensor& bv = require_rank2(b, "matmul");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(av.shape()) + " * " +
                     shape_string(bv.shape()));
  }
  Tensor out(Shape{m, n});
  kernels::matmul(av.data(), bv.data(), out.data(), m, k, n);
  return tape.record(std::move(out), {a, b}, [m, k, n](const BackwardArgs& args) {
    if (Tensor* ga = args.input_grads[0]) kernels::matmul_nt_acc(args.grad.data(), args.inputs[1]->data(), ga->data(), m, k, n);
    if (Tensor* gb = args.input_grads[1]) kernels::matmul_tn_acc(args.inputs[0]->data(), args.grad.data(), gb->data(), m, k, n);
  });
}

Var affine(Var x, Var w, Var bias) {
  Tape& tape = tape_of(x, w);
  if (bias.tape() != &tape) throw Error("operands live on different tapes");
  const Tensor& xv = require_rank2(x, "affine");
  const Tensor& wv = require_rank2(w, "affine");
  const Tensor& bv = bias.value();
  const std::size_t m = xv.dim(0), k = xv.dim(1), n = wv.dim(1);
  if (wv.dim(0) != k) {
    throw ShapeError("affine: input " + shape_string(xv.shape()) + " vs weight " + shape_string(wv.shape()));
  }
  if (bv.rank() != 1 || bv.dim(0) != n) {
    throw ShapeError("affine: bias " + shape_string(bv.shape()) + " for " + std::to_string(n) + " outputs");
  }
  Tensor out(Shape{m, n});
  kernels::matmul(xv.data(), wv.data(), out.data(), m, k, n);
  double* op = out.data().data();
  const double* bp = bv.data().data();
  kernels::for_each_index(m * n, [&](std::size_t i) { op[i] += bp[i % n]; });
  return tape.record(std::move(out), {x, w, bias}, [m, k, n](const BackwardArgs& args) {
    if (Tensor* gx = args.input_grads[0]) kernels::matmul_nt_acc(args.grad.data(), args.inputs[1]->data(), gx->data(), m, k, n);
    if (Tensor* gw = args.input_grads[1]) kernels::matmul_tn_acc(args.inputs[0]->data(), args.grad.data(), gw->data(), m, k, n);
    if (Tensor* gb = args.input_grads[2]) kernels::column_sums_acc(args.grad.data(), gb->data(), m, n);
  });
}

Var sum(Var a) {
  const Tensor& av = a.value();
  double acc = 0.0;
  for (double v : av.data()) acc += v;
  return a.tape()->record(Tensor::scalar(acc), {a}, [](const BackwardArgs& args) {
    const double g = args.grad[0];
    for (double& v : args.input_grads[0]->data()) v += g;
  });
}

Var row_sum(Var a) {
  const Tensor& av = require_rank2(a, "row_sum");
  const std::size_t rows = av.dim(0), cols = av.dim(1);
  Tensor out(Shape{rows});
  kernels::row_sums(av.data(), out.data(), rows, cols);
  return a.tape()->record(std::move(out), {a}, [rows, cols](const BackwardArgs& args) {
    const double* g = args.grad.data().data();
    double* gp = args.input_grads[0]->data().data();
    kernels::for_each_index(rows * cols, [&](std::size_t i) { gp[i] += g[i / cols]; });
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = require_rank2(a, "slice_cols");
  const std::size_t rows = av.dim(0), cols = av.dim(1);
  if (begin >= end || end > cols) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                     std::to_string(cols) + " columns");
  }
  const std::size_t w = end - begin;
  Tensor out(Shape{rows, w});
  const double* ap = av.data().data();
  double* op = out.data().data();
  kernels::for_each_index(rows * w, [&](std::size_t i) { op[i] = ap[(i / w) * cols + begin + i % w]; });
  return a.tape()->record(std::move(out), {a}, [rows, cols, begin, w](const BackwardArgs& args) {
    const double* g = args.grad.data().data();
    double* gp = args.input_grads[0]->data().data();
    kernels::for_each_index(rows * w, [&](std::size_t i) { gp[(i / w) * cols + begin + i % w] += g[i]; });
  });
}

Var concat_cols(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Tensor& av = require_rank2(a, "concat_cols");
  const Tensor& bv = require_rank2(b, "concat_cols");
  const std::size_t rows = av.dim(0);
  if (bv.dim(0) != rows) {
    throw ShapeError("concat_cols: row counts differ " + shape_string(av.shape()) + " vs " +
                     shape_string(bv.shape()));
  }
  const std::size_t ca = av.dim(1), cb = bv.dim(1), c = ca + cb;
  Tensor out(Shape{rows, c});
  const double* ap = av.data().data();
  const double* bp = bv.data().data();
  double* op = out.data().data();
  kernels::for_each_index(rows * c, [&](std::size_t i) {
    const std::size_t r = i / c, j = i % c;
    op[i] = j < ca ? ap[r * ca + j] : bp[r * cb + j - ca];
  });
  return tape.record(std::move(out), {a, b}, [rows, ca, cb, c](const BackwardArgs& args) {
    const double* g = args.grad.data().data();
    if (Tensor* ga = args.input_grads[0]) {
      double* gp = ga->data().data();
      kernels::for_each_index(rows * ca, [&](std::size_t i) { gp[i] += g[(i / ca) * c + i % ca]; });
    }
    if (Tensor* gb = args.input_grads[1]) {
      double* gp = gb->data().data();
      kernels::for_each_index(rows * cb, [&](std::size_t i) { gp[i] += g[(i / cb) * c + ca + i % cb]; });
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape()->record(std::move(out), {a}, [](const BackwardArgs& args) {
    auto gp = args.input_grads[0]->data();
    auto g = args.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
  });
}

Var permute(Var a, std::vector<std::size_t> source, Shape shape) {
  const Tensor& av = a.value();
  if (source.size() != av.size() || shape_size(shape) != av.size()) {
    throw ShapeError("permute: index map of " + std::to_string(source.size()) + " entries for tensor " +
                     shape_string(av.shape()) + " -> " + shape_string(shape));
  }
  Tensor out(std::move(shape));
  const double* ap = av.data().data();
  double* op = out.data().data();
  const std::size_t* sp = source.data();
  kernels::for_each_index(source.size(), [&](std::size_t i) { op[i] = ap[sp[i]]; });
  auto shared = std::make_shared<const std::vector<std::size_t>>(std::move(source));
  return a.tape()->record(std::move(out), {a}, [shared](const BackwardArgs& args) {
    const double* g = args.grad.data().data();
    double* gp = args.input_grads[0]->data().data();
    const std::size_t* sp = shared->data();
    // Each source index appears once, so the scatter has no write conflicts.
    kernels::for_each_index(shared->size(), [&](std::size_t i) { gp[sp[i]] += g[i]; });
  });
}

Var reflect(Var x, Var v) {
  Tape& tape = tape_of(x, v);
  const Tensor& xv = require_rank2(x, "reflect");
  const Tensor& vv = v.value();
  const std::size_t rows = xv.dim(0), n = xv.dim(1);
  if (vv.rank() != 1 || vv.dim(0) != n) {
    throw ShapeError("reflect: generator " + shape_string(vv.shape()) + " for rows of width " + std::to_string(n));
  }
  const double norm_sq = std::inner_product(vv.data().begin(), vv.data().end(), vv.data().begin(), 0.0);
  if (!(norm_sq > 0.0)) throw DomainError("reflect: zero Householder generator");
  const double inv_norm = 1.0 / std::sqrt(norm_sq);
  std::vector<double> unit(n);
  for (std::size_t j = 0; j < n; ++j) unit[j] = vv[j] * inv_norm;

  Tensor out(xv.shape());
  kernels::reflect_rows(xv.data(), unit, out.data(), rows, n);

  return tape.record(std::move(out), {x, v}, [rows, n, norm_sq, unit](const BackwardArgs& args) {
    const Tensor& xin = *args.inputs[0];
    const Tensor& vin = *args.inputs[1];
    // The reflection is symmetric, so dL/dx = H g row by row.
    if (Tensor* gx = args.input_grads[0]) {
      Tensor hg(args.grad.shape());
      kernels::reflect_rows(args.grad.data(), unit, hg.data(), rows, n);
      auto gp = gx->data();
      auto hp = hg.data();
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += hp[i];
    }
    if (Tensor* gv = args.input_grads[1]) {
      // With a_r = x_r . v, b_r = g_r . v and s = v . v:
      // dL/dv = -(2/s) [ sum_r b_r x_r + sum_r a_r g_r - (2/s)(sum_r a_r b_r) v ].
      Tensor a(Shape{rows, 1}), b(Shape{rows, 1});
      const double* xp = xin.data().data();
      const double* gp = args.grad.data().data();
      const double* vp = vin.data().data();
      kernels::for_each_index(rows, [&](std::size_t r) {
        double ar = 0.0, br = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          ar += xp[r * n + j] * vp[j];
          br += gp[r * n + j] * vp[j];
        }
        a[r] = ar;
        b[r] = br;
      });
      double ab = 0.0;
      for (std::size_t r = 0; r < rows; ++r) ab += a[r] * b[r];
      Tensor acc(Shape{n, 1});
      kernels::matmul_tn_acc(xin.data(), b.data(), acc.data(), rows, n, 1);
      kernels::matmul_tn_acc(args.grad.data(), a.data(), acc.data(), rows, n, 1);
      const double c = -2.0 / norm_sq;
      auto out_grad = gv->data();
      for (std::size_t j = 0; j < n; ++j) out_grad[j] += c * (acc[j] - (2.0 / norm_sq) * ab * vp[j]);
    }
  });
}

}  // namespace pie::ad
