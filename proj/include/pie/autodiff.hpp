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

#pragma once

// Define-by-run reverse-mode differentiation.
//
// A Tape records every operation applied to its Vars. Parameters enter the
// tape as leaves; `Tape::backward` walks the nodes in reverse and returns one
// gradient per registered parameter, keyed by parameter name. The tape is
// left intact after backward, so calling it again yields the same gradients.
// A tape built with `recording == false` evaluates values only and refuses
// backward; this is the inference path.
//
// Broadcasting is limited to scalar expansion: a rank-0 operand of a binary
// op is applied to every element of the other operand.

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pie/tensor.hpp"

namespace pie::ad {

/// A named trainable tensor.
struct Parameter {
  std::string name;
  Tensor value;
};

using Gradients = std::map<std::string, Tensor>;

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t index() const noexcept { return index_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

struct BackwardArgs {
  const Tensor& output;
  const Tensor& grad;
  std::span<const Tensor* const> inputs;
  /// Entry i is null when input i needs no gradient.
  std::span<Tensor* const> input_grads;
};

using BackwardFn = std::function<void(const BackwardArgs&)>;

class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var constant(Tensor value);
  /// Leaf tracking `p`. Registering the same parameter twice returns the same Var.
  Var parameter(const Parameter& p);

  /// Appends an op node. `backward` is dropped when no input needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

  const Tensor& value(std::size_t index) const { return nodes_[index].value; }
  bool requires_grad(Var v) const { return nodes_[v.index()].requires_grad; }

  /// Gradient of the scalar `loss` with respect to every registered parameter.
  Gradients backward(Var loss) const;

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void check_owned(Var v) const;

  bool recording_;
  std::deque<Node> nodes_;
  std::vector<std::pair<std::string, std::size_t>> parameters_;
  std::unordered_map<const Parameter*, std::size_t> parameter_nodes_;
};

// Elementwise. Binary ops require equal shapes unless one side is rank 0.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// Throws DomainError if any divisor is zero.
Var div(Var a, Var b);
Var neg(Var a);
Var exp(Var a);
/// Throws DomainError if any input is <= 0.
Var log(Var a);
Var tanh(Var a);
Var abs(Var a);
Var square(Var a);
Var clamp(Var a, double lo, double hi);
Var scale(Var a, double factor);
Var shift(Var a, double offset);

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator*(Var a, double c);
Var operator*(double c, Var a);
Var operator+(Var a, double c);
Var operator-(Var a, double c);

/// Rank-2 matrix product.
Var matmul(Var a, Var b);
/// x (m x k) * w (k x n) + bias (n), bias added to every row.
Var affine(Var x, Var w, Var bias);

/// Sum of all entries, rank-0 result.
Var sum(Var a);
/// Per-row sums of a rank-2 tensor, result shape {rows}.
Var row_sum(Var a);

/// Columns [begin, end) of a rank-2 tensor.
Var slice_cols(Var a, std::size_t begin, std::size_t end);
/// Horizontal concatenation of two rank-2 tensors with equal row counts.
Var concat_cols(Var a, Var b);
Var reshape(Var a, Shape shape);
/// out.flat[i] = a.flat[source[i]]; `source` must be a permutation of a's indices.
Var permute(Var a, std::vector<std::size_t> source, Shape shape);

/// Householder reflection of every row of `x` (m x n) about the generator `v` (n):
/// row - 2 (row . v) v / (v . v). Throws DomainError for a zero generator.
Var reflect(Var x, Var v);

}  // namespace pie::ad
