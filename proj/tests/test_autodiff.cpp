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


#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "pie/autodiff.hpp"
#include "pie/errors.hpp"
#include "pie/flow_layers.hpp"
#include "support.hpp"

using pie::Shape;
using pie::Tensor;
namespace ad = pie::ad;

namespace {

using Builder = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

// loss = sum(w * f(inputs)) with fixed random weights w; returns the worst relative error of
// every input entry's gradient against a central difference of the same loss.
double gradient_error(const Builder& f, std::vector<ad::Parameter> inputs, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  Tensor weights;
  auto loss_of = [&](ad::Tape& tape) {
    std::vector<ad::Var> vars;
    for (const auto& p : inputs) vars.push_back(tape.parameter(p));
    const ad::Var out = f(tape, vars);
    if (weights.shape() != out.shape()) weights = pie::testing::random_tensor(out.shape(), rng, 0.5, 1.5);
    return ad::sum(out * tape.constant(weights));
  };
  ad::Tape tape;
  const ad::Gradients grads = tape.backward(loss_of(tape));

  double worst = 0.0;
  for (auto& p : inputs) {
    const Tensor& g = grads.at(p.name);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      const double numeric = pie::testing::fd_scalar(
          [&](double v) {
            p.value[i] = v;
            ad::Tape t(false);
            return loss_of(t).value().item();
          },
          saved);
      p.value[i] = saved;
      worst = std::max(worst, pie::testing::relative_error(g[i], numeric, 1e-6));
    }
  }
  return worst;
}

ad::Parameter param(const std::string& name, Shape shape, std::uint64_t seed, double lo = -2.0, double hi = 2.0) {
  std::mt19937_64 rng(seed);
  return {name, pie::testing::random_tensor(std::move(shape), rng, lo, hi)};
}

}  // namespace

TEST_CASE("elementwise forward values") {
  ad::Tape tape(false);
  const auto a = tape.constant(Tensor::from({1, 2}));
  const auto b = tape.constant(Tensor::from({3, 4}));
  CHECK(ad::add(a, b).value() == Tensor::from({4, 6}));
  CHECK(ad::mul(a, tape.constant(Tensor::ones({2}))).value() == a.value());
  const auto back = ad::exp(ad::log(tape.constant(Tensor::from({0.5, 2.0})))).value();
  CHECK(std::abs(back[0] - 0.5) < 1e-12);
  CHECK(std::abs(back[1] - 2.0) < 1e-12);
  CHECK(ad::abs(tape.constant(Tensor::from({-3, 2}))).value() == Tensor::from({3, 2}));
  CHECK(ad::sub(b, a).value() == Tensor::from({2, 2}));
  CHECK(ad::div(b, a).value() == Tensor::from({3, 2}));
  CHECK(ad::tanh(tape.constant(Tensor::from({0.0}))).value()[0] == 0.0);
  // Scalar expansion on either side.
  CHECK((tape.constant(Tensor::scalar(2.0)) * a).value() == Tensor::from({2, 4}));
  CHECK((a + tape.constant(Tensor::scalar(1.0))).value() == Tensor::from({2, 3}));
}

TEST_CASE("elementwise errors") {
  ad::Tape tape(false);
  const auto a = tape.constant(Tensor::from({1, 2}));
  CHECK_THROWS_AS(ad::add(a, tape.constant(Tensor::from({1, 2, 3}))), pie::ShapeError);
  CHECK_THROWS_AS(ad::log(tape.constant(Tensor::from({1, 0}))), pie::DomainError);
  CHECK_THROWS_AS(ad::log(tape.constant(Tensor::from({-1}))), pie::DomainError);
  CHECK_THROWS_AS(ad::div(a, tape.constant(Tensor::from({1, 0}))), pie::DomainError);
}

TEST_CASE("matmul values and errors") {
  ad::Tape tape(false);
  const auto m = tape.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  const auto eye = tape.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  CHECK(ad::matmul(eye, m).value() == m.value());
  CHECK(ad::matmul(tape.constant(Tensor::matrix(1, 2, {1, 1})), tape.constant(Tensor::matrix(2, 1, {1, 1})))
            .value() == Tensor::matrix(1, 1, {2}));
  CHECK_THROWS_AS(ad::matmul(m, tape.constant(Tensor::matrix(3, 1, {1, 1, 1}))), pie::ShapeError);
}

TEST_CASE("orthogonal product from chained reflections is the identity") {
  std::mt19937_64 rng(9);
  pie::flow::HouseholderTransform h("h", 4, 3, rng);
  const Tensor A = h.matrix();
  Tensor At(Shape{4, 4});
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) At.at(i, j) = A.at(j, i);
  }
  ad::Tape tape(false);
  const Tensor I = ad::matmul(tape.constant(A), tape.constant(At)).value();
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(I.at(i, j) - (i == j ? 1.0 : 0.0)) < 1e-10);
  }
}

TEST_CASE("backward of sum of squares") {
  const ad::Parameter x{"x", Tensor::from({1, 2, 3})};
  ad::Tape tape;
  const auto loss = ad::sum(ad::square(tape.parameter(x)));
  const auto g = tape.backward(loss).at("x");
  CHECK(g == Tensor::from({2, 4, 6}));
}

TEST_CASE("constant loss yields zero gradients") {
  const ad::Parameter x{"x", Tensor::from({1, 2})};
  ad::Tape tape;
  tape.parameter(x);
  const auto g = tape.backward(tape.constant(Tensor::scalar(3.0)));
  CHECK(g.at("x") == Tensor::zeros({2}));
}

TEST_CASE("backward errors") {
  const ad::Parameter x{"x", Tensor::from({1, 2})};
  ad::Tape tape;
  const auto v = tape.parameter(x);
  CHECK_THROWS_AS(tape.backward(v), pie::ShapeError);
  ad::Tape other;
  CHECK_THROWS_AS(other.backward(ad::sum(v)), pie::Error);
  ad::Tape frozen(false);
  const auto fv = frozen.parameter(x);
  CHECK_THROWS_AS(frozen.backward(ad::sum(fv)), pie::Error);
  const ad::Parameter dup{"x", Tensor::from({1})};
  CHECK_THROWS_AS(tape.parameter(dup), pie::Error);
}

TEST_CASE("gradient accumulates over repeated uses") {
  const ad::Parameter x{"x", Tensor::from({1.5, -0.5})};
  ad::Tape tape;
  const auto v = tape.parameter(x);
  const auto g = tape.backward(ad::sum(v * v + v)).at("x");
  CHECK(g[0] == doctest::Approx(4.0));
  CHECK(g[1] == doctest::Approx(0.0));
}

TEST_CASE("tape replay is deterministic") {
  const auto x = param("x", {5, 3}, 4);
  const auto w = param("w", {3, 2}, 5);
  auto run = [&] {
    ad::Tape tape;
    const auto y = ad::tanh(ad::matmul(tape.parameter(x), tape.parameter(w)));
    const auto loss = ad::sum(ad::square(y));
    return std::make_pair(loss.value(), tape.backward(loss));
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("reverse-mode gradients match central differences for every op") {
  const double tol = 1e-3;
  auto unary = [&](const char* name, auto op, double lo, double hi) {
    INFO(name);
    CHECK(gradient_error([&](ad::Tape&, const auto& v) { return op(v[0]); }, {param("a", {3, 4}, 7, lo, hi)}) < tol);
  };
  auto binary = [&](const char* name, auto op, double lo, double hi) {
    INFO(name);
    CHECK(gradient_error([&](ad::Tape&, const auto& v) { return op(v[0], v[1]); },
                         {param("a", {3, 4}, 7), param("b", {3, 4}, 8, lo, hi)}) < tol);
    CHECK(gradient_error([&](ad::Tape&, const auto& v) { return op(v[0], v[1]); },
                         {param("a", {}, 9), param("b", {3, 4}, 8, lo, hi)}) < tol);
    CHECK(gradient_error([&](ad::Tape&, const auto& v) { return op(v[0], v[1]); },
                         {param("a", {3, 4}, 7), param("b", {}, 10, lo, hi)}) < tol);
  };
  binary("add", [](ad::Var a, ad::Var b) { return ad::add(a, b); }, -2, 2);
  binary("sub", [](ad::Var a, ad::Var b) { return ad::sub(a, b); }, -2, 2);
  binary("mul", [](ad::Var a, ad::Var b) { return ad::mul(a, b); }, -2, 2);
  binary("div", [](ad::Var a, ad::Var b) { return ad::div(a, b); }, 0.5, 2);
  unary("neg", [](ad::Var a) { return ad::neg(a); }, -2, 2);
  unary("exp", [](ad::Var a) { return ad::exp(a); }, -2, 2);
  unary("log", [](ad::Var a) { return ad::log(a); }, 0.2, 2);
  unary("tanh", [](ad::Var a) { return ad::tanh(a); }, -2, 2);
  unary("abs", [](ad::Var a) { return ad::abs(a); }, 0.1, 2);
  unary("abs-negative", [](ad::Var a) { return ad::abs(a); }, -2, -0.1);
  unary("square", [](ad::Var a) { return ad::square(a); }, -2, 2);
  unary("clamp", [](ad::Var a) { return ad::clamp(a, -1.0, 1.0); }, -2, 2);
  unary("scale", [](ad::Var a) { return ad::scale(a, -1.7); }, -2, 2);
  unary("shift", [](ad::Var a) { return ad::shift(a, 0.3); }, -2, 2);
  unary("sum", [](ad::Var a) { return ad::sum(a); }, -2, 2);
  unary("row_sum", [](ad::Var a) { return ad::row_sum(a); }, -2, 2);
  unary("slice_cols", [](ad::Var a) { return ad::slice_cols(a, 1, 3); }, -2, 2);
  unary("reshape", [](ad::Var a) { return ad::reshape(a, Shape{2, 6}); }, -2, 2);
  unary("permute", [](ad::Var a) { return ad::permute(a, {11, 0, 5, 3, 2, 1, 4, 6, 7, 8, 10, 9}, Shape{12}); }, -2, 2);

  CHECK(gradient_error([](ad::Tape&, const auto& v) { return ad::matmul(v[0], v[1]); },
                       {param("a", {3, 4}, 1), param("b", {4, 5}, 2)}) < tol);
  CHECK(gradient_error([](ad::Tape&, const auto& v) { return ad::affine(v[0], v[1], v[2]); },
                       {param("x", {6, 4}, 1), param("w", {4, 3}, 2), param("b", {3}, 3)}) < tol);
  CHECK(gradient_error([](ad::Tape&, const auto& v) { return ad::concat_cols(v[0], v[1]); },
                       {param("a", {3, 2}, 1), param("b", {3, 5}, 2)}) < tol);
  CHECK(gradient_error([](ad::Tape&, const auto& v) { return ad::reflect(v[0], v[1]); },
                       {param("x", {5, 4}, 1), param("v", {4}, 2)}) < tol);
}

TEST_CASE("composite loss gradient matches central differences") {
  const double err = gradient_error(
      [](ad::Tape& tape, const auto& v) {
        const auto h = ad::tanh(ad::affine(v[0], v[1], v[2]));
        const auto s = ad::exp(ad::clamp(h, -5.0, 5.0));
        return ad::log(ad::row_sum(ad::square(ad::reflect(s, v[3])) + tape.constant(Tensor::scalar(1.0))));
      },
      {param("x", {4, 3}, 11), param("w", {3, 6}, 12, -1, 1), param("b", {6}, 13), param("v", {6}, 14)});
  CHECK(err < 1e-3);
}
