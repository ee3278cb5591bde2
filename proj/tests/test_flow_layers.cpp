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


#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "pie/errors.hpp"
#include "pie/flow_layers.hpp"
#include "support.hpp"

using pie::Shape;
using pie::Tensor;
namespace flow = pie::flow;
namespace pt = pie::testing;

namespace {

std::vector<double> coupling_map(const flow::CouplingLayer& layer, const std::vector<double>& x) {
  return pt::to_vec(flow::coupling_forward(layer, Tensor(Shape{x.size()}, x)).y);
}

}  // namespace

TEST_CASE("coupling: odd width is rejected") {
  pie::Rng rng(1);
  CHECK_THROWS_AS(flow::CouplingLayer("c", 5, rng, 1.0), pie::ShapeError);
  flow::CouplingLayer layer("c", 4, rng, 1.0);
  CHECK_THROWS_AS(flow::coupling_forward(layer, Tensor::from({1, 2, 3})), pie::ShapeError);
}

TEST_CASE("coupling: unit scales and zero biases give the identity") {
  pie::Rng rng(2);
  flow::CouplingLayer layer("c", 6, rng, 1.0);
  for (auto* net : {&layer.scale1(), &layer.scale2(), &layer.bias1(), &layer.bias2()}) net->make_constant(0.0);
  const Tensor x = Tensor::from({0.3, -1, 2, 4, 5, -6});
  const auto out = flow::coupling_forward(layer, x);
  CHECK(out.y == x);
  CHECK(out.log_det.item() == 0.0);
}

TEST_CASE("coupling: s1 = 2 on three coordinates gives log det 3 ln 2") {
  pie::Rng rng(3);
  flow::CouplingLayer layer("c", 6, rng, 1.0);
  layer.scale1().make_constant(std::log(2.0));
  layer.scale2().make_constant(0.0);
  layer.bias1().make_constant(0.0);
  layer.bias2().make_constant(0.0);
  const Tensor x = Tensor::from({1, 2, 3, 4, 5, 6});
  const auto out = flow::coupling_forward(layer, x);
  CHECK(out.log_det.item() == doctest::Approx(3 * std::log(2.0)).epsilon(1e-14));
  CHECK(out.log_det.item() == doctest::Approx(2.0794).epsilon(1e-4));
  for (std::size_t i = 0; i < 3; ++i) CHECK(out.y[i] == doctest::Approx(2 * x[i]).epsilon(1e-14));
  for (std::size_t i = 3; i < 6; ++i) CHECK(out.y[i] == doctest::Approx(x[i]).epsilon(1e-14));
}

TEST_CASE("coupling: unit scales and constant biases shift each half") {
  pie::Rng rng(4);
  flow::CouplingLayer layer("c", 4, rng, 1.0);
  layer.scale1().make_constant(0.0);
  layer.scale2().make_constant(0.0);
  layer.bias1().make_constant(0.5);
  layer.bias2().make_constant(-2.0);
  const Tensor y = Tensor::from({1, 2, 3, 4});
  const Tensor x = flow::coupling_inverse(layer, y);
  CHECK(x == Tensor::from({0.5, 1.5, 5, 6}));
}

TEST_CASE("coupling: log det matches the finite-difference Jacobian") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    pie::Rng rng(seed);
    flow::CouplingLayer layer("c", 8, rng, 1.0);
    const auto x = pt::to_vec(pt::random_tensor({8}, rng));
    const double analytic = flow::coupling_forward(layer, Tensor(Shape{8}, x)).log_det.item();
    const double numeric = pt::log_abs_det(pt::fd_jacobian([&](const auto& v) { return coupling_map(layer, v); }, x));
    CHECK(pt::relative_error(analytic, numeric) < 1e-4);
  }
}

TEST_CASE("coupling: round trips in both directions") {
  pie::Rng rng(5);
  flow::CouplingLayer layer("c", 8, rng, 1.0);
  const Tensor x = pt::random_tensor({1000, 8}, rng, -3, 3);
  const Tensor back = flow::coupling_inverse(layer, flow::coupling_forward(layer, x).y);
  CHECK(pie::max_abs_diff(x, back) < 1e-8);
  const Tensor y = pt::random_tensor({1000, 8}, rng, -3, 3);
  const Tensor again = flow::coupling_forward(layer, flow::coupling_inverse(layer, y)).y;
  CHECK(pie::max_abs_diff(y, again) < 1e-8);
}

TEST_CASE("coupling: non-finite scale output is reported") {
  pie::Rng rng(6);
  flow::CouplingLayer layer("c", 4, rng, 1.0);
  const Tensor x = Tensor::from({1, 2, std::nan(""), 0});
  CHECK_THROWS_AS(flow::coupling_forward(layer, x), pie::NonFiniteError);
}

TEST_CASE("householder: reflection examples") {
  const flow::HouseholderTransform e1("h", {Tensor::from({1, 0, 0})});
  CHECK(flow::householder_apply(e1, Tensor::from({1, 2, 3}), false).y == Tensor::from({-1, 2, 3}));
  const flow::HouseholderTransform diag("h", {Tensor::from({1, 1})});
  const auto out = flow::householder_apply(diag, Tensor::from({3, 7}), false);
  CHECK(out.y[0] == doctest::Approx(-7.0).epsilon(1e-15));
  CHECK(out.y[1] == doctest::Approx(-3.0).epsilon(1e-15));
  CHECK(out.log_det == 0.0);
  CHECK_THROWS_AS(flow::HouseholderTransform("h", {Tensor::from({0, 0})}), pie::DomainError);
}

TEST_CASE("householder: chained reflections are orthogonal and invert exactly") {
  pie::Rng rng(7);
  for (std::size_t count : {1, 3, 5}) {
    flow::HouseholderTransform h("h", 6, count, rng);
    const Tensor M = h.matrix();
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t j = 0; j < 6; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < 6; ++k) dot += M.at(i, k) * M.at(j, k);
        CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) < 1e-10);
      }
    }
    const Tensor x = pt::random_tensor({1000, 6}, rng);
    const Tensor y = flow::householder_apply(h, x, false).y;
    CHECK(pie::max_abs_diff(flow::householder_apply(h, y, true).y, x) < 1e-12);
    // y = M x row-wise.
    for (std::size_t j = 0; j < 6; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 6; ++k) acc += M.at(j, k) * x.at(0, k);
      CHECK(std::abs(acc - y.at(0, j)) < 1e-12);
    }
    const auto J = pt::fd_jacobian(
        [&](const auto& v) { return pt::to_vec(flow::householder_apply(h, Tensor(Shape{6}, v), false).y); },
        pt::to_vec(pt::random_tensor({6}, rng)));
    CHECK(std::abs(std::abs(J.determinant()) - 1.0) < 1e-6);
  }
}

TEST_CASE("downsample: defined ordering and exact round trip") {
  const Tensor x(Shape{1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  const Tensor y = flow::downsample(x);
  CHECK(y.shape() == Shape{4, 1, 1});
  CHECK(y.values() == std::vector<double>{1, 2, 3, 4});
  CHECK_THROWS_AS(flow::downsample(Tensor(Shape{1, 3, 2})), pie::ShapeError);

  pie::Rng rng(8);
  const Tensor big = pt::random_tensor({3, 4, 4}, rng);
  const Tensor d = flow::downsample(big);
  CHECK(d.shape() == Shape{12, 2, 2});
  CHECK(flow::upsample(d) == big);
  auto a = big.values();
  auto b = d.values();
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
  // Channel 4c + k holds position k of every 2x2 block of channel c.
  CHECK(d[(5 * 2 + 1) * 2 + 0] == big[(1 * 4 + 2 * 1 + 0) * 4 + 2 * 0 + 1]);

  const auto J = pt::fd_jacobian([](const auto& v) { return pt::to_vec(flow::downsample(Tensor(Shape{2, 2, 4}, v))); },
                                 pt::to_vec(pt::random_tensor({16}, rng)));
  CHECK(std::abs(std::abs(J.determinant()) - 1.0) < 1e-6);
}

TEST_CASE("downsample layer agrees with the channel-first helper") {
  pie::Rng rng(9);
  const std::size_t c = 2, h = 4, w = 6;
  const Tensor chw = pt::random_tensor({c, h, w}, rng);
  Tensor rows(Shape{h * w, c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t p = 0; p < h * w; ++p) rows[p * c + ch] = chw[ch * h * w + p];
  }
  pie::ad::Tape tape(false);
  const flow::Layout in{1, h, w, c};
  const auto y = flow::DownsampleLayer{}.forward(tape.constant(rows), in);
  const Tensor expected = flow::downsample(chw);
  const std::size_t oc = 4 * c, hw = (h / 2) * (w / 2);
  for (std::size_t ch = 0; ch < oc; ++ch) {
    for (std::size_t p = 0; p < hw; ++p) CHECK(y.value()[p * oc + ch] == expected[ch * hw + p]);
  }
  const auto back = flow::DownsampleLayer{}.inverse(y, flow::DownsampleLayer::output_layout(in));
  CHECK(back.value() == rows);
}

TEST_CASE("split: coordinate partition and analytic log densities") {
  pie::Rng rng(10);
  const flow::SplitLayer split("s", 4, 2, flow::ResidualMean::Zero, 1.0, rng, 1.0);
  const auto out = flow::split_forward(split, Tensor::from({1, 2, 3, 4}));
  CHECK(out.z == Tensor::from({1, 2}));
  CHECK(out.r == Tensor::from({3, 4}));

  const flow::SplitLayer unit("s", 3, 1, flow::ResidualMean::Zero, 1.0, rng, 1.0);
  const double lp = flow::split_forward(unit, Tensor::from({5, 0, 0})).log_prob.item();
  CHECK(lp == doctest::Approx(-std::log(2 * std::numbers::pi)).epsilon(1e-14));
  CHECK(lp == doctest::Approx(-1.8379).epsilon(1e-4));

  const flow::SplitLayer narrow("s", 2, 1, flow::ResidualMean::Zero, 0.01, rng, 1.0);
  const double lp2 = flow::split_forward(narrow, Tensor::from({7, 0.1})).log_prob.item();
  CHECK(lp2 == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi * 0.01) - 0.5).epsilon(1e-14));
  CHECK(lp2 == doctest::Approx(0.8836).epsilon(1e-4));
}

TEST_CASE("split: inverse extends with g(z)") {
  pie::Rng rng(11);
  const flow::SplitLayer zero("s", 4, 2, flow::ResidualMean::Zero, 0.1, rng, 1.0);
  CHECK(flow::split_inverse(zero, Tensor::from({1, 2})) == Tensor::from({1, 2, 0, 0}));
  CHECK(flow::split_forward(zero, flow::split_inverse(zero, Tensor::from({1, 2}))).z == Tensor::from({1, 2}));

  flow::SplitLayer net("s", 5, 2, flow::ResidualMean::Network, 0.1, rng, 1.0);
  const Tensor z = Tensor::from({0.3, -0.7});
  const Tensor x = flow::split_inverse(net, z);
  pie::ad::Tape tape(false);
  const Tensor g = net.mean_network()->forward(tape, tape.constant(z.reshaped(Shape{1, 2}))).value();
  CHECK(x.values() == std::vector<double>{0.3, -0.7, g[0], g[1], g[2]});

  // Residual log-prob with a trainable mean, written out directly.
  const Tensor full = Tensor::from({0.3, -0.7, 1.0, 2.0, -1.0});
  const double lp = flow::split_forward(net, full).log_prob.item();
  CHECK(lp == doctest::Approx(pt::gaussian_log_density({1, 2, -1}, pt::to_vec(g), 0.1)).epsilon(1e-12));
  CHECK(flow::split_forward(net, x).log_prob.item() ==
        doctest::Approx(-1.5 * std::log(2 * std::numbers::pi * 0.1)).epsilon(1e-12));
}

TEST_CASE("split: invalid configurations") {
  pie::Rng rng(12);
  CHECK_THROWS_AS(flow::SplitLayer("s", 4, 4, flow::ResidualMean::Zero, 1.0, rng, 1.0), pie::ShapeError);
  CHECK_THROWS_AS(flow::SplitLayer("s", 4, 0, flow::ResidualMean::Zero, 1.0, rng, 1.0), pie::ShapeError);
  CHECK_THROWS_AS(flow::SplitLayer("s", 4, 2, flow::ResidualMean::Zero, 0.0, rng, 1.0), pie::ConfigError);
  const flow::SplitLayer split("s", 4, 2, flow::ResidualMean::Zero, 1.0, rng, 1.0);
  CHECK_THROWS_AS(flow::split_forward(split, Tensor::from({1, 2, 3})), pie::ShapeError);
}

TEST_CASE("hidden width rule") {
  CHECK(flow::hidden_width(1) == 16);
  CHECK(flow::hidden_width(8) == 16);
  CHECK(flow::hidden_width(20) == 40);
}
