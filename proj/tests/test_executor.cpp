/* Copyright 2026 The utoe Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <random>

#include "doctest.h"
#include "support/oracles.hpp"
#include "support/test_graphs.hpp"
#include "utoe/board_registry.hpp"
#include "utoe/executor.hpp"
#include "utoe/worker.hpp"

using namespace utoe;
using namespace utoe::testing;

namespace {

DeployableModel compile_on_disco(const ModelGraph& g) {
  return compile_artifact(g, BoardRegistry::builtin().lookup("stm32f746g-disco"));
}

std::vector<uint8_t> f32_bytes(const std::vector<float>& v) {
  std::vector<uint8_t> out(v.size() * 4);
  std::memcpy(out.data(), v.data(), out.size());
  return out;
}

int8_t quant8(double x, double scale, int zp) {
  double q = std::nearbyint(x / scale) + zp;
  return static_cast<int8_t>(std::max(-128.0, std::min(127.0, q)));
}

}  // namespace

TEST_CASE("identity-quantized relu maps [-1, 0.5] to [0, 0.5]") {
  ModelGraph g;
  g.name = "qrelu";
  QuantParams q{1.0 / 64.0, 0};
  TensorSpec in{"in", DType::kFp32, {1, 2}, TensorKind::kInput, std::nullopt};
  TensorSpec xq{"xq", DType::kInt8, {1, 2}, TensorKind::kIntermediate, q};
  TensorSpec rq{"rq", DType::kInt8, {1, 2}, TensorKind::kIntermediate, q};
  TensorSpec out{"out", DType::kFp32, {1, 2}, TensorKind::kOutput, std::nullopt};
  g.tensors = {in, xq, rq, out};
  g.nodes = {
      {"q0", OpKind::kQuantize, {"in"}, {"xq"}, {}},
      {"r0", OpKind::kRelu, {"xq"}, {"rq"}, {}},
      {"d0", OpKind::kDequantize, {"rq"}, {"out"}, {}},
  };
  auto y = execute_nodes(g, std::vector<float>{-1.0f, 0.5f});
  CHECK(y[0] == 0.0f);
  CHECK(y[1] == 0.5f);
}

TEST_CASE("quantize rounds half to even") {
  QuantParams q{1.0, 0};
  CHECK(quantize_value(0.5f, q) == 0);
  CHECK(quantize_value(1.5f, q) == 2);
  CHECK(quantize_value(2.5f, q) == 2);
  CHECK(quantize_value(-0.5f, q) == 0);
  CHECK(quantize_value(-1.5f, q) == -2);
  CHECK(quantize_value(300.0f, q) == 127);   // clamps high
  CHECK(quantize_value(-300.0f, q) == -128); // clamps low
  QuantParams shifted{0.5, 10};
  CHECK(quantize_value(1.0f, shifted) == 12);
}

TEST_CASE("int8 dense matches the fp32 oracle within the analytic bound") {
  std::mt19937_64 rng(1001);
  for (int instance = 0; instance < 50; ++instance) {
    int64_t in_w = 1 + static_cast<int64_t>(rng() % 24);
    int64_t out_w = 1 + static_cast<int64_t>(rng() % 12);

    auto unit = [&] { return (static_cast<double>(rng() % 20001) - 10000.0) / 10000.0; };
    std::vector<float> x(in_w), w(in_w * out_w), b(out_w);
    for (auto& v : x) v = static_cast<float>(unit());
    for (auto& v : w) v = static_cast<float>(unit());
    for (auto& v : b) v = static_cast<float>(unit() * 2.0);

    const double sx = 1.0 / 120.0, sw = 1.0 / 120.0;
    const int zx = static_cast<int>(rng() % 11) - 5;
    // Real-range bound: |y| <= in_w + 2; keep the output scale wide enough
    // that requantization cannot clamp.
    const double sy = (static_cast<double>(in_w) + 3.0) / 120.0;
    QuantParams qx{sx, zx}, qw{sw, 0}, qacc{sx * sw, 0}, qy{sy, 0};

    ModelGraph g;
    g.name = "dense-oracle";
    g.tensors = {
        {"in", DType::kFp32, {1, in_w}, TensorKind::kInput, std::nullopt},
        {"xq", DType::kInt8, {1, in_w}, TensorKind::kIntermediate, qx},
        {"w", DType::kInt8, {out_w, in_w}, TensorKind::kParam, qw},
        {"b", DType::kInt32, {out_w}, TensorKind::kParam, qacc},
        {"acc", DType::kInt32, {1, out_w}, TensorKind::kIntermediate, qacc},
        {"yq", DType::kInt8, {1, out_w}, TensorKind::kIntermediate, qy},
        {"out", DType::kFp32, {1, out_w}, TensorKind::kOutput, std::nullopt},
    };
    g.nodes = {
        {"q0", OpKind::kQuantize, {"in"}, {"xq"}, {}},
        {"d0", OpKind::kDense, {"xq", "w"}, {"acc"}, {}},
        {"a0", OpKind::kAdd, {"acc", "b"}, {"yq"}, {}},
        {"dq", OpKind::kDequantize, {"yq"}, {"out"}, {}},
    };
    std::vector<uint8_t> wq(w.size()), bq(b.size() * 4);
    for (size_t i = 0; i < w.size(); ++i) wq[i] = static_cast<uint8_t>(quant8(w[i], sw, 0));
    for (size_t i = 0; i < b.size(); ++i) {
      int32_t v = static_cast<int32_t>(std::nearbyint(b[i] / (sx * sw)));
      std::memcpy(bq.data() + 4 * i, &v, 4);
    }
    g.param_data["w"] = wq;
    g.param_data["b"] = bq;
    validate(g);

    auto got = execute_nodes(g, x);
    auto expected = dense_reference(x, w, b, 1, in_w, out_w);

    for (int64_t o = 0; o < out_w; ++o) {
      // Error budget: output rounding + fp32 multiply noise + input and
      // weight quantization noise + bias rounding.
      double bound = sy * 0.5 + sy * 128.0 * std::pow(2.0, -22);
      for (int64_t i = 0; i < in_w; ++i) {
        double x_hat = sx * (quant8(x[i], sx, zx) - zx);
        bound += std::abs(x_hat) * sw / 2.0 + std::abs(w[o * in_w + i]) * sx / 2.0;
      }
      bound += sx * sw * 0.5 + 1e-9;
      CHECK(std::abs(got[o] - expected[o]) <= bound);
    }
  }
}

TEST_CASE("int8 conv2d matches the fp32 oracle within the analytic bound") {
  std::mt19937_64 rng(2002);
  for (int instance = 0; instance < 50; ++instance) {
    int64_t cin = 1 + static_cast<int64_t>(rng() % 3);
    int64_t cout = 1 + static_cast<int64_t>(rng() % 4);
    int64_t hw = 5 + static_cast<int64_t>(rng() % 5);
    int64_t k = 1 + static_cast<int64_t>(rng() % 3);
    int64_t stride = 1 + static_cast<int64_t>(rng() % 2);
    int64_t pad = static_cast<int64_t>(rng() % 2);
    int64_t ho = (hw + 2 * pad - k) / stride + 1;

    auto unit = [&] { return (static_cast<double>(rng() % 20001) - 10000.0) / 10000.0; };
    std::vector<float> x(cin * hw * hw), w(cout * cin * k * k);
    for (auto& v : x) v = static_cast<float>(unit());
    for (auto& v : w) v = static_cast<float>(unit());

    const double sx = 1.0 / 120.0, sw = 1.0 / 120.0;
    const int zx = static_cast<int>(rng() % 7) - 3;
    const double sy = (static_cast<double>(cin * k * k) + 2.0) / 120.0;
    QuantParams qx{sx, zx}, qw{sw, 0}, qacc{sx * sw, 0}, qy{sy, 0};

    ModelGraph g;
    g.name = "conv-oracle";
    g.tensors = {
        {"in", DType::kFp32, {1, cin, hw, hw}, TensorKind::kInput, std::nullopt},
        {"xq", DType::kInt8, {1, cin, hw, hw}, TensorKind::kIntermediate, qx},
        {"w", DType::kInt8, {cout, cin, k, k}, TensorKind::kParam, qw},
        {"acc", DType::kInt32, {1, cout, ho, ho}, TensorKind::kIntermediate, qacc},
        {"zero", DType::kInt32, {cout}, TensorKind::kParam, qacc},
        {"yq", DType::kInt8, {1, cout, ho, ho}, TensorKind::kIntermediate, qy},
        {"out", DType::kFp32, {1, cout, ho, ho}, TensorKind::kOutput, std::nullopt},
    };
    g.nodes = {
        {"q0", OpKind::kQuantize, {"in"}, {"xq"}, {}},
        {"c0", OpKind::kConv2d, {"xq", "w"}, {"acc"},
         {{"stride", stride}, {"padding", pad}}},
        {"a0", OpKind::kAdd, {"acc", "zero"}, {"yq"}, {}},
        {"dq", OpKind::kDequantize, {"yq"}, {"out"}, {}},
    };
    std::vector<uint8_t> wq(w.size());
    for (size_t i = 0; i < w.size(); ++i) wq[i] = static_cast<uint8_t>(quant8(w[i], sw, 0));
    g.param_data["w"] = wq;
    g.param_data["zero"] = std::vector<uint8_t>(cout * 4, 0);
    validate(g);

    auto got = execute_nodes(g, x);

    // Direct double-precision convolution as the reference.
    auto x_at = [&](int64_t c, int64_t i, int64_t j) { return x[(c * hw + i) * hw + j]; };
    auto w_at = [&](int64_t o, int64_t c, int64_t i, int64_t j) {
      return w[((o * cin + c) * k + i) * k + j];
    };
    int64_t idx = 0;
    for (int64_t o = 0; o < cout; ++o) {
      for (int64_t i = 0; i < ho; ++i) {
        for (int64_t j = 0; j < ho; ++j, ++idx) {
          double ref = 0;
          double bound = sy * 0.5 + sy * 128.0 * std::pow(2.0, -22) + 1e-9;
          for (int64_t c = 0; c < cin; ++c) {
            for (int64_t ki = 0; ki < k; ++ki) {
              for (int64_t kj = 0; kj < k; ++kj) {
                int64_t hi = i * stride + ki - pad;
                int64_t wi = j * stride + kj - pad;
                if (hi < 0 || hi >= hw || wi < 0 || wi >= hw) continue;
                double xv = x_at(c, hi, wi);
                double wv = w_at(o, c, ki, kj);
                ref += xv * wv;
                double x_hat = sx * (quant8(static_cast<float>(xv), sx, zx) - zx);
                bound += std::abs(x_hat) * sw / 2.0 + std::abs(wv) * sx / 2.0;
              }
            }
          }
          CHECK(std::abs(got[idx] - ref) <= bound);
        }
      }
    }
  }
}

TEST_CASE("fused and unfused execution are bit-identical: sinus, 100 seeds") {
  ModelGraph g = infer_shapes(make_sinus_graph());
  DeployableModel model = compile_on_disco(g);
  ExecutionContext context(model);
  for (uint64_t seed = 0; seed < 100; ++seed) {
    auto input = generate_input(seed, 0, context.input_spec());
    auto fused = context.run_all(input);
    auto unfused = execute_nodes(g, input);
    REQUIRE(fused.size() == unfused.size());
    for (size_t i = 0; i < fused.size(); ++i) {
      CHECK(std::memcmp(&fused[i], &unfused[i], sizeof(float)) == 0);
    }
  }
}

TEST_CASE("fused and unfused execution agree on 50 random graphs x 10 seeds") {
  std::mt19937_64 rng(3003);
  for (int round = 0; round < 50; ++round) {
    ModelGraph g = infer_shapes(random_quantized_mlp(rng));
    DeployableModel model = compile_on_disco(g);
    ExecutionContext context(model);
    for (uint64_t seed = 0; seed < 10; ++seed) {
      auto input = generate_input(seed, 0, context.input_spec());
      auto fused = context.run_all(input);
      auto unfused = execute_nodes(g, input);
      REQUIRE(fused.size() == unfused.size());
      CHECK(std::memcmp(fused.data(), unfused.data(), fused.size() * sizeof(float)) == 0);
    }
  }
}

TEST_CASE("lenet runs end to end through the arena") {
  ModelGraph g = infer_shapes(make_small_lenet());
  DeployableModel model = compile_on_disco(g);
  ExecutionContext context(model);
  auto input = generate_input(7, 0, context.input_spec());
  auto fused = context.run_all(input);
  auto unfused = execute_nodes(g, input);
  CHECK(fused.size() == 10);
  CHECK(std::memcmp(fused.data(), unfused.data(), fused.size() * sizeof(float)) == 0);
}

TEST_CASE("arena is allocated once; trials do not grow it") {
  DeployableModel model = compile_on_disco(infer_shapes(make_sinus_graph()));
  ExecutionContext context(model);
  int64_t capacity = context.arena_capacity();
  CHECK(capacity == model.plan.arena_bytes);
  for (uint64_t seed = 0; seed < 100; ++seed) {
    context.run_all(generate_input(seed, 0, context.input_spec()));
  }
  CHECK(context.arena_allocations() == 1);
  CHECK(context.arena_capacity() == capacity);
}

TEST_CASE("maxpool, avgpool, reshape, softmax on fp32") {
  ModelGraph g;
  g.name = "pools";
  g.tensors = {
      {"in", DType::kFp32, {1, 1, 4, 4}, TensorKind::kInput, std::nullopt},
      {"mp", DType::kFp32, {1, 1, 2, 2}, TensorKind::kIntermediate, std::nullopt},
      {"flat", DType::kFp32, {1, 4}, TensorKind::kIntermediate, std::nullopt},
      {"sm", DType::kFp32, {1, 4}, TensorKind::kOutput, std::nullopt},
  };
  g.nodes = {
      {"p0", OpKind::kMaxPool2d, {"in"}, {"mp"},
       {{"pool_h", int64_t{2}}, {"pool_w", int64_t{2}}, {"stride", int64_t{2}}}},
      {"r0", OpKind::kReshape, {"mp"}, {"flat"}, {{"shape", std::vector<int64_t>{1, 4}}}},
      {"s0", OpKind::kSoftmax, {"flat"}, {"sm"}, {}},
  };
  std::vector<float> input = {1, 2, 5, 6,     //
                              3, 4, 7, 8,     //
                              -1, -2, -5, -6, //
                              -3, -4, -7, -8};
  auto y = execute_nodes(g, input);
  // maxpool picks 4, 8, -1, -5; softmax normalizes those.
  double e4 = std::exp(4.0 - 8.0), e8 = 1.0, em1 = std::exp(-1.0 - 8.0), em5 = std::exp(-5.0 - 8.0);
  double total = e4 + e8 + em1 + em5;
  CHECK(y[0] == doctest::Approx(e4 / total));
  CHECK(y[1] == doctest::Approx(e8 / total));
  CHECK(y[2] == doctest::Approx(em1 / total));
  CHECK(y[3] == doctest::Approx(em5 / total));
  double sum = y[0] + y[1] + y[2] + y[3];
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("int8 avgpool averages with round-half-even") {
  ModelGraph g;
  g.name = "avg";
  QuantParams q{0.5, 0};
  g.tensors = {
      {"in", DType::kFp32, {1, 1, 2, 2}, TensorKind::kInput, std::nullopt},
      {"xq", DType::kInt8, {1, 1, 2, 2}, TensorKind::kIntermediate, q},
      {"ap", DType::kInt8, {1, 1, 1, 1}, TensorKind::kIntermediate, q},
      {"out", DType::kFp32, {1, 1, 1, 1}, TensorKind::kOutput, std::nullopt},
  };
  g.nodes = {
      {"q0", OpKind::kQuantize, {"in"}, {"xq"}, {}},
      {"a0", OpKind::kAvgPool2d, {"xq"}, {"ap"},
       {{"pool_h", int64_t{2}}, {"pool_w", int64_t{2}}, {"stride", int64_t{2}}}},
      {"d0", OpKind::kDequantize, {"ap"}, {"out"}, {}},
  };
  // Quantized values 2, 4, 6, 1 -> sum 13, mean 3.25 -> rounds to 3 -> 1.5.
  auto y = execute_nodes(g, std::vector<float>{1.0f, 2.0f, 3.0f, 0.5f});
  CHECK(y[0] == 1.5f);
}

TEST_CASE("generate_input: deterministic, in range, seed-sensitive") {
  TensorSpec spec{"in", DType::kFp32, {1, 1000}, TensorKind::kInput, std::nullopt};

  auto a = generate_input(1, 0, spec);
  auto b = generate_input(1, 0, spec);
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);

  for (float v : a) {
    CHECK(v >= 0.0f);
    CHECK(v < 1.0f);
  }

  auto c = generate_input(2, 0, spec);
  int differing = 0;
  for (size_t i = 0; i < a.size(); ++i) differing += a[i] != c[i];
  CHECK(differing >= 990);  // >= 99% of 1000 elements

  auto d = generate_input(1, 1, spec);
  int differing_trial = 0;
  for (size_t i = 0; i < a.size(); ++i) differing_trial += a[i] != d[i];
  CHECK(differing_trial >= 990);

  // Frozen spot checks keep the generator stable across releases.
  CHECK(uniform_unit(0, 0, 0) == doctest::Approx(0.187275230884552).epsilon(1e-12));
  CHECK(uniform_unit(42, 3, 17) == doctest::Approx(0.91382396221160889).epsilon(1e-12));
}

TEST_CASE("input size mismatches are rejected") {
  DeployableModel model = compile_on_disco(infer_shapes(make_sinus_graph()));
  ExecutionContext context(model);
  CHECK_THROWS_AS(context.run_all(std::vector<float>{1.0f, 2.0f}), ValidationError);
  CHECK_THROWS_AS(execute_nodes(model.graph, std::vector<float>{}), ValidationError);
}
