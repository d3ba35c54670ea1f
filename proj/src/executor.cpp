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
#include "utoe/executor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <type_traits>

namespace utoe {

namespace {

int32_t clamp_int8(double rounded) {
  return static_cast<int32_t>(std::max(-128.0, std::min(127.0, rounded)));
}

int64_t product(std::span<const int64_t> dims) {
  int64_t n = 1;
  for (int64_t d : dims) n *= d;
  return n;
}

}  // namespace

int32_t quantize_value(float x, const QuantParams& q) {
  double scaled = static_cast<double>(x) / q.scale;
  double rounded = std::nearbyint(scaled) + q.zero_point;
  return clamp_int8(rounded);
}

int32_t requantize_acc(int64_t acc, float multiplier, int32_t zero_point) {
  float scaled = static_cast<float>(acc) * multiplier;
  double rounded = std::nearbyint(static_cast<double>(scaled)) + zero_point;
  return clamp_int8(rounded);
}

namespace {

struct TensorView {
  const TensorSpec* spec;
  const uint8_t* data;

  const int8_t* i8() const { return reinterpret_cast<const int8_t*>(data); }
  const int32_t* i32() const { return reinterpret_cast<const int32_t*>(data); }
  const float* f32() const { return reinterpret_cast<const float*>(data); }
  const QuantParams& quant(const std::string& why) const {
    if (!spec->quant) {
      throw ValidationError("tensor '" + spec->id + "' needs quant metadata for " + why);
    }
    return *spec->quant;
  }
};

struct Ctx {
  const OperatorNode& node;
  const ModelGraph& graph;
  const TensorReader& read;

  TensorView in(size_t i) const {
    const std::string& id = node.inputs[i];
    const TensorSpec& spec = graph.tensor(id);
    const uint8_t* data = read(id);
    if (!data) {
      auto it = graph.param_data.find(id);
      if (it == graph.param_data.end()) {
        throw ValidationError("node '" + node.id + "': no data for tensor '" + id + "'");
      }
      data = it->second.data();
    }
    return {&spec, data};
  }
  const TensorSpec& out_spec() const { return graph.tensor(node.outputs[0]); }
};

void run_quantize(const Ctx& ctx, uint8_t* out) {
  TensorView x = ctx.in(0);
  const QuantParams& q = ctx.out_spec().quant.value();
  int64_t n = x.spec->element_count();
  auto* dst = reinterpret_cast<int8_t*>(out);
  for (int64_t i = 0; i < n; ++i) {
    dst[i] = static_cast<int8_t>(quantize_value(x.f32()[i], q));
  }
}

void run_dequantize(const Ctx& ctx, uint8_t* out) {
  TensorView x = ctx.in(0);
  const QuantParams& q = x.quant("dequantize");
  int64_t n = x.spec->element_count();
  auto* dst = reinterpret_cast<float*>(out);
  if (x.spec->dtype == DType::kInt8) {
    for (int64_t i = 0; i < n; ++i) {
      dst[i] = static_cast<float>(q.scale * (x.i8()[i] - q.zero_point));
    }
  } else {
    for (int64_t i = 0; i < n; ++i) {
      dst[i] = static_cast<float>(q.scale * (x.i32()[i] - q.zero_point));
    }
  }
}

void run_dense(const Ctx& ctx, uint8_t* out) {
  TensorView x = ctx.in(0);
  TensorView w = ctx.in(1);
  const auto& xs = x.spec->shape;  // [n, in]
  const auto& ws = w.spec->shape;  // [out, in]
  int64_t batch = xs[0], in = xs[1], features = ws[0];

  if (x.spec->dtype == DType::kInt8) {
    int32_t zx = x.quant("dense").zero_point;
    int32_t zw = w.quant("dense").zero_point;
    auto* dst = reinterpret_cast<int32_t*>(out);
    for (int64_t n = 0; n < batch; ++n) {
      for (int64_t o = 0; o < features; ++o) {
        int64_t acc = 0;
        for (int64_t i = 0; i < in; ++i) {
          acc += static_cast<int64_t>(x.i8()[n * in + i] - zx) *
                 static_cast<int64_t>(w.i8()[o * in + i] - zw);
        }
        dst[n * features + o] = static_cast<int32_t>(acc);
      }
    }
  } else {
    auto* dst = reinterpret_cast<float*>(out);
    for (int64_t n = 0; n < batch; ++n) {
      for (int64_t o = 0; o < features; ++o) {
        double acc = 0;
        for (int64_t i = 0; i < in; ++i) {
          acc += static_cast<double>(x.f32()[n * in + i]) * w.f32()[o * in + i];
        }
        dst[n * features + o] = static_cast<float>(acc);
      }
    }
  }
}

void run_conv2d(const Ctx& ctx, uint8_t* out) {
  TensorView x = ctx.in(0);
  TensorView w = ctx.in(1);
  const auto& xs = x.spec->shape;  // [N, Cin, H, W]
  const auto& ws = w.spec->shape;  // [Cout, Cin, Kh, Kw]
  const auto& ys = ctx.out_spec().shape;
  int64_t stride = ctx.node.attr_int("stride", 1);
  int64_t padding = ctx.node.attr_int("padding", 0);
  int64_t cin = xs[1], h = xs[2], ww = xs[3];
  int64_t cout = ws[0], kh = ws[2], kw = ws[3];
  int64_t hout = ys[2], wout = ys[3];

  auto x_at = [&](int64_t n, int64_t c, int64_t i, int64_t j) {
    return ((n * cin + c) * h + i) * ww + j;
  };
  auto w_at = [&](int64_t o, int64_t c, int64_t i, int64_t j) {
    return ((o * cin + c) * kh + i) * kw + j;
  };

  if (x.spec->dtype == DType::kInt8) {
    int32_t zx = x.quant("conv2d").zero_point;
    int32_t zw = w.quant("conv2d").zero_point;
    auto* dst = reinterpret_cast<int32_t*>(out);
    int64_t idx = 0;
    for (int64_t n = 0; n < xs[0]; ++n) {
      for (int64_t o = 0; o < cout; ++o) {
        for (int64_t ho = 0; ho < hout; ++ho) {
          for (int64_t wo = 0; wo < wout; ++wo) {
            int64_t acc = 0;
            for (int64_t c = 0; c < cin; ++c) {
              for (int64_t ki = 0; ki < kh; ++ki) {
                for (int64_t kj = 0; kj < kw; ++kj) {
                  int64_t hi = ho * stride + ki - padding;
                  int64_t wi = wo * stride + kj - padding;
                  if (hi < 0 || hi >= h || wi < 0 || wi >= ww) continue;  // pad = real zero
                  acc += static_cast<int64_t>(x.i8()[x_at(n, c, hi, wi)] - zx) *
                         static_cast<int64_t>(w.i8()[w_at(o, c, ki, kj)] - zw);
                }
              }
            }
            dst[idx++] = static_cast<int32_t>(acc);
          }
        }
      }
    }
  } else {
    auto* dst = reinterpret_cast<float*>(out);
    int64_t idx = 0;
    for (int64_t n = 0; n < xs[0]; ++n) {
      for (int64_t o = 0; o < cout; ++o) {
        for (int64_t ho = 0; ho < hout; ++ho) {
          for (int64_t wo = 0; wo < wout; ++wo) {
            double acc = 0;
            for (int64_t c = 0; c < cin; ++c) {
              for (int64_t ki = 0; ki < kh; ++ki) {
                for (int64_t kj = 0; kj < kw; ++kj) {
                  int64_t hi = ho * stride + ki - padding;
                  int64_t wi = wo * stride + kj - padding;
                  if (hi < 0 || hi >= h || wi < 0 || wi >= ww) continue;
                  acc += static_cast<double>(x.f32()[x_at(n, c, hi, wi)]) *
                         w.f32()[w_at(o, c, ki, kj)];
                }
              }
            }
            dst[idx++] = static_cast<float>(acc);
          }
        }
      }
    }
  }
}

// Channel index for bias broadcast along axis 1.
struct Broadcast {
  int64_t channels = 0;
  int64_t inner = 1;
  bool bias = false;  // second operand is rank-1 [C]

  int64_t channel_of(int64_t flat) const { return (flat / inner) % channels; }
};

Broadcast broadcast_of(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
  Broadcast bc;
  if (a == b) return bc;
  bc.bias = true;
  bc.channels = b[0];
  bc.inner = 1;
  for (size_t i = 2; i < a.size(); ++i) bc.inner *= a[i];
  return bc;
}

void run_add(const Ctx& ctx, uint8_t* out) {
  TensorView a = ctx.in(0);
  TensorView b = ctx.in(1);
  const TensorSpec& y = ctx.out_spec();
  // Normalize so a full-shaped operand comes first.
  if (b.spec->shape.size() > a.spec->shape.size()) std::swap(a, b);
  Broadcast bc = broadcast_of(a.spec->shape, b.spec->shape);
  int64_t n = product(a.spec->shape);

  auto b_index = [&](int64_t i) { return bc.bias ? bc.channel_of(i) : i; };

  if (a.spec->dtype == DType::kFp32) {
    auto* dst = reinterpret_cast<float*>(out);
    for (int64_t i = 0; i < n; ++i) dst[i] = a.f32()[i] + b.f32()[b_index(i)];
    return;
  }
  if (a.spec->dtype == DType::kInt32) {
    if (y.dtype == DType::kInt8) {
      // Accumulator plus bias, requantized to the output tensor in one step.
      const QuantParams& qa = a.quant("requantizing add");
      const QuantParams& qy = y.quant.value();
      float multiplier = static_cast<float>(qa.scale / qy.scale);
      auto* dst = reinterpret_cast<int8_t*>(out);
      for (int64_t i = 0; i < n; ++i) {
        int64_t sum = static_cast<int64_t>(a.i32()[i]) + b.i32()[b_index(i)];
        dst[i] = static_cast<int8_t>(requantize_acc(sum, multiplier, qy.zero_point));
      }
    } else {
      auto* dst = reinterpret_cast<int32_t*>(out);
      for (int64_t i = 0; i < n; ++i) dst[i] = a.i32()[i] + b.i32()[b_index(i)];
    }
    return;
  }
  // int8 + int8 -> int8 through the real domain.
  const QuantParams& qa = a.quant("add");
  const QuantParams& qb = b.quant("add");
  const QuantParams& qy = y.quant.value();
  auto* dst = reinterpret_cast<int8_t*>(out);
  for (int64_t i = 0; i < n; ++i) {
    double real = qa.scale * (a.i8()[i] - qa.zero_point) +
                  qb.scale * (b.i8()[b_index(i)] - qb.zero_point);
    double rounded = std::nearbyint(real / qy.scale) + qy.zero_point;
    dst[i] = static_cast<int8_t>(clamp_int8(rounded));
  }
}

void run_relu(const Ctx& ctx, uint8_t* out) {
  TensorView x = ctx.in(0);
  int64_t n = x.spec->element_count();
  switch (x.spec->dtype) {
    case DType::kFp32: {
      auto* dst = reinterpret_cast<float*>(out);
      for (int64_t i = 0; i < n; ++i) dst[i] = std::max(0.0f, x.f32()[i]);
      break;
    }
    case DType::kInt8: {
      int32_t zp = x.quant("relu").zero_point;
      auto* dst = reinterpret_cast<int8_t*>(out);
      for (int64_t i = 0; i < n; ++i) {
        dst[i] = static_cast<int8_t>(std::max<int32_t>(zp, x.i8()[i]));
      }
      break;
    }
    case DType::kInt32: {
      int32_t zp = x.spec->quant ? x.spec->quant->zero_point : 0;
      auto* dst = reinterpret_cast<int32_t*>(out);
      for (int64_t i = 0; i < n; ++i) dst[i] = std::max(zp, x.i32()[i]);
      break;
    }
  }
}

template <typename T, typename Fold>
void pool_walk(const Ctx& ctx, const T* src, Fold fold) {
  const auto& xs = ctx.in(0).spec->shape;
  const auto& ys = ctx.out_spec().shape;
  int64_t ph = ctx.node.attr_int("pool_h", ctx.node.attr_int("pool", 2));
  int64_t pw = ctx.node.attr_int("pool_w", ctx.node.attr_int("pool", 2));
  int64_t stride = ctx.node.attr_int("stride", ph);
  int64_t padding = ctx.node.attr_int("padding", 0);
  int64_t h = xs[2], w = xs[3];
  int64_t idx = 0;
  for (int64_t n = 0; n < ys[0]; ++n) {
    for (int64_t c = 0; c < ys[1]; ++c) {
      for (int64_t ho = 0; ho < ys[2]; ++ho) {
        for (int64_t wo = 0; wo < ys[3]; ++wo) {
          int64_t count = 0;
          T current{};
          bool first = true;
          for (int64_t ki = 0; ki < ph; ++ki) {
            for (int64_t kj = 0; kj < pw; ++kj) {
              int64_t hi = ho * stride + ki - padding;
              int64_t wi = wo * stride + kj - padding;
              if (hi < 0 || hi >= h || wi < 0 || wi >= w) continue;
              T v = src[((n * xs[1] + c) * h + hi) * w + wi];
              fold(idx, v, first, count);
              current = v;
              first = false;
              ++count;
            }
          }
          (void)current;
          ++idx;
        }
      }
    }
  }
}

template <typename T>
void run_maxpool_typed(const Ctx& ctx, const T* src, T* dst) {
  std::fill_n(dst, ctx.out_spec().element_count(), T{});
  pool_walk<T>(ctx, src, [dst](int64_t idx, T v, bool first, int64_t) {
    if (first || v > dst[idx]) dst[idx] = v;
  });
}

void run_maxpool(const Ctx& ctx, uint8_t* out) {
  TensorView x = ctx.in(0);
  switch (x.spec->dtype) {
    case DType::kFp32:
      run_maxpool_typed(ctx, x.f32(), reinterpret_cast<float*>(out));
      break;
    case DType::kInt8:
      run_maxpool_typed(ctx, x.i8(), reinterpret_cast<int8_t*>(out));
      break;
    case DType::kInt32:
      run_maxpool_typed(ctx, x.i32(), reinterpret_cast<int32_t*>(out));
      break;
  }
}

void run_avgpool(const Ctx& ctx, uint8_t* out) {
  TensorView x = ctx.in(0);
  int64_t n_out = ctx.out_spec().element_count();
  std::vector<double> sums(static_cast<size_t>(n_out), 0.0);
  std::vector<int64_t> counts(static_cast<size_t>(n_out), 0);
  auto fold = [&](auto src) {
    pool_walk<std::remove_cvref_t<decltype(src[0])>>(
        ctx, src, [&](int64_t idx, auto v, bool, int64_t) {
          sums[static_cast<size_t>(idx)] += static_cast<double>(v);
          counts[static_cast<size_t>(idx)] += 1;
        });
  };
  switch (x.spec->dtype) {
    case DType::kFp32: {
      fold(x.f32());
      auto* dst = reinterpret_cast<float*>(out);
      for (int64_t i = 0; i < n_out; ++i) {
        dst[i] = static_cast<float>(sums[i] / std::max<int64_t>(1, counts[i]));
      }
      break;
    }
    case DType::kInt8: {
      fold(x.i8());
      auto* dst = reinterpret_cast<int8_t*>(out);
      for (int64_t i = 0; i < n_out; ++i) {
        double mean = sums[i] / std::max<int64_t>(1, counts[i]);
        dst[i] = static_cast<int8_t>(clamp_int8(std::nearbyint(mean)));
      }
      break;
    }
    case DType::kInt32: {
      fold(x.i32());
      auto* dst = reinterpret_cast<int32_t*>(out);
      for (int64_t i = 0; i < n_out; ++i) {
        double mean = sums[i] / std::max<int64_t>(1, counts[i]);
        dst[i] = static_cast<int32_t>(std::llround(mean));
      }
      break;
    }
  }
}

void run_softmax(const Ctx& ctx, uint8_t* out) {
  TensorView x = ctx.in(0);
  const auto& shape = x.spec->shape;
  int64_t axis_len = shape.back();
  int64_t rows = x.spec->element_count() / axis_len;
  auto* dst = reinterpret_cast<float*>(out);
  for (int64_t r = 0; r < rows; ++r) {
    const float* row = x.f32() + r * axis_len;
    float max_v = row[0];
    for (int64_t i = 1; i < axis_len; ++i) max_v = std::max(max_v, row[i]);
    double sum = 0;
    for (int64_t i = 0; i < axis_len; ++i) sum += std::exp(static_cast<double>(row[i] - max_v));
    for (int64_t i = 0; i < axis_len; ++i) {
      dst[r * axis_len + i] =
          static_cast<float>(std::exp(static_cast<double>(row[i] - max_v)) / sum);
    }
  }
}

}  // namespace

void execute_node(const OperatorNode& node, const ModelGraph& graph, const TensorReader& read,
                  uint8_t* out) {
  Ctx ctx{node, graph, read};
  switch (node.kind) {
    case OpKind::kQuantize:
      run_quantize(ctx, out);
      break;
    case OpKind::kDequantize:
      run_dequantize(ctx, out);
      break;
    case OpKind::kDense:
      run_dense(ctx, out);
      break;
    case OpKind::kConv2d:
      run_conv2d(ctx, out);
      break;
    case OpKind::kAdd:
      run_add(ctx, out);
      break;
    case OpKind::kRelu:
      run_relu(ctx, out);
      break;
    case OpKind::kMaxPool2d:
      run_maxpool(ctx, out);
      break;
    case OpKind::kAvgPool2d:
      run_avgpool(ctx, out);
      break;
    case OpKind::kReshape: {
      TensorView x = ctx.in(0);
      std::memcpy(out, x.data, static_cast<size_t>(x.spec->byte_size()));
      break;
    }
    case OpKind::kSoftmax:
      run_softmax(ctx, out);
      break;
  }
}

std::vector<float> execute_nodes(const ModelGraph& graph, std::span<const float> input) {
  auto inputs = graph.input_ids();
  auto outputs = graph.output_ids();
  if (inputs.size() != 1 || outputs.size() != 1) {
    throw ValidationError("execute_nodes expects exactly one input and one output tensor");
  }
  const TensorSpec& in_spec = graph.tensor(inputs[0]);
  if (static_cast<int64_t>(input.size()) != in_spec.element_count()) {
    throw ValidationError("input size does not match tensor '" + in_spec.id + "'");
  }

  std::map<std::string, std::vector<uint8_t>> buffers;
  auto& in_buf = buffers[inputs[0]];
  in_buf.resize(static_cast<size_t>(in_spec.byte_size()));
  std::memcpy(in_buf.data(), input.data(), in_buf.size());

  TensorReader read = [&](const std::string& id) -> const uint8_t* {
    auto it = buffers.find(id);
    return it == buffers.end() ? nullptr : it->second.data();
  };

  for (const auto& node : graph.nodes) {
    const TensorSpec& out_spec = graph.tensor(node.outputs[0]);
    auto& out_buf = buffers[node.outputs[0]];
    out_buf.resize(static_cast<size_t>(out_spec.byte_size()));
    execute_node(node, graph, read, out_buf.data());
  }

  const TensorSpec& out_spec = graph.tensor(outputs[0]);
  const auto& out_buf = buffers.at(outputs[0]);
  std::vector<float> result(static_cast<size_t>(out_spec.element_count()));
  std::memcpy(result.data(), out_buf.data(), out_buf.size());
  return result;
}

ExecutionContext::ExecutionContext(DeployableModel model) : model_(std::move(model)) {
  arena_.resize(static_cast<size_t>(model_.plan.arena_bytes));
  arena_allocations_ = 1;
  offsets_ = model_.plan.offsets;
  for (const auto& kernel : model_.kernels) {
    int64_t scratch = model_.plan.workspace_offset;
    for (const auto& id : kernel.internal_tensors) {
      offsets_[id] = scratch;
      scratch += align_arena(model_.graph.tensor(id).byte_size());
    }
  }
  for (const auto& node : model_.graph.nodes) nodes_by_id_[node.id] = &node;
}

const TensorSpec& ExecutionContext::input_spec() const {
  auto inputs = model_.graph.input_ids();
  if (inputs.size() != 1) {
    throw ValidationError("model '" + model_.graph.name + "' must have exactly one input");
  }
  return model_.graph.tensor(inputs[0]);
}

const uint8_t* ExecutionContext::tensor_data(const std::string& id) const {
  auto it = offsets_.find(id);
  if (it == offsets_.end()) return nullptr;  // params resolve via graph blobs
  return arena_.data() + it->second;
}

uint8_t* ExecutionContext::tensor_slot(const std::string& id) {
  auto it = offsets_.find(id);
  if (it == offsets_.end()) {
    throw ValidationError("tensor '" + id + "' has no arena slot");
  }
  return arena_.data() + it->second;
}

void ExecutionContext::set_input(std::span<const float> values) {
  const TensorSpec& spec = input_spec();
  if (static_cast<int64_t>(values.size()) != spec.element_count()) {
    throw ValidationError("input size does not match tensor '" + spec.id + "'");
  }
  std::memcpy(tensor_slot(spec.id), values.data(), static_cast<size_t>(spec.byte_size()));
}

void ExecutionContext::run_kernel(size_t kernel_index) {
  const FusedKernel& kernel = model_.kernels.at(kernel_index);
  TensorReader read = [this](const std::string& id) { return tensor_data(id); };
  for (const auto& member : kernel.members) {
    const OperatorNode* node = nodes_by_id_.at(member);
    execute_node(*node, model_.graph, read, tensor_slot(node->outputs[0]));
  }
}

std::vector<float> ExecutionContext::output() const {
  auto outputs = model_.graph.output_ids();
  if (outputs.size() != 1) {
    throw ValidationError("model '" + model_.graph.name + "' must have exactly one output");
  }
  const TensorSpec& spec = model_.graph.tensor(outputs[0]);
  std::vector<float> result(static_cast<size_t>(spec.element_count()));
  std::memcpy(result.data(), tensor_data(spec.id), static_cast<size_t>(spec.byte_size()));
  return result;
}

std::vector<float> ExecutionContext::run_all(std::span<const float> input) {
  set_input(input);
  for (size_t k = 0; k < model_.kernels.size(); ++k) run_kernel(k);
  return output();
}

}  // namespace utoe
