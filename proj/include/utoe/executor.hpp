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
#ifndef UTOE_EXECUTOR_HPP_
#define UTOE_EXECUTOR_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "utoe/graph_compiler.hpp"
#include "utoe/model_ir.hpp"

namespace utoe {

// Quantized arithmetic conventions, used identically by every execution path:
//   quantize   q = clamp(round_half_even(x / scale) + zp, -128, 127)
//   dense/conv acc = sum (x_q - zp_x) * (w_q - zp_w) in int32
//   bias add   requantizes to the output tensor via a single fp32 multiply
//              with round-half-even
//   dequantize x = scale * (q - zp)

int32_t quantize_value(float x, const QuantParams& q);
int32_t requantize_acc(int64_t acc, float multiplier, int32_t zero_point);

using TensorReader = std::function<const uint8_t*(const std::string& tensor_id)>;

// Runs one operator. Inputs are resolved through `read` (param tensors fall
// back to graph.param_data); the result is written to `out`, which must hold
// byte_size(output tensor) bytes. Shapes must be inferred.
void execute_node(const OperatorNode& node, const ModelGraph& graph, const TensorReader& read,
                  uint8_t* out);

// Node-order walker over plain per-tensor buffers. Returns the graph output
// as fp32. Feeds unit tests and the fused-vs-unfused equivalence checks.
std::vector<float> execute_nodes(const ModelGraph& graph, std::span<const float> input);

// Executes a compiled model inside its statically planned arena. The arena is
// allocated once at construction; trials never allocate.
class ExecutionContext {
 public:
  explicit ExecutionContext(DeployableModel model);

  const DeployableModel& model() const { return model_; }
  const TensorSpec& input_spec() const;

  void set_input(std::span<const float> values);
  void run_kernel(size_t kernel_index);
  std::vector<float> output() const;

  // set_input + all kernels in order; returns the output tensor.
  std::vector<float> run_all(std::span<const float> input);

  size_t arena_allocations() const { return arena_allocations_; }
  int64_t arena_capacity() const { return static_cast<int64_t>(arena_.size()); }

 private:
  const uint8_t* tensor_data(const std::string& id) const;
  uint8_t* tensor_slot(const std::string& id);

  DeployableModel model_;
  std::vector<uint8_t> arena_;
  std::map<std::string, int64_t> offsets_;  // boundary + per-kernel internal tensors
  std::map<std::string, const OperatorNode*> nodes_by_id_;
  size_t arena_allocations_ = 0;
};

}  // namespace utoe

#endif  // UTOE_EXECUTOR_HPP_
