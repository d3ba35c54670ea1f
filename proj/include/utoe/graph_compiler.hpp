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
#ifndef UTOE_GRAPH_COMPILER_HPP_
#define UTOE_GRAPH_COMPILER_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "utoe/model_ir.hpp"

namespace utoe {

struct BoardSpec;  // board_registry.hpp

// Calibration constants for the storage/memory estimate. Overridable through
// the configuration surface; the defaults place an MLP/LeNet-class model in
// the expected tens-of-KB storage range.
struct CompileConstants {
  int64_t code_bytes_per_kernel = 512;
  int64_t runtime_code_bytes = 55000;
  int64_t runtime_overhead_bytes = 4096;
};

constexpr int64_t kArenaAlignment = 8;

inline int64_t align_arena(int64_t bytes) {
  return (bytes + kArenaAlignment - 1) / kArenaAlignment * kArenaAlignment;
}

// One compiled kernel: a maximal fused group of original operator nodes.
struct FusedKernel {
  std::string name;                       // fused_<tag>[_<tag>...][_k]
  std::vector<std::string> members;       // original node ids, execution order
  std::vector<std::string> assoc_params;  // p-names consumed, graph order
  int64_t macs = 0;
  int64_t elements = 0;
  int64_t workspace_bytes = 0;  // scratch for tensors internal to the kernel

  std::string output_tensor;                // boundary output
  std::vector<std::string> input_tensors;   // boundary inputs (non-param)
  std::vector<std::string> internal_tensors;  // live only inside this kernel

  int64_t memory_bytes = 0;   // aligned output + workspace
  int64_t storage_bytes = 0;  // raw param bytes + code constant

  bool operator==(const FusedKernel&) const = default;
};

// Static placement of every boundary activation tensor in one arena. A shared
// scratch region for kernel-internal tensors sits at workspace_offset.
struct MemoryPlan {
  std::map<std::string, int64_t> offsets;
  int64_t arena_bytes = 0;
  int64_t workspace_offset = 0;
  int64_t runtime_overhead_bytes = 0;
  int64_t total_memory_bytes = 0;  // arena_bytes + runtime_overhead_bytes

  bool operator==(const MemoryPlan&) const = default;
};

struct DeployableModel {
  std::string board_name;
  ModelGraph graph;  // shapes inferred
  std::vector<FusedKernel> kernels;
  MemoryPlan plan;
  int64_t storage_bytes = 0;

  bool operator==(const DeployableModel&) const = default;
};

class CapacityExceeded : public std::runtime_error {
 public:
  CapacityExceeded(std::string resource, int64_t needed, int64_t available);
  const std::string& resource() const { return resource_; }
  int64_t needed() const { return needed_; }
  int64_t available() const { return available_; }

 private:
  std::string resource_;
  int64_t needed_;
  int64_t available_;
};

// Greedy rule-based fusion over {dense|conv2d}(+add)(+relu) chains; boundary
// quantize/dequantize nodes fold into the adjacent kernel; everything else
// becomes a singleton kernel. Chains only form across single-consumer
// intermediates. Requires inferred shapes.
std::vector<FusedKernel> fuse_operators(const ModelGraph& graph);

// First-fit arena placement in execution order with interval reuse; ties go
// to the lowest offset. Offsets are 8-byte aligned.
MemoryPlan plan_memory(const ModelGraph& graph, const std::vector<FusedKernel>& kernels,
                       const CompileConstants& constants = {});

// Fills per-kernel storage_bytes; returns the model total including the
// runtime code constant.
int64_t estimate_storage(const ModelGraph& graph, std::vector<FusedKernel>& kernels,
                         const CompileConstants& constants = {});

// Full pipeline: fuse, plan, estimate, check against the board's RAM/flash.
// Throws CapacityExceeded naming the resource and the overrun.
DeployableModel compile_artifact(const ModelGraph& graph, const BoardSpec& board,
                                 const CompileConstants& constants = {});

// Deterministic wire form carried in LOAD_MODEL_CHUNK payloads.
std::string serialize_deployable(const DeployableModel& model);
DeployableModel parse_deployable(const std::string& text);

}  // namespace utoe

#endif  // UTOE_GRAPH_COMPILER_HPP_
