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
#include "utoe/graph_compiler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <tuple>

#include "json.hpp"
#include "utoe/board_registry.hpp"

namespace utoe {

using nlohmann::json;

CapacityExceeded::CapacityExceeded(std::string resource, int64_t needed, int64_t available)
    : std::runtime_error("capacity exceeded: " + resource + " needs " + std::to_string(needed) +
                         " bytes, board provides " + std::to_string(available) + " (over by " +
                         std::to_string(needed - available) + ")"),
      resource_(std::move(resource)),
      needed_(needed),
      available_(available) {}

namespace {

// Kernel-name tag per op kind, mirroring the compiler-generated names the
// reports are keyed by.
const char* fusion_tag(OpKind kind) {
  switch (kind) {
    case OpKind::kDense:
      return "nn_dense";
    case OpKind::kConv2d:
      return "nn_conv2d";
    case OpKind::kAdd:
      return "add";
    case OpKind::kRelu:
      return "nn_relu";
    case OpKind::kMaxPool2d:
      return "nn_max_pool2d";
    case OpKind::kAvgPool2d:
      return "nn_avg_pool2d";
    case OpKind::kReshape:
      return "reshape";
    case OpKind::kSoftmax:
      return "nn_softmax";
    case OpKind::kQuantize:
      return "quantize";
    case OpKind::kDequantize:
      return "dequantize";
  }
  return "?";
}

struct NodeIndex {
  const ModelGraph& graph;
  std::map<std::string, int> producer;                 // tensor -> node index
  std::map<std::string, std::vector<int>> consumers;   // tensor -> node indices

  explicit NodeIndex(const ModelGraph& g) : graph(g) {
    for (size_t i = 0; i < g.nodes.size(); ++i) {
      for (const auto& out : g.nodes[i].outputs) producer[out] = static_cast<int>(i);
      for (const auto& in : g.nodes[i].inputs) consumers[in].push_back(static_cast<int>(i));
    }
  }

  int producer_of(const std::string& t) const {
    auto it = producer.find(t);
    return it == producer.end() ? -1 : it->second;
  }
  const std::vector<int>& consumers_of(const std::string& t) const {
    static const std::vector<int> empty;
    auto it = consumers.find(t);
    return it == consumers.end() ? empty : it->second;
  }
  // True when every input of `node` other than `via` is a param/input or is
  // produced before node index `limit` (so the node may execute at `limit`).
  bool movable_to(const OperatorNode& node, const std::string& via, int limit) const {
    for (const auto& in : node.inputs) {
      if (in == via) continue;
      const TensorSpec& t = graph.tensor(in);
      if (t.kind == TensorKind::kInput || t.kind == TensorKind::kParam) continue;
      if (producer_of(in) >= limit) return false;
    }
    return true;
  }
};

}  // namespace

std::vector<FusedKernel> fuse_operators(const ModelGraph& graph) {
  const NodeIndex index(graph);
  const int n = static_cast<int>(graph.nodes.size());
  std::vector<int> kernel_of(n, -1);
  std::vector<std::vector<int>> groups;

  auto single_intermediate_consumer = [&](const std::string& t) -> int {
    const TensorSpec& spec = graph.tensor(t);
    if (spec.kind != TensorKind::kIntermediate) return -1;
    const auto& cs = index.consumers_of(t);
    return cs.size() == 1 ? cs[0] : -1;
  };

  // Core chains: dense/conv2d absorbing a following bias add, then a relu.
  for (int i = 0; i < n; ++i) {
    if (kernel_of[i] >= 0) continue;
    std::vector<int> members{i};
    const OperatorNode& root = graph.nodes[i];
    if (root.kind == OpKind::kDense || root.kind == OpKind::kConv2d) {
      int j = single_intermediate_consumer(root.outputs[0]);
      if (j >= 0 && kernel_of[j] < 0 && graph.nodes[j].kind == OpKind::kAdd &&
          index.movable_to(graph.nodes[j], root.outputs[0], i)) {
        members.push_back(j);
        int k = single_intermediate_consumer(graph.nodes[j].outputs[0]);
        if (k >= 0 && kernel_of[k] < 0 && graph.nodes[k].kind == OpKind::kRelu) {
          members.push_back(k);
        }
      }
    }
    int slot = static_cast<int>(groups.size());
    for (int m : members) kernel_of[m] = slot;
    groups.push_back(std::move(members));
  }

  // Boundary conversions fold into the adjacent kernel: a quantize joins the
  // kernel consuming its output, a dequantize joins the kernel producing its
  // input. Neither contributes to the kernel name.
  for (int i = 0; i < n; ++i) {
    const OperatorNode& node = graph.nodes[i];
    if (!is_conversion_op(node.kind)) continue;
    int slot = kernel_of[i];
    if (groups[slot].size() != 1) continue;  // already part of a larger kernel
    if (node.kind == OpKind::kQuantize) {
      int consumer = single_intermediate_consumer(node.outputs[0]);
      if (consumer < 0) continue;
      int target = kernel_of[consumer];
      if (target == slot) continue;
      // The quantize will run at the target kernel's position; its own input
      // must already be available there.
      if (!index.movable_to(node, "", *std::min_element(groups[target].begin(),
                                                        groups[target].end()))) {
        continue;
      }
      groups[target].push_back(i);
      kernel_of[i] = target;
      groups[slot].clear();
    } else {  // dequantize
      const std::string& src = node.inputs[0];
      int producer = index.producer_of(src);
      if (producer < 0) continue;
      if (index.consumers_of(src).size() != 1) continue;
      if (graph.tensor(src).kind != TensorKind::kIntermediate) continue;
      int target = kernel_of[producer];
      if (target == slot) continue;
      groups[target].push_back(i);
      kernel_of[i] = target;
      groups[slot].clear();
    }
  }

  const auto pnames = graph.param_names();

  std::vector<FusedKernel> kernels;
  std::map<std::string, int> name_counts;
  for (auto& group : groups) {
    if (group.empty()) continue;
    // Node-index order is a valid execution order inside the kernel.
    std::sort(group.begin(), group.end());
    FusedKernel kernel;
    std::set<std::string> member_outputs;
    for (int m : group) member_outputs.insert(graph.nodes[m].outputs[0]);

    std::string base = "fused";
    bool has_core_tag = false;
    for (int m : group) {
      const OperatorNode& node = graph.nodes[m];
      kernel.members.push_back(node.id);
      kernel.macs += macs_of(node, graph);
      kernel.elements += elements_of(node, graph);
      if (!is_conversion_op(node.kind)) {
        base += std::string("_") + fusion_tag(node.kind);
        has_core_tag = true;
      }
      for (const auto& in : node.inputs) {
        const TensorSpec& t = graph.tensor(in);
        if (t.kind == TensorKind::kParam) {
          auto name = pnames.at(in);
          if (std::find(kernel.assoc_params.begin(), kernel.assoc_params.end(), name) ==
              kernel.assoc_params.end()) {
            kernel.assoc_params.push_back(name);
          }
        } else if (!member_outputs.count(in)) {
          if (std::find(kernel.input_tensors.begin(), kernel.input_tensors.end(), in) ==
              kernel.input_tensors.end()) {
            kernel.input_tensors.push_back(in);
          }
        }
      }
    }
    if (!has_core_tag) {
      // Standalone conversion kernel keeps its own tag.
      for (int m : group) base += std::string("_") + fusion_tag(graph.nodes[m].kind);
    }

    for (int m : group) {
      const std::string& out = graph.nodes[m].outputs[0];
      const TensorSpec& t = graph.tensor(out);
      bool internal = t.kind == TensorKind::kIntermediate && m != group.back();
      for (int c : index.consumers_of(out)) {
        if (kernel_of[c] != kernel_of[group[0]]) internal = false;
      }
      if (internal) {
        kernel.internal_tensors.push_back(out);
        kernel.workspace_bytes += align_arena(t.byte_size());
      } else {
        kernel.output_tensor = out;
      }
    }
    if (kernel.output_tensor.empty()) {
      kernel.output_tensor = graph.nodes[group.back()].outputs[0];
    }

    int repeat = name_counts[base]++;
    kernel.name = repeat == 0 ? base : base + "_" + std::to_string(repeat);
    kernels.push_back(std::move(kernel));
  }
  return kernels;
}

namespace {

struct ArenaBlock {
  std::string id;
  int64_t size = 0;   // aligned
  int birth = 0;      // first kernel step where the tensor must exist
  int death = 0;      // last kernel step where the tensor must exist
  int64_t offset = -1;
};

bool intervals_overlap(const ArenaBlock& a, const ArenaBlock& b) {
  return a.birth <= b.death && b.birth <= a.death;
}

int64_t lowest_offset(const ArenaBlock& block, const std::vector<const ArenaBlock*>& placed) {
  std::vector<const ArenaBlock*> conflicts;
  for (const auto* p : placed) {
    if (intervals_overlap(*p, block)) conflicts.push_back(p);
  }
  std::sort(conflicts.begin(), conflicts.end(),
            [](const ArenaBlock* a, const ArenaBlock* b) { return a->offset < b->offset; });
  int64_t candidate = 0;
  for (const auto* c : conflicts) {
    if (candidate + block.size <= c->offset) break;
    candidate = std::max(candidate, c->offset + c->size);
  }
  return candidate;
}

int64_t peak_live_bytes(const std::vector<ArenaBlock>& blocks) {
  int max_step = 0;
  for (const auto& b : blocks) max_step = std::max(max_step, b.death);
  int64_t peak = 0;
  for (int step = 0; step <= max_step; ++step) {
    int64_t live = 0;
    for (const auto& b : blocks) {
      if (b.birth <= step && step <= b.death) live += b.size;
    }
    peak = std::max(peak, live);
  }
  return peak;
}

// First-fit placement in execution order can fragment the arena when block
// sizes vary; on small graphs a bounded branch-and-bound over placement
// orders recovers the exhaustive-search optimum. Graphs small enough to plan
// exhaustively get exact results; larger ones keep the first-fit layout.
constexpr size_t kExactSearchLimit = 12;
constexpr int kExactSearchBudget = 200000;

struct ExactPlanner {
  std::vector<ArenaBlock>& blocks;
  int64_t floor_bound;
  int64_t best_height;
  std::vector<int64_t> best_offsets;
  std::vector<const ArenaBlock*> placed;
  std::vector<bool> used;
  int budget = kExactSearchBudget;

  void run() {
    used.assign(blocks.size(), false);
    visit(0, 0);
  }

  void visit(size_t depth, int64_t height) {
    if (budget-- <= 0 || height >= best_height || best_height == floor_bound) return;
    if (depth == blocks.size()) {
      best_height = height;
      for (size_t i = 0; i < blocks.size(); ++i) best_offsets[i] = blocks[i].offset;
      return;
    }
    std::set<std::tuple<int64_t, int, int>> tried;
    for (size_t i = 0; i < blocks.size(); ++i) {
      if (used[i]) continue;
      auto key = std::make_tuple(blocks[i].size, blocks[i].birth, blocks[i].death);
      if (!tried.insert(key).second) continue;
      int64_t offset = lowest_offset(blocks[i], placed);
      int64_t next = std::max(height, offset + blocks[i].size);
      if (next >= best_height) continue;
      blocks[i].offset = offset;
      used[i] = true;
      placed.push_back(&blocks[i]);
      visit(depth + 1, next);
      placed.pop_back();
      used[i] = false;
    }
  }
};

}  // namespace

MemoryPlan plan_memory(const ModelGraph& graph, const std::vector<FusedKernel>& kernels,
                       const CompileConstants& constants) {
  const int steps = static_cast<int>(kernels.size());
  std::map<std::string, int> produced_at;
  std::map<std::string, int> last_used;
  for (int k = 0; k < steps; ++k) {
    produced_at[kernels[k].output_tensor] = k;
    for (const auto& in : kernels[k].input_tensors) last_used[in] = k;
  }

  std::vector<ArenaBlock> blocks;
  auto add_block = [&](const TensorSpec& t, int birth) {
    ArenaBlock b;
    b.id = t.id;
    b.size = align_arena(t.byte_size());
    b.birth = birth;
    auto used = last_used.find(t.id);
    b.death = used == last_used.end() ? birth : std::max(birth, used->second);
    if (t.kind == TensorKind::kOutput) b.death = std::max(b.death, steps - 1);
    blocks.push_back(std::move(b));
  };

  // Execution order: graph inputs first, then each kernel's boundary output.
  for (const auto& t : graph.tensors) {
    if (t.kind == TensorKind::kInput) add_block(t, 0);
  }
  for (int k = 0; k < steps; ++k) {
    add_block(graph.tensor(kernels[k].output_tensor), k);
  }

  MemoryPlan plan;
  int64_t boundary_top = 0;
  std::vector<const ArenaBlock*> placed;
  for (auto& block : blocks) {
    block.offset = lowest_offset(block, placed);
    boundary_top = std::max(boundary_top, block.offset + block.size);
    placed.push_back(&block);
  }

  // Refine to the exact optimum where the search space is small; keep the
  // first-fit layout whenever it already reaches it (ties go to first-fit).
  const int64_t floor_bound = peak_live_bytes(blocks);
  if (boundary_top > floor_bound && blocks.size() <= kExactSearchLimit) {
    ExactPlanner exact{blocks, floor_bound, boundary_top,
                       std::vector<int64_t>(blocks.size(), 0), {}, {}};
    for (size_t i = 0; i < blocks.size(); ++i) exact.best_offsets[i] = blocks[i].offset;
    exact.run();
    // The search mutates offsets while exploring; settle on the best layout.
    boundary_top = exact.best_height;
    for (size_t i = 0; i < blocks.size(); ++i) blocks[i].offset = exact.best_offsets[i];
  }

  for (const auto& block : blocks) plan.offsets[block.id] = block.offset;
  int64_t max_workspace = 0;
  for (const auto& kernel : kernels) {
    max_workspace = std::max(max_workspace, kernel.workspace_bytes);
  }
  plan.workspace_offset = boundary_top;
  plan.arena_bytes = boundary_top + max_workspace;
  plan.runtime_overhead_bytes = constants.runtime_overhead_bytes;
  plan.total_memory_bytes = plan.arena_bytes + plan.runtime_overhead_bytes;
  return plan;
}

int64_t estimate_storage(const ModelGraph& graph, std::vector<FusedKernel>& kernels,
                         const CompileConstants& constants) {
  const auto pnames = graph.param_names();
  std::map<std::string, std::string> by_name;  // p-name -> tensor id
  for (const auto& [id, name] : pnames) by_name[name] = id;

  int64_t total = constants.runtime_code_bytes;
  for (auto& kernel : kernels) {
    int64_t bytes = constants.code_bytes_per_kernel;
    for (const auto& pname : kernel.assoc_params) {
      bytes += graph.tensor(by_name.at(pname)).byte_size();
    }
    kernel.storage_bytes = bytes;
    total += bytes;
  }
  return total;
}

namespace {

// The int8 kernels accumulate in int32; reject any reduction long enough to
// make that overflow, including the widest bias.
void check_accumulator_bounds(const ModelGraph& graph) {
  for (const auto& node : graph.nodes) {
    if (node.kind != OpKind::kDense && node.kind != OpKind::kConv2d) continue;
    if (graph.tensor(node.inputs[0]).dtype != DType::kInt8) continue;
    const auto& w = graph.tensor(node.inputs[1]).shape;
    int64_t reduction = node.kind == OpKind::kDense ? w[1] : w[1] * w[2] * w[3];
    int64_t worst = reduction * 255 * 255;
    int64_t bias_worst = 0;
    for (int c : graph.consumer_indices(node.outputs[0])) {
      const auto& consumer = graph.nodes[c];
      if (consumer.kind != OpKind::kAdd) continue;
      for (const auto& in : consumer.inputs) {
        auto blob = graph.param_data.find(in);
        if (blob == graph.param_data.end()) continue;
        const auto& data = blob->second;
        for (size_t i = 0; i + 4 <= data.size(); i += 4) {
          int32_t v = static_cast<int32_t>(static_cast<uint32_t>(data[i]) |
                                           (static_cast<uint32_t>(data[i + 1]) << 8) |
                                           (static_cast<uint32_t>(data[i + 2]) << 16) |
                                           (static_cast<uint32_t>(data[i + 3]) << 24));
          bias_worst = std::max<int64_t>(bias_worst, std::abs(static_cast<int64_t>(v)));
        }
      }
    }
    if (worst + bias_worst > std::numeric_limits<int32_t>::max()) {
      throw ValidationError("node '" + node.id +
                            "': int32 accumulator can overflow (reduction length " +
                            std::to_string(reduction) + ")");
    }
  }
}

}  // namespace

DeployableModel compile_artifact(const ModelGraph& graph, const BoardSpec& board,
                                 const CompileConstants& constants) {
  DeployableModel model;
  model.board_name = board.name;
  model.graph = infer_shapes(graph);
  check_accumulator_bounds(model.graph);
  model.kernels = fuse_operators(model.graph);
  model.plan = plan_memory(model.graph, model.kernels, constants);
  model.storage_bytes = estimate_storage(model.graph, model.kernels, constants);
  for (auto& kernel : model.kernels) {
    kernel.memory_bytes =
        align_arena(model.graph.tensor(kernel.output_tensor).byte_size()) + kernel.workspace_bytes;
  }
  if (model.plan.total_memory_bytes > board.ram_bytes) {
    throw CapacityExceeded("RAM", model.plan.total_memory_bytes, board.ram_bytes);
  }
  if (model.storage_bytes > board.flash_bytes) {
    throw CapacityExceeded("flash", model.storage_bytes, board.flash_bytes);
  }
  return model;
}

std::string serialize_deployable(const DeployableModel& model) {
  json doc;
  doc["format"] = "utoe-deployable-v1";
  doc["board"] = model.board_name;
  doc["graph"] = json::parse(save_model(model.graph));
  json kernels = json::array();
  for (const auto& k : model.kernels) {
    json jk;
    jk["name"] = k.name;
    jk["members"] = k.members;
    jk["assoc_params"] = k.assoc_params;
    jk["macs"] = k.macs;
    jk["elements"] = k.elements;
    jk["workspace_bytes"] = k.workspace_bytes;
    jk["output_tensor"] = k.output_tensor;
    jk["input_tensors"] = k.input_tensors;
    jk["internal_tensors"] = k.internal_tensors;
    jk["memory_bytes"] = k.memory_bytes;
    jk["storage_bytes"] = k.storage_bytes;
    kernels.push_back(std::move(jk));
  }
  doc["kernels"] = std::move(kernels);
  json plan;
  plan["offsets"] = model.plan.offsets;
  plan["arena_bytes"] = model.plan.arena_bytes;
  plan["workspace_offset"] = model.plan.workspace_offset;
  plan["runtime_overhead_bytes"] = model.plan.runtime_overhead_bytes;
  plan["total_memory_bytes"] = model.plan.total_memory_bytes;
  doc["plan"] = std::move(plan);
  doc["storage_bytes"] = model.storage_bytes;
  return doc.dump();
}

DeployableModel parse_deployable(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("deployable model is not valid JSON: ") + e.what());
  }
  try {
    if (doc.value("format", std::string()) != "utoe-deployable-v1") {
      throw ParseError("unknown deployable format");
    }
    DeployableModel model;
    model.board_name = doc.at("board").get<std::string>();
    model.graph = load_model(doc.at("graph").dump());
    for (const auto& jk : doc.at("kernels")) {
      FusedKernel k;
      k.name = jk.at("name").get<std::string>();
      k.members = jk.at("members").get<std::vector<std::string>>();
      k.assoc_params = jk.at("assoc_params").get<std::vector<std::string>>();
      k.macs = jk.at("macs").get<int64_t>();
      k.elements = jk.at("elements").get<int64_t>();
      k.workspace_bytes = jk.at("workspace_bytes").get<int64_t>();
      k.output_tensor = jk.at("output_tensor").get<std::string>();
      k.input_tensors = jk.at("input_tensors").get<std::vector<std::string>>();
      k.internal_tensors = jk.at("internal_tensors").get<std::vector<std::string>>();
      k.memory_bytes = jk.at("memory_bytes").get<int64_t>();
      k.storage_bytes = jk.at("storage_bytes").get<int64_t>();
      model.kernels.push_back(std::move(k));
    }
    const auto& jp = doc.at("plan");
    model.plan.offsets = jp.at("offsets").get<std::map<std::string, int64_t>>();
    model.plan.arena_bytes = jp.at("arena_bytes").get<int64_t>();
    model.plan.workspace_offset = jp.at("workspace_offset").get<int64_t>();
    model.plan.runtime_overhead_bytes = jp.at("runtime_overhead_bytes").get<int64_t>();
    model.plan.total_memory_bytes = jp.at("total_memory_bytes").get<int64_t>();
    model.storage_bytes = doc.at("storage_bytes").get<int64_t>();
    return model;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed deployable model: ") + e.what());
  }
}

}  // namespace utoe
