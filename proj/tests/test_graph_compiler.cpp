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
#include <random>
#include <set>

#include "doctest.h"
#include "support/oracles.hpp"
#include "support/test_graphs.hpp"
#include "utoe/board_registry.hpp"
#include "utoe/graph_compiler.hpp"

using namespace utoe;
using namespace utoe::testing;

namespace {

// Independent liveness model: birth at the producing step (0 for inputs),
// death at the last consuming step; outputs survive to the end.
std::vector<LiveBlock> liveness_blocks(const ModelGraph& graph,
                                       const std::vector<FusedKernel>& kernels,
                                       std::vector<std::string>* ids = nullptr) {
  std::vector<LiveBlock> blocks;
  auto death_of = [&](const std::string& id, int birth) {
    int death = birth;
    for (size_t k = 0; k < kernels.size(); ++k) {
      for (const auto& in : kernels[k].input_tensors) {
        if (in == id) death = std::max(death, static_cast<int>(k));
      }
    }
    if (graph.tensor(id).kind == TensorKind::kOutput) {
      death = std::max(death, static_cast<int>(kernels.size()) - 1);
    }
    return death;
  };
  for (const auto& t : graph.tensors) {
    if (t.kind == TensorKind::kInput) {
      blocks.push_back({align_arena(t.byte_size()), 0, death_of(t.id, 0)});
      if (ids) ids->push_back(t.id);
    }
  }
  for (size_t k = 0; k < kernels.size(); ++k) {
    const auto& id = kernels[k].output_tensor;
    blocks.push_back(
        {align_arena(graph.tensor(id).byte_size()), static_cast<int>(k), death_of(id, static_cast<int>(k))});
    if (ids) ids->push_back(id);
  }
  return blocks;
}

// No two simultaneously live tensors may overlap in [offset, offset+size).
void check_no_overlap(const ModelGraph& graph, const std::vector<FusedKernel>& kernels,
                      const MemoryPlan& plan) {
  std::vector<std::string> ids;
  auto blocks = liveness_blocks(graph, kernels, &ids);
  for (size_t i = 0; i < blocks.size(); ++i) {
    int64_t off_i = plan.offsets.at(ids[i]);
    CHECK(off_i % 8 == 0);
    CHECK(off_i + blocks[i].size <= plan.workspace_offset);
    for (size_t j = i + 1; j < blocks.size(); ++j) {
      int64_t off_j = plan.offsets.at(ids[j]);
      bool time = blocks[i].birth <= blocks[j].death && blocks[j].birth <= blocks[i].death;
      bool space = off_i < off_j + blocks[j].size && off_j < off_i + blocks[i].size;
      if (time) CHECK_FALSE(space);
    }
  }
}

ModelGraph planner_chain_graph() {
  // A(100B) -> k1 -> B(200B) -> k2 -> C(50B); C is int8 so 50 bytes works.
  ModelGraph g;
  g.name = "chain";
  TensorSpec a, b, c;
  a.id = "A";
  a.dtype = DType::kFp32;
  a.shape = {25};
  a.kind = TensorKind::kInput;
  b.id = "B";
  b.dtype = DType::kFp32;
  b.shape = {50};
  b.kind = TensorKind::kIntermediate;
  c.id = "C";
  c.dtype = DType::kInt8;
  c.shape = {50};
  c.kind = TensorKind::kOutput;
  c.quant = QuantParams{1.0, 0};
  g.tensors = {a, b, c};
  return g;
}

FusedKernel wire(const std::string& name, std::vector<std::string> ins, std::string out) {
  FusedKernel k;
  k.name = name;
  k.members = {name};
  k.input_tensors = std::move(ins);
  k.output_tensor = std::move(out);
  return k;
}

}  // namespace

TEST_CASE("sinus model fuses to the three annotated kernels") {
  ModelGraph g = infer_shapes(make_sinus_graph());
  auto kernels = fuse_operators(g);
  REQUIRE(kernels.size() == 3);

  CHECK(kernels[0].name == "fused_nn_dense_add_nn_relu");
  CHECK(kernels[1].name == "fused_nn_dense_add_nn_relu_1");
  CHECK(kernels[2].name == "fused_nn_dense_add");

  CHECK(kernels[0].assoc_params == std::vector<std::string>{"p0", "p1"});
  CHECK(kernels[1].assoc_params == std::vector<std::string>{"p2", "p3"});
  CHECK(kernels[2].assoc_params == std::vector<std::string>{"p4", "p5"});

  // Boundary conversions folded into the first and last kernels.
  CHECK(kernels[0].members ==
        std::vector<std::string>{"quant_in", "dense1", "bias1", "relu1"});
  CHECK(kernels[2].members == std::vector<std::string>{"dense3", "bias3", "dequant_out"});

  // Every original node lands in exactly one kernel.
  std::set<std::string> seen;
  size_t total = 0;
  for (const auto& k : kernels) {
    for (const auto& m : k.members) seen.insert(m);
    total += k.members.size();
  }
  CHECK(seen.size() == g.nodes.size());
  CHECK(total == g.nodes.size());

  CHECK(kernels[0].macs == 16);
  CHECK(kernels[1].macs == 256);
  CHECK(kernels[2].macs == 16);
}

TEST_CASE("single relu graph becomes one singleton kernel") {
  ModelGraph g = infer_shapes(make_relu_graph());
  auto kernels = fuse_operators(g);
  REQUIRE(kernels.size() == 1);
  CHECK(kernels[0].name == "fused_nn_relu");
  CHECK(kernels[0].assoc_params.empty());
}

TEST_CASE("multi-consumer intermediate blocks fusion") {
  ModelGraph g = infer_shapes(make_multi_consumer_graph());
  auto kernels = fuse_operators(g);

  // The dense output t0 feeds both the add and a second dense, so the legal
  // fusion enumerator must keep dense0 and bias0 apart in every partition,
  // and the greedy result must be one of the legal partitions.
  auto legal = enumerate_legal_fusions(g);
  REQUIRE(!legal.empty());
  for (const auto& partition : legal) {
    for (const auto& group : partition) {
      bool has_dense0 = std::find(group.begin(), group.end(), "dense0") != group.end();
      bool has_bias0 = std::find(group.begin(), group.end(), "bias0") != group.end();
      CHECK_FALSE((has_dense0 && has_bias0));
    }
  }

  std::vector<std::vector<std::string>> greedy;
  for (const auto& k : kernels) greedy.push_back(k.members);
  bool found = false;
  for (const auto& partition : legal) {
    if (partition == greedy) found = true;
  }
  CHECK(found);
  CHECK(kernels.size() == 4);  // all singletons
}

TEST_CASE("fusion names repeat with _k suffixes in graph order") {
  std::mt19937_64 rng(17);
  for (int round = 0; round < 20; ++round) {
    ModelGraph g = infer_shapes(random_quantized_mlp(rng));
    auto kernels = fuse_operators(g);
    std::map<std::string, int> counts;
    for (const auto& k : kernels) {
      std::string base = k.name;
      auto pos = base.find_last_of('_');
      if (pos != std::string::npos && base.find_first_not_of("0123456789", pos + 1) == std::string::npos) {
        int suffix = std::stoi(base.substr(pos + 1));
        base = base.substr(0, pos);
        CHECK(suffix == counts[base]);
      } else {
        CHECK(counts.find(base) == counts.end());
      }
      counts[base]++;
    }
  }
}

TEST_CASE("chain arena: analytic 304 bytes") {
  ModelGraph g = planner_chain_graph();
  std::vector<FusedKernel> kernels = {wire("k1", {"A"}, "B"), wire("k2", {"B"}, "C")};
  MemoryPlan plan = plan_memory(g, kernels);
  CHECK(plan.offsets.at("A") == 0);
  CHECK(plan.offsets.at("B") == 104);
  CHECK(plan.offsets.at("C") == 0);  // reuses A's freed interval
  CHECK(plan.arena_bytes == 304);
  CHECK(plan.total_memory_bytes == 304 + 4096);
  check_no_overlap(g, kernels, plan);
}

TEST_CASE("diamond arena equals the exhaustive optimum") {
  ModelGraph g;
  g.name = "diamond";
  auto add = [&](const std::string& id, int64_t bytes, TensorKind kind) {
    TensorSpec t;
    t.id = id;
    t.dtype = DType::kFp32;
    t.shape = {bytes / 4};
    t.kind = kind;
    g.tensors.push_back(t);
  };
  add("A", 64, TensorKind::kInput);
  add("B", 64, TensorKind::kIntermediate);
  add("C", 128, TensorKind::kIntermediate);
  add("D", 128, TensorKind::kIntermediate);
  add("E", 64, TensorKind::kOutput);
  std::vector<FusedKernel> kernels = {
      wire("k1", {"A"}, "B"),
      wire("k2", {"B"}, "C"),
      wire("k3", {"B"}, "D"),
      wire("k4", {"C", "D"}, "E"),
  };
  MemoryPlan plan = plan_memory(g, kernels);
  auto blocks = liveness_blocks(g, kernels);
  CHECK(plan.arena_bytes == brute_force_min_arena(blocks));
  check_no_overlap(g, kernels, plan);
}

TEST_CASE("zero intermediates: arena is input plus output") {
  ModelGraph g;
  g.name = "direct";
  TensorSpec in, out;
  in.id = "in";
  in.dtype = DType::kFp32;
  in.shape = {25};  // 100 -> 104 aligned
  in.kind = TensorKind::kInput;
  out.id = "out";
  out.dtype = DType::kFp32;
  out.shape = {11};  // 44 -> 48 aligned
  out.kind = TensorKind::kOutput;
  g.tensors = {in, out};
  std::vector<FusedKernel> kernels = {wire("k0", {"in"}, "out")};
  MemoryPlan plan = plan_memory(g, kernels);
  CHECK(plan.arena_bytes == 104 + 48);
}

TEST_CASE("planner oracle: greedy equals brute force up to 6 intermediates") {
  std::mt19937_64 rng(424242);
  int cases = 0;
  while (cases < 250) {
    PlannerCase c = random_planner_case(rng, 6);
    MemoryPlan plan = plan_memory(c.graph, c.kernels);
    auto blocks = liveness_blocks(c.graph, c.kernels);
    int64_t optimum = brute_force_min_arena(blocks);
    CAPTURE(cases);
    CHECK(plan.arena_bytes == optimum);
    check_no_overlap(c.graph, c.kernels, plan);

    int64_t lower = 0, total = 0;
    for (int step = 0; step < static_cast<int>(c.kernels.size()); ++step) {
      int64_t live = 0;
      for (const auto& b : blocks) {
        if (b.birth <= step && step <= b.death) live += b.size;
      }
      lower = std::max(lower, live);
    }
    for (const auto& b : blocks) total += b.size;
    CHECK(plan.arena_bytes >= lower);
    CHECK(plan.arena_bytes <= total);
    ++cases;
  }
}

TEST_CASE("planner bounds hold on larger random graphs") {
  std::mt19937_64 rng(31337);
  for (int round = 0; round < 60; ++round) {
    PlannerCase c = random_planner_case(rng, 24);
    MemoryPlan plan = plan_memory(c.graph, c.kernels);
    auto blocks = liveness_blocks(c.graph, c.kernels);
    int64_t lower = 0, total = 0;
    int max_step = 0;
    for (const auto& b : blocks) max_step = std::max(max_step, b.death);
    for (int step = 0; step <= max_step; ++step) {
      int64_t live = 0;
      for (const auto& b : blocks) {
        if (b.birth <= step && step <= b.death) live += b.size;
      }
      lower = std::max(lower, live);
    }
    for (const auto& b : blocks) total += b.size;
    CHECK(plan.arena_bytes >= lower);
    CHECK(plan.arena_bytes <= total);
    check_no_overlap(c.graph, c.kernels, plan);
  }
}

TEST_CASE("storage: per-kernel breakdown and total") {
  ModelGraph g = infer_shapes(make_sinus_graph());
  auto kernels = fuse_operators(g);
  CompileConstants constants;
  int64_t total = estimate_storage(g, kernels, constants);

  // Layer 2 carries p2 (16x16 int8 = 256 B) and p3 (16 int32 = 64 B).
  CHECK(kernels[1].storage_bytes == 256 + 64 + constants.code_bytes_per_kernel);

  // Independent recomputation: sum every param blob plus the constants.
  int64_t params_total = 0;
  for (const auto& [id, blob] : g.param_data) {
    (void)id;
    params_total += static_cast<int64_t>(blob.size());
  }
  int64_t expected = params_total +
                     static_cast<int64_t>(kernels.size()) * constants.code_bytes_per_kernel +
                     constants.runtime_code_bytes;
  CHECK(total == expected);

  int64_t from_breakdown = constants.runtime_code_bytes;
  for (const auto& k : kernels) from_breakdown += k.storage_bytes;
  CHECK(total == from_breakdown);
}

TEST_CASE("paramless kernel storage is the code constant alone") {
  ModelGraph g = infer_shapes(make_relu_graph());
  auto kernels = fuse_operators(g);
  CompileConstants constants;
  estimate_storage(g, kernels, constants);
  CHECK(kernels[0].storage_bytes == constants.code_bytes_per_kernel);
}

TEST_CASE("compile_artifact: sinus on stm32f746g-disco") {
  BoardRegistry registry = BoardRegistry::builtin();
  DeployableModel model = compile_artifact(make_sinus_graph(), registry.lookup("stm32f746g-disco"));
  CHECK(model.kernels.size() == 3);
  CHECK(model.board_name == "stm32f746g-disco");
  CHECK(model.plan.total_memory_bytes ==
        model.plan.arena_bytes + model.plan.runtime_overhead_bytes);
  for (const auto& k : model.kernels) {
    CHECK(k.memory_bytes ==
          align_arena(model.graph.tensor(k.output_tensor).byte_size()) + k.workspace_bytes);
  }
}

TEST_CASE("compile_artifact: 1 KB RAM board exceeds capacity") {
  BoardSpec tiny = BoardRegistry::builtin().lookup("stm32f746g-disco");
  tiny.name = "tiny";
  tiny.ram_bytes = 1024;
  try {
    compile_artifact(make_sinus_graph(), tiny);
    FAIL("expected CapacityExceeded");
  } catch (const CapacityExceeded& e) {
    CHECK(e.resource() == "RAM");
    CHECK(e.available() == 1024);
    CHECK(e.needed() > e.available());
  }
}

TEST_CASE("compile_artifact: flash capacity is also enforced") {
  BoardSpec tiny = BoardRegistry::builtin().lookup("stm32f746g-disco");
  tiny.name = "tiny-flash";
  tiny.flash_bytes = 10000;  // below the runtime code constant
  try {
    compile_artifact(make_sinus_graph(), tiny);
    FAIL("expected CapacityExceeded");
  } catch (const CapacityExceeded& e) {
    CHECK(e.resource() == "flash");
  }
}

TEST_CASE("deployables for boards with equal limits differ only in the name") {
  BoardRegistry registry = BoardRegistry::builtin();
  // Same memory limits, different cores.
  BoardSpec a = registry.lookup("nrf52dk");
  BoardSpec b = a;
  b.name = "nrf52dk-clone";
  b.core_family = CoreFamily::kCortexM3;
  b.coeffs = default_coeffs(b.core_family);

  ModelGraph g = make_sinus_graph();
  std::string sa = serialize_deployable(compile_artifact(g, a));
  std::string sb = serialize_deployable(compile_artifact(g, b));
  CHECK(sa != sb);
  size_t pos = sa.find("nrf52dk");
  REQUIRE(pos != std::string::npos);
  sa.replace(pos, std::string("nrf52dk").size(), "nrf52dk-clone");
  CHECK(sa == sb);
}

TEST_CASE("serialize/parse deployable round trip") {
  BoardRegistry registry = BoardRegistry::builtin();
  for (const ModelGraph& g : {make_sinus_graph(), make_small_lenet()}) {
    DeployableModel model = compile_artifact(g, registry.lookup("stm32f746g-disco"));
    DeployableModel reparsed = parse_deployable(serialize_deployable(model));
    CHECK(reparsed == model);
  }
  CHECK_THROWS_AS(parse_deployable("{\"format\":\"nope\"}"), ParseError);
  CHECK_THROWS_AS(parse_deployable("not json"), ParseError);
}

TEST_CASE("compile twice is deterministic") {
  BoardRegistry registry = BoardRegistry::builtin();
  const BoardSpec& board = registry.lookup("nucleo-wl55jc");
  ModelGraph g = make_small_lenet();
  CHECK(serialize_deployable(compile_artifact(g, board)) ==
        serialize_deployable(compile_artifact(g, board)));
}

TEST_CASE("accumulator overflow guard rejects absurd reductions") {
  ModelGraph g = make_sinus_graph();
  // Stretch the middle dense to a reduction long enough to overflow int32.
  g.find_tensor("w1")->shape = {16, 40000};
  g.find_tensor("h1")->shape = {1, 40000};
  g.find_tensor("s1")->shape = {1, 40000};
  g.find_tensor("acc1")->shape = {1, 40000};
  g.find_tensor("w0")->shape = {40000, 1};
  g.find_tensor("b0")->shape = {40000};
  g.param_data["w0"] = std::vector<uint8_t>(40000, 1);
  g.param_data["b0"] = std::vector<uint8_t>(160000, 0);
  g.param_data["w1"] = std::vector<uint8_t>(16 * 40000, 1);
  BoardSpec roomy = BoardRegistry::builtin().lookup("stm32f746g-disco");
  roomy.name = "roomy";
  roomy.ram_bytes = 1 << 30;
  roomy.flash_bytes = 1 << 30;
  CHECK_THROWS_AS(compile_artifact(g, roomy), ValidationError);
}
