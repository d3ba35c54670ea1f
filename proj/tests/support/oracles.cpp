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
#include "support/oracles.hpp"

#include <algorithm>
#include <array>
#include <functional>
#include <set>

namespace utoe::testing {

int64_t conv2d_mac_loop_nest(int64_t cin, int64_t h, int64_t w, int64_t cout, int64_t kh,
                             int64_t kw, int64_t stride, int64_t padding) {
  int64_t hout = (h + 2 * padding - kh) / stride + 1;
  int64_t wout = (w + 2 * padding - kw) / stride + 1;
  int64_t count = 0;
  for (int64_t o = 0; o < cout; ++o) {
    for (int64_t ho = 0; ho < hout; ++ho) {
      for (int64_t wo = 0; wo < wout; ++wo) {
        for (int64_t c = 0; c < cin; ++c) {
          for (int64_t ki = 0; ki < kh; ++ki) {
            for (int64_t kj = 0; kj < kw; ++kj) {
              ++count;
            }
          }
        }
      }
    }
  }
  return count;
}

namespace {

struct Placement {
  const LiveBlock* block;
  int64_t offset;
};

bool conflicts(const LiveBlock& a, int64_t offset_a, const Placement& p) {
  bool time = a.birth <= p.block->death && p.block->birth <= a.death;
  bool space = offset_a < p.offset + p.block->size && p.offset < offset_a + a.size;
  return time && space;
}

int64_t lowest_feasible(const LiveBlock& block, const std::vector<Placement>& placed) {
  std::vector<const Placement*> overlapping;
  for (const auto& p : placed) {
    if (block.birth <= p.block->death && p.block->birth <= block.death) {
      overlapping.push_back(&p);
    }
  }
  std::sort(overlapping.begin(), overlapping.end(),
            [](const Placement* a, const Placement* b) { return a->offset < b->offset; });
  int64_t candidate = 0;
  for (const auto* p : overlapping) {
    if (candidate + block.size <= p->offset) break;
    candidate = std::max(candidate, p->offset + p->block->size);
  }
  return candidate;
}

int64_t liveness_lower_bound(std::span<const LiveBlock> blocks) {
  int max_step = 0;
  for (const auto& b : blocks) max_step = std::max(max_step, b.death);
  int64_t bound = 0;
  for (int step = 0; step <= max_step; ++step) {
    int64_t live = 0;
    for (const auto& b : blocks) {
      if (b.birth <= step && step <= b.death) live += b.size;
    }
    bound = std::max(bound, live);
  }
  return bound;
}

}  // namespace

int64_t brute_force_min_arena(std::span<const LiveBlock> blocks) {
  if (blocks.empty()) return 0;
  const int64_t floor_bound = liveness_lower_bound(blocks);

  // Seed the bound with one greedy pass in the given order.
  std::vector<Placement> placed;
  int64_t best = 0;
  for (const auto& b : blocks) {
    int64_t off = lowest_feasible(b, placed);
    placed.push_back({&b, off});
    best = std::max(best, off + b.size);
  }

  std::vector<bool> used(blocks.size(), false);
  placed.clear();

  std::function<void(size_t, int64_t)> visit = [&](size_t depth, int64_t height) {
    if (height >= best) return;
    if (depth == blocks.size()) {
      best = height;
      return;
    }
    std::set<std::tuple<int64_t, int, int>> tried;  // symmetric siblings
    for (size_t i = 0; i < blocks.size(); ++i) {
      if (used[i]) continue;
      auto key = std::make_tuple(blocks[i].size, blocks[i].birth, blocks[i].death);
      if (!tried.insert(key).second) continue;
      int64_t off = lowest_feasible(blocks[i], placed);
      int64_t next = std::max(height, off + blocks[i].size);
      if (next >= best) continue;
      used[i] = true;
      placed.push_back({&blocks[i], off});
      visit(depth + 1, next);
      placed.pop_back();
      used[i] = false;
      if (best == floor_bound) return;  // cannot do better
    }
  };
  if (best > floor_bound) visit(0, 0);
  return best;
}

uint16_t reference_crc16(std::span<const uint8_t> data) {
  static const auto table = [] {
    std::array<uint16_t, 256> t{};
    for (int value = 0; value < 256; ++value) {
      uint16_t crc = static_cast<uint16_t>(value << 8);
      for (int bit = 0; bit < 8; ++bit) {
        crc = static_cast<uint16_t>((crc & 0x8000) ? (crc << 1) ^ 0x1021 : crc << 1);
      }
      t[static_cast<size_t>(value)] = crc;
    }
    return t;
  }();
  uint16_t crc = 0xFFFF;
  for (uint8_t byte : data) {
    crc = static_cast<uint16_t>((crc << 8) ^ table[((crc >> 8) ^ byte) & 0xFF]);
  }
  return crc;
}

std::vector<double> dense_reference(std::span<const float> x, std::span<const float> w,
                                    std::span<const float> bias, int64_t batch, int64_t in,
                                    int64_t out) {
  std::vector<double> y(static_cast<size_t>(batch * out), 0.0);
  for (int64_t n = 0; n < batch; ++n) {
    for (int64_t o = 0; o < out; ++o) {
      double acc = bias.empty() ? 0.0 : static_cast<double>(bias[o]);
      for (int64_t i = 0; i < in; ++i) {
        acc += static_cast<double>(x[n * in + i]) * static_cast<double>(w[o * in + i]);
      }
      y[n * out + o] = acc;
    }
  }
  return y;
}

rpc::Message random_message(std::mt19937_64& rng) {
  auto u32 = [&] { return static_cast<uint32_t>(rng()); };
  auto u16 = [&] { return static_cast<uint16_t>(rng()); };
  auto u64v = [&] { return static_cast<uint64_t>(rng()); };
  auto text = [&](size_t max_len) {
    std::string s(rng() % (max_len + 1), '\0');
    for (auto& c : s) c = static_cast<char>('a' + rng() % 26);
    return s;
  };
  auto bytes = [&](size_t max_len) {
    std::vector<uint8_t> b(rng() % (max_len + 1));
    for (auto& v : b) v = static_cast<uint8_t>(rng());
    return b;
  };

  switch (rng() % 13) {
    case 0:
      return rpc::Hello{rpc::kProtocolVersion};
    case 1:
      return rpc::HelloAck{u32(), text(24)};
    case 2:
      return rpc::LoadModelChunk{u32(), bytes(64)};
    case 3:
      return rpc::LoadDone{u32(), u32()};
    case 4:
      return rpc::MemQuery{};
    case 5: {
      rpc::MemReport m{u64v(), u64v(), {}};
      size_t kernels = rng() % 8;
      for (size_t i = 0; i < kernels; ++i) m.per_kernel.push_back({u32(), u32()});
      return m;
    }
    case 6:
      return rpc::RunTrials{u32(), u64v()};
    case 7:
      return rpc::TrialRecord{u32(), u64v()};
    case 8:
      return rpc::TrialsDone{u32()};
    case 9:
      return rpc::BenchOp{u16(), u32()};
    case 10:
      return rpc::OpResult{u16(), u64v(), u64v(), u64v()};
    case 11:
      return rpc::Error{u16(), text(40)};
    default:
      return rpc::Bye{};
  }
}

namespace {

void enumerate_groups(const ModelGraph& g, size_t next, std::vector<bool>& taken,
                      std::vector<std::vector<std::string>>& current,
                      std::vector<std::vector<std::vector<std::string>>>& out) {
  while (next < g.nodes.size() && taken[next]) ++next;
  if (next == g.nodes.size()) {
    out.push_back(current);
    return;
  }

  auto single_consumer = [&](const std::string& t) -> int {
    if (g.tensor(t).kind != TensorKind::kIntermediate) return -1;
    auto cs = g.consumer_indices(t);
    return cs.size() == 1 ? cs[0] : -1;
  };

  const OperatorNode& root = g.nodes[next];

  // Option 1: singleton.
  taken[next] = true;
  current.push_back({root.id});
  enumerate_groups(g, next + 1, taken, current, out);
  current.pop_back();
  taken[next] = false;

  if (root.kind != OpKind::kDense && root.kind != OpKind::kConv2d) return;
  int add_idx = single_consumer(root.outputs[0]);
  if (add_idx < 0 || taken[static_cast<size_t>(add_idx)] ||
      g.nodes[add_idx].kind != OpKind::kAdd) {
    return;
  }

  // Option 2: root + add.
  taken[next] = taken[add_idx] = true;
  current.push_back({root.id, g.nodes[add_idx].id});
  enumerate_groups(g, next + 1, taken, current, out);
  current.pop_back();

  // Option 3: root + add + relu.
  int relu_idx = single_consumer(g.nodes[add_idx].outputs[0]);
  if (relu_idx >= 0 && !taken[static_cast<size_t>(relu_idx)] &&
      g.nodes[relu_idx].kind == OpKind::kRelu) {
    taken[relu_idx] = true;
    current.push_back({root.id, g.nodes[add_idx].id, g.nodes[relu_idx].id});
    enumerate_groups(g, next + 1, taken, current, out);
    current.pop_back();
    taken[relu_idx] = false;
  }
  taken[next] = taken[add_idx] = false;
}

}  // namespace

std::vector<std::vector<std::vector<std::string>>> enumerate_legal_fusions(const ModelGraph& g) {
  std::vector<bool> taken(g.nodes.size(), false);
  std::vector<std::vector<std::string>> current;
  std::vector<std::vector<std::vector<std::string>>> out;
  enumerate_groups(g, 0, taken, current, out);
  return out;
}

}  // namespace utoe::testing
