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
#include "utoe/worker.hpp"

#include <chrono>
#include <cmath>
#include <cstring>

namespace utoe {

const char* timing_mode_name(TimingMode mode) {
  return mode == TimingMode::kWallclock ? "wallclock" : "costmodel";
}

TimingMode timing_mode_from_name(const std::string& name) {
  if (name == "wallclock") return TimingMode::kWallclock;
  if (name == "costmodel") return TimingMode::kCostModel;
  throw ValidationError("unknown timing mode '" + name + "' (wallclock|costmodel)");
}

namespace {

uint64_t mix64(uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

uint64_t now_ns() {
  return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                   std::chrono::steady_clock::now().time_since_epoch())
                                   .count());
}

}  // namespace

uint64_t counter_hash(uint64_t seed, uint64_t trial, uint64_t index) {
  uint64_t h = mix64(seed + 0x9E3779B97F4A7C15ULL * (trial + 1));
  h = mix64(h + 0xD1B54A32D192ED03ULL * (index + 1));
  return h;
}

float uniform_unit(uint64_t seed, uint64_t trial, uint64_t index) {
  // Top 24 bits map onto [0,1) exactly in fp32; 1.0 is unreachable.
  return static_cast<float>(counter_hash(seed, trial, index) >> 40) * 0x1.0p-24f;
}

std::vector<float> generate_input(uint64_t seed, uint32_t trial_index, const TensorSpec& spec) {
  std::vector<float> out(static_cast<size_t>(spec.element_count()));
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = uniform_unit(seed, trial_index, i);
  }
  return out;
}

DeviceWorker::DeviceWorker(WorkerConfig config) : config_(std::move(config)) {
  if (config_.buffer_size < rpc::kMinBufferSize) {
    throw rpc::BufferTooSmall(config_.buffer_size);
  }
}

DeviceWorker::~DeviceWorker() = default;

uint64_t DeviceWorker::measure_full_inference(uint32_t trial, uint64_t seed) {
  auto input = generate_input(seed, trial, context_->input_spec());
  if (config_.timing_mode == TimingMode::kCostModel) {
    context_->run_all(input);
    return latency_ns_for_model(context_->model().kernels, config_.board);
  }
  uint64_t start = now_ns();
  context_->run_all(input);
  uint64_t elapsed = now_ns() - start;
  return elapsed ? elapsed : 1;
}

std::vector<rpc::Message> DeviceWorker::handle_load_done(const rpc::LoadDone& msg) {
  using namespace rpc;
  if (staging_.size() != msg.total_len) {
    return {Error{static_cast<uint16_t>(ErrorCode::kMalformed),
                  "model length mismatch: staged " + std::to_string(staging_.size()) +
                      ", declared " + std::to_string(msg.total_len)}};
  }
  if (model_checksum(staging_) != msg.checksum) {
    return {Error{static_cast<uint16_t>(ErrorCode::kMalformed), "model checksum mismatch"}};
  }
  try {
    DeployableModel model =
        parse_deployable(std::string(staging_.begin(), staging_.end()));
    if (model.plan.total_memory_bytes > config_.board.ram_bytes) {
      return {Error{static_cast<uint16_t>(ErrorCode::kCapacity),
                    "model needs " + std::to_string(model.plan.total_memory_bytes) +
                        " B RAM, board has " + std::to_string(config_.board.ram_bytes)}};
    }
    if (model.storage_bytes > config_.board.flash_bytes) {
      return {Error{static_cast<uint16_t>(ErrorCode::kCapacity),
                    "model needs " + std::to_string(model.storage_bytes) +
                        " B flash, board has " + std::to_string(config_.board.flash_bytes)}};
    }
    // A second LOAD replaces the previous model entirely.
    context_ = std::make_unique<ExecutionContext>(std::move(model));
    staging_.clear();
    staging_.shrink_to_fit();
    return {};
  } catch (const std::exception& e) {
    return {Error{static_cast<uint16_t>(ErrorCode::kMalformed), e.what()}};
  }
}

std::vector<rpc::Message> DeviceWorker::handle_run_trials(const rpc::RunTrials& msg) {
  using namespace rpc;
  if (!context_) {
    return {Error{static_cast<uint16_t>(ErrorCode::kNoModel), "no model loaded"}};
  }
  if (msg.num_trials == 0) {
    return {Error{static_cast<uint16_t>(ErrorCode::kBadArg), "num_trials must be >= 1"}};
  }
  bench_seed_ = msg.seed;
  std::vector<Message> out;
  out.reserve(msg.num_trials + 1);
  for (uint32_t trial = 0; trial < msg.num_trials; ++trial) {
    out.push_back(TrialRecord{trial, measure_full_inference(trial, msg.seed)});
  }
  out.push_back(TrialsDone{msg.num_trials});
  return out;
}

std::vector<rpc::Message> DeviceWorker::handle_bench_op(const rpc::BenchOp& msg) {
  using namespace rpc;
  if (!context_) {
    return {Error{static_cast<uint16_t>(ErrorCode::kNoModel), "no model loaded"}};
  }
  const auto& kernels = context_->model().kernels;
  if (msg.kernel_index >= kernels.size()) {
    return {Error{static_cast<uint16_t>(ErrorCode::kBadIndex),
                  "kernel index " + std::to_string(msg.kernel_index) + " out of range (model has " +
                      std::to_string(kernels.size()) + " kernels)"}};
  }
  uint32_t repeats = msg.repeats ? msg.repeats : config_.default_repeats;

  // Warm run so every boundary tensor feeding this kernel holds real data.
  context_->run_all(generate_input(bench_seed_, 0, context_->input_spec()));

  uint64_t min_ns = UINT64_MAX, max_ns = 0;
  double sum_ns = 0;
  for (uint32_t rep = 0; rep < repeats; ++rep) {
    uint64_t ns;
    if (config_.timing_mode == TimingMode::kCostModel) {
      context_->run_kernel(msg.kernel_index);
      ns = latency_ns_for(kernels[msg.kernel_index], config_.board);
    } else {
      uint64_t start = now_ns();
      context_->run_kernel(msg.kernel_index);
      uint64_t elapsed = now_ns() - start;
      ns = elapsed ? elapsed : 1;
    }
    min_ns = std::min(min_ns, ns);
    max_ns = std::max(max_ns, ns);
    sum_ns += static_cast<double>(ns);
  }
  OpResult result;
  result.kernel_index = msg.kernel_index;
  result.mean_ns = static_cast<uint64_t>(std::llround(sum_ns / repeats));
  result.min_ns = min_ns;
  result.max_ns = max_ns;
  return {result};
}

std::vector<rpc::Message> DeviceWorker::handle(const rpc::Message& request) {
  using namespace rpc;
  struct Visitor {
    DeviceWorker& w;

    std::vector<Message> operator()(const Hello& m) {
      if (m.proto_version != kProtocolVersion) {
        return {Error{static_cast<uint16_t>(ErrorCode::kMalformed),
                      "unsupported protocol version " + std::to_string(m.proto_version)}};
      }
      return {HelloAck{static_cast<uint32_t>(w.config_.buffer_size), w.config_.board.name}};
    }
    std::vector<Message> operator()(const LoadModelChunk& m) {
      size_t end = static_cast<size_t>(m.offset) + m.bytes.size();
      if (w.staging_.size() < end) w.staging_.resize(end);
      std::memcpy(w.staging_.data() + m.offset, m.bytes.data(), m.bytes.size());
      return {};
    }
    std::vector<Message> operator()(const LoadDone& m) { return w.handle_load_done(m); }
    std::vector<Message> operator()(const MemQuery&) {
      if (!w.context_) {
        return {Error{static_cast<uint16_t>(ErrorCode::kNoModel), "no model loaded"}};
      }
      const auto& model = w.context_->model();
      MemReport report;
      report.memory_bytes = static_cast<uint64_t>(model.plan.total_memory_bytes);
      report.storage_bytes = static_cast<uint64_t>(model.storage_bytes);
      for (const auto& k : model.kernels) {
        report.per_kernel.push_back({static_cast<uint32_t>(k.memory_bytes),
                                     static_cast<uint32_t>(k.storage_bytes)});
      }
      return {report};
    }
    std::vector<Message> operator()(const RunTrials& m) { return w.handle_run_trials(m); }
    std::vector<Message> operator()(const BenchOp& m) { return w.handle_bench_op(m); }
    std::vector<Message> operator()(const Bye&) {
      w.done_ = true;
      return {};
    }
    std::vector<Message> operator()(const Error&) { return {}; }  // never answer an error
    std::vector<Message> operator()(const HelloAck&) { return unexpected(MsgType::kHelloAck); }
    std::vector<Message> operator()(const MemReport&) { return unexpected(MsgType::kMemReport); }
    std::vector<Message> operator()(const TrialRecord&) {
      return unexpected(MsgType::kTrialRecord);
    }
    std::vector<Message> operator()(const TrialsDone&) { return unexpected(MsgType::kTrialsDone); }
    std::vector<Message> operator()(const OpResult&) { return unexpected(MsgType::kOpResult); }

    static std::vector<Message> unexpected(MsgType type) {
      return {Error{static_cast<uint16_t>(ErrorCode::kMalformed),
                    std::string("unexpected message ") + msg_type_name(type)}};
    }
  };
  try {
    return std::visit(Visitor{*this}, request);
  } catch (const std::exception& e) {
    return {Error{static_cast<uint16_t>(ErrorCode::kInternal), e.what()}};
  }
}

void DeviceWorker::serve(Transport& transport) {
  rpc::StreamDecoder decoder;
  uint16_t seq_out = 0;
  std::vector<uint8_t> buffer(65536);
  done_ = false;

  while (!done_) {
    ssize_t n = transport.read_some(buffer.data(), buffer.size());
    if (n == 0) break;  // peer closed
    if (n < 0) continue;
    auto events = decoder.feed(std::span(buffer.data(), static_cast<size_t>(n)));
    for (const auto& event : events) {
      std::vector<rpc::Message> responses;
      if (const auto* frame = std::get_if<rpc::DecodedFrame>(&event)) {
        responses = handle(frame->message);
      } else {
        const auto& signal = std::get<rpc::DecodeSignal>(event);
        if (signal.kind != rpc::SignalKind::kBadMagic) {
          responses = {rpc::Error{static_cast<uint16_t>(rpc::ErrorCode::kMalformed),
                                  "undecodable frame"}};
        }
      }
      for (const auto& response : responses) {
        try {
          transport.write_all(rpc::encode_frame(response, seq_out++, config_.buffer_size));
        } catch (const rpc::PayloadTooLarge&) {
          transport.write_all(rpc::encode_frame(
              rpc::Error{static_cast<uint16_t>(rpc::ErrorCode::kInternal),
                         "response exceeds the RPC buffer"},
              seq_out++, config_.buffer_size));
        }
      }
      if (done_) break;
    }
  }
}

}  // namespace utoe
