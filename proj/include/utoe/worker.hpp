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
#ifndef UTOE_WORKER_HPP_
#define UTOE_WORKER_HPP_

#include <memory>
#include <optional>
#include <vector>

#include "utoe/board_registry.hpp"
#include "utoe/executor.hpp"
#include "utoe/rpc.hpp"
#include "utoe/transport.hpp"

namespace utoe {

enum class TimingMode { kWallclock, kCostModel };

const char* timing_mode_name(TimingMode mode);
TimingMode timing_mode_from_name(const std::string& name);

struct WorkerConfig {
  BoardSpec board;
  TimingMode timing_mode = TimingMode::kWallclock;
  size_t buffer_size = rpc::kDefaultBufferSize;
  uint32_t default_repeats = 10;
};

// Counter-based generator: every element is a pure function of
// (seed, trial, element index), so trials reproduce bit-exactly on any host.
uint64_t counter_hash(uint64_t seed, uint64_t trial, uint64_t index);
float uniform_unit(uint64_t seed, uint64_t trial, uint64_t index);  // [0, 1)
std::vector<float> generate_input(uint64_t seed, uint32_t trial_index, const TensorSpec& spec);

// The simulated target. One instance serves one session at a time; the
// message-level handler is exposed separately so the protocol state machine
// can be exercised without a transport.
class DeviceWorker {
 public:
  explicit DeviceWorker(WorkerConfig config);
  ~DeviceWorker();

  const WorkerConfig& config() const { return config_; }

  // Reads frames until BYE or transport close. Malformed input is answered
  // with an in-band ERROR; the session keeps going.
  void serve(Transport& transport);

  std::vector<rpc::Message> handle(const rpc::Message& request);
  bool done() const { return done_; }
  bool model_loaded() const { return context_ != nullptr; }

 private:
  std::vector<rpc::Message> handle_load_done(const rpc::LoadDone& msg);
  std::vector<rpc::Message> handle_run_trials(const rpc::RunTrials& msg);
  std::vector<rpc::Message> handle_bench_op(const rpc::BenchOp& msg);
  uint64_t measure_full_inference(uint32_t trial, uint64_t seed);

  WorkerConfig config_;
  std::vector<uint8_t> staging_;
  std::unique_ptr<ExecutionContext> context_;
  uint64_t bench_seed_ = 0;  // last RUN_TRIALS seed; fixed input for BENCH_OP
  bool done_ = false;
};

}  // namespace utoe

#endif  // UTOE_WORKER_HPP_
