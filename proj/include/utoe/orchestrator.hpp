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
#ifndef UTOE_ORCHESTRATOR_HPP_
#define UTOE_ORCHESTRATOR_HPP_

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "utoe/analyzer.hpp"
#include "utoe/board_registry.hpp"
#include "utoe/transport.hpp"
#include "utoe/worker.hpp"

namespace utoe {

enum class Granularity { kPerModel, kPerOp };

// Exit-code partition of the failure classes.
enum ExitCode {
  kExitOk = 0,
  kExitUsage = 1,
  kExitValidation = 2,
  kExitCapacity = 3,
  kExitTransport = 4,
  kExitProtocol = 5,
};

struct RunConfig {
  std::string model_path;
  std::string board_name;
  Granularity granularity = Granularity::kPerModel;
  uint32_t trials = 10;           // UTOE_TRIAL_NUM
  uint64_t seed = 0;              // UTOE_RANDOM_SEED
  uint32_t repeats = 10;          // per-operator timing repeats
  TimingMode timing_mode = TimingMode::kWallclock;
  std::string remote;             // "host:port"; empty = spawn a local worker
  std::string log_path;
  size_t buffer_size = rpc::kDefaultBufferSize;  // UTOE_RPC_BUFFER_SIZE
  std::string boards_path;        // empty = builtin registry
  std::string worker_bin;         // empty = utoe-worker next to this binary
  std::string config_path;        // optional compile-constants file
  std::string report_json_path;   // optional machine-readable report
  int handshake_timeout_ms = 5000;
  int io_timeout_ms = 120000;
  int connect_attempts = 3;
  CompileConstants constants;
};

// Reads overrides for code_bytes_per_kernel / runtime_code_bytes /
// runtime_overhead_bytes from a JSON config file; absent keys keep defaults.
CompileConstants load_compile_constants(const std::string& path);

// Environment defaults per the documented precedence: explicit flag beats the
// UTOE_* variable beats the built-in default.
uint64_t env_u64(const char* name, uint64_t fallback);

class HandshakeTimeout : public TransportError {
 public:
  HandshakeTimeout() : TransportError("handshake timed out") {}
};

class BoardMismatch : public std::runtime_error {
 public:
  BoardMismatch(const std::string& wanted, const std::string& got);
};

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Remote worker error surfaced to the host, keeping its wire error code.
class WorkerError : public std::runtime_error {
 public:
  WorkerError(uint16_t code, const std::string& text);
  uint16_t code() const { return code_; }

 private:
  uint16_t code_;
};

// One connected evaluation session. Strictly alternating request/response
// flow; sequence numbers count per direction and gaps are reported, not
// enforced.
class Session {
 public:
  Session(std::unique_ptr<Transport> transport, std::unique_ptr<ChildProcess> child,
          int io_timeout_ms);
  Session(Session&&) = default;
  ~Session();

  void send(const rpc::Message& message);
  rpc::Message expect(int timeout_ms = -1);  // -1 = session default

  size_t buffer_size() const { return buffer_size_; }
  void set_buffer_size(size_t n) { buffer_size_ = n; }
  const std::string& board_name() const { return board_name_; }
  void set_board_name(std::string name) { board_name_ = std::move(name); }
  size_t seq_gaps() const { return seq_gaps_; }

  void bye();

 private:
  std::unique_ptr<Transport> transport_;   // remote (TCP) sessions
  std::unique_ptr<ChildProcess> child_;    // local (spawned worker) sessions
  Transport* io_ = nullptr;
  rpc::StreamDecoder decoder_;
  std::vector<rpc::DecodedFrame> queued_;
  uint16_t seq_out_ = 0;
  std::optional<uint16_t> seq_in_;
  size_t seq_gaps_ = 0;
  size_t buffer_size_ = rpc::kDefaultBufferSize;
  std::string board_name_;
  int io_timeout_ms_;
};

// Spawns the local worker or dials the remote one, completes HELLO /
// HELLO_ACK, negotiates buffer_size = min(host, device), and checks the
// echoed board name. Throws HandshakeTimeout or BoardMismatch.
Session connect_target(const RunConfig& config, const BoardSpec& board);

// Uploads a compiled model and returns the device's MEM_REPORT, which must
// agree with the host-side static analysis.
rpc::MemReport deploy_model(Session& session, const DeployableModel& model);

struct PerModelOutcome {
  PerModelReport report;
  std::string rendered;
  std::vector<rpc::TrialRecord> records;
  DeployableModel model;
};

struct PerOpOutcome {
  PerOpReport report;
  std::string rendered;
  std::vector<rpc::OpResult> results;
  DeployableModel model;
};

PerModelOutcome cmd_per_model(const RunConfig& config);
PerOpOutcome cmd_per_operator(const RunConfig& config);

// Full CLI action: runs the configured routine, prints the rendered table to
// `out`, appends the raw log, maps failures onto the exit-code partition.
int run_eval(const RunConfig& config, std::ostream& out, std::ostream& err);

BoardRegistry load_registry(const RunConfig& config);

}  // namespace utoe

#endif  // UTOE_ORCHESTRATOR_HPP_
