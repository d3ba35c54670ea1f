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
#include "utoe/orchestrator.hpp"

#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"

namespace utoe {

uint64_t env_u64(const char* name, uint64_t fallback) {
  const char* value = std::getenv(name);
  if (!value || !*value) return fallback;
  char* end = nullptr;
  unsigned long long parsed = std::strtoull(value, &end, 10);
  if (end == value || *end != '\0') {
    throw ValidationError(std::string(name) + " must be an unsigned integer, got '" + value + "'");
  }
  return parsed;
}

BoardMismatch::BoardMismatch(const std::string& wanted, const std::string& got)
    : std::runtime_error("board mismatch: requested '" + wanted + "' but the worker reports '" +
                         got + "'") {}

WorkerError::WorkerError(uint16_t code, const std::string& text)
    : std::runtime_error("worker error " + std::to_string(code) + ": " + text), code_(code) {}

Session::Session(std::unique_ptr<Transport> transport, std::unique_ptr<ChildProcess> child,
                 int io_timeout_ms)
    : transport_(std::move(transport)), child_(std::move(child)), io_timeout_ms_(io_timeout_ms) {
  io_ = transport_ ? transport_.get() : &child_->transport();
}

Session::~Session() = default;

void Session::send(const rpc::Message& message) {
  io_->write_all(rpc::encode_frame(message, seq_out_++, buffer_size_));
}

rpc::Message Session::expect(int timeout_ms) {
  if (timeout_ms < 0) timeout_ms = io_timeout_ms_;
  auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  std::vector<uint8_t> buffer(65536);
  for (;;) {
    if (!queued_.empty()) {
      rpc::DecodedFrame frame = std::move(queued_.front());
      queued_.erase(queued_.begin());
      if (seq_in_ && static_cast<uint16_t>(*seq_in_ + 1) != frame.seq) ++seq_gaps_;
      seq_in_ = frame.seq;
      return std::move(frame.message);
    }
    auto now = std::chrono::steady_clock::now();
    if (now >= deadline) {
      throw TransportError("timed out after " + std::to_string(timeout_ms) +
                           " ms waiting for the worker");
    }
    int wait_ms = static_cast<int>(
        std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count());
    ssize_t n = io_->read_some(buffer.data(), buffer.size(), std::max(1, wait_ms));
    if (n == 0) throw TransportError("worker closed the connection");
    if (n < 0) continue;  // timeout slice, re-check deadline
    for (auto& event : decoder_.feed(std::span(buffer.data(), static_cast<size_t>(n)))) {
      if (auto* frame = std::get_if<rpc::DecodedFrame>(&event)) {
        queued_.push_back(std::move(*frame));
      }
      // Decode signals from a simulated serial line are tolerated silently;
      // the CRC already dropped the damaged frame.
    }
  }
}

void Session::bye() {
  try {
    send(rpc::Bye{});
  } catch (const TransportError&) {
    // Already gone; nothing to wave at.
  }
}

namespace {

std::string executable_dir() {
  char buf[4096];
  ssize_t n = ::readlink("/proc/self/exe", buf, sizeof(buf) - 1);
  if (n <= 0) return ".";
  buf[n] = '\0';
  std::string path(buf);
  auto slash = path.rfind('/');
  return slash == std::string::npos ? "." : path.substr(0, slash);
}

std::pair<std::string, uint16_t> split_host_port(const std::string& endpoint) {
  auto colon = endpoint.rfind(':');
  if (colon == std::string::npos || colon + 1 >= endpoint.size()) {
    throw ValidationError("remote endpoint must be host:port, got '" + endpoint + "'");
  }
  int port = std::stoi(endpoint.substr(colon + 1));
  if (port < 1 || port > 65535) {
    throw ValidationError("remote port out of range in '" + endpoint + "'");
  }
  return {endpoint.substr(0, colon), static_cast<uint16_t>(port)};
}

}  // namespace

BoardRegistry load_registry(const RunConfig& config) {
  return config.boards_path.empty() ? BoardRegistry::builtin()
                                    : BoardRegistry::from_file(config.boards_path);
}

CompileConstants load_compile_constants(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open config file '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(buffer.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("config file is not valid JSON: ") + e.what());
  }
  CompileConstants constants;
  try {
    constants.code_bytes_per_kernel =
        doc.value("code_bytes_per_kernel", constants.code_bytes_per_kernel);
    constants.runtime_code_bytes = doc.value("runtime_code_bytes", constants.runtime_code_bytes);
    constants.runtime_overhead_bytes =
        doc.value("runtime_overhead_bytes", constants.runtime_overhead_bytes);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed config file: ") + e.what());
  }
  if (constants.code_bytes_per_kernel < 0 || constants.runtime_code_bytes < 0 ||
      constants.runtime_overhead_bytes < 0) {
    throw ValidationError("config constants must be non-negative");
  }
  return constants;
}

Session connect_target(const RunConfig& config, const BoardSpec& board) {
  std::unique_ptr<Transport> transport;
  std::unique_ptr<ChildProcess> child;

  if (config.remote.empty()) {
    std::string bin = config.worker_bin.empty() ? executable_dir() + "/utoe-worker"
                                                : config.worker_bin;
    std::vector<std::string> args = {"--board", board.name,
                                     "--mode", timing_mode_name(config.timing_mode),
                                     "--buffer", std::to_string(config.buffer_size),
                                     "--stdio"};
    if (!config.boards_path.empty()) {
      args.push_back("--boards");
      args.push_back(config.boards_path);
    }
    child = std::make_unique<ChildProcess>(bin, args);
  } else {
    auto [host, port] = split_host_port(config.remote);
    int attempts = std::max(1, config.connect_attempts);
    for (int attempt = 1; !transport; ++attempt) {
      try {
        transport = tcp_connect(host, port, config.handshake_timeout_ms);
      } catch (const TransportError& e) {
        if (attempt >= attempts) {
          throw TransportError("giving up after " + std::to_string(attempt) +
                               " connect attempt(s): " + e.what());
        }
        ::usleep(100 * 1000);
      }
    }
  }

  Session session(std::move(transport), std::move(child), config.io_timeout_ms);
  session.set_buffer_size(config.buffer_size);

  session.send(rpc::Hello{rpc::kProtocolVersion});
  rpc::Message reply = [&] {
    try {
      return session.expect(config.handshake_timeout_ms);
    } catch (const TransportError& e) {
      if (dynamic_cast<const HandshakeTimeout*>(&e)) throw;
      throw HandshakeTimeout();
    }
  }();
  const auto* ack = std::get_if<rpc::HelloAck>(&reply);
  if (!ack) {
    if (const auto* error = std::get_if<rpc::Error>(&reply)) {
      throw WorkerError(error->code, error->text);
    }
    throw ProtocolError("expected HELLO_ACK, got " +
                        std::string(rpc::msg_type_name(rpc::type_of(reply))));
  }
  if (ack->board_name != board.name) throw BoardMismatch(board.name, ack->board_name);
  session.set_board_name(ack->board_name);
  session.set_buffer_size(std::min<size_t>(config.buffer_size, ack->buffer_size));
  return session;
}

namespace {

[[noreturn]] void rethrow_worker_error(const rpc::Error& error) {
  throw WorkerError(error.code, error.text);
}

}  // namespace

rpc::MemReport deploy_model(Session& session, const DeployableModel& model) {
  std::string serialized = serialize_deployable(model);
  std::span<const uint8_t> bytes(reinterpret_cast<const uint8_t*>(serialized.data()),
                                 serialized.size());
  for (auto& chunk : rpc::chunk_model_bytes(bytes, session.buffer_size())) {
    session.send(chunk);
  }
  session.send(rpc::LoadDone{static_cast<uint32_t>(bytes.size()), rpc::model_checksum(bytes)});
  session.send(rpc::MemQuery{});

  rpc::Message reply = session.expect();
  if (const auto* error = std::get_if<rpc::Error>(&reply)) rethrow_worker_error(*error);
  const auto* report = std::get_if<rpc::MemReport>(&reply);
  if (!report) {
    throw ProtocolError("expected MEM_REPORT, got " +
                        std::string(rpc::msg_type_name(rpc::type_of(reply))));
  }

  // The device's view of the footprint must agree with the host-side static
  // analysis of the same artifact.
  if (report->memory_bytes != static_cast<uint64_t>(model.plan.total_memory_bytes) ||
      report->storage_bytes != static_cast<uint64_t>(model.storage_bytes) ||
      report->per_kernel.size() != model.kernels.size()) {
    throw ProtocolError("device MEM_REPORT disagrees with host static analysis");
  }
  for (size_t i = 0; i < model.kernels.size(); ++i) {
    if (report->per_kernel[i].memory_bytes != static_cast<uint32_t>(model.kernels[i].memory_bytes) ||
        report->per_kernel[i].storage_bytes !=
            static_cast<uint32_t>(model.kernels[i].storage_bytes)) {
      throw ProtocolError("device MEM_REPORT disagrees with host static analysis (kernel " +
                          std::to_string(i) + ")");
    }
  }
  return *report;
}

namespace {

struct RunMeta {
  std::string run_id;
  std::string timestamp;
};

RunMeta make_run_meta() {
  RunMeta meta;
  uint64_t stamp = static_cast<uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(
          std::chrono::system_clock::now().time_since_epoch())
          .count());
  char id[32];
  std::snprintf(id, sizeof(id), "%016llx",
                static_cast<unsigned long long>(stamp ^ (static_cast<uint64_t>(::getpid()) << 32)));
  meta.run_id = id;

  std::time_t seconds = static_cast<std::time_t>(stamp / 1000000000ULL);
  std::tm utc{};
  gmtime_r(&seconds, &utc);
  char ts[32];
  std::strftime(ts, sizeof(ts), "%Y-%m-%dT%H:%M:%SZ", &utc);
  meta.timestamp = ts;
  return meta;
}

std::string mode_string(const RunConfig& config) {
  return std::string(config.granularity == Granularity::kPerModel ? "per-model" : "per-op") + "/" +
         timing_mode_name(config.timing_mode);
}

DeployableModel compile_for(const RunConfig& config, const BoardSpec& board) {
  ModelGraph graph = load_model_file(config.model_path);
  CompileConstants constants =
      config.config_path.empty() ? config.constants : load_compile_constants(config.config_path);
  return compile_artifact(graph, board, constants);
}

}  // namespace

PerModelOutcome cmd_per_model(const RunConfig& config) {
  BoardRegistry registry = load_registry(config);
  const BoardSpec& board = registry.lookup(config.board_name);
  if (config.trials < 1) throw ValidationError("trials must be >= 1");

  // Step 1 runs host-side on the IR: memory and storage from static analysis.
  PerModelOutcome outcome{.report = {}, .rendered = {}, .records = {}, .model = compile_for(config, board)};

  // Steps 2-5: deploy, run seeded trials on the device, stream the records
  // back, then summarize.
  Session session = connect_target(config, board);
  deploy_model(session, outcome.model);

  session.send(rpc::RunTrials{config.trials, config.seed});
  while (true) {
    rpc::Message reply = session.expect();
    if (const auto* error = std::get_if<rpc::Error>(&reply)) rethrow_worker_error(*error);
    if (const auto* record = std::get_if<rpc::TrialRecord>(&reply)) {
      outcome.records.push_back(*record);
      continue;
    }
    if (const auto* done = std::get_if<rpc::TrialsDone>(&reply)) {
      if (done->count != outcome.records.size()) {
        throw ProtocolError("TRIALS_DONE count " + std::to_string(done->count) +
                            " != received records " + std::to_string(outcome.records.size()));
      }
      break;
    }
    throw ProtocolError("unexpected message during trials: " +
                        std::string(rpc::msg_type_name(rpc::type_of(reply))));
  }
  session.bye();

  outcome.report = summarize_trials(outcome.records, outcome.model.plan.total_memory_bytes,
                                    outcome.model.storage_bytes);
  outcome.rendered = render_table(outcome.report);
  return outcome;
}

PerOpOutcome cmd_per_operator(const RunConfig& config) {
  BoardRegistry registry = load_registry(config);
  const BoardSpec& board = registry.lookup(config.board_name);

  // Step 1: per-kernel memory/storage from the compile stage.
  PerOpOutcome outcome{.report = {}, .rendered = {}, .results = {}, .model = compile_for(config, board)};

  // Steps 2-4: deploy, then drive one BENCH_OP request per kernel.
  Session session = connect_target(config, board);
  deploy_model(session, outcome.model);

  for (size_t i = 0; i < outcome.model.kernels.size(); ++i) {
    session.send(rpc::BenchOp{static_cast<uint16_t>(i), config.repeats});
    rpc::Message reply = session.expect();
    if (const auto* error = std::get_if<rpc::Error>(&reply)) rethrow_worker_error(*error);
    const auto* result = std::get_if<rpc::OpResult>(&reply);
    if (!result) {
      throw ProtocolError("expected OP_RESULT, got " +
                          std::string(rpc::msg_type_name(rpc::type_of(reply))));
    }
    if (result->kernel_index != i) {
      throw ProtocolError("OP_RESULT for kernel " + std::to_string(result->kernel_index) +
                          " while benchmarking kernel " + std::to_string(i));
    }
    outcome.results.push_back(*result);
  }
  session.bye();

  outcome.report = summarize_ops(outcome.results, outcome.model.kernels);
  outcome.rendered = render_table(outcome.report);
  return outcome;
}

namespace {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const CapacityExceeded*>(&e)) return kExitCapacity;
  if (const auto* worker = dynamic_cast<const WorkerError*>(&e)) {
    return worker->code() == static_cast<uint16_t>(rpc::ErrorCode::kCapacity) ? kExitCapacity
                                                                              : kExitProtocol;
  }
  if (dynamic_cast<const TransportError*>(&e)) return kExitTransport;
  if (dynamic_cast<const BoardMismatch*>(&e) || dynamic_cast<const ProtocolError*>(&e) ||
      dynamic_cast<const MissingKernelResult*>(&e) || dynamic_cast<const rpc::PayloadTooLarge*>(&e) ||
      dynamic_cast<const rpc::BufferTooSmall*>(&e)) {
    return kExitProtocol;
  }
  if (dynamic_cast<const IoError*>(&e)) return kExitTransport;
  // ParseError, ValidationError, ShapeMismatch, UnknownBoard, EmptyRecords...
  return kExitValidation;
}

}  // namespace

int run_eval(const RunConfig& config, std::ostream& out, std::ostream& err) {
  try {
    RunMeta meta = make_run_meta();
    std::vector<LogRow> rows;
    std::string rendered;
    std::string report_json;

    if (config.granularity == Granularity::kPerModel) {
      PerModelOutcome outcome = cmd_per_model(config);
      rendered = outcome.rendered;
      report_json = report_to_json(outcome.report);
      for (const auto& record : outcome.records) {
        rows.push_back({meta.run_id, config.board_name, outcome.model.graph.name,
                        mode_string(config), std::to_string(record.trial_index),
                        record.latency_ns, config.seed, meta.timestamp});
      }
    } else {
      PerOpOutcome outcome = cmd_per_operator(config);
      rendered = outcome.rendered;
      report_json = report_to_json(outcome.report);
      for (size_t i = 0; i < outcome.results.size(); ++i) {
        rows.push_back({meta.run_id, config.board_name, outcome.model.graph.name,
                        mode_string(config), outcome.model.kernels[i].name,
                        outcome.results[i].mean_ns, config.seed, meta.timestamp});
      }
    }

    out << rendered;
    if (!config.log_path.empty()) export_log(config.log_path, rows);
    if (!config.report_json_path.empty()) {
      std::ofstream json_out(config.report_json_path);
      if (!json_out) throw IoError("cannot write report to '" + config.report_json_path + "'");
      json_out << report_json << "\n";
    }
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace utoe
