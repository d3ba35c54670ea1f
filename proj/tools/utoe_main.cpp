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
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "utoe/orchestrator.hpp"

int main(int argc, char** argv) {
  CLI::App app{"utoe - inference cost evaluation for simulated low-power boards"};
  app.require_subcommand(1);

  utoe::RunConfig config;
  std::string mode = "wallclock";
  bool per_op = false;

  CLI::App* eval = app.add_subcommand("eval", "evaluate a model on a target board");
  eval->add_option("--model", config.model_path, "model file (JSON)")->required();
  eval->add_option("--board", config.board_name, "target board name")->required();
  eval->add_flag("--per-op", per_op, "per-operator granularity (default: per-model)");
  eval->add_option("--trials", config.trials, "number of inference trials")
      ->envname("UTOE_TRIAL_NUM");
  eval->add_option("--seed", config.seed, "random input seed")->envname("UTOE_RANDOM_SEED");
  eval->add_option("--mode", mode, "timing source: wallclock|costmodel")
      ->check(CLI::IsMember({"wallclock", "costmodel"}));
  eval->add_option("--remote", config.remote, "connect to a worker at host:port instead of "
                                              "spawning one locally");
  eval->add_option("--log", config.log_path, "append raw metric rows to this CSV file");
  eval->add_option("--boards", config.boards_path, "boards file overriding the built-in registry");
  eval->add_option("--buffer", config.buffer_size, "RPC buffer size in bytes")
      ->envname("UTOE_RPC_BUFFER_SIZE");
  eval->add_option("--worker-bin", config.worker_bin,
                   "worker executable for local runs (default: utoe-worker next to this binary)");
  eval->add_option("--timeout", config.handshake_timeout_ms, "handshake timeout in ms");
  eval->add_option("--config", config.config_path,
                   "JSON config overriding code_bytes_per_kernel, runtime_code_bytes, "
                   "runtime_overhead_bytes");
  eval->add_option("--report-json", config.report_json_path,
                   "also write the report as JSON to this path");

  CLI11_PARSE(app, argc, argv);

  try {
    config.granularity = per_op ? utoe::Granularity::kPerOp : utoe::Granularity::kPerModel;
    config.timing_mode = utoe::timing_mode_from_name(mode);
    if (config.buffer_size < utoe::rpc::kMinBufferSize) {
      throw utoe::rpc::BufferTooSmall(config.buffer_size);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return utoe::kExitUsage;
  }

  return utoe::run_eval(config, std::cout, std::cerr);
}
