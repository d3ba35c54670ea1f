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
#include "utoe/worker.hpp"

int main(int argc, char** argv) {
  CLI::App app{"utoe-worker - simulated measurement worker"};

  std::string board_name;
  std::string mode = "wallclock";
  std::string listen;
  std::string boards_path;
  bool stdio = false;
  size_t buffer_size = utoe::env_u64("UTOE_RPC_BUFFER_SIZE", utoe::rpc::kDefaultBufferSize);

  app.add_option("--board", board_name, "board this worker simulates")->required();
  app.add_option("--mode", mode, "timing source: wallclock|costmodel")
      ->check(CLI::IsMember({"wallclock", "costmodel"}));
  app.add_option("--listen", listen, "serve TCP sessions on host:port");
  app.add_flag("--stdio", stdio, "serve a single session on stdin/stdout");
  app.add_option("--boards", boards_path, "boards file overriding the built-in registry");
  app.add_option("--buffer", buffer_size, "RPC buffer size in bytes");

  CLI11_PARSE(app, argc, argv);

  if (stdio == !listen.empty()) {
    std::cerr << "error: pick exactly one of --stdio or --listen host:port\n";
    return utoe::kExitUsage;
  }

  try {
    utoe::BoardRegistry registry = boards_path.empty() ? utoe::BoardRegistry::builtin()
                                                       : utoe::BoardRegistry::from_file(boards_path);
    utoe::WorkerConfig config;
    config.board = registry.lookup(board_name);
    config.timing_mode = utoe::timing_mode_from_name(mode);
    config.buffer_size = buffer_size;

    if (stdio) {
      utoe::DeviceWorker worker(config);
      auto transport = utoe::stdio_transport();
      worker.serve(*transport);
      return 0;
    }

    auto colon = listen.rfind(':');
    if (colon == std::string::npos) {
      std::cerr << "error: --listen expects host:port\n";
      return utoe::kExitUsage;
    }
    utoe::TcpListener listener(listen.substr(0, colon),
                               static_cast<uint16_t>(std::stoi(listen.substr(colon + 1))));
    std::cerr << "utoe-worker: " << board_name << " (" << mode << ") listening on "
              << listen.substr(0, colon) << ":" << listener.port() << "\n";
    for (;;) {
      auto transport = listener.accept();
      utoe::DeviceWorker worker(config);
      try {
        worker.serve(*transport);
      } catch (const utoe::TransportError& e) {
        std::cerr << "utoe-worker: session ended: " << e.what() << "\n";
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return utoe::kExitValidation;
  }
}
