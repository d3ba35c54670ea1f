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
#ifndef UTOE_TRANSPORT_HPP_
#define UTOE_TRANSPORT_HPP_

#include <sys/types.h>

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace utoe {

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Ordered byte stream between host and worker; serial-like semantics.
class Transport {
 public:
  virtual ~Transport() = default;

  // Blocks until at least one byte arrives, EOF (returns 0), or timeout_ms
  // elapses (returns -1). timeout_ms < 0 blocks indefinitely.
  virtual ssize_t read_some(uint8_t* buffer, size_t capacity, int timeout_ms = -1) = 0;
  virtual void write_all(std::span<const uint8_t> bytes) = 0;
  virtual void close() = 0;
};

// Transport over a pair of file descriptors (pipe ends or a socket).
class FdTransport : public Transport {
 public:
  FdTransport(int read_fd, int write_fd);
  ~FdTransport() override;

  FdTransport(const FdTransport&) = delete;
  FdTransport& operator=(const FdTransport&) = delete;

  ssize_t read_some(uint8_t* buffer, size_t capacity, int timeout_ms = -1) override;
  void write_all(std::span<const uint8_t> bytes) override;
  void close() override;

 private:
  int read_fd_;
  int write_fd_;
};

std::unique_ptr<Transport> stdio_transport();

// Blocking TCP client connection ("serial over TCP").
std::unique_ptr<Transport> tcp_connect(const std::string& host, uint16_t port,
                                       int timeout_ms = 5000);

class TcpListener {
 public:
  // port 0 picks an ephemeral port; see port().
  explicit TcpListener(const std::string& host, uint16_t port);
  ~TcpListener();

  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  uint16_t port() const { return port_; }
  std::unique_ptr<Transport> accept();

 private:
  int fd_ = -1;
  uint16_t port_ = 0;
};

// Worker process spawned with its RPC channel on stdin/stdout.
class ChildProcess {
 public:
  ChildProcess(const std::string& executable, const std::vector<std::string>& args);
  ~ChildProcess();

  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;

  Transport& transport() { return *transport_; }
  void terminate();

 private:
  pid_t pid_ = -1;
  std::unique_ptr<FdTransport> transport_;
};

}  // namespace utoe

#endif  // UTOE_TRANSPORT_HPP_
