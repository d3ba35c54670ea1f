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
#include "utoe/transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace utoe {

namespace {

[[noreturn]] void raise_errno(const std::string& what) {
  throw TransportError(what + ": " + std::strerror(errno));
}

}  // namespace

FdTransport::FdTransport(int read_fd, int write_fd) : read_fd_(read_fd), write_fd_(write_fd) {
  // A peer hangup must surface as an error on write, not kill the process.
  signal(SIGPIPE, SIG_IGN);
}

FdTransport::~FdTransport() { close(); }

ssize_t FdTransport::read_some(uint8_t* buffer, size_t capacity, int timeout_ms) {
  if (read_fd_ < 0) return 0;
  if (timeout_ms >= 0) {
    pollfd pfd{read_fd_, POLLIN, 0};
    int rc = ::poll(&pfd, 1, timeout_ms);
    if (rc == 0) return -1;  // timeout
    if (rc < 0) {
      if (errno == EINTR) return -1;
      raise_errno("poll");
    }
  }
  for (;;) {
    ssize_t n = ::read(read_fd_, buffer, capacity);
    if (n >= 0) return n;
    if (errno == EINTR) continue;
    if (errno == ECONNRESET) return 0;
    raise_errno("read");
  }
}

void FdTransport::write_all(std::span<const uint8_t> bytes) {
  size_t sent = 0;
  while (sent < bytes.size()) {
    ssize_t n = ::write(write_fd_, bytes.data() + sent, bytes.size() - sent);
    if (n < 0) {
      if (errno == EINTR) continue;
      raise_errno("write");
    }
    sent += static_cast<size_t>(n);
  }
}

void FdTransport::close() {
  if (read_fd_ >= 0) {
    ::close(read_fd_);
    if (write_fd_ == read_fd_) write_fd_ = -1;
    read_fd_ = -1;
  }
  if (write_fd_ >= 0) {
    ::close(write_fd_);
    write_fd_ = -1;
  }
}

std::unique_ptr<Transport> stdio_transport() {
  return std::make_unique<FdTransport>(STDIN_FILENO, STDOUT_FILENO);
}

std::unique_ptr<Transport> tcp_connect(const std::string& host, uint16_t port, int timeout_ms) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* result = nullptr;
  int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &result);
  if (rc != 0) {
    throw TransportError("cannot resolve '" + host + "': " + gai_strerror(rc));
  }

  int fd = -1;
  std::string error = "connection failed";
  for (addrinfo* ai = result; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_NONBLOCK, ai->ai_protocol);
    if (fd < 0) continue;
    rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
    if (rc < 0 && errno == EINPROGRESS) {
      pollfd pfd{fd, POLLOUT, 0};
      rc = ::poll(&pfd, 1, timeout_ms);
      if (rc > 0) {
        int soerr = 0;
        socklen_t len = sizeof(soerr);
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &soerr, &len);
        rc = soerr == 0 ? 0 : -1;
        if (soerr != 0) error = std::string("connect: ") + std::strerror(soerr);
      } else {
        rc = -1;
        error = "connect timed out";
      }
    } else if (rc < 0) {
      error = std::string("connect: ") + std::strerror(errno);
    }
    if (rc == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(result);
  if (fd < 0) throw TransportError(error + " (" + host + ":" + std::to_string(port) + ")");

  int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, flags & ~O_NONBLOCK);
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return std::make_unique<FdTransport>(fd, fd);
}

TcpListener::TcpListener(const std::string& host, uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) raise_errno("socket");
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (host.empty() || host == "0.0.0.0") {
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
  } else if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw TransportError("invalid listen address '" + host + "'");
  }
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    int e = errno;
    ::close(fd_);
    errno = e;
    raise_errno("bind " + host + ":" + std::to_string(port));
  }
  if (::listen(fd_, 4) < 0) raise_errno("listen");
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<Transport> TcpListener::accept() {
  int client = ::accept(fd_, nullptr, nullptr);
  if (client < 0) raise_errno("accept");
  int one = 1;
  ::setsockopt(client, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return std::make_unique<FdTransport>(client, client);
}

ChildProcess::ChildProcess(const std::string& executable, const std::vector<std::string>& args) {
  int to_child[2];   // parent writes -> child stdin
  int from_child[2]; // child stdout -> parent reads
  if (::pipe(to_child) < 0 || ::pipe(from_child) < 0) raise_errno("pipe");

  pid_ = ::fork();
  if (pid_ < 0) raise_errno("fork");
  if (pid_ == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::close(to_child[0]);
    ::close(to_child[1]);
    ::close(from_child[0]);
    ::close(from_child[1]);
    std::vector<char*> argv;
    argv.push_back(const_cast<char*>(executable.c_str()));
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    ::execvp(executable.c_str(), argv.data());
    ::perror("execvp");
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  transport_ = std::make_unique<FdTransport>(from_child[0], to_child[1]);
}

ChildProcess::~ChildProcess() { terminate(); }

void ChildProcess::terminate() {
  if (pid_ <= 0) return;
  if (transport_) transport_->close();
  int status = 0;
  // Give the worker a moment to exit on its own after the channel closed.
  for (int i = 0; i < 50; ++i) {
    pid_t done = ::waitpid(pid_, &status, WNOHANG);
    if (done == pid_) {
      pid_ = -1;
      return;
    }
    ::usleep(10 * 1000);
  }
  ::kill(pid_, SIGKILL);
  ::waitpid(pid_, &status, 0);
  pid_ = -1;
}

}  // namespace utoe
