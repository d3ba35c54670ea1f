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
#ifndef UTOE_RPC_HPP_
#define UTOE_RPC_HPP_

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace utoe::rpc {

// Frame layout, all multi-byte header fields little-endian except the CRC:
//   0x55 0x54 | version | msg_type | seq lo hi | len lo hi | payload | crc hi lo
// The CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF) covers version through
// payload and travels big-endian.
inline constexpr uint8_t kMagic0 = 0x55;
inline constexpr uint8_t kMagic1 = 0x54;
inline constexpr uint8_t kProtocolVersion = 1;
inline constexpr size_t kFrameOverhead = 10;
inline constexpr size_t kMinBufferSize = 32;
inline constexpr size_t kDefaultBufferSize = 512;  // UTOE_RPC_BUFFER_SIZE default

uint16_t crc16_ccitt_false(std::span<const uint8_t> data);

// Checksum used by LOAD_DONE over the fully reassembled model bytes (FNV-1a).
uint32_t model_checksum(std::span<const uint8_t> data);

enum class MsgType : uint8_t {
  kHello = 1,
  kHelloAck = 2,
  kLoadModelChunk = 3,
  kLoadDone = 4,
  kMemQuery = 5,
  kMemReport = 6,
  kRunTrials = 7,
  kTrialRecord = 8,
  kTrialsDone = 9,
  kBenchOp = 10,
  kOpResult = 11,
  kError = 12,
  kBye = 13,
};

struct Hello {
  uint8_t proto_version = kProtocolVersion;
  bool operator==(const Hello&) const = default;
};

struct HelloAck {
  uint32_t buffer_size = 0;
  std::string board_name;
  bool operator==(const HelloAck&) const = default;
};

struct LoadModelChunk {
  uint32_t offset = 0;
  std::vector<uint8_t> bytes;
  bool operator==(const LoadModelChunk&) const = default;
};

struct LoadDone {
  uint32_t total_len = 0;
  uint32_t checksum = 0;
  bool operator==(const LoadDone&) const = default;
};

struct MemQuery {
  bool operator==(const MemQuery&) const = default;
};

struct KernelFootprint {
  uint32_t memory_bytes = 0;
  uint32_t storage_bytes = 0;
  bool operator==(const KernelFootprint&) const = default;
};

struct MemReport {
  uint64_t memory_bytes = 0;
  uint64_t storage_bytes = 0;
  std::vector<KernelFootprint> per_kernel;
  bool operator==(const MemReport&) const = default;
};

struct RunTrials {
  uint32_t num_trials = 0;
  uint64_t seed = 0;
  bool operator==(const RunTrials&) const = default;
};

struct TrialRecord {
  uint32_t trial_index = 0;
  uint64_t latency_ns = 0;
  bool operator==(const TrialRecord&) const = default;
};

struct TrialsDone {
  uint32_t count = 0;
  bool operator==(const TrialsDone&) const = default;
};

struct BenchOp {
  uint16_t kernel_index = 0;
  uint32_t repeats = 0;
  bool operator==(const BenchOp&) const = default;
};

struct OpResult {
  uint16_t kernel_index = 0;
  uint64_t mean_ns = 0;
  uint64_t min_ns = 0;
  uint64_t max_ns = 0;
  bool operator==(const OpResult&) const = default;
};

enum class ErrorCode : uint16_t {
  kNoModel = 1,
  kBadArg = 2,
  kBadIndex = 3,
  kCapacity = 4,
  kMalformed = 5,
  kInternal = 6,
};

struct Error {
  uint16_t code = 0;
  std::string text;
  bool operator==(const Error&) const = default;
};

struct Bye {
  bool operator==(const Bye&) const = default;
};

using Message = std::variant<Hello, HelloAck, LoadModelChunk, LoadDone, MemQuery, MemReport,
                             RunTrials, TrialRecord, TrialsDone, BenchOp, OpResult, Error, Bye>;

MsgType type_of(const Message& message);
const char* msg_type_name(MsgType type);

class PayloadTooLarge : public std::runtime_error {
 public:
  PayloadTooLarge(size_t actual, size_t limit);
  size_t actual() const { return actual_; }
  size_t limit() const { return limit_; }

 private:
  size_t actual_;
  size_t limit_;
};

class BufferTooSmall : public std::runtime_error {
 public:
  explicit BufferTooSmall(size_t size);
};

std::vector<uint8_t> encode_payload(const Message& message);

// One message -> one frame. Throws PayloadTooLarge when the frame would not
// fit in buffer_size bytes.
std::vector<uint8_t> encode_frame(const Message& message, uint16_t seq,
                                  size_t buffer_size = kDefaultBufferSize);

struct DecodedFrame {
  Message message;
  uint16_t seq = 0;
  bool operator==(const DecodedFrame&) const = default;
};

enum class SignalKind { kBadMagic, kCrcError, kUnknownType, kBadVersion };

struct DecodeSignal {
  SignalKind kind;
  size_t at_offset = 0;  // offset into the fed buffer where the issue started
  bool operator==(const DecodeSignal&) const = default;
};

using DecodeEvent = std::variant<DecodedFrame, DecodeSignal>;

enum class StreamStatus { kClean, kNeedMore };

struct DecodeResult {
  std::vector<DecodeEvent> events;
  size_t consumed = 0;  // bytes fully processed; a trailing partial frame is left
  StreamStatus status = StreamStatus::kClean;
};

// Tolerates arbitrary bytes: skips garbage to the next magic (one BadMagic
// signal per run), drops CRC-failed frames and keeps going, and never throws.
DecodeResult decode_stream(std::span<const uint8_t> buffer);

// Incremental wrapper that buffers a trailing partial frame between feeds.
class StreamDecoder {
 public:
  std::vector<DecodeEvent> feed(std::span<const uint8_t> bytes);
  // Flushes whatever is buffered at stream end (a truncated frame becomes a
  // BadMagic signal for its leading byte run).
  std::vector<DecodeEvent> finish();
  size_t buffered() const { return pending_.size(); }

 private:
  std::vector<uint8_t> pending_;
};

// Encodes a record list into consecutive frames (seq starting at first_seq),
// each at most buffer_size bytes. Throws BufferTooSmall if the buffer cannot
// carry every record.
std::vector<std::vector<uint8_t>> chunk_records(const std::vector<Message>& records,
                                                size_t buffer_size, uint16_t first_seq = 0);

// Splits a serialized model into LOAD_MODEL_CHUNK messages sized for
// buffer_size frames.
std::vector<Message> chunk_model_bytes(std::span<const uint8_t> bytes, size_t buffer_size);

}  // namespace utoe::rpc

#endif  // UTOE_RPC_HPP_
