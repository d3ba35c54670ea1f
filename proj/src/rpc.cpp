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
#include "utoe/rpc.hpp"

#include <algorithm>
#include <cstring>

namespace utoe::rpc {

uint16_t crc16_ccitt_false(std::span<const uint8_t> data) {
  uint16_t crc = 0xFFFF;
  for (uint8_t byte : data) {
    crc ^= static_cast<uint16_t>(byte) << 8;
    for (int bit = 0; bit < 8; ++bit) {
      if (crc & 0x8000) {
        crc = static_cast<uint16_t>((crc << 1) ^ 0x1021);
      } else {
        crc = static_cast<uint16_t>(crc << 1);
      }
    }
  }
  return crc;
}

uint32_t model_checksum(std::span<const uint8_t> data) {
  uint32_t hash = 2166136261u;
  for (uint8_t byte : data) {
    hash ^= byte;
    hash *= 16777619u;
  }
  return hash;
}

PayloadTooLarge::PayloadTooLarge(size_t actual, size_t limit)
    : std::runtime_error("payload of " + std::to_string(actual) +
                         " bytes exceeds frame limit of " + std::to_string(limit)),
      actual_(actual),
      limit_(limit) {}

BufferTooSmall::BufferTooSmall(size_t size)
    : std::runtime_error("RPC buffer of " + std::to_string(size) + " bytes is below the " +
                         std::to_string(kMinBufferSize) + "-byte minimum") {}

MsgType type_of(const Message& message) {
  struct Visitor {
    MsgType operator()(const Hello&) { return MsgType::kHello; }
    MsgType operator()(const HelloAck&) { return MsgType::kHelloAck; }
    MsgType operator()(const LoadModelChunk&) { return MsgType::kLoadModelChunk; }
    MsgType operator()(const LoadDone&) { return MsgType::kLoadDone; }
    MsgType operator()(const MemQuery&) { return MsgType::kMemQuery; }
    MsgType operator()(const MemReport&) { return MsgType::kMemReport; }
    MsgType operator()(const RunTrials&) { return MsgType::kRunTrials; }
    MsgType operator()(const TrialRecord&) { return MsgType::kTrialRecord; }
    MsgType operator()(const TrialsDone&) { return MsgType::kTrialsDone; }
    MsgType operator()(const BenchOp&) { return MsgType::kBenchOp; }
    MsgType operator()(const OpResult&) { return MsgType::kOpResult; }
    MsgType operator()(const Error&) { return MsgType::kError; }
    MsgType operator()(const Bye&) { return MsgType::kBye; }
  };
  return std::visit(Visitor{}, message);
}

const char* msg_type_name(MsgType type) {
  switch (type) {
    case MsgType::kHello: return "HELLO";
    case MsgType::kHelloAck: return "HELLO_ACK";
    case MsgType::kLoadModelChunk: return "LOAD_MODEL_CHUNK";
    case MsgType::kLoadDone: return "LOAD_DONE";
    case MsgType::kMemQuery: return "MEM_QUERY";
    case MsgType::kMemReport: return "MEM_REPORT";
    case MsgType::kRunTrials: return "RUN_TRIALS";
    case MsgType::kTrialRecord: return "TRIAL_RECORD";
    case MsgType::kTrialsDone: return "TRIALS_DONE";
    case MsgType::kBenchOp: return "BENCH_OP";
    case MsgType::kOpResult: return "OP_RESULT";
    case MsgType::kError: return "ERROR";
    case MsgType::kBye: return "BYE";
  }
  return "?";
}

namespace {

class Writer {
 public:
  void u8(uint8_t v) { out_.push_back(v); }
  void u16(uint16_t v) {
    out_.push_back(static_cast<uint8_t>(v & 0xff));
    out_.push_back(static_cast<uint8_t>(v >> 8));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void bytes(std::span<const uint8_t> data) { out_.insert(out_.end(), data.begin(), data.end()); }
  void str(const std::string& s) {
    out_.insert(out_.end(), s.begin(), s.end());
  }
  std::vector<uint8_t> take() { return std::move(out_); }

 private:
  std::vector<uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> data) : data_(data) {}
  bool ok() const { return ok_; }
  size_t remaining() const { return data_.size() - pos_; }
  uint8_t u8() { return take(1) ? data_[pos_ - 1] : 0; }
  uint16_t u16() {
    if (!take(2)) return 0;
    return static_cast<uint16_t>(data_[pos_ - 2] | (data_[pos_ - 1] << 8));
  }
  uint32_t u32() {
    if (!take(4)) return 0;
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data_[pos_ - 4 + i]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    if (!take(8)) return 0;
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(data_[pos_ - 8 + i]) << (8 * i);
    return v;
  }
  std::vector<uint8_t> rest() {
    std::vector<uint8_t> out(data_.begin() + pos_, data_.end());
    pos_ = data_.size();
    return out;
  }
  std::string rest_str() {
    std::string out(data_.begin() + pos_, data_.end());
    pos_ = data_.size();
    return out;
  }

 private:
  bool take(size_t n) {
    if (pos_ + n > data_.size()) {
      ok_ = false;
      return false;
    }
    pos_ += n;
    return true;
  }
  std::span<const uint8_t> data_;
  size_t pos_ = 0;
  bool ok_ = true;
};

}  // namespace

std::vector<uint8_t> encode_payload(const Message& message) {
  Writer w;
  struct Visitor {
    Writer& w;
    void operator()(const Hello& m) { w.u8(m.proto_version); }
    void operator()(const HelloAck& m) {
      w.u32(m.buffer_size);
      w.str(m.board_name);
    }
    void operator()(const LoadModelChunk& m) {
      w.u32(m.offset);
      w.bytes(m.bytes);
    }
    void operator()(const LoadDone& m) {
      w.u32(m.total_len);
      w.u32(m.checksum);
    }
    void operator()(const MemQuery&) {}
    void operator()(const MemReport& m) {
      w.u64(m.memory_bytes);
      w.u64(m.storage_bytes);
      w.u16(static_cast<uint16_t>(m.per_kernel.size()));
      for (const auto& k : m.per_kernel) {
        w.u32(k.memory_bytes);
        w.u32(k.storage_bytes);
      }
    }
    void operator()(const RunTrials& m) {
      w.u32(m.num_trials);
      w.u64(m.seed);
    }
    void operator()(const TrialRecord& m) {
      w.u32(m.trial_index);
      w.u64(m.latency_ns);
    }
    void operator()(const TrialsDone& m) { w.u32(m.count); }
    void operator()(const BenchOp& m) {
      w.u16(m.kernel_index);
      w.u32(m.repeats);
    }
    void operator()(const OpResult& m) {
      w.u16(m.kernel_index);
      w.u64(m.mean_ns);
      w.u64(m.min_ns);
      w.u64(m.max_ns);
    }
    void operator()(const Error& m) {
      w.u16(m.code);
      w.str(m.text);
    }
    void operator()(const Bye&) {}
  };
  std::visit(Visitor{w}, message);
  return w.take();
}

namespace {

// Returns false when the payload bytes cannot be a well-formed message of the
// given type (short fixed fields, truncated list).
bool decode_payload(MsgType type, std::span<const uint8_t> payload, Message& out) {
  Reader r(payload);
  switch (type) {
    case MsgType::kHello: {
      Hello m;
      m.proto_version = r.u8();
      if (!r.ok() || r.remaining() != 0) return false;
      out = m;
      return true;
    }
    case MsgType::kHelloAck: {
      HelloAck m;
      m.buffer_size = r.u32();
      if (!r.ok()) return false;
      m.board_name = r.rest_str();
      out = m;
      return true;
    }
    case MsgType::kLoadModelChunk: {
      LoadModelChunk m;
      m.offset = r.u32();
      if (!r.ok()) return false;
      m.bytes = r.rest();
      out = m;
      return true;
    }
    case MsgType::kLoadDone: {
      LoadDone m;
      m.total_len = r.u32();
      m.checksum = r.u32();
      if (!r.ok() || r.remaining() != 0) return false;
      out = m;
      return true;
    }
    case MsgType::kMemQuery:
      if (!payload.empty()) return false;
      out = MemQuery{};
      return true;
    case MsgType::kMemReport: {
      MemReport m;
      m.memory_bytes = r.u64();
      m.storage_bytes = r.u64();
      uint16_t count = r.u16();
      if (!r.ok()) return false;
      for (uint16_t i = 0; i < count; ++i) {
        KernelFootprint k;
        k.memory_bytes = r.u32();
        k.storage_bytes = r.u32();
        if (!r.ok()) return false;
        m.per_kernel.push_back(k);
      }
      if (r.remaining() != 0) return false;
      out = m;
      return true;
    }
    case MsgType::kRunTrials: {
      RunTrials m;
      m.num_trials = r.u32();
      m.seed = r.u64();
      if (!r.ok() || r.remaining() != 0) return false;
      out = m;
      return true;
    }
    case MsgType::kTrialRecord: {
      TrialRecord m;
      m.trial_index = r.u32();
      m.latency_ns = r.u64();
      if (!r.ok() || r.remaining() != 0) return false;
      out = m;
      return true;
    }
    case MsgType::kTrialsDone: {
      TrialsDone m;
      m.count = r.u32();
      if (!r.ok() || r.remaining() != 0) return false;
      out = m;
      return true;
    }
    case MsgType::kBenchOp: {
      BenchOp m;
      m.kernel_index = r.u16();
      m.repeats = r.u32();
      if (!r.ok() || r.remaining() != 0) return false;
      out = m;
      return true;
    }
    case MsgType::kOpResult: {
      OpResult m;
      m.kernel_index = r.u16();
      m.mean_ns = r.u64();
      m.min_ns = r.u64();
      m.max_ns = r.u64();
      if (!r.ok() || r.remaining() != 0) return false;
      out = m;
      return true;
    }
    case MsgType::kError: {
      Error m;
      m.code = r.u16();
      if (!r.ok()) return false;
      m.text = r.rest_str();
      out = m;
      return true;
    }
    case MsgType::kBye:
      if (!payload.empty()) return false;
      out = Bye{};
      return true;
  }
  return false;
}

}  // namespace

std::vector<uint8_t> encode_frame(const Message& message, uint16_t seq, size_t buffer_size) {
  auto payload = encode_payload(message);
  const size_t limit = buffer_size > kFrameOverhead ? buffer_size - kFrameOverhead : 0;
  if (payload.size() > limit || payload.size() > 0xFFFF) {
    throw PayloadTooLarge(payload.size(), std::min<size_t>(limit, 0xFFFF));
  }
  std::vector<uint8_t> frame;
  frame.reserve(payload.size() + kFrameOverhead);
  frame.push_back(kMagic0);
  frame.push_back(kMagic1);
  frame.push_back(kProtocolVersion);
  frame.push_back(static_cast<uint8_t>(type_of(message)));
  frame.push_back(static_cast<uint8_t>(seq & 0xff));
  frame.push_back(static_cast<uint8_t>(seq >> 8));
  frame.push_back(static_cast<uint8_t>(payload.size() & 0xff));
  frame.push_back(static_cast<uint8_t>(payload.size() >> 8));
  frame.insert(frame.end(), payload.begin(), payload.end());
  uint16_t crc = crc16_ccitt_false(std::span(frame).subspan(2));
  frame.push_back(static_cast<uint8_t>(crc >> 8));  // big-endian on the wire
  frame.push_back(static_cast<uint8_t>(crc & 0xff));
  return frame;
}

DecodeResult decode_stream(std::span<const uint8_t> buffer) {
  DecodeResult result;
  size_t pos = 0;
  const size_t n = buffer.size();
  while (pos < n) {
    // Hunt for the magic pair.
    size_t start = pos;
    while (pos < n && !(buffer[pos] == kMagic0 && pos + 1 < n && buffer[pos + 1] == kMagic1)) {
      // A lone 0x55 at the very end may be the first half of a magic pair.
      if (buffer[pos] == kMagic0 && pos + 1 == n) break;
      ++pos;
    }
    if (pos > start) {
      result.events.push_back(DecodeSignal{SignalKind::kBadMagic, start});
    }
    if (pos >= n) break;
    if (pos + 1 == n && buffer[pos] == kMagic0) {
      // Possible split magic; wait for more bytes.
      result.consumed = pos;
      result.status = StreamStatus::kNeedMore;
      return result;
    }

    if (pos + 8 > n) {  // header incomplete
      result.consumed = pos;
      result.status = StreamStatus::kNeedMore;
      return result;
    }
    const uint16_t payload_len = static_cast<uint16_t>(buffer[pos + 6] | (buffer[pos + 7] << 8));
    const size_t frame_len = kFrameOverhead + payload_len;
    if (pos + frame_len > n) {
      result.consumed = pos;
      result.status = StreamStatus::kNeedMore;
      return result;
    }

    auto body = buffer.subspan(pos + 2, 6 + payload_len);
    const uint16_t wire_crc = static_cast<uint16_t>((buffer[pos + frame_len - 2] << 8) |
                                                    buffer[pos + frame_len - 1]);
    if (crc16_ccitt_false(body) != wire_crc) {
      result.events.push_back(DecodeSignal{SignalKind::kCrcError, pos});
      pos += frame_len;  // discard the framed region
      continue;
    }
    const uint8_t version = buffer[pos + 2];
    if (version != kProtocolVersion) {
      result.events.push_back(DecodeSignal{SignalKind::kBadVersion, pos});
      pos += frame_len;
      continue;
    }
    const uint8_t raw_type = buffer[pos + 3];
    const uint16_t seq = static_cast<uint16_t>(buffer[pos + 4] | (buffer[pos + 5] << 8));
    Message message;
    if (raw_type < 1 || raw_type > static_cast<uint8_t>(MsgType::kBye) ||
        !decode_payload(static_cast<MsgType>(raw_type), buffer.subspan(pos + 8, payload_len),
                        message)) {
      result.events.push_back(DecodeSignal{SignalKind::kUnknownType, pos});
      pos += frame_len;
      continue;
    }
    result.events.push_back(DecodedFrame{std::move(message), seq});
    pos += frame_len;
  }
  result.consumed = pos;
  result.status = StreamStatus::kClean;
  return result;
}

std::vector<DecodeEvent> StreamDecoder::feed(std::span<const uint8_t> bytes) {
  pending_.insert(pending_.end(), bytes.begin(), bytes.end());
  DecodeResult result = decode_stream(pending_);
  pending_.erase(pending_.begin(), pending_.begin() + static_cast<ptrdiff_t>(result.consumed));
  return std::move(result.events);
}

std::vector<DecodeEvent> StreamDecoder::finish() {
  std::vector<DecodeEvent> events;
  if (!pending_.empty()) {
    events.push_back(DecodeSignal{SignalKind::kBadMagic, 0});
    pending_.clear();
  }
  return events;
}

std::vector<std::vector<uint8_t>> chunk_records(const std::vector<Message>& records,
                                                size_t buffer_size, uint16_t first_seq) {
  if (buffer_size < kMinBufferSize) throw BufferTooSmall(buffer_size);
  std::vector<std::vector<uint8_t>> frames;
  uint16_t seq = first_seq;
  for (const auto& record : records) {
    frames.push_back(encode_frame(record, seq++, buffer_size));
  }
  return frames;
}

std::vector<Message> chunk_model_bytes(std::span<const uint8_t> bytes, size_t buffer_size) {
  if (buffer_size < kMinBufferSize) throw BufferTooSmall(buffer_size);
  const size_t chunk_capacity = buffer_size - kFrameOverhead - 4;  // 4 = offset field
  std::vector<Message> out;
  size_t offset = 0;
  while (offset < bytes.size()) {
    size_t take = std::min(chunk_capacity, bytes.size() - offset);
    LoadModelChunk chunk;
    chunk.offset = static_cast<uint32_t>(offset);
    chunk.bytes.assign(bytes.begin() + offset, bytes.begin() + offset + take);
    out.push_back(std::move(chunk));
    offset += take;
  }
  if (out.empty()) out.push_back(LoadModelChunk{});
  return out;
}

}  // namespace utoe::rpc
