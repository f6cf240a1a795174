// Copyright 2026 The ckptf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ckptf/bytes.hpp"

namespace ckptf {

// Control-plane wire format. Every frame is:
//
//   [payload length : u32 LE] [type : u8] [payload]
//
// and every payload begins with the sender id (u32 LE), followed by
// type-specific fields (all integers little-endian, strings raw ASCII):
//
//   REGISTER        kind u8 (0 rank, 1 sub-coordinator), node u32
//   REGISTER_ACK    status u8 (0 ok), reason <rest>
//   BARRIER_ENTER   name <rest>
//   BARRIER_RELEASE status u8 (0 released, 1 aborted), name <rest>
//   PUBLISH         generation u32, key (u32 len + bytes),
//                   value (u32 len + bytes)
//   QUERY           key <rest>
//   QUERY_REPLY     status u8 (0 found, 1 not found), seq u64,
//                   generation u32, value (u32 len + bytes)
//   CKPT_REQUEST    ckpt_id u32
//   PHASE_ACK       ckpt_id u32, phase u8
//   AGGREGATE       count u32, then `count` complete inner frames,
//                   concatenated in submission order
//   SHUTDOWN        (no further fields)
enum class MsgType : uint8_t {
  REGISTER = 1,
  REGISTER_ACK = 2,
  BARRIER_ENTER = 3,
  BARRIER_RELEASE = 4,
  PUBLISH = 5,
  QUERY = 6,
  QUERY_REPLY = 7,
  CKPT_REQUEST = 8,
  PHASE_ACK = 9,
  AGGREGATE = 10,
  SHUTDOWN = 11,
};

const char* msg_type_name(MsgType t);

struct ControlMessage {
  MsgType type = MsgType::SHUTDOWN;
  uint32_t sender = 0;

  uint8_t kind = 0;     // REGISTER
  uint32_t node = 0;    // REGISTER
  uint8_t status = 0;   // acks, releases, replies
  std::string text;     // barrier name / key / reason
  Bytes value;          // publish / reply payload
  uint32_t generation = 0;
  uint64_t seq = 0;
  uint32_t ckpt_id = 0;
  uint8_t phase = 0;
  std::vector<ControlMessage> inner;  // AGGREGATE

  friend bool operator==(const ControlMessage&,
                         const ControlMessage&) = default;
};

// Appends one complete frame.
void encode_frame(const ControlMessage& msg, Bytes& out);
Bytes encode_frame(const ControlMessage& msg);

// Parses one frame from the front of [data, data+len). Returns the
// message and the number of bytes consumed. Throws TruncatedInput if a
// complete frame is not available, Error(INVALID_ARGUMENT) on garbage.
struct DecodedFrame {
  ControlMessage msg;
  size_t consumed = 0;
};
DecodedFrame decode_frame(const uint8_t* data, size_t len);
ControlMessage decode_one(const Bytes& frame);

}  // namespace ckptf
