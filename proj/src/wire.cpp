// Copyright 2026 The ckptf Authors
// SPDX-License-Identifier: Apache-2.0

#include "ckptf/wire.hpp"

#include "ckptf/engine.hpp"

namespace ckptf {

const char* msg_type_name(MsgType t) {
  switch (t) {
    case MsgType::REGISTER: return "REGISTER";
    case MsgType::REGISTER_ACK: return "REGISTER_ACK";
    case MsgType::BARRIER_ENTER: return "BARRIER_ENTER";
    case MsgType::BARRIER_RELEASE: return "BARRIER_RELEASE";
    case MsgType::PUBLISH: return "PUBLISH";
    case MsgType::QUERY: return "QUERY";
    case MsgType::QUERY_REPLY: return "QUERY_REPLY";
    case MsgType::CKPT_REQUEST: return "CKPT_REQUEST";
    case MsgType::PHASE_ACK: return "PHASE_ACK";
    case MsgType::AGGREGATE: return "AGGREGATE";
    case MsgType::SHUTDOWN: return "SHUTDOWN";
  }
  return "?";
}

namespace {

void encode_payload(const ControlMessage& m, Bytes& out) {
  ByteWriter w(out);
  w.u32(m.sender);
  switch (m.type) {
    case MsgType::REGISTER:
      w.u8(m.kind);
      w.u32(m.node);
      break;
    case MsgType::REGISTER_ACK:
      w.u8(m.status);
      w.str(m.text);
      break;
    case MsgType::BARRIER_ENTER:
      w.str(m.text);
      break;
    case MsgType::BARRIER_RELEASE:
      w.u8(m.status);
      w.str(m.text);
      break;
    case MsgType::PUBLISH:
      w.u32(m.generation);
      w.len_str(m.text);
      w.len_bytes(m.value);
      break;
    case MsgType::QUERY:
      w.str(m.text);
      break;
    case MsgType::QUERY_REPLY:
      w.u8(m.status);
      w.u64(m.seq);
      w.u32(m.generation);
      w.len_bytes(m.value);
      break;
    case MsgType::CKPT_REQUEST:
      w.u32(m.ckpt_id);
      break;
    case MsgType::PHASE_ACK:
      w.u32(m.ckpt_id);
      w.u8(m.phase);
      break;
    case MsgType::AGGREGATE: {
      w.u32(static_cast<uint32_t>(m.inner.size()));
      for (const ControlMessage& im : m.inner) encode_frame(im, out);
      break;
    }
    case MsgType::SHUTDOWN:
      break;
  }
}

}  // namespace

void encode_frame(const ControlMessage& msg, Bytes& out) {
  Bytes payload;
  encode_payload(msg, payload);
  ByteWriter w(out);
  w.u32(static_cast<uint32_t>(payload.size()));
  w.u8(static_cast<uint8_t>(msg.type));
  w.bytes(payload);
}

Bytes encode_frame(const ControlMessage& msg) {
  Bytes out;
  encode_frame(msg, out);
  return out;
}

DecodedFrame decode_frame(const uint8_t* data, size_t len) {
  ByteReader header(data, len);
  uint32_t payload_len = header.u32();
  uint8_t type_byte = header.u8();
  if (len < 5 + static_cast<size_t>(payload_len)) throw TruncatedInput{};
  if (type_byte < static_cast<uint8_t>(MsgType::REGISTER) ||
      type_byte > static_cast<uint8_t>(MsgType::SHUTDOWN))
    throw Error(ErrCode::INVALID_ARGUMENT, "unknown control message type");

  ControlMessage m;
  m.type = static_cast<MsgType>(type_byte);
  ByteReader r(data + 5, payload_len);
  m.sender = r.u32();
  switch (m.type) {
    case MsgType::REGISTER:
      m.kind = r.u8();
      m.node = r.u32();
      break;
    case MsgType::REGISTER_ACK:
      m.status = r.u8();
      m.text = r.rest_str();
      break;
    case MsgType::BARRIER_ENTER:
      m.text = r.rest_str();
      break;
    case MsgType::BARRIER_RELEASE:
      m.status = r.u8();
      m.text = r.rest_str();
      break;
    case MsgType::PUBLISH:
      m.generation = r.u32();
      m.text = r.len_str();
      m.value = r.len_bytes();
      break;
    case MsgType::QUERY:
      m.text = r.rest_str();
      break;
    case MsgType::QUERY_REPLY:
      m.status = r.u8();
      m.seq = r.u64();
      m.generation = r.u32();
      m.value = r.len_bytes();
      break;
    case MsgType::CKPT_REQUEST:
      m.ckpt_id = r.u32();
      break;
    case MsgType::PHASE_ACK:
      m.ckpt_id = r.u32();
      m.phase = r.u8();
      break;
    case MsgType::AGGREGATE: {
      uint32_t count = r.u32();
      const uint8_t* inner_base = data + 5 + (payload_len - r.remaining());
      size_t inner_len = r.remaining();
      size_t off = 0;
      for (uint32_t i = 0; i < count; ++i) {
        DecodedFrame f = decode_frame(inner_base + off, inner_len - off);
        m.inner.push_back(std::move(f.msg));
        off += f.consumed;
      }
      if (off != inner_len)
        throw Error(ErrCode::INVALID_ARGUMENT,
                    "aggregate frame has trailing bytes");
      r.bytes(inner_len);  // consume
      break;
    }
    case MsgType::SHUTDOWN:
      break;
  }
  if (r.remaining() != 0)
    throw Error(ErrCode::INVALID_ARGUMENT, "frame has trailing bytes");
  return DecodedFrame{std::move(m), 5 + static_cast<size_t>(payload_len)};
}

ControlMessage decode_one(const Bytes& frame) {
  DecodedFrame f = decode_frame(frame.data(), frame.size());
  if (f.consumed != frame.size())
    throw Error(ErrCode::INVALID_ARGUMENT, "extra bytes after frame");
  return std::move(f.msg);
}

}  // namespace ckptf
