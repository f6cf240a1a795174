// Copyright 2026 The ckptf Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include <algorithm>

#include "ckptf/engine.hpp"
#include "ckptf/rng.hpp"
#include "ckptf/wire.hpp"

using namespace ckptf;

namespace {

ControlMessage random_message(SplitMix64& g, bool allow_nested) {
  ControlMessage m;
  int pick = static_cast<int>(g.below(allow_nested ? 11 : 10));
  m.sender = static_cast<uint32_t>(g.next());
  auto rand_text = [&](size_t max_len) {
    std::string s;
    size_t n = g.below(max_len);
    for (size_t i = 0; i < n; ++i)
      s.push_back(static_cast<char>('a' + g.below(26)));
    return s;
  };
  auto rand_bytes = [&](size_t max_len) {
    Bytes b(g.below(max_len));
    for (auto& x : b) x = static_cast<uint8_t>(g.next());
    return b;
  };
  switch (pick) {
    case 0:
      m.type = MsgType::REGISTER;
      m.kind = static_cast<uint8_t>(g.below(2));
      m.node = static_cast<uint32_t>(g.next());
      break;
    case 1:
      m.type = MsgType::REGISTER_ACK;
      m.status = static_cast<uint8_t>(g.below(2));
      m.text = rand_text(12);
      break;
    case 2:
      m.type = MsgType::BARRIER_ENTER;
      m.text = rand_text(20);
      break;
    case 3:
      m.type = MsgType::BARRIER_RELEASE;
      m.status = static_cast<uint8_t>(g.below(2));
      m.text = rand_text(20);
      break;
    case 4:
      m.type = MsgType::PUBLISH;
      m.generation = static_cast<uint32_t>(g.next());
      m.text = rand_text(16);
      m.value = rand_bytes(32);
      break;
    case 5:
      m.type = MsgType::QUERY;
      m.text = rand_text(16);
      break;
    case 6:
      m.type = MsgType::QUERY_REPLY;
      m.status = static_cast<uint8_t>(g.below(2));
      m.seq = g.next();
      m.generation = static_cast<uint32_t>(g.next());
      m.value = rand_bytes(32);
      break;
    case 7:
      m.type = MsgType::CKPT_REQUEST;
      m.ckpt_id = static_cast<uint32_t>(g.next());
      break;
    case 8:
      m.type = MsgType::PHASE_ACK;
      m.ckpt_id = static_cast<uint32_t>(g.next());
      m.phase = static_cast<uint8_t>(g.below(6));
      break;
    case 9:
      m.type = MsgType::SHUTDOWN;
      break;
    case 10: {
      m.type = MsgType::AGGREGATE;
      size_t n = 1 + g.below(4);
      for (size_t i = 0; i < n; ++i)
        m.inner.push_back(random_message(g, false));
      break;
    }
  }
  return m;
}

}  // namespace

TEST_CASE("frame layout is bit-exact") {
  ControlMessage m;
  m.type = MsgType::BARRIER_ENTER;
  m.sender = 2;
  m.text = "suspend";
  Bytes frame = encode_frame(m);
  // 4-byte LE payload length, 1 type byte, then sender + name.
  Bytes expected = {0x0B, 0x00, 0x00, 0x00,        // len = 4 + 7
                    0x03,                          // BARRIER_ENTER
                    0x02, 0x00, 0x00, 0x00,        // sender
                    's', 'u', 's', 'p', 'e', 'n', 'd'};
  CHECK(frame == expected);
}

TEST_CASE("publish frame packs generation, key, and value") {
  ControlMessage m;
  m.type = MsgType::PUBLISH;
  m.sender = 1;
  m.generation = 3;
  m.text = "k";
  m.value = {0xAA, 0xBB};
  Bytes frame = encode_frame(m);
  Bytes expected = {0x13, 0x00, 0x00, 0x00,  // len = 4+4+4+1+4+2
                    0x05,                    // PUBLISH
                    0x01, 0x00, 0x00, 0x00,  // sender
                    0x03, 0x00, 0x00, 0x00,  // generation
                    0x01, 0x00, 0x00, 0x00, 'k',
                    0x02, 0x00, 0x00, 0x00, 0xAA, 0xBB};
  CHECK(frame == expected);
}

TEST_CASE("serialize then parse is the identity for all message shapes") {
  SplitMix64 g(2024);
  for (int i = 0; i < 500; ++i) {
    ControlMessage m = random_message(g, true);
    Bytes frame = encode_frame(m);
    ControlMessage back = decode_one(frame);
    CHECK(back == m);
  }
}

TEST_CASE("aggregate frames carry complete inner frames in order") {
  ControlMessage inner1;
  inner1.type = MsgType::BARRIER_ENTER;
  inner1.sender = 4;
  inner1.text = "b";
  ControlMessage inner2;
  inner2.type = MsgType::PHASE_ACK;
  inner2.sender = 5;
  inner2.ckpt_id = 9;
  inner2.phase = 1;

  ControlMessage agg;
  agg.type = MsgType::AGGREGATE;
  agg.sender = 0x80000001u;
  agg.inner = {inner1, inner2};

  Bytes frame = encode_frame(agg);
  ControlMessage back = decode_one(frame);
  REQUIRE(back.inner.size() == 2);
  CHECK(back.inner[0] == inner1);
  CHECK(back.inner[1] == inner2);

  // The payload embeds each inner frame verbatim.
  Bytes f1 = encode_frame(inner1);
  auto it = std::search(frame.begin(), frame.end(), f1.begin(), f1.end());
  CHECK(it != frame.end());
}

TEST_CASE("decoder rejects truncated and malformed frames") {
  ControlMessage m;
  m.type = MsgType::QUERY;
  m.sender = 7;
  m.text = "abc";
  Bytes frame = encode_frame(m);

  for (size_t cut = 0; cut < frame.size(); ++cut) {
    CHECK_THROWS(decode_frame(frame.data(), cut));
  }
  Bytes bad = frame;
  bad[4] = 0x77;  // unknown type
  CHECK_THROWS_AS(decode_one(bad), Error);
}

TEST_CASE("stream decoding consumes exactly one frame at a time") {
  ControlMessage a;
  a.type = MsgType::QUERY;
  a.sender = 1;
  a.text = "x";
  ControlMessage b;
  b.type = MsgType::SHUTDOWN;
  b.sender = 2;

  Bytes stream = encode_frame(a);
  encode_frame(b, stream);
  DecodedFrame f1 = decode_frame(stream.data(), stream.size());
  CHECK(f1.msg == a);
  DecodedFrame f2 =
      decode_frame(stream.data() + f1.consumed, stream.size() - f1.consumed);
  CHECK(f2.msg == b);
  CHECK(f1.consumed + f2.consumed == stream.size());
}
