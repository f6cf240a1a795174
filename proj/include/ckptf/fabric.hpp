// Copyright 2026 The ckptf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "ckptf/bytes.hpp"
#include "ckptf/engine.hpp"
#include "ckptf/rng.hpp"

namespace ckptf {

using Generation = uint32_t;

// A fully qualified endpoint address. Identifier values are only
// meaningful within the generation they were issued in; every lookup
// checks the tag, never just the values, so a stale address black-holes
// even if the new generation happens to reuse the same numbers.
struct FabricAddress {
  uint16_t lid = 0;
  uint32_t qpn = 0;  // 24-bit space
  Generation generation = 0;

  friend bool operator==(const FabricAddress&, const FabricAddress&) = default;
};

enum class QpMode : uint8_t { RC, UD };

struct Datagram {
  FabricAddress src;
  FabricAddress dst;
  Bytes payload;
  Tick deliver_at = 0;
  uint64_t seq = 0;  // global send order, stable tie-break

  // Test-oracle field: the packed virtual endpoint id the sender aimed
  // at (0 when the send bypassed virtualization). Never consulted by
  // delivery logic.
  uint64_t oracle_target_vid = 0;
};

struct FabricConfig {
  Tick latency_min = 1;
  Tick latency_max = 8;
  double ud_drop_rate = 0.0;
  size_t mtu = 4096;
  size_t queue_capacity = 4096;
  uint64_t seed = 1;
};

struct FabricMetrics {
  uint64_t sent = 0;
  uint64_t delivered = 0;
  uint64_t dropped = 0;     // UD loss draws + UD queue overflow
  uint64_t blackholed = 0;  // stale or unknown destination
  uint64_t purged = 0;      // destroyed with their queue pair
  uint64_t misdelivered = 0;  // oracle: delivered to the wrong virtual id

  uint64_t in_flight() const {
    return sent - delivered - dropped - blackholed - purged;
  }
};

// Value snapshot of an adapter; stale after reassign_identifiers.
struct HcaHandle {
  size_t index = 0;
  uint32_t node = 0;
  uint16_t lid = 0;
  Generation generation = 0;
};

using QpRef = size_t;

enum class SendOutcome : uint8_t { SENT, DROPPED, BLACKHOLED };

// Deterministic simulated interconnect. All RNG consumption orders are
// fixed and replayable per stream:
//   ident stream:  reassign -> lid offset, n-1 permutation swaps, then
//                  one queue-pair-number base per adapter in index order
//   drop stream:   one draw per UD send with a resolvable destination,
//                  only when ud_drop_rate > 0
//   latency stream: one draw per enqueued datagram
class Fabric {
 public:
  Fabric(Engine& eng, FabricConfig cfg);

  // --- adapters ---
  HcaHandle create_hca(uint32_t node);
  HcaHandle hca_on_node(uint32_t node) const;  // current snapshot
  size_t hca_count() const { return hcas_.size(); }

  // --- queue pairs ---
  QpRef create_qp(const HcaHandle& hca, QpMode mode);
  void destroy_qp(QpRef qp);
  void destroy_all_qps();
  QpMode qp_mode(QpRef qp) const;
  FabricAddress qp_address(QpRef qp) const;
  bool qp_connected(QpRef qp) const;
  std::optional<FabricAddress> qp_peer(QpRef qp) const;

  // Both-sided connect (initial launch, unit tests).
  void rc_connect(QpRef a, QpRef b);
  // Half connect for restart rendezvous: each side binds the peer
  // address it discovered. Delivery validates mutual consistency.
  void rc_bind(QpRef local, const FabricAddress& peer);

  // --- traffic ---
  SendOutcome post_send(QpRef qp, std::optional<FabricAddress> dst,
                        Bytes payload, uint64_t oracle_target_vid = 0);
  std::vector<Datagram> poll_recv(QpRef qp, size_t max);
  std::optional<Tick> earliest_pending(QpRef qp) const;
  std::optional<Tick> earliest_pending_any(std::span<const QpRef> qps) const;
  size_t pending_count(QpRef qp) const;

  // Arrival notifications for blocking receivers: one channel per
  // owning rank, shared by all of its queue pairs.
  void set_arrival_chan(QpRef qp, WaitChan* chan);

  // Oracle registration: the virtual id currently served by this QP.
  void set_registered_vid(QpRef qp, uint64_t packed_vid);
  uint64_t registered_vid(QpRef qp) const;

  // --- restart ---
  // Requires full quiescence (no undelivered datagrams). Every adapter
  // receives a fresh LID, QPN counters restart at a seeded base, all
  // existing queue pairs and handles become stale.
  Generation reassign_identifiers();
  Generation current_generation() const { return generation_; }
  void force_identity_permutation(bool on) { identity_permutation_ = on; }

  // --- accounting ---
  const FabricMetrics& metrics() const { return metrics_; }
  uint64_t queued_actual() const;
  const FabricConfig& config() const { return cfg_; }

  // Test hook: observes every delivered datagram.
  using DeliveryTap =
      std::function<void(QpRef dst_qp, const Datagram&)>;
  void set_delivery_tap(DeliveryTap tap) { tap_ = std::move(tap); }

 private:
  struct Hca {
    uint32_t node = 0;
    uint16_t lid = 0;
    uint32_t next_qpn = 1;
    Generation generation = 0;
  };

  struct QueuePair {
    size_t hca_index = 0;
    uint32_t qpn = 0;
    QpMode mode = QpMode::UD;
    Generation generation = 0;
    bool destroyed = false;
    std::optional<FabricAddress> peer;  // RC only
    Tick rc_last_delivery = 0;          // enforces per-connection order
    std::multiset<std::pair<Tick, uint64_t>> pending_keys;
    std::map<uint64_t, Datagram> pending;  // seq -> datagram
    WaitChan* arrival = nullptr;
    uint64_t registered_vid = 0;
  };

  static uint64_t addr_key(uint16_t lid, uint32_t qpn) {
    return (static_cast<uint64_t>(lid) << 24) | qpn;
  }
  const QueuePair& qp_at(QpRef r) const;
  QueuePair& qp_mut(QpRef r);
  QueuePair* lookup_current(const FabricAddress& a);
  void enqueue(QueuePair& dst, Datagram dg);
  void purge_qp(QueuePair& q);

  Engine& eng_;
  FabricConfig cfg_;
  Generation generation_ = 0;
  uint16_t next_lid_ = 1;
  std::vector<Hca> hcas_;
  std::vector<std::unique_ptr<QueuePair>> qps_;
  std::map<uint64_t, QpRef> by_addr_;  // current generation only
  FabricMetrics metrics_;
  uint64_t next_seq_ = 1;
  SplitMix64 rng_latency_;
  SplitMix64 rng_drop_;
  SplitMix64 rng_ident_;
  bool identity_permutation_ = false;
  DeliveryTap tap_;
};

}  // namespace ckptf
