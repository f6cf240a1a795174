// Copyright 2026 The ckptf Authors
// SPDX-License-Identifier: Apache-2.0

#include "ckptf/fabric.hpp"

#include <algorithm>
#include <cassert>

namespace ckptf {

Fabric::Fabric(Engine& eng, FabricConfig cfg)
    : eng_(eng),
      cfg_(cfg),
      rng_latency_(substream_seed(cfg.seed, 0x11)),
      rng_drop_(substream_seed(cfg.seed, 0x22)),
      rng_ident_(substream_seed(cfg.seed, 0x33)) {
  if (cfg_.latency_min < 0 || cfg_.latency_min > cfg_.latency_max)
    throw Error(ErrCode::INVALID_ARGUMENT, "latency bounds out of order");
  if (cfg_.ud_drop_rate < 0.0 || cfg_.ud_drop_rate > 1.0)
    throw Error(ErrCode::INVALID_ARGUMENT, "drop rate outside [0,1]");
}

HcaHandle Fabric::create_hca(uint32_t node) {
  uint16_t max_lid = 0;
  for (const Hca& h : hcas_) {
    if (h.node == node)
      throw Error(ErrCode::DUPLICATE, "node already has an adapter");
    max_lid = std::max(max_lid, h.lid);
  }
  Hca h;
  h.node = node;
  // Fresh and unique within the current generation, including after a
  // reassignment shifted existing LIDs.
  h.lid = std::max<uint16_t>(next_lid_, static_cast<uint16_t>(max_lid + 1));
  next_lid_ = static_cast<uint16_t>(h.lid + 1);
  h.generation = generation_;
  hcas_.push_back(h);
  return HcaHandle{hcas_.size() - 1, node, h.lid, h.generation};
}

HcaHandle Fabric::hca_on_node(uint32_t node) const {
  for (size_t i = 0; i < hcas_.size(); ++i) {
    if (hcas_[i].node == node)
      return HcaHandle{i, node, hcas_[i].lid, hcas_[i].generation};
  }
  throw Error(ErrCode::INVALID_ARGUMENT, "no adapter on node");
}

QpRef Fabric::create_qp(const HcaHandle& hca, QpMode mode) {
  if (hca.index >= hcas_.size())
    throw Error(ErrCode::INVALID_ARGUMENT, "bad adapter handle");
  Hca& h = hcas_[hca.index];
  if (hca.generation != generation_ || h.generation != generation_)
    throw Error(ErrCode::STALE_GENERATION, "adapter handle from old generation");
  auto qp = std::make_unique<QueuePair>();
  qp->hca_index = hca.index;
  qp->qpn = h.next_qpn++;
  qp->mode = mode;
  qp->generation = generation_;
  qps_.push_back(std::move(qp));
  QpRef ref = qps_.size() - 1;
  by_addr_[addr_key(h.lid, qps_[ref]->qpn)] = ref;
  return ref;
}

const Fabric::QueuePair& Fabric::qp_at(QpRef r) const {
  if (r >= qps_.size() || qps_[r]->destroyed)
    throw Error(ErrCode::INVALID_ARGUMENT, "bad queue pair reference");
  return *qps_[r];
}

Fabric::QueuePair& Fabric::qp_mut(QpRef r) {
  return const_cast<QueuePair&>(qp_at(r));
}

QpMode Fabric::qp_mode(QpRef qp) const { return qp_at(qp).mode; }

FabricAddress Fabric::qp_address(QpRef qp) const {
  const QueuePair& q = qp_at(qp);
  return FabricAddress{hcas_[q.hca_index].lid, q.qpn, q.generation};
}

bool Fabric::qp_connected(QpRef qp) const { return qp_at(qp).peer.has_value(); }

std::optional<FabricAddress> Fabric::qp_peer(QpRef qp) const {
  return qp_at(qp).peer;
}

void Fabric::rc_connect(QpRef a, QpRef b) {
  QueuePair& qa = qp_mut(a);
  QueuePair& qb = qp_mut(b);
  if (qa.mode != QpMode::RC || qb.mode != QpMode::RC)
    throw Error(ErrCode::MODE_MISMATCH, "rc_connect requires RC on both ends");
  if (qa.peer || qb.peer)
    throw Error(ErrCode::ALREADY_CONNECTED, "queue pair already peered");
  if (qa.generation != generation_ || qb.generation != generation_)
    throw Error(ErrCode::STALE_GENERATION, "cross-generation connect");
  qa.peer = qp_address(b);
  qb.peer = qp_address(a);
}

void Fabric::rc_bind(QpRef local, const FabricAddress& peer) {
  QueuePair& q = qp_mut(local);
  if (q.mode != QpMode::RC)
    throw Error(ErrCode::MODE_MISMATCH, "rc_bind requires an RC queue pair");
  if (q.peer) throw Error(ErrCode::ALREADY_CONNECTED, "queue pair already peered");
  if (q.generation != generation_ || peer.generation != generation_)
    throw Error(ErrCode::STALE_GENERATION, "cross-generation bind");
  q.peer = peer;
}

void Fabric::set_arrival_chan(QpRef qp, WaitChan* chan) {
  qp_mut(qp).arrival = chan;
}

void Fabric::set_registered_vid(QpRef qp, uint64_t packed_vid) {
  qp_mut(qp).registered_vid = packed_vid;
}

uint64_t Fabric::registered_vid(QpRef qp) const {
  return qp_at(qp).registered_vid;
}

Fabric::QueuePair* Fabric::lookup_current(const FabricAddress& a) {
  if (a.generation != generation_) return nullptr;
  auto it = by_addr_.find(addr_key(a.lid, a.qpn));
  if (it == by_addr_.end()) return nullptr;
  QueuePair& q = *qps_[it->second];
  if (q.destroyed || q.generation != generation_) return nullptr;
  return &q;
}

void Fabric::enqueue(QueuePair& dst, Datagram dg) {
  dst.pending_keys.insert({dg.deliver_at, dg.seq});
  dst.pending.emplace(dg.seq, std::move(dg));
  if (dst.arrival) eng_.notify(*dst.arrival);
}

SendOutcome Fabric::post_send(QpRef qp, std::optional<FabricAddress> dst,
                              Bytes payload, uint64_t oracle_target_vid) {
  QueuePair& src = qp_mut(qp);
  if (src.generation != generation_)
    throw Error(ErrCode::STALE_GENERATION, "send on stale queue pair");
  if (payload.size() > cfg_.mtu)
    throw Error(ErrCode::MTU_EXCEEDED, "payload exceeds MTU");

  FabricAddress target;
  if (src.mode == QpMode::RC) {
    if (dst)
      throw Error(ErrCode::INVALID_ARGUMENT,
                  "RC send takes no destination argument");
    if (!src.peer)
      throw Error(ErrCode::NOT_CONNECTED, "RC send on unpeered queue pair");
    target = *src.peer;
  } else {
    if (!dst)
      throw Error(ErrCode::INVALID_ARGUMENT, "UD send requires a destination");
    target = *dst;
  }

  ++metrics_.sent;
  QueuePair* dq = lookup_current(target);
  if (dq == nullptr) {
    if (src.mode == QpMode::UD) {
      ++metrics_.blackholed;
      return SendOutcome::BLACKHOLED;
    }
    throw Error(ErrCode::NOT_CONNECTED, "RC peer not resolvable");
  }
  if (src.mode == QpMode::RC && dq->peer != qp_address(qp))
    throw Error(ErrCode::NOT_CONNECTED, "RC peer does not point back");

  if (src.mode == QpMode::UD && cfg_.ud_drop_rate > 0.0 &&
      rng_drop_.unit() < cfg_.ud_drop_rate) {
    ++metrics_.dropped;
    return SendOutcome::DROPPED;
  }
  if (dq->pending.size() >= cfg_.queue_capacity) {
    if (src.mode == QpMode::UD) {
      ++metrics_.dropped;
      return SendOutcome::DROPPED;
    }
    // Take the send back: reliability forbids silently losing it.
    --metrics_.sent;
    throw Error(ErrCode::QUEUE_FULL, "receive queue at capacity");
  }

  Datagram dg;
  dg.src = qp_address(qp);
  dg.dst = target;
  dg.payload = std::move(payload);
  dg.seq = next_seq_++;
  dg.oracle_target_vid = oracle_target_vid;
  Tick lat = rng_latency_.range(cfg_.latency_min, cfg_.latency_max);
  dg.deliver_at = eng_.now() + lat;
  if (src.mode == QpMode::RC) {
    dg.deliver_at = std::max(dg.deliver_at, src.rc_last_delivery);
    src.rc_last_delivery = dg.deliver_at;
  }
  enqueue(*dq, std::move(dg));
  return SendOutcome::SENT;
}

std::vector<Datagram> Fabric::poll_recv(QpRef qp, size_t max) {
  QueuePair& q = qp_mut(qp);
  if (q.generation != generation_)
    throw Error(ErrCode::STALE_GENERATION, "poll on stale queue pair");
  std::vector<Datagram> out;
  Tick now = eng_.now();
  while (out.size() < max && !q.pending_keys.empty()) {
    auto it = q.pending_keys.begin();
    if (it->first > now) break;
    uint64_t seq = it->second;
    q.pending_keys.erase(it);
    auto dit = q.pending.find(seq);
    assert(dit != q.pending.end());
    Datagram dg = std::move(dit->second);
    q.pending.erase(dit);
    ++metrics_.delivered;
    if (dg.oracle_target_vid != 0 && q.registered_vid != dg.oracle_target_vid)
      ++metrics_.misdelivered;
    if (tap_) tap_(qp, dg);
    out.push_back(std::move(dg));
  }
  return out;
}

std::optional<Tick> Fabric::earliest_pending(QpRef qp) const {
  const QueuePair& q = qp_at(qp);
  if (q.pending_keys.empty()) return std::nullopt;
  return q.pending_keys.begin()->first;
}

std::optional<Tick> Fabric::earliest_pending_any(
    std::span<const QpRef> qps) const {
  std::optional<Tick> best;
  for (QpRef r : qps) {
    auto t = earliest_pending(r);
    if (t && (!best || *t < *best)) best = t;
  }
  return best;
}

size_t Fabric::pending_count(QpRef qp) const { return qp_at(qp).pending.size(); }

void Fabric::purge_qp(QueuePair& q) {
  metrics_.purged += q.pending.size();
  q.pending.clear();
  q.pending_keys.clear();
}

void Fabric::destroy_qp(QpRef qp) {
  QueuePair& q = qp_mut(qp);
  purge_qp(q);
  if (q.generation == generation_) {
    by_addr_.erase(addr_key(hcas_[q.hca_index].lid, q.qpn));
  }
  q.destroyed = true;
  q.arrival = nullptr;
}

void Fabric::destroy_all_qps() {
  for (size_t i = 0; i < qps_.size(); ++i) {
    if (!qps_[i]->destroyed) destroy_qp(i);
  }
}

uint64_t Fabric::queued_actual() const {
  uint64_t n = 0;
  for (const auto& q : qps_) n += q->pending.size();
  return n;
}

Generation Fabric::reassign_identifiers() {
  if (metrics_.in_flight() != 0 || queued_actual() != 0)
    throw Error(ErrCode::NOT_QUIESCED,
                "identifier reassignment with undelivered datagrams");
  ++generation_;
  by_addr_.clear();

  size_t n = hcas_.size();
  if (n > 0) {
    std::vector<uint16_t> slot(n);
    for (size_t i = 0; i < n; ++i) slot[i] = static_cast<uint16_t>(i);
    uint16_t offset = 0;
    if (!identity_permutation_) {
      offset = static_cast<uint16_t>(rng_ident_.below(1024));
      for (size_t i = n - 1; i > 0; --i) {
        size_t j = rng_ident_.below(i + 1);
        std::swap(slot[i], slot[j]);
      }
    }
    for (size_t i = 0; i < n; ++i) {
      hcas_[i].lid = static_cast<uint16_t>(1 + offset + slot[i]);
      hcas_[i].generation = generation_;
      hcas_[i].next_qpn =
          1 + static_cast<uint32_t>(1 + rng_ident_.below(4095));
    }
  }
  // Anything still alive from the old generation is now unreachable;
  // owners are expected to recreate their queue pairs.
  return generation_;
}

}  // namespace ckptf
