// Copyright 2026 The ckptf Authors
// SPDX-License-Identifier: Apache-2.0

#include "ckptf/coordinator.hpp"

#include <algorithm>
#include <cassert>

#include "ckptf/rng.hpp"

namespace ckptf {

namespace {
constexpr uint32_t kSubSenderBit = 0x80000000u;
uint32_t sub_sender_id(uint32_t node) { return kSubSenderBit | node; }

bool is_ckpt_barrier_of(const std::string& name, uint32_t ckpt_id) {
  return name.rfind("ckpt:" + std::to_string(ckpt_id) + ":", 0) == 0;
}
}  // namespace

// ---------------------------------------------------------------------------
// CoordinatorCore
// ---------------------------------------------------------------------------

CoordinatorCore::CoordinatorCore(uint32_t expected_participants)
    : expected_(expected_participants), participants_(expected_participants) {}

uint64_t CoordinatorCore::open_session() {
  uint64_t sid = next_session_++;
  live_sessions_.insert(sid);
  return sid;
}

uint32_t CoordinatorCore::registered_count() const {
  uint32_t n = 0;
  for (const Participant& p : participants_)
    if (p.alive) ++n;
  return n;
}

CoordinatorCore::Out CoordinatorCore::to_rank(uint32_t rank,
                                              ControlMessage m) const {
  m.sender = rank;
  return Out{participants_[rank].session, std::move(m)};
}

void CoordinatorCore::handle(uint64_t session, const ControlMessage& m,
                             std::vector<Out>& out) {
  switch (m.type) {
    case MsgType::REGISTER: {
      ControlMessage ack;
      ack.type = MsgType::REGISTER_ACK;
      ack.sender = m.sender;
      if (m.kind == 1) {
        // Sub-coordinator link; tracked as a session only.
        out.push_back(Out{session, std::move(ack)});
        return;
      }
      if (m.sender >= expected_) {
        ack.status = 1;
        ack.text = "computation is sized for " + std::to_string(expected_) +
                   " participants";
      } else if (participants_[m.sender].alive) {
        ack.status = 1;
        ack.text = "participant already registered";
      } else {
        Participant& p = participants_[m.sender];
        p.registered = true;
        p.alive = true;
        p.session = session;
      }
      out.push_back(Out{session, std::move(ack)});
      return;
    }
    case MsgType::BARRIER_ENTER:
      enter_barrier(m.sender, m.text, out);
      return;
    case MsgType::PUBLISH: {
      auto& hist = kv_[m.text];
      hist.push_back(KvRecord{m.value, m.generation, ++kv_seq_});
      return;
    }
    case MsgType::QUERY: {
      ControlMessage rep;
      rep.type = MsgType::QUERY_REPLY;
      rep.sender = m.sender;
      auto latest = kv_latest(m.text);
      if (latest) {
        rep.status = 0;
        rep.seq = latest->seq;
        rep.generation = latest->generation;
        rep.value = latest->value;
      } else {
        rep.status = 1;
      }
      out.push_back(Out{session, std::move(rep)});
      return;
    }
    case MsgType::CKPT_REQUEST: {
      // Upstream: a client asks for a checkpoint. A rejected request is
      // answered with ckpt_id 0.
      if (ckpt_in_progress_) {
        ControlMessage rej;
        rej.type = MsgType::CKPT_REQUEST;
        rej.sender = m.sender;
        rej.ckpt_id = 0;
        out.push_back(Out{session, std::move(rej)});
        return;
      }
      request_checkpoint(out);
      return;
    }
    case MsgType::PHASE_ACK:
      ack_phase(m, out);
      return;
    case MsgType::AGGREGATE:
      for (const ControlMessage& im : m.inner) handle(session, im, out);
      return;
    case MsgType::REGISTER_ACK:
    case MsgType::BARRIER_RELEASE:
    case MsgType::QUERY_REPLY:
      throw Error(ErrCode::INVALID_ARGUMENT,
                  "reply-direction frame received by coordinator");
    case MsgType::SHUTDOWN:
      return;
  }
}

void CoordinatorCore::enter_barrier(uint32_t rank, const std::string& name,
                                    std::vector<Out>& out) {
  if (rank >= expected_ || !participants_[rank].alive)
    throw Error(ErrCode::INVALID_ARGUMENT, "barrier enter by unknown rank");
  // Barriers scoped to an aborted checkpoint fail immediately so late
  // entrants do not hang.
  for (uint32_t id : ckpt_aborted_ids_) {
    if (is_ckpt_barrier_of(name, id)) {
      ControlMessage rel;
      rel.type = MsgType::BARRIER_RELEASE;
      rel.status = 1;
      rel.text = name;
      out.push_back(to_rank(rank, std::move(rel)));
      return;
    }
  }
  Barrier& b = barriers_[name];
  if (std::find(b.entered.begin(), b.entered.end(), rank) != b.entered.end())
    throw Error(ErrCode::INVALID_ARGUMENT, "double barrier entry");
  b.entered.push_back(rank);
  if (b.entered.size() == expected_) release_barrier(name, 0, out);
}

void CoordinatorCore::release_barrier(const std::string& name, uint8_t status,
                                      std::vector<Out>& out) {
  Barrier& b = barriers_[name];
  for (uint32_t rank : b.entered) {
    ControlMessage rel;
    rel.type = MsgType::BARRIER_RELEASE;
    rel.status = status;
    rel.text = name;
    out.push_back(to_rank(rank, std::move(rel)));
  }
  b.entered.clear();
  ++b.cycle;
}

void CoordinatorCore::barrier_timeout(const std::string& name,
                                      std::vector<Out>& out) {
  auto it = barriers_.find(name);
  if (it == barriers_.end() || it->second.entered.empty()) return;
  release_barrier(name, 1, out);
}

void CoordinatorCore::abort_barriers_of_dead(std::vector<Out>& out) {
  bool any_dead = false;
  for (const Participant& p : participants_)
    if (p.registered && !p.alive) any_dead = true;
  if (!any_dead) return;
  for (auto& [name, b] : barriers_) {
    if (!b.entered.empty()) release_barrier(name, 1, out);
  }
}

void CoordinatorCore::session_closed(uint64_t session, std::vector<Out>& out) {
  live_sessions_.erase(session);
  for (Participant& p : participants_) {
    if (p.alive && p.session == session) p.alive = false;
  }
  abort_barriers_of_dead(out);
}

void CoordinatorCore::participant_dead(uint32_t rank, std::vector<Out>& out) {
  if (rank >= expected_) return;
  participants_[rank].alive = false;
  abort_barriers_of_dead(out);
}

uint32_t CoordinatorCore::request_checkpoint(std::vector<Out>& out) {
  if (ckpt_in_progress_)
    throw Error(ErrCode::CKPT_IN_PROGRESS, "a checkpoint is outstanding");
  for (uint32_t r = 0; r < expected_; ++r) {
    if (!participants_[r].alive)
      throw Error(ErrCode::INVALID_ARGUMENT,
                  "checkpoint requires all participants running");
  }
  ckpt_in_progress_ = true;
  ckpt_current_ = next_ckpt_id_++;
  ckpt_resumed_.clear();
  for (uint32_t r = 0; r < expected_; ++r) {
    ControlMessage req;
    req.type = MsgType::CKPT_REQUEST;
    req.ckpt_id = ckpt_current_;
    out.push_back(to_rank(r, std::move(req)));
  }
  return ckpt_current_;
}

void CoordinatorCore::ack_phase(const ControlMessage& m,
                                std::vector<Out>& out) {
  if (m.ckpt_id != ckpt_current_) return;  // stale ack
  if (m.phase == static_cast<uint8_t>(PhaseCode::ABORT)) {
    if (ckpt_aborted_ids_.insert(m.ckpt_id).second) {
      // Fail the checkpoint's barriers for everyone already waiting.
      for (auto& [name, b] : barriers_) {
        if (is_ckpt_barrier_of(name, m.ckpt_id) && !b.entered.empty())
          release_barrier(name, 1, out);
      }
    }
    return;
  }
  if (m.phase == static_cast<uint8_t>(PhaseCode::RUNNING)) {
    ckpt_resumed_.insert(m.sender);
    if (ckpt_resumed_.size() == expected_) {
      ckpt_in_progress_ = false;
      if (!ckpt_aborted_ids_.contains(ckpt_current_)) ++ckpts_completed_;
    }
  }
}

const std::vector<KvRecord>* CoordinatorCore::kv_history(
    const std::string& key) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? nullptr : &it->second;
}

std::optional<KvRecord> CoordinatorCore::kv_latest(
    const std::string& key) const {
  const auto* hist = kv_history(key);
  if (hist == nullptr || hist->empty()) return std::nullopt;
  return hist->back();
}

// ---------------------------------------------------------------------------
// ClientSession
// ---------------------------------------------------------------------------

ClientSession::ClientSession(ControlBus& bus, uint32_t rank, uint32_t node,
                             WaitChan* wake)
    : bus_(bus),
      rank_(rank),
      node_(node),
      wake_(wake),
      own_wake_("session:" + std::to_string(rank)) {
  if (wake_ == nullptr) wake_ = &own_wake_;
}

ClientSession::~ClientSession() { bus_.session_gone(*this); }

void ClientSession::send(const ControlMessage& m) { bus_.send_from(*this, m); }

std::optional<ControlMessage> ClientSession::try_take(
    const std::function<bool(const ControlMessage&)>& pred) {
  std::unique_lock<std::mutex> lk(bus_.engine().mu());
  for (auto it = inbox_.begin(); it != inbox_.end(); ++it) {
    if (pred(*it)) {
      ControlMessage m = std::move(*it);
      inbox_.erase(it);
      return m;
    }
  }
  return std::nullopt;
}

bool ClientSession::has_pending(
    const std::function<bool(const ControlMessage&)>& pred) {
  std::unique_lock<std::mutex> lk(bus_.engine().mu());
  return std::any_of(inbox_.begin(), inbox_.end(), pred);
}

std::optional<ControlMessage> ClientSession::recv_matching(
    const std::function<bool(const ControlMessage&)>& pred,
    std::optional<Tick> deadline) {
  std::unique_lock<std::mutex> lk(bus_.engine().mu());
  Engine& eng = bus_.engine();
  auto find = [&]() -> std::deque<ControlMessage>::iterator {
    for (auto it = inbox_.begin(); it != inbox_.end(); ++it)
      if (pred(*it)) return it;
    return inbox_.end();
  };
  for (;;) {
    if (!alive_) throw Error(ErrCode::SESSION_DEAD, "control session failed");
    auto it = find();
    if (it != inbox_.end()) {
      ControlMessage m = std::move(*it);
      inbox_.erase(it);
      return m;
    }
    bool ok = eng.wait_on(
        lk, *wake_, [&] { return !alive_ || find() != inbox_.end(); },
        deadline);
    if (!ok) return std::nullopt;
  }
}

void ClientSession::register_self(uint32_t node) {
  ControlMessage m;
  m.type = MsgType::REGISTER;
  m.sender = rank_;
  m.kind = 0;
  m.node = node;
  send(m);
  auto ack = recv_matching(
      [](const ControlMessage& x) { return x.type == MsgType::REGISTER_ACK; },
      bus_.engine().now() + bus_.engine().barrier_timeout());
  if (!ack)
    throw Error(ErrCode::CONNECT_FAILED, "registration timed out");
  if (ack->status != 0)
    throw Error(ErrCode::REGISTRATION_REJECTED, ack->text);
}

void ClientSession::barrier(const std::string& name) {
  Engine& eng = bus_.engine();
  eng.trace("barrier_enter:" + name);
  ControlMessage m;
  m.type = MsgType::BARRIER_ENTER;
  m.sender = rank_;
  m.text = name;
  send(m);
  auto is_release = [&](const ControlMessage& x) {
    return x.type == MsgType::BARRIER_RELEASE && x.text == name;
  };
  auto rel = recv_matching(is_release, eng.now() + eng.barrier_timeout());
  if (!rel) {
    // Timed out: abort the barrier for everyone, then consume our own
    // failure notification if it was produced.
    bus_.barrier_timeout(name);
    rel = try_take(is_release);
  }
  if (!rel || rel->status != 0) {
    eng.trace("barrier_abort:" + name);
    throw Error(ErrCode::BARRIER_ABORTED, "barrier " + name + " aborted");
  }
  eng.trace("barrier_release:" + name);
}

void ClientSession::publish(const std::string& key, const Bytes& value,
                            uint32_t generation) {
  ControlMessage m;
  m.type = MsgType::PUBLISH;
  m.sender = rank_;
  m.text = key;
  m.value = value;
  m.generation = generation;
  send(m);
}

std::optional<KvRecord> ClientSession::query(const std::string& key) {
  ControlMessage m;
  m.type = MsgType::QUERY;
  m.sender = rank_;
  m.text = key;
  send(m);
  auto rep = recv_matching(
      [](const ControlMessage& x) { return x.type == MsgType::QUERY_REPLY; },
      bus_.engine().now() + bus_.engine().barrier_timeout());
  if (!rep)
    throw Error(ErrCode::SESSION_DEAD, "query reply timed out");
  if (rep->status != 0) return std::nullopt;
  return KvRecord{std::move(rep->value), rep->generation, rep->seq};
}

std::optional<uint32_t> ClientSession::take_ckpt_request() {
  auto m = try_take([](const ControlMessage& x) {
    return x.type == MsgType::CKPT_REQUEST && x.ckpt_id != 0;
  });
  if (!m) return std::nullopt;
  return m->ckpt_id;
}

void ClientSession::ack_phase(uint32_t ckpt_id, PhaseCode phase) {
  ControlMessage m;
  m.type = MsgType::PHASE_ACK;
  m.sender = rank_;
  m.ckpt_id = ckpt_id;
  m.phase = static_cast<uint8_t>(phase);
  send(m);
}

// ---------------------------------------------------------------------------
// ControlBus
// ---------------------------------------------------------------------------

ControlBus::ControlBus(Engine& eng, uint32_t expected_participants,
                       std::optional<GateConfig> gate)
    : eng_(eng),
      core_(expected_participants),
      gate_(gate.value_or(GateConfig{})),
      events_("coordinator") {}

Tick ControlBus::jittered(const BackoffPolicy& policy, uint32_t rank,
                          int attempt) {
  if (policy.jitter <= 0) return 0;
  SplitMix64 g(substream_seed(policy.seed,
                              (static_cast<uint64_t>(rank) << 8) |
                                  static_cast<uint64_t>(attempt)));
  return static_cast<Tick>(g.below(static_cast<uint64_t>(policy.jitter) + 1));
}

void ControlBus::start_sub(uint32_t node, uint32_t ranks_on_node,
                           const BackoffPolicy& policy) {
  {
    std::unique_lock<std::mutex> lk(eng_.mu());
    if (subs_.contains(node))
      throw Error(ErrCode::DUPLICATE, "node already has a sub-coordinator");
    Sub& sub = subs_[node];
    sub.node = node;
    sub.expected_ranks = ranks_on_node;
    sub.alive = false;
  }
  // Gated connect to the root, retried per policy.
  for (int attempt = 0;; ++attempt) {
    std::unique_lock<std::mutex> lk(eng_.mu());
    if (gate_.try_begin()) {
      eng_.sleep_for(lk, gate_.handshake());
      gate_.end();
      Sub& sub = subs_.at(node);
      sub.root_session = core_.open_session();
      sub.alive = true;
      ControlMessage reg;
      reg.type = MsgType::REGISTER;
      reg.sender = sub_sender_id(node);
      reg.kind = 1;
      reg.node = node;
      to_root(sub.root_session, reg, lk);
      eng_.notify(events_);
      return;
    }
    if (attempt + 1 >= policy.max_attempts)
      throw Error(ErrCode::CONNECT_FAILED,
                  "sub-coordinator could not reach the root");
    Tick delay = (policy.base_delay << attempt) +
                 jittered(policy, sub_sender_id(node), attempt);
    eng_.sleep_for(lk, delay);
  }
}

std::unique_ptr<ClientSession> ControlBus::connect(uint32_t rank,
                                                   uint32_t node,
                                                   WaitChan* wake) {
  std::unique_lock<std::mutex> lk(eng_.mu());
  if (tree()) {
    auto it = subs_.find(node);
    if (it == subs_.end())
      throw Error(ErrCode::CONNECT_FAILED, "no sub-coordinator on node");
    // The node-local link is not gated, but the relay must be up.
    bool up = eng_.wait_on(
        lk, events_, [&] { return it->second.alive; },
        eng_.now() + eng_.barrier_timeout());
    if (!up || !it->second.alive)
      throw Error(ErrCode::CONNECT_FAILED, "sub-coordinator unavailable");
    auto session = std::unique_ptr<ClientSession>(
        new ClientSession(*this, rank, node, wake));
    session->via_sub_ = true;
    it->second.ranks[rank] = session.get();
    return session;
  }
  if (!gate_.try_begin())
    throw Error(ErrCode::CONNECT_FAILED, "connection killed under storm");
  struct GateSlot {
    ConnectionGate& g;
    ~GateSlot() { g.end(); }
  } slot{gate_};
  eng_.sleep_for(lk, gate_.handshake());
  auto session = std::unique_ptr<ClientSession>(
      new ClientSession(*this, rank, node, wake));
  session->root_session_ = core_.open_session();
  direct_[session->root_session_] = session.get();
  return session;
}

std::unique_ptr<ClientSession> ControlBus::connect_with_backoff(
    const BackoffPolicy& policy, uint32_t rank, uint32_t node,
    WaitChan* wake) {
  Tick start = 0;
  if (policy.stagger && policy.stagger_groups > 0) {
    start = policy.base_delay *
                static_cast<Tick>(rank % policy.stagger_groups) +
            jittered(policy, rank, 0);
  }
  {
    std::unique_lock<std::mutex> lk(eng_.mu());
    if (start > 0) eng_.sleep_for(lk, start);
  }
  for (int attempt = 0;; ++attempt) {
    try {
      return connect(rank, node, wake);
    } catch (const Error& e) {
      if (e.code() != ErrCode::CONNECT_FAILED ||
          attempt + 1 >= policy.max_attempts)
        throw;
    }
    Tick delay =
        (policy.base_delay << attempt) + jittered(policy, rank, attempt + 1);
    std::unique_lock<std::mutex> lk(eng_.mu());
    if (delay > 0) eng_.sleep_for(lk, delay);
    else eng_.yield(lk);
  }
}

void ControlBus::send_from(ClientSession& s, const ControlMessage& m) {
  std::unique_lock<std::mutex> lk(eng_.mu());
  if (!s.alive_) throw Error(ErrCode::SESSION_DEAD, "session closed");
  ++s.frames_sent_;
  if (s.via_sub_) {
    Sub& sub = subs_.at(s.node_);
    if (!sub.alive)
      throw Error(ErrCode::SESSION_DEAD, "sub-coordinator is down");
    relay_rank_frame(sub, m, lk);
  } else {
    to_root(s.root_session_, m, lk);
  }
}

void ControlBus::to_root(uint64_t session, const ControlMessage& m,
                         std::unique_lock<std::mutex>&) {
  if (tap_) tap_(+1, session, m);
  std::vector<CoordinatorCore::Out> outs;
  core_.handle(session, m, outs);
  route_outs(outs);
  eng_.notify(events_);
}

void ControlBus::route_outs(std::vector<CoordinatorCore::Out>& outs) {
  // Group frames per destination session, preserving order. A batch to
  // a sub-coordinator travels as one AGGREGATE frame.
  std::map<uint64_t, std::vector<ControlMessage>> by_session;
  std::vector<uint64_t> order;
  for (auto& o : outs) {
    if (!by_session.contains(o.session)) order.push_back(o.session);
    by_session[o.session].push_back(std::move(o.msg));
  }
  for (uint64_t sid : order) {
    auto& batch = by_session[sid];
    Sub* sub = nullptr;
    for (auto& [node, s] : subs_) {
      if (s.alive && s.root_session == sid) {
        sub = &s;
        break;
      }
    }
    if (sub != nullptr) {
      if (batch.size() > 1) {
        ControlMessage agg;
        agg.type = MsgType::AGGREGATE;
        agg.sender = 0;
        agg.inner = std::move(batch);
        if (tap_) tap_(-1, sid, agg);
        relay_root_frame(*sub, agg);
      } else {
        if (tap_) tap_(-1, sid, batch.front());
        relay_root_frame(*sub, batch.front());
      }
      continue;
    }
    auto it = direct_.find(sid);
    if (it == direct_.end()) continue;  // session died
    for (ControlMessage& m : batch) {
      if (tap_) tap_(-1, sid, m);
      deliver(*it->second, m);
    }
  }
}

void ControlBus::relay_rank_frame(Sub& sub, const ControlMessage& m,
                                  std::unique_lock<std::mutex>& lk) {
  switch (m.type) {
    case MsgType::BARRIER_ENTER: {
      auto& buf = sub.barrier_buf[m.text];
      buf.push_back(m);
      if (buf.size() == sub.expected_ranks) {
        ControlMessage agg;
        agg.type = MsgType::AGGREGATE;
        agg.sender = sub_sender_id(sub.node);
        agg.inner = std::move(buf);
        sub.barrier_buf.erase(m.text);
        to_root(sub.root_session, agg, lk);
      }
      return;
    }
    case MsgType::PHASE_ACK: {
      auto key = std::make_pair(m.ckpt_id, m.phase);
      auto& buf = sub.phase_buf[key];
      buf.push_back(m);
      if (buf.size() == sub.expected_ranks) {
        ControlMessage agg;
        agg.type = MsgType::AGGREGATE;
        agg.sender = sub_sender_id(sub.node);
        agg.inner = std::move(buf);
        sub.phase_buf.erase(key);
        to_root(sub.root_session, agg, lk);
      }
      return;
    }
    default:
      to_root(sub.root_session, m, lk);
      return;
  }
}

void ControlBus::relay_root_frame(Sub& sub, const ControlMessage& m) {
  auto deliver_one = [&](const ControlMessage& im) {
    if (im.sender == sub_sender_id(sub.node)) return;  // addressed to relay
    auto it = sub.ranks.find(im.sender);
    if (it == sub.ranks.end()) return;  // rank died
    deliver(*it->second, im);
  };
  if (m.type == MsgType::AGGREGATE) {
    for (const ControlMessage& im : m.inner) deliver_one(im);
  } else {
    deliver_one(m);
  }
}

void ControlBus::deliver(ClientSession& s, const ControlMessage& m) {
  s.inbox_.push_back(m);
  ++s.frames_received_;
  eng_.notify(*s.wake_);
}

uint32_t ControlBus::request_checkpoint() {
  std::unique_lock<std::mutex> lk(eng_.mu());
  std::vector<CoordinatorCore::Out> outs;
  uint32_t id = core_.request_checkpoint(outs);
  route_outs(outs);
  eng_.notify(events_);
  return id;
}

void ControlBus::barrier_timeout(const std::string& name) {
  std::unique_lock<std::mutex> lk(eng_.mu());
  std::vector<CoordinatorCore::Out> outs;
  core_.barrier_timeout(name, outs);
  route_outs(outs);
  eng_.notify(events_);
}

void ControlBus::kill_sub(uint32_t node) {
  std::unique_lock<std::mutex> lk(eng_.mu());
  auto it = subs_.find(node);
  if (it == subs_.end()) return;
  Sub& sub = it->second;
  sub.alive = false;
  for (auto& [rank, session] : sub.ranks) {
    session->alive_ = false;
    eng_.notify(*session->wake_);
  }
  std::vector<CoordinatorCore::Out> outs;
  core_.session_closed(sub.root_session, outs);
  route_outs(outs);
  eng_.notify(events_);
}

void ControlBus::session_gone(ClientSession& s) {
  std::unique_lock<std::mutex> lk(eng_.mu());
  std::vector<CoordinatorCore::Out> outs;
  if (s.via_sub_) {
    auto it = subs_.find(s.node_);
    if (it != subs_.end()) it->second.ranks.erase(s.rank_);
    core_.participant_dead(s.rank_, outs);
  } else if (s.root_session_ != 0) {
    direct_.erase(s.root_session_);
    core_.session_closed(s.root_session_, outs);
  }
  route_outs(outs);
  eng_.notify(events_);
}

}  // namespace ckptf
