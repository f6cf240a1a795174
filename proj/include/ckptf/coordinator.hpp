// Copyright 2026 The ckptf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ckptf/engine.hpp"
#include "ckptf/wire.hpp"

namespace ckptf {

// Checkpoint phase codes carried by PHASE_ACK.
enum class PhaseCode : uint8_t {
  SUSPENDED = 1,
  DRAINING = 2,
  WRITING = 3,
  RESUMING = 4,
  RUNNING = 5,
  ABORT = 0xFF,
};

struct KvRecord {
  Bytes value;
  uint32_t generation = 0;
  uint64_t seq = 0;
};

// Root coordinator state machine. Transport-agnostic: it consumes one
// frame at a time (in one total order, matching a single-threaded
// event loop) and emits frames addressed to transport sessions. In
// TREE topologies several participants share one session and replies
// are routed by their `sender` field.
class CoordinatorCore {
 public:
  explicit CoordinatorCore(uint32_t expected_participants);

  struct Out {
    uint64_t session = 0;
    ControlMessage msg;
  };

  uint64_t open_session();
  void handle(uint64_t session, const ControlMessage& m,
              std::vector<Out>& out);
  void session_closed(uint64_t session, std::vector<Out>& out);
  void participant_dead(uint32_t rank, std::vector<Out>& out);

  // Client-side barrier timeout: aborts the named barrier's current
  // cycle, releasing every entrant with a failure status.
  void barrier_timeout(const std::string& name, std::vector<Out>& out);

  // Starts a coordinated checkpoint; one CKPT_REQUEST per participant.
  // Rejected while another checkpoint is outstanding.
  uint32_t request_checkpoint(std::vector<Out>& out);

  uint32_t expected_participants() const { return expected_; }
  size_t session_count() const { return live_sessions_.size(); }
  uint32_t registered_count() const;
  uint32_t checkpoints_completed() const { return ckpts_completed_; }
  bool checkpoint_in_progress() const { return ckpt_in_progress_; }

  const std::vector<KvRecord>* kv_history(const std::string& key) const;
  std::optional<KvRecord> kv_latest(const std::string& key) const;

 private:
  struct Participant {
    bool registered = false;
    bool alive = false;
    uint64_t session = 0;
  };
  struct Barrier {
    uint64_t cycle = 0;
    std::vector<uint32_t> entered;  // submission order
  };

  void enter_barrier(uint32_t rank, const std::string& name,
                     std::vector<Out>& out);
  void release_barrier(const std::string& name, uint8_t status,
                       std::vector<Out>& out);
  void abort_barriers_of_dead(std::vector<Out>& out);
  void ack_phase(const ControlMessage& m, std::vector<Out>& out);
  Out to_rank(uint32_t rank, ControlMessage m) const;

  uint32_t expected_;
  uint64_t next_session_ = 1;
  std::set<uint64_t> live_sessions_;
  std::vector<Participant> participants_;
  std::map<std::string, Barrier> barriers_;
  std::map<std::string, std::vector<KvRecord>> kv_;
  uint64_t kv_seq_ = 0;
  uint32_t next_ckpt_id_ = 1;
  bool ckpt_in_progress_ = false;
  uint32_t ckpt_current_ = 0;
  std::set<uint32_t> ckpt_resumed_;
  std::set<uint32_t> ckpt_aborted_ids_;
  uint32_t ckpts_completed_ = 0;
};

// Limits concurrent connection handshakes, standing in for the kernel
// and switch behavior that kills processes under connect storms. An
// attempt beyond the limit fails immediately.
struct GateConfig {
  uint32_t limit = 0;  // 0 = unlimited
  Tick handshake = 5;
};

class ConnectionGate {
 public:
  explicit ConnectionGate(GateConfig cfg) : cfg_(cfg) {}

  bool try_begin() {
    ++attempts_;
    ++active_;
    peak_ = std::max(peak_, active_);
    if (cfg_.limit > 0 && active_ > cfg_.limit) {
      --active_;
      ++killed_;
      return false;
    }
    return true;
  }
  void end() { --active_; }

  Tick handshake() const { return cfg_.handshake; }
  uint32_t peak_concurrent() const { return peak_; }
  uint32_t killed() const { return killed_; }
  uint32_t attempts() const { return attempts_; }

 private:
  GateConfig cfg_;
  uint32_t active_ = 0;
  uint32_t peak_ = 0;
  uint32_t killed_ = 0;
  uint32_t attempts_ = 0;
};

// Staggered-connect policy. A rank's first attempt starts at
// base_delay * (rank mod stagger_groups) plus uniform jitter; retries
// back off exponentially from base_delay.
struct BackoffPolicy {
  Tick base_delay = 5;
  Tick jitter = 0;
  uint32_t max_concurrent_bursts = 8;
  uint32_t stagger_groups = 1;  // harness: ceil(ranks / bursts)
  int max_attempts = 5;
  uint64_t seed = 0;
  bool stagger = true;  // false = storm reproduction mode

  static BackoffPolicy storm() {
    BackoffPolicy p;
    p.base_delay = 0;
    p.jitter = 0;
    p.stagger_groups = 1;
    p.stagger = false;
    return p;
  }
};

class ControlBus;

// Client endpoint of the control plane: an inbox fed by the bus plus
// blocking conveniences layered on it. One per rank (or per
// sub-coordinator link), usable from both the application and the
// checkpoint agent of its rank.
class ClientSession {
 public:
  ~ClientSession();
  ClientSession(const ClientSession&) = delete;
  ClientSession& operator=(const ClientSession&) = delete;

  uint32_t rank() const { return rank_; }
  void send(const ControlMessage& m);

  // Blocks until a message satisfying `pred` arrives; consumes and
  // returns it. Messages not matching stay queued. Returns nullopt on
  // deadline; throws SESSION_DEAD if the session failed.
  std::optional<ControlMessage> recv_matching(
      const std::function<bool(const ControlMessage&)>& pred,
      std::optional<Tick> deadline = std::nullopt);
  std::optional<ControlMessage> try_take(
      const std::function<bool(const ControlMessage&)>& pred);
  bool has_pending(const std::function<bool(const ControlMessage&)>& pred);

  // Conveniences.
  void register_self(uint32_t node);
  void barrier(const std::string& name);  // throws BARRIER_ABORTED
  void publish(const std::string& key, const Bytes& value,
               uint32_t generation);
  std::optional<KvRecord> query(const std::string& key);
  std::optional<uint32_t> take_ckpt_request();
  void ack_phase(uint32_t ckpt_id, PhaseCode phase);

  uint64_t frames_sent() const { return frames_sent_; }
  uint64_t frames_received() const { return frames_received_; }
  bool alive() const { return alive_; }

 private:
  friend class ControlBus;
  ClientSession(ControlBus& bus, uint32_t rank, uint32_t node,
                WaitChan* wake);

  ControlBus& bus_;
  uint32_t rank_;
  uint32_t node_;
  WaitChan* wake_;
  WaitChan own_wake_;
  std::deque<ControlMessage> inbox_;
  uint64_t frames_sent_ = 0;
  uint64_t frames_received_ = 0;
  bool alive_ = true;
  bool via_sub_ = false;
  uint64_t root_session_ = 0;  // FLAT topology only
};

// In-memory control-plane transport: the root coordinator core plus
// optional per-node sub-coordinator relays and the connection gate.
// Frame routing runs synchronously under the engine lock, which is
// what makes VIRTUAL-mode runs replayable.
class ControlBus {
 public:
  ControlBus(Engine& eng, uint32_t expected_participants,
             std::optional<GateConfig> gate = std::nullopt);

  // TREE topology: create the relay for `node` before its ranks
  // connect. The relay's own root connection goes through the gate.
  void start_sub(uint32_t node, uint32_t ranks_on_node,
                 const BackoffPolicy& policy);
  bool tree() const { return !subs_.empty(); }

  // Establishes a session, charging the connection gate (root sessions
  // only; rank-to-sub links are node-local). Throws CONNECT_FAILED.
  std::unique_ptr<ClientSession> connect(uint32_t rank, uint32_t node,
                                         WaitChan* wake);
  std::unique_ptr<ClientSession> connect_with_backoff(
      const BackoffPolicy& policy, uint32_t rank, uint32_t node,
      WaitChan* wake);

  uint32_t request_checkpoint();
  void barrier_timeout(const std::string& name);

  // Fault injection: the relay on `node` dies; its rank sessions fail.
  void kill_sub(uint32_t node);

  CoordinatorCore& core() { return core_; }
  ConnectionGate& gate() { return gate_; }
  Engine& engine() { return eng_; }
  WaitChan& events() { return events_; }

  // Test tap observing every frame crossing the root boundary
  // (direction: +1 toward root, -1 from root).
  using FrameTap = std::function<void(int direction, uint64_t session,
                                      const ControlMessage&)>;
  void set_frame_tap(FrameTap tap) { tap_ = std::move(tap); }

 private:
  friend class ClientSession;

  struct Sub {
    uint32_t node = 0;
    uint64_t root_session = 0;
    uint32_t expected_ranks = 0;
    bool alive = true;
    std::map<uint32_t, ClientSession*> ranks;
    std::map<std::string, std::vector<ControlMessage>> barrier_buf;
    std::map<std::pair<uint32_t, uint8_t>, std::vector<ControlMessage>>
        phase_buf;
  };

  void send_from(ClientSession& s, const ControlMessage& m);
  void to_root(uint64_t session, const ControlMessage& m,
               std::unique_lock<std::mutex>& lk);
  void route_outs(std::vector<CoordinatorCore::Out>& outs);
  void deliver(ClientSession& s, const ControlMessage& m);
  void relay_rank_frame(Sub& sub, const ControlMessage& m,
                        std::unique_lock<std::mutex>& lk);
  void relay_root_frame(Sub& sub, const ControlMessage& m);
  void session_gone(ClientSession& s);
  Tick jittered(const BackoffPolicy& policy, uint32_t rank, int attempt);

  Engine& eng_;
  CoordinatorCore core_;
  ConnectionGate gate_;
  WaitChan events_;
  std::map<uint32_t, Sub> subs_;                 // node -> relay
  std::map<uint64_t, ClientSession*> direct_;    // session -> client
  FrameTap tap_;
};

}  // namespace ckptf
