// Copyright 2026 The ckptf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ckptf/runtime.hpp"

namespace ckptf {

enum class ErrCode {
  DUPLICATE,
  STALE_GENERATION,
  MODE_MISMATCH,
  ALREADY_CONNECTED,
  NOT_CONNECTED,
  QUEUE_FULL,
  MTU_EXCEEDED,
  NOT_QUIESCED,
  REGISTRATION_REJECTED,
  SESSION_DEAD,
  BARRIER_ABORTED,
  CKPT_IN_PROGRESS,
  DRAIN_TIMEOUT,
  RESOLVE_FAILED,
  CONNECT_FAILED,
  BAD_IMAGE,
  SPEC_MISMATCH,
  IO_FAILED,
  INVALID_ARGUMENT,
};

class Error : public std::runtime_error {
 public:
  Error(ErrCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrCode code() const { return code_; }

 private:
  ErrCode code_;
};

// Thrown out of blocking calls when the rank's process was destroyed
// (kill_all). Rank actor bodies catch it at top level and exit.
struct RankKilled {};

// Identity of the actor currently executing, stashed thread-local by
// the engine's spawn wrapper so that deep module code can honor kills
// and record per-rank event traces without threading a context object
// through every call.
struct ActorEnv {
  class Engine* engine = nullptr;
  uint32_t rank = UINT32_MAX;
  int64_t birth_epoch = std::numeric_limits<int64_t>::max();  // unkillable
  std::vector<std::string>* trace = nullptr;
};

ActorEnv& current_actor_env();

// Shared execution context: the state mutex every module locks, the
// runtime that schedules actors, and the kill epoch that invalidates
// rank actors wholesale on kill_all.
class Engine {
 public:
  explicit Engine(ClockMode mode);

  ClockMode mode() const { return rt_->mode(); }
  Runtime& rt() { return *rt_; }
  std::mutex& mu() { return mu_; }
  Tick now() const { return rt_->now(); }

  // Spawns an actor. Killable actors observe kill_ranks(); the driver
  // and service actors pass killable = false.
  void spawn(std::string name, uint32_t rank, bool killable,
             std::vector<std::string>* trace, std::function<void()> body);
  void run_all() { rt_->run_all(); }

  // Blocking helpers. All take the engine lock (held), release it while
  // suspended, and reacquire it. They throw RankKilled if the calling
  // actor's generation was killed while waiting.
  bool wait_on(std::unique_lock<std::mutex>& lk, WaitChan& ch,
               const std::function<bool()>& pred,
               std::optional<Tick> deadline = std::nullopt);
  void sleep_until(std::unique_lock<std::mutex>& lk, Tick t);
  void sleep_for(std::unique_lock<std::mutex>& lk, Tick d) {
    sleep_until(lk, now() + d);
  }
  void yield(std::unique_lock<std::mutex>& lk);
  void notify(WaitChan& ch) { rt_->notify(ch); }

  // Destroys all rank actors spawned before this call: they observe the
  // kill at their next blocking operation or kill check.
  void kill_ranks();
  int64_t kill_epoch() const { return kill_epoch_; }
  // Throws RankKilled if the current actor is dead. Cheap; called at
  // workload step boundaries.
  void check_killed();

  void trace(const std::string& event);

  Tick barrier_timeout() const { return barrier_timeout_; }
  void set_barrier_timeout(Tick t) { barrier_timeout_ = t; }

 private:
  bool env_killed(const ActorEnv& env) const {
    return kill_epoch_ > env.birth_epoch;
  }

  std::unique_ptr<Runtime> rt_;
  std::mutex mu_;
  int64_t kill_epoch_ = 0;
  Tick barrier_timeout_;
};

}  // namespace ckptf
