// Copyright 2026 The ckptf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ckptf {

using Tick = int64_t;

enum class ClockMode : uint8_t { VIRTUAL, WALL };

// Parking spot for actors waiting on a state change. The owner mutates
// shared state, then notifies the channel. In VIRTUAL mode the channel
// keeps its parked actors so wake order stays deterministic; in WALL
// mode all channels share the runtime's condition variable.
class WaitChan {
 public:
  explicit WaitChan(std::string name = {}) : name_(std::move(name)) {}
  WaitChan(const WaitChan&) = delete;
  WaitChan& operator=(const WaitChan&) = delete;
  const std::string& name() const { return name_; }

  // VIRTUAL-mode parked actor ids, in park order.
  std::vector<int> parked;

 private:
  std::string name_;
};

struct EngineDeadlock : std::runtime_error {
  explicit EngineDeadlock(const std::string& what) : std::runtime_error(what) {}
};

// Thrown inside actors when the runtime tears down (after another
// actor failed, or on deadlock). Actor bodies must let it propagate.
struct TeardownSignal {};

// Execution substrate for actors. VIRTUAL: a deterministic cooperative
// scheduler over a virtual tick clock; exactly one actor runs at a
// time. WALL: plain threads over a millisecond steady clock.
//
// Locking contract: wait/sleep_until/yield are called from inside an
// actor with `lk` held on the engine state mutex; they release it while
// suspended and reacquire it before returning. wait() returns false iff
// the deadline passed with the predicate still false; it may also wake
// spuriously in WALL mode (the predicate loop handles that). sleep_until
// may return before the target tick after wake_all (callers re-check).
class Runtime {
 public:
  virtual ~Runtime() = default;

  virtual ClockMode mode() const = 0;
  virtual Tick now() const = 0;

  virtual void spawn(std::string name, std::function<void()> body) = 0;
  virtual void run_all() = 0;

  virtual bool wait(std::unique_lock<std::mutex>& lk, WaitChan& ch,
                    const std::function<bool()>& pred,
                    std::optional<Tick> deadline) = 0;
  virtual void sleep_until(std::unique_lock<std::mutex>& lk, Tick t) = 0;
  virtual void yield(std::unique_lock<std::mutex>& lk) = 0;

  virtual void notify(WaitChan& ch) = 0;
  // Wakes every suspended actor so it re-examines its predicate.
  virtual void wake_all() = 0;
};

std::unique_ptr<Runtime> make_virtual_runtime();
std::unique_ptr<Runtime> make_wall_runtime();

// Advances the virtual clock directly. Only valid on a virtual runtime
// with no live actors (driverless unit tests).
void manual_advance(Runtime& rt, Tick to);

}  // namespace ckptf
