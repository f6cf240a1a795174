// Copyright 2026 The ckptf Authors
// SPDX-License-Identifier: Apache-2.0

#include "ckptf/runtime.hpp"

#include <algorithm>
#include <atomic>
#include <cassert>
#include <chrono>
#include <deque>
#include <exception>
#include <queue>
#include <sstream>
#include <thread>

namespace ckptf {

namespace {

// ---------------------------------------------------------------------------
// VirtualRuntime
//
// Each actor is a real thread, but a baton guarantees that exactly one
// runs at a time. The scheduler (the thread inside run_all) picks the
// next runnable actor FIFO; when nothing is runnable it advances the
// clock to the earliest deadline, waking sleepers in (tick, actor id)
// order. All scheduling choices are functions of program state only,
// never of OS thread timing, which is what makes runs replayable.
// ---------------------------------------------------------------------------

class VirtualRuntimeImpl final : public Runtime {
  enum class St : uint8_t { CREATED, READY, RUNNING, PARKED, SLEEPING, DONE };

  struct Actor {
    int id = -1;
    std::string name;
    std::thread thread;
    St st = St::CREATED;
    uint64_t epoch = 0;  // invalidates stale deadline entries
    WaitChan* parked_on = nullptr;
    bool go = false;
    std::condition_variable cv;  // baton hand-off to this actor
    std::function<void()> body;
    std::exception_ptr error;
  };

  struct Deadline {
    Tick tick;
    int id;
    uint64_t epoch;
    bool operator>(const Deadline& o) const {
      return tick != o.tick ? tick > o.tick : id > o.id;
    }
  };

 public:
  ~VirtualRuntimeImpl() override {
    teardown_and_join();
  }

  ClockMode mode() const override { return ClockMode::VIRTUAL; }
  Tick now() const override { return now_.load(std::memory_order_relaxed); }

  void spawn(std::string name, std::function<void()> body) override {
    std::unique_lock<std::mutex> g(mu_);
    int id = static_cast<int>(actors_.size());
    actors_.push_back(std::make_unique<Actor>());
    Actor& a = *actors_.back();
    a.id = id;
    a.name = std::move(name);
    a.body = std::move(body);
    a.st = St::READY;
    ready_.push_back(id);
    ++live_;
    a.thread = std::thread([this, id] { actor_main(id); });
  }

  void run_all() override {
    std::unique_lock<std::mutex> g(mu_);
    while (live_ > 0) {
      if (!ready_.empty()) {
        int id = ready_.front();
        ready_.pop_front();
        dispatch(g, id);
        continue;
      }
      // Advance the clock to the next armed deadline.
      bool advanced = false;
      while (!deadlines_.empty()) {
        Deadline d = deadlines_.top();
        Actor& a = *actors_[d.id];
        if (d.epoch != a.epoch ||
            (a.st != St::PARKED && a.st != St::SLEEPING)) {
          deadlines_.pop();  // stale
          continue;
        }
        deadlines_.pop();
        if (d.tick > now_.load()) now_.store(d.tick);
        unpark_locked(a);
        dispatch(g, a.id);
        advanced = true;
        break;
      }
      if (!advanced && live_ > 0 && ready_.empty()) {
        std::string diag = deadlock_diagnostic();
        teardown_locked(g);
        throw EngineDeadlock(diag);
      }
    }
    // All actors finished; surface the first failure.
    join_finished_locked(g);
    for (auto& a : actors_) {
      if (a->error) std::rethrow_exception(a->error);
    }
  }

  bool wait(std::unique_lock<std::mutex>& lk, WaitChan& ch,
            const std::function<bool()>& pred,
            std::optional<Tick> deadline) override {
    for (;;) {
      if (pred()) return true;
      if (deadline && now() >= *deadline) return pred();
      Actor& a = self();
      {
        std::unique_lock<std::mutex> g(mu_);
        ++a.epoch;
        a.st = St::PARKED;
        a.parked_on = &ch;
        ch.parked.push_back(a.id);
        if (deadline) deadlines_.push({*deadline, a.id, a.epoch});
      }
      lk.unlock();
      suspend(a);
      lk.lock();
    }
  }

  void sleep_until(std::unique_lock<std::mutex>& lk, Tick t) override {
    if (t <= now()) {
      yield(lk);
      return;
    }
    Actor& a = self();
    {
      std::unique_lock<std::mutex> g(mu_);
      ++a.epoch;
      a.st = St::SLEEPING;
      a.parked_on = nullptr;
      deadlines_.push({t, a.id, a.epoch});
    }
    lk.unlock();
    suspend(a);
    lk.lock();
  }

  void yield(std::unique_lock<std::mutex>& lk) override {
    Actor& a = self();
    {
      std::unique_lock<std::mutex> g(mu_);
      ++a.epoch;
      a.st = St::READY;
      a.parked_on = nullptr;
      ready_.push_back(a.id);
    }
    lk.unlock();
    suspend(a);
    lk.lock();
  }

  void notify(WaitChan& ch) override {
    std::unique_lock<std::mutex> g(mu_);
    for (int id : ch.parked) {
      Actor& a = *actors_[id];
      if (a.st != St::PARKED || a.parked_on != &ch) continue;
      ++a.epoch;
      a.st = St::READY;
      a.parked_on = nullptr;
      ready_.push_back(id);
    }
    ch.parked.clear();
  }

  void wake_all() override {
    std::unique_lock<std::mutex> g(mu_);
    for (auto& ap : actors_) {
      Actor& a = *ap;
      if (a.st == St::PARKED || a.st == St::SLEEPING) {
        if (a.parked_on) {
          auto& v = a.parked_on->parked;
          v.erase(std::remove(v.begin(), v.end(), a.id), v.end());
          a.parked_on = nullptr;
        }
        ++a.epoch;
        a.st = St::READY;
        ready_.push_back(a.id);
      }
    }
  }

  void advance_clock(Tick to) {
    std::unique_lock<std::mutex> g(mu_);
    assert(live_ == 0 && "manual_advance requires no live actors");
    if (to > now_.load()) now_.store(to);
  }

 private:
  static thread_local Actor* current_;

  Actor& self() {
    assert(current_ && "must be called from an actor");
    return *current_;
  }

  void actor_main(int id) {
    Actor& a = *actors_[id];  // actors_ never shrinks
    current_ = &a;
    // Wait for the first dispatch. `go` stays true while the actor runs;
    // it is cleared only when the actor hands the baton back.
    {
      std::unique_lock<std::mutex> g(mu_);
      a.cv.wait(g, [&] { return a.go || teardown_; });
      if (teardown_) {
        finish_locked(a);
        return;
      }
    }
    try {
      a.body();
    } catch (const TeardownSignal&) {
      // unwound by teardown
    } catch (...) {
      a.error = std::current_exception();
    }
    std::unique_lock<std::mutex> g(mu_);
    finish_locked(a);
  }

  void finish_locked(Actor& a) {
    a.st = St::DONE;
    a.go = false;
    --live_;
    sched_cv_.notify_all();
  }

  // Actor side: hand the baton back and block until re-dispatched.
  void suspend(Actor& a) {
    std::unique_lock<std::mutex> g(mu_);
    a.go = false;
    sched_cv_.notify_all();
    a.cv.wait(g, [&] { return a.go || teardown_; });
    if (teardown_) throw TeardownSignal{};
  }

  // Scheduler side: run one actor until it suspends or finishes.
  void dispatch(std::unique_lock<std::mutex>& g, int id) {
    Actor& a = *actors_[id];
    if (a.st == St::DONE) return;
    a.st = St::RUNNING;
    a.go = true;
    a.cv.notify_all();
    sched_cv_.wait(g, [&] { return !a.go || a.st == St::DONE; });
    if (a.error && !teardown_) {
      std::exception_ptr err = a.error;
      teardown_locked(g);
      std::rethrow_exception(err);
    }
  }

  void unpark_locked(Actor& a) {
    if (a.parked_on) {
      auto& v = a.parked_on->parked;
      v.erase(std::remove(v.begin(), v.end(), a.id), v.end());
      a.parked_on = nullptr;
    }
    ++a.epoch;
    a.st = St::READY;
  }

  std::string deadlock_diagnostic() const {
    std::ostringstream os;
    os << "virtual-time deadlock at tick " << now_.load() << ": ";
    for (const auto& ap : actors_) {
      if (ap->st == St::DONE) continue;
      os << "[" << ap->name << " "
         << (ap->st == St::PARKED
                 ? (ap->parked_on ? "parked on " + ap->parked_on->name()
                                  : "parked")
                 : "waiting")
         << "] ";
    }
    return os.str();
  }

  void teardown_locked(std::unique_lock<std::mutex>& g) {
    teardown_ = true;
    for (auto& ap : actors_) ap->cv.notify_all();
    sched_cv_.wait(g, [&] { return live_ == 0; });
    join_finished_locked(g);
  }

  void join_finished_locked(std::unique_lock<std::mutex>& g) {
    // Threads are done running actor code; joining outside would race
    // nothing, but keep it simple: release the lock around joins.
    std::vector<std::thread> ts;
    for (auto& ap : actors_) {
      if (ap->thread.joinable()) ts.push_back(std::move(ap->thread));
    }
    g.unlock();
    for (auto& t : ts) t.join();
    g.lock();
  }

  void teardown_and_join() {
    std::unique_lock<std::mutex> g(mu_);
    if (live_ > 0) teardown_locked(g);
    else join_finished_locked(g);
  }

  std::mutex mu_;
  std::condition_variable sched_cv_;
  std::deque<int> ready_;
  std::priority_queue<Deadline, std::vector<Deadline>, std::greater<>> deadlines_;
  std::vector<std::unique_ptr<Actor>> actors_;
  std::atomic<Tick> now_{0};
  int live_ = 0;
  bool teardown_ = false;
};

thread_local VirtualRuntimeImpl::Actor* VirtualRuntimeImpl::current_ = nullptr;

// ---------------------------------------------------------------------------
// WallRuntime: plain threads, steady clock in milliseconds. One shared
// condition variable serves every WaitChan; predicates filter wakeups.
// ---------------------------------------------------------------------------

class WallRuntimeImpl final : public Runtime {
 public:
  WallRuntimeImpl() : start_(std::chrono::steady_clock::now()) {}

  ~WallRuntimeImpl() override {
    std::unique_lock<std::mutex> g(mu_);
    join_locked(g);
  }

  ClockMode mode() const override { return ClockMode::WALL; }

  Tick now() const override {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

  void spawn(std::string /*name*/, std::function<void()> body) override {
    std::unique_lock<std::mutex> g(mu_);
    ++spawned_;
    threads_.emplace_back([this, body = std::move(body)] {
      try {
        body();
      } catch (const TeardownSignal&) {
      } catch (...) {
        std::unique_lock<std::mutex> g2(mu_);
        if (!first_error_) first_error_ = std::current_exception();
      }
      std::unique_lock<std::mutex> g2(mu_);
      ++done_;
      done_cv_.notify_all();
    });
  }

  void run_all() override {
    std::unique_lock<std::mutex> g(mu_);
    done_cv_.wait(g, [&] { return done_ == spawned_; });
    join_locked(g);
    if (first_error_) {
      auto e = first_error_;
      first_error_ = nullptr;
      std::rethrow_exception(e);
    }
  }

  bool wait(std::unique_lock<std::mutex>& lk, WaitChan&,
            const std::function<bool()>& pred,
            std::optional<Tick> deadline) override {
    if (!deadline) {
      cv_.wait(lk, pred);
      return true;
    }
    return cv_.wait_until(lk, start_ + std::chrono::milliseconds(*deadline),
                          pred);
  }

  void sleep_until(std::unique_lock<std::mutex>& lk, Tick t) override {
    uint64_t gen = woken_.load(std::memory_order_relaxed);
    lk.unlock();
    // Chunked so wake_all (kill paths) is observed promptly by callers
    // that loop around sleep.
    while (now() < t && woken_.load(std::memory_order_relaxed) == gen) {
      Tick step = std::min<Tick>(t - now(), 10);
      if (step > 0)
        std::this_thread::sleep_for(std::chrono::milliseconds(step));
    }
    lk.lock();
  }

  void yield(std::unique_lock<std::mutex>& lk) override {
    lk.unlock();
    std::this_thread::yield();
    lk.lock();
  }

  void notify(WaitChan&) override { cv_.notify_all(); }

  void wake_all() override {
    woken_.fetch_add(1, std::memory_order_relaxed);
    cv_.notify_all();
  }

 private:
  void join_locked(std::unique_lock<std::mutex>& g) {
    std::vector<std::thread> ts;
    ts.swap(threads_);
    g.unlock();
    for (auto& t : ts)
      if (t.joinable()) t.join();
    g.lock();
  }

  std::chrono::steady_clock::time_point start_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  std::vector<std::thread> threads_;
  std::atomic<uint64_t> woken_{0};
  int spawned_ = 0;
  int done_ = 0;
  std::exception_ptr first_error_;
};

}  // namespace

std::unique_ptr<Runtime> make_virtual_runtime() {
  return std::make_unique<VirtualRuntimeImpl>();
}

std::unique_ptr<Runtime> make_wall_runtime() {
  return std::make_unique<WallRuntimeImpl>();
}

void manual_advance(Runtime& rt, Tick to) {
  auto* v = dynamic_cast<VirtualRuntimeImpl*>(&rt);
  assert(v && "manual_advance only applies to the virtual runtime");
  v->advance_clock(to);
}

}  // namespace ckptf
