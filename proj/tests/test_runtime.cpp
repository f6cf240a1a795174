// Copyright 2026 The ckptf Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include <vector>

#include "ckptf/engine.hpp"

using namespace ckptf;

TEST_CASE("virtual runtime interleaves actors deterministically") {
  auto run_once = [] {
    Engine eng(ClockMode::VIRTUAL);
    std::vector<int> order;
    for (int i = 0; i < 3; ++i) {
      eng.spawn("a" + std::to_string(i), i, false, nullptr, [&eng, &order, i] {
        std::unique_lock<std::mutex> lk(eng.mu());
        for (int k = 0; k < 3; ++k) {
          order.push_back(i);
          eng.yield(lk);
        }
      });
    }
    eng.run_all();
    return order;
  };
  auto a = run_once();
  auto b = run_once();
  CHECK(a == b);
  CHECK(a.size() == 9);
  CHECK(a[0] == 0);
  CHECK(a[1] == 1);
  CHECK(a[2] == 2);
}

TEST_CASE("virtual time advances to the earliest sleeper") {
  Engine eng(ClockMode::VIRTUAL);
  std::vector<std::pair<int, Tick>> wakes;
  eng.spawn("late", 0, false, nullptr, [&] {
    std::unique_lock<std::mutex> lk(eng.mu());
    eng.sleep_until(lk, 100);
    wakes.push_back({0, eng.now()});
  });
  eng.spawn("early", 1, false, nullptr, [&] {
    std::unique_lock<std::mutex> lk(eng.mu());
    eng.sleep_until(lk, 10);
    wakes.push_back({1, eng.now()});
  });
  eng.run_all();
  REQUIRE(wakes.size() == 2);
  CHECK(wakes[0] == std::pair<int, Tick>{1, 10});
  CHECK(wakes[1] == std::pair<int, Tick>{0, 100});
}

TEST_CASE("wait with deadline times out at the deadline tick") {
  Engine eng(ClockMode::VIRTUAL);
  WaitChan never("never");
  bool ok = true;
  Tick woke_at = -1;
  eng.spawn("w", 0, false, nullptr, [&] {
    std::unique_lock<std::mutex> lk(eng.mu());
    ok = eng.wait_on(lk, never, [] { return false; }, 50);
    woke_at = eng.now();
  });
  eng.run_all();
  CHECK_FALSE(ok);
  CHECK(woke_at == 50);
}

TEST_CASE("notify wakes parked actors") {
  Engine eng(ClockMode::VIRTUAL);
  WaitChan ch("ch");
  bool flag = false;
  std::vector<int> events;
  eng.spawn("waiter", 0, false, nullptr, [&] {
    std::unique_lock<std::mutex> lk(eng.mu());
    eng.wait_on(lk, ch, [&] { return flag; });
    events.push_back(1);
  });
  eng.spawn("setter", 1, false, nullptr, [&] {
    std::unique_lock<std::mutex> lk(eng.mu());
    eng.sleep_until(lk, 5);
    flag = true;
    eng.notify(ch);
    events.push_back(0);
  });
  eng.run_all();
  REQUIRE(events.size() == 2);
  CHECK(events[0] == 0);
  CHECK(events[1] == 1);
}

TEST_CASE("deadlock is detected and reported") {
  Engine eng(ClockMode::VIRTUAL);
  WaitChan ch("stuck");
  eng.spawn("w", 0, false, nullptr, [&] {
    std::unique_lock<std::mutex> lk(eng.mu());
    eng.wait_on(lk, ch, [] { return false; });
  });
  CHECK_THROWS_AS(eng.run_all(), EngineDeadlock);
}

TEST_CASE("kill_ranks interrupts killable actors only") {
  Engine eng(ClockMode::VIRTUAL);
  WaitChan ch("ch");
  bool rank_killed = false;
  bool driver_done = false;
  eng.spawn("rank", 0, true, nullptr, [&] {
    std::unique_lock<std::mutex> lk(eng.mu());
    try {
      eng.wait_on(lk, ch, [] { return false; });
    } catch (const RankKilled&) {
      rank_killed = true;
    }
  });
  eng.spawn("driver", 0, false, nullptr, [&] {
    std::unique_lock<std::mutex> lk(eng.mu());
    eng.sleep_until(lk, 10);
    eng.kill_ranks();
    driver_done = true;
  });
  eng.run_all();
  CHECK(rank_killed);
  CHECK(driver_done);
}

TEST_CASE("actors spawned mid-run are scheduled") {
  Engine eng(ClockMode::VIRTUAL);
  std::vector<int> order;
  eng.spawn("parent", 0, false, nullptr, [&] {
    {
      std::unique_lock<std::mutex> lk(eng.mu());
      order.push_back(1);
    }
    eng.spawn("child", 1, false, nullptr, [&] {
      std::unique_lock<std::mutex> lk(eng.mu());
      order.push_back(2);
    });
    std::unique_lock<std::mutex> lk(eng.mu());
    eng.sleep_until(lk, 5);
    order.push_back(3);
  });
  eng.run_all();
  CHECK(order == std::vector<int>{1, 2, 3});
}

TEST_CASE("wall runtime runs actors to completion") {
  Engine eng(ClockMode::WALL);
  WaitChan ch("ch");
  bool flag = false;
  int got = 0;
  eng.spawn("waiter", 0, false, nullptr, [&] {
    std::unique_lock<std::mutex> lk(eng.mu());
    eng.wait_on(lk, ch, [&] { return flag; }, eng.now() + 2000);
    if (flag) ++got;
  });
  eng.spawn("setter", 1, false, nullptr, [&] {
    std::unique_lock<std::mutex> lk(eng.mu());
    eng.sleep_for(lk, 20);
    flag = true;
    eng.notify(ch);
  });
  eng.run_all();
  CHECK(got == 1);
}
