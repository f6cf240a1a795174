// Copyright 2026 The ckptf Authors
// SPDX-License-Identifier: Apache-2.0

#include "ckptf/engine.hpp"

namespace ckptf {

namespace {
thread_local ActorEnv g_actor_env;
}

ActorEnv& current_actor_env() { return g_actor_env; }

Engine::Engine(ClockMode mode)
    : rt_(mode == ClockMode::VIRTUAL ? make_virtual_runtime()
                                     : make_wall_runtime()) {
  // The virtual value assumes tick-scale latencies; the wall value is
  // milliseconds.
  barrier_timeout_ = mode == ClockMode::VIRTUAL ? 1'000'000 : 30'000;
}

void Engine::spawn(std::string name, uint32_t rank, bool killable,
                   std::vector<std::string>* trace,
                   std::function<void()> body) {
  int64_t birth = killable ? kill_epoch_ : std::numeric_limits<int64_t>::max();
  rt_->spawn(std::move(name),
             [this, rank, birth, trace, body = std::move(body)] {
               ActorEnv& env = current_actor_env();
               env.engine = this;
               env.rank = rank;
               env.birth_epoch = birth;
               env.trace = trace;
               body();
             });
}

bool Engine::wait_on(std::unique_lock<std::mutex>& lk, WaitChan& ch,
                     const std::function<bool()>& pred,
                     std::optional<Tick> deadline) {
  const ActorEnv& env = current_actor_env();
  bool ok = rt_->wait(
      lk, ch, [&] { return env_killed(env) || pred(); }, deadline);
  if (env_killed(env)) throw RankKilled{};
  return ok;
}

void Engine::sleep_until(std::unique_lock<std::mutex>& lk, Tick t) {
  const ActorEnv& env = current_actor_env();
  while (now() < t) {
    if (env_killed(env)) throw RankKilled{};
    rt_->sleep_until(lk, t);
  }
  if (env_killed(env)) throw RankKilled{};
}

void Engine::yield(std::unique_lock<std::mutex>& lk) {
  check_killed();
  rt_->yield(lk);
  check_killed();
}

void Engine::kill_ranks() {
  ++kill_epoch_;
  rt_->wake_all();
}

void Engine::check_killed() {
  const ActorEnv& env = current_actor_env();
  if (env.engine == this && env_killed(env)) throw RankKilled{};
}

void Engine::trace(const std::string& event) {
  ActorEnv& env = current_actor_env();
  if (env.engine == this && env.trace) env.trace->push_back(event);
}

}  // namespace ckptf
