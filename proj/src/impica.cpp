#include "pimbench/impica.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

namespace pimbench {

std::size_t ImpicaConfig::effective_max_concurrent() const {
  if (max_concurrent != 0) return max_concurrent;
  return std::min(queue_entries, context_capacity());
}

void ImpicaConfig::validate() const {
  if (queue_entries == 0) throw ConfigError("IMPICA queues need at least one entry");
  if (context_bytes == 0 || data_ram_bytes < context_bytes) throw ConfigError("data RAM cannot hold one context");
  if (cache_ways == 0 || cache_bytes % (cache_ways * kLineBytes) != 0) throw ConfigError("bad IMPICA cache geometry");
}

// ---------------------------------------------------------------------------
// ImpicaCache

bool ImpicaCache::contains_all(std::span<const LineAddr> lines) const {
  return std::all_of(lines.begin(), lines.end(), [&](LineAddr l) { return store_.find(l) != nullptr; });
}

bool ImpicaCache::try_insert(std::span<const LineAddr> lines, RequestId req, bool root) {
  struct Pending {
    Line* slot;
    Line before;
    bool fresh;
  };
  std::vector<Pending> chosen;
  auto rollback = [&] {
    for (auto it = chosen.rbegin(); it != chosen.rend(); ++it) *it->slot = it->before;
  };
  const auto rank = [](const Line& l) -> std::optional<int> {
    if (l.meta.lock_count > 0) return std::nullopt;
    return l.meta.root ? 1 : 0;
  };

  for (LineAddr line : lines) {
    if (Line* present = store_.find(line)) {
      chosen.push_back({present, *present, false});
      ++present->meta.lock_count;
      continue;
    }
    Line* victim = store_.choose_victim(line, rank);
    if (!victim) {
      rollback();
      return false;
    }
    chosen.push_back({victim, *victim, true});
    // Reserve the way so a later line of this response cannot pick it.
    victim->valid = true;
    victim->line = line;
    victim->meta = ImpicaLineMeta{1, false, {}, false};
  }

  for (auto& p : chosen) {
    if (p.fresh) {
      if (p.before.valid) ++evictions_;
      store_.install(*p.slot, p.slot->line, ImpicaLineMeta{1, true, req, root});
    } else {
      p.slot->meta.has_request = true;
      p.slot->meta.request = req;
      p.slot->meta.root = p.slot->meta.root || root;
      store_.touch(*p.slot);
    }
  }
  return true;
}

void ImpicaCache::unlock(std::span<const LineAddr> lines) {
  for (LineAddr line : lines) {
    Line* l = store_.find(line);
    if (!l || l->meta.lock_count == 0) throw InvariantViolation("unlock of a line that is not locked");
    --l->meta.lock_count;
  }
}

std::size_t ImpicaCache::release_request(RequestId req) {
  std::size_t released = 0;
  store_.for_each_valid([&](Line& l) {
    if (!l.meta.has_request || l.meta.request != req) return;
    if (l.meta.lock_count > 0) throw InvariantViolation("finished traversal still holds a locked line");
    ++released;
    if (l.meta.root) {
      l.meta.has_request = false;
    } else {
      store_.invalidate(l);
      ++evictions_;
    }
  });
  return released;
}

std::size_t ImpicaCache::lines_with_request(RequestId req) const {
  std::size_t n = 0;
  store_.for_each_valid([&](const Line& l) { n += (l.meta.has_request && l.meta.request == req) ? 1 : 0; });
  return n;
}

std::size_t ImpicaCache::locked_lines() const {
  std::size_t n = 0;
  store_.for_each_valid([&](const Line& l) { n += l.meta.lock_count > 0 ? 1 : 0; });
  return n;
}

bool ImpicaCache::set_fully_locked(LineAddr line) const {
  for (const auto& l : store_.set_of(line))
    if (!l.valid || l.meta.lock_count == 0) return false;
  return true;
}

// ---------------------------------------------------------------------------
// ImpicaEngine

ImpicaEngine::ImpicaEngine(ImpicaConfig config, MemorySystem& mem, AddressTranslator& translator,
                           const MemoryImage& image)
    : config_(config),
      mem_(&mem),
      translator_(&translator),
      image_(&image),
      cache_(config.cache_bytes, config.cache_ways),
      request_queue_(config.queue_entries),
      access_queue_(config.queue_entries),
      response_queue_(config.queue_entries) {
  config_.validate();
}

std::optional<RequestId> ImpicaEngine::enqueue_traversal(const TraversalProgram& program,
                                                         std::vector<std::uint64_t> params) {
  if (request_queue_.full()) {
    ++stats_.backpressure;
    return std::nullopt;
  }
  const RequestId id{static_cast<std::uint32_t>(traversals_.size())};
  Traversal t;
  t.program = &program;
  t.outcome.id = id;
  t.outcome.submit = now_;
  t.eligible = mem_->send_message(now_, config_.packet_bytes, TrafficClass::Packet);
  program.start(t.ctx, params);
  traversals_.push_back(std::move(t));
  request_queue_.try_push(id);
  stats_.peak_request_queue = std::max(stats_.peak_request_queue, request_queue_.size());
  return id;
}

bool ImpicaEngine::address_has_work() const {
  if (running_ || !response_queue_.empty()) return true;
  return !request_queue_.empty() && active_ < config_.effective_max_concurrent();
}

bool ImpicaEngine::access_has_work() const {
  if (access_stalled_) return true;
  return std::any_of(access_queue_.items().begin(), access_queue_.items().end(),
                     [](const AccessEntry& e) { return e.state == EntryState::Waiting; });
}

bool ImpicaEngine::idle() const {
  return request_queue_.empty() && access_queue_.empty() && response_queue_.empty() && !running_ && pending_.empty();
}

EngineAction ImpicaEngine::step_address_engine() {
  if (address_free_ > now_) return EngineAction::Idle;
  const Cycle switch_cost = config_.context_switch_cycles;

  if (!running_) {
    if (!response_queue_.empty()) {
      ResponseEntry r = response_queue_.pop();
      cache_.unlock(r.lines);
      for (LineAddr l : r.lines) cache_events_.push_back({CacheEvent::Kind::Unlock, now_, r.request, l});
      Traversal& t = traversal(r.request);
      t.context_stored = false;
      --stored_contexts_;
      auto bytes = image_->bytes_at(r.va, r.size);
      t.loaded.assign(bytes.begin(), bytes.end());
      running_ = r.request;
    } else if (!request_queue_.empty() && active_ < config_.effective_max_concurrent() &&
               traversal(request_queue_.front()).eligible <= now_) {
      const RequestId id = request_queue_.pop();
      Traversal& t = traversal(id);
      t.admitted = true;
      t.active = true;
      t.outcome.start = now_;
      ++active_;
      running_ = id;
    } else {
      return EngineAction::Idle;
    }
    address_free_ = now_ + switch_cost;
    stats_.address_busy_cycles += switch_cost;
    ++stats_.context_switches;
    return EngineAction::ContextSwitched;
  }

  Traversal& t = traversal(*running_);
  Step step;
  if (t.pending_load) {
    step = *t.pending_load;
    t.pending_load.reset();
  } else {
    step = t.program->next(t.ctx, t.loaded);
    ++t.outcome.steps;
  }
  switch (step.kind) {
    case Step::Kind::Compute:
      address_free_ = now_ + step.cost;
      stats_.address_busy_cycles += step.cost;
      stats_.compute_cycles += step.cost;
      return EngineAction::ExecutedCompute;

    case Step::Kind::Load: {
      if (stored_contexts_ >= config_.context_capacity()) {
        abort_traversal(t, "data RAM stack overflow");
        running_.reset();
        return EngineAction::Finished;
      }
      if (access_queue_.full()) {
        // Producer stalls; the load is retried once an entry drains.
        t.pending_load = step;
        ++stats_.access_queue_stalls;
        return EngineAction::Idle;
      }
      t.context_stored = true;
      ++stored_contexts_;
      stats_.peak_contexts = std::max(stats_.peak_contexts, stored_contexts_);
      AccessEntry e;
      e.uid = next_uid_++;
      e.request = *running_;
      e.va = step.va;
      e.size = std::max<std::uint32_t>(step.size, 1);
      e.access_index = t.accesses++;
      access_queue_.try_push(std::move(e));
      stats_.peak_access_queue = std::max(stats_.peak_access_queue, access_queue_.size());
      ++stats_.loads;
      ++t.outcome.loads;
      running_.reset();
      address_free_ = now_ + switch_cost;
      stats_.address_busy_cycles += switch_cost;
      ++stats_.context_switches;
      return EngineAction::IssuedLoad;
    }

    case Step::Kind::Emit:
      t.outcome.results.push_back(step.value);
      address_free_ = now_ + config_.emit_cycles;
      stats_.address_busy_cycles += config_.emit_cycles;
      return EngineAction::EmittedResult;

    case Step::Kind::Done:
      finish_traversal(t);
      running_.reset();
      return EngineAction::Finished;
  }
  return EngineAction::Idle;
}

AccessAction ImpicaEngine::step_access_engine() {
  if (access_free_ > now_) return AccessAction::Idle;

  if (access_stalled_) {
    for (auto& e : access_queue_.items()) {
      if (e.state != EntryState::Blocked) continue;
      const RequestId req = e.request;
      const LineAddr first = e.lines.front();
      if (!try_deliver(e)) {
        ++stats_.access_stalls;
        return AccessAction::StalledCacheFull;
      }
      cache_events_.push_back({CacheEvent::Kind::InsertResumed, now_, req, first});
      break;  // try_deliver mutated the queue
    }
    access_stalled_ = std::any_of(access_queue_.items().begin(), access_queue_.items().end(),
                                  [](const AccessEntry& x) { return x.state == EntryState::Blocked; });
    if (access_stalled_) return AccessAction::StalledCacheFull;
  }

  auto& items = access_queue_.items();
  auto it = std::find_if(items.begin(), items.end(), [](const AccessEntry& e) { return e.state == EntryState::Waiting; });
  if (it == items.end()) return AccessAction::Idle;

  Traversal& t = traversal(it->request);
  access_free_ = now_ + config_.tlb_lookup_cycles;
  try {
    it->translation = translator_->translate(it->va, config_.tlb_enabled);
  } catch (const SimError& err) {
    items.erase(it);
    abort_traversal(t, err.what());
    return AccessAction::TranslatedAndIssued;
  }

  const PhysAddr pa = it->translation.pa;
  const LineAddr first = pa / kLineBytes;
  const LineAddr last = (pa + it->size - 1) / kLineBytes;
  it->lines.clear();
  for (LineAddr l = first; l <= last; ++l) it->lines.push_back(l);
  it->issue = now_;

  const Cycle t0 = access_free_;
  const Requester walker = Requester::walker(config_.engine_id, config_.stack);
  if (!it->translation.walk.empty()) {
    it->state = EntryState::Walking;
    it->next_walk = 0;
    const auto done = mem_->submit({walker, it->translation.walk.front().pa, AccessKind::Read, 8, t0});
    ++stats_.walk_requests;
    schedule(it->uid, done.complete_time);
  } else {
    start_fetch(*it, t0);
  }
  return AccessAction::TranslatedAndIssued;
}

void ImpicaEngine::start_fetch(AccessEntry& e, Cycle time) {
  e.state = EntryState::Fetching;
  if (cache_.contains_all(e.lines)) {
    e.cache_hit = true;
    ++stats_.cache_hits;
    schedule(e.uid, time + config_.cache_hit_cycles);
    return;
  }
  ++stats_.cache_misses;
  ++stats_.data_requests;
  const AccessRequest req{Requester::pim(config_.engine_id, config_.stack), e.lines.front() * kLineBytes,
                          AccessKind::Read, static_cast<std::uint32_t>(e.lines.size() * kLineBytes), time};
  schedule(e.uid, mem_->submit(req).complete_time);
}

void ImpicaEngine::schedule(std::uint32_t uid, Cycle time) { pending_.push({time, seq_++, uid}); }

ImpicaEngine::AccessEntry* ImpicaEngine::find_entry(std::uint32_t uid) {
  for (auto& e : access_queue_.items())
    if (e.uid == uid) return &e;
  return nullptr;
}

void ImpicaEngine::on_memory_complete(std::uint32_t uid, Cycle time) {
  AccessEntry* e = find_entry(uid);
  if (!e) return;
  if (!traversal(e->request).active) {
    ++stats_.dropped_responses;
    auto& items = access_queue_.items();
    items.erase(items.begin() + (e - items.data()));
    return;
  }

  if (e->state == EntryState::Walking) {
    ++e->next_walk;
    if (e->next_walk < e->translation.walk.size()) {
      const Requester walker = Requester::walker(config_.engine_id, config_.stack);
      const auto done = mem_->submit({walker, e->translation.walk[e->next_walk].pa, AccessKind::Read, 8, time});
      ++stats_.walk_requests;
      schedule(uid, done.complete_time);
      return;
    }
    start_fetch(*e, time);
    return;
  }

  // Response is ready for the accelerator cache.
  const Translation& tr = e->translation;
  trace_.push_back({e->request, e->va, tr.pa, e->issue, time, static_cast<std::uint32_t>(tr.walk.size()), tr.tlb_hit,
                    e->cache_hit});
  const RequestId req = e->request;
  const LineAddr first = e->lines.front();
  if (!try_deliver(*e)) {
    e->state = EntryState::Blocked;
    access_stalled_ = true;
    cache_events_.push_back({CacheEvent::Kind::InsertStalled, time, req, first});
  }
}

bool ImpicaEngine::try_deliver(AccessEntry& entry) {
  if (response_queue_.full()) return false;
  const bool root = entry.access_index < config_.root_window;
  if (!cache_.try_insert(entry.lines, entry.request, root)) return false;
  for (LineAddr l : entry.lines) cache_events_.push_back({CacheEvent::Kind::Insert, now_, entry.request, l});

  ResponseEntry r{entry.request, entry.lines, entry.va, entry.size};
  response_queue_.try_push(std::move(r));
  stats_.peak_response_queue = std::max(stats_.peak_response_queue, response_queue_.size());
  auto& items = access_queue_.items();
  items.erase(items.begin() + (&entry - items.data()));
  return true;
}

void ImpicaEngine::finish_traversal(Traversal& t) {
  t.outcome.finish = now_;
  t.active = false;
  --active_;
  cache_.store().for_each_valid([&](const ImpicaCache::Line& l) {
    if (l.meta.has_request && l.meta.request == t.outcome.id)
      cache_events_.push_back({CacheEvent::Kind::Release, now_, t.outcome.id, l.line});
  });
  cache_.release_request(t.outcome.id);
  mem_->send_message(now_, config_.result_bytes, TrafficClass::Packet);
}

void ImpicaEngine::abort_traversal(Traversal& t, const std::string& why) {
  t.outcome.fault = why;
  t.outcome.finish = now_;
  ++stats_.faults;
  if (t.context_stored) {
    t.context_stored = false;
    --stored_contexts_;
  }
  if (t.active) {
    t.active = false;
    --active_;
  }
  auto& items = access_queue_.items();
  items.erase(std::remove_if(items.begin(), items.end(),
                             [&](const AccessEntry& e) {
                               return e.request == t.outcome.id && e.state == EntryState::Waiting;
                             }),
              items.end());
  cache_.release_request(t.outcome.id);
}

bool ImpicaEngine::advance(Cycle limit) {
  bool progressed = false;
  while (!pending_.empty() && pending_.top().time <= now_) {
    const PendingMem p = pending_.top();
    pending_.pop();
    on_memory_complete(p.uid, p.time);
    progressed = true;
  }
  if (access_free_ <= now_) {
    const bool was_stalled = access_stalled_;
    const AccessAction a = step_access_engine();
    if (a == AccessAction::TranslatedAndIssued || (was_stalled && !access_stalled_)) progressed = true;
  }
  if (address_free_ <= now_ && step_address_engine() != EngineAction::Idle) progressed = true;
  if (progressed) return true;

  Cycle next = std::numeric_limits<Cycle>::max();
  if (!pending_.empty()) next = std::min(next, pending_.top().time);
  if (access_free_ > now_ && access_has_work()) next = std::min(next, access_free_);
  if (address_free_ > now_ && address_has_work()) next = std::min(next, address_free_);
  if (!running_ && response_queue_.empty() && !request_queue_.empty() &&
      active_ < config_.effective_max_concurrent()) {
    const Cycle eligible = traversals_[to_index(request_queue_.front())].eligible;
    if (eligible > now_) next = std::min(next, std::max(eligible, address_free_));
  }
  if (next == std::numeric_limits<Cycle>::max() || next > limit) return false;
  now_ = next;
  return true;
}

void ImpicaEngine::run_until_idle() {
  while (advance()) {
  }
  if (!idle()) throw InvariantViolation("IMPICA engine stopped with work outstanding");
  if (cache_.locked_lines() != 0) throw InvariantViolation("locked IMPICA cache lines leaked");
}

void ImpicaEngine::advance_to(Cycle t) {
  while (now_ < t && advance(t)) {
  }
  now_ = std::max(now_, t);
}

std::vector<TraversalOutcome> ImpicaEngine::outcomes() const {
  std::vector<TraversalOutcome> out;
  out.reserve(traversals_.size());
  for (const auto& t : traversals_) out.push_back(t.outcome);
  return out;
}

RunResult run_traversals(const ImpicaConfig& config, MemorySystem& mem, AddressTranslator& translator,
                         const MemoryImage& image, std::span<const TraversalRequest> batch) {
  ImpicaEngine engine(config, mem, translator, image);
  for (const auto& req : batch) {
    if (engine.now() < req.submit_time) engine.advance_to(req.submit_time);
    while (!engine.enqueue_traversal(*req.program, req.params)) {
      if (!engine.advance()) throw InvariantViolation("request queue never drained");
    }
  }
  engine.run_until_idle();

  RunResult result;
  result.traversals = engine.outcomes();
  result.engine = engine.stats();
  result.translation = translator.stats();
  result.trace = engine.trace();
  if (!result.traversals.empty()) {
    Cycle first = std::numeric_limits<Cycle>::max();
    Cycle last = 0;
    for (const auto& t : result.traversals) {
      first = std::min(first, t.submit);
      last = std::max(last, t.finish);
    }
    result.makespan = last - first;
    if (result.makespan > 0)
      result.address_engine_utilization =
          static_cast<double>(result.engine.address_busy_cycles) / static_cast<double>(result.makespan);
  }
  return result;
}

std::string trace_to_json_lines(std::span<const AccessTrace> trace) {
  std::ostringstream out;
  for (const auto& a : trace) {
    nlohmann::json j = {{"request-id", to_index(a.request)},
                        {"va", a.va},
                        {"pa", a.pa},
                        {"issue", a.issue},
                        {"complete", a.complete},
                        {"latency", a.complete - a.issue},
                        {"walk-accesses", a.walk_accesses},
                        {"tlb-hit", a.tlb_hit},
                        {"cache-hit", a.cache_hit}};
    out << j.dump() << '\n';
  }
  return out.str();
}

}  // namespace pimbench
