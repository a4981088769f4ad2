#include "pimbench/coherence.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace pimbench {

std::string_view mechanism_name(Mechanism m) {
  switch (m) {
    case Mechanism::CpuOnly: return "cpu-only";
    case Mechanism::FG: return "fg";
    case Mechanism::CG: return "cg";
    case Mechanism::NC: return "nc";
    case Mechanism::LazyPim: return "lazypim";
    case Mechanism::Ideal: return "ideal";
  }
  return "unknown";
}

Mechanism parse_mechanism(std::string_view name) {
  for (Mechanism m : kAllMechanisms)
    if (mechanism_name(m) == name) return m;
  throw ConfigError("unknown coherence mechanism `" + std::string(name) + "`");
}

void SystemConfig::validate() const {
  timing.validate();
  if (l1_cycles == 0 || l2_cycles == 0) throw ConfigError("cache latencies must be positive");
  if (check_interval == 0) throw ConfigError("check interval must be positive");
  if (max_rollbacks == 0) throw ConfigError("at least one rollback must be allowed before locking");
}

namespace {
constexpr Cycle kNever = std::numeric_limits<Cycle>::max();
}

System::System(SystemConfig config, const CoherenceWorkload& workload)
    : config_(config),
      workload_(&workload),
      mem_((config.validate(), config.timing)),
      sched_rng_(derive_seed(config.seed, 0x5C4ED)),
      l2_(config.l2_bytes, config.l2_ways) {
  if (workload.cpu_cores == 0) throw ConfigError("workload has no CPU cores");
  if (workload.cpu_cores + workload.pim_cores > kMaxDirectoryCaches) throw ConfigError("too many cores for the directory");
  if (workload.cpu_ops.size() != workload.cpu_cores) throw ConfigError("operation streams do not match CPU core count");
  for (const auto& r : workload.pim_ranges) map_.add_lines(r.first, r.count);
  if (config_.mechanism == Mechanism::LazyPim)
    tracker_.emplace(map_, derive_seed(config_.seed, 0x516), config_.max_rollbacks);

  for (std::uint32_t c = 0; c < cpu_cache_count(); ++c) cpu_l1_.emplace_back(config_.cpu_l1_bytes, config_.cpu_l1_ways);
  for (std::uint32_t p = 0; p < workload.pim_cores; ++p) pim_l1_.emplace_back(config_.pim_l1_bytes, config_.pim_l1_ways);

  cpus_.resize(workload.cpu_cores);
  for (std::uint32_t c = 0; c < workload.cpu_cores; ++c)
    if (!workload.cpu_ops[c].empty()) cpus_[c].ready = workload.cpu_ops[c].front().gap;

  pims_.resize(workload.pim_cores);
  std::vector<std::size_t> order(workload.kernels.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return workload.kernels[a].release < workload.kernels[b].release;
  });
  for (std::size_t k : order) {
    const auto core = workload.kernels[k].pim_core;
    if (core >= workload.pim_cores) throw ConfigError("kernel assigned to a missing PIM core");
    pims_[core].queue.push_back(k);
  }
}

bool System::is_pim_cache(std::uint32_t cache) const {
  return (config_.mechanism == Mechanism::FG || config_.mechanism == Mechanism::Ideal) && cache >= workload_->cpu_cores;
}

std::uint32_t System::cpu_cache_count() const {
  return workload_->cpu_cores + (config_.mechanism == Mechanism::CpuOnly ? workload_->pim_cores : 0);
}

LineData& System::dram(LineAddr line) { return dram_[line]; }

LineData System::dram_value(LineAddr line) const {
  auto it = dram_.find(line);
  return it == dram_.end() ? LineData{} : it->second;
}

Cycle System::coherence_message(Cycle t, std::uint32_t payload) {
  if (config_.mechanism == Mechanism::Ideal) return t;
  return mem_.send_message(t, payload, TrafficClass::Coherence);
}

Cycle System::writeback_l2(LineAddr line, Cycle t, TrafficClass cls) {
  auto* l = l2_.find(line);
  if (!l || !l->meta.dirty) return t;
  dram(line) = l->meta.data;
  l->meta.dirty = false;
  if (cls == TrafficClass::Demand) return mem_.submit({cpu_port(), pa_of(line), AccessKind::Write, kLineBytes, t}).complete_time;
  return coherence_message(t, kLineBytes);
}

void System::drop_cpu_copies(LineAddr line) {
  auto it = dir_.find(line);
  if (it != dir_.end()) {
    DirectoryEntry& e = it->second;
    for (std::uint32_t c = 0; c < cpu_cache_count(); ++c) {
      if (!e.holds(c)) continue;
      e = directory_transition(e, c, DirRequest::Evict).next;
      if (auto* l = cpu_l1_[c].find(line)) cpu_l1_[c].invalidate(*l);
    }
    if (e.state == Mesi::I && !e.locked) dir_.erase(it);
  }
  if (auto* l = l2_.find(line)) l2_.invalidate(*l);
}

Cycle System::fill_l2(LineAddr line, Cycle t, bool supplied) {
  t += config_.l2_cycles;
  if (auto* hit = l2_.find(line)) {
    ++stats_.l2_hits;
    l2_.touch(*hit);
    return t;
  }
  ++stats_.l2_misses;
  auto* slot = l2_.choose_victim(line);
  if (slot->valid) {
    const LineAddr victim = slot->line;
    writeback_l2(victim, t, TrafficClass::Demand);
    drop_cpu_copies(victim);
  }
  // Data forwarded by a PIM owner arrives with its reply; no DRAM read.
  const Cycle done =
      supplied ? t : mem_.submit({cpu_port(), pa_of(line), AccessKind::Read, kLineBytes, t}).complete_time;
  l2_.install(*slot, line, L2Meta{false, dram_value(line)});
  return done;
}

void System::install_cpu_l1(std::uint32_t cache, LineAddr line) {
  auto& l1 = cpu_l1_[cache];
  if (auto* hit = l1.find(line)) {
    l1.touch(*hit);
    return;
  }
  auto* slot = l1.choose_victim(line);
  if (slot->valid) {
    // Dirty data already lives in the inclusive L2; only the directory changes.
    auto it = dir_.find(slot->line);
    if (it != dir_.end() && it->second.holds(cache)) {
      it->second = directory_transition(it->second, cache, DirRequest::Evict).next;
      if (it->second.state == Mesi::I && !it->second.locked) dir_.erase(it);
    }
  }
  l1.install(*slot, line);
}

void System::evict_pim_line(std::uint32_t core, SetAssociativeCache<PimMeta>::Line& victim, Cycle t) {
  const std::uint32_t idx = pim_cache_index(core);
  auto it = dir_.find(victim.line);
  if (it != dir_.end() && it->second.holds(idx)) {
    if (it->second.state_of(idx) == Mesi::M) {
      dram(victim.line) = victim.meta.data;
      mem_.submit({pim_port(core), pa_of(victim.line), AccessKind::Write, kLineBytes, t});
    }
    it->second = directory_transition(it->second, idx, DirRequest::Evict).next;
    if (it->second.state == Mesi::I && !it->second.locked) dir_.erase(it);
    coherence_message(t, 0);
  }
  pim_l1_[core].invalidate(victim);
}

Cycle System::resolve_peers(const Transition& tr, std::uint32_t requester, LineAddr line, DirRequest req, Cycle t) {
  const DirectoryEntry before = dir_.count(line) ? dir_.at(line) : DirectoryEntry{};
  Cycle done = t;
  for (const DirMessage& m : tr.messages) {
    if (m.cache == requester) continue;
    if (m.kind != MsgKind::Invalidate && m.kind != MsgKind::Forward) continue;
    const bool drop = m.kind == MsgKind::Invalidate || req == DirRequest::Write;
    if (m.kind == MsgKind::Invalidate) ++stats_.invalidations;
    if (is_pim_cache(m.cache)) {
      const std::uint32_t core = m.cache - workload_->cpu_cores;
      auto* l = pim_l1_[core].find(line);
      if (!l) throw InvariantViolation("directory lists a PIM copy the cache does not hold");
      if (before.state_of(m.cache) == Mesi::M) {
        dram(line) = l->meta.data;
        mem_.submit({pim_port(core), pa_of(line), AccessKind::Write, kLineBytes, t});
      }
      if (drop) pim_l1_[core].invalidate(*l);
      const Cycle out = coherence_message(t, 0);
      done = std::max(done, coherence_message(out, m.kind == MsgKind::Forward ? kLineBytes : 0));
    } else {
      if (drop)
        if (auto* l = cpu_l1_[m.cache].find(line)) cpu_l1_[m.cache].invalidate(*l);
      done = std::max(done, t + config_.l2_cycles);
    }
  }
  return done;
}

void System::pim_gains_copy(LineAddr line, bool exclusive, Cycle& t) {
  auto* l = l2_.find(line);
  if (!l) return;
  if (l->meta.dirty) t = std::max(t, writeback_l2(line, t, TrafficClass::Coherence));
  if (exclusive) l2_.invalidate(*l);
}

AccessResult System::nc_access(LineAddr line, std::uint8_t word, AccessKind kind, std::uint64_t value, Cycle t) {
  ++stats_.uncached_accesses;
  AccessResult r;
  r.done = mem_.submit({cpu_port(), pa_of(line), kind, kLineBytes, t}).complete_time;
  if (kind == AccessKind::Write) {
    dram(line)[word] = value;
    // The write lands in the stack; PIM-side copies are dropped there.
    for (auto& l1 : pim_l1_)
      if (auto* l = l1.find(line)) l1.invalidate(*l);
  }
  r.value = dram_value(line)[word];
  return r;
}

AccessResult System::cpu_access(std::uint32_t cache, LineAddr line, std::uint8_t word, AccessKind kind,
                                std::uint64_t value, Cycle t) {
  if (word >= kWordsPerLine) throw SimError("word index out of range");
  if (cache >= cpu_cache_count()) throw SimError("no CPU cache " + std::to_string(cache));
  if (config_.mechanism == Mechanism::NC && map_.contains(line)) return nc_access(line, word, kind, value, t);

  t += config_.l1_cycles;
  const DirRequest req = kind == AccessKind::Read ? DirRequest::Read : DirRequest::Write;
  const DirectoryEntry before = dir_.count(line) ? dir_.at(line) : DirectoryEntry{};
  const Transition tr = directory_transition(before, cache, req);
  Cycle done = t;
  if (tr.local_hit) {
    ++stats_.cpu_l1_hits;
    cpu_l1_[cache].touch(*cpu_l1_[cache].find(line));
    dir_[line] = tr.next;
  } else {
    ++stats_.cpu_l1_misses;
    const Cycle peers = resolve_peers(tr, cache, line, req, t);
    dir_[line].state = tr.next.state;
    dir_[line].holders = tr.next.holders;
    const bool supplied = std::any_of(tr.messages.begin(), tr.messages.end(), [&](const DirMessage& m) {
      return m.kind == MsgKind::Forward && is_pim_cache(m.cache);
    });
    done = before.state_of(cache) == Mesi::I ? fill_l2(line, peers, supplied) : peers;
    install_cpu_l1(cache, line);
  }
  auto* l2 = l2_.find(line);
  if (!l2) throw InvariantViolation("CPU copy without an L2 copy");
  if (kind == AccessKind::Write) {
    l2->meta.data[word] = value;
    l2->meta.dirty = true;
    if (tracker_) tracker_->record_cpu_write(line);
  }
  return {done, l2->meta.data[word]};
}

AccessResult System::pim_access_fg(std::uint32_t core, LineAddr line, std::uint8_t word, AccessKind kind,
                                   std::uint64_t value, Cycle t) {
  if (config_.mechanism != Mechanism::FG && config_.mechanism != Mechanism::Ideal)
    throw SimError("fine-grained PIM access under another mechanism");
  if (word >= kWordsPerLine) throw SimError("word index out of range");
  const std::uint32_t idx = pim_cache_index(core);
  auto& l1 = pim_l1_[core];
  t += config_.l1_cycles;
  const DirRequest req = kind == AccessKind::Read ? DirRequest::Read : DirRequest::Write;
  const DirectoryEntry before = dir_.count(line) ? dir_.at(line) : DirectoryEntry{};
  const Transition tr = directory_transition(before, idx, req);
  Cycle done = t;
  SetAssociativeCache<PimMeta>::Line* entry = l1.find(line);
  if (tr.local_hit) {
    ++stats_.pim_l1_hits;
    l1.touch(*entry);
    dir_[line] = tr.next;
  } else {
    ++stats_.pim_l1_misses;
    const Cycle lookup = coherence_message(t, 0);
    Cycle peers = resolve_peers(tr, idx, line, req, lookup);
    dir_[line].state = tr.next.state;
    dir_[line].holders = tr.next.holders;
    pim_gains_copy(line, tr.next.state != Mesi::S, peers);
    if (!entry) {
      if (config_.mechanism == Mechanism::Ideal)
        done = mem_.submit({pim_port(core), pa_of(line), AccessKind::Read, kLineBytes, peers}).complete_time;
      else
        done = mem_.send_message(peers, kLineBytes, TrafficClass::Coherence);
      auto* slot = l1.choose_victim(line);
      if (slot->valid) evict_pim_line(core, *slot, t);
      entry = &l1.install(*slot, line, PimMeta{dram_value(line), false, 0});
    } else {
      done = peers;
      l1.touch(*entry);
    }
  }
  if (kind == AccessKind::Write) entry->meta.data[word] = value;
  return {done, entry->meta.data[word]};
}

AccessResult System::pim_access_plain(std::uint32_t core, LineAddr line, std::uint8_t word, AccessKind kind,
                                      std::uint64_t value, Cycle t) {
  auto& l1 = pim_l1_[core];
  t += config_.l1_cycles;
  auto* entry = l1.find(line);
  if (kind == AccessKind::Write) {
    // Write-through, no allocate.
    dram(line)[word] = value;
    if (entry) entry->meta.data[word] = value;
    mem_.submit({pim_port(core), pa_of(line), AccessKind::Write, kWordBytes, t});
    return {t, value};
  }
  if (entry) {
    ++stats_.pim_l1_hits;
    l1.touch(*entry);
    return {t, entry->meta.data[word]};
  }
  ++stats_.pim_l1_misses;
  const Cycle done = mem_.submit({pim_port(core), pa_of(line), AccessKind::Read, kLineBytes, t}).complete_time;
  auto* slot = l1.choose_victim(line);
  entry = &l1.install(*slot, line, PimMeta{dram_value(line), false, 0});
  return {done, entry->meta.data[word]};
}

AccessResult System::pim_access_speculative(std::uint32_t core, LineAddr line, std::uint8_t word, AccessKind kind,
                                            std::uint64_t value, Cycle t) {
  PimAgent& p = pims_[core];
  auto& l1 = pim_l1_[core];
  const KernelId id = workload_->kernels[*p.current].id;
  t += config_.l1_cycles;
  Cycle done = t;
  PimMeta* meta = nullptr;
  if (auto* hit = l1.find(line)) {
    ++stats_.pim_l1_hits;
    l1.touch(*hit);
    meta = &hit->meta;
  } else if (auto v = p.victims.find(line); v != p.victims.end()) {
    ++stats_.pim_l1_hits;
    meta = &v->second;
  } else {
    ++stats_.pim_l1_misses;
    done = mem_.submit({pim_port(core), pa_of(line), AccessKind::Read, kLineBytes, t}).complete_time;
    auto* slot = l1.choose_victim(line, [](const SetAssociativeCache<PimMeta>::Line& l) {
      return std::optional<int>{l.meta.speculative ? 1 : 0};
    });
    if (slot->valid && slot->meta.speculative) {
      if (!tracker_->record(id).locked_mode) return {done, 0, true};
      p.victims.emplace(slot->line, slot->meta);
    }
    meta = &l1.install(*slot, line, PimMeta{dram_value(line), false, 0}).meta;
  }
  if (kind == AccessKind::Write) {
    meta->data[word] = value;
    meta->speculative = true;
    meta->dirty_mask |= static_cast<std::uint8_t>(1u << word);
    tracker_->record_pim_write(id, line);
  } else {
    tracker_->record_pim_read(id, line);
  }
  return {done, meta->data[word]};
}

FlushReport System::cg_acquire(Cycle t) {
  if (config_.mechanism != Mechanism::CG) throw SimError("coarse-grained lock used under another mechanism");
  if (cg_held_) throw SimError("nested coarse-grained acquire refused");
  cg_held_ = true;
  FlushReport report;
  report.done = t;
  std::vector<LineAddr> lines;
  l2_.for_each_valid([&](const auto& l) {
    if (map_.contains(l.line)) lines.push_back(l.line);
  });
  for (LineAddr line : lines) {
    if (l2_.find(line)->meta.dirty) {
      report.done = std::max(report.done, writeback_l2(line, t, TrafficClass::Coherence));
      ++report.lines_flushed;
    }
    drop_cpu_copies(line);
    ++report.lines_invalidated;
  }
  stats_.flushed_lines += report.lines_flushed;
  return report;
}

void System::cg_release(Cycle) {
  if (!cg_held_) throw SimError("coarse-grained release without acquire");
  cg_held_ = false;
}

std::vector<LineAddr> System::cpu_dirty_pim_lines() const {
  std::vector<LineAddr> out;
  l2_.for_each_valid([&](const auto& l) {
    if (l.meta.dirty && map_.contains(l.line)) out.push_back(l.line);
  });
  return out;
}

std::vector<LineAddr> System::dirty_pim_lines_in(const std::unordered_set<LineAddr>& lines) const {
  std::vector<LineAddr> out;
  for (LineAddr l : lines)
    if (const auto* e = l2_.find(l); e && e->meta.dirty) out.push_back(l);
  std::sort(out.begin(), out.end());
  return out;
}

void System::discard_pim_cache(std::uint32_t core) {
  auto& l1 = pim_l1_[core];
  l1.for_each_valid([&](auto& l) { l1.invalidate(l); });
  pims_[core].victims.clear();
}

void System::wake_cpus(std::deque<std::uint32_t>& waiters, Cycle t) {
  Cycle offset = 0;
  while (!waiters.empty()) {
    CpuAgent& a = cpus_[waiters.front()];
    waiters.pop_front();
    a.blocked = false;
    stats_.blocked_cycles += t - std::min(t, a.blocked_since);
    a.ready = t + offset++;
  }
}

// ---------------------------------------------------------------------------

void System::run() {
  for (;;) {
    Cycle best = kNever;
    std::vector<std::pair<bool, std::uint32_t>> ties;
    auto consider = [&](bool pim, std::uint32_t idx, Cycle ready) {
      if (ready < best) {
        best = ready;
        ties.clear();
      }
      if (ready == best) ties.emplace_back(pim, idx);
    };
    bool unfinished = false;
    for (std::uint32_t c = 0; c < cpus_.size(); ++c) {
      if (cpus_[c].next >= workload_->cpu_ops[c].size()) continue;
      unfinished = true;
      if (!cpus_[c].blocked) consider(false, c, cpus_[c].ready);
    }
    for (std::uint32_t p = 0; p < pims_.size(); ++p) {
      const PimAgent& a = pims_[p];
      if (!a.current && a.queue.empty()) continue;
      unfinished = true;
      if (a.blocked) continue;
      const Cycle ready = a.current ? a.ready : std::max(a.ready, workload_->kernels[a.queue.front()].release);
      consider(true, p, ready);
    }
    if (!unfinished) break;
    if (ties.empty()) throw InvariantViolation("deadlock: every remaining agent is blocked");
    const auto [pim, idx] = ties.size() == 1 ? ties.front() : ties[sched_rng_.below(ties.size())];
    if (pim) {
      PimAgent& a = pims_[idx];
      if (!a.current) a.ready = best;
      step_pim(idx);
    } else {
      step_cpu(idx);
    }
    if (++stats_.events % config_.check_interval == 0) check_invariants();
  }
  check_invariants();
  if (tracker_)
    for (const auto& [_, rec] : tracker_->records())
      if (!rec.outcome()) throw InvariantViolation("kernel " + std::to_string(to_index(rec.id)) + " never finished");
  stats_.makespan = std::max(stats_.cpu_finish, stats_.pim_finish);
}

void System::step_cpu(std::uint32_t core) {
  CpuAgent& a = cpus_[core];
  const auto& ops = workload_->cpu_ops[core];
  const CpuOp& op = ops[a.next];
  const Cycle t = a.ready;
  const bool pim_line = map_.contains(op.line);
  if (config_.mechanism == Mechanism::CG && cg_held_ && pim_line) {
    a.blocked = true;
    a.blocked_since = t;
    cg_cpu_waiters_.push_back(core);
    return;
  }
  if (config_.mechanism == Mechanism::LazyPim && pim_line) {
    if (t < pim_map_locked_until_) {
      stats_.blocked_cycles += pim_map_locked_until_ - t;
      a.ready = pim_map_locked_until_;
      return;
    }
    if (op.kind == AccessKind::Write && locked_lines_.count(op.line)) {
      a.blocked = true;
      a.blocked_since = t;
      locked_line_waiters_.push_back(core);
      return;
    }
  }
  const AccessResult r = cpu_access(core, op.line, op.word, op.kind, op.value, t);
  LogEntry e{op.kind == AccessKind::Read ? LogEntry::Kind::CpuRead : LogEntry::Kind::CpuWrite};
  e.agent = core;
  e.line = op.line;
  e.word = op.word;
  e.value = op.kind == AccessKind::Read ? r.value : op.value;
  e.time = t;
  log_.push_back(e);
  ++a.next;
  a.ready = r.done + (a.next < ops.size() ? ops[a.next].gap : 0);
  stats_.cpu_finish = std::max(stats_.cpu_finish, r.done);
}

void System::step_pim(std::uint32_t core) {
  PimAgent& p = pims_[core];
  if (!p.current) {
    start_kernel(core, p.ready);
    return;
  }
  if (p.starting) {
    begin_attempt(core, p.ready);
    return;
  }
  const KernelSpec& k = workload_->kernels[*p.current];
  if (p.op >= k.ops.size()) {
    finish_kernel(core, p.ready);
    return;
  }
  const KernelOp& op = k.ops[p.op];
  Cycle t = p.ready;
  const std::uint64_t write_value = kernel_mix(p.acc, op.imm);
  const std::uint64_t v = op.kind == AccessKind::Write ? write_value : 0;
  AccessResult r;
  switch (config_.mechanism) {
    case Mechanism::CpuOnly:
      r = cpu_access(pim_cache_index(core), op.line, op.word, op.kind, v, t);
      break;
    case Mechanism::FG:
    case Mechanism::Ideal:
      r = pim_access_fg(core, op.line, op.word, op.kind, v, t);
      break;
    case Mechanism::CG:
    case Mechanism::NC:
      r = pim_access_plain(core, op.line, op.word, op.kind, v, t);
      break;
    case Mechanism::LazyPim: {
      const KernelRecord& rec = tracker_->record(k.id);
      if (rec.locked_mode && op.kind == AccessKind::Read && !locked_lines_.count(op.line)) {
        // Lines first read under the fallback are locked on first touch.
        if (const auto* l = l2_.find(op.line); l && l->meta.dirty) {
          const std::uint64_t before = mem_.off_chip_traffic();
          t = std::max(t, writeback_l2(op.line, t, TrafficClass::Coherence));
          ++stats_.flushed_lines;
          ++p.lock_flushed;
          p.lock_bytes += mem_.off_chip_traffic() - before;
        }
        locked_lines_.insert(op.line);
        dir_[op.line].locked = true;
        // A line write-allocated earlier in the attempt picks up words the
        // CPU changed since.
        PimMeta* held = nullptr;
        if (auto* l = pim_l1_[core].find(op.line)) held = &l->meta;
        else if (auto v = p.victims.find(op.line); v != p.victims.end()) held = &v->second;
        if (held) held->data = merge_commit_line(dram_value(op.line), held->data, held->dirty_mask);
      }
      r = pim_access_speculative(core, op.line, op.word, op.kind, v, t);
      if (r.aborted) {
        rollback(core, r.done, {}, true, false, nullptr);
        return;
      }
      break;
    }
  }
  LogEntry e{op.kind == AccessKind::Read ? LogEntry::Kind::PimRead : LogEntry::Kind::PimWrite};
  e.agent = core;
  e.kernel = k.id;
  e.attempt = p.attempt;
  e.line = op.line;
  e.word = op.word;
  e.value = op.kind == AccessKind::Read ? r.value : write_value;
  e.time = t;
  log_.push_back(e);
  if (op.kind == AccessKind::Read) p.acc = kernel_mix(p.acc, r.value);
  ++p.op;
  p.ready = r.done;
}

void System::start_kernel(std::uint32_t core, Cycle t) {
  PimAgent& p = pims_[core];
  const KernelSpec& k = workload_->kernels[p.queue.front()];
  if (config_.mechanism == Mechanism::CG) {
    if (cg_held_) {
      p.blocked = true;
      cg_kernel_waiters_.push_back(core);
      return;
    }
    t = std::max(t, cg_acquire(t).done);
  }
  p.current = p.queue.front();
  p.queue.pop_front();
  ++stats_.kernels;
  if (config_.mechanism != Mechanism::CpuOnly) t = mem_.send_message(t, 0, TrafficClass::Packet);
  if (tracker_) tracker_->start_kernel(k.id, core, k.acc_init, cpu_dirty_pim_lines());
  p.attempt = 0;
  p.lock_request.clear();
  begin_attempt(core, t);
}

void System::begin_attempt(std::uint32_t core, Cycle t) {
  PimAgent& p = pims_[core];
  const KernelSpec& k = workload_->kernels[*p.current];
  p.starting = false;
  p.ready = t;
  if (tracker_ && tracker_->record(k.id).locked_mode) {
    if (lock_holder_ && *lock_holder_ != core) {
      p.starting = true;
      p.blocked = true;
      lock_waiters_.push_back(core);
      return;
    }
    acquire_line_locks(core, t);
  }
  p.op = 0;
  p.acc = k.acc_init;
  p.attempt_start = t;
  if (config_.mechanism == Mechanism::CG || config_.mechanism == Mechanism::NC || config_.mechanism == Mechanism::LazyPim)
    discard_pim_cache(core);
  LogEntry e{LogEntry::Kind::AttemptStart};
  e.agent = core;
  e.kernel = k.id;
  e.attempt = p.attempt;
  e.time = t;
  log_.push_back(e);
}

void System::acquire_line_locks(std::uint32_t core, Cycle t) {
  PimAgent& p = pims_[core];
  lock_holder_ = core;
  locked_lines_ = p.lock_request;
  Cycle done = t;
  const std::uint64_t before = mem_.off_chip_traffic();
  for (LineAddr l : dirty_pim_lines_in(locked_lines_)) {
    done = std::max(done, writeback_l2(l, t, TrafficClass::Coherence));
    ++stats_.flushed_lines;
    ++p.lock_flushed;
  }
  p.lock_bytes += mem_.off_chip_traffic() - before;
  for (LineAddr l : locked_lines_) dir_[l].locked = true;
  p.ready = done;
}

void System::release_line_locks(Cycle t) {
  for (LineAddr l : locked_lines_) {
    auto it = dir_.find(l);
    if (it == dir_.end()) continue;
    it->second.locked = false;
    if (it->second.state == Mesi::I) dir_.erase(it);
  }
  locked_lines_.clear();
  lock_holder_.reset();
  wake_cpus(locked_line_waiters_, t);
  if (!lock_waiters_.empty()) {
    PimAgent& w = pims_[lock_waiters_.front()];
    lock_waiters_.pop_front();
    w.blocked = false;
    w.ready = std::max(w.ready, t);
  }
}

void System::finish_kernel(std::uint32_t core, Cycle t) {
  if (config_.mechanism == Mechanism::LazyPim) {
    finish_speculative(core, t);
    return;
  }
  PimAgent& p = pims_[core];
  const KernelSpec& k = workload_->kernels[*p.current];
  Cycle done = t;
  if (config_.mechanism != Mechanism::CpuOnly) done = mem_.send_message(t, 0, TrafficClass::Packet);
  if (config_.mechanism == Mechanism::CG) {
    cg_release(done);
    // Woken cores retry first; the next kernel acquires after them.
    const Cycle woken = cg_cpu_waiters_.size();
    wake_cpus(cg_cpu_waiters_, done);
    if (!cg_kernel_waiters_.empty()) {
      PimAgent& w = pims_[cg_kernel_waiters_.front()];
      cg_kernel_waiters_.pop_front();
      w.blocked = false;
      w.ready = std::max(w.ready, done + woken);
    }
  }
  LogEntry e{LogEntry::Kind::Commit};
  e.agent = core;
  e.kernel = k.id;
  e.time = t;
  log_.push_back(e);
  ++stats_.commits;
  p.current.reset();
  p.ready = done;
  stats_.pim_finish = std::max(stats_.pim_finish, done);
}

void System::finish_speculative(std::uint32_t core, Cycle t) {
  PimAgent& p = pims_[core];
  const KernelSpec& k = workload_->kernels[*p.current];
  KernelRecord& rec = tracker_->record(k.id);
  const FinishDecision d = tracker_->finish_kernel(k.id);
  const std::uint64_t bytes_before = mem_.off_chip_traffic();

  const std::uint32_t sig_bytes = static_cast<std::uint32_t>(Signature::kBytes * (d.read_links + d.write_links));
  const Cycle notice = std::max(mem_.send_message(t, 0, TrafficClass::Coherence),
                                mem_.send_payload(t, sig_bytes, TrafficClass::Signature));
  const Cycle decided = mem_.send_message(notice, 0, TrafficClass::Coherence);

  AttemptSummary s;
  s.attempt = p.attempt;
  s.start = p.attempt_start;
  s.read_links = d.read_links;
  s.write_links = d.write_links;
  s.conflict_lines = d.matches.size();
  s.exact_conflict = d.exact_conflict;
  s.control_messages = 2;

  std::vector<LineAddr> written;
  pim_l1_[core].for_each_valid([&](const auto& l) {
    if (l.meta.speculative) written.push_back(l.line);
  });
  for (const auto& [line, _] : p.victims) written.push_back(line);
  std::sort(written.begin(), written.end());

  const bool lock_conflict =
      !d.rollback && lock_holder_ && *lock_holder_ != core &&
      std::any_of(written.begin(), written.end(), [&](LineAddr l) { return locked_lines_.count(l) != 0; });
  if (d.rollback || lock_conflict) {
    std::vector<LineAddr> flush;
    for (LineAddr l : d.matches)
      if (const auto* e = l2_.find(l); e && e->meta.dirty) flush.push_back(l);
    p.pending_summary = s;
    p.pending_bytes = mem_.off_chip_traffic() - bytes_before;
    rollback(core, decided, flush, false, lock_conflict, &d);
    return;
  }

  // Commit: invalidate CPU copies matching the write signature, then merge.
  Cycle done = decided;
  std::vector<LineAddr> victims;
  l2_.for_each_valid([&](const auto& l) {
    if (map_.contains(l.line) && rec.write_set.test(l.line)) victims.push_back(l.line);
  });
  for (LineAddr line : victims) {
    ++stats_.invalidations;
    ++s.invalidations;
    done = std::max(done, mem_.send_message(decided, 0, TrafficClass::Coherence));
    if (l2_.find(line)->meta.dirty) {
      done = std::max(done, writeback_l2(line, decided, TrafficClass::Coherence));
      ++stats_.flushed_lines;
      ++s.flushed_lines;
    }
    drop_cpu_copies(line);
  }
  for (LineAddr line : written) {
    const auto* l = pim_l1_[core].find(line);
    const PimMeta& m = l ? l->meta : p.victims.at(line);
    dram(line) = merge_commit_line(dram_value(line), m.data, m.dirty_mask);
    done = std::max(done, mem_.submit({pim_port(core), pa_of(line), AccessKind::Write, kLineBytes, decided}).complete_time);
  }
  tracker_->record_remote_commit(k.id, written);
  tracker_->commit(k.id);
  if (rec.locked_mode)
    ++stats_.locked_commits;
  else
    ++stats_.commits;

  s.result = rec.locked_mode ? OutcomeKind::LockedCommit : OutcomeKind::Committed;
  s.flushed_lines += p.lock_flushed;
  s.bytes = mem_.off_chip_traffic() - bytes_before + p.lock_bytes;
  s.end = done;
  rec.attempts.push_back(s);
  p.lock_flushed = 0;
  p.lock_bytes = 0;

  LogEntry e{LogEntry::Kind::Commit};
  e.agent = core;
  e.kernel = k.id;
  e.attempt = p.attempt;
  e.time = t;
  log_.push_back(e);

  discard_pim_cache(core);
  if (rec.locked_mode) release_line_locks(done);
  pim_map_locked_until_ = std::max(pim_map_locked_until_, done);
  p.current.reset();
  p.ready = done;
  stats_.pim_finish = std::max(stats_.pim_finish, done);
}

void System::rollback(std::uint32_t core, Cycle t, const std::vector<LineAddr>& flush, bool evicted, bool lock_conflict,
                      const FinishDecision* decision) {
  PimAgent& p = pims_[core];
  const KernelSpec& k = workload_->kernels[*p.current];
  KernelRecord& rec = tracker_->record(k.id);
  const std::uint64_t bytes_before = mem_.off_chip_traffic();
  AttemptSummary s = decision ? p.pending_summary : AttemptSummary{};
  if (!decision) {
    s.attempt = p.attempt;
    s.start = p.attempt_start;
    s.read_links = rec.read_set.chain_length();
    s.write_links = rec.write_set.chain_length();
  }
  Cycle done = t;
  if (evicted) {
    done = mem_.send_message(t, 0, TrafficClass::Coherence);
    s.control_messages = 1;
    s.read_links = 0;
    s.write_links = 0;
  }
  for (LineAddr l : flush) {
    done = std::max(done, writeback_l2(l, t, TrafficClass::Coherence));
    ++stats_.flushed_lines;
    ++s.flushed_lines;
  }
  s.result = OutcomeKind::RolledBack;
  s.evicted = evicted;
  s.flushed_lines += p.lock_flushed;
  s.bytes = (decision ? p.pending_bytes : 0) + mem_.off_chip_traffic() - bytes_before + p.lock_bytes;
  s.end = done;
  rec.attempts.push_back(s);
  p.lock_flushed = 0;
  p.lock_bytes = 0;

  ++stats_.rollbacks;
  if (evicted)
    ++stats_.eviction_rollbacks;
  else if (lock_conflict)
    ++stats_.lock_conflict_rollbacks;
  else if (decision && !decision->exact_conflict)
    ++stats_.false_positive_rollbacks;

  LogEntry e{LogEntry::Kind::Rollback};
  e.agent = core;
  e.kernel = k.id;
  e.attempt = p.attempt;
  e.value = evicted ? LogEntry::kRollbackEviction : lock_conflict ? LogEntry::kRollbackLockConflict : LogEntry::kRollbackConflict;
  e.time = t;
  log_.push_back(e);

  p.lock_request.insert(rec.read_set.members().begin(), rec.read_set.members().end());
  discard_pim_cache(core);
  if (rec.locked_mode) throw InvariantViolation("attempt holding line locks rolled back");
  tracker_->rollback(k.id, cpu_dirty_pim_lines());
  pim_map_locked_until_ = std::max(pim_map_locked_until_, done);
  ++p.attempt;
  begin_attempt(core, done);
}

// ---------------------------------------------------------------------------

LineData System::value_of(LineAddr line) const {
  if (auto it = dir_.find(line); it != dir_.end() && it->second.state == Mesi::M) {
    const std::uint32_t owner = it->second.owner();
    if (is_pim_cache(owner)) return pim_l1_[owner - workload_->cpu_cores].find(line)->meta.data;
  }
  if (const auto* l = l2_.find(line); l && l->meta.dirty) return l->meta.data;
  return dram_value(line);
}

std::map<LineAddr, LineData> System::final_memory() const {
  std::map<LineAddr, LineData> out;
  for (const auto& [line, _] : dram_) out[line] = value_of(line);
  l2_.for_each_valid([&](const auto& l) { out[l.line] = value_of(l.line); });
  for (const auto& c : pim_l1_) c.for_each_valid([&](const auto& l) { out[l.line] = value_of(l.line); });
  return out;
}

Mesi System::cache_state(std::uint32_t cache, LineAddr line) const {
  auto it = dir_.find(line);
  return it == dir_.end() ? Mesi::I : it->second.state_of(cache);
}

const DirectoryEntry* System::directory_entry(LineAddr line) const {
  auto it = dir_.find(line);
  return it == dir_.end() ? nullptr : &it->second;
}

bool System::l2_dirty(LineAddr line) const {
  const auto* l = l2_.find(line);
  return l && l->meta.dirty;
}

void System::check_invariants() const {
  auto fail = [](const std::string& what) { throw InvariantViolation(what); };
  for (const auto& [line, e] : dir_) {
    try {
      check_entry(e);
    } catch (const ProtocolViolation& ex) {
      fail(std::string("line ") + std::to_string(line) + ": " + ex.what());
    }
    for (std::uint64_t m = e.holders; m != 0; m &= m - 1) {
      const auto c = static_cast<std::uint32_t>(std::countr_zero(m));
      if (c < cpu_cache_count()) {
        if (!cpu_l1_[c].find(line)) fail("directory lists a CPU copy that is not cached");
        if (!l2_.find(line)) fail("L1 copy missing from the inclusive L2");
      } else if (is_pim_cache(c)) {
        if (!pim_l1_[c - workload_->cpu_cores].find(line)) fail("directory lists a PIM copy that is not cached");
        if ((e.state == Mesi::E || e.state == Mesi::M) && l2_.find(line)) fail("PIM owner while the L2 holds a copy");
      } else {
        fail("directory lists an unknown cache");
      }
    }
  }
  for (std::uint32_t c = 0; c < cpu_l1_.size(); ++c) {
    cpu_l1_[c].for_each_valid([&](const auto& l) {
      auto it = dir_.find(l.line);
      if (it == dir_.end() || !it->second.holds(c)) fail("CPU copy unknown to the directory");
    });
  }
  if (config_.mechanism == Mechanism::FG || config_.mechanism == Mechanism::Ideal) {
    for (std::uint32_t p = 0; p < pim_l1_.size(); ++p) {
      pim_l1_[p].for_each_valid([&](const auto& l) {
        auto it = dir_.find(l.line);
        if (it == dir_.end() || !it->second.holds(pim_cache_index(p))) fail("PIM copy unknown to the directory");
      });
    }
  }
  if (lock_holder_ == std::nullopt && !locked_lines_.empty()) fail("line locks without a holder");
}

std::string System::kernel_log_json_lines() const {
  std::ostringstream out;
  if (!tracker_) return {};
  for (const auto& [_, rec] : tracker_->records()) {
    std::uint64_t bytes = 0;
    std::size_t conflicts = 0;
    std::size_t chain = 0;
    for (const auto& a : rec.attempts) {
      bytes += a.bytes;
      conflicts += a.conflict_lines;
      chain = std::max({chain, a.read_links, a.write_links});
    }
    nlohmann::json j = {{"kernel-id", to_index(rec.id)},
                        {"attempts", rec.attempts.size()},
                        {"outcome", rec.outcome() ? outcome_name(*rec.outcome()) : "unfinished"},
                        {"conflict-lines", conflicts},
                        {"signature-chain-length", chain},
                        {"bytes", bytes}};
    out << j.dump() << '\n';
  }
  return out.str();
}

}  // namespace pimbench
