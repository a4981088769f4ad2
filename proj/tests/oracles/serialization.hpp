#pragma once

// Replays a System access log against a flat memory.
//
// replay_sequential: every access takes effect at its log position (FG, CG,
// NC, Ideal, CPU-only).
// replay_atomic: kernel accesses take effect all at once at the kernel's
// Commit entry, re-executed from the kernel spec; reads of the committed
// attempt must match.
// check_conflicts: exact line-set conflict check per speculative attempt.

#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pimbench/coherence.hpp"
#include "pimbench/workloads.hpp"

namespace oracle {

using pimbench::CoherenceWorkload;
using pimbench::LineAddr;
using pimbench::LineData;
using pimbench::LogEntry;
using Kind = pimbench::LogEntry::Kind;

struct ReplayResult {
  bool ok = true;
  std::string error;
  std::map<LineAddr, LineData> memory;

  void fail(std::string why) {
    if (ok) error = std::move(why);
    ok = false;
  }
};

inline std::string describe(const LogEntry& e, std::size_t index) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "entry %zu kind %d agent %u kernel %u line %llu word %u value %llu", index,
                static_cast<int>(e.kind), e.agent, static_cast<unsigned>(e.kernel),
                static_cast<unsigned long long>(e.line), e.word, static_cast<unsigned long long>(e.value));
  return buf;
}

inline std::uint64_t word_of(const std::map<LineAddr, LineData>& m, LineAddr line, unsigned word) {
  auto it = m.find(line);
  return it == m.end() ? 0 : it->second[word];
}

inline bool same_memory(const std::map<LineAddr, LineData>& a, const std::map<LineAddr, LineData>& b,
                        std::string* why = nullptr) {
  std::set<LineAddr> lines;
  for (const auto& [l, _] : a) lines.insert(l);
  for (const auto& [l, _] : b) lines.insert(l);
  for (LineAddr l : lines)
    for (unsigned w = 0; w < pimbench::kWordsPerLine; ++w)
      if (word_of(a, l, w) != word_of(b, l, w)) {
        if (why) *why = "line " + std::to_string(l) + " word " + std::to_string(w) + " differs";
        return false;
      }
  return true;
}

inline ReplayResult replay_sequential(const std::vector<LogEntry>& log) {
  ReplayResult r;
  for (std::size_t i = 0; i < log.size(); ++i) {
    const LogEntry& e = log[i];
    switch (e.kind) {
      case Kind::CpuWrite:
      case Kind::PimWrite:
        r.memory[e.line][e.word] = e.value;
        break;
      case Kind::CpuRead:
      case Kind::PimRead:
        if (word_of(r.memory, e.line, e.word) != e.value) r.fail("stale read at " + describe(e, i));
        break;
      default:
        break;
    }
  }
  return r;
}

inline ReplayResult replay_atomic(const CoherenceWorkload& w, const std::vector<LogEntry>& log) {
  ReplayResult r;
  std::map<std::uint32_t, const pimbench::KernelSpec*> spec;
  for (const auto& k : w.kernels) spec[static_cast<std::uint32_t>(k.id)] = &k;

  // Reads per (kernel, attempt), in log order.
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<std::uint64_t>> reads;
  for (const auto& e : log)
    if (e.kind == Kind::PimRead) reads[{static_cast<std::uint32_t>(e.kernel), e.attempt}].push_back(e.value);

  std::set<std::uint32_t> committed;
  for (std::size_t i = 0; i < log.size(); ++i) {
    const LogEntry& e = log[i];
    switch (e.kind) {
      case Kind::CpuWrite:
        r.memory[e.line][e.word] = e.value;
        break;
      case Kind::CpuRead:
        if (word_of(r.memory, e.line, e.word) != e.value) r.fail("CPU read disagrees at " + describe(e, i));
        break;
      case Kind::Commit: {
        const auto id = static_cast<std::uint32_t>(e.kernel);
        if (!committed.insert(id).second) r.fail("kernel committed twice at " + describe(e, i));
        const auto& k = *spec.at(id);
        const auto& seen = reads[{id, e.attempt}];
        std::size_t next_read = 0;
        std::uint64_t acc = k.acc_init;
        for (const auto& op : k.ops) {
          if (op.kind == pimbench::AccessKind::Read) {
            const std::uint64_t v = word_of(r.memory, op.line, op.word);
            if (next_read >= seen.size() || seen[next_read] != v)
              r.fail("kernel " + std::to_string(id) + " read " + std::to_string(next_read) +
                     " does not match the serialized value");
            ++next_read;
            acc = pimbench::kernel_mix(acc, v);
          } else {
            r.memory[op.line][op.word] = pimbench::kernel_mix(acc, op.imm);
          }
        }
        break;
      }
      default:
        break;
    }
  }
  if (committed.size() != w.kernels.size()) r.fail("not every kernel committed");
  return r;
}

struct ConflictReport {
  std::size_t attempts = 0;
  std::size_t conflicting = 0;
  std::size_t detected = 0;
  std::size_t missed = 0;
  std::size_t false_positive = 0;
  std::size_t evictions = 0;
  std::size_t lock_conflicts = 0;
  std::string first_missed;
};

/// A speculative attempt conflicts when a line it read was written by a CPU
/// or committed by another kernel between its start and its end, or when it
/// read a word whose serialized value differs (a CPU-dirty line from before
/// the start). Locked attempts (attempt index >= max_rollbacks) only count
/// writes landing after their own read of the line.
inline ConflictReport check_conflicts(const CoherenceWorkload& w, const std::vector<LogEntry>& log,
                                      std::uint32_t max_rollbacks = 3) {
  (void)w;
  ConflictReport rep;

  // Committed write lines per kernel.
  std::map<std::uint32_t, std::set<LineAddr>> commit_lines;
  {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::set<LineAddr>> writes;
    for (const auto& e : log)
      if (e.kind == Kind::PimWrite) writes[{static_cast<std::uint32_t>(e.kernel), e.attempt}].insert(e.line);
    for (const auto& e : log)
      if (e.kind == Kind::Commit)
        commit_lines[static_cast<std::uint32_t>(e.kernel)] = writes[{static_cast<std::uint32_t>(e.kernel), e.attempt}];
  }

  struct Open {
    bool locked = false;
    std::set<LineAddr> read;
    std::set<LineAddr> written_by_others;
    std::map<std::pair<LineAddr, unsigned>, std::uint64_t> own;
    bool conflict = false;
  };
  std::map<std::uint32_t, Open> open;
  std::map<LineAddr, LineData> mem;  // serialized committed state

  auto touch = [&](LineAddr line, std::optional<std::uint32_t> committer) {
    for (auto& [id, a] : open) {
      if (committer && *committer == id) continue;
      if (a.locked) {
        if (a.read.count(line)) a.conflict = true;
      } else {
        a.written_by_others.insert(line);
      }
    }
  };
  auto conflicted = [](const Open& a) {
    if (a.conflict) return true;
    for (LineAddr l : a.read)
      if (a.written_by_others.count(l)) return true;
    return false;
  };

  for (std::size_t i = 0; i < log.size(); ++i) {
    const LogEntry& e = log[i];
    const auto id = static_cast<std::uint32_t>(e.kernel);
    switch (e.kind) {
      case Kind::AttemptStart:
        open[id] = Open{};
        open[id].locked = e.attempt >= max_rollbacks;
        break;
      case Kind::PimRead: {
        auto& a = open.at(id);
        a.read.insert(e.line);
        auto own = a.own.find({e.line, e.word});
        const std::uint64_t expect = own != a.own.end() ? own->second : word_of(mem, e.line, e.word);
        if (expect != e.value) a.conflict = true;
        break;
      }
      case Kind::PimWrite:
        open.at(id).own[{e.line, e.word}] = e.value;
        break;
      case Kind::CpuWrite:
        mem[e.line][e.word] = e.value;
        touch(e.line, std::nullopt);
        break;
      case Kind::Commit: {
        auto& a = open.at(id);
        ++rep.attempts;
        if (conflicted(a)) {
          ++rep.conflicting;
          ++rep.missed;
          if (rep.first_missed.empty()) rep.first_missed = describe(e, i);
        }
        for (const auto& [key, v] : a.own) mem[key.first][key.second] = v;
        open.erase(id);
        for (LineAddr l : commit_lines[id]) touch(l, id);
        break;
      }
      case Kind::Rollback: {
        auto& a = open.at(id);
        ++rep.attempts;
        if (e.value == LogEntry::kRollbackEviction)
          ++rep.evictions;
        else if (e.value == LogEntry::kRollbackLockConflict)
          ++rep.lock_conflicts;
        if (conflicted(a)) {
          ++rep.conflicting;
          ++rep.detected;
        } else if (e.value == LogEntry::kRollbackConflict) {
          ++rep.false_positive;
        }
        open.erase(id);
        break;
      }
      default:
        break;
    }
  }
  return rep;
}

}  // namespace oracle
