#include "pimbench/lazypim.hpp"

#include <algorithm>

namespace pimbench {

void PimDataMap::add_lines(LineAddr first, std::uint64_t count) {
  if (count == 0) return;
  const LineAddr last = first + count - 1;
  for (std::uint64_t page = first >> kLinesPerPageShift; page <= (last >> kLinesPerPageShift); ++page) pages_.insert(page);
}

LineData merge_commit_line(const LineData& memory, const LineData& speculative, std::uint8_t dirty_mask) {
  LineData out = memory;
  for (std::size_t w = 0; w < kWordsPerLine; ++w)
    if ((dirty_mask >> w) & 1) out[w] = speculative[w];
  return out;
}

const char* outcome_name(OutcomeKind k) {
  switch (k) {
    case OutcomeKind::Committed: return "committed";
    case OutcomeKind::RolledBack: return "rolled-back";
    case OutcomeKind::LockedCommit: return "locked-commit";
  }
  return "unknown";
}

void KernelRecord::set_outcome(OutcomeKind kind) {
  if (outcome_) throw InvariantViolation("kernel " + std::to_string(to_index(id)) + " outcome set twice");
  outcome_ = kind;
}

KernelRecord& LazyPimTracker::record(KernelId id) {
  auto it = records_.find(to_index(id));
  if (it == records_.end()) throw SimError("unknown kernel " + std::to_string(to_index(id)));
  return it->second;
}

const KernelRecord& LazyPimTracker::record(KernelId id) const {
  auto it = records_.find(to_index(id));
  if (it == records_.end()) throw SimError("unknown kernel " + std::to_string(to_index(id)));
  return it->second;
}

std::uint64_t LazyPimTracker::signature_seed(const KernelRecord& rec, std::uint32_t which) const {
  return derive_seed(seed_, (std::uint64_t{to_index(rec.id)} << 16) | (std::uint64_t{rec.attempt} << 2) | which);
}

void LazyPimTracker::open_attempt(KernelRecord& rec, std::span<const LineAddr> cpu_dirty) {
  rec.read_set = Signature(signature_seed(rec, 0));
  rec.write_set = Signature(signature_seed(rec, 1));
  rec.cpu_write_set = Signature(signature_seed(rec, 2));
  rec.conflict_candidates.clear();
  for (LineAddr l : cpu_dirty) {
    if (!map_->contains(l)) continue;
    rec.cpu_write_set.insert(l);
    rec.conflict_candidates.insert(l);
  }
  rec.locked_mode = rec.rollbacks >= max_rollbacks_;
  rec.active = true;
}

KernelRecord& LazyPimTracker::start_kernel(KernelId id, std::uint32_t pim_core, std::uint64_t acc_init,
                                           std::span<const LineAddr> cpu_dirty) {
  auto [it, fresh] = records_.try_emplace(to_index(id));
  if (!fresh) throw InvariantViolation("kernel " + std::to_string(to_index(id)) + " started twice");
  KernelRecord& rec = it->second;
  rec.id = id;
  rec.pim_core = pim_core;
  rec.checkpoint = {0, acc_init};
  open_attempt(rec, cpu_dirty);
  return rec;
}

void LazyPimTracker::record_cpu_write(LineAddr line) {
  if (!map_->contains(line)) return;
  for (auto& [_, rec] : records_) {
    if (!rec.active) continue;
    rec.cpu_write_set.insert(line);
    rec.conflict_candidates.insert(line);
  }
}

void LazyPimTracker::record_pim_read(KernelId id, LineAddr line) { record(id).read_set.insert(line); }

void LazyPimTracker::record_pim_write(KernelId id, LineAddr line) { record(id).write_set.insert(line); }

void LazyPimTracker::record_remote_commit(KernelId committer, std::span<const LineAddr> lines) {
  for (auto& [idx, rec] : records_) {
    if (!rec.active || idx == to_index(committer)) continue;
    rec.conflict_candidates.insert(lines.begin(), lines.end());
  }
}

FinishDecision LazyPimTracker::finish_kernel(KernelId id) const {
  const KernelRecord& rec = record(id);
  FinishDecision d;
  d.read_links = rec.read_set.chain_length();
  d.write_links = rec.write_set.chain_length();
  std::vector<LineAddr> candidates(rec.conflict_candidates.begin(), rec.conflict_candidates.end());
  std::sort(candidates.begin(), candidates.end());
  d.exact_conflict = std::any_of(candidates.begin(), candidates.end(),
                                 [&](LineAddr l) { return rec.read_set.members().count(l) != 0; });
  if (rec.locked_mode) return d;
  d.matches = sig_match(rec.read_set, candidates);
  d.rollback = !d.matches.empty();
  return d;
}

void LazyPimTracker::rollback(KernelId id, std::span<const LineAddr> cpu_dirty) {
  KernelRecord& rec = record(id);
  if (rec.locked_mode) throw InvariantViolation("attempt holding line locks rolled back");
  ++rec.rollbacks;
  ++rec.attempt;
  open_attempt(rec, cpu_dirty);
}

void LazyPimTracker::commit(KernelId id) {
  KernelRecord& rec = record(id);
  rec.set_outcome(rec.locked_mode ? OutcomeKind::LockedCommit : OutcomeKind::Committed);
  rec.active = false;
}

}  // namespace pimbench
