#include "pimbench/mesi.hpp"

#include <bit>
#include <string>

namespace pimbench {

char mesi_char(Mesi s) {
  switch (s) {
    case Mesi::I: return 'I';
    case Mesi::S: return 'S';
    case Mesi::E: return 'E';
    case Mesi::M: return 'M';
  }
  return '?';
}

std::uint32_t DirectoryEntry::owner() const { return static_cast<std::uint32_t>(std::countr_zero(holders)); }

std::uint32_t DirectoryEntry::holder_count() const { return static_cast<std::uint32_t>(std::popcount(holders)); }

void check_entry(const DirectoryEntry& e) {
  const auto n = e.holder_count();
  const bool ok = e.state == Mesi::I ? n == 0 : e.state == Mesi::S ? n >= 1 : n == 1;
  if (!ok)
    throw ProtocolViolation(std::string("directory entry in state ") + mesi_char(e.state) + " with " +
                            std::to_string(n) + " holders");
}

Transition directory_transition(const DirectoryEntry& cur, std::uint32_t r, DirRequest request) {
  if (r >= kMaxDirectoryCaches) throw ProtocolViolation("cache index out of range");
  check_entry(cur);
  Transition t;
  t.next = cur;
  const std::uint64_t bit = std::uint64_t{1} << r;
  const Mesi mine = cur.state_of(r);

  auto invalidate_others = [&](std::uint64_t others) {
    for (std::uint64_t m = others; m != 0; m &= m - 1)
      t.messages.push_back({MsgKind::Invalidate, static_cast<std::uint32_t>(std::countr_zero(m))});
  };

  switch (request) {
    case DirRequest::Read:
      if (mine != Mesi::I) {
        t.local_hit = true;
        return t;
      }
      t.messages.push_back({MsgKind::Request, r});
      switch (cur.state) {
        case Mesi::I:
          t.next.state = Mesi::E;
          t.messages.push_back({MsgKind::Fill, r});
          break;
        case Mesi::S:
          t.messages.push_back({MsgKind::Fill, r});
          break;
        case Mesi::E:
          t.next.state = Mesi::S;
          t.messages.push_back({MsgKind::Forward, cur.owner()});
          t.messages.push_back({MsgKind::OwnerData, r});
          break;
        case Mesi::M:
          t.next.state = Mesi::S;
          t.messages.push_back({MsgKind::Forward, cur.owner()});
          t.messages.push_back({MsgKind::Writeback, cur.owner()});
          break;
      }
      t.next.holders |= bit;
      return t;

    case DirRequest::Write:
      if (mine == Mesi::M || mine == Mesi::E) {
        t.local_hit = true;
        t.next.state = Mesi::M;
        return t;
      }
      t.messages.push_back({MsgKind::Request, r});
      if (mine == Mesi::S) {
        invalidate_others(cur.holders & ~bit);
      } else if (cur.state == Mesi::E || cur.state == Mesi::M) {
        t.messages.push_back({MsgKind::Forward, cur.owner()});
        t.messages.push_back({MsgKind::OwnerData, r});
      } else {
        invalidate_others(cur.holders);
        t.messages.push_back({MsgKind::Fill, r});
      }
      t.next.state = Mesi::M;
      t.next.holders = bit;
      return t;

    case DirRequest::Evict:
      if (mine == Mesi::I) throw ProtocolViolation("evict from a cache that holds no copy");
      t.messages.push_back({mine == Mesi::M ? MsgKind::Writeback : MsgKind::EvictNotice, r});
      t.next.holders &= ~bit;
      if (t.next.holders == 0) t.next.state = Mesi::I;
      return t;
  }
  throw ProtocolViolation("unknown directory request");
}

}  // namespace pimbench
