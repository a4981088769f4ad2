#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "pimbench/common.hpp"

namespace pimbench {

/// Tag store of a set-associative cache with per-line metadata `Meta`.
/// Replacement is LRU within whatever tiering the caller's rank function
/// imposes; lines the rank function rejects are never chosen as victims.
template <typename Meta>
class SetAssociativeCache {
 public:
  struct Line {
    bool valid = false;
    LineAddr line = 0;
    std::uint64_t last_use = 0;
    Meta meta{};
  };

  SetAssociativeCache(std::size_t capacity_bytes, std::size_t ways, std::size_t line_bytes = kLineBytes)
      : ways_(ways) {
    if (ways == 0 || capacity_bytes % (ways * line_bytes) != 0) throw std::invalid_argument("bad cache geometry");
    sets_ = capacity_bytes / (ways * line_bytes);
    if (sets_ == 0) throw std::invalid_argument("cache has no sets");
    lines_.resize(sets_ * ways_);
  }

  std::size_t sets() const { return sets_; }
  std::size_t ways() const { return ways_; }
  std::size_t set_index(LineAddr line) const { return static_cast<std::size_t>(line % sets_); }

  std::span<Line> set_of(LineAddr line) { return {lines_.data() + set_index(line) * ways_, ways_}; }
  std::span<const Line> set_of(LineAddr line) const { return {lines_.data() + set_index(line) * ways_, ways_}; }

  Line* find(LineAddr line) {
    for (auto& l : set_of(line))
      if (l.valid && l.line == line) return &l;
    return nullptr;
  }
  const Line* find(LineAddr line) const {
    for (const auto& l : set_of(line))
      if (l.valid && l.line == line) return &l;
    return nullptr;
  }

  void touch(Line& l) { l.last_use = ++tick_; }

  /// Free way if one exists, else the best-ranked evictable line (lowest
  /// rank, then least recently used). `rank` returns nullopt for pinned lines.
  template <typename Rank>
  Line* choose_victim(LineAddr line, Rank rank) {
    Line* best = nullptr;
    int best_rank = 0;
    for (auto& l : set_of(line)) {
      if (!l.valid) return &l;
      std::optional<int> r = rank(static_cast<const Line&>(l));
      if (!r) continue;
      if (!best || *r < best_rank || (*r == best_rank && l.last_use < best->last_use)) {
        best = &l;
        best_rank = *r;
      }
    }
    return best;
  }

  Line* choose_victim(LineAddr line) {
    return choose_victim(line, [](const Line&) { return std::optional<int>{0}; });
  }

  Line& install(Line& slot, LineAddr line, Meta meta = {}) {
    slot.valid = true;
    slot.line = line;
    slot.meta = meta;
    touch(slot);
    return slot;
  }

  void invalidate(Line& l) {
    l.valid = false;
    l.meta = Meta{};
  }

  template <typename F>
  void for_each_valid(F&& f) {
    for (auto& l : lines_)
      if (l.valid) f(l);
  }
  template <typename F>
  void for_each_valid(F&& f) const {
    for (const auto& l : lines_)
      if (l.valid) f(l);
  }

  std::size_t occupancy() const {
    std::size_t n = 0;
    for (const auto& l : lines_) n += l.valid ? 1 : 0;
    return n;
  }

 private:
  std::size_t sets_ = 0;
  std::size_t ways_ = 0;
  std::vector<Line> lines_;
  std::uint64_t tick_ = 0;
};

/// Fixed-capacity FIFO; push on a full queue is refused, not grown.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  bool full() const { return items_.size() >= capacity_; }
  bool empty() const { return items_.empty(); }
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t high_water() const { return high_water_; }

  bool try_push(T value) {
    if (full()) return false;
    items_.push_back(std::move(value));
    if (items_.size() > high_water_) high_water_ = items_.size();
    return true;
  }
  T& front() { return items_.front(); }
  const T& front() const { return items_.front(); }
  T pop() {
    T v = std::move(items_.front());
    items_.erase(items_.begin());
    return v;
  }
  std::vector<T>& items() { return items_; }
  const std::vector<T>& items() const { return items_; }

 private:
  std::size_t capacity_;
  std::size_t high_water_ = 0;
  std::vector<T> items_;
};

}  // namespace pimbench
