#pragma once

#include <bitset>
#include <cstdint>
#include <span>
#include <unordered_set>
#include <vector>

#include "pimbench/common.hpp"

namespace pimbench {

/// Parallel Bloom filter over line addresses: two hash functions, each
/// owning a disjoint 1024-bit bank. Once a filter holds 607 distinct lines
/// a fresh one is chained behind it.
class Signature {
 public:
  static constexpr std::size_t kBankBits = 1024;
  static constexpr std::size_t kBytes = 2 * kBankBits / 8;
  static constexpr std::size_t kCapacity = 607;

  explicit Signature(std::uint64_t seed = 0);

  void insert(LineAddr line);
  bool test(LineAddr line) const;
  void clear();

  /// Filters currently allocated; an empty signature still has one.
  std::size_t chain_length() const { return chain_.size(); }
  std::size_t insert_count() const { return members_.size(); }
  std::size_t transfer_bytes() const { return chain_.size() * kBytes; }
  bool empty() const { return members_.empty(); }

  /// Exact set of inserted lines; never transferred, kept for checks.
  const std::unordered_set<LineAddr>& members() const { return members_; }

  std::size_t bank_index(int bank, LineAddr line) const;

 private:
  struct Filter {
    std::bitset<kBankBits> banks[2];
    std::size_t count = 0;
  };

  std::uint64_t mul_[2];
  std::uint64_t add_[2];
  std::vector<Filter> chain_;
  std::unordered_set<LineAddr> members_;
};

/// Every line of `lines` that tests positive; a superset of the exact
/// intersection with what was inserted.
std::vector<LineAddr> sig_match(const Signature& sig, std::span<const LineAddr> lines);

}  // namespace pimbench
