#include "pimbench/signature.hpp"

namespace pimbench {

namespace {
constexpr std::uint64_t kLineMask = (1ULL << 48) - 1;
}

Signature::Signature(std::uint64_t seed) {
  std::uint64_t s = seed;
  for (int i = 0; i < 2; ++i) {
    mul_[i] = splitmix64(s) | 1;
    add_[i] = splitmix64(s);
  }
  chain_.emplace_back();
}

std::size_t Signature::bank_index(int bank, LineAddr line) const {
  // Multiply-shift over the 48-bit line address; top 10 bits index the bank.
  return static_cast<std::size_t>((mul_[bank] * (line & kLineMask) + add_[bank]) >> 54);
}

void Signature::insert(LineAddr line) {
  if (!members_.insert(line).second) return;
  if (chain_.back().count >= kCapacity) chain_.emplace_back();
  Filter& f = chain_.back();
  f.banks[0].set(bank_index(0, line));
  f.banks[1].set(bank_index(1, line));
  ++f.count;
  if (!test(line)) throw InvariantViolation("signature lost an inserted line");
}

bool Signature::test(LineAddr line) const {
  const std::size_t h0 = bank_index(0, line);
  const std::size_t h1 = bank_index(1, line);
  for (const Filter& f : chain_)
    if (f.banks[0].test(h0) && f.banks[1].test(h1)) return true;
  return false;
}

void Signature::clear() {
  chain_.assign(1, Filter{});
  members_.clear();
}

std::vector<LineAddr> sig_match(const Signature& sig, std::span<const LineAddr> lines) {
  std::vector<LineAddr> out;
  for (LineAddr l : lines)
    if (sig.test(l)) out.push_back(l);
  return out;
}

}  // namespace pimbench
