#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace pimbench {

using Cycle = std::uint64_t;
using VirtAddr = std::uint64_t;
using PhysAddr = std::uint64_t;
/// Physical address divided by the line size.
using LineAddr = std::uint64_t;

inline constexpr std::uint32_t kLineBytes = 64;
inline constexpr std::uint32_t kWordBytes = 8;
inline constexpr std::uint32_t kWordsPerLine = kLineBytes / kWordBytes;

using LineData = std::array<std::uint64_t, kWordsPerLine>;

enum class RegionId : std::uint32_t {};
enum class RequestId : std::uint32_t {};
enum class KernelId : std::uint32_t {};

constexpr std::uint32_t to_index(RegionId id) { return static_cast<std::uint32_t>(id); }
constexpr std::uint32_t to_index(RequestId id) { return static_cast<std::uint32_t>(id); }
constexpr std::uint32_t to_index(KernelId id) { return static_cast<std::uint32_t>(id); }

enum class AccessKind : std::uint8_t { Read, Write };

// SplitMix64 step; used to derive independent seeds from one run seed.
constexpr std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  std::uint64_t s = base ^ (tag * 0xD1B54A32D192ED03ULL);
  splitmix64(s);
  return splitmix64(s);
}

class SimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Physical address outside every configured stack.
class AddressFault : public SimError {
 public:
  explicit AddressFault(PhysAddr pa)
      : SimError("unmapped physical address 0x" + hex(pa)), address(pa) {}
  PhysAddr address;

  static std::string hex(std::uint64_t v) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    do {
      out.insert(out.begin(), kDigits[v & 0xF]);
      v >>= 4;
    } while (v != 0);
    return out;
  }
};

class RemapRefused : public SimError {
 public:
  using SimError::SimError;
};

class AllocationRefused : public SimError {
 public:
  using SimError::SimError;
};

class PageFault : public SimError {
 public:
  PageFault(VirtAddr va_, RegionId region_)
      : SimError("page fault at va 0x" + AddressFault::hex(va_) + " in region " +
                 std::to_string(to_index(region_))),
        va(va_),
        region(region_) {}
  VirtAddr va;
  RegionId region;
};

class NotPimRegion : public SimError {
 public:
  explicit NotPimRegion(VirtAddr va_)
      : SimError("va 0x" + AddressFault::hex(va_) + " is not inside a PIM region"), va(va_) {}
  VirtAddr va;
};

class ProtocolViolation : public SimError {
 public:
  using SimError::SimError;
};

class InvariantViolation : public SimError {
 public:
  using SimError::SimError;
};

class ConfigError : public SimError {
 public:
  using SimError::SimError;
};

class IoError : public SimError {
 public:
  using SimError::SimError;
};

}  // namespace pimbench
