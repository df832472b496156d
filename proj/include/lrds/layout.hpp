//===-- lrds/layout.hpp - ASLR layout model --------------------*- C++ -*-===//
//
// Randomization intervals for the four ASLR offsets and a concrete layout
// drawn from them. Interval defaults follow the Linux kernel helpers
// randomize_stack_top(), arch_pick_mmap_layout(), arch_randomize_brk() and
// load_elf_binary().
//
//===----------------------------------------------------------------------===//
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "lrds/arch.hpp"

namespace lrds {

/// Load base used when the executable is not position independent.
inline constexpr Addr kNonPieLoadBase = 0x400000;

/// Fixed segment sizes of the simulated process image (pages).
inline constexpr std::uint64_t kCodePages = 256;
inline constexpr std::uint64_t kDataPages = 16;
inline constexpr std::uint64_t kInitialHeapPages = 64;
/// Default maximum stack size: 8 MiB.
inline constexpr std::uint64_t kStackPages = std::uint64_t{1} << 11;
/// Bytes between the heap start and the lowest address mmap() may use.
inline constexpr std::uint64_t kHeapReserveBytes = std::uint64_t{1} << 36;
/// Stack guard gap the kernel leaves between stack and mmap area.
inline constexpr std::uint64_t kStackGuardGapBytes = std::uint64_t{1} << 20;

enum class OffsetKind { Stack, Mmap, Brk, Load };
inline constexpr std::array<OffsetKind, 4> kAllOffsets = {OffsetKind::Stack, OffsetKind::Mmap,
                                                          OffsetKind::Brk, OffsetKind::Load};
std::string_view offset_name(OffsetKind k);

/// Half-open [0, upper) byte interval an offset is drawn from.
struct OffsetInterval {
  std::uint64_t upper = 0;

  /// Addressable bits (log2 of the interval size).
  unsigned bits() const { return log2_exact(upper); }
  /// Bits left once offsets are page aligned.
  unsigned entropy(const Arch& arch) const { return bits() - arch.page_shift; }
};

struct LayoutConfig {
  Arch arch = Arch::x86_64();
  OffsetInterval stack_offset{std::uint64_t{1} << 34};
  OffsetInterval mmap_offset{std::uint64_t{1} << 40};
  OffsetInterval brk_offset{std::uint64_t{1} << 25};
  OffsetInterval load_offset{std::uint64_t{1} << 40};
  bool pie = true;

  static LayoutConfig defaults(ArchName arch);

  const OffsetInterval& interval(OffsetKind k) const;
  OffsetInterval& interval(OffsetKind k);

  /// Throws std::invalid_argument when an interval bound is not a power of
  /// two of at least one page.
  void validate() const;
};

struct MemoryLayout {
  Arch arch;
  std::uint64_t seed = 0;
  bool pie = true;

  std::uint64_t stack_offset = 0;
  std::uint64_t mmap_offset = 0;
  std::uint64_t brk_offset = 0;
  std::uint64_t load_offset = 0;

  Addr code_base = 0;   // lowest address of the loaded image
  Addr heap_base = 0;   // initial program break
  Addr mmap_base = 0;   // top of the mmap area, allocations grow down from here
  Addr stack_base = 0;  // top of the main stack, grows down

  Addr code_end() const { return code_base + kCodePages * arch.page_size(); }
  Addr data_base() const { return code_end(); }
  Addr mmap_floor() const { return heap_base + kHeapReserveBytes; }
  Addr stack_floor() const { return stack_base - kStackPages * arch.page_size(); }

  std::uint64_t offset(OffsetKind k) const;

  friend bool operator==(const MemoryLayout&, const MemoryLayout&) = default;
};

/// Draws the four offsets (page aligned, uniform in their interval) and
/// derives the segment bases. Deterministic in (config, seed).
MemoryLayout create_layout(const LayoutConfig& config, std::uint64_t seed);

}  // namespace lrds
