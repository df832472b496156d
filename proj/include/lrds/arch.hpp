//===-- lrds/arch.hpp - Architecture parameters ----------------*- C++ -*-===//
//
// Address-space geometry for the two supported 64-bit targets.
//
//===----------------------------------------------------------------------===//
#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace lrds {

using Addr = std::uint64_t;

enum class ArchName { X86_64, ARM64 };

struct Arch {
  ArchName name = ArchName::X86_64;
  unsigned address_bits = 47;
  unsigned page_shift = 12;

  static constexpr Arch x86_64() { return {ArchName::X86_64, 47, 12}; }
  static constexpr Arch arm64() { return {ArchName::ARM64, 48, 12}; }
  static constexpr Arch of(ArchName n) {
    return n == ArchName::X86_64 ? x86_64() : arm64();
  }

  constexpr std::uint64_t page_size() const { return std::uint64_t{1} << page_shift; }
  constexpr std::uint64_t space_bytes() const { return std::uint64_t{1} << address_bits; }
  constexpr std::uint64_t total_pages() const {
    return std::uint64_t{1} << (address_bits - page_shift);
  }
  constexpr Addr page_floor(Addr a) const { return a & ~(page_size() - 1); }
  constexpr bool page_aligned(Addr a) const { return (a & (page_size() - 1)) == 0; }

  friend constexpr bool operator==(const Arch&, const Arch&) = default;
};

inline std::string_view to_string(ArchName n) {
  return n == ArchName::X86_64 ? "x86-64" : "arm64";
}

/// Accepts "x86-64", "x86_64", "arm64" and "aarch64". Throws std::invalid_argument.
ArchName parse_arch(std::string_view s);

/// log2 of a power of two; the caller guarantees the argument is one.
constexpr unsigned log2_exact(std::uint64_t v) {
  unsigned r = 0;
  while (v > 1) {
    v >>= 1;
    ++r;
  }
  return r;
}

constexpr bool is_pow2(std::uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

std::string hex(std::uint64_t v);

}  // namespace lrds
