//===-- lrds/kernels.hpp - Data-parallel sweeps and trial loops -*- C++ -*-===//
//
// Every kernel has a serial reference and an OpenMP version producing the
// identical result. Tests compare the two; bench/ times them.
//
//===----------------------------------------------------------------------===//
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lrds/address_space.hpp"

namespace lrds {

/// Half-open address interval [lo, hi).
struct AddrRange {
  Addr lo = 0;
  Addr hi = 0;
  bool contains(Addr a) const { return a >= lo && a < hi; }
  friend bool operator==(const AddrRange&, const AddrRange&) = default;
};

struct LeakHit {
  Addr where = 0;   // address of the leaking word (page base for fills)
  Addr value = 0;   // the leaked pointer
  friend bool operator==(const LeakHit&, const LeakHit&) = default;
};

namespace kernels {

/// 1 where write_probe reports the page readable.
std::vector<std::uint8_t> probe_sweep_serial(const AddressSpace& space, Addr base,
                                             std::uint64_t pages);
std::vector<std::uint8_t> probe_sweep_parallel(const AddressSpace& space, Addr base,
                                               std::uint64_t pages);

/// Reads each page once and reports every 8-byte value that falls inside one
/// of `targets`. Hits are ordered by page, then by address within the page.
std::vector<LeakHit> scan_values_serial(const AddressSpace& space, std::span<const Addr> pages,
                                        std::span<const AddrRange> targets);
std::vector<LeakHit> scan_values_parallel(const AddressSpace& space, std::span<const Addr> pages,
                                          std::span<const AddrRange> targets);

/// Page bases of every readable mapping, ascending.
std::vector<Addr> readable_pages(const AddressSpace& space);

/// Runs fn(i) for i in [0, n); results are indexed by trial, so ordering does
/// not depend on scheduling. fn must only touch trial-local state.
template <class Fn>
auto run_trials_serial(std::uint64_t n, Fn&& fn) {
  std::vector<decltype(fn(std::uint64_t{}))> out(n);
  for (std::uint64_t i = 0; i < n; ++i) out[i] = fn(i);
  return out;
}

template <class Fn>
auto run_trials_parallel(std::uint64_t n, Fn&& fn) {
  std::vector<decltype(fn(std::uint64_t{}))> out(n);
  const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < count; ++i) out[i] = fn(static_cast<std::uint64_t>(i));
  return out;
}

}  // namespace kernels
}  // namespace lrds
