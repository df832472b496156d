//===-- lrds/retstack_region.hpp - Metadata-free return stacks -*- C++ -*-===//
//
// The return-stack region is one large mmap allocation with every access
// permission removed. Return stacks are carved out of it by flipping the
// permissions of a run of pages to read/write; which runs are in use is never
// recorded anywhere. Creation finds free space by probing page readability,
// destruction restores the no-access state.
//
//===----------------------------------------------------------------------===//
#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "lrds/address_space.hpp"
#include "lrds/rng.hpp"

namespace lrds {

inline constexpr std::uint64_t kRegionPages = std::uint64_t{1} << 32;
inline constexpr std::uint64_t kReturnStackPages = 8;
inline constexpr std::uint64_t kGuardPages = 1;
/// Random candidates tried by create_stack before giving up.
inline constexpr unsigned kCreateRetryBudget = 4096;

inline constexpr const char* kRegionLabel = "retstack-region";

struct RegionParams {
  std::uint64_t size_pages = kRegionPages;
  std::uint64_t stack_pages = kReturnStackPages;
  std::uint64_t guard_pages = kGuardPages;

  /// log2(size) - log2(stack size), for power-of-two sizes.
  unsigned effective_entropy() const;
};

/// Base and size only. There is deliberately no field for stack locations.
struct RegionHandle {
  Addr base = 0;
  std::uint64_t size_pages = kRegionPages;
  std::uint64_t stack_pages = kReturnStackPages;
  std::uint64_t guard_pages = kGuardPages;

  RegionParams params() const { return {size_pages, stack_pages, guard_pages}; }
  Addr end(const Arch& a) const { return base + size_pages * a.page_size(); }
  bool contains(const Arch& a, Addr p) const { return p >= base && p < end(a); }
};

struct StackHandle {
  Addr base = 0;  // lowest address of the stack pages
  Addr top = 0;   // empty ascending stack: starts at base

  friend bool operator==(const StackHandle&, const StackHandle&) = default;
};

class RegionError : public std::runtime_error {
 public:
  enum class Kind { RetryBudgetExhausted, DoubleDestroy, NotInRegion };
  RegionError(Kind k, const std::string& what) : std::runtime_error(what), kind_(k) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Maps the region in the mmap area with no access permissions.
RegionHandle init_region(AddressSpace& space, const RegionParams& params = {});

struct CreateStats {
  unsigned candidates = 0;  // candidate bases examined
  std::uint64_t probes = 0; // write_probe calls issued
};

/// Probes random page-aligned candidates until stack_pages + 2*guard_pages
/// consecutive pages are unreadable, then opens the middle pages read/write.
StackHandle create_stack(AddressSpace& space, const RegionHandle& region, Rng& rng,
                         CreateStats* stats = nullptr);

/// Returns the stack pages to no-access. Detects a double destroy by finding
/// the pages already unreadable.
void destroy_stack(AddressSpace& space, const RegionHandle& region, const StackHandle& stack);

/// floor((size - guard) / (stack + guard)): stacks that fit with one shared
/// guard page between neighbours.
std::uint64_t capacity(const RegionParams& params);
inline std::uint64_t capacity(const RegionHandle& r) { return capacity(r.params()); }

/// Reconstructs live stacks from readability alone: maximal runs of
/// readable pages inside the region, reported by base address.
std::vector<Addr> sweep_live_stacks(const AddressSpace& space, const RegionHandle& region);

}  // namespace lrds
