#include "lrds/retstack_region.hpp"

#include "lrds/kernels.hpp"

namespace lrds {

unsigned RegionParams::effective_entropy() const {
  return log2_exact(size_pages) - log2_exact(stack_pages);
}

RegionHandle init_region(AddressSpace& space, const RegionParams& params) {
  if (params.stack_pages == 0 || params.size_pages < params.stack_pages + 2 * params.guard_pages)
    throw std::invalid_argument("region too small for a single return stack");
  RegionHandle r;
  r.size_pages = params.size_pages;
  r.stack_pages = params.stack_pages;
  r.guard_pages = params.guard_pages;
  r.base = space.map(params.size_pages, Permission::none(), Zone::MmapSpace, 0, {}, kRegionLabel);
  return r;
}

StackHandle create_stack(AddressSpace& space, const RegionHandle& region, Rng& rng,
                         CreateStats* stats) {
  const std::uint64_t page = space.page_size();
  const std::uint64_t span = region.stack_pages + 2 * region.guard_pages;
  const std::uint64_t slots = region.size_pages - span + 1;
  CreateStats local;
  for (unsigned attempt = 0; attempt < kCreateRetryBudget; ++attempt) {
    const Addr start = region.base + rng.below(slots) * page;
    ++local.candidates;
    bool free = true;
    for (std::uint64_t i = 0; i < span && free; ++i) {
      ++local.probes;
      free = space.write_probe(start + i * page) == ProbeResult::NotReadable;
    }
    if (!free) continue;
    const Addr base = start + region.guard_pages * page;
    space.protect(base, region.stack_pages, Permission::rw());
    if (stats) *stats = local;
    return {base, base};
  }
  if (stats) *stats = local;
  throw RegionError(RegionError::Kind::RetryBudgetExhausted,
                    "no free return-stack slot found in " + std::to_string(kCreateRetryBudget) +
                        " candidates");
}

void destroy_stack(AddressSpace& space, const RegionHandle& region, const StackHandle& stack) {
  const Arch& arch = space.arch();
  const Addr end = stack.base + region.stack_pages * arch.page_size();
  if (!arch.page_aligned(stack.base) || stack.base < region.base || end > region.end(arch))
    throw RegionError(RegionError::Kind::NotInRegion, "stack " + hex(stack.base) +
                                                          " is not inside the region");
  for (std::uint64_t i = 0; i < region.stack_pages; ++i)
    if (space.write_probe(stack.base + i * arch.page_size()) == ProbeResult::NotReadable)
      throw RegionError(RegionError::Kind::DoubleDestroy,
                        "stack " + hex(stack.base) + " is already no-access");
  space.protect(stack.base, region.stack_pages, Permission::none());
}

std::uint64_t capacity(const RegionParams& p) {
  if (p.size_pages < p.guard_pages) return 0;
  return (p.size_pages - p.guard_pages) / (p.stack_pages + p.guard_pages);
}

std::vector<Addr> sweep_live_stacks(const AddressSpace& space, const RegionHandle& region) {
  const auto readable = kernels::probe_sweep_parallel(space, region.base, region.size_pages);
  std::vector<Addr> bases;
  const std::uint64_t page = space.page_size();
  for (std::uint64_t i = 0; i < readable.size();) {
    if (!readable[i]) {
      ++i;
      continue;
    }
    const std::uint64_t start = i;
    while (i < readable.size() && readable[i]) ++i;
    // Live stacks never touch, so each maximal run is one stack.
    bases.push_back(region.base + start * page);
  }
  return bases;
}

}  // namespace lrds
