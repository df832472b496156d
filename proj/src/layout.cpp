#include "lrds/layout.hpp"

#include <cstdio>
#include <stdexcept>

#include "lrds/rng.hpp"

namespace lrds {

ArchName parse_arch(std::string_view s) {
  if (s == "x86-64" || s == "x86_64" || s == "x64") return ArchName::X86_64;
  if (s == "arm64" || s == "aarch64") return ArchName::ARM64;
  throw std::invalid_argument("unknown architecture '" + std::string(s) + "'");
}

std::string hex(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string_view offset_name(OffsetKind k) {
  switch (k) {
    case OffsetKind::Stack: return "stack_offset";
    case OffsetKind::Mmap: return "mmap_offset";
    case OffsetKind::Brk: return "brk_offset";
    case OffsetKind::Load: return "load_offset";
  }
  return "?";
}

LayoutConfig LayoutConfig::defaults(ArchName arch) {
  LayoutConfig c;
  c.arch = Arch::of(arch);
  if (arch == ArchName::ARM64) {
    const std::uint64_t g = std::uint64_t{1} << 30;
    c.stack_offset = {g};
    c.mmap_offset = {g};
    c.brk_offset = {g};
    c.load_offset = {g};
  }
  return c;
}

const OffsetInterval& LayoutConfig::interval(OffsetKind k) const {
  switch (k) {
    case OffsetKind::Stack: return stack_offset;
    case OffsetKind::Mmap: return mmap_offset;
    case OffsetKind::Brk: return brk_offset;
    case OffsetKind::Load: break;
  }
  return load_offset;
}

OffsetInterval& LayoutConfig::interval(OffsetKind k) {
  return const_cast<OffsetInterval&>(static_cast<const LayoutConfig&>(*this).interval(k));
}

void LayoutConfig::validate() const {
  for (OffsetKind k : kAllOffsets) {
    const auto upper = interval(k).upper;
    if (!is_pow2(upper) || upper < arch.page_size())
      throw std::invalid_argument(std::string(offset_name(k)) +
                                  ": interval bound must be a power of two of at least one page");
    if (upper >= arch.space_bytes() / 4)
      throw std::invalid_argument(std::string(offset_name(k)) + ": interval exceeds address space");
  }
}

std::uint64_t MemoryLayout::offset(OffsetKind k) const {
  switch (k) {
    case OffsetKind::Stack: return stack_offset;
    case OffsetKind::Mmap: return mmap_offset;
    case OffsetKind::Brk: return brk_offset;
    case OffsetKind::Load: break;
  }
  return load_offset;
}

MemoryLayout create_layout(const LayoutConfig& config, std::uint64_t seed) {
  config.validate();
  const Arch& arch = config.arch;
  Rng rng(seed);
  auto draw = [&](const OffsetInterval& iv) {
    return rng.below(iv.upper >> arch.page_shift) << arch.page_shift;
  };

  MemoryLayout l;
  l.arch = arch;
  l.seed = seed;
  l.pie = config.pie;
  // Draw order is fixed so a seed maps to one layout.
  l.stack_offset = draw(config.stack_offset);
  l.mmap_offset = draw(config.mmap_offset);
  l.brk_offset = draw(config.brk_offset);
  const std::uint64_t load_draw = draw(config.load_offset);
  l.load_offset = config.pie ? load_draw : 0;

  const Addr top = arch.space_bytes() - arch.page_size();
  l.stack_base = top - l.stack_offset;
  l.mmap_base = top - config.stack_offset.upper - kStackPages * arch.page_size() -
                kStackGuardGapBytes - l.mmap_offset;
  l.code_base = config.pie ? arch.page_floor(arch.space_bytes() / 3 * 2) + l.load_offset
                           : kNonPieLoadBase;
  l.heap_base = l.code_end() + kDataPages * arch.page_size() + l.brk_offset;
  return l;
}

}  // namespace lrds
