#include "lrds/kernels.hpp"

#include <algorithm>

namespace lrds::kernels {

namespace {

bool in_targets(std::span<const AddrRange> targets, Addr v) {
  return std::any_of(targets.begin(), targets.end(),
                     [v](const AddrRange& r) { return r.contains(v); });
}

void scan_page(const AddressSpace& space, Addr page, std::span<const AddrRange> targets,
               std::vector<LeakHit>& out) {
  const auto snap = space.read_page(page);
  if (!snap) return;
  if (snap->fill.tag != ContentTag::Zero && in_targets(targets, snap->fill.value))
    out.push_back({page, snap->fill.value});
  for (const auto& [addr, w] : snap->words)
    if (in_targets(targets, w.value)) out.push_back({addr, w.value});
}

}  // namespace

std::vector<std::uint8_t> probe_sweep_serial(const AddressSpace& space, Addr base,
                                             std::uint64_t pages) {
  std::vector<std::uint8_t> out(pages);
  const std::uint64_t ps = space.page_size();
  for (std::uint64_t i = 0; i < pages; ++i)
    out[i] = space.write_probe(base + i * ps) == ProbeResult::Readable;
  return out;
}

std::vector<std::uint8_t> probe_sweep_parallel(const AddressSpace& space, Addr base,
                                               std::uint64_t pages) {
  std::vector<std::uint8_t> out(pages);
  const std::uint64_t ps = space.page_size();
  const auto n = static_cast<std::int64_t>(pages);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    out[i] = space.write_probe(base + static_cast<Addr>(i) * ps) == ProbeResult::Readable;
  return out;
}

std::vector<LeakHit> scan_values_serial(const AddressSpace& space, std::span<const Addr> pages,
                                        std::span<const AddrRange> targets) {
  std::vector<LeakHit> out;
  for (Addr p : pages) scan_page(space, p, targets, out);
  return out;
}

std::vector<LeakHit> scan_values_parallel(const AddressSpace& space, std::span<const Addr> pages,
                                          std::span<const AddrRange> targets) {
  const auto n = static_cast<std::int64_t>(pages.size());
  std::vector<std::vector<LeakHit>> per_page(pages.size());
#pragma omp parallel for schedule(dynamic, 64)
  for (std::int64_t i = 0; i < n; ++i) scan_page(space, pages[i], targets, per_page[i]);
  std::vector<LeakHit> out;
  for (auto& v : per_page) out.insert(out.end(), v.begin(), v.end());
  return out;
}

std::vector<Addr> readable_pages(const AddressSpace& space) {
  std::vector<Addr> out;
  const std::uint64_t ps = space.page_size();
  for (const Range& r : space.ranges()) {
    if (!r.perm.readable) continue;
    for (std::uint64_t i = 0; i < r.pages; ++i) out.push_back(r.base + i * ps);
  }
  return out;
}

}  // namespace lrds::kernels
