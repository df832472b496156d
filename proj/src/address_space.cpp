#include "lrds/address_space.hpp"

#include <algorithm>

namespace lrds {

std::string Permission::str() const {
  return std::string{readable ? 'r' : '-', writable ? 'w' : '-'};
}

Permission Permission::parse(std::string_view s) {
  if (s.size() != 2 || (s[0] != 'r' && s[0] != '-') || (s[1] != 'w' && s[1] != '-'))
    throw std::invalid_argument("bad permission string '" + std::string(s) + "'");
  return {s[0] == 'r', s[1] == 'w'};
}

std::string_view to_string(ContentTag t) {
  switch (t) {
    case ContentTag::Zero: return "Zero";
    case ContentTag::CodePointer: return "CodePointer";
    case ContentTag::Data: return "Data";
    case ContentTag::ReturnAddress: return "ReturnAddress";
    case ContentTag::Guard: return "Guard";
  }
  return "?";
}

ContentTag parse_content_tag(std::string_view s) {
  for (auto t : {ContentTag::Zero, ContentTag::CodePointer, ContentTag::Data,
                 ContentTag::ReturnAddress, ContentTag::Guard})
    if (to_string(t) == s) return t;
  throw std::invalid_argument("bad content tag '" + std::string(s) + "'");
}

bool PageSnapshot::contains_value(std::uint64_t v) const {
  if (fill.tag != ContentTag::Zero && fill.value == v) return true;
  return std::any_of(words.begin(), words.end(),
                     [v](const auto& w) { return w.second.value == v; });
}

ZoneConfig ZoneConfig::from_layout(const MemoryLayout& l) {
  ZoneConfig z;
  z.mmap_floor = l.mmap_floor();
  z.mmap_top = l.mmap_base;
  z.heap_base = l.heap_base;
  z.heap_limit = l.mmap_floor();
  return z;
}

AddressSpace::AddressSpace(Arch arch, ZoneConfig zones)
    : arch_(arch), zones_(zones), heap_cursor_(zones.heap_base) {
  if (zones_.mmap_top > arch_.space_bytes() || zones_.mmap_floor > zones_.mmap_top)
    throw MapError(MapError::Kind::InvalidArgument, "bad mmap zone");
  if (!arch_.page_aligned(zones_.mmap_floor) || !arch_.page_aligned(zones_.mmap_top) ||
      !arch_.page_aligned(zones_.heap_base))
    throw MapError(MapError::Kind::InvalidArgument, "zone bounds must be page aligned");
}

AddressSpace::AddressSpace(const AddressSpace& o)
    : arch_(o.arch_),
      zones_(o.zones_),
      heap_cursor_(o.heap_cursor_),
      ranges_(o.ranges_),
      words_(o.words_),
      code_segments_(o.code_segments_) {}

AddressSpace::AddressSpace(AddressSpace&& o) noexcept
    : arch_(o.arch_),
      zones_(o.zones_),
      heap_cursor_(o.heap_cursor_),
      ranges_(std::move(o.ranges_)),
      words_(std::move(o.words_)),
      code_segments_(std::move(o.code_segments_)),
      reads_(o.reads_.load()),
      writes_(o.writes_.load()),
      probes_(o.probes_.load()),
      faults_(o.faults_.load()) {}

AddressSpace& AddressSpace::operator=(const AddressSpace& o) {
  if (this != &o) {
    AddressSpace tmp(o);
    *this = std::move(tmp);
  }
  return *this;
}

AddressSpace& AddressSpace::operator=(AddressSpace&& o) noexcept {
  arch_ = o.arch_;
  zones_ = o.zones_;
  heap_cursor_ = o.heap_cursor_;
  ranges_ = std::move(o.ranges_);
  words_ = std::move(o.words_);
  code_segments_ = std::move(o.code_segments_);
  reads_ = o.reads_.load();
  writes_ = o.writes_.load();
  probes_ = o.probes_.load();
  faults_ = o.faults_.load();
  return *this;
}

AddressSpace::Map::const_iterator AddressSpace::containing(Addr a) const {
  auto it = ranges_.upper_bound(a);
  if (it == ranges_.begin()) return ranges_.end();
  --it;
  return a < end_of(it) ? it : ranges_.end();
}

std::optional<Range> AddressSpace::find(Addr addr) const {
  auto it = containing(addr);
  if (it == ranges_.end()) return std::nullopt;
  return Range{it->first, it->second.pages, it->second.perm, it->second.content, it->second.label};
}

bool AddressSpace::overlaps(Addr base, Addr end) const {
  if (end <= base) return false;
  auto it = ranges_.lower_bound(base);
  if (it != ranges_.end() && it->first < end) return true;
  if (it == ranges_.begin()) return false;
  --it;
  return end_of(it) > base;
}

bool AddressSpace::fully_mapped(Addr base, std::uint64_t pages) const {
  const Addr end = base + pages * page_size();
  Addr cursor = base;
  auto it = containing(base);
  while (cursor < end) {
    if (it == ranges_.end() || it->first > cursor) return false;
    cursor = end_of(it);
    ++it;
  }
  return true;
}

void AddressSpace::require_mapped(Addr base, std::uint64_t pages, const char* op) const {
  if (pages == 0 || !arch_.page_aligned(base))
    throw MapError(MapError::Kind::InvalidArgument, std::string(op) + ": bad range");
  if (!fully_mapped(base, pages))
    throw MapError(MapError::Kind::NotMapped,
                   std::string(op) + ": range at " + hex(base) + " is not fully mapped");
}

void AddressSpace::split_at(Addr a) {
  auto it = containing(a);
  if (it == ranges_.end() || it->first == a) return;
  auto node = ranges_.find(it->first);
  const std::uint64_t head = (a - node->first) / page_size();
  Entry tail = node->second;
  tail.pages -= head;
  node->second.pages = head;
  ranges_.emplace(a, std::move(tail));
}

void AddressSpace::coalesce_around(Addr base, Addr end) {
  auto same = [](const Entry& x, const Entry& y) {
    return x.perm == y.perm && x.content == y.content && x.label == y.label;
  };
  auto it = ranges_.lower_bound(base);
  if (it != ranges_.begin()) --it;
  while (it != ranges_.end() && it->first <= end) {
    auto next = std::next(it);
    if (next != ranges_.end() && end_of(it) == next->first && same(it->second, next->second)) {
      it->second.pages += next->second.pages;
      ranges_.erase(next);
    } else {
      it = next;
    }
  }
}

Addr AddressSpace::place_mmap(std::uint64_t bytes) const {
  Addr cursor = zones_.mmap_top;
  const Addr floor = zones_.mmap_floor;
  auto it = ranges_.lower_bound(cursor);
  while (it != ranges_.begin() && cursor > floor) {
    --it;
    const Addr re = end_of(it);
    if (re < cursor) {
      const Addr lo = std::max(re, floor);
      if (cursor > lo && cursor - lo >= bytes) return cursor - bytes;
    }
    cursor = std::min(cursor, it->first);
  }
  if (cursor > floor && cursor - floor >= bytes) return cursor - bytes;
  throw MapError(MapError::Kind::OutOfSpace, "mmap: no hole of " + hex(bytes) + " bytes");
}

Addr AddressSpace::map(std::uint64_t pages, Permission perm, Zone zone, Addr fixed,
                       PageContent content, std::string label) {
  if (pages == 0) throw MapError(MapError::Kind::InvalidArgument, "map: zero pages");
  if (pages > arch_.total_pages())
    throw MapError(MapError::Kind::OutOfSpace, "map: larger than the address space");
  const std::uint64_t bytes = pages * page_size();
  Addr base = 0;
  switch (zone) {
    case Zone::MmapSpace:
      base = place_mmap(bytes);
      break;
    case Zone::Heap:
      base = heap_cursor_;
      if (base + bytes > zones_.heap_limit || overlaps(base, base + bytes))
        throw MapError(MapError::Kind::OutOfSpace, "heap exhausted");
      heap_cursor_ = base + bytes;
      break;
    case Zone::Fixed:
      base = fixed;
      if (!arch_.page_aligned(base))
        throw MapError(MapError::Kind::InvalidArgument, "map: fixed address not page aligned");
      if (base + bytes > arch_.space_bytes() || base + bytes < base)
        throw MapError(MapError::Kind::OutOfSpace, "map: beyond the address space");
      if (overlaps(base, base + bytes))
        throw MapError(MapError::Kind::Collision, "map: fixed range " + hex(base) + " collides");
      break;
  }
  ranges_.emplace(base, Entry{pages, perm, content, std::move(label)});
  coalesce_around(base, base + bytes);
  return base;
}

void AddressSpace::unmap(Addr base, std::uint64_t pages) {
  require_mapped(base, pages, "unmap");
  const Addr end = base + pages * page_size();
  split_at(base);
  split_at(end);
  ranges_.erase(ranges_.lower_bound(base), ranges_.lower_bound(end));
  words_.erase(words_.lower_bound(base), words_.lower_bound(end));
}

void AddressSpace::protect(Addr base, std::uint64_t pages, Permission perm) {
  require_mapped(base, pages, "protect");
  const Addr end = base + pages * page_size();
  split_at(base);
  split_at(end);
  for (auto it = ranges_.lower_bound(base); it != ranges_.end() && it->first < end; ++it)
    it->second.perm = perm;
  coalesce_around(base, end);
}

void AddressSpace::fill(Addr base, std::uint64_t pages, PageContent content) {
  require_mapped(base, pages, "fill");
  const Addr end = base + pages * page_size();
  split_at(base);
  split_at(end);
  for (auto it = ranges_.lower_bound(base); it != ranges_.end() && it->first < end; ++it)
    it->second.content = content;
  words_.erase(words_.lower_bound(base), words_.lower_bound(end));
  coalesce_around(base, end);
}

Word AddressSpace::content_word(const Entry& e) const {
  return e.content.tag == ContentTag::Zero ? Word{} : e.content;
}

bool AddressSpace::in_code(Addr a) const {
  return std::any_of(code_segments_.begin(), code_segments_.end(),
                     [a](const auto& s) { return a >= s.first && a < s.second; });
}

std::optional<Word> AddressSpace::read(Addr addr) const {
  reads_.fetch_add(1, std::memory_order_relaxed);
  auto it = containing(addr);
  if (it == ranges_.end() || !it->second.perm.readable) {
    faults_.fetch_add(1, std::memory_order_relaxed);
    return std::nullopt;
  }
  const Addr slot = addr & ~Addr{7};
  if (auto w = words_.find(slot); w != words_.end()) return w->second;
  return content_word(it->second);
}

bool AddressSpace::write(Addr addr, Word w) {
  writes_.fetch_add(1, std::memory_order_relaxed);
  auto it = containing(addr);
  if (it == ranges_.end() || !it->second.perm.writable) {
    faults_.fetch_add(1, std::memory_order_relaxed);
    return false;
  }
  if (w.tag == ContentTag::ReturnAddress && !code_segments_.empty() && !in_code(w.value))
    throw std::invalid_argument("return address " + hex(w.value) + " outside code");
  words_[addr & ~Addr{7}] = w;
  return true;
}

AccessResult AddressSpace::access(Addr addr, AccessKind kind, Word payload) {
  if (kind == AccessKind::Read) {
    auto w = read(addr);
    return w ? AccessResult{false, *w} : AccessResult{true, {}};
  }
  return write(addr, payload) ? AccessResult{false, payload} : AccessResult{true, {}};
}

ProbeResult AddressSpace::write_probe(Addr addr) const {
  probes_.fetch_add(1, std::memory_order_relaxed);
  auto it = containing(addr);
  return it != ranges_.end() && it->second.perm.readable ? ProbeResult::Readable
                                                         : ProbeResult::NotReadable;
}

std::optional<PageSnapshot> AddressSpace::read_page(Addr addr) const {
  reads_.fetch_add(1, std::memory_order_relaxed);
  auto it = containing(addr);
  if (it == ranges_.end() || !it->second.perm.readable) {
    faults_.fetch_add(1, std::memory_order_relaxed);
    return std::nullopt;
  }
  PageSnapshot snap;
  snap.base = arch_.page_floor(addr);
  snap.fill = content_word(it->second);
  const Addr end = snap.base + page_size();
  for (auto w = words_.lower_bound(snap.base); w != words_.end() && w->first < end; ++w)
    snap.words.push_back(*w);
  return snap;
}

std::vector<Range> AddressSpace::ranges() const {
  std::vector<Range> out;
  out.reserve(ranges_.size());
  for (const auto& [base, e] : ranges_)
    out.push_back(Range{base, e.pages, e.perm, e.content, e.label});
  return out;
}

AccessCounts AddressSpace::counts() const {
  return {reads_.load(), writes_.load(), probes_.load(), faults_.load()};
}

void AddressSpace::reset_counts() {
  reads_ = 0;
  writes_ = 0;
  probes_ = 0;
  faults_ = 0;
}

void AddressSpace::check_invariants() const {
  Addr prev_end = 0;
  bool first = true;
  for (auto it = ranges_.begin(); it != ranges_.end(); ++it) {
    if (it->second.pages == 0) throw std::logic_error("empty range");
    if (!arch_.page_aligned(it->first)) throw std::logic_error("unaligned range");
    if (!first && it->first < prev_end) throw std::logic_error("overlapping ranges");
    const Addr e = end_of(it);
    if (e > arch_.space_bytes() || e <= it->first) throw std::logic_error("range out of bounds");
    prev_end = e;
    first = false;
  }
}

AddressSpace make_process_space(const MemoryLayout& l) {
  AddressSpace s(l.arch, ZoneConfig::from_layout(l));
  s.map(kCodePages, Permission::r(), Zone::Fixed, l.code_base, {}, labels::kCode);
  s.add_code_segment(l.code_base, l.code_end());
  s.map(kDataPages, Permission::rw(), Zone::Fixed, l.data_base(), {}, labels::kData);
  s.map(kInitialHeapPages, Permission::rw(), Zone::Heap, 0, {}, labels::kHeap);
  s.map(kStackPages, Permission::rw(), Zone::Fixed, l.stack_floor(), {}, labels::kStack);
  const Addr ld = s.map(kLdPages, Permission::r(), Zone::MmapSpace, 0, {}, labels::kLd);
  const Addr libc = s.map(kLibcPages, Permission::r(), Zone::MmapSpace, 0, {}, labels::kLibc);
  s.add_code_segment(ld, ld + kLdPages * l.arch.page_size());
  s.add_code_segment(libc, libc + kLibcPages * l.arch.page_size());
  s.map(kLibcDataPages, Permission::rw(), Zone::MmapSpace, 0, {}, labels::kLibcData);
  return s;
}

}  // namespace lrds
