//===-- lrds/address_space.hpp - Sparse virtual address space --*- C++ -*-===//
//
// A 64-bit process address space kept as an ordered map of page ranges, each
// with a permission and a fill content, plus a sparse overlay of individually
// written 8-byte words. Only mapped extents cost memory, so a 2^44-byte
// no-access region is a single map entry.
//
// Faults are values: a denied access leaves the space untouched and reports
// AccessResult::fault.
//
//===----------------------------------------------------------------------===//
#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrds/arch.hpp"
#include "lrds/layout.hpp"

namespace lrds {

struct Permission {
  bool readable = false;
  bool writable = false;

  static constexpr Permission none() { return {false, false}; }
  static constexpr Permission r() { return {true, false}; }
  static constexpr Permission rw() { return {true, true}; }

  /// "rw", "r-", "-w" or "--".
  std::string str() const;
  static Permission parse(std::string_view s);

  friend constexpr bool operator==(Permission, Permission) = default;
};

enum class ContentTag { Zero, CodePointer, Data, ReturnAddress, Guard };
std::string_view to_string(ContentTag t);
ContentTag parse_content_tag(std::string_view s);

/// A tagged 8-byte value. Also used as the uniform fill of a page range.
struct Word {
  ContentTag tag = ContentTag::Zero;
  std::uint64_t value = 0;

  friend constexpr bool operator==(const Word&, const Word&) = default;
};
using PageContent = Word;

struct Range {
  Addr base = 0;
  std::uint64_t pages = 0;
  Permission perm;
  PageContent content;
  std::string label;

  Addr end(const Arch& a) const { return base + pages * a.page_size(); }
};

enum class Zone { MmapSpace, Heap, Fixed };
enum class AccessKind { Read, Write };
enum class ProbeResult { Readable, NotReadable };

struct AccessResult {
  bool fault = false;
  Word word;

  explicit operator bool() const { return !fault; }
};

/// A readable page as returned by a single page-sized read.
struct PageSnapshot {
  Addr base = 0;
  PageContent fill;
  std::vector<std::pair<Addr, Word>> words;  // overlay words, ascending

  bool contains_value(std::uint64_t v) const;
};

class MapError : public std::runtime_error {
 public:
  enum class Kind { InvalidArgument, OutOfSpace, Collision, NotMapped };
  MapError(Kind k, const std::string& what) : std::runtime_error(what), kind_(k) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Bounds of the two dynamic allocation zones.
struct ZoneConfig {
  Addr mmap_floor = 0;  // lowest address MmapSpace allocations may use
  Addr mmap_top = 0;    // allocations are placed top-down below this
  Addr heap_base = 0;   // Heap allocations grow up from here
  Addr heap_limit = 0;

  static ZoneConfig from_layout(const MemoryLayout& l);
};

struct AccessCounts {
  std::uint64_t reads = 0;
  std::uint64_t writes = 0;
  std::uint64_t probes = 0;
  std::uint64_t faults = 0;
};

class AddressSpace {
 public:
  AddressSpace(Arch arch, ZoneConfig zones);
  AddressSpace(const AddressSpace& o);
  AddressSpace& operator=(const AddressSpace& o);
  AddressSpace(AddressSpace&& o) noexcept;
  AddressSpace& operator=(AddressSpace&& o) noexcept;

  const Arch& arch() const { return arch_; }
  const ZoneConfig& zones() const { return zones_; }
  std::uint64_t page_size() const { return arch_.page_size(); }

  /// Maps `pages` pages. MmapSpace placement is top-down first fit below the
  /// previous allocations (consecutive descending addresses while there are
  /// no holes), Heap placement bumps upward, Fixed uses `fixed` exactly.
  Addr map(std::uint64_t pages, Permission perm, Zone zone, Addr fixed = 0,
           PageContent content = {}, std::string label = "anon");
  void unmap(Addr base, std::uint64_t pages);
  void protect(Addr base, std::uint64_t pages, Permission perm);
  /// Replaces the fill of [base, base+pages) and drops overlay words there.
  void fill(Addr base, std::uint64_t pages, PageContent content);

  AccessResult access(Addr addr, AccessKind kind, Word payload = {});
  std::optional<Word> read(Addr addr) const;
  bool write(Addr addr, Word w);
  /// Readability test with no side effect on the space.
  ProbeResult write_probe(Addr addr) const;
  /// One page-sized read; nullopt when the page is not readable.
  std::optional<PageSnapshot> read_page(Addr addr) const;

  /// Does any part of [base, end) overlap a mapping?
  bool overlaps(Addr base, Addr end) const;
  /// Is every page of [base, base+pages) mapped?
  bool fully_mapped(Addr base, std::uint64_t pages) const;
  std::optional<Range> find(Addr addr) const;

  std::vector<Range> ranges() const;
  std::size_t range_count() const { return ranges_.size(); }
  const std::map<Addr, Word>& words() const { return words_; }

  /// Return addresses written to the space must lie inside one of these.
  void add_code_segment(Addr base, Addr end) { code_segments_.push_back({base, end}); }
  bool in_code(Addr a) const;

  AccessCounts counts() const;
  void reset_counts();

  /// Checks sortedness, disjointness and bounds. Throws std::logic_error.
  void check_invariants() const;

 private:
  struct Entry {
    std::uint64_t pages;
    Permission perm;
    PageContent content;
    std::string label;
  };
  using Map = std::map<Addr, Entry>;

  Addr end_of(Map::const_iterator it) const { return it->first + it->second.pages * page_size(); }
  Map::const_iterator containing(Addr a) const;
  void split_at(Addr a);
  void require_mapped(Addr base, std::uint64_t pages, const char* op) const;
  void coalesce_around(Addr base, Addr end);
  Addr place_mmap(std::uint64_t bytes) const;
  Word content_word(const Entry& e) const;

  Arch arch_;
  ZoneConfig zones_;
  Addr heap_cursor_;
  Map ranges_;
  std::map<Addr, Word> words_;
  std::vector<std::pair<Addr, Addr>> code_segments_;

  mutable std::atomic<std::uint64_t> reads_{0}, writes_{0}, probes_{0}, faults_{0};
};

/// Maps the image of a freshly exec'd process: code, data, initial heap,
/// main stack, and the loader/libc mappings at the top of the mmap area.
AddressSpace make_process_space(const MemoryLayout& layout);

/// Labels of the mappings make_process_space creates.
namespace labels {
inline constexpr const char* kCode = "code";
inline constexpr const char* kData = "data";
inline constexpr const char* kHeap = "heap";
inline constexpr const char* kStack = "stack";
inline constexpr const char* kLd = "ld.so";
inline constexpr const char* kLibc = "libc.so";
inline constexpr const char* kLibcData = "libc.data";
}  // namespace labels

inline constexpr std::uint64_t kLdPages = 64;
inline constexpr std::uint64_t kLibcPages = 512;
inline constexpr std::uint64_t kLibcDataPages = 16;

}  // namespace lrds
