//===-- lrds/attacks.hpp - Disclosure attacks on hidden stacks --*- C++ -*-===//
//
// Attack code sees the victim only through AttackerView: page reads,
// readability probes and mmap-zone allocation requests, all counted. Ground
// truth (where the hidden stacks really are) is passed separately and used
// only to judge whether a claimed disclosure is right.
//
//===----------------------------------------------------------------------===//
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrds/address_space.hpp"
#include "lrds/kernels.hpp"
#include "lrds/rng.hpp"
#include "lrds/scenario.hpp"
#include "lrds/scheme.hpp"

namespace lrds {

/// One mmap allocation a scheme makes per thread.
struct MmapChunk {
  std::uint64_t pages = 0;
  bool hidden = false;
};

/// What an attacker knows about a scheme in advance.
struct SchemeLayout {
  Scheme scheme = Scheme::SafeStackStyle;
  unsigned main_entropy = 0;   // placement bits of the main thread's hidden stack
  unsigned child_entropy = 0;  // placement bits of child threads' hidden stacks
  unsigned stack_pages_log2 = 0;
  bool tcb_leak = false;
  bool setjmp_spill = false;
  bool unwind_spill = false;
  bool return_addresses_only = false;
  std::vector<MmapChunk> thread_signature;  // top-down

  static SchemeLayout of(Scheme s, ArchName arch = ArchName::X86_64);
};

/// Placement entropy minus log2 of the object size in pages.
unsigned effective_entropy(unsigned placement_bits, unsigned size_pages_log2);

class AttackerView {
 public:
  explicit AttackerView(AddressSpace& space) : space_(space) {}

  const Arch& arch() const { return space_.arch(); }
  std::optional<Word> read(Addr a);
  std::optional<PageSnapshot> read_page(Addr a);
  bool probe(Addr a);
  /// Ephemeral allocation: does a `pages`-page mmap succeed? Freed at once.
  bool eap(std::uint64_t pages);
  /// Persistent allocation; returns its base.
  std::optional<Addr> pap(std::uint64_t pages);

  std::uint64_t probes() const { return probes_; }
  std::uint64_t faults() const { return faults_; }
  std::uint64_t oracle_calls() const { return oracle_calls_; }

 private:
  AddressSpace& space_;
  std::uint64_t probes_ = 0;
  std::uint64_t faults_ = 0;
  std::uint64_t oracle_calls_ = 0;
};

struct Hole {
  Addr base = 0;
  std::uint64_t pages = 0;
  friend bool operator==(const Hole&, const Hole&) = default;
};

struct AttackReport {
  std::string strategy;
  Scheme scheme = Scheme::SafeStackStyle;
  std::uint64_t probes_issued = 0;
  std::uint64_t faults = 0;
  std::uint64_t false_positives = 0;  // plausible hits outside the hidden stacks
  std::uint64_t oracle_invocations = 0;
  std::vector<Addr> disclosed;
  std::uint64_t localized = 0;       // disclosures confirmed against ground truth
  bool success = false;
  std::uint64_t trials = 1;
  double empirical_mean_probes = 0;
  double stddev = 0;
  double success_rate = 0;
  std::vector<Hole> holes;           // allocation oracle only

  nlohmann::ordered_json to_json() const;
};

/// Reads every readable page outside `targets` and reports the 8-byte values
/// that point into one of them.
AttackReport scan_pointer_leaks(const AddressSpace& space, std::span<const AddrRange> targets);

enum class ProbeStrategy { UniformRandom, Linear };
std::string_view to_string(ProbeStrategy s);

struct ProbeOptions {
  ProbeStrategy strategy = ProbeStrategy::UniformRandom;
  /// Look for kSpraySignature in page contents instead of plain readability.
  bool signature = false;
  std::uint64_t max_probes = 0;
  /// Stride of the linear scan, in pages (the hidden stack size).
  std::uint64_t stride_pages = 1;
};

/// One search of `zone`. A hit counts only if it lands in `truth`; misses
/// that looked plausible are recorded as faults and the search goes on.
AttackReport brute_force_probe(AttackerView& view, AddrRange zone, const ProbeOptions& opt,
                               std::span<const AddrRange> truth, Rng& rng);

struct ProbeCampaign {
  Scheme scheme = Scheme::SafeStackStyle;
  unsigned bits = 14;        // scaled effective entropy
  std::uint64_t trials = 200;
  unsigned threads = 1;      // thread spraying when > 1
  bool stack_spray = false;
  ProbeStrategy strategy = ProbeStrategy::UniformRandom;
  std::uint64_t max_probes = 0;  // 0: 64 times the analytic mean
  std::uint64_t seed = 1;
  bool parallel = true;
};

/// Independent trials, each on its own synthetic layout. The mean is over
/// the probe counts of all trials (failed trials count their full budget).
AttackReport run_probe_campaign(const ProbeCampaign& c);

/// Mean probes the search model predicts for this campaign.
double analytic_mean_probes(const ProbeCampaign& c);

/// Largest s in [0, eap_max] for which eap(s) succeeds, by bisection.
std::uint64_t largest_hole(AttackerView& view, std::uint64_t eap_max);

/// Finds the largest hole, pins it with a persistent allocation, repeats.
/// Extents enclosed by two discovered holes are then cut into the scheme's
/// per-thread signature when their size allows, and the hidden pieces are
/// claimed. Success means every claim is a live hidden stack.
AttackReport allocation_oracle_attack(AttackerView& view, std::uint64_t eap_max,
                                      std::uint64_t pap_budget, const SchemeLayout& scheme,
                                      std::span<const AddrRange> truth);

/// Walks page by page away from `anchor` in both directions while pages stay
/// readable, and claims pages holding pointers into `known_code` (saved
/// return addresses) that lie outside the anchor's own mapping.
AttackReport adjacency_attack(AttackerView& view, Addr anchor, AddrRange known_code,
                              std::uint64_t max_pages, std::span<const AddrRange> truth);

struct MatrixOptions {
  ArchName arch = ArchName::X86_64;
  std::uint64_t seed = 1;
  unsigned bits = 12;          // scaled effective entropy for the probing columns
  std::uint64_t trials = 200;  // per probing campaign
  unsigned threads_sprayed = 200;
  bool parallel = true;
};

struct MatrixRow {
  Scheme scheme;
  bool pointer_leaks = false;  // true: resilient
  std::string aslr_entropy;
  std::string max_size;
  std::string effective_entropy;
  bool spatial_adjacency = false;
  bool thread_spraying = false;
  bool stack_spraying = false;
  bool allocation_oracles = false;
  double spray_gain = 0;        // mean probes without / with thread spraying
  std::uint64_t hidden_pages_per_thread = 0;
};

std::vector<MatrixRow> resilience_matrix(const MatrixOptions& opt);
std::string render_matrix(const std::vector<MatrixRow>& rows);
nlohmann::ordered_json matrix_json(const std::vector<MatrixRow>& rows, const MatrixOptions& opt);

}  // namespace lrds
