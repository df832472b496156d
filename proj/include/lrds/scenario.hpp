//===-- lrds/scenario.hpp - Victim processes for attack runs ----*- C++ -*-===//
//
// Builds processes the attacks run against. build_scenario runs a small
// workload on a full simulated process: child threads parked inside a call
// chain that goes through library code, a setjmp into a heap buffer and one
// unwinding step whose context lands on the heap.
//
// build_probe_layout makes the much smaller synthetic spaces used for the
// Monte-Carlo probing campaigns: one candidate zone and the hidden stacks
// inside it, nothing else.
//
//===----------------------------------------------------------------------===//
#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "lrds/kernels.hpp"
#include "lrds/machine.hpp"
#include "lrds/process.hpp"

namespace lrds {

struct ScenarioConfig {
  ArchName arch = ArchName::X86_64;
  Scheme scheme = Scheme::ReturnStack;
  Libs libs = Libs::Secure;
  std::uint64_t seed = 1;
  unsigned children = 7;
  std::uint64_t region_pages = std::uint64_t{1} << 16;
  /// Map and free a short-lived mmap allocation around each spawn, leaving a
  /// hole between consecutive thread allocations.
  bool transient_holes = false;
  bool workload = true;
};

struct Scenario {
  std::unique_ptr<Process> process;
  Program program;
  std::vector<AddrRange> hidden;  // ground truth, for validation only
  AddrRange known_code;           // program image, assumed known to the attacker
  Addr anchor = 0;                // a mapping the attacker can locate (libc)
};

/// The workload's functions; names starting with "lib_" are library code.
Program workload_program();

Scenario build_scenario(const ScenarioConfig& cfg);

/// Tag value the stack-spraying attacker plants.
inline constexpr std::uint64_t kSpraySignature = 0x5350'5241'5953'4947;

struct ProbeLayout {
  AddressSpace space;
  AddrRange zone;                 // where the attacker searches
  std::vector<AddrRange> hidden;  // ground truth
  std::uint64_t hidden_pages = 0;
};

/// Synthetic zone of 2^(bits + log2 stack pages) pages holding `threads`
/// hidden stacks. Safe-stack schemes place them back to back at a uniform
/// offset; ReturnStack places them with create_stack. With `spray`, attacker
/// data carrying kSpraySignature lands on every stack the scheme lets it
/// reach, including one unsafe stack inside the zone.
ProbeLayout build_probe_layout(Scheme scheme, unsigned bits, unsigned threads, bool spray,
                               Rng& rng);

}  // namespace lrds
