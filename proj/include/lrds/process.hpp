//===-- lrds/process.hpp - Threads, stacks and TCBs of a process -*- C++ -*-===//
//
// Owns the address space of one simulated process and sets up per-thread
// stacks for the chosen scheme:
//
//   Regular         one stack per thread (main stack, or 2^11 mmap pages)
//   SafeStackStyle  safe stack = main stack or a 2^11-page mmap; unsafe
//   AGStackStyle    stacks come from the heap zone
//   ReturnStack     unsafe stack as in Regular, plus a return stack carved
//                   out of the return-stack region
//
// Every thread has a 64-byte TCB in libc's data pages. Its first word holds
// the base of the thread's stack-pointer stack, which for the two safe-stack
// schemes is the hidden one.
//
//===----------------------------------------------------------------------===//
#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "lrds/address_space.hpp"
#include "lrds/kernels.hpp"
#include "lrds/machine.hpp"
#include "lrds/retstack_region.hpp"
#include "lrds/rng.hpp"

namespace lrds {

inline constexpr std::uint64_t kTcbBytes = 64;
/// Bytes left above the initial stack pointer (arguments, environment).
inline constexpr std::uint64_t kInitialStackReserve = 256;

struct Thread {
  int id = 0;
  bool alive = true;
  MachineState state;
  AddrRange stack;                      // stack the stack pointer runs on
  std::optional<AddrRange> unsafe_stack;  // safe-stack schemes only
  std::optional<StackHandle> retstack;  // ReturnStack only
  Addr tcb = 0;
};

class Process {
 public:
  Process(const MemoryLayout& layout, Scheme scheme, Libs libs = Libs::Secure,
          const RegionParams& region = {}, std::uint64_t seed = 0);

  Process(const Process&) = delete;
  Process& operator=(const Process&) = delete;

  AddressSpace& space() { return space_; }
  const AddressSpace& space() const { return space_; }
  const MemoryLayout& layout() const { return layout_; }
  Scheme scheme() const { return scheme_; }
  Libs libs() const { return libs_; }
  const CodeMap& code() const { return code_; }
  const std::optional<RegionHandle>& region() const { return region_; }
  Rng& rng() { return rng_; }

  Thread& main_thread() { return threads_.front(); }
  Thread& thread(int id) { return threads_.at(static_cast<std::size_t>(id)); }
  std::size_t thread_count() const { return threads_.size(); }
  std::deque<Thread>& threads() { return threads_; }

  /// Allocates the new thread's stacks and TCB; the thread starts idle.
  Thread& spawn_thread();
  /// As above, then calls `entry` so the thread is parked inside it.
  Thread& spawn_thread(const Program& p, std::size_t entry);
  /// Unmaps the thread's stacks and returns its return stack to no-access.
  void exit_thread(int id);

  /// Bump allocation in the heap, 16-byte aligned, zero filled.
  Addr heap_alloc(std::uint64_t bytes);

  Addr tcb_address(int id) const { return libc_data_ + kTcbBytes * static_cast<Addr>(id); }
  Addr libc_base() const { return libc_; }

  /// Ground truth the attacker must not see: live hidden stacks. Empty for
  /// Regular.
  std::vector<AddrRange> hidden_ranges() const;

 private:
  Thread& add_thread(AddrRange stack, std::optional<AddrRange> unsafe);

  MemoryLayout layout_;
  Scheme scheme_;
  Libs libs_;
  AddressSpace space_;
  CodeMap code_;
  Rng rng_;
  std::optional<RegionHandle> region_;
  Addr libc_ = 0;
  Addr libc_data_ = 0;
  Addr heap_cursor_ = 0;
  Addr heap_end_ = 0;
  std::deque<Thread> threads_;  // deque: Thread references stay valid
};

}  // namespace lrds
