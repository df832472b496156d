//===-- lrds/machine.hpp - Toy two-architecture call machine ----*- C++ -*-===//
//
// Executes the emitted prologues and epilogues instruction by instruction
// against an AddressSpace, so claims about where return addresses live can be
// checked by reading memory afterwards.
//
// Code is symbolic. Function i of a Program has its entry at
// code_base + 0x1000*(i+1); its k-th call site sits at entry + 0x40 + 0x10*k
// and returns to the site + 8. A thread's outermost frame returns to a
// start stub at code_base + 0x20.
//
// The interpreter keeps a host-side list of active frames (which function,
// which emission, registers at the call). That list is bookkeeping only; the
// simulated program never reads it, and it plays the role of state the
// kernel holds for switched-out threads.
//
//===----------------------------------------------------------------------===//
#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrds/address_space.hpp"
#include "lrds/codegen.hpp"
#include "lrds/isa.hpp"
#include "lrds/scheme.hpp"

namespace lrds {

class MachineFault : public std::runtime_error {
 public:
  enum class Kind {
    Guard,        // access to an unmapped or no-access page
    ControlFlow,  // return to an address outside any code segment
    Corruption,   // longjmp marker or unwind bound violated
    Alignment,    // stack pointer misaligned at a call
  };
  MachineFault(Kind k, Addr addr, const std::string& what)
      : std::runtime_error(what), kind_(k), addr_(addr) {}
  Kind kind() const { return kind_; }
  Addr addr() const { return addr_; }

 private:
  Kind kind_;
  Addr addr_;
};

std::string_view to_string(MachineFault::Kind k);

inline constexpr std::size_t kMaxFunctions = 255;

struct CodeMap {
  Addr code_base = 0;

  Addr entry(std::size_t fn) const { return code_base + 0x1000 * (fn + 1); }
  Addr call_site(std::size_t fn, std::size_t k) const { return entry(fn) + 0x40 + 0x10 * k; }
  Addr return_address(std::size_t fn, std::size_t k) const { return call_site(fn, k) + 8; }
  Addr thread_start() const { return code_base + 0x20; }
  /// An address an attacker would like to return to.
  Addr gadget() const { return code_base + 0x10; }
};

struct Program {
  std::vector<FuncDesc> funcs;

  /// Index of the named function; throws std::out_of_range.
  std::size_t index(const std::string& name) const;
  /// Unique names, resolvable callees, at most kMaxFunctions entries.
  void validate() const;
};

struct Frame {
  std::size_t fn = 0;
  FrameKind kind = FrameKind::Regular;
  Addr expected_return = 0;
  Emission emission;
  std::array<Word, kRegCount> regs_at_call{};
};

/// Bounds of the thread's return stack, as the runtime knows them. Not
/// stored in simulated memory.
struct ReturnStackBounds {
  Addr base = 0;
  Addr limit = 0;  // one past the last usable byte
};

struct MachineState {
  Arch arch = Arch::x86_64();
  Scheme scheme = Scheme::Regular;
  Libs libs = Libs::Secure;
  AddressSpace* space = nullptr;
  CodeMap code;

  std::array<Word, kRegCount> regs{};
  std::uint64_t flags = 0;
  int call_depth = 0;
  int max_call_depth = 0;
  ReturnStackBounds rs;

  std::vector<Frame> frames;
  std::vector<Addr> return_targets;  // every control transfer taken by a return
  std::uint64_t hijacks = 0;         // returns that missed their call site
  std::uint64_t instructions = 0;
  std::uint64_t markers_issued = 0;

  std::ostream* trace = nullptr;  // JSON lines, one per executed instruction

  MachineState() = default;
  MachineState(Arch a, Scheme s, Libs l, AddressSpace& sp, CodeMap c)
      : arch(a), scheme(s), libs(l), space(&sp), code(c) {}

  Word reg(Reg r) const { return regs[static_cast<std::size_t>(r)]; }
  std::uint64_t val(Reg r) const { return reg(r).value; }
  void set(Reg r, Word w) { regs[static_cast<std::size_t>(r)] = w; }
  void set(Reg r, std::uint64_t v) { set(r, Word{ContentTag::Data, v}); }

  ArchName isa() const { return arch.name; }
  Reg sp_reg() const { return stack_pointer(arch.name); }
  Reg rsp_reg() const { return dedicated_register(arch.name); }
  /// Current return-stack pointer (meaningful under ReturnStack only).
  Addr return_stack_pointer() const { return val(rsp_reg()); }

  /// Throws std::logic_error when a machine invariant does not hold.
  void check_invariants() const;
};

/// Executes one instruction. Returns the transfer target for RETQ, JMPQ and
/// RET, 0 otherwise. `fn` only seeds the values a Body writes.
Addr exec_instr(MachineState& m, const Instr& in, std::size_t fn = 0);

/// Call instruction plus prologue and body of `fn`, called from call site
/// `site` of the current innermost frame.
void exec_call(MachineState& m, const Program& p, std::size_t fn, std::size_t site = 0);
/// Epilogue of the innermost frame, ending in the return transfer.
void exec_return(MachineState& m);

struct Event {
  enum class Kind { Call, Return };
  Kind kind = Kind::Call;
  std::size_t fn = 0;
  std::size_t site = 0;

  friend bool operator==(const Event&, const Event&) = default;
};

/// Call/return sequence of running `entry` to completion. Throws
/// std::invalid_argument on recursion, which would not terminate.
std::vector<Event> flatten(const Program& p, std::size_t entry);
void apply(MachineState& m, const Program& p, const Event& e);
void run(MachineState& m, const Program& p, const std::vector<Event>& events);

/// Runs `entry` to completion and reports the deepest nesting reached.
int measure_call_depth(MachineState& m, const Program& p, std::size_t entry);

struct JmpBuf {
  Addr addr = 0;               // where the register file was stored
  std::uint64_t marker = 0;    // 0 for the baseline setjmp
  bool safe = false;
  std::size_t frame_depth = 0; // interpreter bookkeeping
};

/// Registers the setjmp family saves, in buffer order.
std::vector<Reg> jmpbuf_registers(ArchName arch, bool with_dedicated);
/// Size in bytes of the buffer at buf_addr.
std::uint64_t jmpbuf_bytes(ArchName arch, bool safe, bool with_dedicated);

/// Pushes a fresh marker on the return stack and stores the register file
/// and the marker, but not the return-stack pointer, at buf_addr.
JmpBuf safe_setjmp(MachineState& m, Addr buf_addr);
/// Walks the return stack down to the marker and restores the registers.
void safe_longjmp(MachineState& m, const JmpBuf& buf);
/// Drops the marker once the setjmp caller is about to return.
void pop_marker(MachineState& m, const JmpBuf& buf);

/// The uninstrumented libc pair. It stores the stack pointer and, when the
/// library is Compatible under ReturnStack, the dedicated register too.
JmpBuf setjmp(MachineState& m, Addr buf_addr);
void longjmp(MachineState& m, const JmpBuf& buf);

struct UnwindContext {
  std::uint64_t accumulated_rsp_offset = 0;
  std::size_t cursor = 0;  // frames consumed
};

/// Return-stack spill size of each of the innermost `frames` frames, innermost
/// first.
std::vector<std::uint64_t> unwind_directives(const MachineState& m, std::size_t frames);

/// Discards one frame per directive. Under ReturnStack the return-stack
/// pointer drops by the directive sum; other registers come back from the
/// outermost discarded frame. If ctx_addr is nonzero the context is written
/// there: the offset under ReturnStack, the stack pointer otherwise.
UnwindContext unwind(MachineState& m, const std::vector<std::uint64_t>& directives,
                     Addr ctx_addr = 0);

/// Registers a trace line shows for this architecture.
std::vector<Reg> trace_registers(ArchName arch);

}  // namespace lrds
