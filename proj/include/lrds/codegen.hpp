//===-- lrds/codegen.hpp - Prologue/epilogue emission -----------*- C++ -*-===//
//
// Builds the frame setup and teardown for a function from a small shape
// description: how many callee-saved registers it spills and how many bytes
// of locals it needs.
//
//===----------------------------------------------------------------------===//
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrds/isa.hpp"
#include "lrds/scheme.hpp"

namespace lrds {

struct FuncDesc {
  std::string name;
  unsigned spills = 0;           // callee-saved registers the body uses
  std::uint64_t locals = 0;      // bytes; must be a multiple of 16
  std::vector<std::string> calls;
  bool library = false;          // built as part of a library, see Libs

  friend bool operator==(const FuncDesc&, const FuncDesc&) = default;
};

/// Which frame a function actually gets once scheme and library mode are
/// taken into account.
enum class FrameKind {
  Regular,      // return address on the stack pointer's stack
  ReturnStack,  // return address on the return stack
  Compatible,   // regular frame that also spills the dedicated register
};

FrameKind frame_kind(Scheme scheme, Libs libs, const FuncDesc& f);

/// Bytes a frame of this kind pushes on the return stack.
inline std::uint64_t return_stack_spill(FrameKind k) { return k == FrameKind::ReturnStack ? 8 : 0; }

class EmitError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Emission {
  std::vector<Instr> prologue;
  std::vector<Instr> epilogue;

  /// prologue, "...", epilogue.
  std::vector<Instr> listing() const;
  std::size_t size() const { return prologue.size() + epilogue.size(); }
};

/// Most callee-saved registers emit() can spill (excluding the dedicated one).
unsigned max_spills(ArchName arch);

/// Callee-saved registers a frame of this kind saves, in push/store order.
std::vector<Reg> saved_registers(ArchName arch, unsigned spills, FrameKind kind);

/// Throws EmitError for shapes outside the supported set.
Emission emit_frame(ArchName arch, const FuncDesc& f, FrameKind kind);
inline Emission emit(ArchName arch, const FuncDesc& f, Scheme scheme, Libs libs = Libs::Secure) {
  return emit_frame(arch, f, frame_kind(scheme, libs, f));
}

/// Extra instructions a ReturnStack frame costs over a regular one.
int overhead_law(ArchName arch, unsigned spills);

}  // namespace lrds
