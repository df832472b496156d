//===-- lrds/isa.hpp - Toy x86-64 / ARM64 instruction subset ---*- C++ -*-===//
//
// Just the mnemonics that appear in typical prologue/epilogue pairs, plus
// direct calls and tail jumps. x86-64 uses AT&T operand order
// ("SUB $72, %RSP"). ARM64 memory operands support offset ("[SP, #64]"),
// post-indexed ("[X28], #8") and pre-indexed addressing; pre-indexed operands
// print as "[X28], #-8!" and also parse from the standard "[X28, #-8]!".
//
// "..." stands for the function body between prologue and epilogue.
//
//===----------------------------------------------------------------------===//
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lrds/arch.hpp"

namespace lrds {

enum class Reg : std::uint8_t {
  // x86-64
  RSP, RBP, RBX, R12, R13, R14, R15, RIP,
  // ARM64
  SP, FP, LR, X19, X20, X21, X22, X23, X24, X25, X26, X27, X28, PC,
  Count
};
inline constexpr std::size_t kRegCount = static_cast<std::size_t>(Reg::Count);

std::string_view reg_name(Reg r);
bool reg_belongs_to(Reg r, ArchName arch);

/// Stack pointer, frame pointer, program counter and the register dedicated
/// to the return-stack pointer.
Reg stack_pointer(ArchName a);
Reg frame_pointer(ArchName a);
Reg program_counter(ArchName a);
Reg dedicated_register(ArchName a);

enum class Op : std::uint8_t {
  // x86-64
  PUSH, POP, POPQ, MOV, LEA, CALL, RETQ, JMPQ, JMP,
  // ARM64
  STR, LDR, STP, LDP, BL, RET, B,
  // both
  SUB, ADD,
  Body,
};

std::string_view mnemonic(Op op);

enum class Indexing : std::uint8_t { Offset, Pre, Post };

struct Operand {
  enum class Kind : std::uint8_t { Reg, Imm, Mem, Label };
  Kind kind = Kind::Imm;
  Reg reg = Reg::RSP;         // Reg, or base register of Mem
  std::int64_t imm = 0;       // Imm, or displacement of Mem
  Indexing indexing = Indexing::Offset;
  bool indirect = false;      // x86 "*(%R15)"
  std::string label;

  static Operand r(Reg reg) { return {Kind::Reg, reg, 0, Indexing::Offset, false, {}}; }
  static Operand i(std::int64_t v) { return {Kind::Imm, Reg::RSP, v, Indexing::Offset, false, {}}; }
  static Operand mem(Reg base, std::int64_t disp = 0, Indexing ix = Indexing::Offset,
                     bool indirect = false) {
    return {Kind::Mem, base, disp, ix, indirect, {}};
  }
  static Operand l(std::string name) {
    return {Kind::Label, Reg::RSP, 0, Indexing::Offset, false, std::move(name)};
  }

  friend bool operator==(const Operand&, const Operand&) = default;
};

struct Instr {
  Op op = Op::Body;
  std::vector<Operand> ops;

  static Instr body() { return {}; }
  friend bool operator==(const Instr&, const Instr&) = default;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(int line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// Canonical text of one instruction, mnemonic padded to seven columns.
std::string print(const Instr& in, ArchName arch);
std::string print(const std::vector<Instr>& body, ArchName arch);

/// Parses a single instruction (no label, no comment). Throws ParseError
/// with the given line number on unknown mnemonics or operand shapes.
Instr parse_instr(std::string_view text, ArchName arch, int line = 0);

/// Whitespace-separated tokens; used to compare listings modulo layout.
std::vector<std::string> tokens(std::string_view text);

}  // namespace lrds
