//===-- lrds/asm_parser.hpp - Toy assembly text format ----------*- C++ -*-===//
//
// One instruction per line. A line "name:" starts a function. ';' starts a
// comment anywhere; '#' starts one at the beginning of a line or when
// followed by whitespace (so ARM immediates like "#8" are not comments).
//
//===----------------------------------------------------------------------===//
#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "lrds/isa.hpp"

namespace lrds {

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::size_t size() const { return end - begin; }
  friend bool operator==(const Span&, const Span&) = default;
};

struct AsmFunction {
  std::string name;
  ArchName arch = ArchName::X86_64;
  std::vector<Instr> body;
  Span prologue;               // leading frame-setup instructions
  std::vector<Span> epilogues; // each ends in a return

  /// Recomputes prologue and epilogue spans from the body.
  void find_spans();
  bool has_tail_call() const;
};

std::vector<AsmFunction> parse_asm(std::string_view text, ArchName arch);
std::string print_asm(const std::vector<AsmFunction>& funcs);

bool is_return(const Instr& in);

}  // namespace lrds
