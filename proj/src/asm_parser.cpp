#include "lrds/asm_parser.hpp"

#include <cctype>

namespace lrds {

namespace {

bool reg_is(const Operand& o, Reg r) { return o.kind == Operand::Kind::Reg && o.reg == r; }
bool mem_on(const Operand& o, Reg r) { return o.kind == Operand::Kind::Mem && o.reg == r; }

bool prologue_form(const Instr& in, ArchName arch) {
  const auto& o = in.ops;
  if (arch == ArchName::X86_64) {
    switch (in.op) {
      case Op::POPQ: return mem_on(o[0], Reg::R15);
      case Op::LEA: return mem_on(o[0], Reg::R15) && reg_is(o[1], Reg::R15);
      case Op::PUSH: return true;
      case Op::MOV: return reg_is(o[0], Reg::RSP) && reg_is(o[1], Reg::RBP);
      case Op::SUB: return reg_is(o[1], Reg::RSP);
      default: return false;
    }
  }
  switch (in.op) {
    case Op::STR: return mem_on(o[1], Reg::SP) || (reg_is(o[0], Reg::LR) && mem_on(o[1], Reg::X28));
    case Op::STP: return mem_on(o[2], Reg::SP);
    case Op::SUB: return reg_is(o[0], Reg::SP) && reg_is(o[1], Reg::SP);
    case Op::ADD: return reg_is(o[0], Reg::FP) && reg_is(o[1], Reg::SP);
    default: return false;
  }
}

bool epilogue_form(const Instr& in, ArchName arch) {
  const auto& o = in.ops;
  if (arch == ArchName::X86_64) {
    switch (in.op) {
      case Op::ADD: return reg_is(o[1], Reg::RSP);
      case Op::POP: return true;
      case Op::LEA: return mem_on(o[0], Reg::R15) && reg_is(o[1], Reg::R15);
      default: return false;
    }
  }
  switch (in.op) {
    case Op::LDR: return mem_on(o[1], Reg::SP) || (reg_is(o[0], Reg::LR) && mem_on(o[1], Reg::X28));
    case Op::LDP: return mem_on(o[2], Reg::SP);
    case Op::ADD: return reg_is(o[0], Reg::SP) && reg_is(o[1], Reg::SP);
    default: return false;
  }
}

std::string_view strip_comment(std::string_view line) {
  const auto semi = line.find(';');
  if (semi != std::string_view::npos) line = line.substr(0, semi);
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] != '#') continue;
    const bool at_start = line.find_first_not_of(" \t") == i;
    const bool before_space =
        i + 1 == line.size() || std::isspace(static_cast<unsigned char>(line[i + 1]));
    if (at_start || before_space) return line.substr(0, i);
  }
  return line;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

bool is_return(const Instr& in) {
  return in.op == Op::RETQ || in.op == Op::JMPQ || in.op == Op::RET;
}

bool AsmFunction::has_tail_call() const {
  for (const auto& in : body)
    if (in.op == Op::JMP || in.op == Op::B) return true;
  return false;
}

void AsmFunction::find_spans() {
  prologue = {0, 0};
  while (prologue.end < body.size() && prologue_form(body[prologue.end], arch)) ++prologue.end;
  epilogues.clear();
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (!is_return(body[i])) continue;
    std::size_t b = i;
    while (b > prologue.end && epilogue_form(body[b - 1], arch)) --b;
    epilogues.push_back({b, i + 1});
  }
}

std::vector<AsmFunction> parse_asm(std::string_view text, ArchName arch) {
  std::vector<AsmFunction> out;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const auto line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.back() == ':') {
      const auto name = trim(line.substr(0, line.size() - 1));
      if (name.empty() || name.find_first_of(" \t") != std::string_view::npos)
        throw ParseError(line_no, "bad label '" + std::string(line) + "'");
      out.push_back({std::string(name), arch, {}, {}, {}});
      continue;
    }
    if (out.empty()) throw ParseError(line_no, "instruction outside any function");
    out.back().body.push_back(parse_instr(line, arch, line_no));
  }
  for (auto& f : out) f.find_spans();
  return out;
}

std::string print_asm(const std::vector<AsmFunction>& funcs) {
  std::string s;
  for (const auto& f : funcs) {
    s += f.name;
    s += ":\n";
    s += print(f.body, f.arch);
  }
  return s;
}

}  // namespace lrds
