#include "lrds/isa.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>

namespace lrds {

namespace {

constexpr std::array<std::string_view, kRegCount> kRegNames = {
    "RSP", "RBP", "RBX", "R12", "R13", "R14", "R15", "RIP",
    "SP",  "FP",  "LR",  "X19", "X20", "X21", "X22", "X23",
    "X24", "X25", "X26", "X27", "X28", "PC"};

struct OpInfo {
  Op op;
  std::string_view name;
  ArchName arch;
};

// SUB/ADD are listed once per architecture.
constexpr std::array<OpInfo, 21> kOps = {{
    {Op::PUSH, "PUSH", ArchName::X86_64}, {Op::POP, "POP", ArchName::X86_64},
    {Op::POPQ, "POPQ", ArchName::X86_64}, {Op::MOV, "MOV", ArchName::X86_64},
    {Op::LEA, "LEA", ArchName::X86_64},   {Op::CALL, "CALL", ArchName::X86_64},
    {Op::RETQ, "RETQ", ArchName::X86_64}, {Op::JMPQ, "JMPQ", ArchName::X86_64},
    {Op::JMP, "JMP", ArchName::X86_64},   {Op::SUB, "SUB", ArchName::X86_64},
    {Op::ADD, "ADD", ArchName::X86_64},   {Op::STR, "STR", ArchName::ARM64},
    {Op::LDR, "LDR", ArchName::ARM64},    {Op::STP, "STP", ArchName::ARM64},
    {Op::LDP, "LDP", ArchName::ARM64},    {Op::BL, "BL", ArchName::ARM64},
    {Op::RET, "RET", ArchName::ARM64},    {Op::B, "B", ArchName::ARM64},
    {Op::SUB, "SUB", ArchName::ARM64},    {Op::ADD, "ADD", ArchName::ARM64},
    {Op::Body, "...", ArchName::X86_64},
}};

std::string upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string imm_text(std::int64_t v) { return std::to_string(v); }

std::string operand_text(const Operand& o, ArchName arch) {
  const bool x86 = arch == ArchName::X86_64;
  switch (o.kind) {
    case Operand::Kind::Reg:
      return (x86 ? "%" : "") + std::string(reg_name(o.reg));
    case Operand::Kind::Imm:
      return (x86 ? "$" : "#") + imm_text(o.imm);
    case Operand::Kind::Label:
      return o.label;
    case Operand::Kind::Mem:
      break;
  }
  if (x86) {
    std::string s = o.indirect ? "*" : "";
    if (o.imm != 0) s += imm_text(o.imm);
    return s + "(%" + std::string(reg_name(o.reg)) + ")";
  }
  const std::string base(reg_name(o.reg));
  switch (o.indexing) {
    case Indexing::Offset:
      return o.imm == 0 ? "[" + base + "]" : "[" + base + ", #" + imm_text(o.imm) + "]";
    case Indexing::Post:
      return "[" + base + "], #" + imm_text(o.imm);
    case Indexing::Pre:
      return "[" + base + "], #" + imm_text(o.imm) + "!";
  }
  return {};
}

[[noreturn]] void fail(int line, const std::string& msg) { throw ParseError(line, msg); }

std::int64_t parse_int(std::string_view s, int line) {
  s = trim(s);
  bool neg = false;
  if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
    neg = s.front() == '-';
    s.remove_prefix(1);
  }
  int base = 10;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
    base = 16;
    s.remove_prefix(2);
  }
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty())
    fail(line, "bad immediate '" + std::string(s) + "'");
  return neg ? -v : v;
}

Reg parse_reg(std::string_view s, ArchName arch, int line) {
  std::string u = upper(trim(s));
  if (arch == ArchName::X86_64) {
    if (u.empty() || u.front() != '%') fail(line, "expected register, got '" + u + "'");
    u.erase(0, 1);
  } else if (u == "X29") {
    u = "FP";
  } else if (u == "X30") {
    u = "LR";
  }
  for (std::size_t i = 0; i < kRegCount; ++i)
    if (kRegNames[i] == u && reg_belongs_to(static_cast<Reg>(i), arch)) return static_cast<Reg>(i);
  fail(line, "unknown register '" + u + "'");
}

// Splits on commas that are not nested in () or [].
std::vector<std::string> split_operands(std::string_view s) {
  std::vector<std::string> out;
  int depth = 0;
  std::string cur;
  for (char c : s) {
    if (c == '(' || c == '[') ++depth;
    if (c == ')' || c == ']') --depth;
    if (c == ',' && depth == 0) {
      out.emplace_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.emplace_back(trim(cur));
  return out;
}

bool looks_like_label(std::string_view s) {
  if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_' || s[0] == '.'))
    return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '$';
  });
}

Operand parse_x86_operand(std::string_view s, int line) {
  s = trim(s);
  if (s.empty()) fail(line, "empty operand");
  if (s.front() == '%') return Operand::r(parse_reg(s, ArchName::X86_64, line));
  if (s.front() == '$') return Operand::i(parse_int(s.substr(1), line));
  const auto open = s.find('(');
  if (open != std::string_view::npos) {
    if (s.back() != ')') fail(line, "bad memory operand '" + std::string(s) + "'");
    bool indirect = false;
    std::string_view disp = s.substr(0, open);
    if (!disp.empty() && disp.front() == '*') {
      indirect = true;
      disp.remove_prefix(1);
    }
    const std::int64_t d = trim(disp).empty() ? 0 : parse_int(disp, line);
    const Reg base = parse_reg(s.substr(open + 1, s.size() - open - 2), ArchName::X86_64, line);
    return Operand::mem(base, d, Indexing::Offset, indirect);
  }
  if (looks_like_label(s)) return Operand::l(std::string(s));
  fail(line, "bad operand '" + std::string(s) + "'");
}

std::vector<Operand> parse_arm_operands(const std::vector<std::string>& parts, int line) {
  std::vector<Operand> out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    std::string_view s = parts[i];
    if (s.empty()) fail(line, "empty operand");
    if (s.front() == '#') {
      out.push_back(Operand::i(parse_int(s.substr(1), line)));
    } else if (s.front() == '[') {
      const auto close = s.find(']');
      if (close == std::string_view::npos) fail(line, "unterminated '['");
      std::string_view inner = s.substr(1, close - 1);
      std::string_view after = trim(s.substr(close + 1));
      std::int64_t disp = 0;
      const auto comma = inner.find(',');
      std::string_view base_text = inner.substr(0, comma);
      if (comma != std::string_view::npos) {
        std::string_view d = trim(inner.substr(comma + 1));
        if (d.empty() || d.front() != '#') fail(line, "expected '#imm' in memory operand");
        disp = parse_int(d.substr(1), line);
      }
      const Reg base = parse_reg(base_text, ArchName::ARM64, line);
      if (after == "!") {
        out.push_back(Operand::mem(base, disp, Indexing::Pre));
      } else if (!after.empty()) {
        fail(line, "junk after memory operand");
      } else if (comma == std::string_view::npos && i + 1 < parts.size() &&
                 !parts[i + 1].empty() && parts[i + 1].front() == '#') {
        // "[Xn], #imm" (post-indexed) or "[Xn], #imm!" (pre-indexed).
        std::string_view imm = parts[++i];
        imm.remove_prefix(1);
        Indexing ix = Indexing::Post;
        if (!imm.empty() && imm.back() == '!') {
          ix = Indexing::Pre;
          imm.remove_suffix(1);
        }
        out.push_back(Operand::mem(base, parse_int(imm, line), ix));
      } else {
        out.push_back(Operand::mem(base, disp, Indexing::Offset));
      }
    } else {
      // A register name, or a branch target that happens to look like one.
      try {
        out.push_back(Operand::r(parse_reg(s, ArchName::ARM64, line)));
      } catch (const ParseError&) {
        if (!looks_like_label(s)) throw;
        out.push_back(Operand::l(std::string(s)));
      }
    }
  }
  return out;
}

bool is_reg(const Operand& o) { return o.kind == Operand::Kind::Reg; }
bool is_imm(const Operand& o) { return o.kind == Operand::Kind::Imm; }
bool is_mem(const Operand& o) { return o.kind == Operand::Kind::Mem; }
bool is_label(const Operand& o) { return o.kind == Operand::Kind::Label; }

void check_shape(const Instr& in, ArchName arch, int line) {
  const auto& o = in.ops;
  auto need = [&](bool ok) {
    if (!ok) fail(line, "bad operands for " + std::string(mnemonic(in.op)));
  };
  const bool x86 = arch == ArchName::X86_64;
  switch (in.op) {
    case Op::Body:
    case Op::RETQ:
    case Op::RET:
      need(o.empty());
      break;
    case Op::PUSH:
    case Op::POP:
      need(o.size() == 1 && is_reg(o[0]));
      break;
    case Op::POPQ:
      need(o.size() == 1 && is_mem(o[0]) && !o[0].indirect);
      break;
    case Op::MOV:
      need(o.size() == 2 && is_reg(o[0]) && is_reg(o[1]));
      break;
    case Op::LEA:
      need(o.size() == 2 && is_mem(o[0]) && !o[0].indirect && is_reg(o[1]));
      break;
    case Op::CALL:
    case Op::JMP:
    case Op::BL:
    case Op::B:
      need(o.size() == 1 && is_label(o[0]));
      break;
    case Op::JMPQ:
      need(o.size() == 1 && is_mem(o[0]) && o[0].indirect);
      break;
    case Op::SUB:
    case Op::ADD:
      if (x86)
        need(o.size() == 2 && is_imm(o[0]) && is_reg(o[1]));
      else
        need(o.size() == 3 && is_reg(o[0]) && is_reg(o[1]) && is_imm(o[2]));
      break;
    case Op::STR:
    case Op::LDR:
      need(o.size() == 2 && is_reg(o[0]) && is_mem(o[1]));
      break;
    case Op::STP:
    case Op::LDP:
      need(o.size() == 3 && is_reg(o[0]) && is_reg(o[1]) && is_mem(o[2]));
      break;
  }
}

}  // namespace

std::string_view reg_name(Reg r) { return kRegNames[static_cast<std::size_t>(r)]; }

bool reg_belongs_to(Reg r, ArchName arch) {
  const bool x86 = r <= Reg::RIP;
  return arch == ArchName::X86_64 ? x86 : !x86;
}

Reg stack_pointer(ArchName a) { return a == ArchName::X86_64 ? Reg::RSP : Reg::SP; }
Reg frame_pointer(ArchName a) { return a == ArchName::X86_64 ? Reg::RBP : Reg::FP; }
Reg program_counter(ArchName a) { return a == ArchName::X86_64 ? Reg::RIP : Reg::PC; }
Reg dedicated_register(ArchName a) { return a == ArchName::X86_64 ? Reg::R15 : Reg::X28; }

std::string_view mnemonic(Op op) {
  for (const auto& info : kOps)
    if (info.op == op) return info.name;
  return "?";
}

std::string print(const Instr& in, ArchName arch) {
  std::string s(mnemonic(in.op));
  if (in.ops.empty()) return s;
  s.resize(std::max<std::size_t>(s.size() + 1, 7), ' ');
  for (std::size_t i = 0; i < in.ops.size(); ++i) {
    if (i) s += ", ";
    s += operand_text(in.ops[i], arch);
  }
  return s;
}

std::string print(const std::vector<Instr>& body, ArchName arch) {
  std::string out;
  for (const auto& in : body) {
    out += ' ';
    out += print(in, arch);
    out += '\n';
  }
  return out;
}

Instr parse_instr(std::string_view text, ArchName arch, int line) {
  text = trim(text);
  if (text == "...") return Instr::body();
  const auto sp = text.find_first_of(" \t");
  const std::string mn = upper(text.substr(0, sp));
  const std::string_view rest = sp == std::string_view::npos ? "" : trim(text.substr(sp));
  Instr in;
  bool found = false;
  for (const auto& info : kOps) {
    if (info.name == mn && info.arch == arch && info.op != Op::Body) {
      in.op = info.op;
      found = true;
      break;
    }
  }
  if (!found) fail(line, "unknown mnemonic '" + mn + "' for " + std::string(to_string(arch)));
  const auto parts = split_operands(rest);
  if (arch == ArchName::X86_64) {
    for (const auto& p : parts) in.ops.push_back(parse_x86_operand(p, line));
  } else {
    in.ops = parse_arm_operands(parts, line);
  }
  check_shape(in, arch, line);
  return in;
}

std::vector<std::string> tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace lrds
