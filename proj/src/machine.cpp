#include "lrds/machine.hpp"

#include <algorithm>
#include <ostream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace lrds {

std::string_view to_string(MachineFault::Kind k) {
  switch (k) {
    case MachineFault::Kind::Guard: return "guard";
    case MachineFault::Kind::ControlFlow: return "control-flow";
    case MachineFault::Kind::Corruption: return "corruption";
    case MachineFault::Kind::Alignment: return "alignment";
  }
  return "?";
}

std::size_t Program::index(const std::string& name) const {
  for (std::size_t i = 0; i < funcs.size(); ++i)
    if (funcs[i].name == name) return i;
  throw std::out_of_range("no function named '" + name + "'");
}

void Program::validate() const {
  if (funcs.size() > kMaxFunctions)
    throw std::invalid_argument("program has more than " + std::to_string(kMaxFunctions) +
                                " functions");
  std::unordered_set<std::string> names;
  for (const auto& f : funcs)
    if (!names.insert(f.name).second)
      throw std::invalid_argument("duplicate function '" + f.name + "'");
  for (const auto& f : funcs)
    for (const auto& c : f.calls)
      if (!names.count(c))
        throw std::invalid_argument("'" + f.name + "' calls unknown function '" + c + "'");
}

namespace {

Word load(MachineState& m, Addr a) {
  const auto r = m.space->access(a, AccessKind::Read);
  if (r.fault) throw MachineFault(MachineFault::Kind::Guard, a, "read fault at " + hex(a));
  return r.word;
}

void store(MachineState& m, Addr a, Word w) {
  if (m.space->access(a, AccessKind::Write, w).fault)
    throw MachineFault(MachineFault::Kind::Guard, a, "write fault at " + hex(a));
}

Word offset_word(Word base, std::int64_t d) {
  return {base.tag == ContentTag::Zero ? ContentTag::Data : base.tag,
          base.value + static_cast<std::uint64_t>(d)};
}

// Effective address of a memory operand, applying pre-/post-index writeback
// around `access`.
template <class F>
void with_mem(MachineState& m, const Operand& o, F&& access) {
  const Addr base = m.val(o.reg);
  const auto d = static_cast<std::uint64_t>(o.imm);
  switch (o.indexing) {
    case Indexing::Offset:
      access(base + d);
      break;
    case Indexing::Pre:
      m.set(o.reg, offset_word(m.reg(o.reg), o.imm));
      access(base + d);
      break;
    case Indexing::Post:
      access(base);
      m.set(o.reg, offset_word(m.reg(o.reg), o.imm));
      break;
  }
}

void set_flags(MachineState& m, std::uint64_t result) {
  m.flags = (result == 0 ? 0x40 : 0) | ((result >> 63) ? 0x80 : 0);
}

void emit_trace(const MachineState& m, const Instr& in) {
  nlohmann::ordered_json regs;
  for (Reg r : trace_registers(m.isa())) regs[std::string(reg_name(r))] = hex(m.val(r));
  if (m.isa() == ArchName::X86_64) regs["flags"] = m.flags;
  nlohmann::ordered_json line;
  line["instr"] = print(in, m.isa());
  line["regs"] = regs;
  line["call_depth"] = m.call_depth;
  *m.trace << line.dump() << '\n';
}

void trace_pseudo(const MachineState& m, Op op, const std::string& target) {
  if (m.trace) emit_trace(m, Instr{op, {Operand::l(target)}});
}

// The body uses exactly the registers its frame saved, plus LR on ARM since
// any call inside it overwrites the link register.
void exec_body(MachineState& m, std::size_t fn) {
  if (m.frames.empty()) return;
  const Frame& f = m.frames.back();
  const Reg dedicated = m.rsp_reg();
  const std::uint64_t tag = 0xB0D1'0000'0000 + (std::uint64_t{fn} << 8);
  unsigned i = 0;
  const auto& pro = f.emission.prologue;
  for (const auto& in : pro) {
    for (std::size_t k = 0; k < in.ops.size(); ++k) {
      const bool spill = (in.op == Op::PUSH || in.op == Op::STR || in.op == Op::STP) &&
                         in.ops[k].kind == Operand::Kind::Reg;
      if (!spill) continue;
      const Reg r = in.ops[k].reg;
      if (r == dedicated || r == Reg::RBP || r == Reg::FP || r == Reg::LR) continue;
      m.set(r, tag + ++i);
    }
  }
  if (m.isa() == ArchName::ARM64) m.set(Reg::LR, tag + 0xFF);
}

}  // namespace

void MachineState::check_invariants() const {
  if (call_depth < 0 || max_call_depth < call_depth)
    throw std::logic_error("call depth bookkeeping broken");
  if (scheme == Scheme::ReturnStack) {
    const Addr p = return_stack_pointer();
    if (p % 8 != 0 || p < rs.base || p > rs.limit)
      throw std::logic_error("return-stack pointer " + hex(p) + " outside its stack");
  }
}

std::vector<Reg> trace_registers(ArchName arch) {
  if (arch == ArchName::X86_64) return {Reg::RSP, Reg::RBP, Reg::RBX, Reg::R15, Reg::RIP};
  return {Reg::SP, Reg::FP, Reg::LR, Reg::X19, Reg::X28, Reg::PC};
}

Addr exec_instr(MachineState& m, const Instr& in, std::size_t fn) {
  const auto& o = in.ops;
  const Reg sp = m.sp_reg();
  Addr target = 0;
  ++m.instructions;
  switch (in.op) {
    case Op::PUSH: {
      const Addr a = m.val(sp) - 8;
      store(m, a, m.reg(o[0].reg));
      m.set(sp, offset_word(m.reg(sp), -8));
      break;
    }
    case Op::POP: {
      const Word w = load(m, m.val(sp));
      m.set(sp, offset_word(m.reg(sp), 8));
      m.set(o[0].reg, w);
      break;
    }
    case Op::POPQ: {
      const Word w = load(m, m.val(sp));
      m.set(sp, offset_word(m.reg(sp), 8));
      store(m, m.val(o[0].reg) + static_cast<std::uint64_t>(o[0].imm), w);
      break;
    }
    case Op::MOV:
      m.set(o[1].reg, m.reg(o[0].reg));
      break;
    case Op::LEA:
      m.set(o[1].reg, offset_word(m.reg(o[0].reg), o[0].imm));
      break;
    case Op::SUB:
    case Op::ADD: {
      const bool x86 = m.isa() == ArchName::X86_64;
      const Reg dst = x86 ? o[1].reg : o[0].reg;
      const Reg src = o[1].reg;
      const std::int64_t imm = x86 ? o[0].imm : o[2].imm;
      const Word w = offset_word(m.reg(src), in.op == Op::SUB ? -imm : imm);
      m.set(dst, w);
      if (x86) set_flags(m, w.value);
      break;
    }
    case Op::STR:
      with_mem(m, o[1], [&](Addr a) { store(m, a, m.reg(o[0].reg)); });
      break;
    case Op::LDR:
      with_mem(m, o[1], [&](Addr a) { m.set(o[0].reg, load(m, a)); });
      break;
    case Op::STP:
      with_mem(m, o[2], [&](Addr a) {
        store(m, a, m.reg(o[0].reg));
        store(m, a + 8, m.reg(o[1].reg));
      });
      break;
    case Op::LDP:
      with_mem(m, o[2], [&](Addr a) {
        const Word lo = load(m, a);
        const Word hi = load(m, a + 8);
        m.set(o[0].reg, lo);
        m.set(o[1].reg, hi);
      });
      break;
    case Op::RETQ: {
      target = load(m, m.val(sp)).value;
      m.set(sp, offset_word(m.reg(sp), 8));
      m.set(Reg::RIP, Word{ContentTag::CodePointer, target});
      break;
    }
    case Op::JMPQ:
      target = load(m, m.val(o[0].reg) + static_cast<std::uint64_t>(o[0].imm)).value;
      m.set(Reg::RIP, Word{ContentTag::CodePointer, target});
      break;
    case Op::RET:
      target = m.val(Reg::LR);
      m.set(Reg::PC, Word{ContentTag::CodePointer, target});
      break;
    case Op::Body:
      exec_body(m, fn);
      break;
    case Op::CALL:
    case Op::BL:
    case Op::JMP:
    case Op::B:
      throw std::invalid_argument(std::string(mnemonic(in.op)) +
                                  " is executed through exec_call, not exec_instr");
  }
  if (m.trace) emit_trace(m, in);
  return target;
}

void exec_call(MachineState& m, const Program& p, std::size_t fn, std::size_t site) {
  if (fn >= p.funcs.size()) throw std::out_of_range("function index out of range");
  const FuncDesc& f = p.funcs[fn];
  Frame frame;
  frame.fn = fn;
  frame.kind = frame_kind(m.scheme, m.libs, f);
  frame.emission = emit_frame(m.isa(), f, frame.kind);
  frame.regs_at_call = m.regs;
  frame.expected_return =
      m.frames.empty() ? m.code.thread_start() : m.code.return_address(m.frames.back().fn, site);

  const Reg sp = m.sp_reg();
  if (m.val(sp) % 16 != 0)
    throw MachineFault(MachineFault::Kind::Alignment, m.val(sp),
                       "stack pointer " + hex(m.val(sp)) + " misaligned at call");
  const Word ra{ContentTag::ReturnAddress, frame.expected_return};
  if (m.isa() == ArchName::X86_64) {
    store(m, m.val(sp) - 8, ra);
    m.set(sp, offset_word(m.reg(sp), -8));
    m.set(Reg::RIP, Word{ContentTag::CodePointer, m.code.entry(fn)});
    trace_pseudo(m, Op::CALL, f.name);
  } else {
    m.set(Reg::LR, ra);
    m.set(Reg::PC, Word{ContentTag::CodePointer, m.code.entry(fn)});
    trace_pseudo(m, Op::BL, f.name);
  }
  m.call_depth++;
  m.max_call_depth = std::max(m.max_call_depth, m.call_depth);
  m.frames.push_back(std::move(frame));
  for (const auto& in : m.frames.back().emission.prologue) exec_instr(m, in, fn);
  exec_instr(m, Instr::body(), fn);
}

void exec_return(MachineState& m) {
  Frame frame;
  if (m.frames.empty()) {
    // Nothing was called: run a bare epilogue and let it fault.
    frame.kind = frame_kind(m.scheme, m.libs, FuncDesc{});
    frame.emission = emit_frame(m.isa(), FuncDesc{}, frame.kind);
    frame.expected_return = 0;
  } else {
    frame = m.frames.back();
  }
  Addr target = 0;
  for (const auto& in : frame.emission.epilogue) target = exec_instr(m, in, frame.fn);
  if (!m.space->in_code(target))
    throw MachineFault(MachineFault::Kind::ControlFlow, target,
                       "return to non-code address " + hex(target));
  m.return_targets.push_back(target);
  if (target != frame.expected_return) ++m.hijacks;
  if (!m.frames.empty()) {
    m.frames.pop_back();
    --m.call_depth;
  }
}

std::vector<Event> flatten(const Program& p, std::size_t entry) {
  std::vector<Event> out;
  std::vector<char> active(p.funcs.size(), 0);
  std::unordered_map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < p.funcs.size(); ++i) idx.emplace(p.funcs[i].name, i);
  // Explicit stack: (function, next call to make).
  std::vector<std::pair<std::size_t, std::size_t>> stack;
  out.push_back({Event::Kind::Call, entry, 0});
  stack.emplace_back(entry, 0);
  active.at(entry) = 1;
  while (!stack.empty()) {
    auto& [fn, next] = stack.back();
    const auto& calls = p.funcs[fn].calls;
    if (next == calls.size()) {
      out.push_back({Event::Kind::Return, fn, 0});
      active[fn] = 0;
      stack.pop_back();
      continue;
    }
    const std::size_t site = next++;
    const auto it = idx.find(calls[site]);
    if (it == idx.end()) throw std::invalid_argument("unknown callee '" + calls[site] + "'");
    if (active[it->second])
      throw std::invalid_argument("recursive call to '" + calls[site] + "' never terminates");
    active[it->second] = 1;
    out.push_back({Event::Kind::Call, it->second, site});
    stack.emplace_back(it->second, 0);
  }
  return out;
}

void apply(MachineState& m, const Program& p, const Event& e) {
  if (e.kind == Event::Kind::Call)
    exec_call(m, p, e.fn, e.site);
  else
    exec_return(m);
}

void run(MachineState& m, const Program& p, const std::vector<Event>& events) {
  for (const auto& e : events) apply(m, p, e);
}

int measure_call_depth(MachineState& m, const Program& p, std::size_t entry) {
  run(m, p, flatten(p, entry));
  return m.max_call_depth;
}

std::vector<Reg> jmpbuf_registers(ArchName arch, bool with_dedicated) {
  std::vector<Reg> regs;
  if (arch == ArchName::X86_64) {
    regs = {Reg::RBX, Reg::R12, Reg::R13, Reg::R14, Reg::RBP, Reg::RSP};
  } else {
    regs = {Reg::X19, Reg::X20, Reg::X21, Reg::X22, Reg::X23, Reg::X24,
            Reg::X25, Reg::X26, Reg::X27, Reg::FP,  Reg::SP};
  }
  if (with_dedicated) regs.push_back(dedicated_register(arch));
  return regs;
}

std::uint64_t jmpbuf_bytes(ArchName arch, bool safe, bool with_dedicated) {
  return 8 * (jmpbuf_registers(arch, with_dedicated).size() + (safe ? 1 : 0));
}

namespace {

void save_registers(MachineState& m, Addr buf, const std::vector<Reg>& regs) {
  for (std::size_t i = 0; i < regs.size(); ++i) store(m, buf + 8 * i, m.reg(regs[i]));
}

void restore_registers(MachineState& m, Addr buf, const std::vector<Reg>& regs) {
  for (std::size_t i = 0; i < regs.size(); ++i) m.set(regs[i], load(m, buf + 8 * i));
}

void drop_frames(MachineState& m, std::size_t depth) {
  if (depth > m.frames.size())
    throw MachineFault(MachineFault::Kind::Corruption, 0,
                       "jump target frame is no longer active");
  m.frames.resize(depth);
  m.call_depth = static_cast<int>(depth);
}

bool compatible_libc(const MachineState& m) {
  return m.scheme == Scheme::ReturnStack && m.libs == Libs::Compatible;
}

}  // namespace

JmpBuf safe_setjmp(MachineState& m, Addr buf_addr) {
  if (m.scheme != Scheme::ReturnStack)
    throw std::logic_error("safe_setjmp needs the ReturnStack scheme");
  JmpBuf b;
  b.addr = buf_addr;
  b.safe = true;
  b.marker = m.arch.space_bytes() + ++m.markers_issued;
  b.frame_depth = m.frames.size();
  const Reg r = m.rsp_reg();
  store(m, m.val(r), Word{ContentTag::Data, b.marker});
  m.set(r, offset_word(m.reg(r), 8));
  const auto regs = jmpbuf_registers(m.isa(), false);
  save_registers(m, buf_addr, regs);
  store(m, buf_addr + 8 * regs.size(), Word{ContentTag::Data, b.marker});
  return b;
}

void safe_longjmp(MachineState& m, const JmpBuf& b) {
  const auto regs = jmpbuf_registers(m.isa(), false);
  const std::uint64_t marker = load(m, b.addr + 8 * regs.size()).value;
  const Reg r = m.rsp_reg();
  Addr p = m.val(r);
  for (;;) {
    if (p < m.rs.base + 8)
      throw MachineFault(MachineFault::Kind::Corruption, p,
                         "longjmp marker " + hex(marker) + " not on the return stack");
    const auto w = m.space->read(p - 8);
    if (!w)
      throw MachineFault(MachineFault::Kind::Corruption, p - 8,
                         "longjmp walked off the return stack");
    if (w->value == marker) break;
    p -= 8;
  }
  m.set(r, p);
  restore_registers(m, b.addr, regs);
  drop_frames(m, b.frame_depth);
}

void pop_marker(MachineState& m, const JmpBuf& b) {
  const Reg r = m.rsp_reg();
  const Addr p = m.val(r);
  const auto w = p >= m.rs.base + 8 ? m.space->read(p - 8) : std::nullopt;
  if (!w || w->value != b.marker)
    throw MachineFault(MachineFault::Kind::Corruption, p,
                       "marker " + hex(b.marker) + " is not on top of the return stack");
  m.set(r, p - 8);
}

JmpBuf setjmp(MachineState& m, Addr buf_addr) {
  JmpBuf b;
  b.addr = buf_addr;
  b.frame_depth = m.frames.size();
  save_registers(m, buf_addr, jmpbuf_registers(m.isa(), compatible_libc(m)));
  return b;
}

void longjmp(MachineState& m, const JmpBuf& b) {
  restore_registers(m, b.addr, jmpbuf_registers(m.isa(), compatible_libc(m)));
  drop_frames(m, b.frame_depth);
}

std::vector<std::uint64_t> unwind_directives(const MachineState& m, std::size_t frames) {
  if (frames > m.frames.size()) throw std::out_of_range("not that many active frames");
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < frames; ++i)
    out.push_back(return_stack_spill(m.frames[m.frames.size() - 1 - i].kind));
  return out;
}

UnwindContext unwind(MachineState& m, const std::vector<std::uint64_t>& directives, Addr ctx_addr) {
  if (directives.size() > m.frames.size())
    throw MachineFault(MachineFault::Kind::Corruption, 0, "unwinding past the outermost frame");
  UnwindContext ctx;
  for (std::uint64_t d : directives) {
    if (d % 8 != 0) throw std::invalid_argument("spill size must be a multiple of 8");
    ctx.accumulated_rsp_offset += d;
    ++ctx.cursor;
  }
  const Reg r = m.rsp_reg();
  const bool rs = m.scheme == Scheme::ReturnStack;
  if (rs && (m.val(r) < m.rs.base || m.val(r) - m.rs.base < ctx.accumulated_rsp_offset))
    throw MachineFault(MachineFault::Kind::Corruption, m.val(r),
                       "unwinding below the return-stack base");
  if (ctx_addr != 0) {
    const std::uint64_t v = rs ? ctx.accumulated_rsp_offset : m.val(m.sp_reg());
    store(m, ctx_addr, Word{ContentTag::Data, v});
  }
  if (directives.empty()) return ctx;
  const Word dedicated = m.reg(r);
  const std::size_t keep = m.frames.size() - directives.size();
  m.regs = m.frames[keep].regs_at_call;
  if (rs) m.set(r, offset_word(dedicated, -static_cast<std::int64_t>(ctx.accumulated_rsp_offset)));
  else m.set(r, dedicated);
  drop_frames(m, keep);
  return ctx;
}

}  // namespace lrds
