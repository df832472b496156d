#include "lrds/codegen.hpp"

namespace lrds {

namespace {

constexpr Reg kX86Callee[] = {Reg::RBX, Reg::R12, Reg::R13, Reg::R14};
constexpr Reg kArmCallee[] = {Reg::X19, Reg::X20, Reg::X21, Reg::X22, Reg::X23,
                              Reg::X24, Reg::X25, Reg::X26, Reg::X27};

std::int64_t roundup16(std::int64_t v) { return (v + 15) & ~std::int64_t{15}; }

Instr ins(Op op, std::vector<Operand> ops = {}) { return {op, std::move(ops)}; }

using O = Operand;

Emission emit_x86(const FuncDesc& f, FrameKind kind) {
  const auto regs = saved_registers(ArchName::X86_64, f.spills, kind);
  const auto L = static_cast<std::int64_t>(f.locals);
  // CALL leaves RSP 8 off alignment. The regular frame pushes RBP plus the
  // saved registers; the instrumented one has already popped the return
  // address, so the parity flips.
  const bool instrumented = kind == FrameKind::ReturnStack;
  const std::size_t pushes = regs.size() + (instrumented ? 0 : 1) + 1;
  const std::int64_t frame = L + (pushes % 2 == 1 ? 8 : 0);

  Emission e;
  if (instrumented) {
    e.prologue.push_back(ins(Op::POPQ, {O::mem(Reg::R15)}));
    e.prologue.push_back(ins(Op::LEA, {O::mem(Reg::R15, 8), O::r(Reg::R15)}));
  }
  e.prologue.push_back(ins(Op::PUSH, {O::r(Reg::RBP)}));
  e.prologue.push_back(ins(Op::MOV, {O::r(Reg::RSP), O::r(Reg::RBP)}));
  for (Reg r : regs) e.prologue.push_back(ins(Op::PUSH, {O::r(r)}));
  e.prologue.push_back(ins(Op::SUB, {O::i(frame), O::r(Reg::RSP)}));

  e.epilogue.push_back(ins(Op::ADD, {O::i(frame), O::r(Reg::RSP)}));
  for (auto it = regs.rbegin(); it != regs.rend(); ++it)
    e.epilogue.push_back(ins(Op::POP, {O::r(*it)}));
  e.epilogue.push_back(ins(Op::POP, {O::r(Reg::RBP)}));
  if (instrumented) {
    e.epilogue.push_back(ins(Op::LEA, {O::mem(Reg::R15, -8), O::r(Reg::R15)}));
    e.epilogue.push_back(ins(Op::JMPQ, {O::mem(Reg::R15, 0, Indexing::Offset, true)}));
  } else {
    e.epilogue.push_back(ins(Op::RETQ));
  }
  return e;
}

// Stores `regs` from [SP, #base] upward, two per STP, a trailing STR for an
// odd count. Loads come back in the reverse order.
void store_list(const std::vector<Reg>& regs, std::int64_t base, std::vector<Instr>& st,
                std::vector<Instr>& ld) {
  std::vector<Instr> loads;
  std::size_t i = 0;
  for (; i + 1 < regs.size(); i += 2) {
    const auto off = O::mem(Reg::SP, base + 8 * static_cast<std::int64_t>(i));
    st.push_back(ins(Op::STP, {O::r(regs[i]), O::r(regs[i + 1]), off}));
    loads.push_back(ins(Op::LDP, {O::r(regs[i]), O::r(regs[i + 1]), off}));
  }
  if (i < regs.size()) {
    const auto off = O::mem(Reg::SP, base + 8 * static_cast<std::int64_t>(i));
    st.push_back(ins(Op::STR, {O::r(regs[i]), off}));
    loads.push_back(ins(Op::LDR, {O::r(regs[i]), off}));
  }
  ld.insert(ld.end(), loads.rbegin(), loads.rend());
}

Emission emit_arm(const FuncDesc& f, FrameKind kind) {
  const auto regs = saved_registers(ArchName::ARM64, f.spills, kind);
  const auto L = static_cast<std::int64_t>(f.locals);
  const auto n = static_cast<std::int64_t>(regs.size());
  const O sp = O::r(Reg::SP);
  Emission e;

  if (kind != FrameKind::ReturnStack) {
    const std::int64_t F = L + roundup16(8 * (n + 2));
    const std::int64_t rec = F - 16;
    e.prologue.push_back(ins(Op::SUB, {sp, sp, O::i(F)}));
    std::vector<Instr> loads;
    store_list(regs, L, e.prologue, loads);
    e.prologue.push_back(ins(Op::STP, {O::r(Reg::FP), O::r(Reg::LR), O::mem(Reg::SP, rec)}));
    e.prologue.push_back(ins(Op::ADD, {O::r(Reg::FP), sp, O::i(rec)}));

    e.epilogue.push_back(ins(Op::LDP, {O::r(Reg::FP), O::r(Reg::LR), O::mem(Reg::SP, rec)}));
    e.epilogue.insert(e.epilogue.end(), loads.begin(), loads.end());
    e.epilogue.push_back(ins(Op::ADD, {sp, sp, O::i(F)}));
    e.epilogue.push_back(ins(Op::RET));
    return e;
  }

  // LR goes to the return stack, so FP joins the callee-saved list and no
  // longer needs a pair slot of its own.
  auto list = regs;
  list.push_back(Reg::FP);
  const std::int64_t F = L + roundup16(8 * (n + 1));
  e.prologue.push_back(ins(Op::STR, {O::r(Reg::LR), O::mem(Reg::X28, 8, Indexing::Post)}));
  e.prologue.push_back(ins(Op::SUB, {sp, sp, O::i(F)}));
  std::vector<Instr> loads;
  store_list(list, L, e.prologue, loads);
  e.prologue.push_back(ins(Op::ADD, {O::r(Reg::FP), sp, O::i(L + 8 * n)}));

  e.epilogue = loads;
  e.epilogue.push_back(ins(Op::LDR, {O::r(Reg::LR), O::mem(Reg::X28, -8, Indexing::Pre)}));
  e.epilogue.push_back(ins(Op::ADD, {sp, sp, O::i(F)}));
  e.epilogue.push_back(ins(Op::RET));
  return e;
}

}  // namespace

FrameKind frame_kind(Scheme scheme, Libs libs, const FuncDesc& f) {
  if (scheme != Scheme::ReturnStack) return FrameKind::Regular;
  if (!f.library || libs == Libs::Secure) return FrameKind::ReturnStack;
  return libs == Libs::Aware ? FrameKind::Regular : FrameKind::Compatible;
}

std::vector<Instr> Emission::listing() const {
  std::vector<Instr> out = prologue;
  out.push_back(Instr::body());
  out.insert(out.end(), epilogue.begin(), epilogue.end());
  return out;
}

unsigned max_spills(ArchName arch) {
  return arch == ArchName::X86_64 ? std::size(kX86Callee) : std::size(kArmCallee);
}

std::vector<Reg> saved_registers(ArchName arch, unsigned spills, FrameKind kind) {
  if (spills > max_spills(arch))
    throw EmitError("unsupported frame shape: " + std::to_string(spills) +
                    " callee-saved spills (at most " + std::to_string(max_spills(arch)) + ")");
  std::vector<Reg> regs;
  if (kind == FrameKind::Compatible) regs.push_back(dedicated_register(arch));
  const Reg* pool = arch == ArchName::X86_64 ? kX86Callee : kArmCallee;
  regs.insert(regs.end(), pool, pool + spills);
  return regs;
}

Emission emit_frame(ArchName arch, const FuncDesc& f, FrameKind kind) {
  if (f.locals % 16 != 0)
    throw EmitError("unsupported frame shape: locals of " + std::to_string(f.locals) +
                    " bytes are not a multiple of 16");
  return arch == ArchName::X86_64 ? emit_x86(f, kind) : emit_arm(f, kind);
}

int overhead_law(ArchName arch, unsigned spills) {
  if (arch == ArchName::X86_64) return 3;
  return spills % 2 == 1 ? 0 : 2;
}

}  // namespace lrds
