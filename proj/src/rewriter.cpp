#include "lrds/rewriter.hpp"

#include <algorithm>

namespace lrds {

namespace {

constexpr FrameKind kKinds[] = {FrameKind::Regular, FrameKind::ReturnStack, FrameKind::Compatible};

// Frame-size immediate of the prologue's stack-pointer SUB.
std::optional<std::int64_t> frame_immediate(const std::vector<Instr>& pro, ArchName arch) {
  for (const auto& in : pro) {
    if (in.op != Op::SUB) continue;
    return arch == ArchName::X86_64 ? in.ops[0].imm : in.ops[2].imm;
  }
  return std::nullopt;
}

bool span_equals(const std::vector<Instr>& body, Span s, const std::vector<Instr>& want) {
  return s.size() == want.size() && std::equal(want.begin(), want.end(), body.begin() + s.begin);
}

FrameKind target_kind(Scheme s) {
  return s == Scheme::ReturnStack ? FrameKind::ReturnStack : FrameKind::Regular;
}

}  // namespace

std::optional<FrameMatch> recognize(const AsmFunction& f) {
  if (f.prologue.size() == 0) return std::nullopt;
  const std::vector<Instr> pro(f.body.begin(), f.body.begin() + f.prologue.end);
  const auto have = frame_immediate(pro, f.arch);
  if (!have) return std::nullopt;
  for (FrameKind k : kKinds) {
    for (unsigned n = 0; n <= max_spills(f.arch); ++n) {
      FuncDesc d{f.name, n, 0, {}, k == FrameKind::Compatible};
      const auto base = frame_immediate(emit_frame(f.arch, d, k).prologue, f.arch);
      const std::int64_t locals = *have - *base;
      if (locals < 0 || locals % 16 != 0) continue;
      d.locals = static_cast<std::uint64_t>(locals);
      const Emission e = emit_frame(f.arch, d, k);
      if (e.prologue != pro) continue;
      if (f.epilogues.empty()) continue;
      const bool all = std::all_of(f.epilogues.begin(), f.epilogues.end(),
                                   [&](Span s) { return span_equals(f.body, s, e.epilogue); });
      if (all) return FrameMatch{d, k};
    }
  }
  return std::nullopt;
}

nlohmann::ordered_json RewriteReport::to_json() const {
  nlohmann::ordered_json j;
  j["schema"] = 1;
  j["arch"] = to_string(arch);
  j["scheme"] = to_string(scheme);
  j["functions"] = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    nlohmann::ordered_json f;
    f["function"] = e.function;
    f["arch"] = to_string(arch);
    f["scheme"] = to_string(scheme);
    f["delta"] = e.delta;
    f["rewritten"] = e.rewritten;
    if (!e.reason.empty()) f["flag"] = e.reason;
    j["functions"].push_back(f);
  }
  return j;
}

RewriteResult rewrite(const std::vector<AsmFunction>& funcs, ArchName arch, Scheme scheme) {
  RewriteResult out;
  out.report.arch = arch;
  out.report.scheme = scheme;
  for (const auto& f : funcs) {
    if (f.arch != arch) throw std::invalid_argument("function '" + f.name + "' is for another ISA");
    RewriteEntry entry{f.name, false, 0, {}};
    const auto match = recognize(f);
    if (f.has_tail_call()) {
      entry.reason = "tail call";
    } else if (f.prologue.size() == 0) {
      entry.reason = "no frame setup";
    } else if (!match) {
      entry.reason = "unrecognized frame shape";
    } else if (match->kind == FrameKind::Compatible) {
      entry.reason = "spills the dedicated register";
    }
    if (!entry.reason.empty()) {
      out.funcs.push_back(f);
      out.report.entries.push_back(entry);
      continue;
    }
    const Emission e = emit_frame(arch, match->desc, target_kind(scheme));
    AsmFunction g{f.name, arch, {}, {}, {}};
    std::size_t at = 0;
    auto copy_until = [&](std::size_t end) {
      g.body.insert(g.body.end(), f.body.begin() + at, f.body.begin() + end);
    };
    g.body.insert(g.body.end(), e.prologue.begin(), e.prologue.end());
    at = f.prologue.end;
    for (const Span& s : f.epilogues) {
      copy_until(s.begin);
      g.body.insert(g.body.end(), e.epilogue.begin(), e.epilogue.end());
      at = s.end;
    }
    copy_until(f.body.size());
    g.find_spans();
    entry.rewritten = true;
    entry.delta = static_cast<int>(g.body.size()) - static_cast<int>(f.body.size());
    out.funcs.push_back(std::move(g));
    out.report.entries.push_back(entry);
  }
  return out;
}

AsmFunction random_function(ArchName arch, Rng& rng, const std::string& name) {
  FuncDesc d;
  d.name = name;
  d.spills = static_cast<unsigned>(rng.below(max_spills(arch) + 1));
  d.locals = 16 * rng.below(33);
  const Emission e = emit_frame(arch, d, FrameKind::Regular);
  AsmFunction f{name, arch, e.prologue, {}, {}};
  const auto pieces = 1 + rng.below(3);
  for (std::uint64_t i = 0; i < pieces; ++i) {
    f.body.push_back(Instr::body());
    if (rng.below(2) == 0) {
      const auto callee = "callee" + std::to_string(rng.below(100));
      f.body.push_back(
          Instr{arch == ArchName::X86_64 ? Op::CALL : Op::BL, {Operand::l(callee)}});
    }
  }
  f.body.push_back(Instr::body());
  f.body.insert(f.body.end(), e.epilogue.begin(), e.epilogue.end());
  f.find_spans();
  return f;
}

}  // namespace lrds
