// Randomized experiments shared by the unit tests and the acceptance binary.
// Each one drives the library and judges it against an oracle kept here.
#pragma once

#include "lrds/retstack_region.hpp"
#include "lrds/scenario.hpp"
#include "oracles.hpp"

namespace lrds::test {

/// Return targets a correct run must take, derived from the events alone.
inline std::vector<Addr> shadow_returns(const CodeMap& code, const std::vector<Event>& events) {
  std::vector<Addr> stack, out;
  std::vector<std::size_t> fns;
  for (const auto& e : events) {
    if (e.kind == Event::Kind::Call) {
      stack.push_back(fns.empty() ? code.thread_start() : code.return_address(fns.back(), e.site));
      fns.push_back(e.fn);
    } else {
      out.push_back(stack.back());
      stack.pop_back();
      fns.pop_back();
    }
  }
  return out;
}

struct ExploitTrial {
  bool hijacked = false;   // some return went somewhere the shadow did not
  bool faulted = false;
  bool unchanged = false;  // return sequence identical to the shadow
};

/// One call tree, one attacker write just before a random return: the word
/// in the innermost frame's stack window that holds its return address, or
/// the top slot of that window if no such word exists.
inline ExploitTrial exploit_trial(ArchName arch, Scheme scheme, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 0xE4);
  const Program prog = random_program(rng, 2 + rng.below(14), arch == ArchName::X86_64 ? 4 : 9, false);
  const auto events = flatten(prog, 0);
  std::vector<std::size_t> returns;
  for (std::size_t i = 0; i < events.size(); ++i)
    if (events[i].kind == Event::Kind::Return) returns.push_back(i);
  const std::size_t at = returns[rng.below(returns.size())];

  Process proc(layout(arch, seed), scheme, Libs::Secure, RegionParams{1 << 16, 8, 1}, seed);
  MachineState& m = proc.main_thread().state;
  const auto shadow = shadow_returns(proc.code(), events);
  ExploitTrial t;
  try {
    for (std::size_t i = 0; i < at; ++i) apply(m, prog, events[i]);
    const Frame& f = m.frames.back();
    const Addr hi = f.regs_at_call[static_cast<std::size_t>(m.sp_reg())].value;
    Addr slot = hi - 8;
    for (Addr a = m.val(m.sp_reg()); a < hi; a += 8) {
      const auto w = proc.space().read(a);
      if (w && w->tag == ContentTag::ReturnAddress && w->value == f.expected_return) slot = a;
    }
    proc.space().write(slot, {ContentTag::CodePointer, proc.code().gadget()});
    for (std::size_t i = at; i < events.size(); ++i) apply(m, prog, events[i]);
  } catch (const MachineFault&) {
    t.faulted = true;
  }
  t.unchanged = !t.faulted && m.return_targets == shadow;
  t.hijacked = m.hijacks > 0;
  return t;
}

struct ExploitSummary {
  int trees = 0;
  int regular_hijacked = 0;
  int protected_held = 0;  // unchanged sequence or fault
};

inline ExploitSummary exploit_differential(ArchName arch, int trees, std::uint64_t seed) {
  ExploitSummary s;
  for (int i = 0; i < trees; ++i) {
    const std::uint64_t ts = seed * 1000 + static_cast<std::uint64_t>(i);
    ++s.trees;
    const auto r = exploit_trial(arch, Scheme::Regular, ts);
    s.regular_hijacked += r.hijacked && !r.unchanged;
    const auto p = exploit_trial(arch, Scheme::ReturnStack, ts);
    s.protected_held += (p.unchanged || p.faulted) && !p.hijacked;
  }
  return s;
}

/// Calls c0 -> c1 -> ... one level at a time on a chain program.
inline void descend(MachineState& m, const Program& chain_prog, std::size_t levels) {
  for (std::size_t i = 0; i < levels; ++i) exec_call(m, chain_prog, m.frames.size(), 0);
}

inline Program mixed_chain(Rng& rng, std::size_t n, ArchName arch, bool libraries) {
  Program p = chain(n);
  for (auto& f : p.funcs) {
    f.spills = static_cast<unsigned>(rng.below(max_spills(arch) + 1));
    f.locals = 16 * rng.below(6);
    f.library = libraries && rng.below(2) == 0;
  }
  return p;
}

/// setjmp at a random depth, longjmp from a random deeper one. Checks the
/// return-stack pointer against the value recorded at setjmp, then finishes
/// the run and checks every return target.
inline bool setjmp_scenario(std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 0x5E7);
  const ArchName arch = rng.below(2) ? ArchName::X86_64 : ArchName::ARM64;
  const Program p = mixed_chain(rng, 128, arch, false);
  Process proc(layout(arch, seed), Scheme::ReturnStack, Libs::Secure, RegionParams{1 << 16, 8, 1}, seed);
  MachineState& m = proc.main_thread().state;
  const std::size_t d1 = rng.below(41), d2 = rng.below(65);
  descend(m, p, d1);
  const Addr before = m.return_stack_pointer();
  const auto regs_before = m.regs;
  const Addr buf = proc.heap_alloc(jmpbuf_bytes(arch, true, false));
  const JmpBuf b = safe_setjmp(m, buf);
  if (b.marker <= m.arch.space_bytes()) return false;
  if (m.return_stack_pointer() != before + 8) return false;
  descend(m, p, d2);
  safe_longjmp(m, b);
  if (m.return_stack_pointer() != before + 8) return false;
  for (Reg r : jmpbuf_registers(arch, false))
    if (m.val(r) != regs_before[static_cast<std::size_t>(r)].value) return false;
  pop_marker(m, b);
  if (m.return_stack_pointer() != before) return false;
  const std::size_t targets_before = m.return_targets.size();
  for (std::size_t i = d1; i-- > 0;) exec_return(m);
  // Each frame returns to its caller's call site, the outermost to the stub.
  for (std::size_t i = 0; i < d1; ++i) {
    const std::size_t level = d1 - 1 - i;
    const Addr want = level == 0 ? m.code.thread_start() : m.code.return_address(level - 1, 0);
    if (m.return_targets[targets_before + i] != want) return false;
  }
  return m.hijacks == 0 && m.return_stack_pointer() == m.rs.base;
}

struct UnwindOutcome {
  bool ok = false;
  bool mixed = false;  // some discarded frame was uninstrumented
};

/// Unwinds k of d frames in a mixed instrumented/Compatible chain and compares
/// with replaying k ordinary returns on a copy of the machine.
inline UnwindOutcome unwind_scenario(std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 0x0DF);
  const ArchName arch = rng.below(2) ? ArchName::X86_64 : ArchName::ARM64;
  const Libs libs = rng.below(3) == 0 ? Libs::Secure : Libs::Compatible;
  const Program p = mixed_chain(rng, 96, arch, true);
  Process proc(layout(arch, seed), Scheme::ReturnStack, libs, RegionParams{1 << 16, 8, 1}, seed);
  MachineState& m = proc.main_thread().state;
  const std::size_t d = 1 + rng.below(80);
  const std::size_t k = 1 + rng.below(d);
  descend(m, p, d);

  MachineState replay = m;
  for (std::size_t i = 0; i < k; ++i) exec_return(replay);

  std::uint64_t instrumented = 0;
  for (std::size_t i = 0; i < k; ++i) instrumented += m.frames[d - 1 - i].kind == FrameKind::ReturnStack;
  UnwindOutcome out;
  out.mixed = instrumented != k;

  const Addr start = m.return_stack_pointer();
  const Addr ctx = proc.heap_alloc(16);
  const auto dirs = unwind_directives(m, k);
  const UnwindContext c = unwind(m, dirs, ctx);
  bool ok = c.accumulated_rsp_offset == 8 * instrumented && c.cursor == k &&
            start - m.return_stack_pointer() == 8 * instrumented &&
            m.return_stack_pointer() == replay.return_stack_pointer() &&
            m.val(m.sp_reg()) == replay.val(replay.sp_reg()) &&
            proc.space().read(ctx)->value == 8 * instrumented;
  for (Reg r : jmpbuf_registers(arch, false)) ok &= m.val(r) == replay.val(r);
  // The unwound machine carries on returning normally.
  while (!m.frames.empty()) exec_return(m);
  ok &= m.hijacks == 0 && m.return_stack_pointer() == m.rs.base;
  out.ok = ok;
  return out;
}

struct RegionCheck {
  bool sweep_matches = true;
  bool separated = true;
  bool extent_fixed = true;
  double chi_p = 0;
  std::uint64_t ops = 0;
  std::uint64_t live_peak = 0;
};

/// Random create/destroy on a 2^12-page region, then base uniformity from
/// `creations` creations each made into an otherwise empty region.
inline RegionCheck region_metadata_check(std::uint64_t ops, std::uint64_t creations, std::uint64_t seed) {
  RegionCheck out;
  AddressSpace space(Arch::x86_64(), small_zones());
  RegionParams params{1 << 12, 8, 1};
  const RegionHandle region = init_region(space, params);
  Rng rng(seed), pick = Rng::derive(seed, 1);
  std::vector<StackHandle> live;
  auto verify = [&] {
    std::vector<Addr> want;
    for (const auto& h : live) want.push_back(h.base);
    std::sort(want.begin(), want.end());
    out.sweep_matches &= sweep_live_stacks(space, region) == want;
    std::vector<std::pair<Addr, Addr>> iv;
    for (const auto& h : live) iv.emplace_back(h.base, h.base + 8 * 4096);
    out.separated &= pairwise_disjoint(iv) && (iv.size() < 2 || min_gap(iv) >= 4096);
    out.extent_fixed &= space.fully_mapped(region.base, region.size_pages);
  };
  for (std::uint64_t i = 0; i < ops; ++i) {
    if (live.empty() || (live.size() < 200 && pick.below(2))) {
      live.push_back(create_stack(space, region, rng));
    } else {
      const std::size_t k = pick.below(live.size());
      destroy_stack(space, region, live[k]);
      live.erase(live.begin() + static_cast<std::ptrdiff_t>(k));
    }
    out.live_peak = std::max<std::uint64_t>(out.live_peak, live.size());
    ++out.ops;
    if (i % 500 == 499) verify();
  }
  verify();
  for (const auto& h : live) destroy_stack(space, region, h);
  live.clear();

  // Feasible bases in an empty region: [base + guard, base + size - stack - guard].
  const std::uint64_t slots = params.size_pages - params.stack_pages - 2 * params.guard_pages + 1;
  const std::size_t bins = 64;
  std::vector<double> obs(bins, 0), weight(bins, 0);
  for (std::uint64_t s = 0; s < slots; ++s) weight[s * bins / slots] += 1;
  for (std::uint64_t i = 0; i < creations; ++i) {
    const auto h = create_stack(space, region, rng);
    const std::uint64_t s = (h.base - region.base) / 4096 - params.guard_pages;
    obs[s * bins / slots] += 1;
    destroy_stack(space, region, h);
  }
  out.chi_p = chi_squared_p(obs, weight);
  return out;
}

}  // namespace lrds::test
