#include "lrds/scenario.hpp"

namespace lrds {

namespace {

// Runs the calls of `entry` up to the first return, leaving the thread
// parked in the deepest frame of the first call chain.
void park(MachineState& m, const Program& p, std::size_t entry) {
  for (const auto& e : flatten(p, entry)) {
    if (e.kind == Event::Kind::Return) break;
    apply(m, p, e);
  }
}

constexpr Addr kProbeZoneBase = Addr{1} << 44;
constexpr Addr kProbeCodeBase = 0x400000;

}  // namespace

Program workload_program() {
  Program p;
  p.funcs = {
      {"main", 1, 64, {"parse", "run"}, false},
      {"parse", 2, 32, {"lib_memcpy"}, false},
      {"lib_memcpy", 1, 0, {}, true},
      {"run", 3, 48, {"lib_qsort"}, false},
      {"lib_qsort", 2, 16, {"cmp"}, true},
      {"cmp", 0, 0, {}, false},
      {"worker", 1, 64, {"run"}, false},
  };
  return p;
}

Scenario build_scenario(const ScenarioConfig& cfg) {
  const MemoryLayout layout = create_layout(LayoutConfig::defaults(cfg.arch), cfg.seed);
  RegionParams rp;
  rp.size_pages = cfg.region_pages;
  Scenario s;
  s.process = std::make_unique<Process>(layout, cfg.scheme, cfg.libs, rp, cfg.seed);
  s.program = workload_program();
  Process& proc = *s.process;
  Rng rng = Rng::derive(cfg.seed, 0xA110C);

  if (cfg.workload) park(proc.main_thread().state, s.program, s.program.index("main"));
  for (unsigned i = 0; i < cfg.children; ++i) {
    std::optional<Addr> transient;
    const std::uint64_t tpages = 1 + rng.below(64);
    if (cfg.transient_holes)
      transient = proc.space().map(tpages, Permission::rw(), Zone::MmapSpace, 0, {}, "transient");
    Thread& t = proc.spawn_thread();
    if (transient) proc.space().unmap(*transient, tpages);
    if (cfg.workload) park(t.state, s.program, s.program.index("worker"));
  }
  if (cfg.workload) {
    MachineState& m = proc.main_thread().state;
    const Addr ctx = proc.heap_alloc(64);
    unwind(m, unwind_directives(m, 1), ctx);
    const bool safe = cfg.scheme == Scheme::ReturnStack && cfg.libs != Libs::Compatible;
    const Addr buf = proc.heap_alloc(jmpbuf_bytes(layout.arch.name, safe, true));
    if (safe)
      safe_setjmp(m, buf);
    else
      setjmp(m, buf);
  }
  s.hidden = proc.hidden_ranges();
  s.known_code = {layout.code_base, layout.code_end()};
  s.anchor = proc.libc_base();
  return s;
}

ProbeLayout build_probe_layout(Scheme scheme, unsigned bits, unsigned threads, bool spray,
                               Rng& rng) {
  const Arch arch = Arch::x86_64();
  const std::uint64_t ps = arch.page_size();
  const bool rs = scheme == Scheme::ReturnStack;
  const unsigned s = rs ? log2_exact(kReturnStackPages) : log2_exact(kStackPages);
  if (bits + s + arch.page_shift > 45)
    throw std::invalid_argument("scaled entropy of " + std::to_string(bits) + " bits is too large");
  if (threads == 0) throw std::invalid_argument("need at least one thread");
  const std::uint64_t zone_pages = std::uint64_t{1} << (bits + s);

  ZoneConfig z;
  z.mmap_floor = kProbeZoneBase - (kStackPages + 16) * ps;
  z.mmap_top = kProbeZoneBase + zone_pages * ps;
  z.heap_base = 0x10000000;
  z.heap_limit = 0x20000000;
  ProbeLayout out{AddressSpace(arch, z), {kProbeZoneBase, z.mmap_top}, {}, 0};
  AddressSpace& sp = out.space;
  sp.map(16, Permission::r(), Zone::Fixed, kProbeCodeBase, {}, "code");
  sp.add_code_segment(kProbeCodeBase, kProbeCodeBase + 16 * ps);
  const Word ret{ContentTag::ReturnAddress, kProbeCodeBase + 0x48};
  const Word sig{ContentTag::Data, kSpraySignature};

  if (rs) {
    const RegionHandle region = init_region(sp, {zone_pages, kReturnStackPages, kGuardPages});
    for (unsigned i = 0; i < threads; ++i) {
      const StackHandle st = create_stack(sp, region, rng);
      sp.fill(st.base, kReturnStackPages, ret);
      out.hidden.push_back({st.base, st.base + kReturnStackPages * ps});
    }
    out.hidden_pages = std::uint64_t{threads} * kReturnStackPages;
    // The attacker's data still exists; it just sits on the unsafe stack.
    if (spray)
      sp.map(kStackPages, Permission::rw(), Zone::MmapSpace, 0, sig, "unsafe-stack");
    return out;
  }

  const std::uint64_t run = std::uint64_t{threads} * kStackPages;
  const std::uint64_t spare = spray ? kStackPages : 0;
  if (run + spare > zone_pages)
    throw std::invalid_argument(std::to_string(threads) + " stacks do not fit the zone");
  const std::uint64_t off = rng.below(zone_pages - run - spare + 1);
  const Addr lo = kProbeZoneBase + off * ps;
  const Word content = scheme == Scheme::SafeStackStyle && spray ? sig : ret;
  for (unsigned i = 0; i < threads; ++i) {
    const Addr b = lo + i * kStackPages * ps;
    sp.map(kStackPages, Permission::rw(), Zone::Fixed, b, content, "safe-stack");
    out.hidden.push_back({b, b + kStackPages * ps});
  }
  out.hidden_pages = run;
  if (spray) {
    // Unsafe stack in whichever end of the zone the hidden run left free.
    const Addr u = off >= kStackPages ? kProbeZoneBase : lo + run * ps;
    sp.map(kStackPages, Permission::rw(), Zone::Fixed, u, sig, "unsafe-stack");
  }
  return out;
}

}  // namespace lrds
