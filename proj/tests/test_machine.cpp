#include <doctest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "experiments.hpp"
#include "lrds/attacks.hpp"

using namespace lrds;

namespace {

Program single(unsigned spills = 1, std::uint64_t locals = 64) {
  return Program{{FuncDesc{"f", spills, locals, {}, false}}};
}

/// Readable pages outside the hidden ranges that hold a value pointing into them.
std::size_t leaked_words(Process& p) {
  const auto targets = p.hidden_ranges();
  std::vector<Addr> pages;
  for (Addr a : kernels::readable_pages(p.space()))
    if (std::none_of(targets.begin(), targets.end(), [a](const AddrRange& r) { return r.contains(a); }))
      pages.push_back(a);
  return kernels::scan_values_serial(p.space(), pages, targets).size();
}

}  // namespace

TEST_SUITE("machine") {
  TEST_CASE("x86 instrumented call runs the 12-instruction listing") {
    Process proc(test::layout(ArchName::X86_64), Scheme::ReturnStack);
    MachineState& m = proc.main_thread().state;
    std::ostringstream trace;
    m.trace = &trace;
    const Addr r15 = m.return_stack_pointer();
    exec_call(m, single(), 0);
    CHECK(m.return_stack_pointer() == r15 + 8);
    CHECK(proc.space().read(r15)->value == m.code.thread_start());
    exec_return(m);
    CHECK(m.instructions == 12);
    CHECK(m.return_stack_pointer() == r15);
    CHECK(m.return_targets == std::vector<Addr>{m.code.thread_start()});

    std::vector<std::string> executed;
    std::istringstream lines(trace.str());
    for (std::string l; std::getline(lines, l);) executed.push_back(nlohmann::json::parse(l)["instr"]);
    REQUIRE(executed.size() == 13);
    CHECK(tokens(executed[0]) == tokens(" CALL   f"));
    std::string joined;
    for (std::size_t i = 1; i < executed.size(); ++i) joined += executed[i] + "\n";
    const auto listing = emit(ArchName::X86_64, FuncDesc{"f", 1, 64, {}, false}, Scheme::ReturnStack).listing();
    CHECK(tokens(joined) == tokens(print(listing, ArchName::X86_64)));
  }

  TEST_CASE("ARM instrumented prologue pushes LR and bumps X28 by 8") {
    Process proc(test::layout(ArchName::ARM64), Scheme::ReturnStack);
    MachineState& m = proc.main_thread().state;
    const Addr x28 = m.val(Reg::X28);
    exec_call(m, single(), 0);
    CHECK(m.val(Reg::X28) == x28 + 8);
    CHECK(proc.space().read(x28)->value == m.code.thread_start());
    CHECK(m.frames.back().emission.prologue.front() ==
          parse_instr("STR LR, [X28], #8", ArchName::ARM64));
    exec_return(m);
    CHECK(m.val(Reg::X28) == x28);
    CHECK(m.val(Reg::PC) == m.code.thread_start());
  }

  TEST_CASE("4097 nested calls overflow into the guard page") {
    for (auto arch : {ArchName::X86_64, ArchName::ARM64}) {
      Process proc(test::layout(arch), Scheme::ReturnStack);
      MachineState& m = proc.main_thread().state;
      const Program p = single(0, 0);
      for (int i = 0; i < 4096; ++i) exec_call(m, p, 0);
      CHECK(m.return_stack_pointer() == m.rs.limit);
      try {
        exec_call(m, p, 0);
        FAIL("no fault");
      } catch (const MachineFault& e) {
        CHECK(e.kind() == MachineFault::Kind::Guard);
        CHECK(e.addr() == m.rs.limit);
      }
    }
  }

  TEST_CASE("return with an empty return stack faults") {
    for (auto arch : {ArchName::X86_64, ArchName::ARM64}) {
      Process proc(test::layout(arch), Scheme::ReturnStack);
      try {
        exec_return(proc.main_thread().state);
        FAIL("no fault");
      } catch (const MachineFault& e) {
        CHECK(e.kind() == MachineFault::Kind::Guard);
      }
    }
  }

  TEST_CASE("call then return restores the pointer and lands after the call site") {
    for (auto arch : {ArchName::X86_64, ArchName::ARM64}) {
      Process proc(test::layout(arch), Scheme::ReturnStack);
      MachineState& m = proc.main_thread().state;
      const Program p{{FuncDesc{"a", 2, 32, {"b"}, false}, FuncDesc{"b", 1, 16, {}, false}}};
      exec_call(m, p, 0);
      const Addr before = m.return_stack_pointer();
      exec_call(m, p, 1, 0);
      exec_return(m);
      CHECK(m.return_stack_pointer() == before);
      CHECK(m.return_targets.back() == m.code.call_site(0, 0) + 8);
    }
  }

  TEST_CASE("exploit differential, 100 call trees per ISA") {
    for (auto arch : {ArchName::X86_64, ArchName::ARM64}) {
      const auto s = test::exploit_differential(arch, 100, 1);
      CHECK(s.regular_hijacked == 100);
      CHECK(s.protected_held == 100);
    }
  }

  TEST_CASE("random call trees return in reverse call order") {
    Rng rng(8);
    for (int t = 0; t < 60; ++t) {
      const auto arch = t % 2 ? ArchName::ARM64 : ArchName::X86_64;
      const auto scheme = t % 3 == 0 ? Scheme::Regular : Scheme::ReturnStack;
      const Program p = test::random_program(rng, 2 + rng.below(40), max_spills(arch), true, 2);
      const auto events = flatten(p, 0);
      Process proc(test::layout(arch, t), scheme, Libs::Secure, RegionParams{1 << 14, 8, 1}, t);
      MachineState& m = proc.main_thread().state;
      for (const auto& e : events) {
        apply(m, p, e);
        m.check_invariants();
      }
      CHECK(m.return_targets == test::shadow_returns(m.code, events));
      CHECK(m.call_depth == 0);
      CHECK(m.max_call_depth == test::tree_depth(p, 0));
    }
  }

  TEST_CASE("a 100-deep call tree") {
    Process proc(test::layout(ArchName::X86_64), Scheme::ReturnStack);
    MachineState& m = proc.main_thread().state;
    const Program p = test::chain(100);
    const auto events = flatten(p, 0);
    run(m, p, events);
    CHECK(m.return_targets == test::shadow_returns(m.code, events));
    CHECK(m.max_call_depth == 100);
  }

  TEST_CASE("Regular and ReturnStack emissions compute the same thing") {
    Rng rng(13);
    for (int t = 0; t < 40; ++t) {
      const auto arch = t % 2 ? ArchName::ARM64 : ArchName::X86_64;
      const Program p = test::random_program(rng, 2 + rng.below(20), max_spills(arch), false);
      const auto events = flatten(p, 0);
      Process a(test::layout(arch, t), Scheme::Regular);
      Process b(test::layout(arch, t), Scheme::ReturnStack);
      MachineState& ma = a.main_thread().state;
      MachineState& mb = b.main_thread().state;
      for (const auto& e : events) {
        apply(ma, p, e);
        apply(mb, p, e);
        for (std::size_t r = 0; r < kRegCount; ++r) {
          const Reg reg = static_cast<Reg>(r);
          if (reg == dedicated_register(arch) || !reg_belongs_to(reg, arch)) continue;
          // Frame layouts differ, so stack-relative registers only agree
          // once every frame is gone.
          if (!ma.frames.empty() && (reg == ma.sp_reg() || reg == frame_pointer(arch))) continue;
          CHECK(ma.regs[r].value == mb.regs[r].value);
        }
      }
      CHECK(ma.return_targets == mb.return_targets);
      CHECK(ma.flags == mb.flags);
      CHECK(ma.max_call_depth == mb.max_call_depth);
    }
  }

  TEST_CASE("RSP is 16-byte aligned at every call") {
    Rng rng(2);
    for (auto scheme : {Scheme::Regular, Scheme::ReturnStack}) {
      for (int t = 0; t < 30; ++t) {
        const Program p = test::random_program(rng, 2 + rng.below(20), 4, true);
        Process proc(test::layout(ArchName::X86_64, t), scheme, Libs::Compatible);
        CHECK_NOTHROW(run(proc.main_thread().state, p, flatten(p, 0)));
      }
    }
    Process proc(test::layout(ArchName::X86_64), Scheme::Regular);
    MachineState& m = proc.main_thread().state;
    m.set(Reg::RSP, m.val(Reg::RSP) - 8);
    try {
      exec_call(m, single(), 0);
      FAIL("no fault");
    } catch (const MachineFault& e) {
      CHECK(e.kind() == MachineFault::Kind::Alignment);
    }
  }

  TEST_CASE("return-stack addresses never reach readable memory") {
    // A scan after every executed instruction.
    for (auto arch : {ArchName::X86_64, ArchName::ARM64}) {
      Process proc(test::layout(arch), Scheme::ReturnStack, Libs::Secure, RegionParams{1 << 12, 8, 1});
      proc.spawn_thread();
      std::size_t hits = 0;
      test::LineHook hook([&] { hits += leaked_words(proc); });
      std::ostream trace(&hook);
      MachineState& m = proc.main_thread().state;
      m.trace = &trace;
      const Program p = workload_program();
      run(m, p, flatten(p, 0));
      CHECK(hook.lines > 50);
      CHECK(hits == 0);
    }
  }

  TEST_CASE("Compatible libraries spill the return-stack pointer") {
    for (auto arch : {ArchName::X86_64, ArchName::ARM64}) {
      Process proc(test::layout(arch), Scheme::ReturnStack, Libs::Compatible, RegionParams{1 << 12, 8, 1});
      const Program p{{FuncDesc{"app", 1, 0, {"lib"}, false}, FuncDesc{"lib", 1, 0, {}, true}}};
      MachineState& m = proc.main_thread().state;
      exec_call(m, p, 0);
      CHECK(leaked_words(proc) == 0);
      exec_call(m, p, 1);
      CHECK(leaked_words(proc) > 0);
    }
  }

  TEST_CASE("safe setjmp") {
    Process proc(test::layout(ArchName::X86_64), Scheme::ReturnStack);
    MachineState& m = proc.main_thread().state;
    const Program p = test::chain(8);
    test::descend(m, p, 3);
    const Addr buf = proc.heap_alloc(jmpbuf_bytes(ArchName::X86_64, true, false));
    const Addr before = m.return_stack_pointer();
    const JmpBuf b = safe_setjmp(m, buf);
    CHECK(b.marker >= std::uint64_t{1} << 47);
    CHECK(m.return_stack_pointer() == before + 8);
    const AddrRange rs{m.rs.base, m.rs.limit};
    for (std::uint64_t off = 0; off < jmpbuf_bytes(ArchName::X86_64, true, false); off += 8)
      CHECK_FALSE(rs.contains(proc.space().read(buf + off)->value));

    SUBCASE("five nested calls then longjmp") {
      test::descend(m, p, 5);
      safe_longjmp(m, b);
      CHECK(m.return_stack_pointer() == before + 8);
      CHECK(m.frames.size() == 3);
    }
    SUBCASE("no calls then longjmp") {
      safe_longjmp(m, b);
      CHECK(m.return_stack_pointer() == before + 8);
    }
    SUBCASE("reuse after the marker is popped faults") {
      pop_marker(m, b);
      CHECK(m.return_stack_pointer() == before);
      try {
        safe_longjmp(m, b);
        FAIL("no fault");
      } catch (const MachineFault& e) {
        CHECK(e.kind() == MachineFault::Kind::Corruption);
      }
    }
    SUBCASE("markers are unique") {
      const JmpBuf c = safe_setjmp(m, proc.heap_alloc(64));
      CHECK(c.marker != b.marker);
    }
  }

  TEST_CASE("baseline setjmp leaks the hidden stack pointer") {
    Process proc(test::layout(ArchName::X86_64), Scheme::SafeStackStyle);
    MachineState& m = proc.main_thread().state;
    test::descend(m, test::chain(4), 2);
    const Addr buf = proc.heap_alloc(jmpbuf_bytes(ArchName::X86_64, false, false));
    setjmp(m, buf);
    const auto regs = jmpbuf_registers(ArchName::X86_64, false);
    const auto i = static_cast<Addr>(std::find(regs.begin(), regs.end(), Reg::RSP) - regs.begin());
    CHECK(proc.space().read(buf + 8 * i)->value == m.val(Reg::RSP));
    const auto report = scan_pointer_leaks(proc.space(), proc.hidden_ranges());
    CHECK(std::find(report.disclosed.begin(), report.disclosed.end(), m.val(Reg::RSP)) !=
          report.disclosed.end());
  }

  TEST_CASE("randomized setjmp/longjmp against the recorded pointer") {
    for (std::uint64_t s = 0; s < 200; ++s) CHECK(test::setjmp_scenario(s));
  }

  TEST_CASE("unwinding") {
    Process proc(test::layout(ArchName::X86_64), Scheme::ReturnStack, Libs::Compatible);
    MachineState& m = proc.main_thread().state;
    Program p = test::chain(8);
    SUBCASE("three instrumented frames") {
      test::descend(m, p, 5);
      const Addr before = m.return_stack_pointer();
      const auto d = unwind_directives(m, 3);
      CHECK(d == std::vector<std::uint64_t>{8, 8, 8});
      unwind(m, d);
      CHECK(before - m.return_stack_pointer() == 24);
    }
    SUBCASE("two instrumented frames and one Compatible library frame") {
      p.funcs[3].library = true;
      test::descend(m, p, 5);
      const Addr before = m.return_stack_pointer();
      const auto d = unwind_directives(m, 3);
      CHECK(d == std::vector<std::uint64_t>{8, 0, 8});
      unwind(m, d);
      CHECK(before - m.return_stack_pointer() == 16);
    }
    SUBCASE("unwinding below the stack base faults") {
      test::descend(m, p, 2);
      CHECK_THROWS_AS(unwind(m, {8, 8, 8}), MachineFault);
      m.set(Reg::R15, m.rs.base + 8);
      try {
        unwind(m, {8, 8});
        FAIL("no fault");
      } catch (const MachineFault& e) {
        CHECK(e.kind() == MachineFault::Kind::Corruption);
      }
    }
  }

  TEST_CASE("randomized unwinds against replayed returns") {
    int mixed = 0;
    for (std::uint64_t s = 0; s < 200; ++s) {
      const auto r = test::unwind_scenario(s);
      CHECK(r.ok);
      mixed += r.mixed;
    }
    CHECK(mixed > 20);
  }

  TEST_CASE("unwind context holds the stack pointer outside ReturnStack") {
    Process proc(test::layout(ArchName::X86_64), Scheme::SafeStackStyle);
    MachineState& m = proc.main_thread().state;
    test::descend(m, test::chain(4), 3);
    const Addr sp = m.val(Reg::RSP);
    const Addr ctx = proc.heap_alloc(16);
    unwind(m, unwind_directives(m, 1), ctx);
    CHECK(proc.space().read(ctx)->value == sp);
  }

  TEST_CASE("threads") {
    SUBCASE("ReturnStack: nothing readable points at a return stack") {
      Process proc(test::layout(ArchName::X86_64), Scheme::ReturnStack);
      const Program p = workload_program();
      for (int i = 0; i < 4; ++i) proc.spawn_thread(p, p.index("worker"));
      CHECK(proc.hidden_ranges().size() == 5);
      CHECK(leaked_words(proc) == 0);
    }
    SUBCASE("SafeStackStyle: the TCB holds the safe-stack base") {
      Process proc(test::layout(ArchName::X86_64), Scheme::SafeStackStyle);
      Thread& t = proc.spawn_thread();
      CHECK(proc.space().read(t.tcb)->value == t.stack.lo);
      CHECK(t.unsafe_stack.has_value());
      CHECK(leaked_words(proc) > 0);
    }
    SUBCASE("200 SafeStackStyle threads form one contiguous run") {
      Process proc(test::layout(ArchName::X86_64), Scheme::SafeStackStyle);
      Addr lo = ~Addr{0}, hi = 0;
      for (int i = 0; i < 200; ++i) {
        const Thread& t = proc.spawn_thread();
        lo = std::min(lo, t.stack.lo);
        hi = std::max(hi, t.stack.hi);
      }
      CHECK(hi - lo == 200ULL * 2048 * 4096);
      const auto sweep = kernels::probe_sweep_parallel(proc.space(), lo, (hi - lo) / 4096);
      CHECK(std::all_of(sweep.begin(), sweep.end(), [](auto v) { return v == 1; }));
    }
    SUBCASE("exit returns the return stack to no-access") {
      Process proc(test::layout(ArchName::ARM64), Scheme::ReturnStack);
      Thread& t = proc.spawn_thread();
      const Addr base = t.retstack->base;
      proc.exit_thread(t.id);
      CHECK(proc.space().write_probe(base) == ProbeResult::NotReadable);
      CHECK(proc.hidden_ranges().size() == 1);
    }
  }

  TEST_CASE("call depth") {
    Process proc(test::layout(ArchName::X86_64), Scheme::ReturnStack);
    CHECK(measure_call_depth(proc.main_thread().state, test::chain(29), 0) == 29);
    Process one(test::layout(ArchName::X86_64), Scheme::ReturnStack);
    CHECK(measure_call_depth(one.main_thread().state, single(), 0) == 1);
    Rng rng(6);
    for (int t = 0; t < 50; ++t) {
      const Program p = test::random_program(rng, 1 + rng.below(60), 4, false);
      Process q(test::layout(ArchName::X86_64, t), Scheme::ReturnStack);
      CHECK(measure_call_depth(q.main_thread().state, p, 0) == test::tree_depth(p, 0));
    }
    Program rec{{FuncDesc{"r", 0, 0, {"r"}, false}}};
    CHECK_THROWS_AS(flatten(rec, 0), std::invalid_argument);
  }

  TEST_CASE("trace format is frozen") {
    Process proc(test::layout(ArchName::X86_64, 7), Scheme::ReturnStack);
    MachineState& m = proc.main_thread().state;
    std::ostringstream trace;
    m.trace = &trace;
    exec_call(m, single(), 0);
    exec_return(m);
    std::ifstream in(std::string(LRDS_GOLDEN_DIR) + "/trace_x86_returnstack.jsonl");
    REQUIRE(in.good());
    std::stringstream want;
    want << in.rdbuf();
    CHECK(trace.str() == want.str());
  }
}
