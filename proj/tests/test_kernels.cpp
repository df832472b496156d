#include <doctest.h>

#include "lrds/attacks.hpp"
#include "lrds/scenario.hpp"
#include "oracles.hpp"

using namespace lrds;

TEST_SUITE("kernels") {
  TEST_CASE("probe sweep: parallel equals serial") {
    Process p(test::layout(ArchName::X86_64), Scheme::ReturnStack, Libs::Secure,
              RegionParams{1 << 14, 8, 1}, 3);
    for (int i = 0; i < 40; ++i) p.spawn_thread();
    const auto& r = *p.region();
    CHECK(kernels::probe_sweep_serial(p.space(), r.base, r.size_pages) ==
          kernels::probe_sweep_parallel(p.space(), r.base, r.size_pages));
  }

  TEST_CASE("leak scan: parallel equals serial") {
    auto sc = build_scenario({ArchName::X86_64, Scheme::SafeStackStyle, Libs::Secure, 5});
    const auto pages = kernels::readable_pages(sc.process->space());
    const auto a = kernels::scan_values_serial(sc.process->space(), pages, sc.hidden);
    const auto b = kernels::scan_values_parallel(sc.process->space(), pages, sc.hidden);
    CHECK(a == b);
    CHECK_FALSE(a.empty());
  }

  TEST_CASE("trial loop: results indexed by trial") {
    auto f = [](std::uint64_t i) {
      Rng r = Rng::derive(9, i);
      return r.below(1000);
    };
    CHECK(kernels::run_trials_serial(500, f) == kernels::run_trials_parallel(500, f));
  }

  TEST_CASE("probe campaign does not depend on parallelism") {
    ProbeCampaign c;
    c.bits = 10;
    c.trials = 64;
    c.seed = 12;
    c.parallel = false;
    const auto s = run_probe_campaign(c);
    c.parallel = true;
    const auto p = run_probe_campaign(c);
    CHECK(s.empirical_mean_probes == p.empirical_mean_probes);
    CHECK(s.probes_issued == p.probes_issued);
    CHECK(s.success_rate == p.success_rate);
  }

  TEST_CASE("readable pages match the range map") {
    AddressSpace s(Arch::x86_64(), test::small_zones());
    s.map(3, Permission::rw(), Zone::MmapSpace);
    s.map(2, Permission::none(), Zone::MmapSpace);
    s.map(4, Permission::r(), Zone::Heap);
    CHECK(kernels::readable_pages(s).size() == 7);
  }
}
