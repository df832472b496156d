// Serial reference kernels against their OpenMP versions. With OMP_NUM_THREADS=1
// the pairs should run at the same speed; the gap is the parallel speedup.
#include <benchmark/benchmark.h>

#include "lrds/attacks.hpp"
#include "lrds/kernels.hpp"
#include "lrds/retstack_region.hpp"
#include "lrds/scenario.hpp"

namespace {

using namespace lrds;

struct RegionFixture {
  AddressSpace space;
  RegionHandle region;

  explicit RegionFixture(std::uint64_t pages, unsigned stacks)
      : space(Arch::x86_64(), ZoneConfig{Addr{1} << 40, (Addr{1} << 40) + pages * 4096 * 2,
                                         0x10000000, 0x20000000}) {
    region = init_region(space, {pages, kReturnStackPages, kGuardPages});
    Rng rng(7);
    for (unsigned i = 0; i < stacks; ++i) create_stack(space, region, rng);
  }
};

void BM_ProbeSweepSerial(benchmark::State& st) {
  RegionFixture f(std::uint64_t{1} << st.range(0), 64);
  for (auto _ : st)
    benchmark::DoNotOptimize(kernels::probe_sweep_serial(f.space, f.region.base, f.region.size_pages));
  st.SetItemsProcessed(st.iterations() * f.region.size_pages);
}

void BM_ProbeSweepParallel(benchmark::State& st) {
  RegionFixture f(std::uint64_t{1} << st.range(0), 64);
  for (auto _ : st)
    benchmark::DoNotOptimize(
        kernels::probe_sweep_parallel(f.space, f.region.base, f.region.size_pages));
  st.SetItemsProcessed(st.iterations() * f.region.size_pages);
}

template <bool Parallel>
void BM_LeakScan(benchmark::State& st) {
  ScenarioConfig sc;
  sc.scheme = Scheme::SafeStackStyle;
  sc.children = static_cast<unsigned>(st.range(0));
  Scenario v = build_scenario(sc);
  const auto pages = kernels::readable_pages(v.process->space());
  for (auto _ : st) {
    if constexpr (Parallel)
      benchmark::DoNotOptimize(kernels::scan_values_parallel(v.process->space(), pages, v.hidden));
    else
      benchmark::DoNotOptimize(kernels::scan_values_serial(v.process->space(), pages, v.hidden));
  }
  st.SetItemsProcessed(st.iterations() * pages.size());
}

template <bool Parallel>
void BM_ProbeCampaign(benchmark::State& st) {
  ProbeCampaign c;
  c.scheme = Scheme::SafeStackStyle;
  c.bits = static_cast<unsigned>(st.range(0));
  c.trials = 64;
  c.parallel = Parallel;
  for (auto _ : st) benchmark::DoNotOptimize(run_probe_campaign(c));
}

}  // namespace

BENCHMARK(BM_ProbeSweepSerial)->Arg(12)->Arg(16);
BENCHMARK(BM_ProbeSweepParallel)->Arg(12)->Arg(16);
BENCHMARK(BM_LeakScan<false>)->Arg(8)->Arg(64);
BENCHMARK(BM_LeakScan<true>)->Arg(8)->Arg(64);
BENCHMARK(BM_ProbeCampaign<false>)->Arg(10)->Arg(12)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ProbeCampaign<true>)->Arg(10)->Arg(12)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
