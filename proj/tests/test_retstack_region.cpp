#include <doctest.h>

#include <set>

#include "lrds/retstack_region.hpp"
#include "lrds/serialize.hpp"
#include "oracles.hpp"

using namespace lrds;

namespace {

struct Fixture {
  AddressSpace space{Arch::x86_64(), test::small_zones()};
  RegionHandle region;
  Rng rng{21};

  explicit Fixture(std::uint64_t pages) {
    RegionParams p;
    p.size_pages = pages;
    region = init_region(space, p);
  }

  std::uint64_t readable() const {
    const auto v = kernels::probe_sweep_serial(space, region.base, region.size_pages);
    return static_cast<std::uint64_t>(std::count(v.begin(), v.end(), 1));
  }

  std::vector<std::pair<Addr, Addr>> intervals(const std::vector<StackHandle>& live) const {
    std::vector<std::pair<Addr, Addr>> iv;
    for (const auto& h : live) iv.emplace_back(h.base, h.base + region.stack_pages * 4096);
    return iv;
  }
};

}  // namespace

TEST_SUITE("retstack_region") {
  TEST_CASE("effective entropy formula") {
    CHECK(RegionParams{}.effective_entropy() == 29);
    CHECK(RegionParams{std::uint64_t{1} << 20, 8, 1}.effective_entropy() == 17);
    CHECK(RegionParams{}.size_pages * 4096 == std::uint64_t{1} << 44);
  }

  TEST_CASE("capacity") {
    CHECK(capacity(RegionParams{}) == 477218588);
    CHECK(capacity(RegionParams{}) == ((std::uint64_t{1} << 32) - 1) / 9);
    CHECK(capacity(RegionParams{10, 8, 1}) == 1);
    // Greedy packing: guard, stack, guard, stack, ... guard.
    for (std::uint64_t size = 0; size <= 200; ++size) {
      std::uint64_t pos = 1, n = 0;
      while (pos + 8 + 1 <= size) {
        ++n;
        pos += 9;
      }
      CHECK(capacity(RegionParams{size, 8, 1}) == n);
    }
  }

  TEST_CASE("full-size region maps as one no-access range") {
    AddressSpace s(Arch::x86_64(), ZoneConfig{Addr{1} << 40, Addr{1} << 46, Addr{1} << 20,
                                              Addr{1} << 40});
    const auto r = init_region(s);
    const auto range = s.find(r.base);
    REQUIRE(range);
    CHECK(range->pages == std::uint64_t{1} << 32);
    CHECK(range->perm == Permission::none());
    CHECK(s.range_count() == 1);
  }

  TEST_CASE("a fresh scaled region has no readable page") {
    Fixture f(1 << 16);
    CHECK(f.readable() == 0);
  }

  TEST_CASE("first creation needs one candidate") {
    Fixture f(1 << 12);
    CreateStats st;
    const auto h = create_stack(f.space, f.region, f.rng, &st);
    CHECK(st.candidates == 1);
    CHECK(st.probes == 10);
    CHECK(h.top == h.base);
    CHECK(f.space.arch().page_aligned(h.base));
    CHECK(h.base > f.region.base);
    CHECK(h.base + 8 * 4096 < f.region.end(f.space.arch()));
    CHECK(f.readable() == 8);
  }

  TEST_CASE("two stacks are disjoint and separated") {
    Fixture f(1 << 12);
    std::vector<StackHandle> live{create_stack(f.space, f.region, f.rng),
                                  create_stack(f.space, f.region, f.rng)};
    CHECK(test::pairwise_disjoint(f.intervals(live)));
    CHECK(test::min_gap(f.intervals(live)) >= 4096);
  }

  TEST_CASE("fill a 2^10-page region until creation fails") {
    Fixture f(1 << 10);
    std::vector<StackHandle> live;
    try {
      for (;;) live.push_back(create_stack(f.space, f.region, f.rng));
    } catch (const RegionError& e) {
      CHECK(e.kind() == RegionError::Kind::RetryBudgetExhausted);
    }
    CHECK(live.size() >= (((1u << 10) - 1) / 9) / 2);
    CHECK(live.size() <= capacity(f.region));
    CHECK(test::pairwise_disjoint(f.intervals(live)));
    CHECK(test::min_gap(f.intervals(live)) >= 4096);
  }

  TEST_CASE("destroy") {
    Fixture f(1 << 12);
    const auto h = create_stack(f.space, f.region, f.rng);
    f.space.write(h.base, {ContentTag::ReturnAddress, 1});
    destroy_stack(f.space, f.region, h);
    CHECK(f.readable() == 0);
    CHECK(f.space.access(h.base, AccessKind::Read).fault);
    try {
      destroy_stack(f.space, f.region, h);
      FAIL("double destroy not detected");
    } catch (const RegionError& e) {
      CHECK(e.kind() == RegionError::Kind::DoubleDestroy);
    }
    CHECK_THROWS_AS(destroy_stack(f.space, f.region, StackHandle{f.region.base - 4096 * 16, 0}),
                    RegionError);
  }

  TEST_CASE("create A, B; destroy A; create C") {
    Fixture f(64);
    for (int rep = 0; rep < 50; ++rep) {
      const auto a = create_stack(f.space, f.region, f.rng);
      const auto b = create_stack(f.space, f.region, f.rng);
      destroy_stack(f.space, f.region, a);
      const auto c = create_stack(f.space, f.region, f.rng);
      const std::vector<StackHandle> live{b, c};
      CHECK(test::pairwise_disjoint(f.intervals(live)));
      CHECK(test::min_gap(f.intervals(live)) >= 4096);
      destroy_stack(f.space, f.region, b);
      destroy_stack(f.space, f.region, c);
    }
  }

  TEST_CASE("random create/destroy: sweep equals live set, region extent fixed") {
    Fixture f(1 << 12);
    const auto extent = f.space.find(f.region.base);
    std::vector<StackHandle> live;
    Rng ops(4);
    for (int i = 0; i < 3000; ++i) {
      if (live.empty() || (live.size() < 150 && ops.below(2))) {
        live.push_back(create_stack(f.space, f.region, f.rng));
      } else {
        const std::size_t k = ops.below(live.size());
        destroy_stack(f.space, f.region, live[k]);
        live.erase(live.begin() + static_cast<std::ptrdiff_t>(k));
      }
      if (i % 250 == 0) {
        std::vector<Addr> want;
        for (const auto& h : live) want.push_back(h.base);
        std::sort(want.begin(), want.end());
        CHECK(sweep_live_stacks(f.space, f.region) == want);
        CHECK(test::min_gap(f.intervals(live)) >= 4096);
      }
    }
    // Only permissions changed: the region is still covered end to end.
    CHECK(f.space.fully_mapped(f.region.base, f.region.size_pages));
    CHECK(extent->base == f.region.base);
    // The serialized space mentions stack bases only as range boundaries.
    const auto j = to_json(f.space);
    CHECK(j["words"].empty());
  }
}
