// Acceptance run: one PASS/FAIL line per criterion. Exit status is zero iff
// every checkable criterion passes.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "experiments.hpp"
#include "lrds/asm_parser.hpp"
#include "lrds/attacks.hpp"
#include "lrds/codegen.hpp"
#include "lrds/rewriter.hpp"
#include "lrds/serialize.hpp"

using namespace lrds;

namespace {

// Tolerances and sizes.
constexpr double kProbeTolerance = 0.10;
constexpr std::uint64_t kProbeTrials = 2000;
constexpr int kCorpus = 1000;
constexpr int kMatrixSeeds = 10;
constexpr int kExploitTrees = 100;
constexpr std::uint64_t kRegionOps = 10000;
constexpr double kAlpha = 0.01;
constexpr int kScenarios = 1000;

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::vector<std::string> tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (ch == ' ' || ch == '\t' || ch == '\n' || ch == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int n, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > limit_s) {
    o.pass = false;
    o.detail += " (over the time limit)";
  }
  if (!o.pass) ++failures;
  std::printf("criterion %d: %s  %s  [%.2f s]\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
  std::fflush(stdout);
}

Outcome c1_entropy() {
  const std::vector<unsigned> want_x86{22, 28, 13, 28}, want_arm{18, 18, 18, 18};
  std::ostringstream d;
  bool ok = true;
  for (auto arch : {ArchName::X86_64, ArchName::ARM64}) {
    const auto t = entropy_table(LayoutConfig::defaults(arch));
    const auto& want = arch == ArchName::X86_64 ? want_x86 : want_arm;
    ok &= t.size() == want.size();
    for (std::size_t i = 0; i < t.size() && i < want.size(); ++i) {
      const unsigned e = t[i]["entropy"];
      ok &= e == want[i];
      d << e << (i + 1 < t.size() ? "/" : " ");
    }
  }
  return {ok, "entropies " + d.str()};
}

Outcome c2_effective_entropy() {
  bool ok = effective_entropy(22, 11) == 11 && effective_entropy(28, 11) == 17 &&
            effective_entropy(32, 3) == 29;
  std::ostringstream d;
  d << "11/17/29 " << (ok ? "exact" : "WRONG") << "; mean/2^bits:";
  for (unsigned bits : {12u, 14u, 16u}) {
    ProbeCampaign c;
    c.scheme = Scheme::SafeStackStyle;
    c.bits = bits;
    c.trials = kProbeTrials;
    c.seed = 100 + bits;
    const double ratio = run_probe_campaign(c).empirical_mean_probes / std::ldexp(1.0, static_cast<int>(bits));
    ok &= std::abs(ratio - 1) < kProbeTolerance;
    char buf[32];
    std::snprintf(buf, sizeof buf, " %u:%.3f", bits, ratio);
    d << buf;
  }
  d << " (" << kProbeTrials << " trials each)";
  return {ok, d.str()};
}

Outcome c3_listings() {
  const FuncDesc canonical{"f", 1, 64, {}, false};
  const std::string dir = LRDS_GOLDEN_DIR;
  bool ok = true;
  int matched = 0;
  for (auto arch : {ArchName::X86_64, ArchName::ARM64})
    for (auto s : {Scheme::Regular, Scheme::ReturnStack}) {
      const std::string name = std::string("listing_") + (arch == ArchName::X86_64 ? "x86" : "arm64") +
                               (s == Scheme::Regular ? "_regular.s" : "_returnstack.s");
      const bool same = tokens(print(emit(arch, canonical, s).listing(), arch)) == tokens(slurp(dir + "/" + name));
      ok &= same;
      matched += same;
    }
  // Corpus of regular-frame functions with known shapes. Expected growth:
  // three instructions on x86-64; on ARM64 nothing for an odd spill count,
  // two for an even one.
  Rng rng(2024);
  int law_ok = 0, total = 0;
  for (auto arch : {ArchName::X86_64, ArchName::ARM64}) {
    std::vector<AsmFunction> corpus;
    std::vector<unsigned> spills;
    for (int i = 0; i < kCorpus; ++i) {
      FuncDesc d{"fn" + std::to_string(i), static_cast<unsigned>(rng.below(max_spills(arch) + 1)),
                 16 * rng.below(32), {}, false};
      spills.push_back(d.spills);
      AsmFunction f{d.name, arch, emit(arch, d, Scheme::Regular).listing(), {}, {}};
      f.find_spans();
      corpus.push_back(f);
    }
    const auto text = print_asm(corpus);
    const auto r = rewrite(parse_asm(text, arch), arch, Scheme::ReturnStack);
    for (int i = 0; i < kCorpus; ++i) {
      const long want = arch == ArchName::X86_64 ? 3 : (spills[i] % 2 == 0 ? 2 : 0);
      const long grew = static_cast<long>(r.funcs[i].body.size()) - static_cast<long>(corpus[i].body.size());
      law_ok += r.report.entries[i].delta == want && grew == want;
      ++total;
    }
  }
  ok &= law_ok == total;
  return {ok, std::to_string(matched) + "/4 listings token-identical; " + std::to_string(law_ok) + "/" +
                  std::to_string(total) + " corpus deltas follow +3 / 0,+2"};
}

Outcome c4_matrix() {
  using V = std::vector<bool>;
  int good = 0;
  for (int seed = 1; seed <= kMatrixSeeds; ++seed) {
    MatrixOptions o;
    o.seed = static_cast<std::uint64_t>(seed);
    const auto rows = resilience_matrix(o);
    auto col = [&](bool MatrixRow::*f) { return V{rows[0].*f, rows[1].*f, rows[2].*f}; };
    good += rows.size() == 3 && col(&MatrixRow::pointer_leaks) == V{false, false, true} &&
            col(&MatrixRow::spatial_adjacency) == V{false, false, true} &&
            col(&MatrixRow::thread_spraying) == V{false, false, false} &&
            col(&MatrixRow::stack_spraying) == V{false, true, true} &&
            col(&MatrixRow::allocation_oracles) == V{false, false, true} &&
            rows[0].effective_entropy == "11/17" && rows[1].effective_entropy == "11/17" &&
            rows[2].effective_entropy == "29";
  }
  return {good == kMatrixSeeds, std::to_string(good) + "/" + std::to_string(kMatrixSeeds) + " seeds match"};
}

Outcome c5_oracle() {
  ScenarioConfig cfg{ArchName::X86_64, Scheme::ReturnStack, Libs::Secure, 1};
  cfg.transient_holes = true;
  cfg.children = 7;
  auto rs = build_scenario(cfg);
  const auto total = rs.process->space().arch().total_pages();
  AttackerView v1(rs.process->space());
  const auto a = allocation_oracle_attack(v1, total, 64, SchemeLayout::of(Scheme::ReturnStack), rs.hidden);

  cfg.scheme = Scheme::SafeStackStyle;
  auto ss = build_scenario(cfg);
  AttackerView v2(ss.process->space());
  const auto b = allocation_oracle_attack(v2, total, 64, SchemeLayout::of(Scheme::SafeStackStyle), ss.hidden);
  // Children only: the main thread's safe stack is not in the mmap zone.
  std::set<Addr> child_bases;
  for (std::size_t i = 1; i < ss.hidden.size(); ++i) child_bases.insert(ss.hidden[i].lo);
  std::uint64_t child_hits = 0;
  for (Addr d : b.disclosed) child_hits += child_bases.count(d);

  int exact = 0;
  for (unsigned k = 1; k <= 20; ++k) {
    const std::uint64_t size = std::uint64_t{1} << k, zone = std::uint64_t{1} << 22;
    Rng rng(k);
    AddressSpace s = test::holed_space(zone, {{rng.below(zone - size), size}});
    AttackerView view(s);
    exact += largest_hole(view, (size << 1) - 1) == size && view.oracle_calls() <= k + 1;
  }
  const bool ok = rs.hidden.size() == 8 && a.localized == 0 && b.success && child_hits == child_bases.size() &&
                  exact == 20;
  return {ok, "ReturnStack localized " + std::to_string(a.localized) + "/" + std::to_string(rs.hidden.size()) +
                  "; SafeStack children " + std::to_string(child_hits) + "/" +
                  std::to_string(child_bases.size()) + "; hole search exact " + std::to_string(exact) + "/20"};
}

Outcome c6_exploit() {
  std::ostringstream d;
  bool ok = true;
  for (auto arch : {ArchName::X86_64, ArchName::ARM64}) {
    const auto s = test::exploit_differential(arch, kExploitTrees, 6);
    ok &= s.regular_hijacked == s.trees && s.protected_held == s.trees;
    d << to_string(arch) << ": hijacked " << s.regular_hijacked << "/" << s.trees << " regular, held "
      << s.protected_held << "/" << s.trees << " protected; ";
  }
  return {ok, d.str()};
}

Outcome c7_metadata() {
  const auto r = test::region_metadata_check(kRegionOps, kRegionOps, 7);
  const bool ok = r.sweep_matches && r.separated && r.extent_fixed && r.chi_p > kAlpha;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%llu ops, peak %llu live, sweep %s, separated %s, chi-squared p=%.3f",
                static_cast<unsigned long long>(r.ops), static_cast<unsigned long long>(r.live_peak),
                r.sweep_matches ? "exact" : "WRONG", r.separated ? "yes" : "NO", r.chi_p);
  return {ok, buf};
}

Outcome c8_setjmp_unwind() {
  int sj = 0, uw = 0, mixed = 0;
  for (int i = 0; i < kScenarios; ++i) {
    sj += test::setjmp_scenario(static_cast<std::uint64_t>(i));
    const auto u = test::unwind_scenario(static_cast<std::uint64_t>(i));
    uw += u.ok;
    mixed += u.mixed && u.ok;
  }
  const bool ok = sj == kScenarios && uw == kScenarios && mixed > 0;
  return {ok, "setjmp/longjmp " + std::to_string(sj) + "/" + std::to_string(kScenarios) + ", unwind " +
                  std::to_string(uw) + "/" + std::to_string(kScenarios) + " (" + std::to_string(mixed) +
                  " mixed)"};
}

}  // namespace

int main() {
  criterion(1, 1, c1_entropy);
  criterion(2, 300, c2_effective_entropy);
  criterion(3, 300, c3_listings);
  criterion(4, 600, c4_matrix);
  criterion(5, 300, c5_oracle);
  criterion(6, 300, c6_exploit);
  criterion(7, 300, c7_metadata);
  criterion(8, 300, c8_setjmp_unwind);
  std::printf(
      "criterion 9: NOT REPRODUCIBLE AT DESK SCALE  runtime overheads and benchmark call depths need a "
      "real compiler pass and benchmark suites; covered instead by criteria 3 and 6 and the call-depth "
      "property tests\n");
  return failures == 0 ? 0 : 1;
}
