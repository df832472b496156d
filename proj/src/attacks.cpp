#include "lrds/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lrds {

namespace {

bool inside(std::span<const AddrRange> rs, Addr a) {
  return std::any_of(rs.begin(), rs.end(), [a](const AddrRange& r) { return r.contains(a); });
}

std::string pow2(unsigned e) { return "2^" + std::to_string(e); }

std::string entropy_pair(unsigned a, unsigned b) {
  return a == b ? std::to_string(a) : std::to_string(a) + "/" + std::to_string(b);
}

}  // namespace

SchemeLayout SchemeLayout::of(Scheme s, ArchName arch) {
  const LayoutConfig lc = LayoutConfig::defaults(arch);
  const Arch a = Arch::of(arch);
  SchemeLayout l;
  l.scheme = s;
  if (s == Scheme::ReturnStack) {
    l.main_entropy = l.child_entropy = log2_exact(kRegionPages);
    l.stack_pages_log2 = log2_exact(kReturnStackPages);
    l.return_addresses_only = true;
    l.thread_signature = {{kStackPages, false}};
    return l;
  }
  l.main_entropy = lc.stack_offset.entropy(a);
  l.child_entropy = lc.mmap_offset.entropy(a);
  l.stack_pages_log2 = log2_exact(kStackPages);
  const bool hidden = s != Scheme::Regular;
  l.tcb_leak = l.setjmp_spill = l.unwind_spill = hidden;
  l.return_addresses_only = s == Scheme::AGStackStyle;
  l.thread_signature = {{kStackPages, hidden}};
  return l;
}

unsigned effective_entropy(unsigned placement_bits, unsigned size_pages_log2) {
  if (size_pages_log2 > placement_bits)
    throw std::invalid_argument("object larger than its placement range");
  return placement_bits - size_pages_log2;
}

std::optional<Word> AttackerView::read(Addr a) {
  ++probes_;
  auto w = space_.read(a);
  if (!w) ++faults_;
  return w;
}

std::optional<PageSnapshot> AttackerView::read_page(Addr a) {
  ++probes_;
  auto p = space_.read_page(a);
  if (!p) ++faults_;
  return p;
}

bool AttackerView::probe(Addr a) {
  ++probes_;
  return space_.write_probe(a) == ProbeResult::Readable;
}

bool AttackerView::eap(std::uint64_t pages) {
  ++oracle_calls_;
  if (pages == 0) return true;
  try {
    const Addr b = space_.map(pages, Permission::rw(), Zone::MmapSpace, 0, {}, "attacker-eap");
    space_.unmap(b, pages);
    return true;
  } catch (const MapError&) {
    return false;
  }
}

std::optional<Addr> AttackerView::pap(std::uint64_t pages) {
  ++oracle_calls_;
  try {
    return space_.map(pages, Permission::rw(), Zone::MmapSpace, 0, {}, "attacker-pap");
  } catch (const MapError&) {
    return std::nullopt;
  }
}

nlohmann::ordered_json AttackReport::to_json() const {
  nlohmann::ordered_json j;
  j["schema"] = 1;
  j["scheme"] = to_string(scheme);
  j["attack"] = strategy;
  j["trials"] = trials;
  j["mean"] = empirical_mean_probes;
  j["stddev"] = stddev;
  j["success_rate"] = success_rate;
  j["success"] = success;
  j["probes_issued"] = probes_issued;
  j["faults"] = faults;
  j["false_positives"] = false_positives;
  j["oracle_invocations"] = oracle_invocations;
  j["localized"] = localized;
  auto& d = j["disclosed"] = nlohmann::ordered_json::array();
  for (Addr a : disclosed) d.push_back(hex(a));
  if (!holes.empty()) {
    auto& h = j["holes"] = nlohmann::ordered_json::array();
    for (const auto& x : holes) h.push_back({{"base", hex(x.base)}, {"pages", x.pages}});
  }
  return j;
}

AttackReport scan_pointer_leaks(const AddressSpace& space, std::span<const AddrRange> targets) {
  std::vector<Addr> pages;
  for (Addr p : kernels::readable_pages(space))
    if (!inside(targets, p)) pages.push_back(p);
  const auto hits = kernels::scan_values_parallel(space, pages, targets);
  AttackReport r;
  r.strategy = "leak";
  r.probes_issued = pages.size();
  for (const auto& h : hits) r.disclosed.push_back(h.value);
  r.localized = hits.size();
  r.success = !hits.empty();
  r.success_rate = r.success ? 1 : 0;
  return r;
}

std::string_view to_string(ProbeStrategy s) {
  return s == ProbeStrategy::Linear ? "linear" : "uniform-random";
}

AttackReport brute_force_probe(AttackerView& view, AddrRange zone, const ProbeOptions& opt,
                               std::span<const AddrRange> truth, Rng& rng) {
  const std::uint64_t ps = view.arch().page_size();
  const std::uint64_t pages = (zone.hi - zone.lo) / ps;
  AttackReport r;
  r.strategy = opt.signature ? "spray" : "probe";
  const std::uint64_t before = view.probes();
  const std::uint64_t stride = std::max<std::uint64_t>(1, opt.stride_pages);
  std::uint64_t next = opt.strategy == ProbeStrategy::Linear ? rng.below(stride) : 0;
  for (std::uint64_t i = 0; i < opt.max_probes; ++i) {
    std::uint64_t idx;
    if (opt.strategy == ProbeStrategy::UniformRandom) {
      idx = rng.below(pages);
    } else {
      if (next >= pages) break;
      idx = next;
      next += stride;
    }
    const Addr page = zone.lo + idx * ps;
    bool hit;
    if (opt.signature) {
      const auto snap = view.read_page(page);
      hit = snap && snap->contains_value(kSpraySignature);
    } else {
      hit = view.probe(page);
    }
    if (!hit) continue;
    if (inside(truth, page)) {
      r.success = true;
      r.disclosed.push_back(page);
      r.localized = 1;
      break;
    }
    ++r.false_positives;
  }
  r.probes_issued = view.probes() - before;
  r.faults = view.faults();
  r.empirical_mean_probes = static_cast<double>(r.probes_issued);
  r.success_rate = r.success ? 1 : 0;
  return r;
}

double analytic_mean_probes(const ProbeCampaign& c) {
  const double zone = std::ldexp(1.0, static_cast<int>(c.bits));  // in units of one stack
  const double mean = zone / c.threads;
  return c.strategy == ProbeStrategy::Linear ? mean / 2 : mean;
}

AttackReport run_probe_campaign(const ProbeCampaign& c) {
  if (c.trials == 0) throw std::invalid_argument("a campaign needs at least one trial");
  if (c.threads == 0) throw std::invalid_argument("need at least one thread");
  const std::uint64_t budget =
      c.max_probes ? c.max_probes : static_cast<std::uint64_t>(64 * analytic_mean_probes(c)) + 64;
  const bool rs = c.scheme == Scheme::ReturnStack;
  auto trial = [&](std::uint64_t i) {
    Rng rng = Rng::derive(c.seed, i);
    ProbeLayout pl = build_probe_layout(c.scheme, c.bits, c.threads, c.stack_spray, rng);
    AttackerView view(pl.space);
    ProbeOptions opt;
    opt.strategy = c.strategy;
    opt.signature = c.stack_spray;
    opt.max_probes = budget;
    opt.stride_pages = rs ? kReturnStackPages : kStackPages;
    return brute_force_probe(view, pl.zone, opt, pl.hidden, rng);
  };
  const auto runs = c.parallel ? kernels::run_trials_parallel(c.trials, trial)
                               : kernels::run_trials_serial(c.trials, trial);
  AttackReport r;
  r.strategy = c.stack_spray ? "spray" : "probe";
  r.scheme = c.scheme;
  r.trials = c.trials;
  double sum = 0, sq = 0;
  std::uint64_t wins = 0;
  for (const auto& t : runs) {
    const double p = static_cast<double>(t.probes_issued);
    sum += p;
    sq += p * p;
    r.probes_issued += t.probes_issued;
    r.faults += t.faults;
    r.false_positives += t.false_positives;
    if (t.success) {
      ++wins;
      r.disclosed.insert(r.disclosed.end(), t.disclosed.begin(), t.disclosed.end());
    }
  }
  const double n = static_cast<double>(c.trials);
  r.empirical_mean_probes = sum / n;
  r.stddev = c.trials > 1 ? std::sqrt(std::max(0.0, (sq - sum * sum / n) / (n - 1))) : 0;
  r.localized = wins;
  r.success_rate = static_cast<double>(wins) / n;
  r.success = wins > 0;
  return r;
}

std::uint64_t largest_hole(AttackerView& view, std::uint64_t eap_max) {
  std::uint64_t lo = 0, hi = eap_max + 1;  // eap(lo) holds, eap(hi) is assumed not to
  while (hi - lo > 1) {
    const std::uint64_t mid = lo + (hi - lo) / 2;
    if (view.eap(mid))
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

AttackReport allocation_oracle_attack(AttackerView& view, std::uint64_t eap_max,
                                      std::uint64_t pap_budget, const SchemeLayout& scheme,
                                      std::span<const AddrRange> truth) {
  AttackReport r;
  r.strategy = "oracle";
  r.scheme = scheme.scheme;
  const std::uint64_t ps = view.arch().page_size();
  while (r.holes.size() < pap_budget) {
    const std::uint64_t h = largest_hole(view, eap_max);
    if (h == 0) break;
    const auto base = view.pap(h);
    if (!base) break;
    r.holes.push_back({*base, h});
  }
  auto holes = r.holes;
  std::sort(holes.begin(), holes.end(), [](const Hole& a, const Hole& b) { return a.base < b.base; });

  std::uint64_t sig_pages = 0;
  for (const auto& c : scheme.thread_signature) sig_pages += c.pages;
  std::vector<AddrRange> claims;
  for (std::size_t i = 0; i + 1 < holes.size() && sig_pages; ++i) {
    const Addr lo = holes[i].base + holes[i].pages * ps;
    const Addr hi = holes[i + 1].base;
    if (hi <= lo) continue;
    const std::uint64_t pages = (hi - lo) / ps;
    if (pages % sig_pages != 0) continue;
    Addr cur = hi;
    for (std::uint64_t t = 0; t < pages / sig_pages; ++t) {
      for (const auto& c : scheme.thread_signature) {
        cur -= c.pages * ps;
        if (c.hidden) claims.push_back({cur, cur + c.pages * ps});
      }
    }
  }
  for (const auto& c : claims) {
    r.disclosed.push_back(c.lo);
    if (std::find(truth.begin(), truth.end(), c) != truth.end()) ++r.localized;
  }
  r.success = !claims.empty() && r.localized == claims.size();
  r.success_rate = r.success ? 1 : 0;
  r.oracle_invocations = view.oracle_calls();
  r.probes_issued = view.probes();
  return r;
}

AttackReport adjacency_attack(AttackerView& view, Addr anchor, AddrRange known_code,
                              std::uint64_t max_pages, std::span<const AddrRange> truth) {
  AttackReport r;
  r.strategy = "adjacency";
  const std::uint64_t ps = view.arch().page_size();
  std::vector<Addr> claims;
  for (int dir : {-1, +1}) {
    Addr p = view.arch().page_floor(anchor);
    for (std::uint64_t i = 0; i < max_pages; ++i) {
      p = dir < 0 ? p - ps : p + ps;
      if (!view.probe(p)) break;
      const auto snap = view.read_page(p);
      if (!snap) break;
      bool code = known_code.contains(snap->fill.value) && snap->fill.tag != ContentTag::Zero;
      for (const auto& [a, w] : snap->words) code = code || known_code.contains(w.value);
      if (code) {
        claims.push_back(p);
        break;
      }
    }
  }
  for (Addr c : claims) {
    r.disclosed.push_back(c);
    if (inside(truth, c)) ++r.localized;
  }
  r.success = !claims.empty() && r.localized == claims.size();
  r.success_rate = r.success ? 1 : 0;
  r.probes_issued = view.probes();
  r.faults = view.faults();
  return r;
}

std::vector<MatrixRow> resilience_matrix(const MatrixOptions& opt) {
  std::vector<MatrixRow> rows;
  for (Scheme s : {Scheme::SafeStackStyle, Scheme::AGStackStyle, Scheme::ReturnStack}) {
    const SchemeLayout sl = SchemeLayout::of(s, opt.arch);
    MatrixRow row{};
    row.scheme = s;
    row.aslr_entropy = entropy_pair(sl.main_entropy, sl.child_entropy);
    row.max_size = pow2(sl.stack_pages_log2);
    row.effective_entropy = entropy_pair(effective_entropy(sl.main_entropy, sl.stack_pages_log2),
                                         effective_entropy(sl.child_entropy, sl.stack_pages_log2));
    row.hidden_pages_per_thread = std::uint64_t{1} << sl.stack_pages_log2;

    ScenarioConfig sc;
    sc.arch = opt.arch;
    sc.scheme = s;
    sc.seed = opt.seed;
    {
      Scenario v = build_scenario(sc);
      row.pointer_leaks = !scan_pointer_leaks(v.process->space(), v.hidden).success;
      AttackerView view(v.process->space());
      row.spatial_adjacency =
          !adjacency_attack(view, v.anchor, v.known_code, std::uint64_t{1} << 20, v.hidden).success;
    }
    {
      sc.transient_holes = true;
      Scenario v = build_scenario(sc);
      AttackerView view(v.process->space());
      row.allocation_oracles = !allocation_oracle_attack(view, v.process->space().arch().total_pages(),
                                                         64, sl, v.hidden)
                                    .success;
    }

    ProbeCampaign pc;
    pc.scheme = s;
    pc.bits = opt.bits;
    pc.trials = opt.trials;
    pc.seed = opt.seed;
    pc.parallel = opt.parallel;
    const double alone = run_probe_campaign(pc).empirical_mean_probes;
    pc.threads = opt.threads_sprayed;
    const double sprayed = run_probe_campaign(pc).empirical_mean_probes;
    row.spray_gain = alone / sprayed;
    // Resilient only if spawning threads buys the attacker nothing.
    row.thread_spraying = row.spray_gain < 2.0;

    pc.threads = 1;
    pc.stack_spray = true;
    pc.trials = std::min<std::uint64_t>(opt.trials, 20);
    row.stack_spraying = !run_probe_campaign(pc).success;
    rows.push_back(row);
  }
  return rows;
}

namespace {

std::string_view scheme_title(Scheme s) {
  switch (s) {
    case Scheme::SafeStackStyle: return "SafeStack";
    case Scheme::AGStackStyle: return "AG-Stack";
    case Scheme::ReturnStack: return "ReturnStack";
    case Scheme::Regular: return "Regular";
  }
  return "?";
}

std::size_t display_width(const std::string& s) {
  // Count UTF-8 lead bytes.
  return std::count_if(s.begin(), s.end(), [](char c) { return (c & 0xC0) != 0x80; });
}

std::string pad(const std::string& s, std::size_t w) {
  return s + std::string(w > display_width(s) ? w - display_width(s) : 0, ' ');
}

std::string mark(bool resilient) { return resilient ? "✓" : "✗"; }

}  // namespace

std::string render_matrix(const std::vector<MatrixRow>& rows) {
  std::vector<std::pair<std::string, std::vector<std::string>>> lines = {
      {"Pointer Leaks", {}},      {"ASLR Entropy", {}},     {"Max. Size", {}},
      {"Effective Entropy", {}},  {"Spatial Adjacency", {}}, {"Thread Spraying", {}},
      {"Stack Spraying", {}},     {"Allocation Oracles", {}},
  };
  for (const auto& r : rows) {
    lines[0].second.push_back(mark(r.pointer_leaks));
    lines[1].second.push_back(r.aslr_entropy);
    lines[2].second.push_back(r.max_size);
    lines[3].second.push_back(r.effective_entropy);
    lines[4].second.push_back(mark(r.spatial_adjacency));
    lines[5].second.push_back(mark(r.thread_spraying));
    lines[6].second.push_back(mark(r.stack_spraying));
    lines[7].second.push_back(mark(r.allocation_oracles));
  }
  constexpr std::size_t kFirst = 20, kCol = 13;
  std::string out = pad("", kFirst);
  for (const auto& r : rows) out += pad(std::string(scheme_title(r.scheme)), kCol);
  while (!out.empty() && out.back() == ' ') out.pop_back();
  out += '\n';
  for (const auto& [name, cells] : lines) {
    std::string line = pad(name, kFirst);
    for (const auto& c : cells) line += pad(c, kCol);
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + '\n';
  }
  return out;
}

nlohmann::ordered_json matrix_json(const std::vector<MatrixRow>& rows, const MatrixOptions& opt) {
  nlohmann::ordered_json j;
  j["schema"] = 1;
  j["arch"] = to_string(opt.arch);
  j["seed"] = opt.seed;
  j["scaled_bits"] = opt.bits;
  j["trials"] = opt.trials;
  j["threads_sprayed"] = opt.threads_sprayed;
  auto& rs = j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json o;
    o["scheme"] = to_string(r.scheme);
    o["pointer_leaks"] = r.pointer_leaks;
    o["aslr_entropy"] = r.aslr_entropy;
    o["max_size"] = r.max_size;
    o["effective_entropy"] = r.effective_entropy;
    o["spatial_adjacency"] = r.spatial_adjacency;
    o["thread_spraying"] = r.thread_spraying;
    o["stack_spraying"] = r.stack_spraying;
    o["allocation_oracles"] = r.allocation_oracles;
    o["thread_spray_gain"] = r.spray_gain;
    o["hidden_pages_per_thread"] = r.hidden_pages_per_thread;
    rs.push_back(o);
  }
  return j;
}

}  // namespace lrds
