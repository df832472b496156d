#include "cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lrds/asm_parser.hpp"
#include "lrds/attacks.hpp"
#include "lrds/layout.hpp"
#include "lrds/machine.hpp"
#include "lrds/rewriter.hpp"
#include "lrds/scenario.hpp"
#include "lrds/serialize.hpp"

namespace lrds {

namespace {

using ojson = nlohmann::ordered_json;

struct RunConfig {
  std::string arch = "x86-64";
  std::string scheme = "returnstack";
  std::string libs = "secure";
  std::uint64_t seed = 1;
  unsigned scaled_bits = 14;
  std::uint64_t trials = 200;
  unsigned threads_sprayed = 1;
  std::string format = "json";
  std::string out;
  bool no_pie = false;

  std::string strategy = "leak";
  std::string input;
  std::string report;
  std::string entry = "main";
  unsigned chain = 0;

  // Parsed forms.
  ArchName arch_v = ArchName::X86_64;
  Scheme scheme_v = Scheme::ReturnStack;
  Libs libs_v = Libs::Secure;
};

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

void validate(RunConfig& c) {
  try {
    c.arch_v = parse_arch(c.arch);
    c.scheme_v = parse_scheme(c.scheme);
    c.libs_v = parse_libs(c.libs);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (c.format != "json" && c.format != "text") throw UsageError("--format must be text or json");
  if (c.trials == 0) throw UsageError("--trials must be positive");
  if (c.threads_sprayed == 0) throw UsageError("--threads-sprayed must be positive");
  if (c.scaled_bits < 1 || c.scaled_bits > 24) throw UsageError("--scaled-bits must be in 1..24");
}

void emit(const RunConfig& c, const std::string& text, std::ostream& out) {
  if (c.out.empty()) {
    out << text;
    return;
  }
  std::ofstream f(c.out, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + c.out);
  f << text;
}

std::string dump(const ojson& j) { return j.dump(2) + "\n"; }

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string cmd_layout(const RunConfig& c) {
  LayoutConfig lc = LayoutConfig::defaults(c.arch_v);
  lc.pie = !c.no_pie;
  const MemoryLayout l = create_layout(lc, c.seed);
  const auto table = entropy_table(lc);
  if (c.format == "json") {
    ojson j;
    j["schema"] = kSchemaVersion;
    j["layout"] = ojson::parse(to_json(l).dump());
    j["entropy"] = ojson::parse(table.dump());
    return dump(j);
  }
  std::ostringstream s;
  s << "arch " << to_string(c.arch_v) << "  seed " << c.seed << "  pie " << (lc.pie ? "yes" : "no")
    << "\n"
    << "code  " << hex(l.code_base) << "\nheap  " << hex(l.heap_base) << "\nmmap  "
    << hex(l.mmap_base) << "\nstack " << hex(l.stack_base) << "\n\n"
    << "offset        interval                bits  entropy\n";
  for (const auto& row : table) {
    const std::string name = row["name"];
    const std::string iv = row["interval"];
    s << name << std::string(name.size() < 14 ? 14 - name.size() : 1, ' ') << iv
      << std::string(iv.size() < 24 ? 24 - iv.size() : 1, ' ') << row["bits"].get<unsigned>()
      << "    " << row["entropy"].get<unsigned>() << "\n";
  }
  return s.str();
}

AttackReport attack_report(const RunConfig& c) {
  const SchemeLayout sl = SchemeLayout::of(c.scheme_v, c.arch_v);
  ScenarioConfig sc;
  sc.arch = c.arch_v;
  sc.scheme = c.scheme_v;
  sc.libs = c.libs_v;
  sc.seed = c.seed;
  AttackReport r;
  if (c.strategy == "leak") {
    Scenario v = build_scenario(sc);
    r = scan_pointer_leaks(v.process->space(), v.hidden);
  } else if (c.strategy == "adjacency") {
    Scenario v = build_scenario(sc);
    AttackerView view(v.process->space());
    r = adjacency_attack(view, v.anchor, v.known_code, std::uint64_t{1} << 20, v.hidden);
  } else if (c.strategy == "oracle") {
    sc.transient_holes = true;
    Scenario v = build_scenario(sc);
    AttackerView view(v.process->space());
    r = allocation_oracle_attack(view, v.process->space().arch().total_pages(), 64, sl, v.hidden);
  } else if (c.strategy == "probe" || c.strategy == "spray") {
    if (c.scheme_v == Scheme::Regular)
      throw UsageError("probing needs a scheme with hidden stacks");
    ProbeCampaign pc;
    pc.scheme = c.scheme_v;
    pc.bits = c.scaled_bits;
    pc.trials = c.trials;
    pc.threads = c.threads_sprayed;
    pc.stack_spray = c.strategy == "spray";
    pc.seed = c.seed;
    r = run_probe_campaign(pc);
  } else {
    throw UsageError("unknown strategy '" + c.strategy + "'");
  }
  r.scheme = c.scheme_v;
  return r;
}

std::string cmd_attack(const RunConfig& c) {
  const AttackReport r = attack_report(c);
  ojson j = r.to_json();
  j["arch"] = to_string(c.arch_v);
  j["libs"] = to_string(c.libs_v);
  j["seed"] = c.seed;
  if (c.strategy == "probe" || c.strategy == "spray") {
    ProbeCampaign pc;
    pc.bits = c.scaled_bits;
    pc.threads = c.threads_sprayed;
    j["scaled_bits"] = c.scaled_bits;
    j["threads_sprayed"] = c.threads_sprayed;
    j["analytic_mean"] = analytic_mean_probes(pc);
  }
  if (c.format == "json") return dump(j);
  std::ostringstream s;
  s << r.strategy << " vs " << to_string(r.scheme) << ": " << (r.success ? "success" : "failure")
    << "\n  trials " << r.trials << ", mean probes " << r.empirical_mean_probes << ", success rate "
    << r.success_rate << "\n  probes " << r.probes_issued << ", oracle calls "
    << r.oracle_invocations << ", disclosed " << r.disclosed.size() << "\n";
  return s.str();
}

std::string cmd_rewrite(const RunConfig& c, std::ostream& err) {
  if (c.input.empty()) throw UsageError("rewrite needs an input file");
  const auto funcs = parse_asm(read_file(c.input), c.arch_v);
  const RewriteResult res = rewrite(funcs, c.arch_v, c.scheme_v);
  const ojson report = res.report.to_json();
  if (!c.report.empty()) {
    std::ofstream f(c.report, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + c.report);
    f << dump(report);
  }
  if (c.format == "json") {
    ojson j;
    j["schema"] = kSchemaVersion;
    j["output"] = print_asm(res.funcs);
    j["report"] = report;
    return dump(j);
  }
  if (c.report.empty()) err << dump(report);
  return print_asm(res.funcs);
}

Program program_from_json(const nlohmann::json& j) {
  Program p;
  for (const auto& f : j.at("funcs")) {
    FuncDesc d;
    d.name = f.at("name").get<std::string>();
    d.spills = f.value("spills", 0u);
    d.locals = f.value("locals", std::uint64_t{0});
    d.calls = f.value("calls", std::vector<std::string>{});
    d.library = f.value("library", false);
    p.funcs.push_back(std::move(d));
  }
  p.validate();
  return p;
}

std::string cmd_calldepth(const RunConfig& c) {
  Program p;
  if (c.chain > 0) {
    if (c.chain > kMaxFunctions) throw UsageError("--chain is limited to 255 functions");
    for (unsigned i = 0; i < c.chain; ++i) {
      FuncDesc d{"f" + std::to_string(i), 1, 64, {}, false};
      if (i + 1 < c.chain) d.calls.push_back("f" + std::to_string(i + 1));
      p.funcs.push_back(d);
    }
  } else {
    if (c.input.empty()) throw UsageError("calldepth needs a program file or --chain");
    p = program_from_json(nlohmann::json::parse(read_file(c.input)));
  }
  const std::string entry = c.chain > 0 ? "f0" : c.entry;
  const MemoryLayout l = create_layout(LayoutConfig::defaults(c.arch_v), c.seed);
  Process proc(l, c.scheme_v, c.libs_v, {}, c.seed);
  MachineState& m = proc.main_thread().state;
  const int depth = measure_call_depth(m, p, p.index(entry));
  ojson j;
  j["schema"] = kSchemaVersion;
  j["arch"] = to_string(c.arch_v);
  j["scheme"] = to_string(c.scheme_v);
  j["entry"] = entry;
  j["max_call_depth"] = depth;
  j["instructions"] = m.instructions;
  if (c.format == "json") return dump(j);
  return "max call depth " + std::to_string(depth) + "\n";
}

std::string cmd_matrix(const RunConfig& c) {
  MatrixOptions o;
  o.arch = c.arch_v;
  o.seed = c.seed;
  o.bits = c.scaled_bits;
  o.trials = c.trials;
  o.threads_sprayed = c.threads_sprayed;
  const auto rows = resilience_matrix(o);
  if (c.format == "json") return dump(matrix_json(rows, o));
  return render_matrix(rows);
}

void error_json(std::ostream& out, const std::string& kind, const std::string& msg) {
  ojson j;
  j["schema"] = kSchemaVersion;
  j["error"] = kind;
  j["message"] = msg;
  out << j.dump() << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Leak-resilient dual stack simulator"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value file; command-line flags override it");
  RunConfig c;

  // Options live on the top-level command so the flat config file can set
  // them; subcommands fall through to it.
  app.fallthrough();
  app.add_option("--arch", c.arch, "x86-64 or arm64")->capture_default_str();
  app.add_option("--scheme", c.scheme, "regular, safestack, agstack or returnstack")
      ->capture_default_str();
  app.add_option("--libs", c.libs, "secure, aware or compatible")->capture_default_str();
  app.add_option("--seed", c.seed, "seed for every random choice")->capture_default_str();
  app.add_option("--scaled-bits", c.scaled_bits, "effective entropy of scaled layouts")
      ->capture_default_str();
  app.add_option("--trials", c.trials, "Monte-Carlo trials")->capture_default_str();
  app.add_option("--threads-sprayed", c.threads_sprayed, "threads spawned by the attacker")
      ->capture_default_str();
  app.add_option("--format", c.format, "text or json")->capture_default_str();
  app.add_option("--out", c.out, "write the result here instead of stdout");
  app.add_option("--strategy", c.strategy, "attack: leak, probe, spray, oracle or adjacency")
      ->capture_default_str();
  app.add_option("--report", c.report, "rewrite: write the JSON report here");
  app.add_option("--entry", c.entry, "calldepth: entry function")->capture_default_str();
  app.add_option("--chain", c.chain, "calldepth: linear chain of N functions instead of a file");
  app.add_flag("--no-pie", c.no_pie, "layout: load the executable at its fixed base");

  auto* layout = app.add_subcommand("layout", "randomized memory layout and entropy table");
  auto* attack = app.add_subcommand("attack", "run one disclosure attack");
  auto* rw = app.add_subcommand("rewrite", "instrument prologues and epilogues of an assembly file");
  rw->add_option("input", c.input, "assembly file")->required();
  auto* matrix = app.add_subcommand("matrix", "resilience matrix of the dual stack schemes");
  auto* depth = app.add_subcommand("calldepth", "maximum call depth of a program");
  depth->add_option("input", c.input, "program as JSON {funcs:[{name,spills,locals,calls}]}");
  for (auto* sub : {layout, attack, rw, matrix, depth}) sub->fallthrough();

  // Matrix defaults differ from the single-attack ones.
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    error_json(out, "usage", e.what());
    return 2;
  }
  if (matrix->parsed()) {
    if (app.count("--scaled-bits") == 0) c.scaled_bits = 12;
    if (app.count("--threads-sprayed") == 0) c.threads_sprayed = 200;
  }

  try {
    validate(c);
    std::string text;
    if (layout->parsed()) text = cmd_layout(c);
    else if (attack->parsed()) text = cmd_attack(c);
    else if (rw->parsed()) text = cmd_rewrite(c, err);
    else if (matrix->parsed()) text = cmd_matrix(c);
    else text = cmd_calldepth(c);
    emit(c, text, out);
    return 0;
  } catch (const UsageError& e) {
    error_json(out, "usage", e.what());
    return 2;
  } catch (const ParseError& e) {
    error_json(out, "parse", e.what());
    return 1;
  } catch (const MachineFault& e) {
    error_json(out, "fault", e.what());
    return 1;
  } catch (const std::exception& e) {
    error_json(out, "runtime", e.what());
    return 1;
  }
}

}  // namespace lrds
