#include "taintvm/harness.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "taintvm/assembler.hpp"

namespace taintvm {

namespace {

std::string hex32(Word v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08X", v);
  return buf;
}

template <class Parse>
auto parse_file(const std::filesystem::path& path, Parse&& parse) {
  std::string text = read_text_file(path);
  try {
    return parse(text);
  } catch (const AssemblyError& e) {
    throw LoadError(path.string(), e.line(), "column " + std::to_string(e.column()) + ": " + e.message());
  } catch (const FormatError& e) {
    throw LoadError(path.string(), e.line(), e.message());
  }
}

bool halting(const AttackReport& r) { return r.severity != Severity::kShadow; }

void finish(RunResult& result, const MachineState& state) {
  result.output = state.output;
  result.fault = state.fault;
  result.exec_path = state.exec_path;
  result.exit_status = state.exit_status;
  result.steps = state.steps;
}

}  // namespace

std::string_view engine_name(EngineKind kind) {
  switch (kind) {
    case EngineKind::kObject: return "object";
    case EngineKind::kByte: return "byte";
    case EngineKind::kLockstep: return "lockstep";
  }
  return "?";
}

std::optional<EngineKind> parse_engine(std::string_view name) {
  for (auto k : {EngineKind::kObject, EngineKind::kByte, EngineKind::kLockstep})
    if (engine_name(k) == name) return k;
  return std::nullopt;
}

LoadError::LoadError(std::string file, int line, const std::string& message)
    : std::runtime_error(file + ":" + std::to_string(line) + ": " + message), file_(std::move(file)), line_(line) {}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(path.string(), 0, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Scenario load_scenario(const std::filesystem::path& program, const std::filesystem::path& objects,
                       const std::filesystem::path& policy, const std::optional<std::filesystem::path>& input) {
  Scenario s{parse_file(program, [](const std::string& t) { return assemble(t); }),
             parse_file(objects, [](const std::string& t) { return ObjectTable::parse(t); }),
             parse_file(policy, [](const std::string& t) { return PolicyConfig::parse(t); }),
             {}};
  if (input) s.input = parse_input_script(read_text_file(*input));
  return s;
}

int exit_code_for(const std::vector<AttackReport>& reports) {
  if (reports.empty()) return 0;
  Severity top = Severity::kShadow;
  for (const auto& r : reports) top = std::max(top, r.severity);
  return exit_code_for(top);
}

namespace {

std::optional<std::string> check_registers(const TaintEngine& engine, const ByteOracle& oracle) {
  for (int r = 0; r < kRegisterCount; ++r) {
    Reg reg = static_cast<Reg>(r);
    if (oracle.map().reg(reg) && !engine.reg_tag(reg))
      return "register " + std::string(reg_name(reg)) + " tainted in the byte oracle but not in the object engine";
  }
  return std::nullopt;
}

std::optional<std::string> check_byte(const TaintEngine& engine, Word addr) {
  const ObjectTable& table = engine.objects();
  ObjectHandle h = table.owner(addr);
  if (h == kNoObject) {
    if (!engine.tags().spill_read(addr))
      return "byte " + hex32(addr) + " tainted in the byte oracle; outside every object and spill bit is 0";
    return std::nullopt;
  }
  for (; h != kNoObject; h = table.live(h).parent) {
    if (!engine.object_tag(h))
      return "byte " + hex32(addr) + " tainted in the byte oracle; enclosing object " + table.describe(h) +
             " has tag 0";
  }
  return std::nullopt;
}

std::optional<std::string> check_range(const TaintEngine& engine, const ByteOracle& oracle, const Location& loc) {
  if (!loc.is_mem()) return std::nullopt;
  const std::uint64_t end = std::min<std::uint64_t>(static_cast<std::uint64_t>(loc.addr) + loc.len,
                                                    oracle.map().memory_size());
  for (std::uint64_t a = loc.addr; a < end; ++a) {
    if (!oracle.map().byte(static_cast<Word>(a))) continue;
    if (auto v = check_byte(engine, static_cast<Word>(a))) return v;
  }
  return std::nullopt;
}

}  // namespace

std::optional<std::string> find_superset_violation(const TaintEngine& engine, const ByteOracle& oracle) {
  if (auto v = check_registers(engine, oracle)) return v;
  const auto& words = oracle.map().words();
  for (std::size_t w = 0; w < words.size(); ++w) {
    std::uint64_t bits = words[w];
    while (bits) {
      int i = std::countr_zero(bits);
      bits &= bits - 1;
      if (auto v = check_byte(engine, static_cast<Word>(w * 64 + static_cast<std::size_t>(i)))) return v;
    }
  }
  return std::nullopt;
}

std::optional<std::string> find_superset_violation(const TaintEngine& engine, const ByteOracle& oracle,
                                                   const StepEvent& ev) {
  switch (ev.kind) {
    case EventKind::kCall:
    case EventKind::kRet:
    case EventKind::kAlloc:
    case EventKind::kFree:
      return find_superset_violation(engine, oracle);
    default:
      break;
  }
  if (auto v = check_registers(engine, oracle)) return v;
  if (auto v = check_range(engine, oracle, ev.dst)) return v;
  for (const Location& w : ev.format_writes)
    if (auto v = check_range(engine, oracle, w)) return v;
  return std::nullopt;
}

RunResult run(const Program& program, const ObjectTable& table, const PolicyConfig& policy,
              const std::vector<std::string>& input, const RunOptions& options) {
  RunResult result;
  MachineConfig mc;
  mc.layout = table.layout();
  mc.step_limit = options.step_limit;
  MachineState state = make_machine(program, input, mc);
  PolicyEngine checker(policy, program);

  std::unique_ptr<TaintEngine> object;
  std::unique_ptr<ByteOracle> byte;
  if (options.engine != EngineKind::kByte) object = std::make_unique<TaintEngine>(program, table, policy.engine_options());
  if (options.engine != EngineKind::kObject) {
    ByteOracleOptions bo;
    bo.untrusted = policy.untrusted;
    bo.provenance = options.engine == EngineKind::kByte;
    bo.track_objects = options.engine == EngineKind::kByte;
    byte = std::make_unique<ByteOracle>(program, table.layout().size, bo,
                                        bo.track_objects ? std::optional<ObjectTable>(table) : std::nullopt);
  }
  const TaintView& view = object ? static_cast<const TaintView&>(*object) : *byte;

  while (!state.halted) {
    if (state.steps >= options.step_limit) {
      result.step_limit_hit = true;
      break;
    }
    StepEvent ev = step(state, program);
    auto reports = checker.evaluate(view, ev);
    try {
      if (object) object->apply(ev);
    } catch (const TagSpaceExhausted& e) {
      state.fault = e.what();
      state.halted = true;
    }
    if (byte) byte->apply(ev);
    if (object && byte) {
      if (auto v = find_superset_violation(*object, *byte, ev)) {
        result.superset_violation = "step " + std::to_string(ev.step) + ": " + *v;
        break;
      }
    }
    bool stop = false;
    for (auto& r : reports) {
      stop = stop || halting(r);
      result.reports.push_back(std::move(r));
    }
    if (stop && options.halt_on_detect) {
      result.stopped_on_detect = true;
      break;
    }
  }

  finish(result, state);
  if (object) result.object_counters = object->counters();
  if (byte) result.byte_counters = byte->counters();
  if (options.dump_tags && object) result.tag_dump = object->tags().dump();
  result.exit_code = result.superset_violation ? 1 : exit_code_for(result.reports);
  return result;
}

std::vector<CorpusEntry> load_corpus(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<CorpusEntry> out;
  for (const auto& d : dirs) {
    Scenario s = load_scenario(d / "program.tasm", d / "objects.tbl", d / "policy.pol", std::nullopt);
    CorpusEntry entry{d.filename().string(), std::move(s.program), std::move(s.table), std::move(s.policy),
                      parse_input_script(read_text_file(d / "attack.in")),
                      parse_input_script(read_text_file(d / "benign.in")), Severity::kControl, ""};
    std::string expect = read_text_file(d / "expect");
    std::istringstream lines(expect);
    std::string key, value;
    int line = 0;
    while (lines >> key >> value) {
      ++line;
      if (key == "severity") {
        auto sev = parse_severity(value);
        if (!sev) throw LoadError((d / "expect").string(), line, "unknown severity '" + value + "'");
        entry.expected_severity = *sev;
      } else if (key == "policy") {
        entry.expected_policy = value;
      } else {
        throw LoadError((d / "expect").string(), line, "unknown key '" + key + "'");
      }
    }
    out.push_back(std::move(entry));
  }
  return out;
}

std::vector<CorpusVerdict> run_corpus(const std::vector<CorpusEntry>& entries, EngineKind engine, unsigned threads) {
  std::vector<CorpusVerdict> verdicts(entries.size());
  RunOptions options;
  options.engine = engine;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < entries.size(); i = next++) {
      const CorpusEntry& e = entries[i];
      CorpusVerdict& v = verdicts[i];
      v.name = e.name;
      v.expected_severity = e.expected_severity;
      v.expected_policy = e.expected_policy;
      v.attack = run(e.program, e.table, e.policy, e.attack_input, options);
      v.benign = run(e.program, e.table, e.policy, e.benign_input, options);
      bool policy_seen = e.expected_policy.empty();
      for (const auto& r : v.attack.reports) policy_seen = policy_seen || r.policy == e.expected_policy;
      v.detected = v.attack.exit_code == exit_code_for(e.expected_severity) && policy_seen;
      v.clean = v.benign.exit_code == 0 && v.benign.reports.empty() && !v.benign.superset_violation;
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(entries.size(), 1)));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return verdicts;
}

std::string verdict_table(const std::vector<CorpusVerdict>& verdicts) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-18s %-11s %-12s %-9s %-6s %s\n", "entry", "expected", "policy", "detected",
                "clean", "first report");
  out += buf;
  for (const auto& v : verdicts) {
    std::string first = v.attack.reports.empty() ? "-" : v.attack.reports.front().kind;
    std::snprintf(buf, sizeof buf, "%-18s %-11s %-12s %-9s %-6s %s\n", v.name.c_str(),
                  std::string(severity_name(v.expected_severity)).c_str(), v.expected_policy.c_str(),
                  v.detected ? "yes" : "NO", v.clean ? "yes" : "NO", first.c_str());
    out += buf;
  }
  return out;
}

std::string verdict_records(const std::vector<CorpusVerdict>& verdicts) {
  std::string out;
  for (const auto& v : verdicts) {
    nlohmann::ordered_json j;
    j["entry"] = v.name;
    j["expected_severity"] = severity_name(v.expected_severity);
    j["expected_policy"] = v.expected_policy;
    j["attack_exit"] = v.attack.exit_code;
    j["attack_reports"] = v.attack.reports.size();
    j["benign_exit"] = v.benign.exit_code;
    j["benign_reports"] = v.benign.reports.size();
    j["detected"] = v.detected;
    j["clean"] = v.clean;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<Workload> load_workloads(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<Workload> out;
  for (const auto& d : dirs) {
    Scenario s = load_scenario(d / "program.tasm", d / "objects.tbl", d / "policy.pol", d / "input.in");
    out.push_back({d.filename().string(), std::move(s.program), std::move(s.table), std::move(s.policy),
                   std::move(s.input)});
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  std::size_t n = values.size();
  return n % 2 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

BenchResult benchmark(const Workload& w, unsigned repetitions) {
  using Clock = std::chrono::steady_clock;
  BenchResult result;
  result.workload = w.name;
  MachineConfig mc;
  mc.layout = w.table.layout();
  const std::uint64_t limit = mc.step_limit;
  EngineOptions eo = w.policy.engine_options();
  eo.provenance = false;
  ByteOracleOptions bo;
  bo.untrusted = w.policy.untrusted;

  auto seconds = [](Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
  };
  auto run_bare_once = [&] {
    MachineState s = make_machine(w.program, w.input, mc);
    auto t0 = Clock::now();
    run_bare(s, w.program, limit);
    auto t1 = Clock::now();
    result.instructions = s.steps;
    return seconds(t0, t1);
  };
  auto run_object_once = [&] {
    MachineState s = make_machine(w.program, w.input, mc);
    TaintEngine engine(w.program, w.table, eo);
    auto t0 = Clock::now();
    while (!s.halted && s.steps < limit) engine.apply(step(s, w.program));
    auto t1 = Clock::now();
    result.object_ops = engine.counters();
    result.object_shadow_bytes = engine.tags().shadow_bytes();
    return seconds(t0, t1);
  };
  auto run_byte_once = [&] {
    MachineState s = make_machine(w.program, w.input, mc);
    ByteOracle oracle(w.program, mc.layout.size, bo);
    auto t0 = Clock::now();
    while (!s.halted && s.steps < limit) oracle.apply(step(s, w.program));
    auto t1 = Clock::now();
    result.byte_ops = oracle.counters();
    return seconds(t0, t1);
  };

  run_bare_once();
  run_object_once();
  run_byte_once();
  for (unsigned i = 0; i < repetitions; ++i) {
    result.bare.seconds.push_back(run_bare_once());
    result.object.seconds.push_back(run_object_once());
    result.byte.seconds.push_back(run_byte_once());
  }
  for (Samples* s : {&result.bare, &result.object, &result.byte}) s->median = median(s->seconds);
  result.byte_shadow_bytes = (static_cast<std::size_t>(mc.layout.size) + kRegisterCount + 7) / 8;
  double bare = result.bare.median > 0 ? result.bare.median : 1e-12;
  result.object_overhead = (result.object.median - result.bare.median) / bare;
  result.byte_overhead = (result.byte.median - result.bare.median) / bare;
  return result;
}

std::string bench_record(const BenchResult& r) {
  nlohmann::ordered_json j;
  j["workload"] = r.workload;
  j["instructions"] = r.instructions;
  j["bare_median_s"] = r.bare.median;
  j["object_median_s"] = r.object.median;
  j["byte_median_s"] = r.byte.median;
  j["object_overhead"] = r.object_overhead;
  j["byte_overhead"] = r.byte_overhead;
  j["object_shadow_ops"] = r.object_ops.ops();
  j["byte_shadow_ops"] = r.byte_ops.ops();
  j["object_shadow_writes"] = r.object_ops.writes;
  j["byte_shadow_writes"] = r.byte_ops.writes;
  j["object_shadow_bytes"] = r.object_shadow_bytes;
  j["byte_shadow_bytes"] = r.byte_shadow_bytes;
  j["bare_samples_s"] = r.bare.seconds;
  j["object_samples_s"] = r.object.seconds;
  j["byte_samples_s"] = r.byte.seconds;
  return j.dump();
}

std::string bench_table(const std::vector<BenchResult>& results) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-12s %12s %10s %10s %10s %9s %9s %14s %14s\n", "workload", "instructions",
                "bare(ms)", "object(ms)", "byte(ms)", "obj ovh", "byte ovh", "obj shadow ops", "byte shadow ops");
  out += buf;
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%-12s %12llu %10.2f %10.2f %10.2f %8.1f%% %8.1f%% %14llu %14llu\n",
                  r.workload.c_str(), static_cast<unsigned long long>(r.instructions), r.bare.median * 1e3,
                  r.object.median * 1e3, r.byte.median * 1e3, r.object_overhead * 100, r.byte_overhead * 100,
                  static_cast<unsigned long long>(r.object_ops.ops()),
                  static_cast<unsigned long long>(r.byte_ops.ops()));
    out += buf;
  }
  return out;
}

}  // namespace taintvm
