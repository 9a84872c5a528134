#include <benchmark/benchmark.h>

#include <cstdio>
#include <map>

#include "taintvm/assembler.hpp"
#include "taintvm/byte_oracle.hpp"
#include "taintvm/harness.hpp"
#include "taintvm/machine.hpp"
#include "taintvm/taint_engine.hpp"

using namespace taintvm;

namespace {

const Workload& workload(const std::string& name) {
  static const std::map<std::string, Workload> all = [] {
    std::map<std::string, Workload> m;
    for (auto& w : load_workloads(TAINTVM_WORKLOAD_DIR)) m.emplace(w.name, std::move(w));
    return m;
  }();
  return all.at(name);
}

void BM_Bare(benchmark::State& st, const std::string& name) {
  const Workload& w = workload(name);
  MachineConfig mc;
  mc.layout = w.table.layout();
  std::uint64_t steps = 0;
  for (auto _ : st) {
    MachineState m = make_machine(w.program, w.input, mc);
    while (!m.halted) benchmark::DoNotOptimize(step(m, w.program));
    steps += m.steps;
  }
  st.counters["insn/s"] = benchmark::Counter(static_cast<double>(steps), benchmark::Counter::kIsRate);
}

void BM_Engine(benchmark::State& st, const std::string& name, EngineKind engine) {
  const Workload& w = workload(name);
  RunOptions o;
  o.engine = engine;
  RunResult r;
  for (auto _ : st) {
    r = run(w.program, w.table, w.policy, w.input, o);
    benchmark::DoNotOptimize(r.steps);
  }
  const ShadowCounters& c = engine == EngineKind::kByte ? r.byte_counters : r.object_counters;
  st.counters["insn/s"] =
      benchmark::Counter(static_cast<double>(r.steps * st.iterations()), benchmark::Counter::kIsRate);
  st.counters["shadow_ops"] = static_cast<double>(c.ops());
  st.counters["shadow_writes"] = static_cast<double>(c.writes);
}

// Object-tag shadow stays under one bit per memory byte.
void BM_ShadowSpace(benchmark::State& st, const std::string& name) {
  const Workload& w = workload(name);
  MachineConfig mc;
  mc.layout = w.table.layout();
  std::size_t object_bytes = 0;
  std::size_t live_peak = 0;
  for (auto _ : st) {
    MachineState m = make_machine(w.program, w.input, mc);
    TaintEngine e(w.program, w.table, w.policy.engine_options());
    while (!m.halted) {
      e.apply(step(m, w.program));
      live_peak = std::max(live_peak, e.objects().live_count());
    }
    object_bytes = e.tags().shadow_bytes();
  }
  std::size_t byte_bytes = mc.layout.size / 8;
  std::size_t bound = (live_peak + kRegisterCount + 7) / 8;
  st.counters["object_shadow_bytes"] = static_cast<double>(object_bytes);
  st.counters["byte_shadow_bytes"] = static_cast<double>(byte_bytes);
  st.counters["peak_live_objects"] = static_cast<double>(live_peak);
  if (object_bytes > bound || object_bytes >= byte_bytes) st.SkipWithError("object shadow exceeds its bound");
}

void BM_TagAssignRelease(benchmark::State& st) {
  TagSpace s(static_cast<std::uint32_t>(st.range(0)));
  std::vector<TagCoordinate> held;
  held.reserve(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) {
    for (std::int64_t i = 0; i < st.range(0); ++i) held.push_back(s.assign());
    for (auto c : held) s.release(c);
    held.clear();
  }
  st.SetItemsProcessed(st.iterations() * st.range(0));
}
BENCHMARK(BM_TagAssignRelease)->Arg(64)->Arg(4096);

void BM_TagReadWrite(benchmark::State& st) {
  TagSpace s(1024);
  std::vector<TagCoordinate> cs;
  for (int i = 0; i < 1024; ++i) cs.push_back(s.assign());
  bool t = false;
  for (auto _ : st) {
    for (auto c : cs) {
      s.write(c, !s.read(c));
      t ^= s.read(c);
    }
  }
  benchmark::DoNotOptimize(t);
  st.SetItemsProcessed(st.iterations() * 1024);
}
BENCHMARK(BM_TagReadWrite);

void BM_ClearMaskOp(benchmark::State& st) {
  std::uint32_t slot = 0;
  for (auto _ : st) {
    benchmark::DoNotOptimize(clear_mask_op(TagCoordinate{slot >> 3, static_cast<std::uint8_t>(slot & 7)}));
    slot = (slot + 1) & 0xFFFF;
  }
}
BENCHMARK(BM_ClearMaskOp);

void BM_Resolve(benchmark::State& st) {
  std::string text;
  const Word n = static_cast<Word>(st.range(0));
  for (Word i = 0; i < n; ++i) {
    char line[64];
    std::snprintf(line, sizeof line, "global g%u 0x%x 12\n", i, 0x1000 + i * 16);
    text += line;
  }
  ObjectTable t = ObjectTable::parse(text);
  Word a = 0x1000;
  for (auto _ : st) {
    benchmark::DoNotOptimize(t.owner(a));
    a = 0x1000 + ((a - 0x1000 + 7) % (n * 16));
  }
}
BENCHMARK(BM_Resolve)->Arg(16)->Arg(1024)->Arg(16384);

void BM_CopyIntrinsic(benchmark::State& st) {
  const Word len = static_cast<Word>(st.range(0));
  Program p = assemble("fn main { HALT }");
  ObjectTable table = ObjectTable::parse("global src 0x2000 0x4000\nglobal dst 0x8000 0x4000\n");
  TaintEngine object(p, table);
  ByteOracle byte(p, 1u << 20);
  StepEvent in;
  in.kind = EventKind::kInput;
  in.source = InputSource::kStdin;
  in.dst = Location::mem(0x2000, len);
  object.apply(in);
  byte.apply(in);
  StepEvent cp;
  cp.kind = EventKind::kCopy;
  cp.op = Opcode::kMemcpy;
  cp.dst = Location::mem(0x8000, len);
  cp.src[0] = Location::mem(0x2000, len);
  cp.src_count = 1;
  const bool use_byte = st.range(1) != 0;
  for (auto _ : st) {
    if (use_byte)
      byte.apply(cp);
    else
      object.apply(cp);
  }
  st.SetBytesProcessed(st.iterations() * len);
  st.SetLabel(use_byte ? "byte" : "object");
}
BENCHMARK(BM_CopyIntrinsic)->ArgsProduct({{16, 1024, 16384}, {0, 1}});

const int registered = [] {
  for (const char* name : {"copy_heavy", "factorial", "parse_like"}) {
    std::string n = name;
    benchmark::RegisterBenchmark(("BM_Bare/" + n).c_str(), BM_Bare, n)->Unit(benchmark::kMillisecond);
    benchmark::RegisterBenchmark(("BM_Object/" + n).c_str(), BM_Engine, n, EngineKind::kObject)
        ->Unit(benchmark::kMillisecond);
    benchmark::RegisterBenchmark(("BM_Byte/" + n).c_str(), BM_Engine, n, EngineKind::kByte)
        ->Unit(benchmark::kMillisecond);
    benchmark::RegisterBenchmark(("BM_ShadowSpace/" + n).c_str(), BM_ShadowSpace, n)
        ->Unit(benchmark::kMillisecond)
        ->Iterations(1);
  }
  return 0;
}();

}  // namespace

BENCHMARK_MAIN();
