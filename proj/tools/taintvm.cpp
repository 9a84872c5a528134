#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "taintvm/harness.hpp"

using namespace taintvm;

namespace {

#ifndef TAINTVM_CORPUS_DIR
#define TAINTVM_CORPUS_DIR "corpus"
#endif
#ifndef TAINTVM_WORKLOAD_DIR
#define TAINTVM_WORKLOAD_DIR "workloads"
#endif

bool write_file(const std::string& path, const std::string& text) {
  if (path.empty()) return true;
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    std::cerr << "taintvm: cannot write " << path << "\n";
    return false;
  }
  return true;
}

struct RunArgs {
  std::string program, objects, policy, input, engine = "object", report;
  bool continue_after = false;
  bool dump_tags = false;
  std::uint64_t step_limit = 50'000'000;
};

int cmd_run(const RunArgs& a) {
  auto engine = parse_engine(a.engine);
  if (!engine) {
    std::cerr << "taintvm: unknown engine '" << a.engine << "'\n";
    return 1;
  }
  Scenario s = load_scenario(a.program, a.objects, a.policy,
                             a.input.empty() ? std::nullopt : std::optional<std::filesystem::path>(a.input));
  RunOptions options;
  options.engine = *engine;
  options.halt_on_detect = !a.continue_after;
  options.dump_tags = a.dump_tags;
  options.step_limit = a.step_limit;
  RunResult r = run(s.program, s.table, s.policy, s.input, options);

  std::cout << r.output << std::flush;
  for (const auto& rep : r.reports) {
    std::cerr << report_summary(rep) << "\n";
    for (const auto& line : rep.chain_text) std::cerr << "  " << line << "\n";
  }
  if (r.superset_violation) std::cerr << "lockstep: superset violated at " << *r.superset_violation << "\n";
  if (r.fault) std::cerr << "fault: " << *r.fault << "\n";
  if (r.exec_path) std::cerr << "exec: " << *r.exec_path << "\n";
  if (r.step_limit_hit) std::cerr << "stopped: step limit reached\n";
  if (a.dump_tags) std::cerr << r.tag_dump;

  std::string records;
  for (const auto& rep : r.reports) records += report_json(rep) + "\n";
  if (!write_file(a.report, records)) return 1;
  return r.exit_code;
}

int cmd_corpus(const std::string& dir, const std::string& engine_name_arg, unsigned threads,
               const std::string& out) {
  auto engine = parse_engine(engine_name_arg);
  if (!engine) {
    std::cerr << "taintvm: unknown engine '" << engine_name_arg << "'\n";
    return 1;
  }
  auto entries = load_corpus(dir);
  auto verdicts = run_corpus(entries, *engine, threads);
  std::cout << verdict_table(verdicts);
  if (!write_file(out, verdict_records(verdicts))) return 1;
  bool ok = !verdicts.empty();
  for (const auto& v : verdicts) ok = ok && v.detected && v.clean;
  std::cout << (ok ? "all entries detected and all benign twins clean\n" : "corpus verdict mismatch\n");
  return ok ? 0 : 1;
}

int cmd_bench(const std::string& dir, unsigned reps, const std::string& out) {
  auto workloads = load_workloads(dir);
  std::vector<BenchResult> results;
  std::string records;
  for (const auto& w : workloads) {
    results.push_back(benchmark(w, reps));
    records += bench_record(results.back()) + "\n";
  }
  std::cout << bench_table(results);
  bool ok = !results.empty();
  for (const auto& r : results) {
    bool ops = r.object_ops.ops() <= r.byte_ops.ops();
    bool faster = r.object_overhead < r.byte_overhead;
    double ratio = r.byte_ops.ops() ? static_cast<double>(r.object_ops.ops()) / static_cast<double>(r.byte_ops.ops()) : 0.0;
    std::printf("%-12s shadow-op ratio %.6f %s, overhead object %.3f < byte %.3f %s\n", r.workload.c_str(), ratio,
                ops ? "ok" : "FAIL", r.object_overhead, r.byte_overhead, faster ? "ok" : "FAIL");
    ok = ok && ops && faster;
    if (r.workload == "copy_heavy" && ratio > 0.01) ok = false;
  }
  if (!write_file(out, records)) return 1;
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Object-level dynamic taint tracking on a toy VM"};
  app.require_subcommand(1);

  RunArgs run_args;
  auto* run_cmd = app.add_subcommand("run", "Run one program under a taint engine");
  run_cmd->add_option("-p,--program", run_args.program, "Assembly program")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("-t,--objects", run_args.objects, "Object table")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("-P,--policy", run_args.policy, "Policy file")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("-i,--input", run_args.input, "Input script, one line per READINPUT")
      ->check(CLI::ExistingFile);
  run_cmd->add_option("--engine", run_args.engine, "object, byte or lockstep")
      ->check(CLI::IsMember({"object", "byte", "lockstep"}));
  run_cmd->add_flag("--continue-after-detect", run_args.continue_after, "Keep running after a detection");
  run_cmd->add_flag("--dump-tags", run_args.dump_tags, "Print the object tag space after the run");
  run_cmd->add_option("--report", run_args.report, "Write reports as JSON lines to this file");
  run_cmd->add_option("--step-limit", run_args.step_limit, "Maximum instructions to execute");

  std::string corpus_dir = TAINTVM_CORPUS_DIR, corpus_engine = "object", corpus_out = "corpus_verdicts.jsonl";
  unsigned threads = 0;
  auto* corpus_cmd = app.add_subcommand("corpus", "Run every attack and benign input of the corpus");
  corpus_cmd->add_option("-d,--dir", corpus_dir, "Corpus directory")->check(CLI::ExistingDirectory);
  corpus_cmd->add_option("--engine", corpus_engine, "object, byte or lockstep")
      ->check(CLI::IsMember({"object", "byte", "lockstep"}));
  corpus_cmd->add_option("-j,--threads", threads, "Worker threads (0 = hardware concurrency)");
  corpus_cmd->add_option("-o,--output", corpus_out, "Verdict records file (JSON lines)");

  std::string bench_dir = TAINTVM_WORKLOAD_DIR, bench_out = "bench_results.jsonl";
  unsigned reps = 5;
  auto* bench_cmd = app.add_subcommand("bench", "Compare bare, object and byte engine cost");
  bench_cmd->add_option("-n,--reps", reps, "Repetitions per engine")->check(CLI::Range(5u, 100000u));
  bench_cmd->add_option("-d,--dir", bench_dir, "Workload directory")->check(CLI::ExistingDirectory);
  bench_cmd->add_option("-o,--output", bench_out, "Bench records file (JSON lines)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*run_cmd) return cmd_run(run_args);
    if (*corpus_cmd) return cmd_corpus(corpus_dir, corpus_engine, threads, corpus_out);
    if (*bench_cmd) return cmd_bench(bench_dir, reps, bench_out);
  } catch (const LoadError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "taintvm: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
