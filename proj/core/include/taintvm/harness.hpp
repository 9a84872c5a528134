#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "taintvm/byte_oracle.hpp"
#include "taintvm/isa.hpp"
#include "taintvm/machine.hpp"
#include "taintvm/object_model.hpp"
#include "taintvm/policy.hpp"
#include "taintvm/taint_engine.hpp"

namespace taintvm {

enum class EngineKind : std::uint8_t { kObject, kByte, kLockstep };

std::string_view engine_name(EngineKind kind);
std::optional<EngineKind> parse_engine(std::string_view name);

// A file that failed to parse: "<file>:<line>: <message>".
class LoadError : public std::runtime_error {
 public:
  LoadError(std::string file, int line, const std::string& message);
  const std::string& file() const { return file_; }
  int line() const { return line_; }

 private:
  std::string file_;
  int line_;
};

std::string read_text_file(const std::filesystem::path& path);

struct Scenario {
  Program program;
  ObjectTable table;
  PolicyConfig policy;
  std::vector<std::string> input;
};

// Throws LoadError naming the offending file.
Scenario load_scenario(const std::filesystem::path& program, const std::filesystem::path& objects,
                       const std::filesystem::path& policy, const std::optional<std::filesystem::path>& input);

struct RunOptions {
  EngineKind engine = EngineKind::kObject;
  bool halt_on_detect = true;
  std::uint64_t step_limit = 50'000'000;
  bool dump_tags = false;
};

struct RunResult {
  int exit_code = 0;
  std::vector<AttackReport> reports;
  std::string output;
  std::optional<std::string> fault;
  std::optional<std::string> exec_path;
  std::optional<Word> exit_status;
  std::uint64_t steps = 0;
  bool stopped_on_detect = false;
  bool step_limit_hit = false;
  ShadowCounters object_counters;
  ShadowCounters byte_counters;
  std::optional<std::string> superset_violation;
  std::string tag_dump;
};

RunResult run(const Program& program, const ObjectTable& table, const PolicyConfig& policy,
              const std::vector<std::string>& input, const RunOptions& options = {});

// Exit status as a function of the reports alone.
int exit_code_for(const std::vector<AttackReport>& reports);

// First byte or register tainted in the oracle but not covered by the object
// engine's tags, described with both sides' state; nullopt if none.
std::optional<std::string> find_superset_violation(const TaintEngine& engine, const ByteOracle& oracle);
// Same check after `event` was applied to both, limited to what the event can
// have changed: registers and written bytes, or everything after an object
// lifecycle change.
std::optional<std::string> find_superset_violation(const TaintEngine& engine, const ByteOracle& oracle,
                                                   const StepEvent& event);

struct CorpusEntry {
  std::string name;
  Program program;
  ObjectTable table;
  PolicyConfig policy;
  std::vector<std::string> attack_input;
  std::vector<std::string> benign_input;
  Severity expected_severity = Severity::kControl;
  std::string expected_policy;
};

// Each subdirectory holds program.tasm, objects.tbl, policy.pol, attack.in,
// benign.in and expect.
std::vector<CorpusEntry> load_corpus(const std::filesystem::path& dir);

struct CorpusVerdict {
  std::string name;
  Severity expected_severity = Severity::kControl;
  std::string expected_policy;
  RunResult attack;
  RunResult benign;
  bool detected = false;
  bool clean = false;
};

std::vector<CorpusVerdict> run_corpus(const std::vector<CorpusEntry>& entries, EngineKind engine,
                                      unsigned threads = 0);
std::string verdict_table(const std::vector<CorpusVerdict>& verdicts);
std::string verdict_records(const std::vector<CorpusVerdict>& verdicts);

struct Workload {
  std::string name;
  Program program;
  ObjectTable table;
  PolicyConfig policy;
  std::vector<std::string> input;
};

// Each subdirectory holds program.tasm, objects.tbl, policy.pol and input.in.
std::vector<Workload> load_workloads(const std::filesystem::path& dir);

struct Samples {
  std::vector<double> seconds;
  double median = 0.0;
};

struct BenchResult {
  std::string workload;
  std::uint64_t instructions = 0;
  Samples bare;
  Samples object;
  Samples byte;
  ShadowCounters object_ops;
  ShadowCounters byte_ops;
  std::size_t object_shadow_bytes = 0;
  std::size_t byte_shadow_bytes = 0;
  double object_overhead = 0.0;  // (engine - bare) / bare, on medians
  double byte_overhead = 0.0;
};

double median(std::vector<double> values);
BenchResult benchmark(const Workload& workload, unsigned repetitions);
std::string bench_record(const BenchResult& result);
std::string bench_table(const std::vector<BenchResult>& results);

}  // namespace taintvm
