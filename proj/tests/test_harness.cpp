#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "support.hpp"
#include "taintvm/harness.hpp"

using namespace taintvm;
namespace fs = std::filesystem;

namespace {

fs::path entry(const std::string& name) { return fs::path(taintvm::testing::corpus_dir()) / name; }

RunResult run_entry(const std::string& name, const std::string& input_file, EngineKind engine = EngineKind::kObject) {
  fs::path d = entry(name);
  Scenario s = load_scenario(d / "program.tasm", d / "objects.tbl", d / "policy.pol", d / input_file);
  RunOptions o;
  o.engine = engine;
  return run(s.program, s.table, s.policy, s.input, o);
}

fs::path scratch(const std::string& name, const std::string& text) {
  fs::path p = fs::temp_directory_path() / ("taintvm_test_" + name);
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST(Run, StackSmashExitCodes) {
  EXPECT_EQ(run_entry("stack_smash", "attack.in").exit_code, 3);
  EXPECT_EQ(run_entry("stack_smash", "benign.in").exit_code, 0);
}

TEST(Run, NoncontrolStructIsNotControl) {
  auto r = run_entry("noncontrol_struct", "attack.in");
  EXPECT_EQ(r.exit_code, 2);
  ASSERT_FALSE(r.reports.empty());
  EXPECT_EQ(r.reports[0].severity, Severity::kNoncontrol);
}

TEST(Run, EnginesAgreeOnCorpus) {
  for (const auto& e : load_corpus(taintvm::testing::corpus_dir())) {
    for (const auto* input : {&e.attack_input, &e.benign_input}) {
      RunOptions o;
      o.engine = EngineKind::kObject;
      auto a = run(e.program, e.table, e.policy, *input, o);
      o.engine = EngineKind::kLockstep;
      auto b = run(e.program, e.table, e.policy, *input, o);
      EXPECT_EQ(a.exit_code, b.exit_code) << e.name;
      EXPECT_FALSE(b.superset_violation) << e.name << ": " << *b.superset_violation;
      EXPECT_EQ(a.output, b.output) << e.name;
    }
  }
}

TEST(Run, ByteEngineDetectsCorpus) {
  auto verdicts = run_corpus(load_corpus(taintvm::testing::corpus_dir()), EngineKind::kByte, 1);
  for (const auto& v : verdicts) {
    EXPECT_TRUE(v.detected) << v.name;
    EXPECT_TRUE(v.clean) << v.name;
  }
}

TEST(Run, StepLimit) {
  Program p = assemble("fn main {\nloop:\n JMP loop\n}\n");
  RunOptions o;
  o.step_limit = 1000;
  auto r = run(p, ObjectTable{}, PolicyConfig{}, {}, o);
  EXPECT_TRUE(r.step_limit_hit);
  EXPECT_EQ(r.steps, 1000u);
}

TEST(Load, MalformedObjectTableNamesFileAndLine) {
  fs::path d = entry("stack_smash");
  fs::path bad = scratch("bad.tbl", "global ok 0x2000 4\nglobal broken 0x2004\n");
  try {
    load_scenario(d / "program.tasm", bad, d / "policy.pol", std::nullopt);
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_EQ(e.file(), bad.string());
    EXPECT_EQ(e.line(), 2);
    EXPECT_EQ(std::string(e.what()).rfind(bad.string() + ":2: ", 0), 0u) << e.what();
  }
}

TEST(Load, AssemblyErrorNamesFile) {
  fs::path d = entry("stack_smash");
  fs::path bad = scratch("bad.tasm", "fn main {\n  FROB r1\n}\n");
  try {
    load_scenario(bad, d / "objects.tbl", d / "policy.pol", std::nullopt);
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_EQ(e.line(), 2);
  }
}

TEST(Load, MissingFile) {
  fs::path d = entry("stack_smash");
  EXPECT_THROW(load_scenario(d / "nope.tasm", d / "objects.tbl", d / "policy.pol", std::nullopt), LoadError);
}

TEST(Corpus, SevenEntriesAllPass) {
  auto entries = load_corpus(taintvm::testing::corpus_dir());
  ASSERT_EQ(entries.size(), 7u);
  auto verdicts = run_corpus(entries, EngineKind::kObject);
  for (const auto& v : verdicts) {
    EXPECT_TRUE(v.detected) << v.name;
    EXPECT_TRUE(v.clean) << v.name;
    EXPECT_TRUE(v.benign.reports.empty()) << v.name;
    EXPECT_EQ(v.benign.exit_code, 0) << v.name;
  }
}

TEST(Corpus, ParallelMatchesSerial) {
  auto entries = load_corpus(taintvm::testing::corpus_dir());
  EXPECT_EQ(verdict_records(run_corpus(entries, EngineKind::kObject, 1)),
            verdict_records(run_corpus(entries, EngineKind::kObject, 4)));
}

// --- output format goldens ---

TEST(Format, ReportJsonGolden) {
  AttackReport r;
  r.policy = "branch";
  r.kind = "tainted-return-address";
  r.severity = Severity::kControl;
  r.step = 12;
  r.pc = 7;
  r.instruction = "RET";
  r.objects = {"vuln.$ret#3"};
  r.chain_text = {"2 input - -> arg#1 1"};
  r.detail = "";
  EXPECT_EQ(report_json(r),
            R"({"policy":"branch","kind":"tainted-return-address","severity":"CONTROL","step":12,"pc":7,)"
            R"("instruction":"RET","objects":["vuln.$ret#3"],"taint_chain":["2 input - -> arg#1 1"],"detail":""})");
  EXPECT_EQ(report_summary(r), "CONTROL tainted-return-address at step 12 (pc 7: RET)");
}

TEST(Format, VerdictRecordGolden) {
  CorpusVerdict v;
  v.name = "stack_smash";
  v.expected_severity = Severity::kControl;
  v.expected_policy = "controldata";
  v.attack.exit_code = 3;
  v.attack.reports.resize(1);
  v.detected = true;
  v.clean = true;
  EXPECT_EQ(verdict_records({v}),
            R"({"entry":"stack_smash","expected_severity":"CONTROL","expected_policy":"controldata",)"
            R"("attack_exit":3,"attack_reports":1,"benign_exit":0,"benign_reports":0,"detected":true,"clean":true})"
            "\n");
}

TEST(Format, BenchRecordKeys) {
  BenchResult r;
  r.workload = "w";
  r.bare.seconds = {1.0};
  auto j = nlohmann::json::parse(bench_record(r));
  for (const char* k : {"workload", "instructions", "bare_median_s", "object_median_s", "byte_median_s",
                        "object_overhead", "byte_overhead", "object_shadow_ops", "byte_shadow_ops",
                        "object_shadow_writes", "byte_shadow_writes", "object_shadow_bytes", "byte_shadow_bytes",
                        "bare_samples_s", "object_samples_s", "byte_samples_s"})
    EXPECT_TRUE(j.contains(k)) << k;
}

TEST(Format, ProvenanceLines) {
  taintvm::testing::Sim s("fn main { READINPUT 0x2000, 8, stdin LOAD r1, [0x2000] STORE [0x3000], r1 HALT }",
                          "global in 0x2000 8\nglobal out 0x3000 4\n", {"abc"});
  s.run();
  std::vector<std::string> lines;
  for (const auto& e : s.engine->provenance().entries()) lines.push_back(format_provenance(e, &s.engine->objects()));
  std::vector<std::string> golden = {
      "0 call - -> main.$ret#3 0",
      "1 input - -> r0 0",
      "1 input - -> in#1 1",
      "2 move in#1 -> r1 1",
      "3 move r1 -> out#2 1",
  };
  EXPECT_EQ(lines, golden);
}

TEST(Format, TagDump) {
  taintvm::testing::Sim s("fn main { READINPUT 0x2000, 8, stdin HALT }", "global in 0x2000 8\n", {"abc"});
  s.run();
  std::string dump = s.engine->tags().dump();
  EXPECT_EQ(dump, "0xA8000000: 00 04\n");
}

TEST(Stats, Median) {
  EXPECT_DOUBLE_EQ(median({3, 1, 2}), 2.0);
  EXPECT_DOUBLE_EQ(median({4, 1, 3, 2}), 2.5);
  EXPECT_DOUBLE_EQ(median({}), 0.0);
}

TEST(Run, RunawayRecursionStopsWithFault) {
  Program p = assemble("fn main { CALL main }\n");
  auto r = run(p, ObjectTable{}, PolicyConfig{}, {}, RunOptions{});
  ASSERT_TRUE(r.fault);
  EXPECT_EQ(r.exit_code, 0);
}
