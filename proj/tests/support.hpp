#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "taintvm/assembler.hpp"
#include "taintvm/byte_oracle.hpp"
#include "taintvm/harness.hpp"
#include "taintvm/machine.hpp"
#include "taintvm/object_model.hpp"
#include "taintvm/taint_engine.hpp"

namespace taintvm::testing {

// Object engine and byte oracle driven by the same machine, one event at a time.
class Sim {
 public:
  Sim(std::string_view source, std::string_view table, std::vector<std::string> input = {},
      EngineOptions options = {});

  StepEvent step();
  // Steps until the machine halts or the next instruction has the given opcode.
  void run_until(Opcode op);
  void run();

  bool obj(std::string_view name) const;  // object engine tag of a live object
  std::optional<ObjectHandle> handle(std::string_view name) const;
  bool reg(Reg r) const { return engine->reg_tag(r); }
  bool oracle_byte(Word addr) const { return oracle->map().byte(addr); }
  std::size_t oracle_tainted(Word addr, Word len) const;
  std::optional<std::string> superset() const { return find_superset_violation(*engine, *oracle); }

  std::unique_ptr<Program> program;
  MachineState state;
  std::unique_ptr<TaintEngine> engine;
  std::unique_ptr<ByteOracle> oracle;
  std::vector<StepEvent> events;
};

// Seeded straight-line program over a 4-object global layout with a spill gap.
struct RandomProgram {
  std::string source;
  std::string table;
  std::vector<std::string> input;
};

RandomProgram random_program(std::uint64_t seed, int length = 40);

// Runs a program in lockstep and returns the first superset violation, using
// the full memory scan after every step.
std::optional<std::string> lockstep_full(const RandomProgram& p);

std::string corpus_dir();
std::string workload_dir();

}  // namespace taintvm::testing
