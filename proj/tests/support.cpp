#include "support.hpp"

#include <random>
#include <sstream>

namespace taintvm::testing {

Sim::Sim(std::string_view source, std::string_view table, std::vector<std::string> input, EngineOptions options)
    : program(std::make_unique<Program>(assemble(source))) {
  ObjectTable t = ObjectTable::parse(table);
  state = make_machine(*program, std::move(input), MachineConfig{t.layout(), 50'000'000});
  engine = std::make_unique<TaintEngine>(*program, t, options);
  ByteOracleOptions bo;
  bo.untrusted = options.untrusted;
  oracle = std::make_unique<ByteOracle>(*program, t.layout().size, bo);
}

StepEvent Sim::step() {
  StepEvent ev = taintvm::step(state, *program);
  engine->apply(ev);
  oracle->apply(ev);
  events.push_back(ev);
  return ev;
}

void Sim::run_until(Opcode op) {
  while (!state.halted) {
    if (state.started && state.pc < program->instructions.size() && program->instructions[state.pc].op == op)
      return;
    step();
  }
}

void Sim::run() {
  while (!state.halted) step();
}

std::optional<ObjectHandle> Sim::handle(std::string_view name) const {
  const ObjectTable& t = engine->objects();
  std::optional<ObjectHandle> found;
  for (const LiveObject& o : t.live_objects())
    if (t.name_of(o.handle) == name) found = o.handle;
  return found;
}

bool Sim::obj(std::string_view name) const {
  auto h = handle(name);
  return h && engine->object_tag(*h);
}

std::size_t Sim::oracle_tainted(Word addr, Word len) const {
  std::size_t n = 0;
  for (Word i = 0; i < len; ++i) n += oracle->map().byte(addr + i) ? 1 : 0;
  return n;
}

namespace {

constexpr Word kBase = 0x1000;
constexpr Word kSpan = 0x40;

const char* const kRegs[] = {"r0", "r1", "r2", "r3", "r4", "r5", "r6", "r7"};

}  // namespace

RandomProgram random_program(std::uint64_t seed, int length) {
  std::mt19937_64 rng(seed);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto reg = [&] { return kRegs[pick(0, 7)]; };
  auto addr = [&](Word width) { return kBase + static_cast<Word>(pick(0, static_cast<int>(kSpan - width))); };
  auto hex = [](Word v) {
    std::ostringstream s;
    s << "0x" << std::hex << v;
    return s.str();
  };
  const char* widths[] = {"1", "2", "4"};
  const char* sources[] = {"stdin", "argv", "net", "file"};

  RandomProgram p;
  p.table =
      "global a 0x1000 16\n"
      "global b 0x1010 4\n"
      "global c 0x1020 8\n"
      "global d 0x1030 16\n";
  std::ostringstream src;
  int depth = 0;
  src << "fn main {\n";
  for (int i = 0; i < length; ++i) {
    switch (pick(0, 15)) {
      case 0: {
        int max = pick(2, 24);
        src << "  READINPUT " << hex(addr(static_cast<Word>(max))) << ", " << max << ", " << sources[pick(0, 3)]
            << "\n";
        std::string line;
        int n = pick(0, max);
        for (int k = 0; k < n; ++k) line += static_cast<char>(pick(1, 3) == 1 ? pick(1, 31) : pick('a', 'z'));
        p.input.push_back(line);
        break;
      }
      case 1: src << "  MOV " << reg() << ", " << pick(0, 1000) << "\n"; break;
      case 2: src << "  MOV " << reg() << ", " << reg() << "\n"; break;
      case 3: {
        int w = pick(0, 2);
        src << "  LOAD " << reg() << ", [" << hex(addr(1u << w)) << "], " << widths[w] << "\n";
        break;
      }
      case 4: {
        int w = pick(0, 2);
        src << "  STORE [" << hex(addr(1u << w)) << "], " << reg() << ", " << widths[w] << "\n";
        break;
      }
      case 5: {
        int w = pick(0, 2);
        src << "  STORE [" << hex(addr(1u << w)) << "], " << pick(0, 255) << ", " << widths[w] << "\n";
        break;
      }
      case 6: {
        const char* ops[] = {"ADD", "SUB", "XOR"};
        src << "  " << ops[pick(0, 2)] << " " << reg() << ", ";
        switch (pick(0, 2)) {
          case 0: src << reg(); break;
          case 1: src << pick(0, 99); break;
          default: src << "[" << hex(addr(4)) << "]"; break;
        }
        src << "\n";
        break;
      }
      case 7: {
        const char* r = reg();
        src << "  " << (pick(0, 1) ? "XOR " : "SUB ") << r << ", " << r << "\n";
        break;
      }
      case 8: src << "  " << (pick(0, 1) ? "INC " : "DEC ") << reg() << "\n"; break;
      case 9: {
        const char* idx = kRegs[pick(1, 7)];
        src << "  LOAD " << idx << ", [" << hex(addr(1)) << "], 1\n";
        src << "  LOAD " << reg() << ", [" << idx << "+" << hex(kBase) << "], 1\n";
        break;
      }
      case 10:
      case 11: {
        Word len = static_cast<Word>(pick(1, 24));
        src << "  MEMCPY " << hex(addr(len)) << ", " << hex(addr(len)) << ", " << len << "\n";
        break;
      }
      case 12: src << "  STRCPY " << hex(addr(8)) << ", " << hex(addr(1)) << "\n"; break;
      case 13: {
        Word len = static_cast<Word>(pick(1, 20));
        src << "  MEMSET " << hex(addr(len)) << ", ";
        if (pick(0, 1))
          src << reg();
        else
          src << pick(0, 255);
        src << ", " << len << "\n";
        break;
      }
      case 14:
        src << "  PUSH " << reg() << "\n";
        ++depth;
        break;
      default:
        if (depth == 0) {
          src << "  PUSH " << pick(0, 9) << "\n";
          ++depth;
        } else {
          src << "  POP " << reg() << "\n";
          --depth;
        }
        break;
    }
  }
  src << "  HALT\n}\n";
  p.source = src.str();
  return p;
}

std::optional<std::string> lockstep_full(const RandomProgram& p) {
  Sim sim(p.source, p.table, p.input);
  while (!sim.state.halted) {
    StepEvent ev = sim.step();
    if (auto v = sim.superset()) return "step " + std::to_string(ev.step) + " (" + std::string(opcode_name(ev.op)) + "): " + *v;
  }
  return std::nullopt;
}

#ifndef TAINTVM_CORPUS_DIR
#define TAINTVM_CORPUS_DIR "corpus"
#endif
#ifndef TAINTVM_WORKLOAD_DIR
#define TAINTVM_WORKLOAD_DIR "workloads"
#endif

std::string corpus_dir() { return TAINTVM_CORPUS_DIR; }
std::string workload_dir() { return TAINTVM_WORKLOAD_DIR; }

}  // namespace taintvm::testing
