#include <gtest/gtest.h>

#include "support.hpp"
#include "taintvm/assembler.hpp"
#include "taintvm/harness.hpp"
#include "taintvm/machine.hpp"

using namespace taintvm;

TEST(Assembler, MinimalProgramOnOneLine) {
  Program p = assemble("fn main { MOV r0, 0 HALT }");
  ASSERT_EQ(p.instructions.size(), 2u);
  ASSERT_EQ(p.functions.size(), 1u);
  EXPECT_EQ(p.functions[p.entry].name, "main");
  EXPECT_EQ(p.instructions[0].op, Opcode::kMov);
  EXPECT_EQ(p.instructions[0].operand(0).kind, OperandKind::kReg);
  EXPECT_EQ(p.instructions[0].operand(1).kind, OperandKind::kImm);
  EXPECT_EQ(p.instructions[1].op, Opcode::kHalt);
}

TEST(Assembler, UndefinedLabel) {
  try {
    assemble("fn main {\n  JMP nowhere\n}\n");
    FAIL() << "expected AssemblyError";
  } catch (const AssemblyError& e) {
    EXPECT_EQ(e.line(), 2);
    EXPECT_NE(e.message().find("nowhere"), std::string::npos);
  }
}

TEST(Assembler, DuplicateFunction) {
  EXPECT_THROW(assemble("fn f { RET }\nfn f { RET }\n"), AssemblyError);
}

TEST(Assembler, UnknownCallTarget) {
  EXPECT_THROW(assemble("fn main { CALL missing HALT }"), AssemblyError);
}

TEST(Assembler, OperandShapeEnforced) {
  EXPECT_THROW(assemble("fn main { MOV 5, r0 HALT }"), AssemblyError);
  EXPECT_THROW(assemble("fn main { INC HALT }"), AssemblyError);
  EXPECT_THROW(assemble("fn main { JZ r1 HALT }"), AssemblyError);
  EXPECT_THROW(assemble("fn main { READINPUT 0x2000, 8, keyboard HALT }"), AssemblyError);
}

TEST(Assembler, SyntaxErrorHasColumn) {
  try {
    assemble("fn main {\n  MOV r1, [fp-\n}\n");
    FAIL() << "expected AssemblyError";
  } catch (const AssemblyError& e) {
    // Reported at the first unexpected token.
    EXPECT_EQ(e.line(), 3);
    EXPECT_EQ(e.column(), 1);
  }
}

TEST(Assembler, OperandForms) {
  Program p = assemble(
      ".equ BUF 0x2000\n"
      "fn main {\n"
      "  LOAD r1, [fp-20], 1\n"
      "  STORE [r2+BUF], 'A', 1\n"
      "  LOAD r3, [0x3000]\n"
      "  MOV r4, &helper\n"
      "  READINPUT BUF, 16, net\n"
      "  HALT\n"
      "}\n"
      "fn helper { RET }\n");
  const auto& i = p.instructions;
  EXPECT_EQ(i[0].operand(1).kind, OperandKind::kFpRel);
  EXPECT_EQ(i[0].operand(1).disp, -20);
  EXPECT_EQ(i[0].operand(2).value, 1u);
  EXPECT_EQ(i[1].operand(0).kind, OperandKind::kRegDisp);
  EXPECT_EQ(i[1].operand(0).reg, Reg::kR2);
  EXPECT_EQ(i[1].operand(0).disp, 0x2000);
  EXPECT_EQ(i[1].operand(1).value, static_cast<Word>('A'));
  EXPECT_EQ(i[2].operand(1).kind, OperandKind::kDirect);
  EXPECT_EQ(i[2].operand(1).value, 0x3000u);
  EXPECT_EQ(i[3].operand(1).kind, OperandKind::kImm);
  EXPECT_EQ(i[3].operand(1).value, 6u);  // entry pc of helper
  EXPECT_EQ(i[4].operand(2).kind, OperandKind::kSource);
  EXPECT_EQ(i[4].operand(2).value, static_cast<Word>(InputSource::kNet));
}

TEST(Assembler, DataSegments) {
  Program p = assemble(
      "fn main { HALT }\n"
      ".rodata 0x400 \"hi\\n\"\n"
      ".data 0x2000 byte 1, 2, 0xff\n"
      ".data 0x2010 word 0x01020304\n");
  ASSERT_EQ(p.data.size(), 3u);
  EXPECT_TRUE(p.data[0].read_only);
  EXPECT_EQ(p.data[0].bytes, (std::vector<std::uint8_t>{'h', 'i', '\n', 0}));
  EXPECT_EQ(p.data[1].bytes, (std::vector<std::uint8_t>{1, 2, 0xff}));
  EXPECT_EQ(p.data[2].bytes, (std::vector<std::uint8_t>{4, 3, 2, 1}));
}

TEST(Assembler, Deterministic) {
  std::string text = taintvm::read_text_file(taintvm::testing::corpus_dir() + "/format_string/program.tasm");
  EXPECT_EQ(assemble(text), assemble(text));
}

TEST(Assembler, DisassemblyRoundTrips) {
  for (const char* name : {"stack_smash", "heap_overflow", "format_string", "ghttpd_like"}) {
    Program p = assemble(taintvm::read_text_file(taintvm::testing::corpus_dir() + "/" + name + "/program.tasm"));
    EXPECT_EQ(assemble(disassemble(p)), p) << name;
  }
}

TEST(Assembler, StackSmashCorpusShape) {
  Program p = assemble(taintvm::read_text_file(taintvm::testing::corpus_dir() + "/stack_smash/program.tasm"));
  int calls = 0, rets = 0, strcpys = 0;
  for (const auto& ins : p.instructions) {
    calls += ins.op == Opcode::kCall;
    rets += ins.op == Opcode::kRet;
    strcpys += ins.op == Opcode::kStrcpy;
  }
  EXPECT_EQ(p.instructions.size(), 11u);
  EXPECT_EQ(calls, 1);
  EXPECT_EQ(rets, 1);
  EXPECT_EQ(strcpys, 1);
}

TEST(Unescape, Sequences) {
  EXPECT_EQ(unescape("a\\n\\t\\\\\\x41\\0"), std::string("a\n\t\\A\0", 6));
}

namespace {

std::vector<StepEvent> trace(const std::string& src, std::vector<std::string> input = {}) {
  Program p = assemble(src);
  MachineState s = make_machine(p, std::move(input));
  std::vector<StepEvent> out;
  while (!s.halted) out.push_back(step(s, p));
  return out;
}

}  // namespace

TEST(Machine, MovConstEvent) {
  auto ev = trace("fn main { MOV r1, 5 HALT }");
  ASSERT_EQ(ev.size(), 3u);  // entry call, MOV, HALT
  EXPECT_EQ(ev[0].kind, EventKind::kCall);
  EXPECT_EQ(ev[1].kind, EventKind::kConst);
  EXPECT_EQ(ev[1].dst, Location::of(Reg::kR1));
  EXPECT_EQ(ev[2].kind, EventKind::kHalt);
}

TEST(Machine, StoreFpRelativeEvent) {
  Program p = assemble("fn main { SUB sp, 16 STORE [fp-8], r2 HALT }");
  MachineState s = make_machine(p, {});
  step(s, p);
  Word fp = s.reg(Reg::kFp);
  step(s, p);
  StepEvent ev = step(s, p);
  EXPECT_EQ(ev.kind, EventKind::kMove);
  EXPECT_EQ(ev.dst, Location::mem(fp - 8, 4));
  EXPECT_EQ(ev.src[0], Location::of(Reg::kR2));
}

TEST(Machine, CallWritesReturnSlot) {
  Program p = assemble("fn main { CALL f HALT }\nfn f { RET }\n");
  MachineState s = make_machine(p, {});
  step(s, p);
  Word sp = s.reg(Reg::kSp);
  StepEvent call = step(s, p);
  EXPECT_EQ(call.kind, EventKind::kCall);
  EXPECT_EQ(call.dst, Location::mem(sp - 4, 4));
  EXPECT_EQ(call.frame_fp, sp - 4);
  EXPECT_EQ(s.frames.size(), 2u);
  EXPECT_EQ(s.frames.back().return_slot, sp - 4);
  EXPECT_EQ(s.read_word(sp - 4), 1u);  // index of HALT
  StepEvent ret = step(s, p);
  EXPECT_EQ(ret.kind, EventKind::kRet);
  EXPECT_EQ(s.frames.size(), 1u);
  EXPECT_EQ(s.reg(Reg::kSp), sp);
}

TEST(Machine, NullPageFaults) {
  auto ev = trace("fn main { LOAD r1, [0x10] HALT }");
  EXPECT_EQ(ev.back().kind, EventKind::kFault);
  EXPECT_TRUE(ev.back().fault_on_memory);
}

TEST(Machine, OutOfRangeFaults) {
  auto ev = trace("fn main { STORE [0x200000], 1 HALT }");
  EXPECT_EQ(ev.back().kind, EventKind::kFault);
}

TEST(Machine, ReadInputCountAndNul) {
  Program p = assemble("fn main { READINPUT 0x2000, 4, stdin HALT }");
  MachineState s = make_machine(p, {"abcdef"});
  step(s, p);
  StepEvent ev = step(s, p);
  EXPECT_EQ(ev.kind, EventKind::kInput);
  EXPECT_EQ(ev.dst, Location::mem(0x2000, 4));
  EXPECT_EQ(s.reg(Reg::kR0), 3u);
  EXPECT_EQ(*s.read_string(0x2000), "abc");
}

TEST(Machine, MallocLayout) {
  Program p = assemble("fn main { MALLOC r1, 32 MALLOC r2, 5 HALT }");
  MachineState s = make_machine(p, {});
  step(s, p);
  StepEvent a = step(s, p);
  StepEvent b = step(s, p);
  EXPECT_EQ(a.chunk_base, 0x00080008u);
  EXPECT_EQ(s.reg(Reg::kR1), 0x00080008u);
  EXPECT_EQ(s.read_word(0x00080000), 32u);
  EXPECT_EQ(s.read_word(0x00080004), kChunkInUse);
  EXPECT_EQ(b.chunk_base, 0x00080008u + 32 + 8);
}

TEST(Machine, ZeroIdiomDetected) {
  auto ev = trace("fn main { XOR r2, r2 SUB r5, r5 XOR r2, r3 HALT }");
  EXPECT_EQ(ev[1].kind, EventKind::kZeroIdiom);
  EXPECT_EQ(ev[2].kind, EventKind::kZeroIdiom);
  EXPECT_EQ(ev[3].kind, EventKind::kArith);
}

TEST(Machine, ExitSyscall) {
  Program p = assemble("fn main { MOV r0, 1 MOV r1, 7 SYSCALL HALT }");
  MachineState s = make_machine(p, {});
  while (!s.halted) step(s, p);
  ASSERT_TRUE(s.exit_status);
  EXPECT_EQ(*s.exit_status, 7u);
}

TEST(Machine, CallRetPairing) {
  Program p = assemble(
      "fn main { MOV r1, 3 CALL rec HALT }\n"
      "fn rec { SUB sp, 8 DEC r1 JZ out CALL rec\nout:\n RET }\n");
  MachineState s = make_machine(p, {});
  std::vector<std::size_t> depth_before_call;
  while (!s.halted) {
    std::size_t d = s.frames.size();
    StepEvent ev = step(s, p);
    if (ev.kind == EventKind::kCall) depth_before_call.push_back(d);
    if (ev.kind == EventKind::kRet) {
      ASSERT_FALSE(depth_before_call.empty());
      EXPECT_EQ(s.frames.size(), depth_before_call.back());
      depth_before_call.pop_back();
    }
  }
}

TEST(Machine, DeterministicEvents) {
  auto p = taintvm::testing::random_program(99);
  auto run_once = [&] {
    Program prog = assemble(p.source);
    MachineState s = make_machine(prog, p.input);
    std::vector<std::pair<EventKind, Location>> out;
    while (!s.halted) {
      StepEvent ev = step(s, prog);
      out.emplace_back(ev.kind, ev.dst);
    }
    return out;
  };
  EXPECT_EQ(run_once(), run_once());
}

TEST(InputScript, EscapesAndLines) {
  auto lines = parse_input_script("abc\nx\\x41\\n\n");
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[0], "abc");
  EXPECT_EQ(lines[1], "xA\n");
}
