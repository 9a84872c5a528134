#include "taintvm/isa.hpp"

#include <cstdio>
#include <set>
#include <sstream>

namespace taintvm {
namespace {

constexpr std::array<std::string_view, kOpcodeCount> kOpcodeNames = {
    "MOV",  "LOAD", "STORE",  "PUSH",   "POP",    "ADD",    "SUB",    "XOR",   "INC",
    "DEC",  "CMP",  "JMP",    "JZ",     "JNZ",    "CALL",   "RET",    "SYSCALL",
    "MEMCPY", "STRCPY", "MEMSET", "MALLOC", "FREE", "PRINTF", "READINPUT", "HALT",
};

constexpr std::array<std::string_view, kRegisterCount> kRegNames = {
    "r0", "r1", "r2", "r3", "r4", "r5", "r6", "r7", "fp", "sp",
};

constexpr std::array<std::string_view, kInputSourceCount> kSourceNames = {
    "stdin", "argv", "env", "net", "file",
};

std::string hex(Word value) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08X", value);
  return buf;
}

std::string signed_disp(std::int32_t disp) {
  if (disp == 0) return "";
  char buf[24];
  if (disp < 0) {
    std::snprintf(buf, sizeof buf, "-%u", static_cast<unsigned>(-static_cast<std::int64_t>(disp)));
  } else {
    std::snprintf(buf, sizeof buf, "+%d", disp);
  }
  return buf;
}

}  // namespace

std::string_view opcode_name(Opcode op) { return kOpcodeNames[static_cast<std::size_t>(op)]; }

std::optional<Opcode> parse_opcode(std::string_view text) {
  for (std::size_t i = 0; i < kOpcodeNames.size(); ++i) {
    if (kOpcodeNames[i] == text) return static_cast<Opcode>(i);
  }
  return std::nullopt;
}

std::string_view reg_name(Reg reg) { return kRegNames[static_cast<std::size_t>(reg)]; }

std::optional<Reg> parse_reg(std::string_view text) {
  for (std::size_t i = 0; i < kRegNames.size(); ++i) {
    if (kRegNames[i] == text) return static_cast<Reg>(i);
  }
  return std::nullopt;
}

std::string_view source_name(InputSource source) {
  return kSourceNames[static_cast<std::size_t>(source)];
}

std::optional<InputSource> parse_source(std::string_view text) {
  for (std::size_t i = 0; i < kSourceNames.size(); ++i) {
    if (kSourceNames[i] == text) return static_cast<InputSource>(i);
  }
  return std::nullopt;
}

std::optional<std::size_t> Program::find_function(std::string_view name) const {
  for (std::size_t i = 0; i < functions.size(); ++i) {
    if (functions[i].name == name) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> Program::function_at(Word pc) const {
  for (std::size_t i = 0; i < functions.size(); ++i) {
    if (pc >= functions[i].entry && pc < functions[i].end) return i;
  }
  return std::nullopt;
}

std::string to_string(const Operand& operand) {
  switch (operand.kind) {
    case OperandKind::kNone:
      return "";
    case OperandKind::kReg:
      return std::string(reg_name(operand.reg));
    case OperandKind::kImm:
      return hex(operand.value);
    case OperandKind::kDirect:
      return "[" + hex(operand.value) + "]";
    case OperandKind::kFpRel:
    case OperandKind::kRegDisp:
      return "[" + std::string(reg_name(operand.reg)) + signed_disp(operand.disp) + "]";
    case OperandKind::kCode:
      return "L" + std::to_string(operand.value);
    case OperandKind::kSource:
      return std::string(source_name(static_cast<InputSource>(operand.value)));
  }
  return "?";
}

std::string to_string(const Instruction& instruction, const Program* program) {
  std::string out(opcode_name(instruction.op));
  for (int i = 0; i < instruction.operand_count; ++i) {
    out += i == 0 ? " " : ", ";
    const Operand& operand = instruction.operand(i);
    // Direct CALL operands hold a function index rather than an instruction index.
    if (instruction.op == Opcode::kCall && operand.kind == OperandKind::kCode) {
      if (program != nullptr && operand.value < program->functions.size()) {
        out += program->functions[operand.value].name;
      } else {
        out += "F" + std::to_string(operand.value);
      }
    } else {
      out += to_string(operand);
    }
  }
  return out;
}

std::string disassemble(const Program& program) {
  std::ostringstream out;
  for (const auto& segment : program.data) {
    out << (segment.read_only ? ".rodata " : ".data ") << hex(segment.address) << " byte";
    for (std::size_t i = 0; i < segment.bytes.size(); ++i) {
      out << (i == 0 ? " " : ", ") << static_cast<unsigned>(segment.bytes[i]);
    }
    out << "\n";
  }

  for (const Function& fn : program.functions) {
    std::set<Word> targets;
    for (Word pc = fn.entry; pc < fn.end; ++pc) {
      const Instruction& instruction = program.instructions[pc];
      for (int i = 0; i < instruction.operand_count; ++i) {
        const Operand& operand = instruction.operand(i);
        if (operand.kind == OperandKind::kCode && instruction.op != Opcode::kCall) {
          targets.insert(operand.value);
        }
      }
    }
    out << "fn " << fn.name << " {\n";
    for (Word pc = fn.entry; pc <= fn.end; ++pc) {
      if (targets.count(pc) != 0) out << "L" << pc << ":\n";
      if (pc < fn.end) out << "  " << to_string(program.instructions[pc], &program) << "\n";
    }
    out << "}\n";
  }
  return out.str();
}

}  // namespace taintvm
