#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace taintvm {

using Word = std::uint32_t;

enum class Opcode : std::uint8_t {
  kMov,
  kLoad,
  kStore,
  kPush,
  kPop,
  kAdd,
  kSub,
  kXor,
  kInc,
  kDec,
  kCmp,
  kJmp,
  kJz,
  kJnz,
  kCall,
  kRet,
  kSyscall,
  kMemcpy,
  kStrcpy,
  kMemset,
  kMalloc,
  kFree,
  kPrintf,
  kReadInput,
  kHalt,
};

inline constexpr int kOpcodeCount = static_cast<int>(Opcode::kHalt) + 1;

std::string_view opcode_name(Opcode op);
std::optional<Opcode> parse_opcode(std::string_view text);

// r0..r7, then the frame and stack pointers. The numbering doubles as the
// register's tag slot.
enum class Reg : std::uint8_t { kR0, kR1, kR2, kR3, kR4, kR5, kR6, kR7, kFp, kSp };

inline constexpr int kRegisterCount = 10;

std::string_view reg_name(Reg reg);
std::optional<Reg> parse_reg(std::string_view text);

enum class InputSource : std::uint8_t { kStdin, kArgv, kEnv, kNet, kFile };

inline constexpr int kInputSourceCount = 5;

std::string_view source_name(InputSource source);
std::optional<InputSource> parse_source(std::string_view text);

enum class OperandKind : std::uint8_t {
  kNone,
  kReg,      // r3
  kImm,      // 42, 0x10, 'A', NAME, &function
  kDirect,   // [0x1000]
  kFpRel,    // [fp-20]
  kRegDisp,  // [r1+0x1000], [sp]
  kCode,     // jump label (instruction index) or CALL target (function index)
  kSource,   // untrusted input source of READINPUT
};

struct Operand {
  OperandKind kind = OperandKind::kNone;
  Reg reg = Reg::kR0;
  Word value = 0;         // immediate, direct address, code target, source
  std::int32_t disp = 0;  // displacement for kFpRel / kRegDisp

  bool is_memory() const {
    return kind == OperandKind::kDirect || kind == OperandKind::kFpRel ||
           kind == OperandKind::kRegDisp;
  }
  friend bool operator==(const Operand&, const Operand&) = default;
};

struct Instruction {
  Opcode op = Opcode::kHalt;
  std::array<Operand, 3> operands{};
  std::uint8_t operand_count = 0;
  int line = 0;  // source line, 0 when synthesized

  const Operand& operand(int i) const { return operands[static_cast<std::size_t>(i)]; }
  friend bool operator==(const Instruction& a, const Instruction& b) {
    return a.op == b.op && a.operands == b.operands && a.operand_count == b.operand_count;
  }
};

struct Function {
  std::string name;
  Word entry = 0;  // first instruction index
  Word end = 0;    // one past the last instruction
  std::vector<std::pair<std::string, Word>> labels;
  friend bool operator==(const Function& a, const Function& b) {
    return a.name == b.name && a.entry == b.entry && a.end == b.end;
  }
};

struct DataSegment {
  Word address = 0;
  std::vector<std::uint8_t> bytes;
  bool read_only = false;
  friend bool operator==(const DataSegment&, const DataSegment&) = default;
};

// Fixed regions of the flat address space. Everything below rodata_begin is
// the unmapped null page.
struct MemoryLayout {
  Word size = 1u << 20;
  Word rodata_begin = 0x00000400;
  Word globals_begin = 0x00001000;
  Word heap_begin = 0x00080000;
  Word stack_begin = 0x000C0000;

  Word rodata_end() const { return globals_begin; }
  Word globals_end() const { return heap_begin; }
  Word heap_end() const { return stack_begin; }
  Word stack_end() const { return size; }

  bool is_read_only(Word addr) const { return addr >= rodata_begin && addr < globals_begin; }
  bool in_stack(Word addr) const { return addr >= stack_begin && addr <= size; }
  bool in_heap(Word addr) const { return addr >= heap_begin && addr < stack_begin; }
  bool mapped(Word addr) const { return addr >= rodata_begin && addr < size; }
};

struct Program {
  std::vector<Function> functions;
  std::vector<Instruction> instructions;
  std::vector<DataSegment> data;
  std::size_t entry = 0;  // index into functions: `main` if present, else the first

  std::optional<std::size_t> find_function(std::string_view name) const;
  // Function whose body contains the instruction index.
  std::optional<std::size_t> function_at(Word pc) const;

  friend bool operator==(const Program& a, const Program& b) {
    return a.functions == b.functions && a.instructions == b.instructions && a.data == b.data &&
           a.entry == b.entry;
  }
};

std::string to_string(const Operand& operand);
std::string to_string(const Instruction& instruction, const Program* program = nullptr);

// Renders a program back into assembly text accepted by assemble().
std::string disassemble(const Program& program);

}  // namespace taintvm
