#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "taintvm/isa.hpp"

namespace taintvm {

// Return address pushed by the implicit call of the entry function.
inline constexpr Word kExitSentinel = 0xFFFFFFFFu;

// Allocator chunk header: [4-byte size][4-byte status][payload].
inline constexpr Word kChunkHeaderSize = 8;
inline constexpr Word kChunkInUse = 1;
inline constexpr Word kChunkFree = 0;

// VM system call numbers (value of r0 at SYSCALL).
enum class Syscall : Word {
  kExit = 1,
  kWrite = 4,
  kExec = 11,
  kGetUid = 24,
};

struct Frame {
  std::size_t function = 0;
  Word saved_fp = 0;
  Word return_slot = 0;  // address of the pushed return address; also the callee's fp
};

struct MachineConfig {
  MemoryLayout layout;
  std::uint64_t step_limit = 50'000'000;
};

struct MachineState {
  std::array<Word, kRegisterCount> regs{};
  Word pc = 0;
  bool zero_flag = false;
  bool started = false;
  bool halted = false;
  std::vector<std::uint8_t> mem;
  std::vector<Frame> frames;
  MemoryLayout layout;

  // Bump allocator state; payload base -> requested size.
  Word heap_top = 0;
  std::map<Word, Word> live_chunks;

  std::vector<std::string> input;  // one entry per READINPUT
  std::size_t input_cursor = 0;

  std::string output;  // PRINTF and WRITE
  std::optional<std::string> exec_path;
  std::optional<Word> exit_status;
  std::optional<std::string> fault;
  std::uint64_t steps = 0;

  Word reg(Reg r) const { return regs[static_cast<std::size_t>(r)]; }
  Word& reg(Reg r) { return regs[static_cast<std::size_t>(r)]; }
  Word read_word(Word addr) const;
  // Reads a NUL-terminated string; nullopt if it runs off the end of memory.
  std::optional<std::string> read_string(Word addr) const;
};

MachineState make_machine(const Program& program, std::vector<std::string> input,
                          const MachineConfig& config = {});

// Splits an input script into lines and decodes escapes (\xHH etc.).
std::vector<std::string> parse_input_script(std::string_view text);

// A register or a byte range of memory.
struct Location {
  enum class Kind : std::uint8_t { kNone, kReg, kMem };
  Kind kind = Kind::kNone;
  Reg reg = Reg::kR0;
  Word addr = 0;
  Word len = 0;

  static Location none() { return {}; }
  static Location of(Reg r) { return {Kind::kReg, r, 0, 0}; }
  static Location mem(Word addr, Word len) { return {Kind::kMem, Reg::kR0, addr, len}; }
  bool is_reg() const { return kind == Kind::kReg; }
  bool is_mem() const { return kind == Kind::kMem; }
  bool is_none() const { return kind == Kind::kNone; }
  friend bool operator==(const Location&, const Location&) = default;
};

enum class EventKind : std::uint8_t {
  kMove,         // dst <- src (register or memory)
  kConst,        // dst <- immediate
  kArith,        // dst <- dst op src
  kZeroIdiom,    // XOR r,r / SUB r,r
  kUnary,        // INC / DEC
  kIndexedLoad,  // dst <- mem[base + index]
  kCompare,      // CMP: zero flag only
  kJump,         // JMP / JZ / JNZ
  kCall,
  kRet,
  kSyscall,
  kCopy,      // MEMCPY / STRCPY
  kSet,       // MEMSET
  kAlloc,     // MALLOC
  kFree,      // FREE
  kPrintf,    // PRINTF, possibly writing through %n
  kInput,     // READINPUT
  kHalt,
  kFault,
};

inline constexpr int kEventKindCount = static_cast<int>(EventKind::kFault) + 1;

std::string_view event_kind_name(EventKind kind);

// Everything a taint engine or policy needs to apply its rules to one executed
// instruction, without decoding the instruction again.
struct StepEvent {
  std::uint64_t step = 0;
  std::int64_t pc = -1;  // -1 for the implicit entry call
  Opcode op = Opcode::kHalt;
  EventKind kind = EventKind::kHalt;

  Location dst;
  std::array<Location, 2> src{};
  std::uint8_t src_count = 0;
  std::optional<Reg> index;  // kIndexedLoad

  // Register set to a constant as a side effect (r0 of READINPUT/SYSCALL,
  // pointer result of MALLOC).
  Location side_const;

  // Control transfer. target_src is none for direct targets.
  Word target = 0;
  Location target_src;

  // kCall: new frame. kRet: frame being left.
  std::size_t function = 0;
  Word frame_fp = 0;
  std::size_t frame_depth = 0;

  // kAlloc / kFree
  Word chunk_base = 0;
  Word chunk_size = 0;
  bool invalid_free = false;

  // kPrintf: format string bytes, and %n writes (each sourced from the format).
  Location format;
  std::vector<Location> format_writes;

  InputSource source = InputSource::kStdin;

  // kSyscall
  Word syscall_no = 0;
  std::array<Word, 3> syscall_args{};
  Location exec_path;  // path string of EXEC
  bool unknown_syscall = false;

  // kFault
  Word fault_addr = 0;
  bool fault_on_memory = false;
  std::string fault_message;
};

// Executes exactly one instruction. Memory effects are committed before
// returning. Throws std::logic_error if the machine is already halted.
StepEvent step(MachineState& state, const Program& program);

// Runs to completion, discarding events.
void run_bare(MachineState& state, const Program& program, std::uint64_t step_limit);

}  // namespace taintvm
