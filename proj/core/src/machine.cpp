#include "taintvm/machine.hpp"

#include <cstdio>
#include <cstring>
#include <stdexcept>

#include "taintvm/assembler.hpp"

namespace taintvm {
namespace {

constexpr std::array<std::string_view, kEventKindCount> kEventKindNames = {
    "move", "const", "arith", "zero-idiom", "unary", "indexed-load", "compare",
    "jump", "call", "ret",   "syscall",    "copy",  "set",          "alloc",
    "free", "printf", "input", "halt",     "fault",
};

class Executor {
 public:
  Executor(MachineState& state, const Program& program) : s_(state), prog_(program) {
    ev_.step = s_.steps;
  }

  StepEvent run() {
    if (!s_.started) {
      s_.started = true;
      const Function& entry = prog_.functions[prog_.entry];
      do_call(prog_.entry, entry.entry, kExitSentinel);
      return finish();
    }
    if (s_.pc >= prog_.instructions.size()) {
      set_fault("program counter out of range", s_.pc, false);
      return finish();
    }
    const Instruction& ins = prog_.instructions[s_.pc];
    ev_.pc = s_.pc;
    ev_.op = ins.op;
    next_pc_ = s_.pc + 1;
    execute(ins);
    if (!failed_ && !s_.halted) {
      if (!s_.layout.in_stack(s_.reg(Reg::kSp)) || !s_.layout.in_stack(s_.reg(Reg::kFp))) {
        set_fault("stack pointer left the stack region", s_.reg(Reg::kSp), false);
        return finish();
      }
      s_.pc = next_pc_;
    }
    return finish();
  }

 private:
  StepEvent finish() {
    ++s_.steps;
    return std::move(ev_);
  }

  void set_fault(const std::string& message, Word addr, bool on_memory) {
    failed_ = true;
    StepEvent f;
    f.step = ev_.step;
    f.pc = ev_.pc;
    f.op = ev_.op;
    f.kind = EventKind::kFault;
    f.fault_addr = addr;
    f.fault_on_memory = on_memory;
    f.fault_message = message;
    ev_ = std::move(f);
    s_.fault = message;
    s_.halted = true;
  }

  // Records a fault and returns false so callers can bail out.
  bool fail(const std::string& message, Word addr, bool on_memory = true) {
    set_fault(message, addr, on_memory);
    return false;
  }

  bool readable(Word addr, std::uint64_t len) {
    if (addr < s_.layout.rodata_begin || addr + len > s_.layout.size) {
      return fail("read outside mapped memory", addr);
    }
    return true;
  }

  bool writable(Word addr, std::uint64_t len) {
    if (addr < s_.layout.globals_begin || addr + len > s_.layout.size) {
      return fail(addr >= s_.layout.rodata_begin && addr < s_.layout.globals_begin
                      ? "write to read-only memory"
                      : "write outside mapped memory",
                  addr);
    }
    return true;
  }

  Word load(Word addr, Word width) const {
    Word v = 0;
    for (Word i = 0; i < width; ++i) v |= static_cast<Word>(s_.mem[addr + i]) << (8 * i);
    return v;
  }

  void store(Word addr, Word value, Word width) {
    for (Word i = 0; i < width; ++i) s_.mem[addr + i] = static_cast<std::uint8_t>(value >> (8 * i));
  }

  Word address_of(const Operand& op) const {
    if (op.kind == OperandKind::kDirect) return op.value;
    return s_.reg(op.reg) + static_cast<Word>(op.disp);
  }

  Word value_of(const Operand& op) const {
    return op.kind == OperandKind::kReg ? s_.reg(op.reg) : op.value;
  }

  bool push(Word value) {
    Word sp = s_.reg(Reg::kSp) - 4;
    if (sp < s_.layout.stack_begin || sp > s_.layout.size - 4) {
      return fail("stack overflow", sp);
    }
    store(sp, value, 4);
    s_.reg(Reg::kSp) = sp;
    ev_.dst = Location::mem(sp, 4);
    return true;
  }

  void do_call(std::size_t function, Word target, Word return_address) {
    Word saved_fp = s_.reg(Reg::kFp);
    if (!push(return_address)) return;
    Word slot = s_.reg(Reg::kSp);
    s_.frames.push_back({function, saved_fp, slot});
    s_.reg(Reg::kFp) = slot;
    ev_.kind = EventKind::kCall;
    ev_.function = function;
    ev_.frame_fp = slot;
    ev_.frame_depth = s_.frames.size();
    ev_.target = target;
    s_.pc = target;
    next_pc_ = target;
  }

  void set_move(Location dst, Location src) {
    ev_.kind = EventKind::kMove;
    ev_.dst = dst;
    ev_.src[0] = src;
    ev_.src_count = 1;
  }

  void set_const(Location dst) {
    ev_.kind = EventKind::kConst;
    ev_.dst = dst;
  }

  // Target of JMP/CALL operand; false on fault.
  bool branch_target(const Operand& op, Word& target) {
    switch (op.kind) {
      case OperandKind::kCode:
        target = op.value;
        return true;
      case OperandKind::kReg:
        target = s_.reg(op.reg);
        ev_.target_src = Location::of(op.reg);
        return true;
      default: {
        Word addr = address_of(op);
        if (!readable(addr, 4)) return false;
        target = load(addr, 4);
        ev_.target_src = Location::mem(addr, 4);
        return true;
      }
    }
  }

  void execute(const Instruction& ins) {
    const Operand& a = ins.operand(0);
    const Operand& b = ins.operand(1);
    const Operand& c = ins.operand(2);
    switch (ins.op) {
      case Opcode::kMov:
        s_.reg(a.reg) = value_of(b);
        if (b.kind == OperandKind::kReg) {
          set_move(Location::of(a.reg), Location::of(b.reg));
        } else {
          set_const(Location::of(a.reg));
        }
        return;

      case Opcode::kLoad: {
        Word width = ins.operand_count == 3 ? c.value : 4;
        Word addr = address_of(b);
        if (!readable(addr, width)) return;
        s_.reg(a.reg) = load(addr, width);
        set_move(Location::of(a.reg), Location::mem(addr, width));
        if (b.kind == OperandKind::kRegDisp && b.reg != Reg::kSp) {
          ev_.kind = EventKind::kIndexedLoad;
          ev_.index = b.reg;
        }
        return;
      }

      case Opcode::kStore: {
        Word width = ins.operand_count == 3 ? c.value : 4;
        Word addr = address_of(a);
        if (!writable(addr, width)) return;
        store(addr, value_of(b), width);
        if (b.kind == OperandKind::kReg) {
          set_move(Location::mem(addr, width), Location::of(b.reg));
        } else {
          set_const(Location::mem(addr, width));
        }
        return;
      }

      case Opcode::kPush: {
        if (!push(value_of(a))) return;
        Location dst = ev_.dst;
        if (a.kind == OperandKind::kReg) {
          set_move(dst, Location::of(a.reg));
        } else {
          set_const(dst);
        }
        return;
      }

      case Opcode::kPop: {
        Word sp = s_.reg(Reg::kSp);
        if (sp < s_.layout.stack_begin || static_cast<std::uint64_t>(sp) + 4 > s_.layout.size) {
          fail("stack underflow", sp);
          return;
        }
        Word v = load(sp, 4);
        s_.reg(Reg::kSp) = sp + 4;
        s_.reg(a.reg) = v;
        set_move(Location::of(a.reg), Location::mem(sp, 4));
        return;
      }

      case Opcode::kAdd:
      case Opcode::kSub:
      case Opcode::kXor: {
        Word rhs = 0;
        Location src = Location::none();
        if (b.kind == OperandKind::kReg) {
          rhs = s_.reg(b.reg);
          src = Location::of(b.reg);
        } else if (b.is_memory()) {
          Word addr = address_of(b);
          if (!readable(addr, 4)) return;
          rhs = load(addr, 4);
          src = Location::mem(addr, 4);
        } else {
          rhs = b.value;
        }
        Word lhs = s_.reg(a.reg);
        Word result = ins.op == Opcode::kAdd ? lhs + rhs : ins.op == Opcode::kSub ? lhs - rhs : lhs ^ rhs;
        s_.reg(a.reg) = result;
        s_.zero_flag = result == 0;
        ev_.dst = Location::of(a.reg);
        if (ins.op != Opcode::kAdd && b.kind == OperandKind::kReg && b.reg == a.reg) {
          ev_.kind = EventKind::kZeroIdiom;
          return;
        }
        ev_.kind = EventKind::kArith;
        ev_.src[0] = Location::of(a.reg);
        ev_.src_count = 1;
        if (!src.is_none()) {
          ev_.src[1] = src;
          ev_.src_count = 2;
        }
        return;
      }

      case Opcode::kInc:
      case Opcode::kDec: {
        Word& r = s_.reg(a.reg);
        r = ins.op == Opcode::kInc ? r + 1 : r - 1;
        s_.zero_flag = r == 0;
        ev_.kind = EventKind::kUnary;
        ev_.dst = Location::of(a.reg);
        return;
      }

      case Opcode::kCmp:
        s_.zero_flag = s_.reg(a.reg) == value_of(b);
        ev_.kind = EventKind::kCompare;
        ev_.src[0] = Location::of(a.reg);
        ev_.src_count = 1;
        if (b.kind == OperandKind::kReg) {
          ev_.src[1] = Location::of(b.reg);
          ev_.src_count = 2;
        }
        return;

      case Opcode::kJmp:
      case Opcode::kJz:
      case Opcode::kJnz: {
        Word target = 0;
        if (!branch_target(a, target)) return;
        ev_.kind = EventKind::kJump;
        ev_.target = target;
        bool taken = ins.op == Opcode::kJmp || (ins.op == Opcode::kJz) == s_.zero_flag;
        if (taken) next_pc_ = target;
        return;
      }

      case Opcode::kCall: {
        Word target = 0;
        std::size_t function = prog_.functions.size();
        if (a.kind == OperandKind::kCode) {
          function = a.value;
          target = prog_.functions[function].entry;
        } else {
          if (!branch_target(a, target)) return;
          for (std::size_t i = 0; i < prog_.functions.size(); ++i) {
            if (prog_.functions[i].entry == target) {
              function = i;
              break;
            }
          }
          if (function == prog_.functions.size()) {
            function = prog_.function_at(target).value_or(prog_.functions.size());
          }
        }
        Location target_src = ev_.target_src;
        do_call(function, target, s_.pc + 1);
        ev_.target_src = target_src;
        return;
      }

      case Opcode::kRet: {
        if (s_.frames.empty()) {
          fail("return without a frame", s_.pc, false);
          return;
        }
        Frame frame = s_.frames.back();
        Word ret = load(frame.return_slot, 4);
        s_.frames.pop_back();
        s_.reg(Reg::kSp) = frame.return_slot + 4;
        s_.reg(Reg::kFp) = frame.saved_fp;
        ev_.kind = EventKind::kRet;
        ev_.target = ret;
        ev_.target_src = Location::mem(frame.return_slot, 4);
        ev_.function = frame.function;
        ev_.frame_fp = frame.return_slot;
        ev_.frame_depth = s_.frames.size() + 1;
        if (ret == kExitSentinel && s_.frames.empty()) {
          s_.halted = true;
          s_.exit_status = s_.reg(Reg::kR0);
        }
        next_pc_ = ret;
        return;
      }

      case Opcode::kSyscall:
        syscall();
        return;

      case Opcode::kMemcpy: {
        Word dst = value_of(a);
        Word src = value_of(b);
        Word n = value_of(c);
        if (!readable(src, n) || !writable(dst, n)) return;
        if (n != 0) std::memmove(&s_.mem[dst], &s_.mem[src], n);
        ev_.kind = EventKind::kCopy;
        ev_.dst = Location::mem(dst, n);
        ev_.src[0] = Location::mem(src, n);
        ev_.src_count = 1;
        return;
      }

      case Opcode::kStrcpy: {
        Word dst = value_of(a);
        Word src = value_of(b);
        if (!readable(src, 1)) return;
        auto str = s_.read_string(src);
        if (!str) {
          fail("unterminated string", src);
          return;
        }
        Word n = static_cast<Word>(str->size() + 1);
        if (!writable(dst, n)) return;
        std::memmove(&s_.mem[dst], &s_.mem[src], n);
        ev_.kind = EventKind::kCopy;
        ev_.dst = Location::mem(dst, n);
        ev_.src[0] = Location::mem(src, n);
        ev_.src_count = 1;
        return;
      }

      case Opcode::kMemset: {
        Word dst = value_of(a);
        Word n = value_of(c);
        if (!writable(dst, n)) return;
        if (n != 0) std::memset(&s_.mem[dst], static_cast<int>(value_of(b) & 0xFF), n);
        ev_.kind = EventKind::kSet;
        ev_.dst = Location::mem(dst, n);
        if (b.kind == OperandKind::kReg) {
          ev_.src[0] = Location::of(b.reg);
          ev_.src_count = 1;
        }
        return;
      }

      case Opcode::kMalloc: {
        Word size = std::max<Word>(value_of(b), 1);
        std::uint64_t rounded = (static_cast<std::uint64_t>(size) + 7) & ~std::uint64_t{7};
        std::uint64_t end = static_cast<std::uint64_t>(s_.heap_top) + kChunkHeaderSize + rounded;
        ev_.side_const = Location::of(a.reg);
        ev_.kind = EventKind::kAlloc;
        if (end > s_.layout.heap_end()) {
          s_.reg(a.reg) = 0;
          return;
        }
        Word header = s_.heap_top;
        Word base = header + kChunkHeaderSize;
        store(header, size, 4);
        store(header + 4, kChunkInUse, 4);
        s_.heap_top = static_cast<Word>(end);
        s_.live_chunks[base] = size;
        s_.reg(a.reg) = base;
        ev_.dst = Location::mem(header, kChunkHeaderSize);
        ev_.chunk_base = base;
        ev_.chunk_size = size;
        return;
      }

      case Opcode::kFree: {
        Word base = value_of(a);
        ev_.kind = EventKind::kFree;
        ev_.chunk_base = base;
        if (base == 0) return;
        auto it = s_.live_chunks.find(base);
        if (it == s_.live_chunks.end()) {
          ev_.invalid_free = true;
          return;
        }
        ev_.chunk_size = it->second;
        s_.live_chunks.erase(it);
        store(base - 4, kChunkFree, 4);
        ev_.dst = Location::mem(base - 4, 4);
        return;
      }

      case Opcode::kPrintf:
        printf(ins);
        return;

      case Opcode::kReadInput: {
        Word dst = value_of(a);
        Word max = value_of(b);
        ev_.kind = EventKind::kInput;
        ev_.source = ins.operand_count == 3 ? static_cast<InputSource>(c.value) : InputSource::kStdin;
        ev_.side_const = Location::of(Reg::kR0);
        if (s_.input_cursor >= s_.input.size() || max == 0) {
          s_.reg(Reg::kR0) = 0;
          ev_.dst = Location::mem(dst, 0);
          return;
        }
        const std::string& line = s_.input[s_.input_cursor];
        Word n = static_cast<Word>(std::min<std::size_t>(line.size(), max - 1));
        if (!writable(dst, static_cast<std::uint64_t>(n) + 1)) return;
        ++s_.input_cursor;
        std::memcpy(&s_.mem[dst], line.data(), n);
        s_.mem[dst + n] = 0;
        s_.reg(Reg::kR0) = n;
        ev_.dst = Location::mem(dst, n + 1);
        return;
      }

      case Opcode::kHalt:
        s_.halted = true;
        ev_.kind = EventKind::kHalt;
        return;
    }
  }

  void syscall() {
    Word no = s_.reg(Reg::kR0);
    ev_.kind = EventKind::kSyscall;
    ev_.syscall_no = no;
    ev_.syscall_args = {s_.reg(Reg::kR1), s_.reg(Reg::kR2), s_.reg(Reg::kR3)};
    switch (static_cast<Syscall>(no)) {
      case Syscall::kExit:
        s_.exit_status = s_.reg(Reg::kR1);
        s_.halted = true;
        return;
      case Syscall::kWrite: {
        Word buf = s_.reg(Reg::kR2);
        Word len = s_.reg(Reg::kR3);
        if (!readable(buf, len)) return;
        s_.output.append(reinterpret_cast<const char*>(&s_.mem[buf]), len);
        s_.reg(Reg::kR0) = len;
        ev_.side_const = Location::of(Reg::kR0);
        return;
      }
      case Syscall::kExec: {
        Word path = s_.reg(Reg::kR1);
        if (!readable(path, 1)) return;
        auto str = s_.read_string(path);
        if (!str) {
          fail("unterminated string", path);
          return;
        }
        s_.exec_path = *str;
        ev_.exec_path = Location::mem(path, static_cast<Word>(str->size() + 1));
        s_.halted = true;
        return;
      }
      case Syscall::kGetUid:
        s_.reg(Reg::kR0) = 1000;
        ev_.side_const = Location::of(Reg::kR0);
        return;
    }
    ev_.unknown_syscall = true;
    s_.reg(Reg::kR0) = 0xFFFFFFFFu;
    ev_.side_const = Location::of(Reg::kR0);
  }

  void printf(const Instruction& ins) {
    Word fmt = value_of(ins.operand(0));
    if (!readable(fmt, 1)) return;
    auto text = s_.read_string(fmt);
    if (!text) {
      fail("unterminated format string", fmt);
      return;
    }
    ev_.kind = EventKind::kPrintf;
    ev_.format = Location::mem(fmt, static_cast<Word>(text->size() + 1));

    bool have_first = ins.operand_count == 2;
    Word first = have_first ? value_of(ins.operand(1)) : 0;
    Word stack_cursor = s_.reg(Reg::kSp);
    auto next_arg = [&]() -> Word {
      if (have_first) {
        have_first = false;
        return first;
      }
      Word v = 0;
      if (stack_cursor >= s_.layout.rodata_begin &&
          static_cast<std::uint64_t>(stack_cursor) + 4 <= s_.layout.size) {
        v = load(stack_cursor, 4);
      }
      stack_cursor += 4;
      return v;
    };

    std::string out;
    char buf[32];
    for (std::size_t i = 0; i < text->size(); ++i) {
      char ch = (*text)[i];
      if (ch != '%' || i + 1 == text->size()) {
        out.push_back(ch);
        continue;
      }
      char spec = (*text)[++i];
      switch (spec) {
        case '%': out.push_back('%'); break;
        case 'd': std::snprintf(buf, sizeof buf, "%d", static_cast<std::int32_t>(next_arg())); out += buf; break;
        case 'u': std::snprintf(buf, sizeof buf, "%u", next_arg()); out += buf; break;
        case 'x': std::snprintf(buf, sizeof buf, "%x", next_arg()); out += buf; break;
        case 'c': out.push_back(static_cast<char>(next_arg() & 0xFF)); break;
        case 's': {
          Word p = next_arg();
          std::optional<std::string> str;
          if (p >= s_.layout.rodata_begin && p < s_.layout.size) str = s_.read_string(p);
          out += str ? *str : "(invalid)";
          break;
        }
        case 'n': {
          Word p = next_arg();
          if (!writable(p, 4)) return;
          store(p, static_cast<Word>(out.size()), 4);
          ev_.format_writes.push_back(Location::mem(p, 4));
          break;
        }
        default:
          out.push_back('%');
          out.push_back(spec);
      }
    }
    s_.output += out;
  }

  MachineState& s_;
  const Program& prog_;
  StepEvent ev_;
  Word next_pc_ = 0;
  bool failed_ = false;
};

}  // namespace

std::string_view event_kind_name(EventKind kind) {
  return kEventKindNames[static_cast<std::size_t>(kind)];
}

Word MachineState::read_word(Word addr) const {
  Word v = 0;
  for (Word i = 0; i < 4; ++i) v |= static_cast<Word>(mem[addr + i]) << (8 * i);
  return v;
}

std::optional<std::string> MachineState::read_string(Word addr) const {
  std::string out;
  for (std::size_t i = addr; i < mem.size(); ++i) {
    if (mem[i] == 0) return out;
    out.push_back(static_cast<char>(mem[i]));
  }
  return std::nullopt;
}

MachineState make_machine(const Program& program, std::vector<std::string> input,
                          const MachineConfig& config) {
  MachineState s;
  s.layout = config.layout;
  if (s.layout.size <= s.layout.stack_begin) {
    throw std::invalid_argument("memory size leaves no room for the stack");
  }
  s.mem.assign(s.layout.size, 0);
  for (const auto& segment : program.data) {
    if (static_cast<std::uint64_t>(segment.address) + segment.bytes.size() > s.mem.size()) {
      throw std::invalid_argument("data image does not fit in memory");
    }
    std::copy(segment.bytes.begin(), segment.bytes.end(), s.mem.begin() + segment.address);
  }
  s.reg(Reg::kSp) = s.layout.stack_end();
  s.reg(Reg::kFp) = s.layout.stack_end();
  s.heap_top = s.layout.heap_begin;
  s.input = std::move(input);
  return s;
}

std::vector<std::string> parse_input_script(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(unescape(line));
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return lines;
}

StepEvent step(MachineState& state, const Program& program) {
  if (state.halted) throw std::logic_error("step on a halted machine");
  return Executor(state, program).run();
}

void run_bare(MachineState& state, const Program& program, std::uint64_t step_limit) {
  while (!state.halted && state.steps < step_limit) step(state, program);
}

}  // namespace taintvm
