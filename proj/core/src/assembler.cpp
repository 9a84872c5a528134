#include "taintvm/assembler.hpp"

#include <cctype>
#include <charconv>
#include <map>
#include <set>

namespace taintvm {

AssemblyError::AssemblyError(int line, int column, const std::string& message)
    : std::runtime_error("line " + std::to_string(line) + ", column " + std::to_string(column) +
                         ": " + message),
      line_(line),
      column_(column),
      message_(message) {}

std::string unescape(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (c != '\\' || i + 1 == text.size()) {
      out.push_back(c);
      continue;
    }
    char e = text[++i];
    switch (e) {
      case 'n': out.push_back('\n'); break;
      case 't': out.push_back('\t'); break;
      case 'r': out.push_back('\r'); break;
      case '0': out.push_back('\0'); break;
      case '\\': out.push_back('\\'); break;
      case '"': out.push_back('"'); break;
      case '\'': out.push_back('\''); break;
      case 'x': {
        unsigned value = 0;
        int digits = 0;
        while (digits < 2 && i + 1 < text.size() && std::isxdigit(static_cast<unsigned char>(text[i + 1]))) {
          char h = text[++i];
          value = value * 16 + static_cast<unsigned>(std::isdigit(static_cast<unsigned char>(h))
                                                         ? h - '0'
                                                         : (std::tolower(h) - 'a' + 10));
          ++digits;
        }
        if (digits == 0) {
          out += "\\x";
        } else {
          out.push_back(static_cast<char>(value));
        }
        break;
      }
      default:
        out.push_back('\\');
        out.push_back(e);
    }
  }
  return out;
}

namespace {

enum class Tok { kIdent, kNumber, kChar, kString, kPunct, kEnd };

struct Token {
  Tok kind = Tok::kEnd;
  std::string text;  // identifier, punctuation, or decoded string/char
  Word value = 0;
  int line = 0;
  int column = 0;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    while (true) {
      skip_space();
      Token tok;
      tok.line = line_;
      tok.column = col_;
      if (pos_ >= src_.size()) {
        out.push_back(tok);
        return out;
      }
      char c = src_[pos_];
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '$') {
        tok.kind = Tok::kIdent;
        while (pos_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) ||
                                      src_[pos_] == '_' || src_[pos_] == '.' || src_[pos_] == '$')) {
          tok.text.push_back(advance());
        }
      } else if (std::isdigit(static_cast<unsigned char>(c))) {
        tok.kind = Tok::kNumber;
        std::string digits;
        while (pos_ < src_.size() && std::isalnum(static_cast<unsigned char>(src_[pos_]))) {
          digits.push_back(advance());
        }
        tok.text = digits;
        tok.value = parse_number(digits, tok);
      } else if (c == '\'') {
        advance();
        std::string raw;
        while (pos_ < src_.size() && src_[pos_] != '\'') {
          if (src_[pos_] == '\\' && pos_ + 1 < src_.size()) raw.push_back(advance());
          raw.push_back(advance());
        }
        if (pos_ >= src_.size()) throw AssemblyError(tok.line, tok.column, "unterminated character literal");
        advance();
        std::string decoded = unescape(raw);
        if (decoded.size() != 1) throw AssemblyError(tok.line, tok.column, "character literal must be one byte");
        tok.kind = Tok::kChar;
        tok.value = static_cast<unsigned char>(decoded[0]);
      } else if (c == '"') {
        advance();
        std::string raw;
        while (pos_ < src_.size() && src_[pos_] != '"' && src_[pos_] != '\n') {
          if (src_[pos_] == '\\' && pos_ + 1 < src_.size()) raw.push_back(advance());
          raw.push_back(advance());
        }
        if (pos_ >= src_.size() || src_[pos_] != '"') {
          throw AssemblyError(tok.line, tok.column, "unterminated string literal");
        }
        advance();
        tok.kind = Tok::kString;
        tok.text = unescape(raw);
      } else if (std::string_view("{}[],:+-&").find(c) != std::string_view::npos) {
        tok.kind = Tok::kPunct;
        tok.text.push_back(advance());
      } else {
        throw AssemblyError(tok.line, tok.column, std::string("unexpected character '") + c + "'");
      }
      out.push_back(std::move(tok));
    }
  }

 private:
  char advance() {
    char c = src_[pos_++];
    if (c == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    return c;
  }

  void skip_space() {
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (c == ';') {
        while (pos_ < src_.size() && src_[pos_] != '\n') advance();
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else {
        return;
      }
    }
  }

  static Word parse_number(const std::string& digits, const Token& tok) {
    std::uint64_t value = 0;
    const char* first = digits.data();
    const char* last = digits.data() + digits.size();
    int base = 10;
    if (digits.size() > 2 && digits[0] == '0' && (digits[1] == 'x' || digits[1] == 'X')) {
      first += 2;
      base = 16;
    }
    auto [ptr, ec] = std::from_chars(first, last, value, base);
    if (ec != std::errc() || ptr != last || value > 0xFFFFFFFFull) {
      throw AssemblyError(tok.line, tok.column, "invalid number '" + digits + "'");
    }
    return static_cast<Word>(value);
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

// Allowed operand kinds per position.
enum KindMask : unsigned {
  R = 1u << 0,
  I = 1u << 1,
  M = 1u << 2,
  C = 1u << 3,
  S = 1u << 4,
};

struct Shape {
  int min;
  int max;
  std::array<unsigned, 3> kinds;
};

Shape shape_of(Opcode op) {
  switch (op) {
    case Opcode::kMov: return {2, 2, {R, R | I, 0}};
    case Opcode::kLoad: return {2, 3, {R, M, I}};
    case Opcode::kStore: return {2, 3, {M, R | I, I}};
    case Opcode::kPush: return {1, 1, {R | I, 0, 0}};
    case Opcode::kPop: return {1, 1, {R, 0, 0}};
    case Opcode::kAdd:
    case Opcode::kSub:
    case Opcode::kXor: return {2, 2, {R, R | I | M, 0}};
    case Opcode::kInc:
    case Opcode::kDec: return {1, 1, {R, 0, 0}};
    case Opcode::kCmp: return {2, 2, {R, R | I, 0}};
    case Opcode::kJmp: return {1, 1, {C | R | M, 0, 0}};
    case Opcode::kJz:
    case Opcode::kJnz: return {1, 1, {C, 0, 0}};
    case Opcode::kCall: return {1, 1, {C | R | M, 0, 0}};
    case Opcode::kRet:
    case Opcode::kSyscall:
    case Opcode::kHalt: return {0, 0, {0, 0, 0}};
    case Opcode::kMemcpy:
    case Opcode::kMemset: return {3, 3, {R | I, R | I, R | I}};
    case Opcode::kStrcpy: return {2, 2, {R | I, R | I, 0}};
    case Opcode::kMalloc: return {2, 2, {R, R | I, 0}};
    case Opcode::kFree: return {1, 1, {R | I, 0, 0}};
    case Opcode::kPrintf: return {1, 2, {R | I, R | I, 0}};
    case Opcode::kReadInput: return {2, 3, {R | I, R | I, S}};
  }
  return {0, 0, {0, 0, 0}};
}

unsigned mask_of(OperandKind kind) {
  switch (kind) {
    case OperandKind::kReg: return R;
    case OperandKind::kImm: return I;
    case OperandKind::kDirect:
    case OperandKind::kFpRel:
    case OperandKind::kRegDisp: return M;
    case OperandKind::kCode: return C;
    case OperandKind::kSource: return S;
    case OperandKind::kNone: return 0;
  }
  return 0;
}

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

struct Fixup {
  std::size_t instruction;
  int operand;
  std::string name;
  int line;
  int column;
  bool is_call;
  bool address_of;  // &fn immediate
  std::size_t function;  // enclosing function for label lookup
};

class Parser {
 public:
  Parser(std::vector<Token> tokens, const MemoryLayout& layout)
      : toks_(std::move(tokens)), layout_(layout) {}

  Program run() {
    while (peek().kind != Tok::kEnd) {
      const Token& t = peek();
      if (t.kind == Tok::kIdent && t.text == "fn") {
        parse_function();
      } else if (t.kind == Tok::kIdent && (t.text == ".data" || t.text == ".rodata")) {
        parse_data();
      } else if (t.kind == Tok::kIdent && t.text == ".equ") {
        parse_equ();
      } else {
        fail(t, "expected 'fn', '.data', '.rodata' or '.equ'");
      }
    }
    if (prog_.functions.empty()) {
      const Token& t = peek();
      throw AssemblyError(t.line, t.column, "program declares no functions");
    }
    resolve();
    if (auto main = prog_.find_function("main")) prog_.entry = *main;
    return std::move(prog_);
  }

 private:
  [[noreturn]] static void fail(const Token& t, const std::string& msg) {
    throw AssemblyError(t.line, t.column, msg);
  }

  const Token& peek(std::size_t ahead = 0) const {
    std::size_t i = std::min(pos_ + ahead, toks_.size() - 1);
    return toks_[i];
  }
  const Token& next() {
    const Token& t = toks_[pos_];
    if (pos_ + 1 < toks_.size()) ++pos_;
    return t;
  }
  bool is_punct(const Token& t, char c) const {
    return t.kind == Tok::kPunct && t.text.size() == 1 && t.text[0] == c;
  }
  void expect(char c) {
    const Token& t = next();
    if (!is_punct(t, c)) fail(t, std::string("expected '") + c + "'");
  }
  std::string expect_ident(const char* what) {
    const Token& t = next();
    if (t.kind != Tok::kIdent) fail(t, std::string("expected ") + what);
    return t.text;
  }

  // term (('+'|'-') term)*, where term is a number, char, or .equ name.
  Word parse_value() {
    Word value = parse_term();
    while (is_punct(peek(), '+') || is_punct(peek(), '-')) {
      bool minus = next().text == "-";
      Word rhs = parse_term();
      value = minus ? value - rhs : value + rhs;
    }
    return value;
  }

  Word parse_term() {
    const Token& t = next();
    if (is_punct(t, '-')) return 0u - parse_term();
    if (t.kind == Tok::kNumber || t.kind == Tok::kChar) return t.value;
    if (t.kind == Tok::kIdent) {
      auto it = equs_.find(t.text);
      if (it != equs_.end()) return it->second;
      fail(t, "unknown symbol '" + t.text + "'");
    }
    fail(t, "expected a value");
  }

  bool starts_value(const Token& t) const {
    return t.kind == Tok::kNumber || t.kind == Tok::kChar || is_punct(t, '-') ||
           (t.kind == Tok::kIdent && equs_.count(t.text) != 0);
  }

  void parse_equ() {
    next();
    const Token& name_tok = peek();
    std::string name = expect_ident("a name after .equ");
    if (equs_.count(name) != 0) fail(name_tok, "duplicate .equ '" + name + "'");
    equs_[name] = parse_value();
  }

  void parse_data() {
    const Token& directive = next();
    bool read_only = directive.text == ".rodata";
    DataSegment seg;
    seg.read_only = read_only;
    seg.address = parse_value();
    const Token& t = peek();
    if (t.kind == Tok::kString) {
      next();
      seg.bytes.assign(t.text.begin(), t.text.end());
      seg.bytes.push_back(0);
    } else if (t.kind == Tok::kIdent && (t.text == "byte" || t.text == "word")) {
      bool word = next().text == "word";
      do {
        Word v = parse_value();
        if (word) {
          for (int i = 0; i < 4; ++i) seg.bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        } else {
          if (v > 0xFF && v < 0xFFFFFF80u) fail(t, "byte value out of range");
          seg.bytes.push_back(static_cast<std::uint8_t>(v));
        }
      } while (is_punct(peek(), ',') && (next(), true));
    } else {
      fail(t, "expected a string, 'byte' or 'word' after the data address");
    }
    Word begin = read_only ? layout_.rodata_begin : layout_.globals_begin;
    Word end = read_only ? layout_.rodata_end() : layout_.globals_end();
    std::uint64_t last = static_cast<std::uint64_t>(seg.address) + seg.bytes.size();
    if (seg.address < begin || last > end) {
      fail(directive, std::string(read_only ? "read-only data" : "data") +
                          " does not fit in its region");
    }
    prog_.data.push_back(std::move(seg));
  }

  void parse_function() {
    next();
    const Token& name_tok = peek();
    std::string name = expect_ident("a function name");
    if (prog_.find_function(name)) fail(name_tok, "duplicate function '" + name + "'");
    expect('{');
    Function fn;
    fn.name = name;
    fn.entry = static_cast<Word>(prog_.instructions.size());
    std::size_t fn_index = prog_.functions.size();
    std::map<std::string, Word> labels;
    while (!is_punct(peek(), '}')) {
      const Token& t = peek();
      if (t.kind == Tok::kEnd) fail(t, "missing '}' for function '" + name + "'");
      if (t.kind != Tok::kIdent) fail(t, "expected an instruction or label");
      if (is_punct(peek(1), ':')) {
        next();
        next();
        if (labels.count(t.text) != 0) fail(t, "duplicate label '" + t.text + "'");
        labels[t.text] = static_cast<Word>(prog_.instructions.size());
        continue;
      }
      parse_instruction(fn_index);
    }
    next();
    fn.end = static_cast<Word>(prog_.instructions.size());
    fn.labels.assign(labels.begin(), labels.end());
    prog_.functions.push_back(std::move(fn));
  }

  void parse_instruction(std::size_t fn_index) {
    const Token& op_tok = next();
    auto op = parse_opcode(upper(op_tok.text));
    if (!op) fail(op_tok, "unknown opcode '" + op_tok.text + "'");
    Shape shape = shape_of(*op);
    Instruction ins;
    ins.op = *op;
    ins.line = op_tok.line;
    std::size_t index = prog_.instructions.size();
    if (shape.max > 0) {
      int count = 0;
      while (true) {
        if (count == shape.max) fail(peek(), "too many operands for " + op_tok.text);
        const Token& at = peek();
        Operand operand = parse_operand(*op, count, index, fn_index);
        if ((mask_of(operand.kind) & shape.kinds[static_cast<std::size_t>(count)]) == 0) {
          fail(at, "operand " + std::to_string(count + 1) + " of " + op_tok.text +
                       " has the wrong kind");
        }
        ins.operands[static_cast<std::size_t>(count)] = operand;
        ++count;
        if (!is_punct(peek(), ',')) break;
        next();
      }
      if (count < shape.min) fail(op_tok, op_tok.text + " expects at least " +
                                            std::to_string(shape.min) + " operands");
      ins.operand_count = static_cast<std::uint8_t>(count);
    }
    if ((*op == Opcode::kLoad || *op == Opcode::kStore) && ins.operand_count == 3) {
      Word width = ins.operand(2).value;
      if (width != 1 && width != 2 && width != 4) fail(op_tok, "access width must be 1, 2 or 4");
    }
    prog_.instructions.push_back(ins);
  }

  Operand parse_operand(Opcode op, int position, std::size_t index, std::size_t fn_index) {
    Operand operand;
    const Token& t = peek();
    if (is_punct(t, '[')) {
      next();
      const Token& inner = peek();
      if (inner.kind == Tok::kIdent) {
        if (auto reg = parse_reg(lower(inner.text))) {
          next();
          operand.kind = *reg == Reg::kFp ? OperandKind::kFpRel : OperandKind::kRegDisp;
          operand.reg = *reg;
          if (is_punct(peek(), '+') || is_punct(peek(), '-')) {
            bool minus = next().text == "-";
            Word v = parse_value();
            operand.disp = static_cast<std::int32_t>(minus ? 0u - v : v);
          }
          expect(']');
          return operand;
        }
      }
      operand.kind = OperandKind::kDirect;
      operand.value = parse_value();
      expect(']');
      return operand;
    }
    if (is_punct(t, '&')) {
      next();
      const Token& name = peek();
      std::string fn = expect_ident("a function name after '&'");
      operand.kind = OperandKind::kImm;
      fixups_.push_back({index, position, fn, name.line, name.column, false, true, fn_index});
      return operand;
    }
    if (t.kind == Tok::kIdent && !equs_.count(t.text)) {
      if (auto reg = parse_reg(lower(t.text))) {
        next();
        operand.kind = OperandKind::kReg;
        operand.reg = *reg;
        return operand;
      }
      if (op == Opcode::kReadInput && position == 2) {
        auto source = parse_source(lower(t.text));
        if (!source) fail(t, "unknown input source '" + t.text + "'");
        next();
        operand.kind = OperandKind::kSource;
        operand.value = static_cast<Word>(*source);
        return operand;
      }
      if (op == Opcode::kJmp || op == Opcode::kJz || op == Opcode::kJnz || op == Opcode::kCall) {
        next();
        operand.kind = OperandKind::kCode;
        fixups_.push_back({index, position, t.text, t.line, t.column, op == Opcode::kCall, false,
                           fn_index});
        return operand;
      }
      fail(t, "unknown symbol '" + t.text + "'");
    }
    if (starts_value(t)) {
      operand.kind = OperandKind::kImm;
      operand.value = parse_value();
      return operand;
    }
    fail(t, "expected an operand");
  }

  void resolve() {
    for (const Fixup& f : fixups_) {
      Operand& operand = prog_.instructions[f.instruction].operands[static_cast<std::size_t>(f.operand)];
      if (f.is_call || f.address_of) {
        auto fn = prog_.find_function(f.name);
        if (!fn) throw AssemblyError(f.line, f.column, "undefined function '" + f.name + "'");
        operand.value = f.is_call ? static_cast<Word>(*fn) : prog_.functions[*fn].entry;
        continue;
      }
      const Function& fn = prog_.functions[f.function];
      bool found = false;
      for (const auto& [name, target] : fn.labels) {
        if (name == f.name) {
          operand.value = target;
          found = true;
          break;
        }
      }
      if (!found) throw AssemblyError(f.line, f.column, "undefined label '" + f.name + "'");
    }
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  const MemoryLayout& layout_;
  Program prog_;
  std::map<std::string, Word> equs_;
  std::vector<Fixup> fixups_;
};

}  // namespace

Program assemble(std::string_view source, const MemoryLayout& layout) {
  return Parser(Lexer(source).run(), layout).run();
}

}  // namespace taintvm
