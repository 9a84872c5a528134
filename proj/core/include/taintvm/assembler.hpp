#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include "taintvm/isa.hpp"

namespace taintvm {

class AssemblyError : public std::runtime_error {
 public:
  AssemblyError(int line, int column, const std::string& message);

  int line() const { return line_; }
  int column() const { return column_; }
  const std::string& message() const { return message_; }

 private:
  int line_;
  int column_;
  std::string message_;
};

// Parses the textual assembly format (see docs/formats.md). The result is a
// pure function of the text: same input, identical Program.
Program assemble(std::string_view source, const MemoryLayout& layout = {});

// Decodes the escape sequences used by input scripts and string literals:
// \n \t \0 \\ \" \' and \xHH.
std::string unescape(std::string_view text);

}  // namespace taintvm
