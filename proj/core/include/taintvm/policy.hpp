#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "taintvm/machine.hpp"
#include "taintvm/object_model.hpp"
#include "taintvm/taint_engine.hpp"

namespace taintvm {

enum class Check : std::uint8_t { kBranch, kFormat, kSyscall, kControlData, kNoncontrol };
inline constexpr std::size_t kCheckCount = 5;

// Ordered by exit-code precedence: CONTROL beats NONCONTROL beats SHADOW.
enum class Severity : std::uint8_t { kShadow, kNoncontrol, kControl };

std::string_view check_name(Check check);
std::optional<Check> parse_check(std::string_view name);
std::string_view severity_name(Severity severity);
std::optional<Severity> parse_severity(std::string_view name);
int exit_code_for(Severity severity);

struct PolicyConfig {
  std::array<bool, 5> untrusted{true, true, true, true, true};  // by InputSource
  std::array<bool, kCheckCount> checks{true, true, true, true, true};
  std::vector<std::string> watchlist;

  // Line format: `source <kind> <on|off>`, `check <name> <on|off>`,
  // `watch <object-name>`. Unlisted sources and checks default to on.
  static PolicyConfig parse(std::string_view text);

  bool enabled(Check c) const { return checks[static_cast<std::size_t>(c)]; }
  EngineOptions engine_options() const;
};

struct AttackReport {
  std::string policy;  // check name, or "shadow" for the tag-space guard
  std::string kind;  // e.g. "tainted-return-address"
  Severity severity = Severity::kControl;
  std::uint64_t step = 0;
  std::int64_t pc = -1;
  std::string instruction;
  std::vector<std::string> objects;
  std::vector<ProvenanceEntry> taint_chain;
  std::vector<std::string> chain_text;  // taint_chain rendered with object names
  std::string detail;
};

// One JSON object on a single line.
std::string report_json(const AttackReport& report);
std::string report_summary(const AttackReport& report);

class PolicyEngine {
 public:
  PolicyEngine(PolicyConfig config, const Program& program);

  const PolicyConfig& config() const { return config_; }

  // Runs every enabled check that applies to the event. Call before the
  // engine applies the event, so the checks see the pre-state.
  std::vector<AttackReport> evaluate(const TaintView& view, const StepEvent& event) const;

  std::optional<AttackReport> check_branch(const TaintView& view, const StepEvent& event) const;
  std::optional<AttackReport> check_format(const TaintView& view, const StepEvent& event) const;
  std::optional<AttackReport> check_syscall(const TaintView& view, const StepEvent& event) const;
  std::optional<AttackReport> check_heap_free(const TaintView& view, const StepEvent& event) const;
  std::vector<AttackReport> check_bounds_write(const TaintView& view, const StepEvent& event) const;
  std::optional<AttackReport> check_shadow(const StepEvent& event) const;

 private:
  AttackReport make(const TaintView& view, const StepEvent& event, Check check, Severity severity,
                    std::string kind, const Location& tainted_source) const;
  bool watched(const ObjectTable& table, ObjectHandle handle) const;
  void check_write(const TaintView& view, const StepEvent& event, const Location& dst, const Location& src,
                   bool src_tainted, std::vector<AttackReport>& out) const;

  PolicyConfig config_;
  const Program& program_;
};

}  // namespace taintvm
