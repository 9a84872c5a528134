#include "taintvm/policy.hpp"

#include <algorithm>
#include <cstdio>

#include <nlohmann/json.hpp>

namespace taintvm {

namespace {

constexpr std::array<std::string_view, kCheckCount> kCheckNames = {"branch", "format", "syscall", "controldata",
                                                                   "noncontrol"};

std::string slug(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return c == '_' ? '-' : static_cast<char>(std::tolower(c)); });
  return out;
}

std::string hex32(Word v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08X", v);
  return buf;
}

}  // namespace

std::string_view check_name(Check check) { return kCheckNames[static_cast<std::size_t>(check)]; }

std::optional<Check> parse_check(std::string_view name) {
  for (std::size_t i = 0; i < kCheckNames.size(); ++i)
    if (kCheckNames[i] == name) return static_cast<Check>(i);
  return std::nullopt;
}

std::string_view severity_name(Severity severity) {
  switch (severity) {
    case Severity::kShadow: return "SHADOW";
    case Severity::kNoncontrol: return "NONCONTROL";
    case Severity::kControl: return "CONTROL";
  }
  return "?";
}

std::optional<Severity> parse_severity(std::string_view name) {
  for (auto s : {Severity::kShadow, Severity::kNoncontrol, Severity::kControl})
    if (severity_name(s) == name) return s;
  return std::nullopt;
}

int exit_code_for(Severity severity) {
  switch (severity) {
    case Severity::kShadow: return 4;
    case Severity::kNoncontrol: return 2;
    case Severity::kControl: return 3;
  }
  return 1;
}

PolicyConfig PolicyConfig::parse(std::string_view text) {
  PolicyConfig config;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    std::vector<std::string_view> f;
    for (std::size_t i = 0; i < line.size();) {
      while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      std::size_t j = i;
      while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
      if (j > i) f.push_back(line.substr(i, j - i));
      i = j;
    }
    if (f.empty()) continue;
    auto fail = [&](const std::string& msg) { throw FormatError(line_no, msg); };
    auto on_off = [&](std::string_view v) {
      if (v == "on") return true;
      if (v == "off") return false;
      fail("expected on or off, got '" + std::string(v) + "'");
      return false;
    };
    if (f[0] == "source") {
      if (f.size() != 3) fail("expected: source <stdin|argv|env|net|file> <on|off>");
      auto src = parse_source(f[1]);
      if (!src) fail("unknown source '" + std::string(f[1]) + "'");
      config.untrusted[static_cast<std::size_t>(*src)] = on_off(f[2]);
    } else if (f[0] == "check") {
      if (f.size() != 3) fail("expected: check <name> <on|off>");
      auto check = parse_check(f[1]);
      if (!check) fail("unknown check '" + std::string(f[1]) + "'");
      config.checks[static_cast<std::size_t>(*check)] = on_off(f[2]);
    } else if (f[0] == "watch") {
      if (f.size() != 2) fail("expected: watch <object-name>");
      config.watchlist.emplace_back(f[1]);
    } else {
      fail("unknown directive '" + std::string(f[0]) + "'");
    }
  }
  return config;
}

EngineOptions PolicyConfig::engine_options() const {
  EngineOptions options;
  options.untrusted = untrusted;
  return options;
}

std::string report_json(const AttackReport& r) {
  nlohmann::ordered_json j;
  j["policy"] = r.policy;
  j["kind"] = r.kind;
  j["severity"] = severity_name(r.severity);
  j["step"] = r.step;
  j["pc"] = r.pc;
  j["instruction"] = r.instruction;
  j["objects"] = r.objects;
  j["taint_chain"] = r.chain_text;
  j["detail"] = r.detail;
  return j.dump();
}

std::string report_summary(const AttackReport& r) {
  std::string out = std::string(severity_name(r.severity)) + " " + r.kind + " at step " + std::to_string(r.step);
  if (r.pc >= 0) out += " (pc " + std::to_string(r.pc) + ": " + r.instruction + ")";
  if (!r.detail.empty()) out += ": " + r.detail;
  return out;
}

PolicyEngine::PolicyEngine(PolicyConfig config, const Program& program)
    : config_(std::move(config)), program_(program) {}

AttackReport PolicyEngine::make(const TaintView& view, const StepEvent& ev, Check check, Severity severity,
                                std::string kind, const Location& tainted_source) const {
  AttackReport r;
  r.policy = check_name(check);
  r.kind = std::move(kind);
  r.severity = severity;
  r.step = ev.step;
  r.pc = ev.pc;
  if (ev.pc >= 0 && static_cast<std::size_t>(ev.pc) < program_.instructions.size())
    r.instruction = to_string(program_.instructions[ev.pc], &program_);
  else
    r.instruction = "<entry>";
  if (!tainted_source.is_none()) r.taint_chain = view.provenance().slice(view.tainted_entities(tainted_source));
  if (r.taint_chain.empty() && ev.kind == EventKind::kInput && ev.dst.is_mem()) {
    r.taint_chain.push_back({ev.step, Rule::kInput, {}, TaintEntity::bytes(ev.dst.addr, ev.dst.len), true, true});
  }
  for (const auto& e : r.taint_chain) r.chain_text.push_back(format_provenance(e, &view.objects()));
  return r;
}

bool PolicyEngine::watched(const ObjectTable& table, ObjectHandle handle) const {
  const LiveObject& o = table.live(handle);
  for (const auto& name : config_.watchlist)
    if (table.record_within(o.record, name)) return true;
  return false;
}

std::optional<AttackReport> PolicyEngine::check_branch(const TaintView& view, const StepEvent& ev) const {
  if (!config_.enabled(Check::kBranch)) return std::nullopt;
  if (ev.kind != EventKind::kJump && ev.kind != EventKind::kCall && ev.kind != EventKind::kRet) return std::nullopt;
  if (ev.target_src.is_none() || !view.tainted(ev.target_src)) return std::nullopt;
  std::string kind = ev.kind == EventKind::kRet ? "tainted-return-address" : "tainted-branch-target";
  AttackReport r = make(view, ev, Check::kBranch, Severity::kControl, kind, ev.target_src);
  if (ev.target_src.is_mem()) {
    if (auto o = view.objects().resolve(ev.target_src.addr)) r.objects.push_back(view.objects().describe(o->handle));
  } else {
    r.objects.emplace_back(reg_name(ev.target_src.reg));
  }
  r.detail = "branch target " + hex32(ev.target) + " comes from tainted data";
  return r;
}

std::optional<AttackReport> PolicyEngine::check_format(const TaintView& view, const StepEvent& ev) const {
  if (!config_.enabled(Check::kFormat) || ev.kind != EventKind::kPrintf) return std::nullopt;
  if (!view.tainted(ev.format)) return std::nullopt;
  AttackReport r = make(view, ev, Check::kFormat, Severity::kControl, "tainted-format-string", ev.format);
  if (auto o = view.objects().resolve(ev.format.addr)) r.objects.push_back(view.objects().describe(o->handle));
  r.detail = "format string at " + hex32(ev.format.addr) + " is tainted";
  return r;
}

std::optional<AttackReport> PolicyEngine::check_syscall(const TaintView& view, const StepEvent& ev) const {
  if (!config_.enabled(Check::kSyscall) || ev.kind != EventKind::kSyscall) return std::nullopt;
  if (ev.syscall_no != static_cast<Word>(Syscall::kExec)) return std::nullopt;
  Location arg = Location::of(Reg::kR1);
  bool reg_tainted = view.tainted(arg);
  bool path_tainted = ev.exec_path.is_mem() && view.tainted(ev.exec_path);
  if (!reg_tainted && !path_tainted) return std::nullopt;
  AttackReport r = make(view, ev, Check::kSyscall, Severity::kNoncontrol, "tainted-syscall-argument",
                        reg_tainted ? arg : ev.exec_path);
  if (reg_tainted) r.objects.emplace_back("r1");
  if (path_tainted) {
    if (auto o = view.objects().resolve(ev.exec_path.addr)) r.objects.push_back(view.objects().describe(o->handle));
  }
  r.detail = "EXEC argument is tainted";
  return r;
}

std::optional<AttackReport> PolicyEngine::check_heap_free(const TaintView& view, const StepEvent& ev) const {
  if (!config_.enabled(Check::kControlData) || ev.kind != EventKind::kFree) return std::nullopt;
  if (ev.invalid_free) {
    AttackReport r = make(view, ev, Check::kControlData, Severity::kControl, "double-free", Location::none());
    r.detail = "FREE of " + hex32(ev.chunk_base) + ", which is not a live allocation";
    return r;
  }
  auto pair = view.objects().heap_object(ev.chunk_base);
  if (!pair) return std::nullopt;
  Location tag = Location::mem(pair->tag.base, pair->tag.size);
  if (!view.tainted(tag)) return std::nullopt;
  AttackReport r = make(view, ev, Check::kControlData, Severity::kControl, "tainted-boundary-tag", tag);
  r.objects.push_back(view.objects().describe(pair->tag.handle));
  r.detail = "boundary tag of chunk " + hex32(ev.chunk_base) + " is tainted";
  return r;
}

void PolicyEngine::check_write(const TaintView& view, const StepEvent& ev, const Location& dst, const Location& src,
                               bool src_tainted, std::vector<AttackReport>& out) const {
  if (!src_tainted || !dst.is_mem() || dst.len == 0) return;
  const ObjectTable& table = view.objects();
  std::vector<Segment> segs;
  table.segments(dst.addr, dst.len, segs);
  const ObjectHandle first = table.owner(dst.addr);

  if (config_.enabled(Check::kNoncontrol) && first != kNoObject) {
    const LiveObject& a = table.live(first);
    std::optional<ObjectHandle> victim;
    for (const Segment& s : segs) {
      if (s.object == kNoObject || s.object == first) continue;
      const LiveObject& b = table.live(s.object);
      // Control data is reported once, by the control-data check when it is on.
      if (b.control != ControlKind::kNone && config_.enabled(Check::kControlData)) continue;
      bool encloses = b.base <= a.base && b.end() >= a.end() && b.nesting < a.nesting;
      if (encloses) continue;
      if (!victim || (b.control != ControlKind::kNone && table.live(*victim).control == ControlKind::kNone))
        victim = s.object;
    }
    if (victim) {
      const LiveObject& b = table.live(*victim);
      bool control = b.control != ControlKind::kNone;
      AttackReport r = make(view, ev, Check::kNoncontrol, control ? Severity::kControl : Severity::kNoncontrol,
                            control ? "overflow-into-control-data" : "object-overflow", src);
      r.objects = {table.describe(first), table.describe(*victim)};
      r.detail = "write of " + std::to_string(dst.len) + " bytes at " + hex32(dst.addr) + " leaves " +
                 table.describe(first) + " and reaches " + table.describe(*victim);
      out.push_back(std::move(r));
    }
  }

  if (config_.enabled(Check::kControlData)) {
    for (const Segment& s : segs) {
      if (s.object == kNoObject) continue;
      const LiveObject& o = table.live(s.object);
      if (o.control == ControlKind::kNone) continue;
      AttackReport r = make(view, ev, Check::kControlData, Severity::kControl,
                            "tainted-" + slug(control_kind_name(o.control)), src);
      r.objects = {table.describe(s.object)};
      r.detail = "tainted write reaches " + table.describe(s.object);
      out.push_back(std::move(r));
      break;
    }
  }

  if (config_.enabled(Check::kNoncontrol) && !config_.watchlist.empty()) {
    for (const Segment& s : segs) {
      ObjectHandle hit = kNoObject;
      for (ObjectHandle h = s.object; h != kNoObject && hit == kNoObject; h = table.live(h).parent)
        if (watched(table, h)) hit = h;
      if (hit == kNoObject) continue;
      AttackReport r = make(view, ev, Check::kNoncontrol, Severity::kNoncontrol, "watched-object-tainted", src);
      r.objects = {table.describe(hit)};
      r.detail = "tainted write into security-critical " + table.describe(hit);
      out.push_back(std::move(r));
      break;
    }
  }
}

std::vector<AttackReport> PolicyEngine::check_bounds_write(const TaintView& view, const StepEvent& ev) const {
  std::vector<AttackReport> out;
  switch (ev.kind) {
    case EventKind::kMove:
    case EventKind::kCopy:
      if (ev.dst.is_mem()) check_write(view, ev, ev.dst, ev.src[0], view.tainted(ev.src[0]), out);
      break;
    case EventKind::kSet:
      if (ev.src_count) check_write(view, ev, ev.dst, ev.src[0], view.tainted(ev.src[0]), out);
      break;
    case EventKind::kInput:
      check_write(view, ev, ev.dst, Location::none(), config_.untrusted[static_cast<std::size_t>(ev.source)], out);
      break;
    case EventKind::kPrintf:
      if (!ev.format_writes.empty()) {
        bool t = view.tainted(ev.format);
        for (const Location& w : ev.format_writes) check_write(view, ev, w, ev.format, t, out);
      }
      break;
    default:
      break;
  }
  return out;
}

std::optional<AttackReport> PolicyEngine::check_shadow(const StepEvent& ev) const {
  if (ev.kind != EventKind::kFault || !ev.fault_on_memory) return std::nullopt;
  try {
    guarded_shadow_address(ev.fault_addr);
    return std::nullopt;
  } catch (const ShadowGuardError& e) {
    AttackReport r;
    r.policy = "shadow";
    r.kind = "shadow-address-overflow";
    r.severity = Severity::kShadow;
    r.step = ev.step;
    r.pc = ev.pc;
    r.instruction = ev.pc >= 0 && static_cast<std::size_t>(ev.pc) < program_.instructions.size()
                        ? to_string(program_.instructions[ev.pc], &program_)
                        : "<entry>";
    r.detail = e.what();
    return r;
  }
}

std::vector<AttackReport> PolicyEngine::evaluate(const TaintView& view, const StepEvent& ev) const {
  std::vector<AttackReport> out;
  if (auto r = check_shadow(ev)) out.push_back(std::move(*r));
  auto writes = check_bounds_write(view, ev);
  for (auto& r : writes) out.push_back(std::move(r));
  if (auto r = check_format(view, ev)) out.push_back(std::move(*r));
  if (auto r = check_syscall(view, ev)) out.push_back(std::move(*r));
  if (auto r = check_heap_free(view, ev)) out.push_back(std::move(*r));
  if (auto r = check_branch(view, ev)) out.push_back(std::move(*r));
  return out;
}

}  // namespace taintvm
