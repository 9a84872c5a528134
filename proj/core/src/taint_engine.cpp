#include "taintvm/taint_engine.hpp"

#include <algorithm>
#include <cstdio>

namespace taintvm {

namespace {

constexpr std::array<std::string_view, 17> kRuleNames = {
    "none",   "input",   "move",         "const", "arith", "zero-idiom", "unary",
    "indexed-load", "copy", "set", "format-write", "call", "ret", "syscall",
    "alloc",  "free",    "lifetime",
};

bool covers(const TaintEntity& outer, const TaintEntity& inner) {
  if (outer.kind != inner.kind) return false;
  if (outer.kind != TaintEntity::Kind::kBytes) return outer.id == inner.id;
  return outer.id <= inner.id && outer.id + outer.len >= inner.id + inner.len;
}

}  // namespace

std::string_view rule_name(Rule rule) { return kRuleNames[static_cast<std::size_t>(rule)]; }

Rule rule_for(EventKind kind) {
  switch (kind) {
    case EventKind::kMove: return Rule::kMove;
    case EventKind::kConst: return Rule::kConst;
    case EventKind::kArith: return Rule::kArith;
    case EventKind::kZeroIdiom: return Rule::kZeroIdiom;
    case EventKind::kUnary: return Rule::kUnary;
    case EventKind::kIndexedLoad: return Rule::kIndexedLoad;
    case EventKind::kCompare: return Rule::kNone;
    case EventKind::kJump: return Rule::kNone;
    case EventKind::kCall: return Rule::kCall;
    case EventKind::kRet: return Rule::kRet;
    case EventKind::kSyscall: return Rule::kSyscall;
    case EventKind::kCopy: return Rule::kCopy;
    case EventKind::kSet: return Rule::kSet;
    case EventKind::kAlloc: return Rule::kAlloc;
    case EventKind::kFree: return Rule::kFree;
    case EventKind::kPrintf: return Rule::kFormatWrite;
    case EventKind::kInput: return Rule::kInput;
    case EventKind::kHalt: return Rule::kNone;
    case EventKind::kFault: return Rule::kNone;
  }
  throw std::logic_error("event kind without a propagation rule");
}

bool TaintEntity::overlaps(const TaintEntity& other) const {
  if (kind != other.kind) return false;
  if (kind != Kind::kBytes) return id == other.id;
  return id < other.id + other.len && other.id < id + len;
}

std::vector<ProvenanceEntry> ProvenanceLog::slice(std::vector<TaintEntity> roots) const {
  std::vector<std::size_t> picked;
  for (std::size_t i = entries_.size(); i-- > 0 && !roots.empty();) {
    const ProvenanceEntry& e = entries_[i];
    if (!e.tag) continue;
    bool hit = false;
    for (const auto& w : roots) hit = hit || e.dst.overlaps(w);
    if (!hit) continue;
    picked.push_back(i);
    if (e.full) {
      roots.erase(std::remove_if(roots.begin(), roots.end(),
                                 [&](const TaintEntity& w) { return covers(e.dst, w); }),
                  roots.end());
    }
    for (const auto& s : e.srcs) {
      if (s.tag && std::find(roots.begin(), roots.end(), s.entity) == roots.end()) roots.push_back(s.entity);
    }
  }
  std::vector<ProvenanceEntry> out;
  for (auto it = picked.rbegin(); it != picked.rend(); ++it) out.push_back(entries_[*it]);
  return out;
}

std::string format_entity(const TaintEntity& entity, const ObjectTable* table) {
  char buf[48];
  switch (entity.kind) {
    case TaintEntity::Kind::kReg:
      return std::string(reg_name(static_cast<Reg>(entity.id)));
    case TaintEntity::Kind::kObject: {
      std::string name = table ? table->record(entity.record).name : "obj" + std::to_string(entity.record);
      return name + "#" + std::to_string(entity.id);
    }
    case TaintEntity::Kind::kBytes:
      std::snprintf(buf, sizeof buf, "bytes@0x%08X:%u", static_cast<Word>(entity.id), entity.len);
      return buf;
  }
  return "?";
}

std::string format_provenance(const ProvenanceEntry& entry, const ObjectTable* table) {
  std::string out = std::to_string(entry.step);
  out += ' ';
  out += rule_name(entry.rule);
  out += ' ';
  if (entry.srcs.empty()) out += '-';
  for (std::size_t i = 0; i < entry.srcs.size(); ++i) {
    if (i) out += ',';
    out += format_entity(entry.srcs[i].entity, table);
  }
  out += " -> ";
  out += format_entity(entry.dst, table);
  out += entry.tag ? " 1" : " 0";
  return out;
}

std::string format_provenance(const std::vector<ProvenanceEntry>& entries, const ObjectTable* table) {
  std::string out;
  for (const auto& e : entries) {
    out += format_provenance(e, table);
    out += '\n';
  }
  return out;
}

void apply_lifecycle(ObjectTable& table, const Program& program, const StepEvent& event,
                     LifecycleDelta& delta) {
  switch (event.kind) {
    case EventKind::kCall: {
      std::string_view name =
          event.function < program.functions.size() ? program.functions[event.function].name : "?";
      delta.created.push_back(table.add_return_slot(name, event.frame_fp, event.frame_depth));
      auto locals = table.enter_frame(name, event.frame_fp, event.frame_depth);
      delta.created.insert(delta.created.end(), locals.begin(), locals.end());
      return;
    }
    case EventKind::kRet:
      delta.removed = table.exit_frame(event.frame_depth);
      return;
    case EventKind::kAlloc:
      if (event.chunk_base != 0) {
        auto pair = table.register_heap_object(event.chunk_base, event.chunk_size);
        delta.created.push_back(pair.tag);
        delta.created.push_back(pair.payload);
      }
      return;
    case EventKind::kFree:
      if (event.invalid_free) {
        delta.double_free = true;
      } else if (event.chunk_base != 0) {
        auto removed = table.unregister_heap_object(event.chunk_base);
        if (removed)
          delta.removed = std::move(*removed);
        else
          delta.double_free = true;
      }
      return;
    default:
      return;
  }
}

TaintEngine::TaintEngine(const Program& program, ObjectTable table, const EngineOptions& options)
    : program_(program), table_(std::move(table)), tags_(options.tag_capacity), options_(options) {
  log_.enabled = options.provenance;
  on_created(table_.live_objects(), 0);
}

std::optional<TagCoordinate> TaintEngine::coordinate(ObjectHandle handle) const {
  if (handle < has_coord_.size() && has_coord_[handle]) return coords_[handle];
  return std::nullopt;
}

void TaintEngine::set_object_tag(ObjectHandle h, bool tag) {
  if (h < has_coord_.size() && has_coord_[h]) tags_.write(coords_[h], tag);
}

void TaintEngine::on_created(const std::vector<LiveObject>& created, std::uint64_t step) {
  const bool any_spill = tags_.spill_count() > 0;
  std::vector<bool> absorb(created.size(), false);
  for (std::size_t i = 0; i < created.size(); ++i) {
    const LiveObject& o = created[i];
    if (o.handle >= has_coord_.size()) {
      has_coord_.resize(o.handle + 1, 0);
      coords_.resize(o.handle + 1);
    }
    if (o.read_only) continue;
    coords_[o.handle] = tags_.assign();
    has_coord_[o.handle] = 1;
    if (any_spill) {
      counters_.reads += o.size;
      absorb[i] = tags_.spill_any(o.base, o.size);
    }
  }
  if (!any_spill) return;
  for (std::size_t i = 0; i < created.size(); ++i) {
    const LiveObject& o = created[i];
    if (!absorb[i]) continue;
    set_object_tag(o.handle, true);
    ++counters_.writes;
    log(step, Rule::kLifetime, {{TaintEntity::bytes(o.base, o.size), true}}, TaintEntity::object(o), true, true);
  }
  for (const LiveObject& o : created) {
    if (o.read_only) continue;
    tags_.spill_fill(o.base, o.size, false);
    counters_.writes += o.size;
  }
}

void TaintEngine::on_removed(const std::vector<RemovedObject>& removed, std::uint64_t step) {
  std::vector<Segment> after;
  for (const RemovedObject& r : removed) {
    ObjectHandle h = r.object.handle;
    if (h >= has_coord_.size() || !has_coord_[h]) continue;
    bool tag = tags_.read(coords_[h]);
    ++counters_.reads;
    if (tag) {
      std::vector<ProvenanceSource> src{{TaintEntity::object(r.object), true}};
      for (const Segment& seg : r.owned) {
        table_.segments(seg.begin, seg.len, after);
        for (const Segment& s : after) {
          if (s.object != kNoObject) continue;
          spill_set(s.begin, s.len, true, Rule::kLifetime, src, step);
        }
      }
      ++counters_.writes;
      log(step, Rule::kLifetime, {}, TaintEntity::object(r.object), false, true);
    }
    tags_.release(coords_[h]);
    has_coord_[h] = 0;
  }
}

void TaintEngine::spill_set(Word addr, Word len, bool tag, Rule rule, const std::vector<ProvenanceSource>& srcs,
                            std::uint64_t step) {
  tags_.spill_fill(addr, len, tag);
  counters_.writes += len;
  log(step, rule, srcs, TaintEntity::bytes(addr, len), tag, true);
}

bool TaintEngine::read_slow(const Location& loc, std::vector<ProvenanceSource>* srcs) {
  if (loc.is_reg()) {
    ++counters_.reads;
    bool t = tags_.read(loc.reg);
    if (srcs) srcs->push_back({TaintEntity::reg(loc.reg), t});
    return t;
  }
  if (!loc.is_mem()) return false;
  bool any = false;
  table_.segments(loc.addr, loc.len, segs_);
  for (const Segment& s : segs_) {
    bool t;
    if (s.object == kNoObject) {
      counters_.reads += s.len;
      t = tags_.spill_any(s.begin, s.len);
      if (srcs) srcs->push_back({TaintEntity::bytes(s.begin, s.len), t});
    } else {
      ++counters_.reads;
      t = object_tag(s.object);
      if (srcs) srcs->push_back({TaintEntity::object(table_.live(s.object)), t});
    }
    any = any || t;
  }
  return any;
}

void TaintEngine::write_mem(Word addr, Word len, bool tag, Rule rule, const std::vector<ProvenanceSource>& srcs,
                            std::uint64_t step) {
  if (len == 0) return;
  const std::uint64_t end = static_cast<std::uint64_t>(addr) + len;
  if (!log_.enabled) {
    ObjectHandle h = table_.sole_owner(addr, len);
    if (h != kNoObject && table_.live(h).parent == kNoObject) {
      const LiveObject& o = table_.live(h);
      if (o.read_only || h >= has_coord_.size() || !has_coord_[h]) return;
      bool value = tag;
      if (addr > o.base || end < o.end()) {
        ++counters_.reads;
        value = tag || tags_.read(coords_[h]);
      }
      tags_.write(coords_[h], value);
      ++counters_.writes;
      ++tag_writes_;
      return;
    }
  }
  table_.segments(addr, len, wsegs_);
  touched_.clear();
  for (const Segment& s : wsegs_) {
    if (s.object == kNoObject) {
      spill_set(s.begin, s.len, tag, rule, srcs, step);
      continue;
    }
    for (ObjectHandle h = s.object; h != kNoObject; h = table_.live(h).parent) {
      if (std::find(touched_.begin(), touched_.end(), h) != touched_.end()) break;
      touched_.push_back(h);
    }
  }
  for (ObjectHandle h : touched_) {
    const LiveObject& o = table_.live(h);
    if (o.read_only || h >= has_coord_.size() || !has_coord_[h]) continue;
    bool full = addr <= o.base && end >= o.end();
    bool value = tag;
    if (!full) {
      ++counters_.reads;
      value = tag || tags_.read(coords_[h]);
    }
    tags_.write(coords_[h], value);
    ++counters_.writes;
    log(step, rule, srcs, TaintEntity::object(o), value, full);
  }
}

// Each destination object (and spill run) takes the OR of the source bytes that
// land on it. All slices are read before any tag is written.
void TaintEngine::copy_mem(Word dst, Word src, Word len, std::uint64_t step) {
  if (len == 0) return;
  std::vector<ProvenanceSource>* sp = nullptr;
  std::vector<ProvenanceSource> srcs;
  if (log_.enabled) sp = &srcs;
  ObjectHandle sole = table_.sole_owner(dst, len);
  if (sole != kNoObject && table_.live(sole).parent == kNoObject) {
    bool t = read(Location::mem(src, len), sp);
    write_mem(dst, len, t, Rule::kCopy, srcs, step);
    return;
  }
  const std::uint64_t end = static_cast<std::uint64_t>(dst) + len;
  table_.segments(dst, len, wsegs_);
  touched_.clear();
  slices_.clear();
  auto slice = [&](ObjectHandle h, Word b, Word n) {
    srcs.clear();
    bool t = read(Location::mem(src + (b - dst), n), sp);
    slices_.push_back({h, b, n, t, srcs});
  };
  for (const Segment& s : wsegs_) {
    if (s.object == kNoObject) {
      slice(kNoObject, s.begin, s.len);
      continue;
    }
    for (ObjectHandle h = s.object; h != kNoObject; h = table_.live(h).parent) {
      if (std::find(touched_.begin(), touched_.end(), h) != touched_.end()) break;
      touched_.push_back(h);
      const LiveObject& o = table_.live(h);
      Word b = std::max(dst, o.base);
      Word e = static_cast<Word>(std::min<std::uint64_t>(end, o.end()));
      slice(h, b, e - b);
    }
  }
  for (const SliceWrite& w : slices_) {
    if (w.object == kNoObject) {
      spill_set(w.begin, w.len, w.tag, Rule::kCopy, w.srcs, step);
      continue;
    }
    const LiveObject& o = table_.live(w.object);
    if (o.read_only || w.object >= has_coord_.size() || !has_coord_[w.object]) continue;
    bool full = dst <= o.base && end >= o.end();
    bool value = w.tag;
    if (!full) {
      ++counters_.reads;
      value = value || tags_.read(coords_[w.object]);
    }
    tags_.write(coords_[w.object], value);
    ++counters_.writes;
    log(step, Rule::kCopy, w.srcs, TaintEntity::object(o), value, full);
  }
}

void TaintEngine::mark_input_tainted(Word addr, Word len, InputSource source, std::uint64_t step) {
  bool untrusted = options_.untrusted[static_cast<std::size_t>(source)];
  write_mem(addr, len, untrusted, Rule::kInput, {}, step);
}

void TaintEngine::apply(const StepEvent& ev) {
  switch (ev.kind) {
    case EventKind::kCall:
    case EventKind::kRet:
    case EventKind::kAlloc:
    case EventKind::kFree:
      delta_.created.clear();
      delta_.removed.clear();
      delta_.double_free = false;
      apply_lifecycle(table_, program_, ev, delta_);
      if (!delta_.removed.empty()) on_removed(delta_.removed, ev.step);
      if (!delta_.created.empty()) on_created(delta_.created, ev.step);
      break;
    default:
      break;
  }

  std::vector<ProvenanceSource> srcs;
  std::vector<ProvenanceSource>* sp = log_.enabled ? &srcs : nullptr;
  const Rule rule = log_.enabled ? rule_for(ev.kind) : Rule::kNone;
  auto write = [&](const Location& dst, bool tag) {
    if (dst.is_reg())
      write_reg(dst.reg, tag, rule, srcs, ev.step);
    else if (dst.is_mem())
      write_mem(dst.addr, dst.len, tag, rule, srcs, ev.step);
  };
  auto side_const = [&] {
    if (ev.side_const.is_reg()) write_reg(ev.side_const.reg, false, rule, {}, ev.step);
  };

  switch (ev.kind) {
    case EventKind::kMove:
      write(ev.dst, read(ev.src[0], sp));
      return;
    case EventKind::kCopy:
      if (ev.dst.is_mem() && ev.src[0].is_mem() && ev.dst.len == ev.src[0].len)
        copy_mem(ev.dst.addr, ev.src[0].addr, ev.dst.len, ev.step);
      else
        write(ev.dst, read(ev.src[0], sp));
      return;
    case EventKind::kConst:
    case EventKind::kCall:
    case EventKind::kFree:
      write(ev.dst, false);
      return;
    case EventKind::kArith: {
      bool t = false;
      for (std::uint8_t i = 0; i < ev.src_count; ++i) t = read(ev.src[i], sp) || t;
      write(ev.dst, t);
      return;
    }
    case EventKind::kZeroIdiom:
      write(ev.dst, false);
      return;
    case EventKind::kIndexedLoad: {
      bool t = read(ev.src[0], sp);
      t = read(Location::of(*ev.index), sp) || t;
      write(ev.dst, t);
      return;
    }
    case EventKind::kSet:
      write(ev.dst, ev.src_count ? read(ev.src[0], sp) : false);
      return;
    case EventKind::kAlloc:
      side_const();
      write(ev.dst, false);
      return;
    case EventKind::kSyscall:
      side_const();
      return;
    case EventKind::kPrintf:
      if (!ev.format_writes.empty()) {
        bool t = read(ev.format, sp);
        for (const Location& w : ev.format_writes) write(w, t);
      }
      return;
    case EventKind::kInput:
      side_const();
      if (ev.dst.is_mem()) mark_input_tainted(ev.dst.addr, ev.dst.len, ev.source, ev.step);
      return;
    case EventKind::kUnary:
    case EventKind::kCompare:
    case EventKind::kJump:
    case EventKind::kRet:
    case EventKind::kHalt:
    case EventKind::kFault:
      return;
  }
}

bool TaintEngine::tainted(const Location& loc) const {
  if (loc.is_reg()) return tags_.read(loc.reg);
  if (!loc.is_mem()) return false;
  std::vector<Segment> segs;
  table_.segments(loc.addr, loc.len, segs);
  for (const Segment& s : segs) {
    if (s.object == kNoObject ? tags_.spill_any(s.begin, s.len) : object_tag(s.object)) return true;
  }
  return false;
}

std::vector<TaintEntity> TaintEngine::tainted_entities(const Location& loc) const {
  std::vector<TaintEntity> out;
  if (loc.is_reg()) {
    if (tags_.read(loc.reg)) out.push_back(TaintEntity::reg(loc.reg));
    return out;
  }
  if (!loc.is_mem()) return out;
  std::vector<Segment> segs;
  table_.segments(loc.addr, loc.len, segs);
  for (const Segment& s : segs) {
    if (s.object == kNoObject) {
      for (Word i = 0; i < s.len; ++i)
        if (tags_.spill_read(s.begin + i)) out.push_back(TaintEntity::bytes(s.begin + i, 1));
    } else if (object_tag(s.object)) {
      auto e = TaintEntity::object(table_.live(s.object));
      if (std::find(out.begin(), out.end(), e) == out.end()) out.push_back(e);
    }
  }
  return out;
}

}  // namespace taintvm
