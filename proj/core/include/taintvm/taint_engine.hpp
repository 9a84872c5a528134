#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "taintvm/isa.hpp"
#include "taintvm/machine.hpp"
#include "taintvm/object_model.hpp"
#include "taintvm/tag_space.hpp"

namespace taintvm {

enum class Rule : std::uint8_t {
  kNone,  // no data flow (CMP, jumps, HALT, faults)
  kInput,
  kMove,
  kConst,
  kArith,
  kZeroIdiom,
  kUnary,
  kIndexedLoad,
  kCopy,
  kSet,
  kFormatWrite,
  kCall,
  kRet,
  kSyscall,
  kAlloc,
  kFree,
  kLifetime,  // taint handed between an object and the spill map at birth/death
};

std::string_view rule_name(Rule rule);
// The single propagation rule responsible for each event kind.
Rule rule_for(EventKind kind);

struct TaintEntity {
  enum class Kind : std::uint8_t { kReg, kObject, kBytes };
  Kind kind = Kind::kReg;
  std::uint64_t id = 0;     // register index, object instance, or first byte
  Word len = 0;             // kBytes only
  std::uint32_t record = 0;  // kObject only

  static TaintEntity reg(Reg r) { return {Kind::kReg, static_cast<std::uint64_t>(r), 0, 0}; }
  static TaintEntity object(const LiveObject& o) { return {Kind::kObject, o.instance, 0, o.record}; }
  static TaintEntity bytes(Word addr, Word len) { return {Kind::kBytes, addr, len, 0}; }

  bool overlaps(const TaintEntity& other) const;
  friend bool operator==(const TaintEntity&, const TaintEntity&) = default;
};

struct ProvenanceSource {
  TaintEntity entity;
  bool tag = false;
};

struct ProvenanceEntry {
  std::uint64_t step = 0;
  Rule rule = Rule::kNone;
  std::vector<ProvenanceSource> srcs;
  TaintEntity dst;
  bool tag = false;
  bool full = true;  // tag = OR(srcs) exactly; false for monotone partial writes
};

class ProvenanceLog {
 public:
  bool enabled = true;

  void add(ProvenanceEntry entry) {
    if (enabled) entries_.push_back(std::move(entry));
  }
  const std::vector<ProvenanceEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  // Backward slice from the given tainted entities to the input events that
  // tainted them, oldest first.
  std::vector<ProvenanceEntry> slice(std::vector<TaintEntity> roots) const;

 private:
  std::vector<ProvenanceEntry> entries_;
};

// "<step> <rule> <src-ids> -> <dst-id> <tag>"
std::string format_entity(const TaintEntity& entity, const ObjectTable* table);
std::string format_provenance(const ProvenanceEntry& entry, const ObjectTable* table);
std::string format_provenance(const std::vector<ProvenanceEntry>& entries, const ObjectTable* table);

struct ShadowCounters {
  std::uint64_t reads = 0;
  std::uint64_t writes = 0;
  std::uint64_t ops() const { return reads + writes; }
};

struct EngineOptions {
  // Indexed by InputSource; false delivers that source's input untainted.
  std::array<bool, 5> untrusted{true, true, true, true, true};
  bool provenance = true;
  std::uint32_t tag_capacity = kDefaultTagCapacity;
};

// Read-only view the policy engine evaluates against; implemented by both
// engines.
class TaintView {
 public:
  virtual ~TaintView() = default;
  virtual const ObjectTable& objects() const = 0;
  virtual bool tainted(const Location& loc) const = 0;
  // Tainted entities covering `loc`, as roots for a provenance slice.
  virtual std::vector<TaintEntity> tainted_entities(const Location& loc) const = 0;
  virtual const ProvenanceLog& provenance() const = 0;
};

struct LifecycleDelta {
  std::vector<LiveObject> created;
  std::vector<RemovedObject> removed;
  bool double_free = false;
};

// Applies the object births and deaths implied by CALL, RET, MALLOC and FREE.
void apply_lifecycle(ObjectTable& table, const Program& program, const StepEvent& event,
                     LifecycleDelta& delta);

// Object-granular engine: one taint bit per live object and per register.
class TaintEngine final : public TaintView {
 public:
  TaintEngine(const Program& program, ObjectTable table, const EngineOptions& options = {});

  void apply(const StepEvent& event);

  const ObjectTable& objects() const override { return table_; }
  bool tainted(const Location& loc) const override;
  std::vector<TaintEntity> tainted_entities(const Location& loc) const override;
  const ProvenanceLog& provenance() const override { return log_; }

  const TagSpace& tags() const { return tags_; }
  bool reg_tag(Reg r) const { return tags_.read(r); }
  bool object_tag(ObjectHandle handle) const {
    return handle < has_coord_.size() && has_coord_[handle] && tags_.read(coords_[handle]);
  }
  std::optional<TagCoordinate> coordinate(ObjectHandle handle) const;
  const ShadowCounters& counters() const { return counters_; }
  std::uint64_t tag_writes() const { return tag_writes_; }

  // Direct rule entry points. `step` stamps the provenance entries.
  void mark_input_tainted(Word addr, Word len, InputSource source, std::uint64_t step = 0);
  void write_reg(Reg dst, bool tag, Rule rule, const std::vector<ProvenanceSource>& srcs, std::uint64_t step) {
    tags_.write(dst, tag);
    ++counters_.writes;
    log(step, rule, srcs, TaintEntity::reg(dst), tag, true);
  }
  void write_mem(Word addr, Word len, bool tag, Rule rule, const std::vector<ProvenanceSource>& srcs,
                 std::uint64_t step);
  // Tag of a location, counting one shadow read per entity consulted.
  bool read(const Location& loc, std::vector<ProvenanceSource>* srcs) {
    if (loc.is_reg() && !srcs) {
      ++counters_.reads;
      return tags_.read(loc.reg);
    }
    if (loc.is_mem() && !srcs && loc.len != 0) {
      ObjectHandle h = table_.sole_owner(loc.addr, loc.len);
      if (h != kNoObject) {
        ++counters_.reads;
        return object_tag(h);
      }
    }
    return read_slow(loc, srcs);
  }

 private:
  void set_object_tag(ObjectHandle h, bool tag);
  void on_created(const std::vector<LiveObject>& created, std::uint64_t step);
  void on_removed(const std::vector<RemovedObject>& removed, std::uint64_t step);
  void spill_set(Word addr, Word len, bool tag, Rule rule, const std::vector<ProvenanceSource>& srcs,
                 std::uint64_t step);
  bool read_slow(const Location& loc, std::vector<ProvenanceSource>* srcs);
  void copy_mem(Word dst, Word src, Word len, std::uint64_t step);
  void log(std::uint64_t step, Rule rule, const std::vector<ProvenanceSource>& srcs, const TaintEntity& dst,
           bool tag, bool full) {
    ++tag_writes_;
    if (log_.enabled) log_.add({step, rule, srcs, dst, tag, full});
  }

  const Program& program_;
  ObjectTable table_;
  TagSpace tags_;
  EngineOptions options_;
  std::vector<TagCoordinate> coords_;  // by handle
  std::vector<std::uint8_t> has_coord_;
  ProvenanceLog log_;
  ShadowCounters counters_;
  std::uint64_t tag_writes_ = 0;
  LifecycleDelta delta_;
  std::vector<Segment> segs_;
  std::vector<Segment> wsegs_;
  std::vector<ObjectHandle> touched_;
  struct SliceWrite {
    ObjectHandle object;
    Word begin;
    Word len;
    bool tag;
    std::vector<ProvenanceSource> srcs;
  };
  std::vector<SliceWrite> slices_;
};

}  // namespace taintvm
