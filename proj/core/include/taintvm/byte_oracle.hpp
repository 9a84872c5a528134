#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "taintvm/machine.hpp"
#include "taintvm/taint_engine.hpp"

namespace taintvm {

// One taint bit per byte of VM memory and per register, propagated byte-exactly.
class ByteTaintMap {
 public:
  explicit ByteTaintMap(Word memory_size);

  Word memory_size() const { return size_; }
  bool byte(Word addr) const { return addr < size_ && ((bits_[addr >> 6] >> (addr & 63)) & 1u) != 0; }
  void set_byte(Word addr, bool tag) {
    std::uint64_t mask = std::uint64_t{1} << (addr & 63);
    if (tag)
      bits_[addr >> 6] |= mask;
    else
      bits_[addr >> 6] &= ~mask;
  }
  // Any tainted byte in [addr, addr+len), clipped to memory. A query, not a
  // counted shadow operation.
  bool any(Word addr, Word len) const;
  bool reg(Reg r) const { return ((regs_ >> static_cast<unsigned>(r)) & 1u) != 0; }
  void set_reg(Reg r, bool tag) {
    std::uint16_t mask = static_cast<std::uint16_t>(1u << static_cast<unsigned>(r));
    regs_ = tag ? static_cast<std::uint16_t>(regs_ | mask) : static_cast<std::uint16_t>(regs_ & ~mask);
  }
  std::uint16_t reg_bits() const { return regs_; }
  const std::vector<std::uint64_t>& words() const { return bits_; }
  std::size_t tainted_bytes() const;

 private:
  Word size_;
  std::vector<std::uint64_t> bits_;
  std::uint16_t regs_ = 0;
};

struct ByteOracleOptions {
  std::array<bool, 5> untrusted{true, true, true, true, true};
  bool provenance = false;
  // Maintain an object table alongside, so the policy engine can run on top.
  bool track_objects = false;
};

class ByteOracle final : public TaintView {
 public:
  // `table` is only consulted when options.track_objects is set.
  ByteOracle(const Program& program, Word memory_size, const ByteOracleOptions& options = {},
             std::optional<ObjectTable> table = std::nullopt);

  void apply(const StepEvent& event);

  const ByteTaintMap& map() const { return map_; }
  const ShadowCounters& counters() const { return counters_; }
  // Cumulative per-bit shadow writes.
  std::uint64_t count_shadow_ops() const { return counters_.writes; }

  const ObjectTable& objects() const override { return table_; }
  bool tainted(const Location& loc) const override;
  std::vector<TaintEntity> tainted_entities(const Location& loc) const override;
  const ProvenanceLog& provenance() const override { return log_; }

 private:
  bool read(const Location& loc, std::vector<ProvenanceSource>* srcs) {
    bool any = false;
    if (loc.is_reg()) {
      ++counters_.reads;
      any = map_.reg(loc.reg);
      if (srcs) srcs->push_back({TaintEntity::reg(loc.reg), any});
      return any;
    }
    if (!loc.is_mem()) return false;
    for (Word i = 0; i < loc.len; ++i) any = map_.byte(loc.addr + i) || any;
    counters_.reads += loc.len;
    if (srcs) srcs->push_back({TaintEntity::bytes(loc.addr, loc.len), any});
    return any;
  }

  void fill(const Location& dst, bool tag, Rule rule, const std::vector<ProvenanceSource>& srcs,
              std::uint64_t step) {
    if (dst.is_reg()) {
      map_.set_reg(dst.reg, tag);
      ++counters_.writes;
      if (log_.enabled) log_.add({step, rule, srcs, TaintEntity::reg(dst.reg), tag, true});
      return;
    }
    if (!dst.is_mem() || dst.len == 0) return;
    for (Word i = 0; i < dst.len; ++i) map_.set_byte(dst.addr + i, tag);
    counters_.writes += dst.len;
    if (log_.enabled) log_.add({step, rule, srcs, TaintEntity::bytes(dst.addr, dst.len), tag, true});
  }
  void copy(Word dst, Word src, Word len, std::uint64_t step);

  const Program& program_;
  ByteTaintMap map_;
  ByteOracleOptions options_;
  ObjectTable table_;
  ProvenanceLog log_;
  ShadowCounters counters_;
  LifecycleDelta delta_;
};

}  // namespace taintvm
