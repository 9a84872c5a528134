#include "taintvm/byte_oracle.hpp"

#include <algorithm>
#include <bit>

namespace taintvm {

ByteTaintMap::ByteTaintMap(Word memory_size) : size_(memory_size), bits_((memory_size + 63) / 64, 0) {}

namespace {

// Bits [lo, hi) of a word, 0 <= lo < hi <= 64.
std::uint64_t bit_range(unsigned lo, unsigned hi) {
  std::uint64_t upper = hi == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << hi) - 1;
  return upper & ~((std::uint64_t{1} << lo) - 1);
}

}  // namespace

bool ByteTaintMap::any(Word addr, Word len) const {
  std::uint64_t b = addr;
  const std::uint64_t end = std::min<std::uint64_t>(static_cast<std::uint64_t>(addr) + len, size_);
  while (b < end) {
    std::uint64_t word_end = std::min(end, (b | 63) + 1);
    if (bits_[b >> 6] & bit_range(static_cast<unsigned>(b & 63), static_cast<unsigned>(word_end - (b & ~std::uint64_t{63}))))
      return true;
    b = word_end;
  }
  return false;
}

std::size_t ByteTaintMap::tainted_bytes() const {
  std::size_t n = 0;
  for (auto w : bits_) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

ByteOracle::ByteOracle(const Program& program, Word memory_size, const ByteOracleOptions& options,
                       std::optional<ObjectTable> table)
    : program_(program),
      map_(memory_size),
      options_(options),
      table_(table ? std::move(*table) : ObjectTable(MemoryLayout{0, 0, 0, 0, 0})) {
  log_.enabled = options.provenance;
}

void ByteOracle::copy(Word dst, Word src, Word len, std::uint64_t step) {
  if (len == 0) return;
  bool any = false;
  if (dst <= src) {
    for (Word i = 0; i < len; ++i) {
      bool t = map_.byte(src + i);
      map_.set_byte(dst + i, t);
      any = any || t;
    }
  } else {
    for (Word i = len; i-- > 0;) {
      bool t = map_.byte(src + i);
      map_.set_byte(dst + i, t);
      any = any || t;
    }
  }
  counters_.reads += len;
  counters_.writes += len;
  if (log_.enabled) {
    // Byte-exact copy: each destination byte inherits exactly its source byte.
    log_.add({step, Rule::kCopy, {{TaintEntity::bytes(src, len), any}}, TaintEntity::bytes(dst, len), any, false});
  }
}

void ByteOracle::apply(const StepEvent& ev) {
  if (options_.track_objects &&
      (ev.kind == EventKind::kCall || ev.kind == EventKind::kRet || ev.kind == EventKind::kAlloc ||
       ev.kind == EventKind::kFree)) {
    delta_.created.clear();
    delta_.removed.clear();
    apply_lifecycle(table_, program_, ev, delta_);
  }
  std::vector<ProvenanceSource> srcs;
  std::vector<ProvenanceSource>* sp = log_.enabled ? &srcs : nullptr;
  const Rule rule = rule_for(ev.kind);
  auto side_const = [&] {
    if (ev.side_const.is_reg()) fill(ev.side_const, false, rule, {}, ev.step);
  };

  switch (ev.kind) {
    case EventKind::kMove: {
      bool t = read(ev.src[0], sp);
      fill(ev.dst, t, rule, std::move(srcs), ev.step);
      return;
    }
    case EventKind::kCopy:
      copy(ev.dst.addr, ev.src[0].addr, ev.dst.len, ev.step);
      return;
    case EventKind::kConst:
    case EventKind::kCall:
    case EventKind::kFree:
    case EventKind::kZeroIdiom:
      fill(ev.dst, false, rule, {}, ev.step);
      return;
    case EventKind::kArith: {
      bool t = false;
      for (std::uint8_t i = 0; i < ev.src_count; ++i) t = read(ev.src[i], sp) || t;
      fill(ev.dst, t, rule, std::move(srcs), ev.step);
      return;
    }
    case EventKind::kIndexedLoad: {
      bool t = read(ev.src[0], sp);
      t = read(Location::of(*ev.index), sp) || t;
      fill(ev.dst, t, rule, std::move(srcs), ev.step);
      return;
    }
    case EventKind::kSet: {
      bool t = ev.src_count ? read(ev.src[0], sp) : false;
      fill(ev.dst, t, rule, std::move(srcs), ev.step);
      return;
    }
    case EventKind::kAlloc:
      side_const();
      fill(ev.dst, false, rule, {}, ev.step);
      return;
    case EventKind::kSyscall:
      side_const();
      return;
    case EventKind::kPrintf:
      if (!ev.format_writes.empty()) {
        bool t = read(ev.format, sp);
        for (const Location& w : ev.format_writes) fill(w, t, rule, srcs, ev.step);
      }
      return;
    case EventKind::kInput:
      side_const();
      if (ev.dst.is_mem())
        fill(ev.dst, options_.untrusted[static_cast<std::size_t>(ev.source)], rule, {}, ev.step);
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

bool ByteOracle::tainted(const Location& loc) const {
  if (loc.is_reg()) return map_.reg(loc.reg);
  if (!loc.is_mem()) return false;
  return map_.any(loc.addr, loc.len);
}

std::vector<TaintEntity> ByteOracle::tainted_entities(const Location& loc) const {
  std::vector<TaintEntity> out;
  if (loc.is_reg()) {
    if (map_.reg(loc.reg)) out.push_back(TaintEntity::reg(loc.reg));
    return out;
  }
  if (!loc.is_mem()) return out;
  for (Word i = 0; i < loc.len; ++i) {
    if (!map_.byte(loc.addr + i)) continue;
    if (!out.empty() && out.back().id + out.back().len == loc.addr + i)
      ++out.back().len;
    else
      out.push_back(TaintEntity::bytes(loc.addr + i, 1));
  }
  return out;
}

}  // namespace taintvm
