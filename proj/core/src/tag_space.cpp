#include "taintvm/tag_space.hpp"

#include <cstdio>

namespace taintvm {

namespace {

std::string hex32(Word v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08X", v);
  return buf;
}

}  // namespace

ShadowGuardError::ShadowGuardError(Word addr, Word shadow_base)
    : std::runtime_error("shadow address overflow: " + hex32(addr) + " + " + hex32(shadow_base)),
      addr_(addr),
      shadow_base_(shadow_base) {}

Word guarded_shadow_address(Word addr, Word shadow_base) {
  Word sum = addr + shadow_base;
  if (sum < addr) throw ShadowGuardError(addr, shadow_base);
  return sum;
}

ShadowMaskOp clear_mask_op(TagCoordinate coord, Word shadow_base) {
  return {guarded_shadow_address(coord.offset, shadow_base), std::rotl(0xFFFFFFFEu, coord.bit)};
}

TagSpace::TagSpace(std::uint32_t capacity)
    : capacity_(capacity), bits_((kRegisterCount + 7) / 8, 0) {}

TagCoordinate TagSpace::assign() {
  std::uint32_t slot;
  if (!free_.empty()) {
    slot = *free_.begin();
    free_.erase(free_.begin());
  } else {
    if (next_slot_ - kRegisterCount >= capacity_)
      throw TagSpaceExhausted("tag space exhausted: " + std::to_string(capacity_) + " objects");
    slot = next_slot_++;
    high_water_ = next_slot_;
    if (slot / 8 >= bits_.size()) bits_.resize(slot / 8 + 1, 0);
  }
  ++assigned_;
  TagCoordinate coord = TagCoordinate::of_slot(slot);
  write(coord, false);
  return coord;
}

void TagSpace::release(TagCoordinate coord) {
  write(coord, false);
  free_.insert(coord.slot());
  --assigned_;
}

bool TagSpace::spill_read(Word addr) const {
  auto it = spill_.find(addr >> kPageBits);
  if (it == spill_.end()) return false;
  Word i = addr & ((1u << kPageBits) - 1);
  return ((it->second[i / 64] >> (i % 64)) & 1u) != 0;
}

void TagSpace::spill_write(Word addr, bool tag) {
  auto it = spill_.find(addr >> kPageBits);
  if (it == spill_.end()) {
    if (!tag) return;
    it = spill_.emplace(addr >> kPageBits, Page{}).first;
  }
  Word i = addr & ((1u << kPageBits) - 1);
  std::uint64_t mask = std::uint64_t{1} << (i % 64);
  std::uint64_t& word = it->second[i / 64];
  bool old = (word & mask) != 0;
  if (old == tag) return;
  if (tag) {
    word |= mask;
    ++spill_tainted_;
  } else {
    word &= ~mask;
    --spill_tainted_;
  }
}

bool TagSpace::spill_any(Word addr, Word len) const {
  if (spill_tainted_ == 0) return false;
  std::uint64_t end = static_cast<std::uint64_t>(addr) + len;
  for (std::uint64_t a = addr; a < end; ++a) {
    auto it = spill_.find(static_cast<Word>(a >> kPageBits));
    if (it == spill_.end()) {
      a = ((a >> kPageBits) + 1) * (1u << kPageBits) - 1;
      continue;
    }
    Word i = static_cast<Word>(a) & ((1u << kPageBits) - 1);
    if ((it->second[i / 64] >> (i % 64)) & 1u) return true;
  }
  return false;
}

void TagSpace::spill_fill(Word addr, Word len, bool tag) {
  if (!tag && spill_tainted_ == 0) return;
  std::uint64_t end = static_cast<std::uint64_t>(addr) + len;
  for (std::uint64_t a = addr; a < end; ++a) {
    if (!tag && spill_.find(static_cast<Word>(a >> kPageBits)) == spill_.end()) {
      a = ((a >> kPageBits) + 1) * (1u << kPageBits) - 1;
      continue;
    }
    spill_write(static_cast<Word>(a), tag);
  }
}

std::string TagSpace::dump() const {
  std::string out;
  std::size_t used = shadow_bytes();
  char buf[16];
  for (std::size_t i = 0; i < used; i += 16) {
    out += hex32(kTagSpaceBase + static_cast<Word>(i));
    out += ':';
    for (std::size_t j = i; j < used && j < i + 16; ++j) {
      std::snprintf(buf, sizeof buf, " %02X", bits_[j]);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace taintvm
