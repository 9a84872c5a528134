#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "taintvm/isa.hpp"

namespace taintvm {

inline constexpr Word kTagSpaceBase = 0xA8000000u;
inline constexpr std::uint32_t kDefaultTagCapacity = 1u << 16;

struct TagCoordinate {
  Word offset = 0;
  std::uint8_t bit = 0;

  std::uint32_t slot() const { return offset * 8u + bit; }
  static TagCoordinate of_slot(std::uint32_t slot) {
    return {slot / 8u, static_cast<std::uint8_t>(slot % 8u)};
  }
  friend bool operator==(const TagCoordinate&, const TagCoordinate&) = default;
};

inline TagCoordinate register_coordinate(Reg r) {
  return TagCoordinate::of_slot(static_cast<std::uint32_t>(r));
}

class ShadowGuardError : public std::runtime_error {
 public:
  ShadowGuardError(Word addr, Word shadow_base);
  Word addr() const { return addr_; }
  Word shadow_base() const { return shadow_base_; }

 private:
  Word addr_;
  Word shadow_base_;
};

class TagSpaceExhausted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// addr + shadow_base, or ShadowGuardError if the 32-bit sum wraps.
Word guarded_shadow_address(Word addr, Word shadow_base = kTagSpaceBase);

// The byte and mask an instrumented "clear tag" sequence would touch.
struct ShadowMaskOp {
  Word byte_address = 0;
  std::uint32_t mask = 0;
};
ShadowMaskOp clear_mask_op(TagCoordinate coord, Word shadow_base = kTagSpaceBase);

class TagSpace {
 public:
  explicit TagSpace(std::uint32_t capacity = kDefaultTagCapacity);

  TagCoordinate assign();
  void release(TagCoordinate coord);
  std::uint32_t capacity() const { return capacity_; }
  std::size_t assigned() const { return assigned_; }
  // Shadow bytes in use, registers included.
  std::size_t shadow_bytes() const { return (high_water_ + 7) / 8; }

  bool read(TagCoordinate coord) const {
    return coord.offset < bits_.size() && ((bits_[coord.offset] >> coord.bit) & 1u) != 0;
  }
  void write(TagCoordinate coord, bool tag) {
    std::uint8_t mask = static_cast<std::uint8_t>(1u << coord.bit);
    if (tag)
      bits_[coord.offset] |= mask;
    else
      bits_[coord.offset] &= static_cast<std::uint8_t>(~mask);
  }
  bool read(Reg r) const { return read(register_coordinate(r)); }
  void write(Reg r, bool tag) { write(register_coordinate(r), tag); }

  bool spill_read(Word addr) const;
  void spill_write(Word addr, bool tag);
  bool spill_any(Word addr, Word len) const;
  void spill_fill(Word addr, Word len, bool tag);
  std::size_t spill_count() const { return spill_tainted_; }

  const std::vector<std::uint8_t>& bytes() const { return bits_; }
  // Hex listing of the packed bits, 16 bytes per line, addressed from base.
  std::string dump() const;

 private:
  static constexpr Word kPageBits = 12;
  using Page = std::array<std::uint64_t, (1u << kPageBits) / 64>;

  std::uint32_t capacity_;
  std::uint32_t next_slot_ = kRegisterCount;
  std::uint32_t high_water_ = kRegisterCount;
  std::set<std::uint32_t> free_;
  std::size_t assigned_ = 0;
  std::vector<std::uint8_t> bits_;
  std::unordered_map<Word, Page> spill_;
  std::size_t spill_tainted_ = 0;
};

}  // namespace taintvm
