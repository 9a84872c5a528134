#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "taintvm/isa.hpp"

namespace taintvm {

enum class Region : std::uint8_t { kGlobal, kStackLocal, kHeap, kRegister };

// Objects whose value steers control flow. They are tracked like any other
// object and get extra checks in the policy engine.
enum class ControlKind : std::uint8_t { kNone, kReturnAddress, kBoundaryTag, kLongjmpBuf };

std::string_view region_name(Region region);
std::string_view control_kind_name(ControlKind kind);

struct ObjectRecord {
  std::uint32_t id = 0;
  std::string name;
  Region region = Region::kGlobal;
  // Virtual address (GLOBAL/HEAP), fp-relative offset (STACK_LOCAL), register
  // id (REGISTER), or offset within the parent for members.
  std::int64_t location = 0;
  Word size = 1;
  std::string owner;  // function of a STACK_LOCAL
  std::optional<std::uint32_t> parent;
  ControlKind control = ControlKind::kNone;
  std::uint32_t nesting = 0;
  bool hidden = false;  // created by the runtime, not the table file
};

using ObjectHandle = std::uint32_t;
inline constexpr ObjectHandle kNoObject = 0xFFFFFFFFu;

struct LiveObject {
  ObjectHandle handle = kNoObject;
  std::uint32_t record = 0;
  std::uint64_t instance = 0;  // unique over the table's lifetime
  Word base = 0;
  Word size = 0;
  std::size_t frame_depth = 0;  // 0 for globals and heap objects
  std::uint32_t nesting = 0;
  ObjectHandle parent = kNoObject;
  bool read_only = false;
  ControlKind control = ControlKind::kNone;

  std::uint64_t end() const { return static_cast<std::uint64_t>(base) + size; }
  bool contains(Word addr) const { return addr >= base && addr < end(); }
};

// A run of bytes with a single innermost owner (kNoObject for bytes outside
// every object).
struct Segment {
  Word begin = 0;
  Word len = 0;
  ObjectHandle object = kNoObject;
};

struct RemovedObject {
  LiveObject object;
  std::vector<Segment> owned;  // bytes it resolved to just before removal
};

class FormatError : public std::runtime_error {
 public:
  FormatError(int line, const std::string& message);
  int line() const { return line_; }
  const std::string& message() const { return message_; }

 private:
  int line_;
  std::string message_;
};

class ObjectTable {
 public:
  explicit ObjectTable(const MemoryLayout& layout = {});

  // Parses the object-table file format and instantiates every global.
  static ObjectTable parse(std::string_view text, const MemoryLayout& layout = {});

  const MemoryLayout& layout() const { return layout_; }
  const std::vector<ObjectRecord>& records() const { return records_; }
  const ObjectRecord& record(std::uint32_t id) const { return records_[id]; }
  std::optional<std::uint32_t> find_record(std::string_view name) const;
  // True if the record or one of its ancestors has the given name.
  bool record_within(std::uint32_t id, std::string_view name) const;

  // Instantiates the function's locals (and their members) at fp + offset.
  std::vector<LiveObject> enter_frame(std::string_view function, Word fp, std::size_t depth);
  // Hidden RETURN_ADDRESS object covering a frame's return slot.
  LiveObject add_return_slot(std::string_view function, Word slot, std::size_t depth);
  // Removes every object of the frame at `depth`.
  std::vector<RemovedObject> exit_frame(std::size_t depth);

  // Payload object plus the hidden 8-byte BOUNDARY_TAG object before it.
  struct HeapPair {
    LiveObject payload;
    LiveObject tag;
  };
  HeapPair register_heap_object(Word base, Word size);
  // nullopt when `base` is not a live allocation (double or invalid free).
  std::optional<std::vector<RemovedObject>> unregister_heap_object(Word base);
  std::optional<HeapPair> heap_object(Word base) const;

  std::optional<LiveObject> resolve(Word addr) const;
  ObjectHandle owner(Word addr) const {
    return addr < owners_.size() ? owners_[addr] : kNoObject;
  }
  // The object that is innermost owner of every byte of [addr, addr+len) and
  // owns all of its own bytes; kNoObject otherwise.
  ObjectHandle sole_owner(Word addr, Word len) const {
    ObjectHandle h = owner(addr);
    if (h == kNoObject) return kNoObject;
    const Slot& s = slots_[h];
    if (s.owned != s.object.size || static_cast<std::uint64_t>(addr) + len > s.object.end()) return kNoObject;
    return h;
  }
  // Splits [addr, addr+len) into runs by innermost owner.
  void segments(Word addr, Word len, std::vector<Segment>& out) const;

  const LiveObject& live(ObjectHandle handle) const { return slots_[handle].object; }
  std::vector<LiveObject> live_objects() const;
  std::size_t live_count() const { return live_count_; }
  std::size_t frame_count(std::size_t depth) const;
  // "name#instance"
  std::string describe(ObjectHandle handle) const;
  const std::string& name_of(ObjectHandle handle) const;

 private:
  struct Slot {
    LiveObject object;
    Word owned = 0;  // bytes for which this object is the innermost owner
    bool in_use = false;
  };

  std::uint32_t add_record(ObjectRecord record);
  LiveObject instantiate(std::uint32_t record, Word base, std::size_t depth, ObjectHandle parent);
  void instantiate_tree(std::uint32_t root, Word base, std::size_t depth, ObjectHandle parent,
                        std::vector<LiveObject>& out);
  RemovedObject remove(ObjectHandle handle);
  bool beats(const LiveObject& a, const LiveObject& b) const;

  MemoryLayout layout_;
  std::vector<ObjectRecord> records_;
  std::map<std::string, std::vector<std::uint32_t>, std::less<>> locals_by_function_;
  std::map<std::string, std::uint32_t, std::less<>> return_records_;
  std::vector<std::vector<std::uint32_t>> children_;

  std::vector<Slot> slots_;
  std::vector<ObjectHandle> free_slots_;
  std::size_t live_count_ = 0;
  std::uint64_t next_instance_ = 1;
  std::vector<ObjectHandle> owners_;  // innermost owner per byte of memory
  std::vector<std::vector<ObjectHandle>> frames_;  // by depth
  std::map<Word, HeapPair> heap_;
};

}  // namespace taintvm
