#include "taintvm/object_model.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <sstream>

namespace taintvm {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

bool parse_unsigned(std::string_view text, int base, std::uint64_t& out) {
  if (text.size() > 2 && text[0] == '0' && (text[1] == 'x' || text[1] == 'X')) {
    text.remove_prefix(2);
    base = 16;
  }
  if (text.empty()) return false;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out, base);
  return ec == std::errc{} && ptr == text.data() + text.size();
}

bool parse_signed(std::string_view text, std::int64_t& out) {
  bool negative = false;
  if (!text.empty() && (text[0] == '-' || text[0] == '+')) {
    negative = text[0] == '-';
    text.remove_prefix(1);
  }
  std::uint64_t magnitude = 0;
  if (!parse_unsigned(text, 10, magnitude) || magnitude > 0x7FFFFFFFull) return false;
  out = negative ? -static_cast<std::int64_t>(magnitude) : static_cast<std::int64_t>(magnitude);
  return true;
}

bool overlaps(std::int64_t a, Word a_size, std::int64_t b, Word b_size) {
  return a < b + static_cast<std::int64_t>(b_size) && b < a + static_cast<std::int64_t>(a_size);
}

}  // namespace

std::string_view region_name(Region region) {
  switch (region) {
    case Region::kGlobal: return "GLOBAL";
    case Region::kStackLocal: return "STACK_LOCAL";
    case Region::kHeap: return "HEAP";
    case Region::kRegister: return "REGISTER";
  }
  return "?";
}

std::string_view control_kind_name(ControlKind kind) {
  switch (kind) {
    case ControlKind::kNone: return "NONE";
    case ControlKind::kReturnAddress: return "RETURN_ADDRESS";
    case ControlKind::kBoundaryTag: return "BOUNDARY_TAG";
    case ControlKind::kLongjmpBuf: return "LONGJMP_BUF";
  }
  return "?";
}

FormatError::FormatError(int line, const std::string& message)
    : std::runtime_error("line " + std::to_string(line) + ": " + message), line_(line), message_(message) {}

ObjectTable::ObjectTable(const MemoryLayout& layout)
    : layout_(layout), owners_(layout.size, kNoObject), frames_(1) {}

std::uint32_t ObjectTable::add_record(ObjectRecord record) {
  record.id = static_cast<std::uint32_t>(records_.size());
  if (record.parent) children_[*record.parent].push_back(record.id);
  records_.push_back(std::move(record));
  children_.emplace_back();
  return records_.back().id;
}

ObjectTable ObjectTable::parse(std::string_view text, const MemoryLayout& layout) {
  ObjectTable table(layout);
  std::vector<std::uint32_t> globals;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    auto fields = split_ws(line);
    if (fields.empty()) continue;

    auto fail = [&](const std::string& msg) { throw FormatError(line_no, msg); };
    auto size_of = [&](std::string_view field) {
      std::uint64_t size = 0;
      if (!parse_unsigned(field, 10, size)) fail("bad size '" + std::string(field) + "'");
      if (size < 1) fail("size must be at least 1");
      if (size > layout.size) fail("size exceeds memory");
      return static_cast<Word>(size);
    };

    ObjectRecord rec;
    std::string_view kind = fields[0];
    if (kind == "global") {
      if (fields.size() != 4) fail("expected: global <name> <hex-address> <size>");
      std::uint64_t addr = 0;
      if (!parse_unsigned(fields[2], 16, addr)) fail("bad address '" + std::string(fields[2]) + "'");
      rec.name = fields[1];
      rec.region = Region::kGlobal;
      rec.location = static_cast<std::int64_t>(addr);
      rec.size = size_of(fields[3]);
      if (addr < layout.rodata_begin || addr + rec.size > layout.heap_begin)
        fail("global '" + rec.name + "' lies outside the data regions");
      if (addr < layout.globals_begin && addr + rec.size > layout.globals_begin)
        fail("global '" + rec.name + "' straddles the read-only boundary");
      for (auto id : globals) {
        const auto& other = table.records_[id];
        if (other.name == rec.name) fail("duplicate global '" + rec.name + "'");
        if (overlaps(rec.location, rec.size, other.location, other.size))
          fail("global '" + rec.name + "' overlaps '" + other.name + "'");
      }
      globals.push_back(table.add_record(std::move(rec)));
    } else if (kind == "local") {
      if (fields.size() != 5) fail("expected: local <function> <name> <signed-fp-offset> <size>");
      rec.owner = fields[1];
      rec.name = fields[2];
      rec.region = Region::kStackLocal;
      if (!parse_signed(fields[3], rec.location)) fail("bad offset '" + std::string(fields[3]) + "'");
      rec.size = size_of(fields[4]);
      if (overlaps(rec.location, rec.size, 0, 4))
        fail("local '" + rec.name + "' overlaps the return-address slot");
      auto& locals = table.locals_by_function_[rec.owner];
      for (auto id : locals) {
        const auto& other = table.records_[id];
        if (other.name == rec.name) fail("duplicate local '" + rec.name + "' in " + rec.owner);
        if (overlaps(rec.location, rec.size, other.location, other.size))
          fail("local '" + rec.name + "' overlaps '" + other.name + "'");
      }
      locals.push_back(table.add_record(std::move(rec)));
    } else if (kind == "member") {
      if (fields.size() != 5) fail("expected: member <parent-name> <name> <offset-within-parent> <size>");
      std::optional<std::uint32_t> parent;
      for (auto it = table.records_.rbegin(); it != table.records_.rend(); ++it) {
        if (it->name == fields[1]) {
          parent = it->id;
          break;
        }
      }
      if (!parent) fail("unknown parent '" + std::string(fields[1]) + "'");
      const ObjectRecord& p = table.records_[*parent];
      std::uint64_t offset = 0;
      if (!parse_unsigned(fields[3], 10, offset)) fail("bad offset '" + std::string(fields[3]) + "'");
      rec.name = fields[2];
      rec.size = size_of(fields[4]);
      if (offset + rec.size > p.size)
        fail("member '" + rec.name + "' extends past parent '" + p.name + "'");
      rec.region = p.region;
      rec.owner = p.owner;
      rec.location = static_cast<std::int64_t>(offset);
      rec.parent = parent;
      rec.nesting = p.nesting + 1;
      for (auto id : table.children_[*parent]) {
        const auto& other = table.records_[id];
        if (other.name == rec.name) fail("duplicate member '" + rec.name + "' in '" + p.name + "'");
        if (overlaps(rec.location, rec.size, other.location, other.size))
          fail("member '" + rec.name + "' overlaps '" + other.name + "'");
      }
      table.add_record(std::move(rec));
    } else {
      fail("unknown record kind '" + std::string(kind) + "'");
    }
  }

  std::vector<LiveObject> ignored;
  for (auto id : globals)
    table.instantiate_tree(id, static_cast<Word>(table.records_[id].location), 0, kNoObject, ignored);
  return table;
}

std::optional<std::uint32_t> ObjectTable::find_record(std::string_view name) const {
  for (const auto& r : records_)
    if (r.name == name) return r.id;
  return std::nullopt;
}

bool ObjectTable::record_within(std::uint32_t id, std::string_view name) const {
  std::optional<std::uint32_t> cur = id;
  while (cur) {
    if (records_[*cur].name == name) return true;
    cur = records_[*cur].parent;
  }
  return false;
}

bool ObjectTable::beats(const LiveObject& a, const LiveObject& b) const {
  if (a.nesting != b.nesting) return a.nesting > b.nesting;
  if (a.frame_depth != b.frame_depth) return a.frame_depth > b.frame_depth;
  return a.instance > b.instance;
}

LiveObject ObjectTable::instantiate(std::uint32_t record, Word base, std::size_t depth,
                                    ObjectHandle parent) {
  const ObjectRecord& rec = records_[record];
  ObjectHandle handle;
  if (!free_slots_.empty()) {
    handle = free_slots_.back();
    free_slots_.pop_back();
  } else {
    handle = static_cast<ObjectHandle>(slots_.size());
    slots_.emplace_back();
  }
  Slot& slot = slots_[handle];
  slot.in_use = true;
  slot.owned = 0;
  LiveObject& obj = slot.object;
  obj.handle = handle;
  obj.record = record;
  obj.instance = next_instance_++;
  obj.base = base;
  obj.size = rec.size;
  obj.frame_depth = depth;
  obj.nesting = rec.nesting;
  obj.parent = parent;
  obj.control = rec.control;
  obj.read_only = layout_.is_read_only(base);
  ++live_count_;

  std::uint64_t end = std::min<std::uint64_t>(obj.end(), owners_.size());
  for (std::uint64_t b = base; b < end; ++b) {
    ObjectHandle cur = owners_[b];
    if (cur == kNoObject || beats(obj, slots_[cur].object)) {
      if (cur != kNoObject) --slots_[cur].owned;
      owners_[b] = handle;
      ++slot.owned;
    }
  }
  if (depth >= frames_.size()) frames_.resize(depth + 1);
  if (rec.region == Region::kStackLocal) frames_[depth].push_back(handle);
  return obj;
}

void ObjectTable::instantiate_tree(std::uint32_t root, Word base, std::size_t depth,
                                   ObjectHandle parent, std::vector<LiveObject>& out) {
  LiveObject obj = instantiate(root, base, depth, parent);
  out.push_back(obj);
  for (auto child : children_[root])
    instantiate_tree(child, base + static_cast<Word>(records_[child].location), depth, obj.handle, out);
}

RemovedObject ObjectTable::remove(ObjectHandle handle) {
  Slot& slot = slots_[handle];
  RemovedObject removed{slot.object, {}};
  const LiveObject& obj = slot.object;
  std::uint64_t end = std::min<std::uint64_t>(obj.end(), owners_.size());

  for (std::uint64_t b = obj.base; b < end; ++b) {
    if (owners_[b] != handle) continue;
    owners_[b] = kNoObject;
    auto& owned = removed.owned;
    if (!owned.empty() && owned.back().begin + owned.back().len == b)
      ++owned.back().len;
    else
      owned.push_back({static_cast<Word>(b), 1, handle});
  }
  slot.in_use = false;
  slot.owned = 0;
  --live_count_;
  free_slots_.push_back(handle);

  if (removed.owned.empty()) return removed;
  std::vector<ObjectHandle> candidates;
  for (ObjectHandle h = 0; h < slots_.size(); ++h) {
    if (!slots_[h].in_use) continue;
    const LiveObject& c = slots_[h].object;
    if (c.base < end && c.end() > obj.base) candidates.push_back(h);
  }
  std::sort(candidates.begin(), candidates.end(), [&](ObjectHandle a, ObjectHandle b) {
    return beats(slots_[a].object, slots_[b].object);
  });
  for (ObjectHandle h : candidates) {
    const LiveObject& c = slots_[h].object;
    for (const auto& seg : removed.owned) {
      std::uint64_t lo = std::max<std::uint64_t>(seg.begin, c.base);
      std::uint64_t hi = std::min<std::uint64_t>(static_cast<std::uint64_t>(seg.begin) + seg.len, c.end());
      for (std::uint64_t b = lo; b < hi; ++b) {
        if (owners_[b] == kNoObject) {
          owners_[b] = h;
          ++slots_[h].owned;
        }
      }
    }
  }
  return removed;
}

std::vector<LiveObject> ObjectTable::enter_frame(std::string_view function, Word fp, std::size_t depth) {
  std::vector<LiveObject> out;
  if (depth >= frames_.size()) frames_.resize(depth + 1);
  auto it = locals_by_function_.find(function);
  if (it == locals_by_function_.end()) return out;
  for (auto id : it->second) {
    std::int64_t base = static_cast<std::int64_t>(fp) + records_[id].location;
    if (base < 0 || base + records_[id].size > static_cast<std::int64_t>(layout_.size)) continue;
    instantiate_tree(id, static_cast<Word>(base), depth, kNoObject, out);
  }
  return out;
}

LiveObject ObjectTable::add_return_slot(std::string_view function, Word slot, std::size_t depth) {
  auto it = return_records_.find(function);
  std::uint32_t id;
  if (it == return_records_.end()) {
    ObjectRecord rec;
    rec.name = std::string(function) + ".$ret";
    rec.region = Region::kStackLocal;
    rec.owner = function;
    rec.size = 4;
    rec.control = ControlKind::kReturnAddress;
    rec.hidden = true;
    id = add_record(std::move(rec));
    return_records_.emplace(std::string(function), id);
  } else {
    id = it->second;
  }
  return instantiate(id, slot, depth, kNoObject);
}

std::vector<RemovedObject> ObjectTable::exit_frame(std::size_t depth) {
  std::vector<RemovedObject> out;
  if (depth >= frames_.size()) return out;
  auto handles = std::move(frames_[depth]);
  frames_[depth].clear();
  // Innermost first so that parents reclaim nothing that is about to vanish.
  std::sort(handles.begin(), handles.end(), [&](ObjectHandle a, ObjectHandle b) {
    return beats(slots_[a].object, slots_[b].object);
  });
  for (auto h : handles) out.push_back(remove(h));
  return out;
}

ObjectTable::HeapPair ObjectTable::register_heap_object(Word base, Word size) {
  ObjectRecord payload;
  char name[32];
  std::snprintf(name, sizeof name, "heap@0x%08X", base);
  payload.name = name;
  payload.region = Region::kHeap;
  payload.location = base;
  payload.size = std::max<Word>(size, 1);
  ObjectRecord tag;
  tag.name = payload.name + ".tag";
  tag.region = Region::kHeap;
  tag.location = static_cast<std::int64_t>(base) - 8;
  tag.size = 8;
  tag.control = ControlKind::kBoundaryTag;
  tag.hidden = true;
  auto pid = add_record(std::move(payload));
  auto tid = add_record(std::move(tag));
  HeapPair pair{instantiate(pid, base, 0, kNoObject), instantiate(tid, base - 8, 0, kNoObject)};
  heap_[base] = pair;
  return pair;
}

std::optional<std::vector<RemovedObject>> ObjectTable::unregister_heap_object(Word base) {
  auto it = heap_.find(base);
  if (it == heap_.end()) return std::nullopt;
  HeapPair pair = it->second;
  heap_.erase(it);
  std::vector<RemovedObject> out;
  out.push_back(remove(pair.payload.handle));
  out.push_back(remove(pair.tag.handle));
  return out;
}

std::optional<ObjectTable::HeapPair> ObjectTable::heap_object(Word base) const {
  auto it = heap_.find(base);
  if (it == heap_.end()) return std::nullopt;
  return it->second;
}

std::optional<LiveObject> ObjectTable::resolve(Word addr) const {
  ObjectHandle h = owner(addr);
  if (h == kNoObject) return std::nullopt;
  return slots_[h].object;
}

void ObjectTable::segments(Word addr, Word len, std::vector<Segment>& out) const {
  out.clear();
  std::uint64_t b = addr;
  const std::uint64_t end = static_cast<std::uint64_t>(addr) + len;
  while (b < end) {
    if (b >= owners_.size()) {
      out.push_back({static_cast<Word>(b), static_cast<Word>(end - b), kNoObject});
      return;
    }
    ObjectHandle h = owners_[b];
    std::uint64_t stop;
    if (h != kNoObject && slots_[h].owned == slots_[h].object.size) {
      stop = std::min(end, slots_[h].object.end());
    } else {
      std::uint64_t limit = std::min<std::uint64_t>(end, owners_.size());
      stop = b + 1;
      while (stop < limit && owners_[stop] == h) ++stop;
    }
    out.push_back({static_cast<Word>(b), static_cast<Word>(stop - b), h});
    b = stop;
  }
}

std::vector<LiveObject> ObjectTable::live_objects() const {
  std::vector<LiveObject> out;
  for (const auto& s : slots_)
    if (s.in_use) out.push_back(s.object);
  std::sort(out.begin(), out.end(),
            [](const LiveObject& a, const LiveObject& b) { return a.instance < b.instance; });
  return out;
}

std::size_t ObjectTable::frame_count(std::size_t depth) const {
  return depth < frames_.size() ? frames_[depth].size() : 0;
}

const std::string& ObjectTable::name_of(ObjectHandle handle) const {
  return records_[slots_[handle].object.record].name;
}

std::string ObjectTable::describe(ObjectHandle handle) const {
  if (handle == kNoObject) return "<none>";
  std::ostringstream os;
  os << name_of(handle) << '#' << slots_[handle].object.instance;
  return os.str();
}

}  // namespace taintvm
