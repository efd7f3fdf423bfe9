#include "iirc/hierarchy.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "iirc/error.hpp"

namespace iirc {

extern const char* const kBundledCifarHierarchy;

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace

Hierarchy Hierarchy::build(std::span<const HierarchyRecord> records) {
  if (records.empty()) throw Error(ErrorKind::EmptyHierarchy, "no class records");

  std::unordered_set<std::string> children_seen;
  for (const auto& r : records) {
    if (r.child.empty()) throw Error(ErrorKind::InvalidSpec, "empty class name");
    if (r.parent && r.parent->empty()) {
      throw Error(ErrorKind::DanglingParent, "class '" + r.child + "' names an empty parent");
    }
    if (!children_seen.insert(r.child).second) {
      throw Error(ErrorKind::DuplicateClass, "class '" + r.child + "' defined twice");
    }
  }

  std::vector<std::string> parent_order;
  std::unordered_set<std::string> parents_seen;
  for (const auto& r : records) {
    if (!r.parent) continue;
    if (*r.parent == r.child || children_seen.contains(*r.parent)) {
      throw Error(ErrorKind::CycleOrDepthViolation,
                  "class '" + *r.parent + "' is both a parent and a child");
    }
    if (parents_seen.insert(*r.parent).second) parent_order.push_back(*r.parent);
  }

  Hierarchy h;
  auto add = [&h](const std::string& name, std::optional<ClassIndex> parent) {
    const ClassIndex index = h.names_.size();
    h.names_.push_back(name);
    h.parent_.push_back(parent);
    h.children_.emplace_back();
    h.lookup_.emplace(name, index);
    return index;
  };

  for (const auto& name : parent_order) h.superclasses_.push_back(add(name, std::nullopt));
  h.superclass_count_ = h.superclasses_.size();
  for (const auto& r : records) {
    if (!r.parent) continue;
    const ClassIndex p = h.lookup_.at(*r.parent);
    const ClassIndex c = add(r.child, p);
    h.children_[p].push_back(c);
    h.subclasses_.push_back(c);
  }
  for (const auto& r : records) {
    if (!r.parent) h.standalone_.push_back(add(r.child, std::nullopt));
  }
  return h;
}

Hierarchy Hierarchy::parse_tsv(std::string_view text) {
  std::vector<HierarchyRecord> records;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty() || trim(line).front() == '#') continue;

    const auto tab = line.find('\t');
    HierarchyRecord record;
    record.child = std::string(trim(line.substr(0, tab)));
    if (tab != std::string_view::npos) {
      const auto rest = line.substr(tab + 1);
      if (rest.find('\t') != std::string_view::npos) {
        throw Error(ErrorKind::Parse, "line " + std::to_string(line_no) + ": more than two fields");
      }
      record.parent = std::string(trim(rest));
    }
    if (record.child.empty()) {
      throw Error(ErrorKind::Parse, "line " + std::to_string(line_no) + ": empty class name");
    }
    records.push_back(std::move(record));
  }
  return build(records);
}

Hierarchy Hierarchy::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open hierarchy file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_tsv(buf.str());
}

const Hierarchy& Hierarchy::cifar() {
  static const Hierarchy h = parse_tsv(kBundledCifarHierarchy);
  return h;
}

std::string Hierarchy::to_tsv() const {
  std::string out;
  for (ClassIndex c : subclasses_) out += names_[c] + '\t' + names_[*parent_[c]] + '\n';
  for (ClassIndex c : standalone_) out += names_[c] + '\n';
  return out;
}

std::optional<ClassIndex> Hierarchy::find(std::string_view name) const {
  const auto it = lookup_.find(std::string(name));
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

ClassIndex Hierarchy::index_of(std::string_view name) const {
  if (auto c = find(name)) return *c;
  throw Error(ErrorKind::UnknownClass, "unknown class '" + std::string(name) + "'");
}

ClassKind Hierarchy::kind(ClassIndex c) const {
  if (c >= size()) throw Error(ErrorKind::UnknownClass, "class index " + std::to_string(c));
  if (is_superclass(c)) return ClassKind::Superclass;
  return parent_[c] ? ClassKind::Subclass : ClassKind::Standalone;
}

std::optional<ClassIndex> Hierarchy::parent(ClassIndex c) const {
  if (c >= size()) throw Error(ErrorKind::UnknownClass, "class index " + std::to_string(c));
  return parent_[c];
}

std::span<const ClassIndex> Hierarchy::children(ClassIndex c) const {
  if (c >= size()) throw Error(ErrorKind::UnknownClass, "class index " + std::to_string(c));
  return children_[c];
}

LabelSet Hierarchy::labels_of(ClassIndex subclass) const {
  if (kind(subclass) == ClassKind::Superclass) {
    throw Error(ErrorKind::IsSuperclass, "'" + names_[subclass] + "' is a superclass");
  }
  if (const auto p = parent_[subclass]) return {*p, subclass};  // superclasses sort first
  return {subclass};
}

LabelSet Hierarchy::labels_of(std::string_view subclass) const {
  return labels_of(index_of(subclass));
}

}  // namespace iirc
