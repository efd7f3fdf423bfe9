#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace iirc {

/// Dense class index in [0, Hierarchy::size()).
using ClassIndex = std::size_t;

/// Sorted, duplicate-free set of class indices. Every sample carries one or two.
using LabelSet = std::vector<ClassIndex>;

enum class ClassKind { Superclass, Subclass, Standalone };

struct HierarchyRecord {
  std::string child;
  std::optional<std::string> parent;
};

/// Two-level class taxonomy.
///
/// Indices are assigned superclasses first (order of first appearance as a
/// parent), then parented subclasses (input order), then standalone classes
/// (input order). Leaves, the classes that own raw samples, are therefore the
/// contiguous range [superclass_count(), size()).
class Hierarchy {
 public:
  static Hierarchy build(std::span<const HierarchyRecord> records);
  /// TSV: `child<TAB>parent` or `child`; blank lines and `#` lines skipped.
  static Hierarchy parse_tsv(std::string_view text);
  static Hierarchy load(const std::filesystem::path& path);
  /// The CIFAR-100 derived taxonomy shipped in hierarchies/iirc_cifar.tsv.
  static const Hierarchy& cifar();

  std::string to_tsv() const;

  std::size_t size() const noexcept { return names_.size(); }
  std::size_t superclass_count() const noexcept { return superclass_count_; }
  std::size_t leaf_count() const noexcept { return size() - superclass_count_; }

  const std::string& name(ClassIndex c) const { return names_.at(c); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::optional<ClassIndex> find(std::string_view name) const;
  /// Throws UnknownClass.
  ClassIndex index_of(std::string_view name) const;

  ClassKind kind(ClassIndex c) const;
  bool is_superclass(ClassIndex c) const { return c < superclass_count_; }
  std::optional<ClassIndex> parent(ClassIndex c) const;
  std::span<const ClassIndex> children(ClassIndex c) const;

  std::span<const ClassIndex> superclasses() const noexcept { return superclasses_; }
  std::span<const ClassIndex> subclasses() const noexcept { return subclasses_; }
  std::span<const ClassIndex> standalone() const noexcept { return standalone_; }

  /// {subclass} or {subclass, parent}, sorted. Throws UnknownClass / IsSuperclass.
  LabelSet labels_of(ClassIndex subclass) const;
  LabelSet labels_of(std::string_view subclass) const;

  friend bool operator==(const Hierarchy& a, const Hierarchy& b) {
    return a.names_ == b.names_ && a.parent_ == b.parent_;
  }

 private:
  Hierarchy() = default;

  std::vector<std::string> names_;
  std::vector<std::optional<ClassIndex>> parent_;
  std::vector<std::vector<ClassIndex>> children_;
  std::vector<ClassIndex> superclasses_;
  std::vector<ClassIndex> subclasses_;
  std::vector<ClassIndex> standalone_;
  std::unordered_map<std::string, ClassIndex> lookup_;
  std::size_t superclass_count_ = 0;
};

}  // namespace iirc
