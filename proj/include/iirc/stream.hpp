#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "iirc/data.hpp"
#include "iirc/hierarchy.hpp"

namespace iirc {

struct SplitSpec {
  double in_task_val = 0.1;
  double post_task_val = 0.1;

  void validate() const;
};

struct SplitPools {
  std::vector<RawSample> train;
  std::vector<RawSample> in_task_val;
  std::vector<RawSample> post_task_val;
};

/// Per-leaf stratified split. Each leaf's samples are shuffled with
/// derive_seed(seed, "split", leaf) and cut into [train | in-task val |
/// post-task val]; the validation parts have floor(f * L) samples.
SplitPools split(std::span<const RawSample> raw, const Hierarchy& h, const SplitSpec& spec,
                 std::uint64_t seed);

struct AssignmentRule {
  double subclass_keep = 0.8;
  double superclass_take = 0.4;
  std::size_t cap_threshold = 8;

  void validate() const;
  /// superclass_take scaled down by cap_threshold / children once a superclass
  /// has more than cap_threshold children.
  double effective_take(std::size_t children) const;
  std::size_t kept(std::size_t leaf_size) const;
  std::size_t taken(std::size_t leaf_size, std::size_t children) const;
};

/// floor(fraction * n) that tolerates representation error such as 0.8 * 400.
std::size_t floor_fraction(double fraction, std::size_t n);

enum class InfoMode { Incomplete, Complete };

/// Samples plus per-class index lists (positions into samples()).
///
/// Incomplete mode (train, in-task val): a parented leaf keeps the first
/// floor(keep * L) of its shuffled positions and hands the last
/// floor(take * L) to its superclass, so some positions sit in two lists.
/// Complete mode (post-task val, test): every leaf keeps all positions and a
/// superclass list is the union of its children's lists.
class LabeledStore {
 public:
  LabeledStore(std::vector<RawSample> pool, std::shared_ptr<const Hierarchy> hierarchy,
               const AssignmentRule& rule, std::uint64_t seed, InfoMode mode);

  const Hierarchy& hierarchy() const noexcept { return *hierarchy_; }
  std::shared_ptr<const Hierarchy> hierarchy_ptr() const noexcept { return hierarchy_; }
  InfoMode mode() const noexcept { return mode_; }
  std::size_t dim() const noexcept { return dim_; }

  std::size_t sample_count() const noexcept { return samples_.size(); }
  const RawSample& sample(std::size_t position) const { return samples_.at(position); }
  /// Full label set of the sample at `position`.
  const LabelSet& labels(std::size_t position) const { return labels_.at(position); }
  std::span<const std::size_t> indices(ClassIndex c) const { return class_indices_.at(c); }

  /// Sum of all list lengths; a position counted once per list it appears in.
  std::size_t total_with_duplicates() const;
  /// Distinct positions reachable from any list.
  std::size_t total_without_duplicates() const;

 private:
  std::shared_ptr<const Hierarchy> hierarchy_;
  InfoMode mode_;
  std::size_t dim_ = 0;
  std::vector<RawSample> samples_;
  std::vector<LabelSet> labels_;
  std::vector<std::vector<std::size_t>> class_indices_;
};

LabeledStore build_labeled_store(std::vector<RawSample> pool, std::shared_ptr<const Hierarchy> h,
                                 const AssignmentRule& rule, std::uint64_t seed, InfoMode mode);

/// How many extra list entries the rule creates for `leaf_size` samples of a
/// leaf whose parent has `children` children: max(0, kept + taken - L).
std::size_t overlap_count(const AssignmentRule& rule, std::size_t leaf_size, std::size_t children);

enum class FirstTaskPolicy {
  /// Superclasses first; standalone classes fill task 0 only when superclasses run out.
  PreferSuperclasses,
  SuperclassesOnly,
};

struct TaskConfiguration {
  std::vector<std::vector<ClassIndex>> tasks;
  std::uint64_t seed = 0;

  std::size_t task_count() const noexcept { return tasks.size(); }
  /// Task that introduces `c`; throws UnknownClass if absent.
  std::size_t task_of(ClassIndex c) const;
  /// Classes of tasks 0..through, in introduction order.
  std::vector<ClassIndex> observed_through(std::size_t through) const;

  std::string to_json(const Hierarchy& h) const;
  static TaskConfiguration from_json(std::string_view text, const Hierarchy& h);
};

/// Task 0 holds n0 classes drawn from superclasses (then standalone classes,
/// per policy). The remaining classes are shuffled and packed k per task; a
/// subclass whose parent is not in an earlier task is deferred. Packings that
/// would leave a non-final task short are redrawn from the next attempt seed.
TaskConfiguration generate_task_configuration(const Hierarchy& h, std::size_t first_task_size,
                                              std::size_t task_size, std::uint64_t seed,
                                              FirstTaskPolicy policy = FirstTaskPolicy::PreferSuperclasses);

/// Throws InfeasibleConfig when the configuration does not partition the
/// hierarchy or violates superclass-before-subclass precedence.
void validate_task_configuration(const Hierarchy& h, const TaskConfiguration& config);

/// Training-time view of one task: each item carries the single label that
/// belongs to the current task.
class IncompleteView {
 public:
  struct Item {
    std::size_t position;
    std::span<const double> features;
    ClassIndex label;
  };

  IncompleteView(const LabeledStore& store, const TaskConfiguration& config, std::size_t task);

  std::size_t task() const noexcept { return task_; }
  std::span<const ClassIndex> classes() const { return config_->tasks.at(task_); }
  std::size_t size() const noexcept { return entries_.size(); }
  Item item(std::size_t index) const;
  const LabeledStore& store() const noexcept { return *store_; }

 private:
  const LabeledStore* store_;
  const TaskConfiguration* config_;
  std::size_t task_;
  // (position, served label) in class-list order.
  std::vector<std::pair<std::size_t, ClassIndex>> entries_;
};

/// Evaluation view after tasks 0..through: every sample reachable from an
/// observed class appears once, labelled with its full set intersected with
/// the observed classes.
class CompleteView {
 public:
  struct Item {
    std::size_t position;
    std::span<const double> features;
    LabelSet labels;
  };

  CompleteView(const LabeledStore& store, const TaskConfiguration& config, std::size_t through);

  std::size_t through() const noexcept { return through_; }
  const std::vector<ClassIndex>& observed() const noexcept { return observed_; }
  bool is_observed(ClassIndex c) const { return observed_mask_.at(c); }
  std::size_t size() const noexcept { return positions_.size(); }
  /// Sorted store positions.
  std::span<const std::size_t> positions() const noexcept { return positions_; }
  Item item(std::size_t index) const;
  Item item_at_position(std::size_t position) const;
  /// Sorted, deduplicated positions of the samples introduced by task k <= through.
  std::vector<std::size_t> task_positions(std::size_t k) const;
  const LabeledStore& store() const noexcept { return *store_; }

 private:
  const LabeledStore* store_;
  const TaskConfiguration* config_;
  std::size_t through_;
  std::vector<ClassIndex> observed_;
  std::vector<bool> observed_mask_;
  std::vector<std::size_t> positions_;
};

/// Table-style count summary of one split.
struct SplitCounts {
  std::string split;
  std::size_t with_duplicates = 0;
  std::size_t without_duplicates = 0;
};

}  // namespace iirc
