#include "iirc/stream.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "iirc/error.hpp"
#include "iirc/random.hpp"

namespace iirc {

namespace {

constexpr std::size_t kMaxPackingAttempts = 10000;

std::vector<std::vector<std::size_t>> positions_by_leaf(std::span<const RawSample> samples,
                                                        const Hierarchy& h) {
  std::vector<std::vector<std::size_t>> by_class(h.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const ClassIndex c = samples[i].subclass;
    if (c >= h.size()) throw Error(ErrorKind::UnknownClass, "sample " + std::to_string(samples[i].id));
    if (h.is_superclass(c)) {
      throw Error(ErrorKind::IsSuperclass, "sample " + std::to_string(samples[i].id) + " is labelled with superclass '" + h.name(c) + "'");
    }
    by_class[c].push_back(i);
  }
  return by_class;
}

void sort_unique(std::vector<std::size_t>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

}  // namespace

std::size_t floor_fraction(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

void SplitSpec::validate() const {
  if (in_task_val < 0.0 || post_task_val < 0.0 || in_task_val + post_task_val >= 1.0) {
    throw Error(ErrorKind::InvalidSpec, "split fractions must be >= 0 and sum to < 1");
  }
}

SplitPools split(std::span<const RawSample> raw, const Hierarchy& h, const SplitSpec& spec,
                 std::uint64_t seed) {
  spec.validate();
  auto by_class = positions_by_leaf(raw, h);

  SplitPools pools;
  for (ClassIndex c = h.superclass_count(); c < h.size(); ++c) {
    auto& positions = by_class[c];
    if (positions.empty()) throw Error(ErrorKind::EmptyClass, "class '" + h.name(c) + "' has no samples");
    Rng rng(derive_seed(seed, "split", c));
    shuffle(std::span(positions), rng);

    const std::size_t n = positions.size();
    const std::size_t n_in = floor_fraction(spec.in_task_val, n);
    const std::size_t n_post = floor_fraction(spec.post_task_val, n);
    const std::size_t n_train = n - n_in - n_post;
    for (std::size_t i = 0; i < n; ++i) {
      auto& dest = i < n_train ? pools.train : (i < n_train + n_in ? pools.in_task_val : pools.post_task_val);
      dest.push_back(raw[positions[i]]);
    }
  }
  return pools;
}

void AssignmentRule::validate() const {
  if (!(superclass_take >= 0.0 && superclass_take <= subclass_keep && subclass_keep <= 1.0)) {
    throw Error(ErrorKind::InvalidSpec, "need 0 <= superclass_take <= subclass_keep <= 1");
  }
  if (subclass_keep + superclass_take < 1.0 - 1e-12) {
    throw Error(ErrorKind::InvalidSpec, "subclass_keep + superclass_take must be >= 1");
  }
  if (cap_threshold == 0) throw Error(ErrorKind::InvalidSpec, "cap_threshold must be positive");
}

double AssignmentRule::effective_take(std::size_t children) const {
  if (children <= cap_threshold) return superclass_take;
  return superclass_take * static_cast<double>(cap_threshold) / static_cast<double>(children);
}

std::size_t AssignmentRule::kept(std::size_t leaf_size) const {
  return floor_fraction(subclass_keep, leaf_size);
}

std::size_t AssignmentRule::taken(std::size_t leaf_size, std::size_t children) const {
  return floor_fraction(effective_take(children), leaf_size);
}

std::size_t overlap_count(const AssignmentRule& rule, std::size_t leaf_size, std::size_t children) {
  const std::size_t both = rule.kept(leaf_size) + rule.taken(leaf_size, children);
  return both > leaf_size ? both - leaf_size : 0;
}

LabeledStore::LabeledStore(std::vector<RawSample> pool, std::shared_ptr<const Hierarchy> hierarchy,
                           const AssignmentRule& rule, std::uint64_t seed, InfoMode mode)
    : hierarchy_(std::move(hierarchy)), mode_(mode), samples_(std::move(pool)) {
  const Hierarchy& h = *hierarchy_;
  if (mode == InfoMode::Incomplete) rule.validate();
  if (!samples_.empty()) dim_ = samples_.front().features.size();
  for (const auto& s : samples_) {
    if (s.features.size() != dim_) {
      throw Error(ErrorKind::DimensionMismatch, "sample " + std::to_string(s.id) + " has dimension " + std::to_string(s.features.size()));
    }
  }

  labels_.reserve(samples_.size());
  for (const auto& s : samples_) labels_.push_back(h.labels_of(s.subclass));

  auto by_class = positions_by_leaf(samples_, h);
  class_indices_.assign(h.size(), {});
  for (ClassIndex c = h.superclass_count(); c < h.size(); ++c) {
    auto& positions = by_class[c];
    const auto parent = h.parent(c);
    if (!parent) {
      class_indices_[c] = std::move(positions);
      continue;
    }
    auto& parent_list = class_indices_[*parent];
    if (mode == InfoMode::Complete) {
      parent_list.insert(parent_list.end(), positions.begin(), positions.end());
      class_indices_[c] = std::move(positions);
      continue;
    }
    Rng rng(derive_seed(seed, "assign", c));
    shuffle(std::span(positions), rng);
    const std::size_t n = positions.size();
    const std::size_t keep = rule.kept(n);
    const std::size_t take = rule.taken(n, h.children(*parent).size());
    parent_list.insert(parent_list.end(), positions.end() - static_cast<std::ptrdiff_t>(take), positions.end());
    positions.resize(keep);
    class_indices_[c] = std::move(positions);
  }
}

std::size_t LabeledStore::total_with_duplicates() const {
  std::size_t total = 0;
  for (const auto& list : class_indices_) total += list.size();
  return total;
}

std::size_t LabeledStore::total_without_duplicates() const {
  std::vector<bool> seen(samples_.size(), false);
  std::size_t distinct = 0;
  for (const auto& list : class_indices_) {
    for (std::size_t p : list) {
      if (!seen[p]) {
        seen[p] = true;
        ++distinct;
      }
    }
  }
  return distinct;
}

LabeledStore build_labeled_store(std::vector<RawSample> pool, std::shared_ptr<const Hierarchy> h,
                                 const AssignmentRule& rule, std::uint64_t seed, InfoMode mode) {
  return LabeledStore(std::move(pool), std::move(h), rule, seed, mode);
}

std::size_t TaskConfiguration::task_of(ClassIndex c) const {
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    if (std::find(tasks[t].begin(), tasks[t].end(), c) != tasks[t].end()) return t;
  }
  throw Error(ErrorKind::UnknownClass, "class index " + std::to_string(c) + " is in no task");
}

std::vector<ClassIndex> TaskConfiguration::observed_through(std::size_t through) const {
  if (through >= tasks.size()) throw Error(ErrorKind::OutOfRange, "task " + std::to_string(through));
  std::vector<ClassIndex> out;
  for (std::size_t t = 0; t <= through; ++t) out.insert(out.end(), tasks[t].begin(), tasks[t].end());
  return out;
}

std::string TaskConfiguration::to_json(const Hierarchy& h) const {
  nlohmann::ordered_json j;
  auto& arr = j["tasks"] = nlohmann::ordered_json::array();
  for (const auto& task : tasks) {
    auto names = nlohmann::ordered_json::array();
    for (ClassIndex c : task) names.push_back(h.name(c));
    arr.push_back(std::move(names));
  }
  j["seed"] = seed;
  return j.dump();
}

TaskConfiguration TaskConfiguration::from_json(std::string_view text, const Hierarchy& h) {
  TaskConfiguration config;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& task : j.at("tasks")) {
      auto& out = config.tasks.emplace_back();
      for (const auto& name : task) out.push_back(h.index_of(name.get<std::string>()));
    }
    config.seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("task configuration: ") + e.what());
  }
  validate_task_configuration(h, config);
  return config;
}

void validate_task_configuration(const Hierarchy& h, const TaskConfiguration& config) {
  std::vector<std::ptrdiff_t> task_of(h.size(), -1);
  for (std::size_t t = 0; t < config.tasks.size(); ++t) {
    if (config.tasks[t].empty()) throw Error(ErrorKind::InfeasibleConfig, "task " + std::to_string(t) + " is empty");
    for (ClassIndex c : config.tasks[t]) {
      if (c >= h.size()) throw Error(ErrorKind::UnknownClass, "class index " + std::to_string(c));
      if (task_of[c] >= 0) throw Error(ErrorKind::InfeasibleConfig, "class '" + h.name(c) + "' appears twice");
      task_of[c] = static_cast<std::ptrdiff_t>(t);
    }
  }
  for (ClassIndex c = 0; c < h.size(); ++c) {
    if (task_of[c] < 0) throw Error(ErrorKind::InfeasibleConfig, "class '" + h.name(c) + "' is in no task");
    if (const auto p = h.parent(c); p && task_of[*p] >= task_of[c]) {
      throw Error(ErrorKind::InfeasibleConfig, "'" + h.name(c) + "' is not introduced after its superclass");
    }
  }
}

TaskConfiguration generate_task_configuration(const Hierarchy& h, std::size_t first_task_size,
                                              std::size_t task_size, std::uint64_t seed,
                                              FirstTaskPolicy policy) {
  if (first_task_size == 0 || task_size == 0) {
    throw Error(ErrorKind::InfeasibleConfig, "task sizes must be positive");
  }
  std::vector<ClassIndex> supers(h.superclasses().begin(), h.superclasses().end());
  std::vector<ClassIndex> standalone(h.standalone().begin(), h.standalone().end());
  Rng first_rng(derive_seed(seed, "first-task", 0));
  shuffle(std::span(supers), first_rng);
  shuffle(std::span(standalone), first_rng);

  std::vector<ClassIndex> first;
  if (supers.size() >= first_task_size) {
    first.assign(supers.begin(), supers.begin() + static_cast<std::ptrdiff_t>(first_task_size));
  } else if (policy == FirstTaskPolicy::SuperclassesOnly) {
    throw Error(ErrorKind::InfeasibleConfig, "first task needs " + std::to_string(first_task_size) +
                                                 " superclasses, hierarchy has " + std::to_string(supers.size()));
  } else {
    const std::size_t missing = first_task_size - supers.size();
    if (standalone.size() < missing) {
      throw Error(ErrorKind::InfeasibleConfig, "not enough superclass or standalone classes for the first task");
    }
    first = supers;
    first.insert(first.end(), standalone.begin(), standalone.begin() + static_cast<std::ptrdiff_t>(missing));
  }
  if (first.size() > h.size()) throw Error(ErrorKind::InfeasibleConfig, "first task larger than hierarchy");

  std::vector<bool> in_first(h.size(), false);
  for (ClassIndex c : first) in_first[c] = true;
  std::vector<ClassIndex> remaining;
  for (ClassIndex c = 0; c < h.size(); ++c) {
    if (!in_first[c]) remaining.push_back(c);
  }

  constexpr std::size_t kUnscheduled = static_cast<std::size_t>(-1);
  for (std::size_t attempt = 0; attempt < kMaxPackingAttempts; ++attempt) {
    Rng rng(derive_seed(seed, "task-order", attempt));
    std::vector<ClassIndex> pending = remaining;
    shuffle(std::span(pending), rng);

    TaskConfiguration config;
    config.seed = seed;
    config.tasks.push_back(first);
    std::vector<std::size_t> scheduled(h.size(), kUnscheduled);
    for (ClassIndex c : first) scheduled[c] = 0;

    bool packed = true;
    while (!pending.empty()) {
      const std::size_t t = config.tasks.size();
      std::vector<ClassIndex> current;
      std::vector<ClassIndex> deferred;
      for (ClassIndex c : pending) {
        const auto p = h.parent(c);
        const bool ready = !p || scheduled[*p] < t;
        if (current.size() < task_size && ready) {
          current.push_back(c);
        } else {
          deferred.push_back(c);
        }
      }
      if (current.size() < task_size && !deferred.empty()) {
        packed = false;
        break;
      }
      for (ClassIndex c : current) scheduled[c] = t;
      config.tasks.push_back(std::move(current));
      pending = std::move(deferred);
    }
    if (packed) {
      validate_task_configuration(h, config);
      return config;
    }
  }
  throw Error(ErrorKind::InfeasibleConfig, "no packing satisfies superclass-before-subclass precedence");
}

IncompleteView::IncompleteView(const LabeledStore& store, const TaskConfiguration& config, std::size_t task)
    : store_(&store), config_(&config), task_(task) {
  if (task >= config.tasks.size()) throw Error(ErrorKind::OutOfRange, "task " + std::to_string(task));
  const auto& classes = config.tasks[task];
  for (ClassIndex c : classes) {
    for (std::size_t position : store.indices(c)) {
      const auto& labels = store.labels(position);
      std::size_t hits = 0;
      ClassIndex served = c;
      for (ClassIndex l : labels) {
        if (std::find(classes.begin(), classes.end(), l) != classes.end()) {
          ++hits;
          served = l;
        }
      }
      if (hits != 1) {
        throw std::logic_error("incomplete view: sample intersects the task in " + std::to_string(hits) + " labels");
      }
      entries_.emplace_back(position, served);
    }
  }
}

IncompleteView::Item IncompleteView::item(std::size_t index) const {
  if (index >= entries_.size()) {
    throw Error(ErrorKind::OutOfRange, "item " + std::to_string(index) + " of " + std::to_string(entries_.size()));
  }
  const auto [position, label] = entries_[index];
  return {position, store_->sample(position).features, label};
}

CompleteView::CompleteView(const LabeledStore& store, const TaskConfiguration& config, std::size_t through)
    : store_(&store), config_(&config), through_(through), observed_(config.observed_through(through)),
      observed_mask_(store.hierarchy().size(), false) {
  for (ClassIndex c : observed_) {
    observed_mask_.at(c) = true;
    const auto list = store.indices(c);
    positions_.insert(positions_.end(), list.begin(), list.end());
  }
  sort_unique(positions_);
}

CompleteView::Item CompleteView::item_at_position(std::size_t position) const {
  Item out{position, store_->sample(position).features, {}};
  for (ClassIndex l : store_->labels(position)) {
    if (observed_mask_[l]) out.labels.push_back(l);
  }
  return out;
}

CompleteView::Item CompleteView::item(std::size_t index) const {
  if (index >= positions_.size()) {
    throw Error(ErrorKind::OutOfRange, "item " + std::to_string(index) + " of " + std::to_string(positions_.size()));
  }
  return item_at_position(positions_[index]);
}

std::vector<std::size_t> CompleteView::task_positions(std::size_t k) const {
  if (k > through_) throw Error(ErrorKind::OutOfRange, "task " + std::to_string(k) + " not yet observed");
  std::vector<std::size_t> out;
  for (ClassIndex c : config_->tasks[k]) {
    const auto list = store_->indices(c);
    out.insert(out.end(), list.begin(), list.end());
  }
  sort_unique(out);
  return out;
}

}  // namespace iirc
