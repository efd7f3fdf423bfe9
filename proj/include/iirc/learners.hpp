#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "iirc/hierarchy.hpp"
#include "iirc/metrics.hpp"
#include "iirc/nn.hpp"
#include "iirc/stream.hpp"

namespace iirc {

enum class Algorithm {
  Finetune,
  ER,
  ERInfinite,
  IncrementalJoint,
  Joint,
  AGEM,
  ICaRLCNN,
  ICaRLNorm,
  LUCIR,
};

std::string_view to_string(Algorithm a);
/// Accepts finetune, er, er-infinite, incremental-joint, joint, agem, icarl-cnn, icarl-norm, lucir.
Algorithm parse_algorithm(std::string_view name);
std::span<const Algorithm> all_algorithms();

enum class Selection { Random, Herding };

std::string_view to_string(Selection s);
Selection parse_selection(std::string_view name);

struct LearnerConfig {
  Algorithm algorithm = Algorithm::ER;
  std::string tag;  // output directory name; empty means the algorithm name
  std::size_t epochs = 10;  // task 0 trains for twice as many
  std::size_t batch_size = 128;
  double lr = 0.0;  // 0 selects the head default: 1.0 Standard, 0.5 CosineNorm
  std::optional<std::size_t> buffer_per_class = 20;  // nullopt: unlimited
  Selection selection = Selection::Random;
  std::size_t agem_batch = 128;
  double lucir_margin = 0.5;
  double lucir_lambda_base = 5.0;
  std::size_t lucir_hard_negatives = 2;
  double distill_weight = 1.0;
  std::vector<std::size_t> hidden = {32};
  std::size_t plateau_patience = 5;
  double plateau_threshold = 1e-4;

  /// Per-algorithm defaults: ER-infinite has no budget, iCaRL and LUCIR use herding.
  static LearnerConfig defaults(Algorithm a);

  std::string name() const;

  nn::HeadKind head() const;
  double initial_lr() const;
  bool uses_buffer() const;
  bool uses_snapshot() const;
  bool complete_information() const;
};

struct BufferEntry {
  std::uint64_t sample_id = 0;
  std::vector<double> features;
  LabelSet labels;  // as served at insertion; never updated
};

/// Per-class exemplar store, filled once per class.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::optional<std::size_t> budget_per_class) : budget_(budget_per_class) {}

  std::optional<std::size_t> budget() const noexcept { return budget_; }
  /// Throws InvalidSpec if the class already has exemplars or the budget is exceeded.
  void insert_class(ClassIndex c, std::vector<BufferEntry> entries);

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const BufferEntry& at(std::size_t i) const { return entries_.at(i); }
  std::span<const BufferEntry> entries() const noexcept { return entries_; }
  std::span<const BufferEntry> entries(ClassIndex c) const;
  const std::vector<ClassIndex>& classes() const noexcept { return classes_; }

 private:
  std::optional<std::size_t> budget_;
  std::vector<BufferEntry> entries_;
  std::vector<ClassIndex> classes_;
  std::vector<std::pair<std::size_t, std::size_t>> ranges_;  // [begin, end) per class
};

/// Uniform choice of min(budget, candidates) indices without replacement.
std::vector<std::size_t> select_random(std::size_t candidates, std::size_t budget, std::uint64_t seed);
/// Herding: step k picks the unused row that brings the mean of the k chosen
/// rows closest to the mean of all rows. Ties go to the lowest row.
std::vector<std::size_t> select_herding(const Eigen::MatrixXd& features, std::size_t budget);

/// A-GEM: g if <g, g_ref> >= 0, else g - (<g, g_ref> / <g_ref, g_ref>) g_ref.
std::vector<double> agem_project(std::span<const double> g, std::span<const double> g_ref);
nn::ModelParams agem_project(const nn::ModelParams& g, const nn::ModelParams& g_ref);

struct Objective {
  double total = 0.0;
  double classification = 0.0;
  double distillation = 0.0;
  double margin = 0.0;
  nn::ModelParams grads;
};

/// BCE over all head columns (targets may be soft).
Objective bce_objective(const nn::ModelParams& p, const Eigen::MatrixXd& x, const Eigen::MatrixXd& targets);

struct LucirBatch {
  Eigen::MatrixXd x;
  Eigen::MatrixXd targets;  // hard
  /// Head column of the stored old-class label for buffer rows; nullopt for task rows.
  std::vector<std::optional<std::size_t>> old_label_column;
  /// Task-t classes occupy head columns [first_new_column, C).
  std::size_t first_new_column = 0;
};

struct LucirSettings {
  double lambda = 5.0;
  double margin = 0.5;
  std::size_t hard_negatives = 2;
};

/// lambda_base * sqrt(new / old).
double lucir_lambda(double lambda_base, std::size_t new_classes, std::size_t old_classes);

/// Sum over the `k` largest negatives of max(0, margin - positive + negative).
double margin_ranking(double positive, std::span<const double> negatives, double margin, std::size_t k);

/// BCE(hard targets) + lambda * mean(1 - cos(f(x), f_snapshot(x)))
///   + (1/B) * sum over buffer rows of margin_ranking over task-t columns,
/// all on cosine-normalized scores.
Objective lucir_objective(const nn::ModelParams& p, const nn::ModelParams& snapshot, const LucirBatch& batch,
                          const LucirSettings& settings);

/// Training example: features plus the labels its targets are built from.
struct TrainItem {
  std::uint64_t sample_id = 0;
  std::span<const double> features;
  LabelSet labels;
  bool from_buffer = false;
};

struct TaskLog {
  std::size_t task = 0;
  std::size_t train_items = 0;
  std::vector<double> lr_trace;   // lr used in each epoch
  std::vector<double> val_trace;  // in-task val pw-JS after each epoch
  std::size_t buffer_size = 0;
};

/// One continual learner: model, optimizer, replay buffer and the frozen
/// previous-task snapshot used by the distillation methods.
class Learner {
 public:
  Learner(LearnerConfig config, std::shared_ptr<const Hierarchy> hierarchy, std::size_t input_dim,
          std::uint64_t seed);

  const LearnerConfig& config() const noexcept { return config_; }
  const nn::ModelParams& params() const noexcept { return params_; }
  void set_params(nn::ModelParams p);
  const std::optional<nn::ModelParams>& snapshot() const noexcept { return snapshot_; }
  const ReplayBuffer& buffer() const noexcept { return buffer_; }
  /// Head column -> class, in introduction order.
  const std::vector<ClassIndex>& head_classes() const noexcept { return head_classes_; }
  std::optional<std::size_t> column_of(ClassIndex c) const;
  std::size_t current_task() const noexcept { return task_; }
  /// Columns of classes introduced before the current task.
  std::size_t old_class_count() const noexcept { return old_classes_; }

  /// Grows the head with the task's classes.
  void begin_task(std::size_t task, std::span<const ClassIndex> classes);

  /// Items the strategy trains on for the current task: served labels (plus
  /// the buffer) from `train`, or complete labels from `complete_train` for
  /// the joint strategies.
  std::vector<TrainItem> training_items(const IncompleteView* train, const CompleteView* complete_train) const;

  /// Per-class targets in [0, 1] for a batch (rows follow `batch`).
  Eigen::MatrixXd make_targets(std::span<const TrainItem> batch) const;

  /// E epochs (2E on task 0) of minibatch SGD over `items`. After each epoch
  /// `validate` (if it yields a score) drives the plateau schedule.
  TaskLog train_on(std::span<const TrainItem> items, const std::function<std::optional<double>()>& validate);

  /// train_on with the strategy's items and in-task validation on `in_task_val`.
  /// `complete_train` is required by the joint strategies and ignored otherwise.
  TaskLog train_task(const IncompleteView& train, const IncompleteView& in_task_val,
                     const CompleteView* complete_train = nullptr);

  /// Stores exemplars for each class of the current task.
  void add_to_buffer(const IncompleteView& train);

  /// Freezes the current parameters as the distillation snapshot.
  void end_task();

  LabelSet predict(std::span<const double> x) const;
  std::vector<LabelSet> predict_batch(const Eigen::MatrixXd& x) const;

  /// Records for `positions` of the view (all of it when empty), in position order.
  std::vector<PredictionRecord> evaluate(const CompleteView& view, std::span<const std::size_t> positions = {}) const;

  /// pw-JS on the in-task validation view with predictions restricted to the task's classes.
  double in_task_score(const IncompleteView& val) const;

 private:
  Objective objective(std::span<const TrainItem> batch, const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd gather(std::span<const TrainItem> batch) const;

  LearnerConfig config_;
  std::shared_ptr<const Hierarchy> hierarchy_;
  std::uint64_t seed_;
  nn::ModelParams params_;
  nn::Sgd optimizer_;
  ReplayBuffer buffer_;
  std::optional<nn::ModelParams> snapshot_;
  std::vector<ClassIndex> head_classes_;
  std::vector<std::ptrdiff_t> column_;  // class -> head column, -1 if unseen
  std::vector<ClassIndex> task_classes_;
  std::size_t task_ = 0;
  std::size_t old_classes_ = 0;
  std::uint64_t steps_ = 0;
};

}  // namespace iirc
