#include "iirc/learners.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "iirc/error.hpp"
#include "iirc/random.hpp"

namespace iirc {

namespace {

struct AlgorithmName {
  Algorithm algorithm;
  std::string_view name;
};

constexpr std::array<AlgorithmName, 9> kAlgorithms{{
    {Algorithm::Finetune, "finetune"},
    {Algorithm::ER, "er"},
    {Algorithm::ERInfinite, "er-infinite"},
    {Algorithm::IncrementalJoint, "incremental-joint"},
    {Algorithm::Joint, "joint"},
    {Algorithm::AGEM, "agem"},
    {Algorithm::ICaRLCNN, "icarl-cnn"},
    {Algorithm::ICaRLNorm, "icarl-norm"},
    {Algorithm::LUCIR, "lucir"},
}};

constexpr std::array<Algorithm, 9> kAlgorithmList{
    Algorithm::Finetune, Algorithm::ER,   Algorithm::ERInfinite, Algorithm::IncrementalJoint, Algorithm::Joint,
    Algorithm::AGEM,     Algorithm::ICaRLCNN, Algorithm::ICaRLNorm, Algorithm::LUCIR,
};

Eigen::MatrixXd rows_of(std::span<const BufferEntry> entries, std::span<const std::size_t> pick) {
  const auto dim = static_cast<Eigen::Index>(entries.empty() ? 0 : entries.front().features.size());
  Eigen::MatrixXd x(static_cast<Eigen::Index>(pick.size()), dim);
  for (std::size_t r = 0; r < pick.size(); ++r) {
    const auto& f = entries[pick[r]].features;
    for (Eigen::Index c = 0; c < dim; ++c) x(static_cast<Eigen::Index>(r), c) = f[static_cast<std::size_t>(c)];
  }
  return x;
}

}  // namespace

std::string_view to_string(Algorithm a) {
  for (const auto& entry : kAlgorithms) {
    if (entry.algorithm == a) return entry.name;
  }
  return "unknown";
}

Algorithm parse_algorithm(std::string_view name) {
  for (const auto& entry : kAlgorithms) {
    if (entry.name == name) return entry.algorithm;
  }
  throw Error(ErrorKind::InvalidConfig, "unknown learner '" + std::string(name) + "'");
}

std::span<const Algorithm> all_algorithms() { return kAlgorithmList; }

std::string_view to_string(Selection s) { return s == Selection::Random ? "random" : "herding"; }

Selection parse_selection(std::string_view name) {
  if (name == "random") return Selection::Random;
  if (name == "herding") return Selection::Herding;
  throw Error(ErrorKind::InvalidConfig, "unknown selection '" + std::string(name) + "'");
}

LearnerConfig LearnerConfig::defaults(Algorithm a) {
  LearnerConfig c;
  c.algorithm = a;
  switch (a) {
    case Algorithm::ERInfinite:
      c.buffer_per_class = std::nullopt;
      break;
    case Algorithm::Finetune:
    case Algorithm::IncrementalJoint:
    case Algorithm::Joint:
      c.buffer_per_class = 0;
      break;
    case Algorithm::ICaRLCNN:
    case Algorithm::ICaRLNorm:
    case Algorithm::LUCIR:
      c.selection = Selection::Herding;
      break;
    default:
      break;
  }
  return c;
}

std::string LearnerConfig::name() const { return tag.empty() ? std::string(to_string(algorithm)) : tag; }

nn::HeadKind LearnerConfig::head() const {
  return algorithm == Algorithm::ICaRLNorm || algorithm == Algorithm::LUCIR ? nn::HeadKind::CosineNorm
                                                                            : nn::HeadKind::Standard;
}

double LearnerConfig::initial_lr() const {
  if (lr > 0.0) return lr;
  return head() == nn::HeadKind::CosineNorm ? 0.5 : 1.0;
}

bool LearnerConfig::uses_buffer() const {
  switch (algorithm) {
    case Algorithm::Finetune:
    case Algorithm::IncrementalJoint:
    case Algorithm::Joint:
      return false;
    default:
      return true;
  }
}

bool LearnerConfig::uses_snapshot() const {
  return algorithm == Algorithm::ICaRLCNN || algorithm == Algorithm::ICaRLNorm || algorithm == Algorithm::LUCIR;
}

bool LearnerConfig::complete_information() const {
  return algorithm == Algorithm::IncrementalJoint || algorithm == Algorithm::Joint;
}

void ReplayBuffer::insert_class(ClassIndex c, std::vector<BufferEntry> entries) {
  if (std::find(classes_.begin(), classes_.end(), c) != classes_.end()) {
    throw Error(ErrorKind::InvalidSpec, "class " + std::to_string(c) + " already has exemplars");
  }
  if (budget_ && entries.size() > *budget_) {
    throw Error(ErrorKind::InvalidSpec, "exemplars exceed the per-class budget");
  }
  const std::size_t begin = entries_.size();
  for (auto& e : entries) entries_.push_back(std::move(e));
  classes_.push_back(c);
  ranges_.emplace_back(begin, entries_.size());
}

std::span<const BufferEntry> ReplayBuffer::entries(ClassIndex c) const {
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    if (classes_[i] == c) {
      return std::span<const BufferEntry>(entries_).subspan(ranges_[i].first, ranges_[i].second - ranges_[i].first);
    }
  }
  return {};
}

std::vector<std::size_t> select_random(std::size_t candidates, std::size_t budget, std::uint64_t seed) {
  std::vector<std::size_t> order(candidates);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (budget >= candidates) return order;
  Rng rng(seed);
  shuffle(std::span(order), rng);
  order.resize(budget);
  return order;
}

std::vector<std::size_t> select_herding(const Eigen::MatrixXd& features, std::size_t budget) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (budget >= n) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  const Eigen::RowVectorXd mean = features.colwise().mean();
  Eigen::RowVectorXd chosen_sum = Eigen::RowVectorXd::Zero(features.cols());
  std::vector<bool> used(n, false);
  std::vector<std::size_t> picked;
  picked.reserve(budget);
  for (std::size_t k = 1; k <= budget; ++k) {
    std::size_t best = n;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      const double dist =
          (mean - (chosen_sum + features.row(static_cast<Eigen::Index>(i))) / static_cast<double>(k)).squaredNorm();
      if (dist < best_dist) {
        best_dist = dist;
        best = i;
      }
    }
    used[best] = true;
    picked.push_back(best);
    chosen_sum += features.row(static_cast<Eigen::Index>(best));
  }
  return picked;
}

std::vector<double> agem_project(std::span<const double> g, std::span<const double> g_ref) {
  if (g.size() != g_ref.size()) throw Error(ErrorKind::DimensionMismatch, "gradient sizes differ");
  const double gr = std::inner_product(g.begin(), g.end(), g_ref.begin(), 0.0);
  const double rr = std::inner_product(g_ref.begin(), g_ref.end(), g_ref.begin(), 0.0);
  std::vector<double> out(g.begin(), g.end());
  if (gr >= 0.0 || rr == 0.0) return out;
  const double coef = gr / rr;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= coef * g_ref[i];
  return out;
}

nn::ModelParams agem_project(const nn::ModelParams& g, const nn::ModelParams& g_ref) {
  const double gr = nn::dot(g, g_ref);
  const double rr = nn::dot(g_ref, g_ref);
  nn::ModelParams out = g;
  if (gr >= 0.0 || rr == 0.0) return out;
  nn::axpy(-gr / rr, g_ref, out);
  return out;
}

Objective bce_objective(const nn::ModelParams& p, const Eigen::MatrixXd& x, const Eigen::MatrixXd& targets) {
  const auto trace = nn::forward(p, x);
  auto bce = nn::bce_loss(trace.scores, targets);
  Objective out;
  out.classification = bce.loss;
  out.total = bce.loss;
  out.grads = nn::backward(p, trace, {std::move(bce.grad), {}, {}});
  return out;
}

double lucir_lambda(double lambda_base, std::size_t new_classes, std::size_t old_classes) {
  if (old_classes == 0) return 0.0;
  return lambda_base * std::sqrt(static_cast<double>(new_classes) / static_cast<double>(old_classes));
}

double margin_ranking(double positive, std::span<const double> negatives, double margin, std::size_t k) {
  std::vector<double> sorted(negatives.begin(), negatives.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double total = 0.0;
  for (std::size_t i = 0; i < std::min(k, sorted.size()); ++i) total += std::max(0.0, margin - positive + sorted[i]);
  return total;
}

Objective lucir_objective(const nn::ModelParams& p, const nn::ModelParams& snapshot, const LucirBatch& batch,
                          const LucirSettings& settings) {
  if (p.arch.head != nn::HeadKind::CosineNorm) {
    throw Error(ErrorKind::InvalidSpec, "LUCIR needs a cosine-normalized head");
  }
  const auto trace = nn::forward(p, batch.x);
  const auto snap_features = nn::forward(snapshot, batch.x).features;
  auto bce = nn::bce_loss(trace.scores, batch.targets);
  const auto rows = trace.scores.rows();
  const auto cols = trace.scores.cols();
  const double inv_batch = 1.0 / static_cast<double>(rows);

  Objective out;
  out.classification = bce.loss;

  // Less-forget term on normalized features.
  const Eigen::MatrixXd snap_unit = nn::unit_rows(snap_features);
  const Eigen::VectorXd cos_old_new = trace.unit_features.cwiseProduct(snap_unit).rowwise().sum();
  out.distillation = settings.lambda * (1.0 - cos_old_new.array()).mean();
  const Eigen::MatrixXd d_unit = -settings.lambda * inv_batch * snap_unit;
  const Eigen::MatrixXd d_features = nn::unit_rows_backward(trace.features, trace.feature_norm, d_unit);

  // Margin ranking against the hardest current-task classes.
  Eigen::MatrixXd d_cos = Eigen::MatrixXd::Zero(rows, cols);
  const auto first_new = static_cast<Eigen::Index>(batch.first_new_column);
  std::vector<Eigen::Index> negatives;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& y = batch.old_label_column.at(static_cast<std::size_t>(i));
    if (!y || first_new >= cols) continue;
    const auto yc = static_cast<Eigen::Index>(*y);
    negatives.clear();
    for (Eigen::Index c = first_new; c < cols; ++c) negatives.push_back(c);
    std::stable_sort(negatives.begin(), negatives.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return trace.cosine(i, a) > trace.cosine(i, b); });
    const std::size_t k = std::min(settings.hard_negatives, negatives.size());
    for (std::size_t n = 0; n < k; ++n) {
      const double hinge = settings.margin - trace.cosine(i, yc) + trace.cosine(i, negatives[n]);
      if (hinge <= 0.0) continue;
      out.margin += hinge * inv_batch;
      d_cos(i, negatives[n]) += inv_batch;
      d_cos(i, yc) -= inv_batch;
    }
  }

  out.total = out.classification + out.distillation + out.margin;
  out.grads = nn::backward(p, trace, {std::move(bce.grad), std::move(d_cos), d_features});
  return out;
}

Learner::Learner(LearnerConfig config, std::shared_ptr<const Hierarchy> hierarchy, std::size_t input_dim,
                 std::uint64_t seed)
    : config_(std::move(config)),
      hierarchy_(std::move(hierarchy)),
      seed_(seed),
      params_(nn::ModelParams::init({input_dim, config_.hidden, config_.head()}, derive_seed(seed, "model", 0))),
      optimizer_(nn::SgdConfig{config_.initial_lr(), 0.9, 1e-5}),
      buffer_(config_.buffer_per_class),
      column_(hierarchy_->size(), -1) {
  if (config_.batch_size == 0) throw Error(ErrorKind::InvalidConfig, "batch size must be positive");
}

void Learner::set_params(nn::ModelParams p) {
  if (p.arch.input_dim != params_.arch.input_dim || p.arch.head != params_.arch.head) {
    throw Error(ErrorKind::DimensionMismatch, "parameters do not match the learner's architecture");
  }
  params_ = std::move(p);
  optimizer_.reset();
}

std::optional<std::size_t> Learner::column_of(ClassIndex c) const {
  if (c >= column_.size() || column_[c] < 0) return std::nullopt;
  return static_cast<std::size_t>(column_[c]);
}

void Learner::begin_task(std::size_t task, std::span<const ClassIndex> classes) {
  task_ = task;
  old_classes_ = head_classes_.size();
  task_classes_.assign(classes.begin(), classes.end());
  for (ClassIndex c : classes) {
    if (c >= column_.size()) throw Error(ErrorKind::UnknownClass, "class index " + std::to_string(c));
    if (column_[c] >= 0) throw Error(ErrorKind::InvalidSpec, "class '" + hierarchy_->name(c) + "' introduced twice");
    column_[c] = static_cast<std::ptrdiff_t>(head_classes_.size());
    head_classes_.push_back(c);
  }
  nn::expand_head(params_, head_classes_.size(), seed_);
  optimizer_.reset();
}

std::vector<TrainItem> Learner::training_items(const IncompleteView* train, const CompleteView* complete_train) const {
  std::vector<TrainItem> items;
  if (config_.complete_information()) {
    if (!complete_train) throw Error(ErrorKind::InvalidSpec, "joint training needs the complete-information view");
    items.reserve(complete_train->size());
    for (std::size_t i = 0; i < complete_train->size(); ++i) {
      auto item = complete_train->item(i);
      items.push_back({complete_train->store().sample(item.position).id, item.features, std::move(item.labels), false});
    }
    return items;
  }
  if (!train) throw Error(ErrorKind::InvalidSpec, "incremental training needs the task view");
  items.reserve(train->size() + buffer_.size());
  for (std::size_t i = 0; i < train->size(); ++i) {
    const auto item = train->item(i);
    items.push_back({train->store().sample(item.position).id, item.features, {item.label}, false});
  }
  if (config_.uses_buffer() && config_.algorithm != Algorithm::AGEM) {
    for (const auto& e : buffer_.entries()) items.push_back({e.sample_id, e.features, e.labels, true});
  }
  return items;
}

Eigen::MatrixXd Learner::gather(std::span<const TrainItem> batch) const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(params_.arch.input_dim));
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto f = batch[r].features;
    if (f.size() != params_.arch.input_dim) throw Error(ErrorKind::DimensionMismatch, "training item dimension");
    for (std::size_t c = 0; c < f.size(); ++c) x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = f[c];
  }
  return x;
}

Eigen::MatrixXd Learner::make_targets(std::span<const TrainItem> batch) const {
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(batch.size()),
                                            static_cast<Eigen::Index>(head_classes_.size()));
  for (std::size_t r = 0; r < batch.size(); ++r) {
    for (ClassIndex l : batch[r].labels) {
      if (const auto col = column_of(l)) t(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(*col)) = 1.0;
    }
  }
  const bool distill = config_.algorithm == Algorithm::ICaRLCNN || config_.algorithm == Algorithm::ICaRLNorm;
  if (distill && snapshot_ && old_classes_ > 0) {
    const Eigen::MatrixXd soft = nn::forward(*snapshot_, gather(batch)).probabilities();
    const auto old = static_cast<Eigen::Index>(old_classes_);
    const double w = config_.distill_weight;
    t.leftCols(old) = w * soft.leftCols(old) + (1.0 - w) * t.leftCols(old);
  }
  return t;
}

Objective Learner::objective(std::span<const TrainItem> batch, const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd targets = make_targets(batch);
  if (config_.algorithm == Algorithm::LUCIR && snapshot_ && old_classes_ > 0) {
    LucirBatch lb{x, std::move(targets), {}, old_classes_};
    lb.old_label_column.reserve(batch.size());
    for (const auto& item : batch) {
      std::optional<std::size_t> col;
      if (item.from_buffer && !item.labels.empty()) col = column_of(item.labels.front());
      lb.old_label_column.push_back(col);
    }
    const LucirSettings settings{lucir_lambda(config_.lucir_lambda_base, task_classes_.size(), old_classes_),
                                 config_.lucir_margin, config_.lucir_hard_negatives};
    return lucir_objective(params_, *snapshot_, lb, settings);
  }
  return bce_objective(params_, x, targets);
}

TaskLog Learner::train_task(const IncompleteView& train, const IncompleteView& in_task_val,
                            const CompleteView* complete_train) {
  const auto items = training_items(&train, complete_train);
  return train_on(items, [&]() -> std::optional<double> {
    if (in_task_val.size() == 0) return std::nullopt;
    return in_task_score(in_task_val);
  });
}

TaskLog Learner::train_on(std::span<const TrainItem> items, const std::function<std::optional<double>()>& validate) {
  TaskLog log;
  log.task = task_;
  log.train_items = items.size();

  const std::size_t epochs = task_ == 0 ? 2 * config_.epochs : config_.epochs;
  optimizer_.reset();
  optimizer_.set_lr(config_.initial_lr());
  nn::PlateauScheduler scheduler(config_.initial_lr(), config_.plateau_patience, config_.plateau_threshold);

  std::vector<std::size_t> order(items.size());
  std::vector<TrainItem> batch;
  for (std::size_t epoch = 0; epoch < epochs && !items.empty(); ++epoch) {
    log.lr_trace.push_back(optimizer_.lr());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(derive_seed(seed_, "epoch", task_), "epoch", epoch));
    shuffle(std::span(order), rng);

    for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
      const std::size_t end = std::min(order.size(), start + config_.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(items[order[i]]);
      const Eigen::MatrixXd x = gather(batch);
      Objective obj = objective(batch, x);

      if (config_.algorithm == Algorithm::AGEM && !buffer_.empty()) {
        const auto pick = select_random(buffer_.size(), std::min(config_.agem_batch, buffer_.size()),
                                        derive_seed(seed_, "agem", steps_));
        std::vector<TrainItem> memory;
        memory.reserve(pick.size());
        for (std::size_t i : pick) {
          const auto& e = buffer_.at(i);
          memory.push_back({e.sample_id, e.features, e.labels, true});
        }
        const auto reference = bce_objective(params_, rows_of(buffer_.entries(), pick), make_targets(memory));
        obj.grads = agem_project(obj.grads, reference.grads);
      }
      optimizer_.step(params_, obj.grads);
      ++steps_;
    }

    if (const auto score = validate ? validate() : std::nullopt) {
      log.val_trace.push_back(*score);
      scheduler.observe(*score, optimizer_);
    }
  }
  log.buffer_size = buffer_.size();
  return log;
}

void Learner::add_to_buffer(const IncompleteView& train) {
  if (config_.uses_buffer() && config_.buffer_per_class != std::size_t{0}) {
    for (ClassIndex c : train.classes()) {
      std::vector<BufferEntry> candidates;
      for (std::size_t i = 0; i < train.size(); ++i) {
        const auto item = train.item(i);
        if (item.label != c) continue;
        candidates.push_back({train.store().sample(item.position).id,
                              std::vector<double>(item.features.begin(), item.features.end()),
                              {item.label}});
      }
      const std::size_t budget = config_.buffer_per_class.value_or(candidates.size());
      std::vector<std::size_t> pick;
      if (config_.selection == Selection::Herding && budget < candidates.size()) {
        std::vector<std::size_t> all(candidates.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        pick = select_herding(nn::forward(params_, rows_of(candidates, all)).features, budget);
      } else {
        pick = select_random(candidates.size(), budget, derive_seed(seed_, "buffer", c));
      }
      std::vector<BufferEntry> chosen;
      chosen.reserve(pick.size());
      for (std::size_t i : pick) chosen.push_back(std::move(candidates[i]));
      buffer_.insert_class(c, std::move(chosen));
    }
  }
}

void Learner::end_task() {
  if (config_.uses_snapshot()) snapshot_ = params_;
}

std::vector<LabelSet> Learner::predict_batch(const Eigen::MatrixXd& x) const {
  const auto columns = nn::predict_batch(params_, x);
  std::vector<LabelSet> out;
  out.reserve(columns.size());
  for (const auto& cols : columns) {
    LabelSet labels;
    labels.reserve(cols.size());
    for (std::size_t c : cols) labels.push_back(head_classes_[c]);
    std::sort(labels.begin(), labels.end());
    out.push_back(std::move(labels));
  }
  return out;
}

LabelSet Learner::predict(std::span<const double> x) const {
  Eigen::MatrixXd row(1, static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) row(0, static_cast<Eigen::Index>(i)) = x[i];
  return predict_batch(row).front();
}

std::vector<PredictionRecord> Learner::evaluate(const CompleteView& view, std::span<const std::size_t> positions) const {
  const auto chosen = positions.empty() ? view.positions() : positions;
  const auto& store = view.store();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(chosen.size()), static_cast<Eigen::Index>(params_.arch.input_dim));
  for (std::size_t r = 0; r < chosen.size(); ++r) {
    const auto& f = store.sample(chosen[r]).features;
    for (std::size_t c = 0; c < f.size(); ++c) x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = f[c];
  }
  auto predicted = predict_batch(x);
  std::vector<PredictionRecord> records;
  records.reserve(chosen.size());
  for (std::size_t r = 0; r < chosen.size(); ++r) {
    auto item = view.item_at_position(chosen[r]);
    records.push_back({store.sample(chosen[r]).id, std::move(item.labels), std::move(predicted[r])});
  }
  return records;
}

double Learner::in_task_score(const IncompleteView& val) const {
  if (val.size() == 0) return 0.0;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(val.size()), static_cast<Eigen::Index>(params_.arch.input_dim));
  for (std::size_t r = 0; r < val.size(); ++r) {
    const auto f = val.item(r).features;
    for (std::size_t c = 0; c < f.size(); ++c) x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = f[c];
  }
  const auto predicted = predict_batch(x);
  const auto task_classes = val.classes();
  double sum = 0.0;
  for (std::size_t r = 0; r < val.size(); ++r) {
    LabelSet restricted;
    for (ClassIndex c : predicted[r]) {
      if (std::find(task_classes.begin(), task_classes.end(), c) != task_classes.end()) restricted.push_back(c);
    }
    sum += sample_pw_jaccard({val.item(r).label}, restricted);
  }
  return sum / static_cast<double>(val.size());
}

}  // namespace iirc
