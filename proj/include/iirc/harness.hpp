#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "iirc/data.hpp"
#include "iirc/hierarchy.hpp"
#include "iirc/learners.hpp"
#include "iirc/metrics.hpp"
#include "iirc/stream.hpp"

namespace iirc {

/// Hierarchy spec value that selects the bundled CIFAR taxonomy.
inline constexpr std::string_view kBuiltinCifar = "builtin:cifar";

struct DataSource {
  enum class Kind { Synthetic, Csv };
  Kind kind = Kind::Synthetic;
  SynthSpec synth;  // samples_per_subclass, seed and pool are set per pool
  std::size_t train_per_class = 500;
  std::size_t test_per_class = 100;
  std::filesystem::path train_csv;
  std::filesystem::path test_csv;
  /// Fixed data seed; when absent the run seed is used.
  std::optional<std::uint64_t> seed = std::uint64_t{0};
  /// Z-score every feature with the training pool's mean and standard deviation.
  bool standardize = true;
};

/// Per-feature (x - mean) / std with statistics of `fit`; constant features keep std 1.
void standardize_features(std::vector<RawSample>& fit, std::vector<RawSample>& other);

/// Experiment description. Defaults reproduce the CIFAR-shaped synthetic setup.
struct ExperimentConfig {
  std::string hierarchy = std::string(kBuiltinCifar);
  DataSource data;
  SplitSpec split;
  AssignmentRule assignment;
  std::size_t first_task_size = 10;
  std::size_t task_size = 5;
  FirstTaskPolicy first_task_policy = FirstTaskPolicy::PreferSuperclasses;
  std::vector<LearnerConfig> learners{LearnerConfig::defaults(Algorithm::ER)};
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path out = "iirc_out";
  std::size_t threads = 1;
  /// Tasks whose test confusion matrix is written; empty means the final task.
  std::vector<std::size_t> confusion_tasks;
  bool write_predictions = true;
  bool save_checkpoints = false;

  /// Missing keys keep their defaults; relative paths resolve against `base_dir`.
  static ExperimentConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);
  nlohmann::ordered_json to_json() const;
  void validate() const;
};

nlohmann::ordered_json learner_to_json(const LearnerConfig& c);
LearnerConfig learner_from_json(const nlohmann::json& j);

std::shared_ptr<const Hierarchy> load_hierarchy(const std::string& spec);

/// The four stores of one dataset: incomplete train and in-task val,
/// complete post-task val and test.
struct Datasets {
  std::shared_ptr<const Hierarchy> hierarchy;
  std::vector<RawSample> raw_train;
  std::vector<RawSample> raw_test;
  std::unique_ptr<LabeledStore> train;
  std::unique_ptr<LabeledStore> in_task_val;
  std::unique_ptr<LabeledStore> post_task_val;
  std::unique_ptr<LabeledStore> test;
  std::uint64_t data_seed = 0;
};

Datasets build_datasets(const ExperimentConfig& config, std::uint64_t data_seed);

struct SplitReport {
  std::vector<SplitCounts> rows;
  bool identity_holds = true;
  std::string detail;  // first failed identity, if any
};

/// With/without-duplicate counts per split plus the count identity check:
/// with - without == sum over parented leaves of overlap_count, and the
/// complete-mode stores hold no duplicates.
SplitReport split_report(const Datasets& d, const AssignmentRule& rule);
void write_split_csv(std::ostream& out, const SplitReport& report);

struct TaskRecord {
  std::size_t task = 0;
  Scores test;
  std::optional<Scores> post_task_val;
  std::vector<std::optional<double>> r_row;
  TaskLog log;
};

struct SeedRun {
  std::uint64_t seed = 0;
  LearnerConfig learner;
  TaskConfiguration tasks;
  EvalMatrix matrix;
  std::vector<TaskRecord> records;
  std::optional<std::string> failure;
};

/// Runs one learner over the task stream for one seed. When `out_dir` is set,
/// writes task_config.json, tasks.jsonl, R.csv, predictions and confusion CSVs.
SeedRun run_seed(const ExperimentConfig& config, const LearnerConfig& learner, std::uint64_t seed,
                 const Datasets& data, const std::optional<std::filesystem::path>& out_dir);

/// Task configuration a run uses: generated from the seed, or a single task
/// holding every class for the joint baseline.
TaskConfiguration task_configuration_for(const ExperimentConfig& config, const Hierarchy& h,
                                         const LearnerConfig& learner, std::uint64_t seed);

struct CurvePoint {
  std::size_t task = 0;
  double pw_js_mean = 0.0, pw_js_std = 0.0;
  double js_mean = 0.0, js_std = 0.0;
  double mr_mean = 0.0, mr_std = 0.0;
  std::size_t runs = 0;
};

/// Mean and population standard deviation of R_j (and JS, MR) across runs.
std::vector<CurvePoint> aggregate(const std::vector<std::vector<Scores>>& per_run_curves);
void write_aggregate_csv(std::ostream& out, const std::vector<CurvePoint>& curve);

/// One JSON object per line, keys task, pwJS_avg, R_row, lr_trace, buffer_size, ...
std::string task_log_json(const TaskRecord& record);

/// Predictions CSV: header `sample_id,truth,pred`, labels joined by ';'.
void write_predictions_csv(std::ostream& out, const std::vector<PredictionRecord>& records, const Hierarchy& h);

struct NamedRecords {
  std::vector<std::string> names;  // interned label names, index = label id
  std::vector<PredictionRecord> records;
};
NamedRecords read_predictions_csv(std::istream& in);

struct RunSummary {
  std::vector<SeedRun> runs;
  std::size_t failures = 0;
};

/// Every learner x seed, optionally across worker threads. Per-run failures
/// are recorded and do not stop the other runs.
RunSummary run_experiment(const ExperimentConfig& config, bool write_outputs = true);

/// Rebuilds aggregate.csv for every learner directory found under `dir`.
/// Returns the learner directories processed.
std::vector<std::filesystem::path> report_directory(const std::filesystem::path& dir,
                                                    const std::vector<std::size_t>& confusion_tasks);

}  // namespace iirc
