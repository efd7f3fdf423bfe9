#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iirc/hierarchy.hpp"

namespace iirc {

struct PredictionRecord {
  std::uint64_t sample_id = 0;
  LabelSet truth;      // non-empty
  LabelSet predicted;  // may be empty
};

// Per-sample scores. Sets are sorted LabelSets.
double sample_jaccard(const LabelSet& truth, const LabelSet& predicted);
/// Jaccard times precision; 0 when nothing is predicted.
double sample_pw_jaccard(const LabelSet& truth, const LabelSet& predicted);

// Batch means, summed in record order. Throw EmptyBatch on no records.
double exact_match(std::span<const PredictionRecord> records);
double jaccard(std::span<const PredictionRecord> records);
double pw_js(std::span<const PredictionRecord> records);

struct Scores {
  double mr = 0.0;
  double js = 0.0;
  double pw_js = 0.0;
  std::size_t count = 0;
};

Scores score(std::span<const PredictionRecord> records);

/// Lower-triangular matrix of pw-JS values: R(j, k) is task k's test score
/// after training through task j. Entries with j < k stay undefined.
class EvalMatrix {
 public:
  explicit EvalMatrix(std::size_t tasks = 0);

  std::size_t tasks() const noexcept { return values_.size(); }
  void set(std::size_t j, std::size_t k, double value, std::size_t samples);
  std::optional<double> at(std::size_t j, std::size_t k) const;
  std::size_t samples(std::size_t k) const { return counts_.at(k); }
  /// Row j, with undefined entries as nullopt.
  std::vector<std::optional<double>> row(std::size_t j) const;

  /// Header `after_task,task_0,...`; undefined cells are empty.
  void write_csv(std::ostream& out) const;

 private:
  std::vector<std::vector<std::optional<double>>> values_;
  std::vector<std::size_t> counts_;
};

/// Sets R(j, k) to pw_js(records_for_task_k) and returns the updated matrix.
EvalMatrix update_eval_matrix(EvalMatrix m, std::size_t j, std::size_t k,
                              std::span<const PredictionRecord> records_for_task_k);

/// Multi-label confusion: counts(y, p) = #{samples with y in truth and p in prediction}.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::vector<ClassIndex> labels);

  const std::vector<ClassIndex>& labels() const noexcept { return labels_; }
  std::size_t count(std::size_t row, std::size_t col) const { return counts_.at(row * labels_.size() + col); }
  std::size_t denominator(std::size_t row) const { return denominators_.at(row); }
  /// count / denominator; 0 for a row with no samples.
  double normalized(std::size_t row, std::size_t col) const;

  void add(const PredictionRecord& record);

  /// Normalized matrix; header row and first column carry class names.
  void write_csv(std::ostream& out, const std::vector<std::string>& names, bool normalize = true) const;

 private:
  std::vector<ClassIndex> labels_;
  std::vector<std::ptrdiff_t> slot_;  // class index -> row/col, -1 if absent
  std::vector<std::size_t> counts_;
  std::vector<std::size_t> denominators_;
};

/// Rows and columns follow `label_order`, usually the order classes were introduced.
ConfusionMatrix confusion(std::span<const PredictionRecord> records, std::span<const ClassIndex> label_order);

}  // namespace iirc
