#include "iirc/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <iterator>
#include <ostream>

#include "iirc/error.hpp"

namespace iirc {

namespace {

std::size_t intersection_size(const LabelSet& a, const LabelSet& b) {
  std::size_t n = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

void require_records(std::span<const PredictionRecord> records) {
  if (records.empty()) throw Error(ErrorKind::EmptyBatch, "no prediction records");
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double sample_jaccard(const LabelSet& truth, const LabelSet& predicted) {
  const std::size_t inter = intersection_size(truth, predicted);
  const std::size_t uni = truth.size() + predicted.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double sample_pw_jaccard(const LabelSet& truth, const LabelSet& predicted) {
  if (predicted.empty()) return 0.0;
  const std::size_t inter = intersection_size(truth, predicted);
  const std::size_t uni = truth.size() + predicted.size() - inter;
  const double js = static_cast<double>(inter) / static_cast<double>(uni);
  return js * static_cast<double>(inter) / static_cast<double>(predicted.size());
}

double exact_match(std::span<const PredictionRecord> records) {
  require_records(records);
  std::size_t hits = 0;
  for (const auto& r : records) hits += r.truth == r.predicted ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

double jaccard(std::span<const PredictionRecord> records) {
  require_records(records);
  double sum = 0.0;
  for (const auto& r : records) sum += sample_jaccard(r.truth, r.predicted);
  return sum / static_cast<double>(records.size());
}

double pw_js(std::span<const PredictionRecord> records) {
  require_records(records);
  double sum = 0.0;
  for (const auto& r : records) sum += sample_pw_jaccard(r.truth, r.predicted);
  return sum / static_cast<double>(records.size());
}

Scores score(std::span<const PredictionRecord> records) {
  return {exact_match(records), jaccard(records), pw_js(records), records.size()};
}

EvalMatrix::EvalMatrix(std::size_t tasks)
    : values_(tasks, std::vector<std::optional<double>>(tasks)), counts_(tasks, 0) {}

void EvalMatrix::set(std::size_t j, std::size_t k, double value, std::size_t samples) {
  if (j >= tasks() || k > j) throw Error(ErrorKind::OutOfRange, "R(" + std::to_string(j) + "," + std::to_string(k) + ")");
  if (value < 0.0 || value > 1.0) throw Error(ErrorKind::OutOfRange, "pw-JS outside [0, 1]");
  values_[j][k] = value;
  counts_[k] = samples;
}

std::optional<double> EvalMatrix::at(std::size_t j, std::size_t k) const {
  if (j >= tasks() || k >= tasks()) throw Error(ErrorKind::OutOfRange, "R(" + std::to_string(j) + "," + std::to_string(k) + ")");
  return values_[j][k];
}

std::vector<std::optional<double>> EvalMatrix::row(std::size_t j) const {
  if (j >= tasks()) throw Error(ErrorKind::OutOfRange, "row " + std::to_string(j));
  return values_[j];
}

void EvalMatrix::write_csv(std::ostream& out) const {
  out << "after_task";
  for (std::size_t k = 0; k < tasks(); ++k) out << ",task_" << k;
  out << '\n';
  for (std::size_t j = 0; j < tasks(); ++j) {
    out << j;
    for (std::size_t k = 0; k < tasks(); ++k) {
      out << ',';
      if (values_[j][k]) out << format_double(*values_[j][k]);
    }
    out << '\n';
  }
}

EvalMatrix update_eval_matrix(EvalMatrix m, std::size_t j, std::size_t k,
                              std::span<const PredictionRecord> records_for_task_k) {
  m.set(j, k, pw_js(records_for_task_k), records_for_task_k.size());
  return m;
}

ConfusionMatrix::ConfusionMatrix(std::vector<ClassIndex> labels)
    : labels_(std::move(labels)),
      counts_(labels_.size() * labels_.size(), 0),
      denominators_(labels_.size(), 0) {
  const ClassIndex max_label = labels_.empty() ? 0 : *std::max_element(labels_.begin(), labels_.end());
  slot_.assign(max_label + 1, -1);
  for (std::size_t i = 0; i < labels_.size(); ++i) slot_[labels_[i]] = static_cast<std::ptrdiff_t>(i);
}

void ConfusionMatrix::add(const PredictionRecord& record) {
  auto slot = [this](ClassIndex c) -> std::ptrdiff_t { return c < slot_.size() ? slot_[c] : -1; };
  for (ClassIndex y : record.truth) {
    const auto row = slot(y);
    if (row < 0) continue;
    ++denominators_[static_cast<std::size_t>(row)];
    for (ClassIndex p : record.predicted) {
      const auto col = slot(p);
      if (col >= 0) ++counts_[static_cast<std::size_t>(row) * labels_.size() + static_cast<std::size_t>(col)];
    }
  }
}

double ConfusionMatrix::normalized(std::size_t row, std::size_t col) const {
  const std::size_t d = denominator(row);
  return d == 0 ? 0.0 : static_cast<double>(count(row, col)) / static_cast<double>(d);
}

void ConfusionMatrix::write_csv(std::ostream& out, const std::vector<std::string>& names, bool normalize) const {
  out << "truth\\predicted";
  for (ClassIndex c : labels_) out << ',' << names.at(c);
  out << '\n';
  for (std::size_t r = 0; r < labels_.size(); ++r) {
    out << names.at(labels_[r]);
    for (std::size_t c = 0; c < labels_.size(); ++c) {
      out << ',';
      if (normalize) {
        out << format_double(normalized(r, c));
      } else {
        out << count(r, c);
      }
    }
    out << '\n';
  }
}

ConfusionMatrix confusion(std::span<const PredictionRecord> records, std::span<const ClassIndex> label_order) {
  ConfusionMatrix m(std::vector<ClassIndex>(label_order.begin(), label_order.end()));
  for (const auto& r : records) m.add(r);
  return m;
}

}  // namespace iirc
