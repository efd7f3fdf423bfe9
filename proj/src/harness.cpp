#include "iirc/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "iirc/error.hpp"
#include "iirc/random.hpp"

namespace iirc {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, std::string(where) + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw Error(ErrorKind::InvalidConfig, "unknown key '" + key + "' in " + std::string(where));
    }
  }
}

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("bad value for '") + key + "': " + e.what());
  }
}

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

std::string_view policy_name(FirstTaskPolicy p) {
  return p == FirstTaskPolicy::SuperclassesOnly ? "superclasses_only" : "prefer_superclasses";
}

FirstTaskPolicy parse_policy(std::string_view s) {
  if (s == "prefer_superclasses") return FirstTaskPolicy::PreferSuperclasses;
  if (s == "superclasses_only") return FirstTaskPolicy::SuperclassesOnly;
  throw Error(ErrorKind::InvalidConfig, "unknown first_task_policy '" + std::string(s) + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string join_labels(const LabelSet& labels, const Hierarchy& h) {
  std::string out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i) out.push_back(';');
    out += h.name(labels[i]);
  }
  return out;
}

std::vector<std::string> head_names(const Learner& learner, const Hierarchy& h) {
  std::vector<std::string> names;
  for (ClassIndex c : learner.head_classes()) names.emplace_back(h.name(c));
  return names;
}

}  // namespace

// ---- configuration ----------------------------------------------------------

ordered_json learner_to_json(const LearnerConfig& c) {
  ordered_json j;
  j["name"] = std::string(to_string(c.algorithm));
  if (!c.tag.empty()) j["tag"] = c.tag;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.initial_lr();
  if (c.buffer_per_class) {
    j["buffer"] = *c.buffer_per_class;
  } else {
    j["buffer"] = "inf";
  }
  j["selection"] = std::string(to_string(c.selection));
  j["agem_batch"] = c.agem_batch;
  j["lucir_margin"] = c.lucir_margin;
  j["lucir_lambda_base"] = c.lucir_lambda_base;
  j["lucir_hard_negatives"] = c.lucir_hard_negatives;
  j["distill_weight"] = c.distill_weight;
  j["hidden"] = c.hidden;
  j["plateau_patience"] = c.plateau_patience;
  j["plateau_threshold"] = c.plateau_threshold;
  return j;
}

LearnerConfig learner_from_json(const json& j) {
  if (j.is_string()) return LearnerConfig::defaults(parse_algorithm(j.get<std::string>()));
  reject_unknown_keys(j,
                      {"name", "tag", "epochs", "batch_size", "lr", "buffer", "selection", "agem_batch",
                       "lucir_margin", "lucir_lambda_base", "lucir_hard_negatives", "distill_weight", "hidden",
                       "plateau_patience", "plateau_threshold"},
                      "learner");
  if (!j.contains("name")) throw Error(ErrorKind::InvalidConfig, "learner needs a 'name'");
  auto c = LearnerConfig::defaults(parse_algorithm(j.at("name").get<std::string>()));
  read_key(j, "tag", c.tag);
  read_key(j, "epochs", c.epochs);
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "lr", c.lr);
  if (j.contains("buffer")) {
    const auto& b = j.at("buffer");
    if (b.is_null() || (b.is_string() && b.get<std::string>() == "inf")) {
      c.buffer_per_class = std::nullopt;
    } else if (b.is_number_unsigned()) {
      c.buffer_per_class = b.get<std::size_t>();
    } else {
      throw Error(ErrorKind::InvalidConfig, "buffer must be a count or \"inf\"");
    }
  }
  if (j.contains("selection")) c.selection = parse_selection(j.at("selection").get<std::string>());
  read_key(j, "agem_batch", c.agem_batch);
  read_key(j, "lucir_margin", c.lucir_margin);
  read_key(j, "lucir_lambda_base", c.lucir_lambda_base);
  read_key(j, "lucir_hard_negatives", c.lucir_hard_negatives);
  read_key(j, "distill_weight", c.distill_weight);
  read_key(j, "hidden", c.hidden);
  read_key(j, "plateau_patience", c.plateau_patience);
  read_key(j, "plateau_threshold", c.plateau_threshold);
  return c;
}

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base_dir) {
  reject_unknown_keys(j,
                      {"hierarchy", "data", "split", "assignment", "tasks", "learners", "seeds", "out", "threads",
                       "confusion_tasks", "write_predictions", "save_checkpoints"},
                      "config");
  ExperimentConfig c;
  if (j.contains("hierarchy")) {
    c.hierarchy = j.at("hierarchy").get<std::string>();
    if (c.hierarchy != kBuiltinCifar) c.hierarchy = resolve(c.hierarchy, base_dir).string();
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    reject_unknown_keys(d,
                        {"source", "dim", "train_per_class", "test_per_class", "sigma_super", "sigma_sub",
                         "sigma_noise", "seed", "train_csv", "test_csv", "standardize"},
                        "data");
    if (d.contains("source")) {
      const auto source = d.at("source").get<std::string>();
      if (source == "synthetic") {
        c.data.kind = DataSource::Kind::Synthetic;
      } else if (source == "csv") {
        c.data.kind = DataSource::Kind::Csv;
      } else {
        throw Error(ErrorKind::InvalidConfig, "unknown data source '" + source + "'");
      }
    }
    read_key(d, "dim", c.data.synth.dim);
    read_key(d, "train_per_class", c.data.train_per_class);
    read_key(d, "test_per_class", c.data.test_per_class);
    read_key(d, "sigma_super", c.data.synth.sigma_super);
    read_key(d, "sigma_sub", c.data.synth.sigma_sub);
    read_key(d, "sigma_noise", c.data.synth.sigma_noise);
    if (d.contains("seed")) {
      if (d.at("seed").is_null()) {
        c.data.seed = std::nullopt;
      } else {
        c.data.seed = d.at("seed").get<std::uint64_t>();
      }
    }
    read_key(d, "standardize", c.data.standardize);
    if (d.contains("train_csv")) c.data.train_csv = resolve(d.at("train_csv").get<std::string>(), base_dir);
    if (d.contains("test_csv")) c.data.test_csv = resolve(d.at("test_csv").get<std::string>(), base_dir);
  }
  if (j.contains("split")) {
    const auto& s = j.at("split");
    reject_unknown_keys(s, {"in_task_val", "post_task_val"}, "split");
    read_key(s, "in_task_val", c.split.in_task_val);
    read_key(s, "post_task_val", c.split.post_task_val);
  }
  if (j.contains("assignment")) {
    const auto& a = j.at("assignment");
    reject_unknown_keys(a, {"subclass_keep", "superclass_take", "cap_threshold"}, "assignment");
    read_key(a, "subclass_keep", c.assignment.subclass_keep);
    read_key(a, "superclass_take", c.assignment.superclass_take);
    read_key(a, "cap_threshold", c.assignment.cap_threshold);
  }
  if (j.contains("tasks")) {
    const auto& t = j.at("tasks");
    reject_unknown_keys(t, {"first_task_size", "task_size", "first_task_policy"}, "tasks");
    read_key(t, "first_task_size", c.first_task_size);
    read_key(t, "task_size", c.task_size);
    if (t.contains("first_task_policy")) c.first_task_policy = parse_policy(t.at("first_task_policy").get<std::string>());
  }
  if (j.contains("learners")) {
    c.learners.clear();
    for (const auto& l : j.at("learners")) c.learners.push_back(learner_from_json(l));
  }
  read_key(j, "seeds", c.seeds);
  if (j.contains("out")) c.out = resolve(j.at("out").get<std::string>(), base_dir);
  read_key(j, "threads", c.threads);
  read_key(j, "confusion_tasks", c.confusion_tasks);
  read_key(j, "write_predictions", c.write_predictions);
  read_key(j, "save_checkpoints", c.save_checkpoints);
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

ordered_json ExperimentConfig::to_json() const {
  ordered_json j;
  j["hierarchy"] = hierarchy;
  ordered_json d;
  d["source"] = data.kind == DataSource::Kind::Synthetic ? "synthetic" : "csv";
  if (data.kind == DataSource::Kind::Synthetic) {
    d["dim"] = data.synth.dim;
    d["train_per_class"] = data.train_per_class;
    d["test_per_class"] = data.test_per_class;
    d["sigma_super"] = data.synth.sigma_super;
    d["sigma_sub"] = data.synth.sigma_sub;
    d["sigma_noise"] = data.synth.sigma_noise;
  } else {
    d["train_csv"] = data.train_csv.string();
    d["test_csv"] = data.test_csv.string();
  }
  if (data.seed) {
    d["seed"] = *data.seed;
  } else {
    d["seed"] = nullptr;
  }
  d["standardize"] = data.standardize;
  j["data"] = d;
  j["split"] = {{"in_task_val", split.in_task_val}, {"post_task_val", split.post_task_val}};
  j["assignment"] = {{"subclass_keep", assignment.subclass_keep},
                     {"superclass_take", assignment.superclass_take},
                     {"cap_threshold", assignment.cap_threshold}};
  j["tasks"] = {{"first_task_size", first_task_size},
                {"task_size", task_size},
                {"first_task_policy", std::string(policy_name(first_task_policy))}};
  j["learners"] = ordered_json::array();
  for (const auto& l : learners) j["learners"].push_back(learner_to_json(l));
  j["seeds"] = seeds;
  j["out"] = out.string();
  j["threads"] = threads;
  j["confusion_tasks"] = confusion_tasks;
  j["write_predictions"] = write_predictions;
  j["save_checkpoints"] = save_checkpoints;
  return j;
}

void ExperimentConfig::validate() const {
  split.validate();
  assignment.validate();
  if (data.kind == DataSource::Kind::Synthetic) {
    auto s = data.synth;
    s.samples_per_subclass = std::max<std::size_t>(1, data.train_per_class);
    s.validate();
    if (data.train_per_class == 0) throw Error(ErrorKind::InvalidConfig, "train_per_class must be >= 1");
  } else if (data.train_csv.empty() || data.test_csv.empty()) {
    throw Error(ErrorKind::InvalidConfig, "csv data needs train_csv and test_csv");
  }
  if (first_task_size == 0 || task_size == 0) throw Error(ErrorKind::InvalidConfig, "task sizes must be >= 1");
  if (learners.empty()) throw Error(ErrorKind::InvalidConfig, "no learners");
  if (seeds.empty()) throw Error(ErrorKind::InvalidConfig, "no seeds");
  if (threads == 0) throw Error(ErrorKind::InvalidConfig, "threads must be >= 1");
  std::set<std::string> names;
  for (const auto& l : learners) {
    if (l.epochs == 0) throw Error(ErrorKind::InvalidConfig, "epochs must be >= 1");
    if (l.batch_size == 0) throw Error(ErrorKind::InvalidConfig, "batch_size must be >= 1");
    if (l.lr < 0.0) throw Error(ErrorKind::InvalidConfig, "lr must be positive");
    if (!names.insert(l.name()).second) {
      throw Error(ErrorKind::InvalidConfig, "two learners share the name '" + l.name() + "'; set a tag");
    }
  }
}

std::shared_ptr<const Hierarchy> load_hierarchy(const std::string& spec) {
  if (spec == kBuiltinCifar) return std::make_shared<const Hierarchy>(Hierarchy::cifar());
  return std::make_shared<const Hierarchy>(Hierarchy::load(spec));
}

// ---- datasets ---------------------------------------------------------------

void standardize_features(std::vector<RawSample>& fit, std::vector<RawSample>& other) {
  if (fit.empty()) return;
  const std::size_t dim = fit.front().features.size();
  std::vector<double> mean(dim, 0.0), sd(dim, 0.0);
  for (const auto& s : fit) {
    for (std::size_t k = 0; k < dim; ++k) mean[k] += s.features[k];
  }
  for (auto& m : mean) m /= static_cast<double>(fit.size());
  for (const auto& s : fit) {
    for (std::size_t k = 0; k < dim; ++k) sd[k] += (s.features[k] - mean[k]) * (s.features[k] - mean[k]);
  }
  for (auto& v : sd) {
    v = std::sqrt(v / static_cast<double>(fit.size()));
    if (!(v > 0.0)) v = 1.0;
  }
  auto apply = [&](std::vector<RawSample>& pool) {
    for (auto& s : pool) {
      if (s.features.size() != dim) throw Error(ErrorKind::DimensionMismatch, "feature dimensions differ");
      for (std::size_t k = 0; k < dim; ++k) s.features[k] = (s.features[k] - mean[k]) / sd[k];
    }
  };
  apply(other);
  apply(fit);
}

Datasets build_datasets(const ExperimentConfig& config, std::uint64_t data_seed) {
  Datasets d;
  d.data_seed = data_seed;
  d.hierarchy = load_hierarchy(config.hierarchy);
  const auto& h = *d.hierarchy;
  if (config.data.kind == DataSource::Kind::Synthetic) {
    auto spec = config.data.synth;
    spec.seed = data_seed;
    spec.pool = 0;
    spec.first_id = 0;
    spec.samples_per_subclass = config.data.train_per_class;
    d.raw_train = generate_synthetic(h, spec);
    if (config.data.test_per_class > 0) {
      spec.pool = 1;
      spec.first_id = d.raw_train.size();
      spec.samples_per_subclass = config.data.test_per_class;
      d.raw_test = generate_synthetic(h, spec);
    }
  } else {
    d.raw_train = load_external(config.data.train_csv, h);
    d.raw_test = load_external(config.data.test_csv, h);
  }
  if (config.data.standardize) standardize_features(d.raw_train, d.raw_test);
  auto pools = split(d.raw_train, h, config.split, data_seed);
  const auto& rule = config.assignment;
  d.train = std::make_unique<LabeledStore>(std::move(pools.train), d.hierarchy, rule,
                                           derive_seed(data_seed, "store", 0), InfoMode::Incomplete);
  d.in_task_val = std::make_unique<LabeledStore>(std::move(pools.in_task_val), d.hierarchy, rule,
                                                 derive_seed(data_seed, "store", 1), InfoMode::Incomplete);
  d.post_task_val = std::make_unique<LabeledStore>(std::move(pools.post_task_val), d.hierarchy, rule,
                                                   derive_seed(data_seed, "store", 2), InfoMode::Complete);
  d.test = std::make_unique<LabeledStore>(d.raw_test, d.hierarchy, rule, derive_seed(data_seed, "store", 3),
                                          InfoMode::Complete);
  return d;
}

SplitReport split_report(const Datasets& d, const AssignmentRule& rule) {
  SplitReport report;
  const auto& h = *d.hierarchy;
  auto fail = [&](std::string msg) {
    if (report.identity_holds) report.detail = std::move(msg);
    report.identity_holds = false;
  };
  auto incomplete = [&](const char* name, const LabeledStore& s) {
    std::vector<std::size_t> leaf_sizes(h.size(), 0);
    for (std::size_t p = 0; p < s.sample_count(); ++p) ++leaf_sizes[s.sample(p).subclass];
    std::size_t expected_overlap = 0;
    for (ClassIndex c : h.subclasses()) {
      expected_overlap += overlap_count(rule, leaf_sizes[c], h.children(*h.parent(c)).size());
    }
    const SplitCounts row{name, s.total_with_duplicates(), s.total_without_duplicates()};
    if (row.with_duplicates - row.without_duplicates != expected_overlap) {
      fail(std::string(name) + ": with - without = " + std::to_string(row.with_duplicates - row.without_duplicates) +
           ", expected overlap " + std::to_string(expected_overlap));
    }
    if (row.without_duplicates != s.sample_count()) {
      fail(std::string(name) + ": " + std::to_string(s.sample_count() - row.without_duplicates) +
           " samples are in no list");
    }
    report.rows.push_back(row);
  };
  auto complete = [&](const char* name, const LabeledStore& s) {
    const SplitCounts row{name, s.sample_count(), s.total_without_duplicates()};
    if (row.without_duplicates != row.with_duplicates) {
      fail(std::string(name) + ": complete store does not cover every sample once");
    }
    report.rows.push_back(row);
  };
  incomplete("train", *d.train);
  incomplete("in_task_val", *d.in_task_val);
  complete("post_task_val", *d.post_task_val);
  complete("test", *d.test);
  return report;
}

void write_split_csv(std::ostream& out, const SplitReport& report) {
  out << "split,with_duplicates,without_duplicates\n";
  for (const auto& r : report.rows) out << r.split << ',' << r.with_duplicates << ',' << r.without_duplicates << '\n';
}

// ---- one run ----------------------------------------------------------------

TaskConfiguration task_configuration_for(const ExperimentConfig& config, const Hierarchy& h,
                                         const LearnerConfig& learner, std::uint64_t seed) {
  if (learner.algorithm == Algorithm::Joint) {
    TaskConfiguration single;
    single.seed = seed;
    single.tasks.emplace_back();
    for (ClassIndex c = 0; c < h.size(); ++c) single.tasks.front().push_back(c);
    return single;
  }
  return generate_task_configuration(h, config.first_task_size, config.task_size, seed, config.first_task_policy);
}

std::string task_log_json(const TaskRecord& r) {
  ordered_json j;
  j["task"] = r.task;
  j["pwJS_avg"] = r.test.pw_js;
  j["JS_avg"] = r.test.js;
  j["MR_avg"] = r.test.mr;
  j["test_samples"] = r.test.count;
  j["R_row"] = ordered_json::array();
  for (const auto& v : r.r_row) {
    if (v) {
      j["R_row"].push_back(*v);
    } else {
      j["R_row"].push_back(nullptr);
    }
  }
  if (r.post_task_val) {
    j["post_task_val_pwJS"] = r.post_task_val->pw_js;
  } else {
    j["post_task_val_pwJS"] = nullptr;
  }
  j["train_items"] = r.log.train_items;
  j["lr_trace"] = r.log.lr_trace;
  j["val_trace"] = r.log.val_trace;
  j["buffer_size"] = r.log.buffer_size;
  return j.dump();
}

void write_predictions_csv(std::ostream& out, const std::vector<PredictionRecord>& records, const Hierarchy& h) {
  out << "sample_id,truth,pred\n";
  for (const auto& r : records) {
    out << r.sample_id << ',' << join_labels(r.truth, h) << ',' << join_labels(r.predicted, h) << '\n';
  }
}

NamedRecords read_predictions_csv(std::istream& in) {
  NamedRecords out;
  std::unordered_map<std::string, ClassIndex> ids;
  auto intern = [&](const std::string& name) {
    auto [it, inserted] = ids.emplace(name, out.names.size());
    if (inserted) out.names.push_back(name);
    return it->second;
  };
  auto parse_set = [&](const std::string& field) {
    LabelSet s;
    if (field.empty()) return s;
    for (const auto& name : split_fields(field, ';')) {
      if (name.empty()) throw Error(ErrorKind::Parse, "empty label name in '" + field + "'");
      s.push_back(intern(name));
    }
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    return s;
  };
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("sample_id,", 0) == 0) continue;
    const auto fields = split_fields(line, ',');
    if (fields.size() != 3) {
      throw Error(ErrorKind::Parse, "line " + std::to_string(line_no) + ": expected sample_id,truth,pred");
    }
    PredictionRecord r;
    try {
      std::size_t used = 0;
      r.sample_id = std::stoull(fields[0], &used);
      if (used != fields[0].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw Error(ErrorKind::Parse, "line " + std::to_string(line_no) + ": bad sample id '" + fields[0] + "'");
    }
    r.truth = parse_set(fields[1]);
    if (r.truth.empty()) throw Error(ErrorKind::Parse, "line " + std::to_string(line_no) + ": empty truth");
    r.predicted = parse_set(fields[2]);
    out.records.push_back(std::move(r));
  }
  return out;
}

SeedRun run_seed(const ExperimentConfig& config, const LearnerConfig& learner_config, std::uint64_t seed,
                 const Datasets& data, const std::optional<fs::path>& out_dir) {
  const auto& h = *data.hierarchy;
  SeedRun run;
  run.seed = seed;
  run.learner = learner_config;
  run.tasks = task_configuration_for(config, h, learner_config, seed);
  run.matrix = EvalMatrix(run.tasks.task_count());

  std::ofstream task_log;
  if (out_dir) {
    fs::create_directories(*out_dir);
    write_text(*out_dir / "task_config.json", run.tasks.to_json(h) + "\n");
    task_log.open(*out_dir / "tasks.jsonl", std::ios::binary);
    if (!task_log) throw Error(ErrorKind::Io, "cannot write " + (*out_dir / "tasks.jsonl").string());
    if (config.write_predictions) fs::create_directories(*out_dir / "predictions");
  }

  Learner learner(learner_config, data.hierarchy, data.train->dim(), seed);
  const std::size_t tasks = run.tasks.task_count();
  const bool joint = learner_config.algorithm == Algorithm::Joint;
  for (std::size_t t = 0; t < tasks; ++t) {
    learner.begin_task(t, run.tasks.tasks[t]);
    std::optional<IncompleteView> train_view, val_view;
    if (!joint) {
      train_view.emplace(*data.train, run.tasks, t);
      val_view.emplace(*data.in_task_val, run.tasks, t);
    }
    std::optional<CompleteView> complete_train, complete_val;
    if (learner_config.complete_information()) complete_train.emplace(*data.train, run.tasks, t);
    if (joint) complete_val.emplace(*data.in_task_val, run.tasks, t);

    const auto items = learner.training_items(train_view ? &*train_view : nullptr,
                                              complete_train ? &*complete_train : nullptr);
    auto validate = [&]() -> std::optional<double> {
      if (complete_val) {
        if (complete_val->size() == 0) return std::nullopt;
        return pw_js(learner.evaluate(*complete_val));
      }
      if (val_view->size() == 0) return std::nullopt;
      return learner.in_task_score(*val_view);
    };
    TaskRecord record;
    record.task = t;
    record.log = learner.train_on(items, validate);
    if (train_view) learner.add_to_buffer(*train_view);
    learner.end_task();
    record.log.buffer_size = learner.buffer().size();

    const CompleteView test_view(*data.test, run.tasks, t);
    const auto records = learner.evaluate(test_view);
    record.test = score(records);
    std::unordered_map<std::size_t, std::size_t> slot;
    const auto positions = test_view.positions();
    for (std::size_t i = 0; i < positions.size(); ++i) slot.emplace(positions[i], i);
    for (std::size_t k = 0; k <= t; ++k) {
      std::vector<PredictionRecord> subset;
      for (std::size_t p : test_view.task_positions(k)) subset.push_back(records[slot.at(p)]);
      if (!subset.empty()) run.matrix.set(t, k, pw_js(subset), subset.size());
    }
    record.r_row = run.matrix.row(t);

    const CompleteView post_view(*data.post_task_val, run.tasks, t);
    if (post_view.size() > 0) record.post_task_val = score(learner.evaluate(post_view));

    if (out_dir) {
      task_log << task_log_json(record) << '\n';
      task_log.flush();
      if (config.write_predictions) {
        std::ofstream pred(*out_dir / "predictions" / ("test_task_" + std::to_string(t) + ".csv"), std::ios::binary);
        write_predictions_csv(pred, records, h);
      }
      const bool wanted = config.confusion_tasks.empty()
                              ? t + 1 == tasks
                              : std::find(config.confusion_tasks.begin(), config.confusion_tasks.end(), t) !=
                                    config.confusion_tasks.end();
      if (wanted) {
        const auto observed = run.tasks.observed_through(t);
        std::ofstream cm(*out_dir / ("confusion_task_" + std::to_string(t) + ".csv"), std::ios::binary);
        confusion(records, observed).write_csv(cm, h.names());
      }
    }
    run.records.push_back(std::move(record));
  }

  if (out_dir) {
    std::ofstream r_csv(*out_dir / "R.csv", std::ios::binary);
    run.matrix.write_csv(r_csv);
    ordered_json summary;
    summary["learner"] = learner_config.name();
    summary["seed"] = seed;
    summary["data_seed"] = data.data_seed;
    summary["tasks"] = tasks;
    summary["final_pwJS"] = run.records.empty() ? 0.0 : run.records.back().test.pw_js;
    summary["final_JS"] = run.records.empty() ? 0.0 : run.records.back().test.js;
    summary["final_MR"] = run.records.empty() ? 0.0 : run.records.back().test.mr;
    summary["learner_config"] = learner_to_json(learner_config);
    write_text(*out_dir / "summary.json", summary.dump(2) + "\n");
    if (config.save_checkpoints) nn::save_checkpoint(*out_dir / "model_final", learner.params(), head_names(learner, h));
  }
  return run;
}

// ---- aggregation ------------------------------------------------------------

std::vector<CurvePoint> aggregate(const std::vector<std::vector<Scores>>& per_run_curves) {
  std::size_t longest = 0;
  for (const auto& c : per_run_curves) longest = std::max(longest, c.size());
  std::vector<CurvePoint> out;
  for (std::size_t j = 0; j < longest; ++j) {
    CurvePoint p;
    p.task = j;
    std::vector<const Scores*> at_j;
    for (const auto& c : per_run_curves) {
      if (j < c.size()) at_j.push_back(&c[j]);
    }
    p.runs = at_j.size();
    auto stats = [&](double Scores::*field, double& mean, double& sd) {
      double sum = 0.0;
      for (const auto* s : at_j) sum += s->*field;
      mean = sum / static_cast<double>(at_j.size());
      double sq = 0.0;
      for (const auto* s : at_j) sq += (s->*field - mean) * (s->*field - mean);
      sd = std::sqrt(sq / static_cast<double>(at_j.size()));
    };
    stats(&Scores::pw_js, p.pw_js_mean, p.pw_js_std);
    stats(&Scores::js, p.js_mean, p.js_std);
    stats(&Scores::mr, p.mr_mean, p.mr_std);
    out.push_back(p);
  }
  return out;
}

void write_aggregate_csv(std::ostream& out, const std::vector<CurvePoint>& curve) {
  out << "task,pwJS_mean,pwJS_std,JS_mean,JS_std,MR_mean,MR_std,runs\n";
  for (const auto& p : curve) {
    out << p.task << ',' << format_double(p.pw_js_mean) << ',' << format_double(p.pw_js_std) << ','
        << format_double(p.js_mean) << ',' << format_double(p.js_std) << ',' << format_double(p.mr_mean) << ','
        << format_double(p.mr_std) << ',' << p.runs << '\n';
  }
}

// ---- experiment -------------------------------------------------------------

RunSummary run_experiment(const ExperimentConfig& config, bool write_outputs) {
  config.validate();
  if (write_outputs) {
    fs::create_directories(config.out);
    write_text(config.out / "config.json", config.to_json().dump(2) + "\n");
  }

  struct Job {
    std::size_t learner;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t l = 0; l < config.learners.size(); ++l) {
    for (auto s : config.seeds) jobs.push_back({l, s});
  }

  // Datasets depend only on the data seed; share them between jobs.
  std::mutex data_mutex;
  std::map<std::uint64_t, std::shared_ptr<const Datasets>> cache;
  std::map<std::uint64_t, std::string> data_errors;
  auto datasets_for = [&](std::uint64_t seed) -> std::shared_ptr<const Datasets> {
    const std::uint64_t data_seed = config.data.seed.value_or(seed);
    std::lock_guard lock(data_mutex);
    if (auto it = cache.find(data_seed); it != cache.end()) return it->second;
    if (auto it = data_errors.find(data_seed); it != data_errors.end()) throw Error(ErrorKind::InvalidSpec, it->second);
    try {
      auto d = std::make_shared<const Datasets>(build_datasets(config, data_seed));
      cache.emplace(data_seed, d);
      return d;
    } catch (const std::exception& e) {
      data_errors.emplace(data_seed, e.what());
      throw;
    }
  };

  RunSummary summary;
  summary.runs.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const auto& job = jobs[i];
      const auto& lc = config.learners[job.learner];
      std::optional<fs::path> dir;
      if (write_outputs) dir = config.out / lc.name() / ("seed_" + std::to_string(job.seed));
      try {
        const auto data = datasets_for(job.seed);
        summary.runs[i] = run_seed(config, lc, job.seed, *data, dir);
      } catch (const std::exception& e) {
        SeedRun failed;
        failed.seed = job.seed;
        failed.learner = lc;
        failed.failure = e.what();
        summary.runs[i] = std::move(failed);
      }
    }
  };
  const std::size_t threads = std::min(config.threads, jobs.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  ordered_json failures = ordered_json::array();
  for (const auto& r : summary.runs) {
    if (r.failure) {
      ++summary.failures;
      failures.push_back({{"learner", r.learner.name()}, {"seed", r.seed}, {"error", *r.failure}});
    }
  }
  if (write_outputs) {
    for (const auto& lc : config.learners) {
      std::vector<std::vector<Scores>> curves;
      for (const auto& r : summary.runs) {
        if (r.failure || r.learner.name() != lc.name()) continue;
        std::vector<Scores> c;
        for (const auto& rec : r.records) c.push_back(rec.test);
        curves.push_back(std::move(c));
      }
      if (curves.empty()) continue;
      std::ofstream out(config.out / lc.name() / "aggregate.csv", std::ios::binary);
      write_aggregate_csv(out, aggregate(curves));
    }
    if (summary.failures > 0) write_text(config.out / "failures.json", failures.dump(2) + "\n");
  }
  return summary;
}

// ---- report -----------------------------------------------------------------

namespace {

std::vector<fs::path> seed_dirs(const fs::path& learner_dir) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(learner_dir)) {
    if (entry.is_directory() && entry.path().filename().string().rfind("seed_", 0) == 0 &&
        fs::exists(entry.path() / "tasks.jsonl")) {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Scores> read_task_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::vector<Scores> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      Scores s;
      s.pw_js = j.at("pwJS_avg").get<double>();
      s.js = j.at("JS_avg").get<double>();
      s.mr = j.at("MR_avg").get<double>();
      s.count = j.value("test_samples", std::size_t{0});
      out.push_back(s);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
    }
  }
  return out;
}

void rebuild_confusion(const fs::path& seed_dir, std::size_t task) {
  const auto pred_path = seed_dir / "predictions" / ("test_task_" + std::to_string(task) + ".csv");
  const auto config_path = seed_dir / "task_config.json";
  if (!fs::exists(pred_path) || !fs::exists(config_path)) return;
  std::ifstream pin(pred_path);
  auto named = read_predictions_csv(pin);
  std::ifstream cin(config_path);
  const auto cfg = json::parse(cin);
  std::unordered_map<std::string, ClassIndex> ids;
  for (std::size_t i = 0; i < named.names.size(); ++i) ids.emplace(named.names[i], i);
  std::vector<ClassIndex> order;
  const auto& task_list = cfg.at("tasks");
  for (std::size_t k = 0; k <= task && k < task_list.size(); ++k) {
    for (const auto& name : task_list[k]) {
      const auto n = name.get<std::string>();
      auto [it, inserted] = ids.emplace(n, named.names.size());
      if (inserted) named.names.push_back(n);
      order.push_back(it->second);
    }
  }
  std::ofstream out(seed_dir / ("confusion_task_" + std::to_string(task) + ".csv"), std::ios::binary);
  confusion(named.records, order).write_csv(out, named.names);
}

}  // namespace

std::vector<fs::path> report_directory(const fs::path& dir, const std::vector<std::size_t>& confusion_tasks) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::Io, dir.string() + " is not a directory");
  std::vector<fs::path> learner_dirs;
  if (!seed_dirs(dir).empty()) {
    learner_dirs.push_back(dir);
  } else {
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_directory() && !seed_dirs(entry.path()).empty()) learner_dirs.push_back(entry.path());
    }
    std::sort(learner_dirs.begin(), learner_dirs.end());
  }
  for (const auto& ld : learner_dirs) {
    std::vector<std::vector<Scores>> curves;
    for (const auto& sd : seed_dirs(ld)) {
      curves.push_back(read_task_log(sd / "tasks.jsonl"));
      for (std::size_t t : confusion_tasks) rebuild_confusion(sd, t);
    }
    std::ofstream out(ld / "aggregate.csv", std::ios::binary);
    write_aggregate_csv(out, aggregate(curves));
  }
  return learner_dirs;
}

}  // namespace iirc
