// iirc: command line front end.
//
//   iirc split      [--config F] [--seed N] [--verify] [--dump DIR]
//   iirc gen-config [--config F] --seed N... [--out DIR]
//   iirc run        [--config F] [--seed N...] [--learner NAME...] [--out DIR] ...
//   iirc eval       PRED.csv [--confusion OUT.csv]
//   iirc report     DIR... [--confusion-task J...]
//
// Exit codes: 0 ok, 1 usage, 2 data or config error, 3 a run failed.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "iirc/error.hpp"
#include "iirc/harness.hpp"
#include "iirc/nn.hpp"

namespace fs = std::filesystem;
using namespace iirc;

namespace {

constexpr int kUsage = 1;
constexpr int kDataError = 2;
constexpr int kRunFailure = 3;

ExperimentConfig load_config(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : ExperimentConfig::load(path);
}

std::optional<std::size_t> parse_buffer(const std::string& text) {
  if (text == "inf") return std::nullopt;
  std::size_t used = 0;
  const auto v = std::stoull(text, &used);
  if (used != text.size()) throw Error(ErrorKind::InvalidConfig, "bad --buffer '" + text + "'");
  return v;
}

nlohmann::ordered_json scores_json(const Scores& s) {
  nlohmann::ordered_json j;
  j["MR"] = s.mr;
  j["JS"] = s.js;
  j["pwJS"] = s.pw_js;
  j["samples"] = s.count;
  return j;
}

int cmd_split(const std::string& config_path, std::uint64_t seed, bool seed_given, bool verify,
              const std::string& dump) {
  auto config = load_config(config_path);
  const auto data_seed = seed_given ? seed : config.data.seed.value_or(config.seeds.front());
  const auto data = build_datasets(config, data_seed);
  const auto report = split_report(data, config.assignment);
  write_split_csv(std::cout, report);
  if (!dump.empty()) {
    fs::create_directories(dump);
    const auto& h = *data.hierarchy;
    auto dump_store = [&](const char* name, const LabeledStore& s) {
      std::ofstream out(fs::path(dump) / (std::string(name) + ".csv"), std::ios::binary);
      out << "class,positions\n";
      for (ClassIndex c = 0; c < h.size(); ++c) out << h.name(c) << ',' << s.indices(c).size() << '\n';
    };
    dump_store("train", *data.train);
    dump_store("in_task_val", *data.in_task_val);
    dump_store("post_task_val", *data.post_task_val);
    dump_store("test", *data.test);
  }
  if (!report.identity_holds) {
    std::cerr << "count identity failed: " << report.detail << '\n';
    return verify ? kRunFailure : kDataError;
  }
  if (verify) std::cerr << "count identity holds\n";
  return 0;
}

int cmd_gen_config(const std::string& config_path, const std::vector<std::uint64_t>& seeds, const std::string& out) {
  auto config = load_config(config_path);
  const auto h = load_hierarchy(config.hierarchy);
  const auto use = seeds.empty() ? config.seeds : seeds;
  const fs::path dir = out.empty() ? fs::path(".") : fs::path(out);
  fs::create_directories(dir);
  for (auto s : use) {
    const auto tasks =
        generate_task_configuration(*h, config.first_task_size, config.task_size, s, config.first_task_policy);
    validate_task_configuration(*h, tasks);
    const auto path = dir / ("task_config_seed_" + std::to_string(s) + ".json");
    std::ofstream f(path, std::ios::binary);
    f << tasks.to_json(*h) << '\n';
    std::cout << path.string() << ": " << tasks.task_count() << " tasks\n";
  }
  return 0;
}

int eval_checkpoint(const ExperimentConfig& config, const std::string& prefix, std::uint64_t seed) {
  std::vector<std::string> class_names;
  const auto params = nn::load_checkpoint(prefix, &class_names);
  const auto data = build_datasets(config, config.data.seed.value_or(seed));
  const auto& h = *data.hierarchy;
  TaskConfiguration observed;
  observed.tasks.emplace_back();
  for (const auto& n : class_names) observed.tasks.front().push_back(h.index_of(n));
  const CompleteView view(*data.test, observed, 0);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(view.size()), static_cast<Eigen::Index>(data.test->dim()));
  for (std::size_t i = 0; i < view.size(); ++i) {
    const auto f = view.item(i).features;
    for (std::size_t c = 0; c < f.size(); ++c) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = f[c];
  }
  const auto columns = nn::predict_batch(params, x);
  std::vector<PredictionRecord> records;
  for (std::size_t i = 0; i < view.size(); ++i) {
    const auto item = view.item(i);
    PredictionRecord r{data.test->sample(item.position).id, item.labels, {}};
    for (auto col : columns[i]) r.predicted.push_back(observed.tasks.front()[col]);
    std::sort(r.predicted.begin(), r.predicted.end());
    records.push_back(std::move(r));
  }
  std::cout << scores_json(score(records)).dump() << '\n';
  return 0;
}

struct RunArgs {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> learners;
  std::string out;
  std::string buffer;
  std::size_t epochs = 0;
  std::size_t threads = 0;
  double lr = 0.0;
  bool save = false;
  std::string load;
};

int cmd_run(const RunArgs& a) {
  auto config = load_config(a.config);
  if (!a.seeds.empty()) config.seeds = a.seeds;
  if (!a.out.empty()) config.out = a.out;
  if (a.threads) config.threads = a.threads;
  if (a.save) config.save_checkpoints = true;
  if (!a.learners.empty()) {
    config.learners.clear();
    for (const auto& name : a.learners) config.learners.push_back(LearnerConfig::defaults(parse_algorithm(name)));
  }
  for (auto& l : config.learners) {
    if (!a.buffer.empty() && l.uses_buffer()) l.buffer_per_class = parse_buffer(a.buffer);
    if (a.epochs) l.epochs = a.epochs;
    if (a.lr > 0.0) l.lr = a.lr;
  }
  config.validate();
  if (!a.load.empty()) return eval_checkpoint(config, a.load, config.seeds.front());

  const auto summary = run_experiment(config, true);
  for (const auto& r : summary.runs) {
    std::cout << r.learner.name() << " seed " << r.seed << ": ";
    if (r.failure) {
      std::cout << "FAILED (" << *r.failure << ")\n";
      continue;
    }
    const auto& last = r.records.back().test;
    std::printf("pwJS %.4f  JS %.4f  MR %.4f  (%zu tasks)\n", last.pw_js, last.js, last.mr, r.records.size());
  }
  std::cout << "outputs in " << config.out.string() << '\n';
  return summary.failures > 0 ? kRunFailure : 0;
}

int cmd_eval(const std::string& path, const std::string& confusion_out) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  const auto named = read_predictions_csv(in);
  std::cout << scores_json(score(named.records)).dump() << '\n';
  if (!confusion_out.empty()) {
    std::vector<ClassIndex> order(named.names.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::ofstream out(confusion_out, std::ios::binary);
    confusion(named.records, order).write_csv(out, named.names);
  }
  return 0;
}

int cmd_report(const std::vector<std::string>& dirs, const std::vector<std::size_t>& tasks) {
  for (const auto& d : dirs) {
    for (const auto& ld : report_directory(d, tasks)) std::cout << (ld / "aggregate.csv").string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incremental implicitly-refined classification benchmark"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t split_seed = 0;
  bool verify = false;
  std::string dump;
  auto* split_cmd = app.add_subcommand("split", "Print per-split sample counts");
  split_cmd->add_option("--config", config_path, "Experiment config JSON");
  auto* seed_opt = split_cmd->add_option("--seed", split_seed, "Data seed (default: config data seed)");
  split_cmd->add_flag("--verify", verify, "Check the duplicate-count identity");
  split_cmd->add_option("--dump", dump, "Write per-class list sizes to this directory");

  std::vector<std::uint64_t> gen_seeds;
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("gen-config", "Write task configurations");
  gen_cmd->add_option("--config", config_path, "Experiment config JSON");
  gen_cmd->add_option("--seed", gen_seeds, "Seeds (default: config seeds)");
  gen_cmd->add_option("--out", gen_out, "Output directory");

  RunArgs run_args;
  auto* run_cmd = app.add_subcommand("run", "Train and evaluate learners");
  run_cmd->add_option("--config", run_args.config, "Experiment config JSON");
  run_cmd->add_option("--seed", run_args.seeds, "Run seeds");
  run_cmd->add_option("--learner", run_args.learners, "Learner names (replaces the config list)");
  run_cmd->add_option("--out", run_args.out, "Output directory");
  run_cmd->add_option("--buffer", run_args.buffer, "Exemplars per class, or inf");
  run_cmd->add_option("--epochs", run_args.epochs, "Epochs per task");
  run_cmd->add_option("--threads", run_args.threads, "Worker threads");
  run_cmd->add_option("--lr", run_args.lr, "Initial learning rate");
  run_cmd->add_flag("--save", run_args.save, "Save final model checkpoints");
  run_cmd->add_option("--load", run_args.load, "Evaluate a saved checkpoint PREFIX on the test set");

  std::string pred_path, confusion_out;
  auto* eval_cmd = app.add_subcommand("eval", "Score a predictions CSV");
  eval_cmd->add_option("predictions", pred_path, "CSV with sample_id,truth,pred")->required();
  eval_cmd->add_option("--confusion", confusion_out, "Write the normalized confusion matrix here");

  std::vector<std::string> report_dirs;
  std::vector<std::size_t> report_tasks;
  auto* report_cmd = app.add_subcommand("report", "Rebuild aggregate curves from run directories");
  report_cmd->add_option("dirs", report_dirs, "Run or learner directories")->required();
  report_cmd->add_option("--confusion-task", report_tasks, "Also rebuild confusion matrices for these tasks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (split_cmd->parsed()) return cmd_split(config_path, split_seed, seed_opt->count() > 0, verify, dump);
    if (gen_cmd->parsed()) return cmd_gen_config(config_path, gen_seeds, gen_out);
    if (run_cmd->parsed()) return cmd_run(run_args);
    if (eval_cmd->parsed()) return cmd_eval(pred_path, confusion_out);
    if (report_cmd->parsed()) return cmd_report(report_dirs, report_tasks);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}
