// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.
//
//   iirc_acceptance [path-to-iirc-cli]
//
// The CLI path is needed for the determinism criterion; without it that
// criterion is reported as FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "iirc/data.hpp"
#include "iirc/harness.hpp"
#include "iirc/learners.hpp"
#include "iirc/metrics.hpp"
#include "iirc/nn.hpp"
#include "iirc/random.hpp"
#include "iirc/stream.hpp"

using namespace iirc;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail) {
  std::printf("%s  %2d %s: %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c, d);
  return buf;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("iirc_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// 4 superclasses x 4 subclasses + 4 standalone classes.
std::string small_hierarchy_tsv() {
  std::string out;
  for (int s = 0; s < 4; ++s) {
    for (int c = 0; c < 4; ++c) out += "s" + std::to_string(s) + "c" + std::to_string(c) + "\tsuper" + std::to_string(s) + "\n";
  }
  for (int k = 0; k < 4; ++k) out += "solo" + std::to_string(k) + "\n";
  return out;
}

// ---- 1-3: counts ---------------------------------------------------------------

void criteria_counts() {
  const auto t0 = Clock::now();
  ExperimentConfig config;
  const auto data = build_datasets(config, 0);
  const auto rep = split_report(data, config.assignment);
  const double elapsed = seconds_since(t0);
  std::map<std::string, std::pair<std::size_t, std::size_t>> rows;
  for (const auto& r : rep.rows) rows[r.split] = {r.with_duplicates, r.without_duplicates};
  const bool ok1 = rows["train"] == std::pair<std::size_t, std::size_t>{46160, 40000} &&
                   rows["in_task_val"] == std::pair<std::size_t, std::size_t>{5770, 5000} && rep.identity_holds &&
                   elapsed < 10.0;
  std::ostringstream d1;
  d1 << "train " << rows["train"].first << "/" << rows["train"].second << ", in-task val " << rows["in_task_val"].first
     << "/" << rows["in_task_val"].second << ", post-task val " << rows["post_task_val"].first << ", test "
     << rows["test"].first << ", identity " << (rep.identity_holds ? "holds" : rep.detail) << ", "
     << fmt("%.2f s", elapsed);
  report(1, "split-count oracle", ok1, d1.str());

  const auto& h = *data.hierarchy;
  const auto bus = data.train->indices(h.index_of("bus")).size();
  const auto vehicles = data.train->indices(h.index_of("vehicles")).size();
  const auto mushroom = data.train->indices(h.index_of("mushroom")).size();
  std::ostringstream d2;
  d2 << "bus " << bus << ", vehicles " << vehicles << ", mushroom " << mushroom << " (expected 320, 1280, 400)";
  report(2, "per-class size oracle", bus == 320 && vehicles == 1280 && mushroom == 400, d2.str());

  std::vector<HierarchyRecord> records;
  for (int c = 0; c < 10; ++c) records.push_back({"child" + std::to_string(c), "parent"});
  auto cap_h = std::make_shared<const Hierarchy>(Hierarchy::build(records));
  SynthSpec spec;
  spec.samples_per_subclass = 400;
  LabeledStore store(generate_synthetic(*cap_h, spec), cap_h, AssignmentRule{}, 0, InfoMode::Incomplete);
  const auto parent = store.indices(cap_h->index_of("parent")).size();
  const auto child = store.indices(cap_h->index_of("child0")).size();
  std::ostringstream d3;
  d3 << "superclass with 10 children of 400 receives " << parent << " (expected 1280), each child keeps " << child;
  report(3, "cap rule", parent == 1280 && child == 320, d3.str());
}

// ---- 4: metrics ----------------------------------------------------------------

void criterion_metrics() {
  Rng rng(2024);
  double worst = 0.0;
  bool ordered = true;
  std::size_t batches = 0;
  for (int b = 0; b < 100; ++b) {
    std::vector<PredictionRecord> batch;
    double mr = 0.0, js = 0.0, pw = 0.0;
    for (int i = 0; i < 100; ++i) {
      std::set<ClassIndex> truth, pred;
      const auto nt = 1 + rng.below(4);
      while (truth.size() < nt) truth.insert(rng.below(12));
      const auto np = rng.below(6);
      while (pred.size() < np) pred.insert(rng.below(12));
      std::size_t inter = 0;
      for (auto c : pred) inter += truth.count(c);
      std::set<ClassIndex> uni = truth;
      uni.insert(pred.begin(), pred.end());
      mr += truth == pred ? 1.0 : 0.0;
      js += static_cast<double>(inter) / static_cast<double>(uni.size());
      if (!pred.empty()) {
        pw += static_cast<double>(inter) / static_cast<double>(uni.size()) * static_cast<double>(inter) /
              static_cast<double>(pred.size());
      }
      batch.push_back({static_cast<std::uint64_t>(i), LabelSet(truth.begin(), truth.end()),
                       LabelSet(pred.begin(), pred.end())});
    }
    const auto s = score(batch);
    worst = std::max({worst, std::abs(s.mr - mr / 100), std::abs(s.js - js / 100), std::abs(s.pw_js - pw / 100)});
    ordered = ordered && s.mr <= s.pw_js && s.pw_js <= s.js;
    ++batches;
  }
  report(4, "metric oracle", worst <= 1e-12 && ordered,
         fmt("10000 cases in %.0f batches, max deviation %.3g, MR <= pwJS <= JS on every batch: ", batches, worst) +
             (ordered ? "yes" : "no"));
}

// ---- 5: confusion ----------------------------------------------------------------

void criterion_confusion() {
  ExperimentConfig config;
  const auto data = build_datasets(config, 0);
  const auto& h = *data.hierarchy;
  const auto tasks = generate_task_configuration(h, 10, 5, 0);
  const CompleteView view(*data.test, tasks, tasks.task_count() - 1);
  std::vector<PredictionRecord> records;
  for (std::size_t i = 0; i < view.size(); ++i) {
    auto item = view.item(i);
    records.push_back({data.test->sample(item.position).id, item.labels, item.labels});
  }
  const auto order = tasks.observed_through(tasks.task_count() - 1);
  const auto cm = confusion(records, order);
  std::map<ClassIndex, std::size_t> slot;
  for (std::size_t i = 0; i < order.size(); ++i) slot[order[i]] = i;
  double worst = 0.0;
  for (ClassIndex s : h.superclasses()) {
    const double expected = 1.0 / static_cast<double>(h.children(s).size());
    for (ClassIndex c : h.children(s)) worst = std::max(worst, std::abs(cm.normalized(slot[s], slot[c]) - expected));
  }
  double diag = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i) diag = std::max(diag, std::abs(cm.normalized(i, i) - 1.0));
  const double whale = cm.normalized(slot[h.index_of("aquatic mammals")], slot[h.index_of("whale")]);
  const double pickup = cm.normalized(slot[h.index_of("vehicles")], slot[h.index_of("pickup truck")]);
  const bool ok = worst <= 1e-9 && diag <= 1e-9 && std::abs(whale - 0.2) <= 1e-9 && std::abs(pickup - 0.125) <= 1e-9;
  report(5, "confusion fractions", ok,
         fmt("aquatic mammals->whale %.4f, vehicles->pickup truck %.4f, max |super->child - 1/children| %.2g, "
             "max |diag - 1| %.2g",
             whale, pickup, worst, diag));
}

// ---- 6: gradients ------------------------------------------------------------------

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, bool unit = false) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = unit ? rng.uniform() : rng.normal();
  }
  return m;
}

nn::ModelParams random_params(nn::HeadKind head, std::size_t in, std::vector<std::size_t> hidden, std::size_t classes,
                              Rng& rng) {
  auto p = nn::ModelParams::init({in, std::move(hidden), head}, rng());
  nn::expand_head(p, classes, rng());
  for (Eigen::Index r = 0; r < p.head_weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < p.head_weight.cols(); ++c) p.head_weight(r, c) = rng.normal();
    p.head_bias(r) = 0.2 * rng.normal();
  }
  if (head == nn::HeadKind::CosineNorm) p.eta = 1.0 + 4.0 * rng.uniform();
  return p;
}

// Central differences need every ReLU input away from its kink and every
// feature vector away from zero, where unit() is singular.
bool smooth_at(const nn::ModelParams& p, const Eigen::MatrixXd& x) {
  const auto trace = nn::forward(p, x);
  for (const auto& pre : trace.pre) {
    if (pre.size() > 0 && pre.cwiseAbs().minCoeff() < 1e-3) return false;
  }
  return trace.features.rowwise().norm().minCoeff() > 1e-2;
}

double relative_error(nn::ModelParams p, const std::vector<double>& analytic,
                      const std::function<double(const nn::ModelParams&)>& loss) {
  auto flat = p.flatten();
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double keep = flat[i];
    flat[i] = keep + h;
    p.unflatten(flat);
    const double up = loss(p);
    flat[i] = keep - h;
    p.unflatten(flat);
    const double down = loss(p);
    flat[i] = keep;
    const double numeric = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(numeric - analytic[i]) / std::max({std::abs(numeric), std::abs(analytic[i]), 1e-4}));
  }
  return worst;
}

void criterion_gradients() {
  Rng rng(77);
  double worst_bce = 0.0, worst_distill = 0.0, worst_lucir = 0.0;
  std::size_t largest = 0;
  int models = 0, draws = 0;
  for (int trial = 0; trial < 10; ++trial) {
    for (auto head : {nn::HeadKind::Standard, nn::HeadKind::CosineNorm}) {
      const std::size_t in = 3 + rng.below(3);
      std::vector<std::size_t> hidden{4 + rng.below(4)};
      if (trial % 2) hidden.push_back(3 + rng.below(3));
      const std::size_t classes = 3 + rng.below(3);
      nn::ModelParams p;
      Eigen::MatrixXd x;
      do {
        p = random_params(head, in, hidden, classes, rng);
        x = random_matrix(5, static_cast<Eigen::Index>(in), rng);
        ++draws;
      } while (!smooth_at(p, x));
      largest = std::max(largest, p.parameter_count());
      Eigen::MatrixXd hard = Eigen::MatrixXd::Zero(5, static_cast<Eigen::Index>(classes));
      for (Eigen::Index i = 0; i < 5; ++i) hard(i, static_cast<Eigen::Index>(rng.below(classes))) = 1.0;

      const auto bce = bce_objective(p, x, hard);
      worst_bce = std::max(worst_bce, relative_error(p, bce.grads.flatten(), [&](const nn::ModelParams& q) {
                             return bce_objective(q, x, hard).total;
                           }));

      // Distillation: old columns carry a frozen model's probabilities.
      const auto snapshot = random_params(head, in, hidden, 2, rng);
      Eigen::MatrixXd soft = hard;
      soft.leftCols(2) = nn::forward(snapshot, x).probabilities();
      const auto distill = bce_objective(p, x, soft);
      worst_distill = std::max(worst_distill, relative_error(p, distill.grads.flatten(), [&](const nn::ModelParams& q) {
                                 return bce_objective(q, x, soft).total;
                               }));

      if (head == nn::HeadKind::CosineNorm) {
        LucirBatch b{x, hard, {}, 2};
        for (Eigen::Index i = 0; i < 5; ++i) {
          b.old_label_column.push_back(i % 2 ? std::optional<std::size_t>{rng.below(2)} : std::nullopt);
        }
        const LucirSettings s{lucir_lambda(5.0, classes - 2, 2), 0.5, 2};
        const auto obj = lucir_objective(p, snapshot, b, s);
        worst_lucir = std::max(worst_lucir, relative_error(p, obj.grads.flatten(), [&](const nn::ModelParams& q) {
                                 return lucir_objective(q, snapshot, b, s).total;
                               }));
      }
      ++models;
    }
  }
  const double worst = std::max({worst_bce, worst_distill, worst_lucir});
  report(6, "gradient checks", worst < 1e-4 && largest <= 200,
         fmt("%.0f models (<= %.0f params, %.0f draws to avoid ReLU kinks), max relative error: BCE %.2g", models,
             static_cast<double>(largest), draws, worst_bce) +
             fmt(", BCE+distillation %.2g, LUCIR total incl. eta %.2g", worst_distill, worst_lucir));
}

// ---- 7: A-GEM ------------------------------------------------------------------------

void criterion_agem() {
  Rng rng(5);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 2 + rng.below(30);
    std::vector<double> g(n), r(n);
    for (auto& v : g) v = rng.normal();
    for (auto& v : r) v = rng.normal();
    const auto applied = agem_project(g, r);
    double dot = 0.0;
    for (std::size_t k = 0; k < n; ++k) dot += applied[k] * r[k];
    worst = std::min(worst, dot);
  }
  const auto ex = agem_project(std::vector<double>{1.0, 0.0}, std::vector<double>{-1.0, 1.0});
  const bool example = std::abs(ex[0] - 0.5) < 1e-15 && std::abs(ex[1] - 0.5) < 1e-15;
  report(7, "A-GEM projection", worst >= -1e-9 && example,
         fmt("min <applied, g_ref> over 1000 pairs %.3g; (1,0)/(-1,1) -> (%.3g, %.3g)", worst, ex[0], ex[1]));
}

// ---- 8: behaviour --------------------------------------------------------------------

void criterion_behaviour() {
  const auto dir = scratch("behaviour");
  std::ofstream(dir / "small.tsv") << small_hierarchy_tsv();
  auto config = ExperimentConfig::from_json(nlohmann::json::parse(R"({
    "hierarchy": "small.tsv",
    "data": {"dim": 16, "train_per_class": 500, "test_per_class": 100},
    "tasks": {"first_task_size": 4, "task_size": 10, "first_task_policy": "superclasses_only"},
    "learners": [{"name": "finetune", "hidden": [32]},
                 {"name": "incremental-joint", "hidden": [32]},
                 {"name": "er-infinite", "hidden": [32]}]
  })"),
                                            dir);
  const auto data = build_datasets(config, *config.data.seed);
  const auto& h = *data.hierarchy;
  const std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

  double slowest = 0.0;
  double ft_sum = 0.0, ij_sum = 0.0, floor_sum = 0.0;
  std::size_t ij_wins = 0;
  std::ostringstream per_seed, finals;
  for (auto seed : seeds) {
    std::map<Algorithm, SeedRun> runs;
    for (const auto& lc : config.learners) {
      const auto t0 = Clock::now();
      runs[lc.algorithm] = run_seed(config, lc, seed, data, std::nullopt);
      slowest = std::max(slowest, seconds_since(t0));
    }
    const auto& ft = runs[Algorithm::Finetune];
    const std::size_t last = ft.tasks.task_count() - 1;
    const double ft_r = ft.matrix.at(last, 0).value_or(1.0);
    const double ij_r = runs[Algorithm::IncrementalJoint].matrix.at(last, 0).value_or(0.0);
    ft_sum += ft_r;
    ij_sum += ij_r;
    // A model that has learned the final task predicts exactly {subclass} for
    // task-0 samples whose subclass arrives last, which scores 1/2 each.
    std::size_t last_children = 0;
    for (ClassIndex c : ft.tasks.tasks[last]) last_children += h.parent(c).has_value();
    const double floor = 0.5 * static_cast<double>(last_children) / static_cast<double>(h.subclasses().size());
    floor_sum += floor;
    const double ij_final = runs[Algorithm::IncrementalJoint].records.back().test.pw_js;
    const double inf_final = runs[Algorithm::ERInfinite].records.back().test.pw_js;
    ij_wins += ij_final > inf_final;
    per_seed << fmt(" %.3f", ft_r);
    finals << fmt(" %.3f>%.3f", ij_final, inf_final);
  }
  const double n = static_cast<double>(seeds.size());
  const bool time_ok = slowest < 60.0;
  report(8, "behaviour (a) finetune forgets task 0", ft_sum / n < 0.2 && ij_sum / n > 0.6 && time_ok,
         fmt("mean final R_j0: finetune %.3f (need < 0.2), incremental-joint %.3f (need > 0.6); ", ft_sum / n,
             ij_sum / n) +
             "finetune per seed" + per_seed.str() +
             fmt("; half-credit floor from final-task subclasses %.3f", floor_sum / n));
  report(8, "behaviour (b) incremental-joint beats ER-infinite", ij_wins >= 4 && time_ok,
         std::to_string(ij_wins) + "/5 seeds, final pwJS incremental-joint>ER-infinite:" + finals.str() +
             fmt("; slowest run %.1f s", slowest));
}

// ---- 9: determinism ------------------------------------------------------------------

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    out[fs::relative(entry.path(), root).string()] = s.str();
  }
  return out;
}

void criterion_determinism(const std::string& cli) {
  if (cli.empty() || !fs::exists(cli)) {
    report(9, "determinism", false, "CLI binary not given");
    return;
  }
  const auto dir = scratch("determinism");
  std::ofstream(dir / "small.tsv") << small_hierarchy_tsv();
  std::ofstream(dir / "config.json") << R"({
    "hierarchy": "small.tsv",
    "data": {"dim": 16, "train_per_class": 200, "test_per_class": 50},
    "tasks": {"first_task_size": 4, "task_size": 10, "first_task_policy": "superclasses_only"},
    "learners": [{"name": "er", "epochs": 3}, {"name": "agem", "epochs": 3},
                 {"name": "icarl-norm", "epochs": 3}, {"name": "lucir", "epochs": 3}],
    "seeds": [0],
    "threads": 1,
    "save_checkpoints": true,
    "out": "out"
  })";
  const std::string cmd = "\"" + cli + "\" run --config \"" + (dir / "config.json").string() + "\" > /dev/null";
  std::vector<std::map<std::string, std::string>> trees;
  for (int pass = 0; pass < 2; ++pass) {
    fs::remove_all(dir / "out");
    if (std::system(cmd.c_str()) != 0) {
      report(9, "determinism", false, "run exited with an error");
      return;
    }
    trees.push_back(read_tree(dir / "out"));
  }
  std::size_t differing = 0;
  for (const auto& [name, bytes] : trees[0]) {
    auto it = trees[1].find(name);
    differing += it == trees[1].end() || it->second != bytes;
  }
  differing += trees[1].size() > trees[0].size() ? trees[1].size() - trees[0].size() : 0;
  report(9, "determinism", differing == 0 && !trees[0].empty(),
         std::to_string(trees[0].size()) + " output files, " + std::to_string(differing) + " differ");
}

// ---- 10: task configurations -----------------------------------------------------------

void criterion_configurations() {
  const auto& h = Hierarchy::cifar();
  std::size_t bad = 0;
  std::string first_problem;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto cfg = generate_task_configuration(h, 10, 5, seed);
    std::vector<std::ptrdiff_t> task_of(h.size(), -1);
    std::string problem;
    for (std::size_t t = 0; t < cfg.tasks.size(); ++t) {
      const auto n = cfg.tasks[t].size();
      if (t == 0 && n != 10) problem = "first task size";
      if (t > 0 && t + 1 < cfg.tasks.size() && n != 5) problem = "middle task size";
      if (t + 1 == cfg.tasks.size() && (n == 0 || n > 5)) problem = "last task size";
      for (ClassIndex c : cfg.tasks[t]) {
        if (task_of[c] >= 0) problem = "class repeated";
        task_of[c] = static_cast<std::ptrdiff_t>(t);
        if (t == 0 && !h.is_superclass(c)) problem = "non-superclass in first task";
      }
    }
    for (ClassIndex c = 0; c < h.size(); ++c) {
      if (task_of[c] < 0) problem = "class missing";
      if (const auto p = h.parent(c); p && task_of[*p] >= task_of[c]) problem = "subclass before its superclass";
    }
    if (!problem.empty()) {
      ++bad;
      if (first_problem.empty()) first_problem = "seed " + std::to_string(seed) + ": " + problem;
    }
  }
  report(10, "task-configuration validity", bad == 0,
         "1000 CIFAR configurations, " + std::to_string(bad) + " invalid" +
             (first_problem.empty() ? "" : " (" + first_problem + ")"));
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "";
  const std::vector<std::function<void()>> steps{
      criteria_counts,     criterion_metrics, criterion_confusion, criterion_gradients, criterion_agem,
      criterion_behaviour, [&] { criterion_determinism(cli); },    criterion_configurations,
  };
  for (const auto& step : steps) {
    try {
      step();
    } catch (const std::exception& e) {
      std::printf("FAIL     criterion raised: %s\n", e.what());
      ++failures;
    }
  }
  std::printf("%d criteria line(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
