#include <doctest.h>

#include <cmath>
#include <memory>
#include <set>

#include "iirc/data.hpp"
#include "iirc/error.hpp"
#include "iirc/learners.hpp"
#include "iirc/random.hpp"
#include "test_util.hpp"

using namespace iirc;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  }
  return m;
}

struct Fixture {
  std::shared_ptr<const Hierarchy> h = std::make_shared<const Hierarchy>(testutil::grid_hierarchy(2, 2, 2));
  std::unique_ptr<LabeledStore> train;
  std::unique_ptr<LabeledStore> val;
  TaskConfiguration cfg;

  Fixture() {
    SynthSpec spec;
    spec.dim = 4;
    spec.samples_per_subclass = 30;
    train = std::make_unique<LabeledStore>(generate_synthetic(*h, spec), h, AssignmentRule{}, 1, InfoMode::Incomplete);
    spec.pool = 1;
    spec.samples_per_subclass = 5;
    val = std::make_unique<LabeledStore>(generate_synthetic(*h, spec), h, AssignmentRule{}, 2, InfoMode::Incomplete);
    cfg.tasks = {{h->index_of("super0"), h->index_of("super1")},
                 {h->index_of("s0c0"), h->index_of("s1c0"), h->index_of("solo0")},
                 {h->index_of("s0c1"), h->index_of("s1c1"), h->index_of("solo1")}};
  }

  LearnerConfig small(Algorithm a) const {
    auto c = LearnerConfig::defaults(a);
    c.epochs = 2;
    c.batch_size = 16;
    c.hidden = {8};
    c.lr = 0.1;
    return c;
  }

  void run_task(Learner& l, std::size_t t) const {
    l.begin_task(t, cfg.tasks[t]);
    const IncompleteView tv(*train, cfg, t);
    const IncompleteView vv(*val, cfg, t);
    if (l.config().complete_information()) {
      const CompleteView full(*train, cfg, t);
      l.train_task(tv, vv, &full);
    } else {
      l.train_task(tv, vv);
    }
    l.add_to_buffer(tv);
    l.end_task();
  }
};

}  // namespace

TEST_CASE("A-GEM projection by hand") {
  const std::vector<double> g{1.0, 0.0}, ref{-1.0, 1.0};
  const auto out = agem_project(g, ref);
  CHECK(out[0] == doctest::Approx(0.5));
  CHECK(out[1] == doctest::Approx(0.5));
  const std::vector<double> agree{0.0, 2.0};
  CHECK(agem_project(agree, ref) == agree);
  CHECK_THROWS_AS(agem_project(g, std::vector<double>{1.0}), Error);
}

TEST_CASE("herding and random selection") {
  Eigen::MatrixXd f(3, 2);
  f << 0, 0, 1, 0, 3, 0;  // mean (4/3, 0): (1, 0) is closest
  CHECK(select_herding(f, 1) == std::vector<std::size_t>{1});
  CHECK(select_herding(f, 2).size() == 2);
  CHECK(select_herding(f, 5).size() == 3);
  const auto pick = select_random(10, 4, 3);
  CHECK(pick.size() == 4);
  CHECK(std::set<std::size_t>(pick.begin(), pick.end()).size() == 4);
  CHECK(select_random(10, 4, 3) == pick);
}

TEST_CASE("margin ranking and LUCIR weight") {
  const std::vector<double> neg{0.6, 0.1, -1.0};
  CHECK(margin_ranking(0.5, neg, 0.5, 1) == doctest::Approx(0.6));
  CHECK(margin_ranking(0.5, neg, 0.5, 2) == doctest::Approx(0.7));
  CHECK(margin_ranking(0.5, neg, 0.5, 3) == doctest::Approx(0.7));
  CHECK(lucir_lambda(5.0, 5, 20) == doctest::Approx(2.5));
  CHECK(lucir_lambda(5.0, 5, 0) == 0.0);
}

TEST_CASE("LUCIR objective gradient, eta included") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto p = nn::ModelParams::init({3, {5}, nn::HeadKind::CosineNorm}, seed);
    nn::expand_head(p, 5, seed);
    p.eta = 3.0;
    auto snap = nn::ModelParams::init({3, {5}, nn::HeadKind::CosineNorm}, seed + 100);
    nn::expand_head(snap, 2, seed);
    LucirBatch b;
    b.x = random_matrix(6, 3, seed + 1);
    b.targets = Eigen::MatrixXd::Zero(6, 5);
    b.first_new_column = 2;
    for (Eigen::Index i = 0; i < 6; ++i) {
      const auto y = static_cast<std::size_t>(i % 5);
      b.targets(i, static_cast<Eigen::Index>(y)) = 1.0;
      b.old_label_column.push_back(y < 2 ? std::optional<std::size_t>{y} : std::nullopt);
    }
    const LucirSettings s{2.0, 0.5, 2};
    const auto obj = lucir_objective(p, snap, b, s);
    CHECK(obj.margin > 0.0);
    CHECK(obj.total == doctest::Approx(obj.classification + obj.distillation + obj.margin));
    const double err = testutil::max_gradient_error(
        p, obj.grads.flatten(), [&](const nn::ModelParams& q) { return lucir_objective(q, snap, b, s).total; });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("replay buffer budget") {
  ReplayBuffer buf(2);
  buf.insert_class(3, {{1, {0.0}, {3}}, {2, {0.0}, {3}}});
  CHECK(buf.size() == 2);
  CHECK(buf.entries(3).size() == 2);
  CHECK(buf.entries(4).empty());
  CHECK_THROWS_AS(buf.insert_class(3, {}), Error);
  CHECK_THROWS_AS(buf.insert_class(5, {{1, {0.0}, {5}}, {2, {0.0}, {5}}, {3, {0.0}, {5}}}), Error);
}

TEST_CASE("buffer contents per strategy") {
  Fixture fx;
  for (auto a : {Algorithm::ER, Algorithm::ERInfinite, Algorithm::Finetune, Algorithm::ICaRLCNN}) {
    Learner l(fx.small(a), fx.h, 4, 0);
    fx.run_task(l, 0);
    fx.run_task(l, 1);
    const auto& buf = l.buffer();
    if (a == Algorithm::Finetune) {
      CHECK(buf.empty());
    } else if (a == Algorithm::ERInfinite) {
      std::size_t expected = 0;
      for (std::size_t t = 0; t < 2; ++t) {
        for (ClassIndex c : fx.cfg.tasks[t]) expected += fx.train->indices(c).size();
      }
      CHECK(buf.size() == expected);
    } else {
      CHECK(buf.size() == 5 * 20);
      for (ClassIndex c : buf.classes()) CHECK(buf.entries(c).size() == 20);
    }
    // Stored labels stay as served.
    for (const auto& e : buf.entries()) CHECK(e.labels.size() == 1);
  }
}

TEST_CASE("strategies without task-0 differences train identical task-0 models") {
  Fixture fx;
  std::vector<double> reference;
  for (auto a : {Algorithm::Finetune, Algorithm::ER, Algorithm::ERInfinite, Algorithm::AGEM, Algorithm::ICaRLCNN}) {
    Learner l(fx.small(a), fx.h, 4, 11);
    fx.run_task(l, 0);
    const auto flat = l.params().flatten();
    if (reference.empty()) {
      reference = flat;
    } else {
      CHECK(flat == reference);
    }
  }
}

TEST_CASE("learner bookkeeping") {
  Fixture fx;
  Learner l(fx.small(Algorithm::LUCIR), fx.h, 4, 0);
  CHECK(l.config().head() == nn::HeadKind::CosineNorm);
  CHECK(l.config().selection == Selection::Herding);
  fx.run_task(l, 0);
  CHECK(l.snapshot().has_value());
  fx.run_task(l, 1);
  CHECK(l.params().num_classes() == 5);
  CHECK(l.old_class_count() == 2);
  CHECK(l.column_of(fx.cfg.tasks[1][0]) == std::optional<std::size_t>{2});
  CHECK_THROWS_AS(l.begin_task(2, fx.cfg.tasks[0]), Error);
  CHECK(parse_algorithm("icarl-norm") == Algorithm::ICaRLNorm);
  CHECK_THROWS_AS(parse_algorithm("ewc"), Error);
  CHECK(all_algorithms().size() == 9);
}

TEST_CASE("iCaRL targets mix snapshot probabilities on old columns") {
  Fixture fx;
  auto cfg = fx.small(Algorithm::ICaRLCNN);
  Learner l(cfg, fx.h, 4, 0);
  fx.run_task(l, 0);
  l.begin_task(1, fx.cfg.tasks[1]);
  const IncompleteView tv(*fx.train, fx.cfg, 1);
  const auto items = l.training_items(&tv, nullptr);
  const std::vector<TrainItem> one{items.front()};
  const auto t = l.make_targets(one);
  Eigen::MatrixXd x(1, 4);
  for (int c = 0; c < 4; ++c) x(0, c) = items.front().features[static_cast<std::size_t>(c)];
  const auto soft = nn::forward(*l.snapshot(), x).probabilities();
  CHECK(t(0, 0) == doctest::Approx(soft(0, 0)));
  CHECK(t(0, 1) == doctest::Approx(soft(0, 1)));
  CHECK(t.row(0).rightCols(3).sum() == doctest::Approx(1.0));
}
