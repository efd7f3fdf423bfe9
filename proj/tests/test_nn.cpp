#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "iirc/error.hpp"
#include "iirc/nn.hpp"
#include "iirc/random.hpp"
#include "test_util.hpp"

using namespace iirc;
using namespace iirc::nn;

namespace {

ModelParams random_model(HeadKind head, std::vector<std::size_t> hidden, std::size_t classes, std::uint64_t seed) {
  auto p = ModelParams::init({3, std::move(hidden), head}, seed);
  expand_head(p, classes, seed);
  Rng rng(derive_seed(seed, "test-head", 0));
  for (Eigen::Index r = 0; r < p.head_weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < p.head_weight.cols(); ++c) p.head_weight(r, c) = rng.normal();
    p.head_bias(r) = 0.1 * rng.normal();
  }
  if (head == HeadKind::CosineNorm) p.eta = 2.5;
  return p;
}

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, bool unit_interval = false) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = unit_interval ? rng.uniform() : rng.normal();
  }
  return m;
}

double bce_value(const ModelParams& p, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  return bce_loss(forward(p, x).scores, y).loss;
}

}  // namespace

TEST_CASE("sigmoid and BCE hand values") {
  CHECK(sigmoid(2.0) == doctest::Approx(0.8807970779778823));
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(sigmoid(800.0) <= 1.0);
  Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(1, 1);
  Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 1);
  const auto l = bce_loss(zero, one);
  CHECK(l.loss == doctest::Approx(std::log(2.0)));
  CHECK(l.grad(0, 0) == doctest::Approx(-0.5));
}

TEST_CASE("BCE gradients match finite differences") {
  for (auto head : {HeadKind::Standard, HeadKind::CosineNorm}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      auto p = random_model(head, {5, 4}, 4, seed);
      REQUIRE(p.parameter_count() <= 200);
      const auto x = random_matrix(6, 3, seed + 10);
      const auto y = random_matrix(6, 4, seed + 20, true);  // soft targets
      const auto trace = forward(p, x);
      const auto g = backward(p, trace, {bce_loss(trace.scores, y).grad, {}, {}});
      const double err = testutil::max_gradient_error(p, g.flatten(),
                                                      [&](const ModelParams& q) { return bce_value(q, x, y); });
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("cosine head: eta gradient and scale invariance") {
  auto p = random_model(HeadKind::CosineNorm, {4}, 3, 5);
  const auto x = random_matrix(4, 3, 7);
  const auto before = forward(p, x).probabilities();
  p.head_weight.row(1) *= 7.5;
  CHECK((forward(p, x).probabilities() - before).cwiseAbs().maxCoeff() < 1e-12);

  const auto flat = p.flatten();
  CHECK(flat.back() == p.eta);
  CHECK(p.parameter_count() == 4 * 3 + 4 + 3 * 4 + 1);
}

TEST_CASE("flatten and unflatten are inverse") {
  auto p = random_model(HeadKind::Standard, {4}, 2, 1);
  auto flat = p.flatten();
  CHECK(flat.size() == p.parameter_count());
  for (auto& v : flat) v += 1.0;
  auto q = p;
  q.unflatten(flat);
  CHECK(q.flatten() == flat);
  CHECK_THROWS(q.unflatten(std::vector<double>(3, 0.0)));
}

TEST_CASE("expand_head leaves existing outputs untouched") {
  for (auto head : {HeadKind::Standard, HeadKind::CosineNorm}) {
    auto p = random_model(head, {6}, 3, 2);
    const auto x = random_matrix(10, 3, 3);
    const Eigen::MatrixXd before = forward(p, x).scores;
    expand_head(p, 7, 99);
    const Eigen::MatrixXd after = forward(p, x).scores;
    CHECK(after.cols() == 7);
    CHECK((after.leftCols(3) - before).cwiseAbs().maxCoeff() == 0.0);
    if (head == HeadKind::Standard) CHECK(after.rightCols(4).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(expand_head(p, 2, 0), Error);
  }
}

TEST_CASE("predict thresholds at one half") {
  auto p = ModelParams::init({2, {}, HeadKind::Standard}, 0);
  expand_head(p, 3, 0);
  p.head_weight << 1, 0, 0, 1, 0, 0;
  p.head_bias << 0, 0, 0;  // third column has probability exactly 0.5
  const std::vector<double> x{1.0, -1.0};
  CHECK(predict(p, x) == std::vector<std::size_t>{0});
}

TEST_CASE("SGD step by hand") {
  auto p = ModelParams::init({1, {}, HeadKind::Standard}, 0);
  expand_head(p, 1, 0);
  p.head_weight(0, 0) = 1.0;
  auto g = p.zeros_like();
  g.head_weight(0, 0) = 1.0;  // d/dw of w^2 / 2 at w = 1
  Sgd sgd({0.1, 0.9, 1e-5});
  sgd.step(p, g);
  CHECK(p.head_weight(0, 0) == doctest::Approx(1.0 - 0.1 * (1.0 + 1e-5)).epsilon(1e-15));
  sgd.step(p, g);
  const double v2 = 0.9 * (1.0 + 1e-5) + 1.0 + 1e-5 * (1.0 - 0.1 * (1.0 + 1e-5));
  CHECK(p.head_weight(0, 0) == doctest::Approx(1.0 - 0.1 * (1.0 + 1e-5) - 0.1 * v2).epsilon(1e-15));
}

TEST_CASE("plateau schedule divides by ten and stops at the floor") {
  Sgd sgd({1.0, 0.9, 0.0});
  PlateauScheduler sched(1.0, 2, 1e-4);
  CHECK_FALSE(sched.observe(0.5, sgd));
  CHECK_FALSE(sched.observe(0.5, sgd));
  CHECK(sched.observe(0.50005, sgd));
  CHECK(sgd.lr() == doctest::Approx(0.1));
  CHECK_FALSE(sched.observe(0.6, sgd));
  for (int i = 0; i < 20; ++i) sched.observe(0.6, sgd);
  CHECK(sgd.lr() == doctest::Approx(1e-3));
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "iirc_nn_ckpt";
  std::filesystem::create_directories(dir);
  const auto p = random_model(HeadKind::CosineNorm, {4}, 2, 8);
  save_checkpoint(dir / "m", p, {"a", "b"});
  std::vector<std::string> names;
  const auto q = load_checkpoint(dir / "m", &names);
  CHECK(names == std::vector<std::string>{"a", "b"});
  CHECK(q.arch == p.arch);
  CHECK(q.flatten() == p.flatten());
  CHECK_THROWS_AS(load_checkpoint(dir / "missing"), Error);
  std::filesystem::remove_all(dir);
}
