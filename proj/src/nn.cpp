#include "iirc/nn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "iirc/error.hpp"
#include "iirc/random.hpp"

namespace iirc::nn {

namespace {

// Trainable tensors in flatten() order. Unused head parts are left out, so
// eta never moves under a Standard head and the bias never moves under CosineNorm.
template <class Params>
auto tensors(Params& p) {
  using Value = std::conditional_t<std::is_const_v<Params>, const double, double>;
  std::vector<std::span<Value>> out;
  for (auto& layer : p.layers) {
    out.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
    out.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
  }
  out.emplace_back(p.head_weight.data(), static_cast<std::size_t>(p.head_weight.size()));
  if (p.arch.head == HeadKind::Standard) {
    out.emplace_back(p.head_bias.data(), static_cast<std::size_t>(p.head_bias.size()));
  } else {
    out.emplace_back(&p.eta, 1);
  }
  return out;
}

void require_same_shape(const ModelParams& a, const ModelParams& b) {
  if (a.arch != b.arch || a.num_classes() != b.num_classes()) {
    throw Error(ErrorKind::DimensionMismatch, "parameter sets have different shapes");
  }
}

}  // namespace

std::string_view to_string(HeadKind kind) {
  return kind == HeadKind::Standard ? "standard" : "cosine";
}

HeadKind parse_head_kind(std::string_view text) {
  if (text == "standard") return HeadKind::Standard;
  if (text == "cosine") return HeadKind::CosineNorm;
  throw Error(ErrorKind::InvalidConfig, "unknown head kind '" + std::string(text) + "'");
}

ModelParams ModelParams::init(const Architecture& arch, std::uint64_t seed) {
  if (arch.input_dim == 0) throw Error(ErrorKind::InvalidSpec, "input dimension must be positive");
  ModelParams p;
  p.arch = arch;
  std::size_t in = arch.input_dim;
  for (std::size_t l = 0; l < arch.hidden.size(); ++l) {
    const std::size_t out = arch.hidden[l];
    if (out == 0) throw Error(ErrorKind::InvalidSpec, "hidden layer of width 0");
    Rng rng(derive_seed(seed, "init", l));
    DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out))};
    const double std_dev = std::sqrt(2.0 / static_cast<double>(in));
    // Column-major fill order: element (r, c) is the (c * out + r)-th draw.
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = std_dev * rng.normal();
    p.layers.push_back(std::move(layer));
    in = out;
  }
  p.head_weight.resize(0, static_cast<Eigen::Index>(arch.feature_dim()));
  p.head_bias.resize(0);
  return p;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors(*this)) n += t.size();
  return n;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  for (auto& t : tensors(z)) std::fill(t.begin(), t.end(), 0.0);
  return z;
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& t : tensors(*this)) out.insert(out.end(), t.begin(), t.end());
  return out;
}

void ModelParams::unflatten(std::span<const double> values) {
  if (values.size() != parameter_count()) {
    throw Error(ErrorKind::DimensionMismatch, "expected " + std::to_string(parameter_count()) + " values, got " + std::to_string(values.size()));
  }
  std::size_t offset = 0;
  for (auto& t : tensors(*this)) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), t.size(), t.begin());
    offset += t.size();
  }
}

double dot(const ModelParams& a, const ModelParams& b) {
  require_same_shape(a, b);
  const auto ta = tensors(a);
  const auto tb = tensors(b);
  double sum = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    for (std::size_t j = 0; j < ta[i].size(); ++j) sum += ta[i][j] * tb[i][j];
  }
  return sum;
}

void axpy(double alpha, const ModelParams& x, ModelParams& y) {
  require_same_shape(x, y);
  const auto tx = tensors(x);
  auto ty = tensors(y);
  for (std::size_t i = 0; i < tx.size(); ++i) {
    for (std::size_t j = 0; j < tx[i].size(); ++j) ty[i][j] += alpha * tx[i][j];
  }
}

void scale(ModelParams& p, double factor) {
  for (auto& t : tensors(p)) {
    for (double& v : t) v *= factor;
  }
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Eigen::MatrixXd ForwardTrace::probabilities() const {
  return scores.unaryExpr([](double s) { return sigmoid(s); });
}

Eigen::MatrixXd unit_rows(const Eigen::MatrixXd& v, Eigen::VectorXd* norms) {
  Eigen::VectorXd n = (v.rowwise().squaredNorm().array() + kEps * kEps).sqrt().matrix();
  Eigen::MatrixXd out = n.cwiseInverse().asDiagonal() * v;
  if (norms) *norms = std::move(n);
  return out;
}

Eigen::MatrixXd unit_rows_backward(const Eigen::MatrixXd& v, const Eigen::VectorXd& norms,
                                   const Eigen::MatrixXd& grad_unit) {
  Eigen::MatrixXd out(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const double s = norms(i);
    const double vg = v.row(i).dot(grad_unit.row(i));
    out.row(i) = grad_unit.row(i) / s - v.row(i) * (vg / (s * s * s));
  }
  return out;
}

ForwardTrace forward(const ModelParams& p, const Eigen::MatrixXd& x) {
  if (static_cast<std::size_t>(x.cols()) != p.arch.input_dim) {
    throw Error(ErrorKind::DimensionMismatch, "input has " + std::to_string(x.cols()) + " features, model expects " + std::to_string(p.arch.input_dim));
  }
  ForwardTrace t;
  t.input = x;
  const Eigen::MatrixXd* current = &t.input;
  for (const auto& layer : p.layers) {
    Eigen::MatrixXd pre = (*current) * layer.weight.transpose();
    pre.rowwise() += layer.bias.transpose();
    t.post.push_back(pre.cwiseMax(0.0));
    t.pre.push_back(std::move(pre));
    current = &t.post.back();
  }
  t.features = *current;

  if (p.arch.head == HeadKind::Standard) {
    t.scores = t.features * p.head_weight.transpose();
    t.scores.rowwise() += p.head_bias.transpose();
  } else {
    t.unit_features = unit_rows(t.features, &t.feature_norm);
    t.unit_weights = unit_rows(p.head_weight, &t.weight_norm);
    t.cosine = t.unit_features * t.unit_weights.transpose();
    t.scores = p.eta * t.cosine;
  }
  return t;
}

ForwardTrace forward(const ModelParams& p, std::span<const double> x) {
  Eigen::MatrixXd row(1, static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) row(0, static_cast<Eigen::Index>(i)) = x[i];
  return forward(p, row);
}

LossGrad bce_loss(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& targets, std::size_t class_count_divisor) {
  if (scores.rows() != targets.rows() || scores.cols() != targets.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "scores and targets differ in shape");
  }
  if (scores.rows() == 0) throw Error(ErrorKind::EmptyBatch, "empty batch");
  const double divisor = static_cast<double>(class_count_divisor ? class_count_divisor : static_cast<std::size_t>(scores.cols()));
  const double norm = 1.0 / (divisor * static_cast<double>(scores.rows()));

  LossGrad out;
  out.grad.resize(scores.rows(), scores.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    for (Eigen::Index c = 0; c < scores.cols(); ++c) {
      const double s = scores(i, c);
      const double t = targets(i, c);
      const double p = sigmoid(s);
      const double q = sigmoid(-s);
      total -= t * std::log(p + kEps) + (1.0 - t) * std::log(q + kEps);
      const double pq = p * q;
      out.grad(i, c) = norm * (-t * pq / (p + kEps) + (1.0 - t) * pq / (q + kEps));
    }
  }
  out.loss = total * norm;
  return out;
}

ModelParams backward(const ModelParams& p, const ForwardTrace& t, const OutputGrads& grads) {
  ModelParams g = p.zeros_like();
  const Eigen::MatrixXd& d_scores = grads.scores;
  if (d_scores.rows() != t.scores.rows() || d_scores.cols() != t.scores.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "score gradient shape");
  }

  Eigen::MatrixXd d_features;
  if (p.arch.head == HeadKind::Standard) {
    g.head_weight = d_scores.transpose() * t.features;
    g.head_bias = d_scores.colwise().sum().transpose();
    d_features = d_scores * p.head_weight;
  } else {
    Eigen::MatrixXd d_cos = p.eta * d_scores;
    if (grads.cosine.size() != 0) d_cos += grads.cosine;
    g.eta = d_scores.cwiseProduct(t.cosine).sum();
    const Eigen::MatrixXd d_unit_features = d_cos * t.unit_weights;
    const Eigen::MatrixXd d_unit_weights = d_cos.transpose() * t.unit_features;
    d_features = unit_rows_backward(t.features, t.feature_norm, d_unit_features);
    g.head_weight = unit_rows_backward(p.head_weight, t.weight_norm, d_unit_weights);
  }
  if (grads.features.size() != 0) d_features += grads.features;

  Eigen::MatrixXd d_post = std::move(d_features);
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    const Eigen::MatrixXd d_pre = d_post.cwiseProduct((t.pre[l].array() > 0.0).cast<double>().matrix());
    const Eigen::MatrixXd& in = l == 0 ? t.input : t.post[l - 1];
    g.layers[l].weight = d_pre.transpose() * in;
    g.layers[l].bias = d_pre.colwise().sum().transpose();
    if (l > 0) d_post = d_pre * p.layers[l].weight;
  }
  return g;
}

void expand_head(ModelParams& p, std::size_t total_classes, std::uint64_t seed) {
  const auto old_rows = static_cast<Eigen::Index>(p.num_classes());
  const auto rows = static_cast<Eigen::Index>(total_classes);
  if (rows < old_rows) throw Error(ErrorKind::InvalidSpec, "head cannot shrink");
  if (rows == old_rows) return;
  const Eigen::Index f = p.head_weight.cols();

  Eigen::MatrixXd weight = Eigen::MatrixXd::Zero(rows, f);
  weight.topRows(old_rows) = p.head_weight;
  Eigen::VectorXd bias = Eigen::VectorXd::Zero(rows);
  bias.head(old_rows) = p.head_bias;
  if (p.arch.head == HeadKind::CosineNorm) {
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(f));
    for (Eigen::Index r = old_rows; r < rows; ++r) {
      Rng rng(derive_seed(seed, "head", static_cast<std::uint64_t>(r)));
      for (Eigen::Index c = 0; c < f; ++c) weight(r, c) = std_dev * rng.normal();
    }
  }
  p.head_weight = std::move(weight);
  p.head_bias = std::move(bias);
}

std::vector<std::vector<std::size_t>> predict_batch(const ModelParams& p, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd probs = forward(p, x).probabilities();
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      if (probs(i, c) > 0.5) out[static_cast<std::size_t>(i)].push_back(static_cast<std::size_t>(c));
    }
  }
  return out;
}

std::vector<std::size_t> predict(const ModelParams& p, std::span<const double> x) {
  Eigen::MatrixXd row(1, static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) row(0, static_cast<Eigen::Index>(i)) = x[i];
  return predict_batch(p, row).front();
}

void Sgd::step(ModelParams& params, const ModelParams& grads) {
  require_same_shape(params, grads);
  if (!velocity_ || velocity_->num_classes() != params.num_classes()) velocity_ = params.zeros_like();
  auto v = tensors(*velocity_);
  auto w = tensors(params);
  const auto g = tensors(grads);
  for (std::size_t i = 0; i < w.size(); ++i) {
    for (std::size_t j = 0; j < w[i].size(); ++j) {
      v[i][j] = config_.momentum * v[i][j] + g[i][j] + config_.weight_decay * w[i][j];
      w[i][j] -= config_.lr * v[i][j];
    }
  }
  if (params.arch.head == HeadKind::CosineNorm && params.eta < kMinEta) params.eta = kMinEta;
}

PlateauScheduler::PlateauScheduler(double initial_lr, std::size_t patience, double threshold,
                                   double factor, double min_lr_ratio)
    : initial_lr_(initial_lr), patience_(patience), threshold_(threshold), factor_(factor),
      min_lr_(initial_lr * min_lr_ratio) {
  if (!(initial_lr > 0.0)) throw Error(ErrorKind::InvalidSpec, "learning rate must be positive");
}

bool PlateauScheduler::observe(double metric, Sgd& optimizer) {
  if (!best_ || metric >= *best_ + threshold_) {
    best_ = metric;
    bad_epochs_ = 0;
    return false;
  }
  if (++bad_epochs_ < patience_) return false;
  bad_epochs_ = 0;
  const double reduced = std::max(optimizer.lr() / factor_, min_lr_);
  if (reduced >= optimizer.lr()) return false;
  optimizer.set_lr(reduced);
  return true;
}

void PlateauScheduler::reset() {
  best_.reset();
  bad_epochs_ = 0;
}

void save_checkpoint(const std::filesystem::path& prefix, const ModelParams& p,
                     const std::vector<std::string>& class_names) {
  if (class_names.size() != p.num_classes()) {
    throw Error(ErrorKind::DimensionMismatch, "class name count differs from head width");
  }
  const auto values = p.flatten();
  std::ofstream bin(prefix.string() + ".bin", std::ios::binary);
  if (!bin) throw Error(ErrorKind::Io, "cannot write " + prefix.string() + ".bin");
  for (double v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
    bin.write(reinterpret_cast<const char*>(bytes), 8);
  }

  nlohmann::ordered_json j;
  j["format"] = "iirc-checkpoint-1";
  j["input_dim"] = p.arch.input_dim;
  j["hidden"] = p.arch.hidden;
  j["head"] = to_string(p.arch.head);
  j["classes"] = p.num_classes();
  j["parameter_count"] = values.size();
  j["class_names"] = class_names;
  std::ofstream side(prefix.string() + ".json");
  if (!side) throw Error(ErrorKind::Io, "cannot write " + prefix.string() + ".json");
  side << j.dump(2) << '\n';
}

ModelParams load_checkpoint(const std::filesystem::path& prefix, std::vector<std::string>* class_names) {
  std::ifstream side(prefix.string() + ".json");
  if (!side) throw Error(ErrorKind::Io, "cannot read " + prefix.string() + ".json");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(side);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("checkpoint sidecar: ") + e.what());
  }

  Architecture arch;
  arch.input_dim = j.at("input_dim").get<std::size_t>();
  arch.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  arch.head = parse_head_kind(j.at("head").get<std::string>());
  ModelParams p = ModelParams::init(arch, 0);
  expand_head(p, j.at("classes").get<std::size_t>(), 0);

  std::ifstream bin(prefix.string() + ".bin", std::ios::binary);
  if (!bin) throw Error(ErrorKind::Io, "cannot read " + prefix.string() + ".bin");
  std::vector<double> values(p.parameter_count());
  for (double& v : values) {
    unsigned char bytes[8];
    if (!bin.read(reinterpret_cast<char*>(bytes), 8)) throw Error(ErrorKind::Parse, "checkpoint truncated");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    v = std::bit_cast<double>(bits);
  }
  if (bin.peek() != std::char_traits<char>::eof()) throw Error(ErrorKind::Parse, "checkpoint has trailing bytes");
  p.unflatten(values);
  if (class_names) *class_names = j.value("class_names", std::vector<std::string>{});
  return p;
}

}  // namespace iirc::nn
