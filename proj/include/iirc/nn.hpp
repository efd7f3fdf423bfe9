#pragma once

// Fixed-topology MLP with a growable multi-label head.
//
// Rows of every batch matrix are samples. Hidden layers use ReLU; the output
// of the last hidden layer (or the input, with no hidden layers) is the
// feature vector f(x). Two heads:
//   Standard:   score_c = <w_c, f> + b_c
//   CosineNorm: score_c = eta * <unit(w_c), unit(f)>, eta learnable
// where unit(v) = v / sqrt(|v|^2 + eps^2). Probabilities are per-class sigmoids.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "iirc/hierarchy.hpp"

namespace iirc::nn {

inline constexpr double kEps = 1e-12;
inline constexpr double kInitialEta = 10.0;
inline constexpr double kMinEta = 1e-3;

enum class HeadKind { Standard, CosineNorm };

std::string_view to_string(HeadKind kind);
HeadKind parse_head_kind(std::string_view text);

struct Architecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  HeadKind head = HeadKind::Standard;

  std::size_t feature_dim() const noexcept { return hidden.empty() ? input_dim : hidden.back(); }
  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

/// Model parameters. The same type holds gradients and momentum buffers.
struct ModelParams {
  Architecture arch;
  std::vector<DenseLayer> layers;
  Eigen::MatrixXd head_weight;  // classes x feature_dim
  Eigen::VectorXd head_bias;    // classes; unused by CosineNorm
  double eta = kInitialEta;     // CosineNorm only

  /// He-normal hidden weights from derive_seed(seed, "init", layer); zero biases; empty head.
  static ModelParams init(const Architecture& arch, std::uint64_t seed);

  std::size_t num_classes() const noexcept { return static_cast<std::size_t>(head_weight.rows()); }
  std::size_t parameter_count() const;
  ModelParams zeros_like() const;

  /// Layer weights and biases, head weight, then head bias (Standard) or eta (CosineNorm).
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> values);
};

double dot(const ModelParams& a, const ModelParams& b);
/// y += alpha * x
void axpy(double alpha, const ModelParams& x, ModelParams& y);
void scale(ModelParams& p, double factor);

struct ForwardTrace {
  Eigen::MatrixXd input;
  std::vector<Eigen::MatrixXd> pre;   // per hidden layer, before ReLU
  std::vector<Eigen::MatrixXd> post;  // per hidden layer, after ReLU
  Eigen::MatrixXd features;           // B x F
  // CosineNorm only
  Eigen::VectorXd feature_norm;  // sqrt(|f|^2 + eps^2) per row
  Eigen::MatrixXd unit_features;
  Eigen::VectorXd weight_norm;
  Eigen::MatrixXd unit_weights;
  Eigen::MatrixXd cosine;  // B x C
  Eigen::MatrixXd scores;  // B x C

  Eigen::MatrixXd probabilities() const;
};

ForwardTrace forward(const ModelParams& p, const Eigen::MatrixXd& x);
ForwardTrace forward(const ModelParams& p, std::span<const double> x);

double sigmoid(double z);

struct LossGrad {
  double loss = 0.0;
  Eigen::MatrixXd grad;  // d loss / d scores
};

/// Mean over the batch of (1/class_count_divisor) * sum_c BCE(sigmoid(score_c), target_c),
/// with eps inside the logs. divisor 0 means scores.cols().
LossGrad bce_loss(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& targets, std::size_t class_count_divisor = 0);

/// Upstream gradients. `cosine` and `features` may be left empty.
struct OutputGrads {
  Eigen::MatrixXd scores;
  Eigen::MatrixXd cosine;    // CosineNorm only: extra d loss / d <unit(w_c), unit(f)>
  Eigen::MatrixXd features;  // extra d loss / d f
};

ModelParams backward(const ModelParams& p, const ForwardTrace& trace, const OutputGrads& grads);

/// Row-wise unit(v) and its backward: given d/d unit(v), returns d/d v.
Eigen::MatrixXd unit_rows(const Eigen::MatrixXd& v, Eigen::VectorXd* norms = nullptr);
Eigen::MatrixXd unit_rows_backward(const Eigen::MatrixXd& v, const Eigen::VectorXd& norms,
                                   const Eigen::MatrixXd& grad_unit);

/// Grow the head to `total_classes` rows: zeros for Standard, N(0, 1/F) from
/// derive_seed(seed, "head", row) for CosineNorm. Existing rows untouched.
void expand_head(ModelParams& p, std::size_t total_classes, std::uint64_t seed);

/// Head columns with probability strictly above 0.5.
std::vector<std::size_t> predict(const ModelParams& p, std::span<const double> x);
std::vector<std::vector<std::size_t>> predict_batch(const ModelParams& p, const Eigen::MatrixXd& x);

struct SgdConfig {
  double lr = 1.0;
  double momentum = 0.9;
  double weight_decay = 1e-5;
};

/// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
class Sgd {
 public:
  explicit Sgd(SgdConfig config) : config_(config) {}

  void step(ModelParams& params, const ModelParams& grads);
  /// Drops momentum history (shapes may have changed).
  void reset() { velocity_.reset(); }

  double lr() const noexcept { return config_.lr; }
  void set_lr(double lr) { config_.lr = lr; }
  const SgdConfig& config() const noexcept { return config_; }

 private:
  SgdConfig config_;
  std::optional<ModelParams> velocity_;
};

/// Divides the learning rate by `factor` after `patience` consecutive
/// epochs without an improvement of at least `threshold` (maximizing).
class PlateauScheduler {
 public:
  PlateauScheduler(double initial_lr, std::size_t patience = 5, double threshold = 1e-4,
                   double factor = 10.0, double min_lr_ratio = 1e-3);

  /// Returns true when the learning rate was reduced.
  bool observe(double metric, Sgd& optimizer);
  void reset();

  std::size_t bad_epochs() const noexcept { return bad_epochs_; }

 private:
  double initial_lr_;
  std::size_t patience_;
  double threshold_;
  double factor_;
  double min_lr_;
  std::optional<double> best_;
  std::size_t bad_epochs_ = 0;
};

/// PREFIX.bin: flat little-endian float64 (flatten() order); PREFIX.json: architecture,
/// class count, eta, and `class_names` in head-row order.
void save_checkpoint(const std::filesystem::path& prefix, const ModelParams& p,
                     const std::vector<std::string>& class_names);
ModelParams load_checkpoint(const std::filesystem::path& prefix, std::vector<std::string>* class_names = nullptr);

}  // namespace iirc::nn
