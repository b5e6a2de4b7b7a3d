#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "mobkit/records.hpp"
#include "mobkit/rng.hpp"

namespace mobkit {

/// Frozen base weight W0 (d x k) plus the low-rank pair W1 (d x r), W2 (r x k).
struct LoraAdapter {
  Eigen::MatrixXd w0;
  Eigen::MatrixXd w1;
  Eigen::MatrixXd w2;
  double alpha = 1.0;
  int rank = 1;

  Eigen::Index d() const noexcept { return w0.rows(); }
  Eigen::Index k() const noexcept { return w0.cols(); }

  /// Throws ShapeError unless the shapes agree and 1 <= rank < min(d, k).
  void validate() const;

  /// Entries uniform in [-1, 1).
  static LoraAdapter random(int d, int k, int rank, double alpha, Rng& rng);
};

/// Uniform [-1, 1) matrix.
Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng);

/// (alpha / r) * W1 * (W2 * X). X is k x n. The scale is applied last, so doubling alpha doubles
/// the result exactly.
Eigen::MatrixXd lora_delta(const LoraAdapter& adapter, const Eigen::MatrixXd& x);
/// h = W0 X + (alpha / r) W1 W2 X. Throws ShapeError.
Eigen::MatrixXd lora_forward(const LoraAdapter& adapter, const Eigen::MatrixXd& x);

struct ParamCount {
  std::uint64_t lora = 0;
  std::uint64_t full = 0;
  double ratio = 0.0;
};
/// lora = r (d + k), full = d k, ratio = full / lora. Throws ValidationError unless
/// 1 <= r < min(d, k).
ParamCount trainable_param_count(std::uint64_t d, std::uint64_t k, std::uint64_t r);

/// One sequence: a distribution over the vocabulary per step and the target token per step.
struct NllSample {
  std::vector<std::vector<double>> step_probs;
  std::vector<std::size_t> targets;
};

struct NllResult {
  double loss = 0.0;
  /// Some target had probability zero; loss is +inf.
  bool infinite = false;
};

/// Mean over samples of -sum_i ln P(y_i | prefix). Throws ValidationError unless every step sums to
/// 1 within 1e-9 and every target is inside the vocabulary.
NllResult token_nll(std::span<const NllSample> samples);

/// -sum_i ln softmax(logits_i)[y_i] for a steps x V logit matrix.
double softmax_nll(const Eigen::MatrixXd& logits, std::span<const std::size_t> targets);
/// Analytic gradient of softmax_nll: softmax(logits) - onehot(targets).
Eigen::MatrixXd softmax_nll_gradient(const Eigen::MatrixXd& logits, std::span<const std::size_t> targets);
/// Row-wise softmax.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

struct PeftPreset {
  std::string method;
  double scaling_factor = 0.0;
  int rank = 0;
};

/// {"version": 1, "presets": [{"method", "scaling_factor", "rank"}, ...]}. Throws ConfigError.
std::vector<PeftPreset> presets_from_json(const json& j);
/// The shipped preset table.
const std::vector<PeftPreset>& load_presets();
/// Case-insensitive lookup. Throws ConfigError for unknown names.
const PeftPreset& find_preset(std::string_view method);

struct SelfTestCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// The LoRA property suite, each check against an independent loop-based oracle.
std::vector<SelfTestCheck> run_lora_self_test(std::uint64_t seed = 11);

}  // namespace mobkit
