#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "csasr/nn/param.hpp"

namespace csasr::nn {

struct CrossEntropyResult {
  double loss = 0.0;
  Vector grad_logits;
};

// Cross entropy of softmax(logits) against
// (1 - smoothing) * onehot(target) + smoothing * unigram.
// `unigram` may be null when smoothing is 0.
CrossEntropyResult smoothed_cross_entropy(const Vector& logits, int target, const Vector* unigram,
                                          double smoothing);

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { AdamWithClip, AdaDeltaWithClip };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::AdamWithClip;
  // Adam decays log-linearly from lr_start to lr_end over total_steps.
  // AdaDelta scales its update by lr_start throughout.
  double lr_start = 5e-4;
  double lr_end = 5e-5;
  std::int64_t total_steps = 1;
  double clip_norm = 5.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double rho = 0.95;
  double adadelta_eps = 1e-6;
};

double scheduled_learning_rate(const OptimizerConfig& config, std::int64_t step);

struct StepInfo {
  double grad_norm = 0.0;  // before clipping
  double lr = 0.0;
  bool clipped = false;
};

class Optimizer {
 public:
  Optimizer(const ParamSet& params, OptimizerConfig config);

  // Clips `grads` in place to the global norm, then updates `params`.
  // Throws NumericError naming the first parameter with a non-finite gradient.
  StepInfo step(ParamSet& params, GradSet& grads);

  std::int64_t steps_taken() const { return step_; }
  const OptimizerConfig& config() const { return config_; }

 private:
  OptimizerConfig config_;
  GradSet first_, second_;  // Adam: m, v. AdaDelta: E[g^2], E[dx^2].
  std::int64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

// Computes the loss at the current parameters; accumulates d loss / d params
// into `grads` when it is non-null.
using LossFunction = std::function<double(const ParamSet& params, GradSet* grads)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  Eigen::Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  bool passed = true;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tolerance = 1e-4;
  // Entries sampled per parameter tensor; tensors smaller than this are checked fully.
  std::size_t samples_per_param = 12;
  // Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double abs_floor = 1e-5;
  std::uint64_t seed = 1;
};

GradCheckReport grad_check(ParamSet& params, const LossFunction& loss, const GradCheckOptions& options = {});

}  // namespace csasr::nn
