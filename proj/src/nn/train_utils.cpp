#include "csasr/nn/train_utils.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "csasr/common.hpp"
#include "csasr/nn/layers.hpp"

namespace csasr::nn {

CrossEntropyResult smoothed_cross_entropy(const Vector& logits, int target, const Vector* unigram, double smoothing) {
  const auto V = logits.size();
  if (target < 0 || target >= V) throw std::out_of_range("cross entropy target " + std::to_string(target) + " out of range");
  if (smoothing < 0.0 || smoothing >= 1.0) throw std::invalid_argument("smoothing weight must lie in [0, 1)");
  if (smoothing > 0.0) {
    if (unigram == nullptr || unigram->size() != V) throw std::invalid_argument("smoothing needs a unigram of vocabulary size");
    if (std::abs(unigram->sum() - 1.0) > 1e-6) throw std::invalid_argument("unigram must sum to 1");
  }
  const Vector lp = log_softmax(logits);
  Vector q = Vector::Zero(V);
  if (smoothing > 0.0) q = smoothing * *unigram;
  q(target) += 1.0 - smoothing;

  CrossEntropyResult out;
  out.loss = 0.0;
  for (Eigen::Index k = 0; k < V; ++k) {
    if (q(k) != 0.0) out.loss -= q(k) * lp(k);
  }
  out.grad_logits = lp.array().exp().matrix() - q;
  return out;
}

double scheduled_learning_rate(const OptimizerConfig& config, std::int64_t step) {
  if (config.kind == OptimizerKind::AdaDeltaWithClip) return config.lr_start;
  if (config.total_steps <= 1) return config.lr_start;
  const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(config.total_steps - 1), 0.0, 1.0);
  return config.lr_start * std::pow(config.lr_end / config.lr_start, frac);
}

Optimizer::Optimizer(const ParamSet& params, OptimizerConfig config)
    : config_(config), first_(params), second_(params) {
  if (!(config_.clip_norm > 0.0)) throw std::invalid_argument("clip threshold must be positive");
  if (!(config_.lr_start > 0.0) || !(config_.lr_end > 0.0)) throw std::invalid_argument("learning rates must be positive");
}

StepInfo Optimizer::step(ParamSet& params, GradSet& grads) {
  if (grads.size() != params.size()) throw std::invalid_argument("gradient set does not match parameters");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads.at(i).allFinite()) throw NumericError("non-finite gradient in parameter '" + params.name(i) + "'");
  }
  StepInfo info;
  info.grad_norm = std::sqrt(grads.squared_norm());
  if (info.grad_norm > config_.clip_norm) {
    grads.scale(config_.clip_norm / info.grad_norm);
    info.clipped = true;
  }
  info.lr = scheduled_learning_rate(config_, step_);
  ++step_;

  if (config_.kind == OptimizerKind::AdamWithClip) {
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& m = first_.at(i);
      auto& v = second_.at(i);
      const auto& g = grads.at(i);
      m = config_.beta1 * m + (1.0 - config_.beta1) * g;
      v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseProduct(g);
      params.value(i).array() -=
          info.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config_.adam_eps);
    }
  } else {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& eg = first_.at(i);
      auto& ed = second_.at(i);
      const auto& g = grads.at(i);
      eg = config_.rho * eg + (1.0 - config_.rho) * g.cwiseProduct(g);
      const Matrix delta = (((ed.array() + config_.adadelta_eps).sqrt() / (eg.array() + config_.adadelta_eps).sqrt()) *
                            g.array())
                               .matrix();
      ed = config_.rho * ed + (1.0 - config_.rho) * delta.cwiseProduct(delta);
      params.value(i) -= info.lr * delta;
    }
  }
  return info;
}

GradCheckReport grad_check(ParamSet& params, const LossFunction& loss, const GradCheckOptions& options) {
  GradSet analytic(params);
  loss(params, &analytic);

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& value = params.value(p);
    const auto n = static_cast<std::size_t>(value.size());
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (n > options.samples_per_param) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.samples_per_param);
    }
    for (std::size_t i : idx) {
      double& entry = value.data()[i];
      const double saved = entry;
      entry = saved + options.eps;
      const double up = loss(params, nullptr);
      entry = saved - options.eps;
      const double down = loss(params, nullptr);
      entry = saved;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double a = analytic.at(p).data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_error || !std::isfinite(rel)) {
        report.max_rel_error = std::isfinite(rel) ? rel : std::numeric_limits<double>::infinity();
        report.worst_param = params.name(p);
        report.worst_index = static_cast<Eigen::Index>(i);
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error <= options.tolerance;
  return report;
}

}  // namespace csasr::nn
