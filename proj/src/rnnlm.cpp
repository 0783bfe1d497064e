#include "csasr/rnnlm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "csasr/common.hpp"

namespace csasr {

using nn::GradSet;
using nn::Matrix;
using nn::Vector;

void LmConfig::validate() const {
  if (vocab_size < 2) throw std::invalid_argument("LM vocabulary too small");
  if (embed_dim <= 0 || hidden <= 0 || layers <= 0) throw std::invalid_argument("LM dimensions must be positive");
  if (sos < 0 || sos >= vocab_size || eos < 0 || eos >= vocab_size) throw std::invalid_argument("LM sos/eos out of range");
}

RnnLm::RnnLm(LmConfig config) : config_(config) {
  config_.validate();
  embed_ = params_.add("lm.embed", config_.embed_dim, config_.vocab_size);
  for (int l = 0; l < config_.layers; ++l) {
    layers_.emplace_back(params_, "lm.gru" + std::to_string(l), l == 0 ? config_.embed_dim : config_.hidden,
                         config_.hidden);
  }
  out_ = nn::Linear(params_, "lm.out", config_.hidden, config_.vocab_size);
}

Vector RnnLm::output_log_probs(const Vector& top) const { return nn::log_softmax(out_.forward(params_, top)); }

LmState RnnLm::initial_state() const {
  LmState zero;
  zero.h.assign(static_cast<std::size_t>(config_.layers), Vector::Zero(config_.hidden));
  return advance(zero, config_.sos);
}

LmState RnnLm::advance(const LmState& state, int token) const {
  if (token < 0 || token >= config_.vocab_size) throw std::out_of_range("LM token id " + std::to_string(token));
  LmState next;
  next.h.resize(layers_.size());
  Vector x = params_[embed_].col(token);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    next.h[l] = layers_[l].step(params_, x, state.h[l], nullptr);
    x = next.h[l];
  }
  next.log_probs = output_log_probs(x);
  return next;
}

double RnnLm::score_step(const LmState& state, int token, LmState* next) const {
  if (token < 0 || token >= config_.vocab_size) throw std::out_of_range("LM token id " + std::to_string(token));
  const double lp = state.log_probs(token);
  if (next) *next = advance(state, token);
  return lp;
}

double RnnLm::sentence_log_prob(const std::vector<int>& ids) const {
  LmState st = initial_state();
  double total = 0.0;
  for (int y : ids) total += score_step(st, y, &st);
  return total + st.log_probs(config_.eos);
}

std::pair<double, std::size_t> RnnLm::batch_loss(const std::vector<const std::vector<int>*>& batch,
                                                 GradSet* grads) const {
  std::size_t tokens = 0;
  for (const auto* s : batch) tokens += s->size() + 1;
  if (tokens == 0) throw std::invalid_argument("LM batch is empty");
  double nll = 0.0;
  for (const auto* sent : batch) {
    const auto n = static_cast<Eigen::Index>(sent->size() + 1);
    std::vector<int> in(1, config_.sos), out(*sent);
    in.insert(in.end(), sent->begin(), sent->end());
    out.push_back(config_.eos);
    Matrix x(config_.embed_dim, n);
    for (Eigen::Index t = 0; t < n; ++t) {
      const int y = in[static_cast<std::size_t>(t)];
      if (y < 0 || y >= config_.vocab_size) throw std::out_of_range("LM token id " + std::to_string(y));
      x.col(t) = params_[embed_].col(y);
    }
    std::vector<nn::Gru::SequenceCache> caches(layers_.size());
    Matrix cur = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) cur = layers_[l].sequence(params_, cur, false, &caches[l]);
    const Matrix logits = out_.forward_cols(params_, cur);
    Matrix d_logits(config_.vocab_size, n);
    for (Eigen::Index t = 0; t < n; ++t) {
      const Vector lp = nn::log_softmax(logits.col(t));
      const int y = out[static_cast<std::size_t>(t)];
      if (y < 0 || y >= config_.vocab_size) throw std::out_of_range("LM token id " + std::to_string(y));
      nll -= lp(y);
      d_logits.col(t) = lp.array().exp().matrix();
      d_logits(y, t) -= 1.0;
    }
    if (!grads) continue;
    d_logits /= static_cast<double>(tokens);
    Matrix d = out_.backward_cols(params_, cur, d_logits, *grads);
    for (std::size_t l = layers_.size(); l-- > 0;) d = layers_[l].sequence_backward(params_, caches[l], d, *grads);
    for (Eigen::Index t = 0; t < n; ++t) (*grads)[embed_].col(in[static_cast<std::size_t>(t)]) += d.col(t);
  }
  return {nll, tokens};
}

void RnnLm::save(const std::filesystem::path& path, std::map<std::string, std::string> meta) const {
  meta["kind"] = "rnnlm";
  meta["lm.vocab_size"] = std::to_string(config_.vocab_size);
  meta["lm.embed_dim"] = std::to_string(config_.embed_dim);
  meta["lm.hidden"] = std::to_string(config_.hidden);
  meta["lm.layers"] = std::to_string(config_.layers);
  meta["lm.sos"] = std::to_string(config_.sos);
  meta["lm.eos"] = std::to_string(config_.eos);
  nn::save_checkpoint(path, meta, params_);
}

RnnLm RnnLm::load(const std::filesystem::path& path) {
  auto ckp = nn::load_checkpoint(path);
  auto& m = ckp.metadata;
  if (m["kind"] != "rnnlm") throw DataError(path.string() + " is not an LM checkpoint");
  auto get = [&](const char* k) {
    auto it = m.find(k);
    if (it == m.end()) throw DataError(std::string("LM checkpoint lacks '") + k + "'");
    return std::stoi(it->second);
  };
  RnnLm lm(LmConfig{get("lm.vocab_size"), get("lm.embed_dim"), get("lm.hidden"), get("lm.layers"), get("lm.sos"),
                    get("lm.eos")});
  nn::assign_params(lm.params_, ckp.params);
  return lm;
}

double perplexity(const RnnLm& lm, const std::vector<std::vector<int>>& sentences) {
  if (sentences.empty()) throw std::invalid_argument("perplexity of an empty set");
  double nll = 0.0;
  std::size_t tokens = 0;
  std::vector<const std::vector<int>*> one(1);
  for (const auto& s : sentences) {
    one[0] = &s;
    auto [l, n] = lm.batch_loss(one, nullptr);
    nll += l;
    tokens += n;
  }
  return std::exp(nll / static_cast<double>(tokens));
}

RnnLm lm_train(const std::vector<std::vector<int>>& train, const std::vector<std::vector<int>>& dev,
               const LmConfig& config, const LmTrainConfig& tc,
               const std::function<void(const LmEpochRecord&)>& on_epoch) {
  if (train.empty()) throw std::invalid_argument("LM training corpus is empty");
  if (tc.epochs < 1 || tc.batch_size < 1) throw std::invalid_argument("LM epochs and batch size must be positive");
  RnnLm lm(config);
  lm.params().init_gaussian(tc.init_variance, tc.seed);
  const std::size_t batches_per_epoch = (train.size() + static_cast<std::size_t>(tc.batch_size) - 1) /
                                        static_cast<std::size_t>(tc.batch_size);
  nn::OptimizerConfig oc = tc.optimizer;
  oc.total_steps = static_cast<std::int64_t>(batches_per_epoch) * tc.epochs;
  nn::Optimizer opt(lm.params(), oc);

  std::mt19937_64 rng(tc.seed + 1);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  nn::ParamSet best = lm.params();
  double best_ppl = std::numeric_limits<double>::infinity();

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double nll = 0.0;
    std::size_t tokens = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(tc.batch_size)) {
      std::vector<const std::vector<int>*> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + static_cast<std::size_t>(tc.batch_size)); ++i) {
        batch.push_back(&train[order[i]]);
      }
      GradSet g(lm.params());
      auto [l, n] = lm.batch_loss(batch, &g);
      if (!std::isfinite(l)) throw NumericError("non-finite LM loss in epoch " + std::to_string(epoch));
      nll += l;
      tokens += n;
      opt.step(lm.params(), g);
    }
    LmEpochRecord rec;
    rec.epoch = epoch;
    rec.train_ppl = std::exp(nll / static_cast<double>(tokens));
    rec.dev_ppl = dev.empty() ? perplexity(lm, train) : perplexity(lm, dev);
    if (rec.dev_ppl < best_ppl) {
      best_ppl = rec.dev_ppl;
      best = lm.params();
      rec.best = true;
    }
    if (on_epoch) on_epoch(rec);
  }
  nn::assign_params(lm.params(), best);
  return lm;
}

}  // namespace csasr
