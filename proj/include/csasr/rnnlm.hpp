#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "csasr/nn/layers.hpp"
#include "csasr/nn/train_utils.hpp"

namespace csasr {

struct LmConfig {
  int vocab_size = 0;  // shared with the ASR output vocabulary
  int embed_dim = 32;
  int hidden = 64;
  int layers = 2;
  int sos = 0;
  int eos = 1;

  void validate() const;
};

// Recurrent state after consuming a history, with the next-token distribution.
struct LmState {
  std::vector<nn::Vector> h;
  nn::Vector log_probs;
};

class RnnLm {
 public:
  explicit RnnLm(LmConfig config);

  const LmConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  // Zero state that has consumed sos.
  LmState initial_state() const;
  // Returns log P(token | history of `state`); writes the advanced state.
  double score_step(const LmState& state, int token, LmState* next) const;
  LmState advance(const LmState& state, int token) const;

  // Sum of log-probabilities of ids followed by eos.
  double sentence_log_prob(const std::vector<int>& ids) const;

  // Mean next-token cross entropy over ids + eos for each sentence; gradient
  // of the batch-token mean goes into grads. Returns (total nll, tokens).
  std::pair<double, std::size_t> batch_loss(const std::vector<const std::vector<int>*>& batch, nn::GradSet* grads) const;

  void save(const std::filesystem::path& path, std::map<std::string, std::string> extra_meta) const;
  static RnnLm load(const std::filesystem::path& path);

 private:
  nn::Vector output_log_probs(const nn::Vector& top) const;

  LmConfig config_;
  nn::ParamSet params_;
  nn::ParamRef embed_;
  std::vector<nn::Gru> layers_;
  nn::Linear out_;
};

struct LmTrainConfig {
  int epochs = 20;
  int batch_size = 16;
  double init_variance = 0.1;
  nn::OptimizerConfig optimizer{.kind = nn::OptimizerKind::AdaDeltaWithClip, .lr_start = 1.0};
  std::uint64_t seed = 1;
};

struct LmEpochRecord {
  int epoch = 0;
  double train_ppl = 0.0;
  double dev_ppl = 0.0;
  bool best = false;
};

double perplexity(const RnnLm& lm, const std::vector<std::vector<int>>& sentences);

// Trains with AdaDelta and gradient clipping, shuffling per epoch; the
// returned model carries the parameters of the best dev epoch. When `dev` is
// empty the training perplexity selects instead.
RnnLm lm_train(const std::vector<std::vector<int>>& train, const std::vector<std::vector<int>>& dev,
               const LmConfig& config, const LmTrainConfig& train_config,
               const std::function<void(const LmEpochRecord&)>& on_epoch = {});

}  // namespace csasr
