#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "csasr/attention.hpp"
#include "csasr/ctc.hpp"
#include "csasr/nn/layers.hpp"
#include "csasr/nn/train_utils.hpp"

namespace csasr {

struct LossWeights {
  double att = 0.8;
  double ctc = 0.2;
  double lid = 0.0;

  // Two-term form: att = lambda, ctc = 1 - lambda.
  static LossWeights two_term(double lambda);
  // Three-term form with att fixed: ctc = 1 - att - lid.
  static LossWeights three_term(double att, double lid);
  void validate() const;  // throws std::invalid_argument
};

struct LossBundle {
  double att = 0.0;
  double ctc = 0.0;
  double lid = 0.0;
  double mtl = 0.0;
};

// mtl = w.att * att + w.ctc * ctc + w.lid * lid; terms with zero weight are
// left out of the sum, so an infinite unweighted loss cannot poison it.
LossBundle compute_losses(const LossWeights& weights, double att, double ctc, double lid);

struct ModelConfig {
  nn::EncoderConfig encoder;
  int vocab_size = 0;  // attention outputs; the CTC head adds the blank
  int embed_dim = 16;
  int decoder_hidden = 64;
  AttentionConfig attention;  // state_dim and enc_dim are derived

  void validate() const;
  std::map<std::string, std::string> to_metadata() const;
  static ModelConfig from_metadata(const std::map<std::string, std::string>& meta);
};

// Recurrent decoder state between steps.
struct DecoderState {
  nn::Vector s;
  nn::Vector context;
  nn::Vector alpha;
};

struct Example {
  nn::Matrix features;          // T x d
  std::vector<int> target;      // token ids without sos/eos
  std::vector<int> frame_lid;   // pooled-rate FrameLid codes; may be empty when unused
};

struct LossOptions {
  LossWeights weights;
  double label_smoothing = 0.0;
  const nn::Vector* unigram = nullptr;  // required when label_smoothing > 0
  double sampling_prob = 0.0;           // scheduled sampling: feed back argmax with this probability
  std::uint64_t sampling_seed = 0;
};

struct UtteranceLoss {
  LossBundle losses;
  bool ctc_feasible = true;
};

// Per-frame cross entropy of a linear {CH, EN, SIL} classifier over encoder
// outputs (T' x enc_dim). Returns the mean; gradients of scale * mean go to the
// head parameters and, when d_h is non-null, are added to d_h.
struct LidHead {
  LidHead() = default;
  LidHead(nn::ParamSet& params, const std::string& name, int enc_dim);

  nn::Matrix log_probs(const nn::ParamSet& params, const nn::Matrix& h) const;  // T' x 3
  double loss(const nn::ParamSet& params, const nn::Matrix& h, const std::vector<int>& targets, double scale,
              nn::GradSet* grads, nn::Matrix* d_h) const;

  nn::Linear proj;
};

class HybridModel {
 public:
  explicit HybridModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }
  void init(double variance, std::uint64_t seed) { params_.init_gaussian(variance, seed); }

  nn::Matrix encode(const nn::Matrix& features) const;  // T' x enc_dim
  PosteriorLattice ctc_lattice(const nn::Matrix& h) const;
  nn::Matrix lid_log_probs(const nn::Matrix& h) const;

  // Decoder interface for search. Keys are built once per utterance.
  Attention::Keys attention_keys(const nn::Matrix& h) const;
  DecoderState initial_state(const Attention::Keys& keys) const;
  // log P(next token | prev_token, state) over the attention vocabulary.
  nn::Vector decoder_step(const Attention::Keys& keys, const DecoderState& state, int prev_token,
                          DecoderState* next) const;

  // Forward and (when grads is non-null) backward for one utterance.
  // L_att is the mean token cross entropy over target + eos; L_ctc is
  // -log P_ctc divided by max(1, |target|); L_lid is the mean frame cross entropy.
  UtteranceLoss utterance_loss(const Example& example, const LossOptions& options, nn::GradSet* grads) const;

  // Attention-only teacher-forced pass returning the argmax token at every step.
  std::vector<int> teacher_forced_argmax(const nn::Matrix& features, const std::vector<int>& target) const;

  void save(const std::filesystem::path& path, std::map<std::string, std::string> extra_meta) const;
  static HybridModel load(const std::filesystem::path& path, std::map<std::string, std::string>* meta = nullptr);

  int sos() const { return 0; }
  int eos() const { return 1; }

 private:
  struct StepCache {
    nn::Gru::StepCache gru;
    Attention::Cache attn;
    nn::Vector out_in;  // [s; context]
    int input_token = 0;
  };

  DecoderState step_forward(const nn::ParamSet& params, const Attention::Keys& keys, const DecoderState& state,
                            int prev_token, nn::Vector& logits, StepCache* cache) const;

  ModelConfig config_;
  nn::ParamSet params_;
  nn::Encoder encoder_;
  nn::Linear ctc_out_;
  nn::ParamRef embed_;
  nn::Gru dec_gru_;
  Attention attention_;
  nn::Linear dec_out_;
  LidHead lid_;
};

// Token frequencies (including eos once per transcript) normalized to sum 1.
nn::Vector unigram_distribution(const std::vector<std::vector<int>>& targets, int vocab_size, int eos);

struct TrainConfig {
  LossWeights weights;
  nn::OptimizerConfig optimizer;
  double label_smoothing = 0.05;
  double max_sampling_prob = 0.1;  // ramps linearly from 0 over total steps
  std::uint64_t seed = 1;
  int threads = 1;
};

struct StepRecord {
  std::int64_t step = 0;
  LossBundle losses;  // means over the batch
  double lr = 0.0;
  double grad_norm = 0.0;
  int infeasible = 0;
};

std::string to_json_line(const StepRecord& record);

// Owns the optimizer state for one training run.
class Trainer {
 public:
  Trainer(HybridModel& model, TrainConfig config, nn::Vector unigram);

  // One clipped optimizer step on the batch mean. Per-utterance gradients are
  // reduced in batch order, so the result does not depend on `threads`.
  StepRecord train_step(const std::vector<const Example*>& batch);

  double sampling_prob() const;
  std::int64_t steps_taken() const { return optimizer_.steps_taken(); }

 private:
  HybridModel& model_;
  TrainConfig config_;
  nn::Vector unigram_;
  nn::Optimizer optimizer_;
};

}  // namespace csasr
