#pragma once

#include <string>

#include "csasr/nn/param.hpp"

namespace csasr {

enum class AttentionKind { Content, Location };

std::string to_string(AttentionKind kind);
AttentionKind parse_attention_kind(const std::string& s);

struct AttentionConfig {
  AttentionKind kind = AttentionKind::Location;
  int state_dim = 32;
  int enc_dim = 64;
  int attn_dim = 32;
  int filters = 10;
  int filter_width = 15;
};

// Additive attention:
//   e_t = v . tanh(Ws s + Wh h_t + b [+ Uf (F * alpha_prev)_t])
//   alpha = softmax(e), context = sum_t alpha_t h_t
// Encoder states are columns of `h` (enc_dim x T').
class Attention {
 public:
  // Encoder projection Wh h + b, shared by every decoder step of an utterance.
  struct Keys {
    nn::Matrix h;
    nn::Matrix proj;
  };
  struct Cache {
    nn::Vector s, alpha_prev, alpha;
    nn::Matrix feats;  // filters x T' (location only)
    nn::Matrix act;    // attn_dim x T', tanh outputs
  };
  struct Output {
    nn::Vector context;
    nn::Vector alpha;
  };

  Attention() = default;
  Attention(nn::ParamSet& params, const std::string& name, AttentionConfig config);

  Keys keys(const nn::ParamSet& params, const nn::Matrix& h) const;
  // Gradient of the projection back into d_h and the parameters.
  void keys_backward(const nn::ParamSet& params, const Keys& keys, const nn::Matrix& d_proj, nn::Matrix& d_h,
                     nn::GradSet& grads) const;

  Output attend(const nn::ParamSet& params, const Keys& keys, const nn::Vector& s, const nn::Vector& alpha_prev,
                Cache* cache) const;
  // d_alpha is the gradient arriving at the output weights from later steps.
  // Accumulates into d_h, d_proj and grads; writes d_s and d_alpha_prev.
  void attend_backward(const nn::ParamSet& params, const Keys& keys, const Cache& cache, const nn::Vector& d_context,
                       const nn::Vector& d_alpha, nn::GradSet& grads, nn::Matrix& d_h, nn::Matrix& d_proj,
                       nn::Vector& d_s, nn::Vector& d_alpha_prev) const;

  const AttentionConfig& config() const { return config_; }

 private:
  nn::Matrix location_features(const nn::ParamSet& params, const nn::Vector& alpha_prev) const;

  AttentionConfig config_;
  nn::ParamRef ws_, wh_, b_, v_, conv_, uf_;
};

}  // namespace csasr
