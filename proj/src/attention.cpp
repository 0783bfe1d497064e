#include "csasr/attention.hpp"

#include <stdexcept>

#include "csasr/nn/layers.hpp"

namespace csasr {

using nn::Matrix;
using nn::Vector;

std::string to_string(AttentionKind kind) { return kind == AttentionKind::Content ? "content" : "location"; }

AttentionKind parse_attention_kind(const std::string& s) {
  if (s == "content") return AttentionKind::Content;
  if (s == "location") return AttentionKind::Location;
  throw std::invalid_argument("unknown attention kind '" + s + "'");
}

Attention::Attention(nn::ParamSet& params, const std::string& name, AttentionConfig config) : config_(config) {
  if (config.state_dim <= 0 || config.enc_dim <= 0 || config.attn_dim <= 0) {
    throw std::invalid_argument("attention dimensions must be positive");
  }
  ws_ = params.add(name + ".ws", config.attn_dim, config.state_dim);
  wh_ = params.add(name + ".wh", config.attn_dim, config.enc_dim);
  b_ = params.add(name + ".b", config.attn_dim, 1);
  v_ = params.add(name + ".v", config.attn_dim, 1);
  if (config.kind == AttentionKind::Location) {
    if (config.filters <= 0 || config.filter_width <= 0 || config.filter_width % 2 == 0) {
      throw std::invalid_argument("location attention needs a positive count of odd-width filters");
    }
    conv_ = params.add(name + ".conv", config.filters, config.filter_width);
    uf_ = params.add(name + ".uf", config.attn_dim, config.filters);
  }
}

Attention::Keys Attention::keys(const nn::ParamSet& params, const Matrix& h) const {
  if (h.cols() == 0) throw std::invalid_argument("attention over an empty encoder sequence");
  if (h.rows() != config_.enc_dim) throw std::invalid_argument("attention: encoder dimension mismatch");
  Keys k;
  k.h = h;
  k.proj = params[wh_] * h;
  k.proj.colwise() += params[b_].col(0);
  return k;
}

void Attention::keys_backward(const nn::ParamSet& params, const Keys& keys, const Matrix& d_proj, Matrix& d_h,
                              nn::GradSet& grads) const {
  grads[wh_].noalias() += d_proj * keys.h.transpose();
  grads[b_] += d_proj.rowwise().sum();
  d_h.noalias() += params[wh_].transpose() * d_proj;
}

// Zero-padded same-length correlation of alpha_prev with each filter row.
Matrix Attention::location_features(const nn::ParamSet& params, const Vector& alpha_prev) const {
  const Matrix& conv = params[conv_];
  const auto T = alpha_prev.size();
  const int half = config_.filter_width / 2;
  Matrix f = Matrix::Zero(config_.filters, T);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (int k = 0; k < config_.filter_width; ++k) {
      const Eigen::Index src = t + k - half;
      if (src >= 0 && src < T) f.col(t) += conv.col(k) * alpha_prev(src);
    }
  }
  return f;
}

Attention::Output Attention::attend(const nn::ParamSet& params, const Keys& keys, const Vector& s,
                                    const Vector& alpha_prev, Cache* cache) const {
  const auto T = keys.h.cols();
  if (s.size() != config_.state_dim) throw std::invalid_argument("attention: state dimension mismatch");
  if (alpha_prev.size() != T) throw std::invalid_argument("attention: previous weights length mismatch");

  Matrix z = keys.proj;
  z.colwise() += params[ws_] * s;
  Matrix feats;
  if (config_.kind == AttentionKind::Location) {
    feats = location_features(params, alpha_prev);
    z.noalias() += params[uf_] * feats;
  }
  const Matrix act = z.array().tanh().matrix();
  const Vector scores = act.transpose() * params[v_].col(0);
  Output out;
  out.alpha = nn::softmax(scores);
  out.context = keys.h * out.alpha;
  if (cache) *cache = Cache{s, alpha_prev, out.alpha, std::move(feats), act};
  return out;
}

void Attention::attend_backward(const nn::ParamSet& params, const Keys& keys, const Cache& c, const Vector& d_context,
                                const Vector& d_alpha, nn::GradSet& grads, Matrix& d_h, Matrix& d_proj, Vector& d_s,
                                Vector& d_alpha_prev) const {
  d_h.noalias() += d_context * c.alpha.transpose();
  Vector da = keys.h.transpose() * d_context;
  if (d_alpha.size() > 0) da += d_alpha;
  const Vector d_scores = c.alpha.cwiseProduct((da.array() - c.alpha.dot(da)).matrix());

  grads[v_].noalias() += c.act * d_scores;
  const Matrix d_z = ((params[v_].col(0) * d_scores.transpose()).array() * (1.0 - c.act.array().square())).matrix();
  d_proj += d_z;
  const Vector d_z_sum = d_z.rowwise().sum();
  grads[ws_].noalias() += d_z_sum * c.s.transpose();
  d_s = params[ws_].transpose() * d_z_sum;

  d_alpha_prev = Vector::Zero(c.alpha_prev.size());
  if (config_.kind == AttentionKind::Location) {
    grads[uf_].noalias() += d_z * c.feats.transpose();
    const Matrix d_f = params[uf_].transpose() * d_z;
    const Matrix& conv = params[conv_];
    Matrix& d_conv = grads[conv_];
    const auto T = c.alpha_prev.size();
    const int half = config_.filter_width / 2;
    for (Eigen::Index t = 0; t < T; ++t) {
      for (int k = 0; k < config_.filter_width; ++k) {
        const Eigen::Index src = t + k - half;
        if (src < 0 || src >= T) continue;
        d_conv.col(k) += d_f.col(t) * c.alpha_prev(src);
        d_alpha_prev(src) += conv.col(k).dot(d_f.col(t));
      }
    }
  }
}

}  // namespace csasr
