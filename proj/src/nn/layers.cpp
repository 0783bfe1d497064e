#include "csasr/nn/layers.hpp"

#include <stdexcept>

namespace csasr::nn {

namespace {

Vector sigmoid(const Vector& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

void check_dim(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want) {
    throw std::invalid_argument(std::string(what) + ": expected dimension " + std::to_string(want) + ", got " +
                                std::to_string(got));
  }
}

}  // namespace

Vector log_softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

Vector softmax(const Vector& logits) { return log_softmax(logits).array().exp().matrix(); }

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(ParamSet& params, const std::string& name, int in, int out)
    : w_(params.add(name + ".w", out, in)), b_(params.add(name + ".b", out, 1)), in_(in), out_(out) {}

Vector Linear::forward(const ParamSet& params, const Vector& x) const {
  check_dim(x.size(), in_, "Linear");
  return params[w_] * x + params[b_];
}

Matrix Linear::forward_cols(const ParamSet& params, const Matrix& x) const {
  check_dim(x.rows(), in_, "Linear");
  Matrix y = params[w_] * x;
  y.colwise() += params[b_].col(0);
  return y;
}

Vector Linear::backward(const ParamSet& params, const Vector& x, const Vector& dy, GradSet& grads) const {
  grads[w_].noalias() += dy * x.transpose();
  grads[b_] += dy;
  return params[w_].transpose() * dy;
}

Matrix Linear::backward_cols(const ParamSet& params, const Matrix& x, const Matrix& dy, GradSet& grads) const {
  grads[w_].noalias() += dy * x.transpose();
  grads[b_] += dy.rowwise().sum();
  return params[w_].transpose() * dy;
}

// ---------------------------------------------------------------------------
// GRU

Gru::Gru(ParamSet& params, const std::string& name, int input, int hidden)
    : w_(params.add(name + ".w", 3 * hidden, input)),
      u_(params.add(name + ".u", 3 * hidden, hidden)),
      b_(params.add(name + ".b", 3 * hidden, 1)),
      input_(input),
      hidden_(hidden) {}

Vector Gru::step(const ParamSet& params, const Vector& x, const Vector& h_prev, StepCache* cache) const {
  check_dim(x.size(), input_, "Gru input");
  check_dim(h_prev.size(), hidden_, "Gru state");
  const auto H = hidden_;
  const Matrix& W = params[w_];
  const Matrix& U = params[u_];
  const Vector pre = W * x + params[b_];
  const Vector zr_pre = pre.head(2 * H) + U.topRows(2 * H) * h_prev;
  const Vector z = sigmoid(Vector(zr_pre.head(H)));
  const Vector r = sigmoid(Vector(zr_pre.tail(H)));
  const Vector n = (pre.tail(H) + U.bottomRows(H) * r.cwiseProduct(h_prev)).array().tanh().matrix();
  Vector h = (1.0 - z.array()).matrix().cwiseProduct(n) + z.cwiseProduct(h_prev);
  if (cache) *cache = StepCache{x, h_prev, z, r, n};
  return h;
}

void Gru::step_backward(const ParamSet& params, const StepCache& c, const Vector& d_h, GradSet& grads, Vector& d_x,
                        Vector& d_h_prev) const {
  const auto H = hidden_;
  const Matrix& W = params[w_];
  const Matrix& U = params[u_];
  const Vector dn = d_h.cwiseProduct((1.0 - c.z.array()).matrix());
  const Vector dz = d_h.cwiseProduct(c.h_prev - c.n);
  d_h_prev = d_h.cwiseProduct(c.z);

  Vector d_pre(3 * H);
  d_pre.tail(H) = dn.cwiseProduct((1.0 - c.n.array().square()).matrix());
  const Vector rh = c.r.cwiseProduct(c.h_prev);
  const Vector d_rh = U.bottomRows(H).transpose() * d_pre.tail(H);
  const Vector dr = d_rh.cwiseProduct(c.h_prev);
  d_h_prev += d_rh.cwiseProduct(c.r);
  d_pre.head(H) = dz.cwiseProduct(c.z.cwiseProduct((1.0 - c.z.array()).matrix()));
  d_pre.segment(H, H) = dr.cwiseProduct(c.r.cwiseProduct((1.0 - c.r.array()).matrix()));
  d_h_prev += U.topRows(2 * H).transpose() * d_pre.head(2 * H);

  grads[w_].noalias() += d_pre * c.x.transpose();
  grads[b_] += d_pre;
  grads[u_].topRows(2 * H).noalias() += d_pre.head(2 * H) * c.h_prev.transpose();
  grads[u_].bottomRows(H).noalias() += d_pre.tail(H) * rh.transpose();
  d_x = W.transpose() * d_pre;
}

Matrix Gru::sequence(const ParamSet& params, const Matrix& x, bool reverse, SequenceCache* cache) const {
  check_dim(x.rows(), input_, "Gru input");
  const auto H = hidden_;
  const auto T = x.cols();
  const Matrix& U = params[u_];
  Matrix pre = params[w_] * x;
  pre.colwise() += params[b_].col(0);

  Matrix out(H, T);
  if (cache) {
    cache->x = x;
    cache->reverse = reverse;
    cache->h_prev.resize(H, T);
    cache->z.resize(H, T);
    cache->r.resize(H, T);
    cache->n.resize(H, T);
  }
  Vector h = Vector::Zero(H);
  for (Eigen::Index k = 0; k < T; ++k) {
    const Eigen::Index t = reverse ? T - 1 - k : k;
    const Vector zr_pre = pre.col(t).head(2 * H) + U.topRows(2 * H) * h;
    const Vector z = sigmoid(Vector(zr_pre.head(H)));
    const Vector r = sigmoid(Vector(zr_pre.tail(H)));
    const Vector n = (pre.col(t).tail(H) + U.bottomRows(H) * r.cwiseProduct(h)).array().tanh().matrix();
    if (cache) {
      cache->h_prev.col(t) = h;
      cache->z.col(t) = z;
      cache->r.col(t) = r;
      cache->n.col(t) = n;
    }
    h = (1.0 - z.array()).matrix().cwiseProduct(n) + z.cwiseProduct(h);
    out.col(t) = h;
  }
  return out;
}

Matrix Gru::sequence_backward(const ParamSet& params, const SequenceCache& c, const Matrix& d_out,
                              GradSet& grads) const {
  const auto H = hidden_;
  const auto T = c.x.cols();
  const Matrix& U = params[u_];
  Matrix d_pre(3 * H, T);
  Matrix rh(H, T);
  Vector carry = Vector::Zero(H);
  for (Eigen::Index k = T - 1; k >= 0; --k) {
    const Eigen::Index t = c.reverse ? T - 1 - k : k;
    const Vector d_h = d_out.col(t) + carry;
    const auto z = c.z.col(t).array();
    const auto r = c.r.col(t).array();
    const auto n = c.n.col(t).array();
    const auto hp = c.h_prev.col(t).array();

    const Vector dan = (d_h.array() * (1.0 - z) * (1.0 - n.square())).matrix();
    const Vector d_rh = U.bottomRows(H).transpose() * dan;
    const Vector daz = (d_h.array() * (hp - n) * z * (1.0 - z)).matrix();
    const Vector dar = (d_rh.array() * hp * r * (1.0 - r)).matrix();
    d_pre.col(t).head(H) = daz;
    d_pre.col(t).segment(H, H) = dar;
    d_pre.col(t).tail(H) = dan;
    rh.col(t) = (r * hp).matrix();

    carry = (d_h.array() * z + d_rh.array() * r).matrix() + U.topRows(2 * H).transpose() * d_pre.col(t).head(2 * H);
  }
  grads[w_].noalias() += d_pre * c.x.transpose();
  grads[b_] += d_pre.rowwise().sum();
  grads[u_].topRows(2 * H).noalias() += d_pre.topRows(2 * H) * c.h_prev.transpose();
  grads[u_].bottomRows(H).noalias() += d_pre.bottomRows(H) * rh.transpose();
  return params[w_].transpose() * d_pre;
}

// ---------------------------------------------------------------------------
// Pooling

Matrix pool_pairs(const Matrix& x) {
  const auto D = x.rows();
  const auto T2 = x.cols() / 2;
  Matrix out(2 * D, T2);
  for (Eigen::Index j = 0; j < T2; ++j) {
    out.col(j).head(D) = x.col(2 * j);
    out.col(j).tail(D) = x.col(2 * j + 1);
  }
  return out;
}

Matrix pool_pairs_backward(const Matrix& d_pooled, Eigen::Index input_frames) {
  const auto D = d_pooled.rows() / 2;
  Matrix d(D, input_frames);
  d.setZero();
  for (Eigen::Index j = 0; j < d_pooled.cols(); ++j) {
    d.col(2 * j) = d_pooled.col(j).head(D);
    d.col(2 * j + 1) = d_pooled.col(j).tail(D);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Encoder

int EncoderConfig::output_frames(int input_frames) const {
  int t = input_frames;
  for (std::size_t i = 0; i < pool_before.size(); ++i) t /= 2;
  return t;
}

void EncoderConfig::validate() const {
  if (input_dim < 1 || hidden < 1 || layers < 1) throw std::invalid_argument("encoder dimensions must be positive");
  for (int p : pool_before) {
    if (p < 0 || p >= layers) throw std::invalid_argument("pooling position " + std::to_string(p) + " out of range");
  }
}

Encoder::Encoder(ParamSet& params, const std::string& name, EncoderConfig config) : config_(std::move(config)) {
  config_.validate();
  pools_per_layer_.assign(static_cast<std::size_t>(config_.layers), 0);
  for (int p : config_.pool_before) ++pools_per_layer_[static_cast<std::size_t>(p)];
  int in = config_.input_dim;
  for (int l = 0; l < config_.layers; ++l) {
    in <<= pools_per_layer_[static_cast<std::size_t>(l)];
    const auto prefix = name + ".l" + std::to_string(l);
    fwd_.emplace_back(params, prefix + ".fwd", in, config_.hidden);
    bwd_.emplace_back(params, prefix + ".bwd", in, config_.hidden);
    in = 2 * config_.hidden;
  }
}

Matrix Encoder::forward(const ParamSet& params, const Matrix& features, Cache* cache) const {
  if (features.cols() != config_.input_dim) {
    throw std::invalid_argument("encoder: feature dimension " + std::to_string(features.cols()) + ", expected " +
                                std::to_string(config_.input_dim));
  }
  if (features.rows() < config_.pooling_factor()) {
    throw std::invalid_argument("encoder: " + std::to_string(features.rows()) + " frames is below the pooling factor " +
                                std::to_string(config_.pooling_factor()));
  }
  Matrix x = features.transpose();
  if (cache) {
    cache->frames_before_pool.clear();
    cache->layer_inputs.clear();
    cache->fwd.assign(fwd_.size(), {});
    cache->bwd.assign(bwd_.size(), {});
  }
  for (std::size_t l = 0; l < fwd_.size(); ++l) {
    for (int p = 0; p < pools_per_layer_[l]; ++p) {
      if (cache) cache->frames_before_pool.push_back(x.cols());
      x = pool_pairs(x);
    }
    Matrix out(2 * config_.hidden, x.cols());
    out.topRows(config_.hidden) = fwd_[l].sequence(params, x, false, cache ? &cache->fwd[l] : nullptr);
    out.bottomRows(config_.hidden) = bwd_[l].sequence(params, x, true, cache ? &cache->bwd[l] : nullptr);
    if (cache) cache->layer_inputs.push_back(std::move(x));
    x = std::move(out);
  }
  return x.transpose();
}

Matrix Encoder::backward(const ParamSet& params, const Cache& cache, const Matrix& d_h, GradSet& grads) const {
  Matrix d = d_h.transpose();
  std::size_t pool_idx = cache.frames_before_pool.size();
  for (std::size_t l = fwd_.size(); l-- > 0;) {
    Matrix d_in = fwd_[l].sequence_backward(params, cache.fwd[l], d.topRows(config_.hidden), grads);
    d_in += bwd_[l].sequence_backward(params, cache.bwd[l], d.bottomRows(config_.hidden), grads);
    for (int p = 0; p < pools_per_layer_[l]; ++p) {
      d_in = pool_pairs_backward(d_in, cache.frames_before_pool[--pool_idx]);
    }
    d = std::move(d_in);
  }
  return d.transpose();
}

}  // namespace csasr::nn
