#pragma once

#include <string>
#include <vector>

#include "csasr/nn/param.hpp"

namespace csasr::nn {

// Affine map y = W x + b on column vectors (or on every column of a matrix).
class Linear {
 public:
  Linear() = default;
  Linear(ParamSet& params, const std::string& name, int in, int out);

  Vector forward(const ParamSet& params, const Vector& x) const;
  Matrix forward_cols(const ParamSet& params, const Matrix& x) const;
  // Accumulates parameter gradients and returns d/dx.
  Vector backward(const ParamSet& params, const Vector& x, const Vector& dy, GradSet& grads) const;
  Matrix backward_cols(const ParamSet& params, const Matrix& x, const Matrix& dy, GradSet& grads) const;

  int in() const { return in_; }
  int out() const { return out_; }

 private:
  ParamRef w_, b_;
  int in_ = 0, out_ = 0;
};

// Gated recurrent unit, gate order (update z, reset r, candidate n):
//   z = sig(Wz x + Uz h + bz)
//   r = sig(Wr x + Ur h + br)
//   n = tanh(Wn x + Un (r * h) + bn)
//   h' = (1 - z) * n + z * h
class Gru {
 public:
  struct StepCache {
    Vector x, h_prev, z, r, n;
  };
  struct SequenceCache {
    Matrix x, h_prev, z, r, n;  // columns indexed by original time
    bool reverse = false;
  };

  Gru() = default;
  Gru(ParamSet& params, const std::string& name, int input, int hidden);

  Vector step(const ParamSet& params, const Vector& x, const Vector& h_prev, StepCache* cache) const;
  void step_backward(const ParamSet& params, const StepCache& cache, const Vector& d_h, GradSet& grads,
                     Vector& d_x, Vector& d_h_prev) const;

  // Runs over the columns of `x` (input x T) from a zero state, right-to-left
  // when `reverse`. Returns hidden x T in original time order.
  Matrix sequence(const ParamSet& params, const Matrix& x, bool reverse, SequenceCache* cache) const;
  Matrix sequence_backward(const ParamSet& params, const SequenceCache& cache, const Matrix& d_out,
                           GradSet& grads) const;

  int input() const { return input_; }
  int hidden() const { return hidden_; }

 private:
  ParamRef w_, u_, b_;
  int input_ = 0, hidden_ = 0;
};

// Concatenates frame pairs (2j, 2j+1) into one column; an odd tail is dropped.
Matrix pool_pairs(const Matrix& x);
Matrix pool_pairs_backward(const Matrix& d_pooled, Eigen::Index input_frames);

struct EncoderConfig {
  int input_dim = 16;
  int hidden = 32;  // per direction
  int layers = 2;
  // Layer indices whose input is pair-pooled first; an index may repeat.
  // Index 0 stacks raw feature frames.
  std::vector<int> pool_before = {0, 1};

  int pooling_factor() const { return 1 << pool_before.size(); }
  int output_dim() const { return 2 * hidden; }
  int output_frames(int input_frames) const;
  void validate() const;
};

// Stacked bidirectional GRU with pair pooling between layers.
class Encoder {
 public:
  struct Cache {
    std::vector<Eigen::Index> frames_before_pool;  // per pooling op, in order
    std::vector<Matrix> layer_inputs;
    std::vector<Gru::SequenceCache> fwd, bwd;
  };

  Encoder() = default;
  Encoder(ParamSet& params, const std::string& name, EncoderConfig config);

  // features: T x d (one frame per row). Returns h: T' x 2H.
  Matrix forward(const ParamSet& params, const Matrix& features, Cache* cache) const;
  // d_h: T' x 2H. Returns d features (T x d).
  Matrix backward(const ParamSet& params, const Cache& cache, const Matrix& d_h, GradSet& grads) const;

  const EncoderConfig& config() const { return config_; }

 private:
  EncoderConfig config_;
  std::vector<int> pools_per_layer_;
  std::vector<Gru> fwd_, bwd_;
};

Vector log_softmax(const Vector& logits);
Vector softmax(const Vector& logits);

}  // namespace csasr::nn
