#include "csasr/attnmodel.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "csasr/common.hpp"

namespace csasr {

using nn::GradSet;
using nn::Matrix;
using nn::ParamSet;
using nn::Vector;

// ---------------------------------------------------------------------------
// Loss weights

LossWeights LossWeights::two_term(double lambda) {
  LossWeights w{lambda, 1.0 - lambda, 0.0};
  w.validate();
  return w;
}

LossWeights LossWeights::three_term(double att, double lid) {
  LossWeights w{att, 1.0 - att - lid, lid};
  if (std::abs(w.ctc) < 1e-12) w.ctc = 0.0;
  w.validate();
  return w;
}

void LossWeights::validate() const {
  for (double x : {att, ctc, lid}) {
    if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument("loss weights must lie in [0, 1]");
  }
  if (std::abs(att + ctc + lid - 1.0) > 1e-9) throw std::invalid_argument("loss weights must sum to 1");
}

LossBundle compute_losses(const LossWeights& weights, double att, double ctc, double lid) {
  weights.validate();
  LossBundle b{att, ctc, lid, 0.0};
  if (weights.att != 0.0) b.mtl += weights.att * att;
  if (weights.ctc != 0.0) b.mtl += weights.ctc * ctc;
  if (weights.lid != 0.0) b.mtl += weights.lid * lid;
  return b;
}

// ---------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
  encoder.validate();
  if (vocab_size < 3) throw std::invalid_argument("model vocabulary must hold at least sos, eos and unk");
  if (embed_dim <= 0 || decoder_hidden <= 0) throw std::invalid_argument("decoder dimensions must be positive");
}

std::map<std::string, std::string> ModelConfig::to_metadata() const {
  std::ostringstream pools;
  for (std::size_t i = 0; i < encoder.pool_before.size(); ++i) pools << (i ? "," : "") << encoder.pool_before[i];
  return {
      {"model.input_dim", std::to_string(encoder.input_dim)},
      {"model.enc_hidden", std::to_string(encoder.hidden)},
      {"model.enc_layers", std::to_string(encoder.layers)},
      {"model.pool_before", pools.str()},
      {"model.vocab_size", std::to_string(vocab_size)},
      {"model.embed_dim", std::to_string(embed_dim)},
      {"model.dec_hidden", std::to_string(decoder_hidden)},
      {"model.attention", to_string(attention.kind)},
      {"model.attn_dim", std::to_string(attention.attn_dim)},
      {"model.filters", std::to_string(attention.filters)},
      {"model.filter_width", std::to_string(attention.filter_width)},
  };
}

ModelConfig ModelConfig::from_metadata(const std::map<std::string, std::string>& meta) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) throw DataError("checkpoint metadata lacks '" + key + "'");
    return it->second;
  };
  auto get_int = [&](const std::string& key) { return std::stoi(get(key)); };
  ModelConfig c;
  c.encoder.input_dim = get_int("model.input_dim");
  c.encoder.hidden = get_int("model.enc_hidden");
  c.encoder.layers = get_int("model.enc_layers");
  c.encoder.pool_before.clear();
  std::istringstream pools(get("model.pool_before"));
  for (std::string item; std::getline(pools, item, ',');) {
    if (!item.empty()) c.encoder.pool_before.push_back(std::stoi(item));
  }
  c.vocab_size = get_int("model.vocab_size");
  c.embed_dim = get_int("model.embed_dim");
  c.decoder_hidden = get_int("model.dec_hidden");
  c.attention.kind = parse_attention_kind(get("model.attention"));
  c.attention.attn_dim = get_int("model.attn_dim");
  c.attention.filters = get_int("model.filters");
  c.attention.filter_width = get_int("model.filter_width");
  return c;
}

// ---------------------------------------------------------------------------
// LID head

LidHead::LidHead(ParamSet& params, const std::string& name, int enc_dim) : proj(params, name, enc_dim, kNumFrameLid) {}

Matrix LidHead::log_probs(const ParamSet& params, const Matrix& h) const {
  const Matrix logits = proj.forward_cols(params, h.transpose());
  Matrix out(h.rows(), kNumFrameLid);
  for (Eigen::Index t = 0; t < h.rows(); ++t) out.row(t) = nn::log_softmax(logits.col(t)).transpose();
  return out;
}

double LidHead::loss(const ParamSet& params, const Matrix& h, const std::vector<int>& targets, double scale,
                     GradSet* grads, Matrix* d_h) const {
  const auto T = h.rows();
  if (static_cast<Eigen::Index>(targets.size()) != T) {
    throw std::invalid_argument("LID targets have " + std::to_string(targets.size()) + " frames, encoder has " +
                                std::to_string(T));
  }
  const Matrix hT = h.transpose();
  const Matrix logits = proj.forward_cols(params, hT);
  Matrix d_logits(kNumFrameLid, T);
  double total = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) {
    const int y = targets[static_cast<std::size_t>(t)];
    if (y < 0 || y >= kNumFrameLid) throw std::out_of_range("LID target out of range");
    const Vector lp = nn::log_softmax(logits.col(t));
    total -= lp(y);
    d_logits.col(t) = lp.array().exp().matrix();
    d_logits(y, t) -= 1.0;
  }
  const double mean = total / static_cast<double>(T);
  if (grads) {
    d_logits *= scale / static_cast<double>(T);
    const Matrix d_hT = proj.backward_cols(params, hT, d_logits, *grads);
    if (d_h) *d_h += d_hT.transpose();
  }
  return mean;
}

// ---------------------------------------------------------------------------
// Model

namespace {

ModelConfig resolved(ModelConfig c) {
  c.validate();
  c.attention.state_dim = c.decoder_hidden;
  c.attention.enc_dim = c.encoder.output_dim();
  return c;
}

int argmax(const Vector& v) {
  Eigen::Index best = 0;
  v.maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace

HybridModel::HybridModel(ModelConfig config) : config_(resolved(std::move(config))) {
  const int E = config_.encoder.output_dim();
  const int V = config_.vocab_size;
  encoder_ = nn::Encoder(params_, "enc", config_.encoder);
  ctc_out_ = nn::Linear(params_, "ctc", E, V + 1);
  embed_ = params_.add("dec.embed", config_.embed_dim, V);
  dec_gru_ = nn::Gru(params_, "dec.gru", config_.embed_dim + E, config_.decoder_hidden);
  attention_ = Attention(params_, "dec.att", config_.attention);
  dec_out_ = nn::Linear(params_, "dec.out", config_.decoder_hidden + E, V);
  lid_ = LidHead(params_, "lid", E);
}

Matrix HybridModel::encode(const Matrix& features) const { return encoder_.forward(params_, features, nullptr); }

PosteriorLattice HybridModel::ctc_lattice(const Matrix& h) const {
  return PosteriorLattice::from_logits(ctc_out_.forward_cols(params_, h.transpose()).transpose());
}

Matrix HybridModel::lid_log_probs(const Matrix& h) const { return lid_.log_probs(params_, h); }

Attention::Keys HybridModel::attention_keys(const Matrix& h) const {
  return attention_.keys(params_, h.transpose());
}

DecoderState HybridModel::initial_state(const Attention::Keys& keys) const {
  const auto T = keys.h.cols();
  return DecoderState{Vector::Zero(config_.decoder_hidden), Vector::Zero(config_.encoder.output_dim()),
                      Vector::Constant(T, 1.0 / static_cast<double>(T))};
}

DecoderState HybridModel::step_forward(const ParamSet& params, const Attention::Keys& keys, const DecoderState& state,
                                       int prev_token, Vector& logits, StepCache* cache) const {
  if (prev_token < 0 || prev_token >= config_.vocab_size) throw std::out_of_range("decoder input token out of range");
  const int D = config_.embed_dim;
  const auto E = state.context.size();
  Vector x(D + E);
  x.head(D) = params[embed_].col(prev_token);
  x.tail(E) = state.context;
  DecoderState next;
  next.s = dec_gru_.step(params, x, state.s, cache ? &cache->gru : nullptr);
  auto att = attention_.attend(params, keys, next.s, state.alpha, cache ? &cache->attn : nullptr);
  next.context = std::move(att.context);
  next.alpha = std::move(att.alpha);
  Vector out_in(next.s.size() + E);
  out_in << next.s, next.context;
  logits = dec_out_.forward(params, out_in);
  if (cache) {
    cache->out_in = std::move(out_in);
    cache->input_token = prev_token;
  }
  return next;
}

Vector HybridModel::decoder_step(const Attention::Keys& keys, const DecoderState& state, int prev_token,
                                 DecoderState* next) const {
  Vector logits;
  DecoderState s = step_forward(params_, keys, state, prev_token, logits, nullptr);
  if (next) *next = std::move(s);
  return nn::log_softmax(logits);
}

UtteranceLoss HybridModel::utterance_loss(const Example& ex, const LossOptions& opt, GradSet* grads) const {
  const auto& w = opt.weights;
  w.validate();
  for (int y : ex.target) {
    if (y < 0 || y >= config_.vocab_size) throw std::out_of_range("target token out of range");
  }
  const ParamSet& params = params_;
  nn::Encoder::Cache enc_cache;
  const Matrix h = encoder_.forward(params, ex.features, grads ? &enc_cache : nullptr);
  const Matrix hT = h.transpose();
  const auto Tp = hT.cols();
  const int E = config_.encoder.output_dim();
  Matrix d_hT;
  if (grads) d_hT = Matrix::Zero(E, Tp);

  UtteranceLoss result;
  double l_att = 0.0, l_ctc = 0.0, l_lid = 0.0;

  // CTC head
  if (w.ctc > 0.0) {
    const Matrix logits = ctc_out_.forward_cols(params, hT);
    const auto r = ctc_loss(PosteriorLattice::from_logits(logits.transpose()), ex.target);
    if (r.feasible) {
      const double norm = std::max<double>(1.0, static_cast<double>(ex.target.size()));
      l_ctc = -r.log_likelihood / norm;
      if (grads) {
        const Matrix d_logits = r.grad_logits.transpose() * (w.ctc / norm);
        d_hT += ctc_out_.backward_cols(params, hT, d_logits, *grads);
      }
    } else {
      result.ctc_feasible = false;
    }
  }

  // Attention decoder
  if (w.att > 0.0) {
    const auto keys = attention_.keys(params, hT);
    const std::size_t n = ex.target.size() + 1;
    std::vector<StepCache> caches(grads ? n : 0);
    std::vector<Vector> d_logits(grads ? n : 0);
    std::mt19937_64 rng(opt.sampling_seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    DecoderState state = initial_state(keys);
    Vector logits;
    int prev = sos();
    for (std::size_t t = 0; t < n; ++t) {
      if (t > 0) {
        prev = ex.target[t - 1];
        if (opt.sampling_prob > 0.0 && unif(rng) < opt.sampling_prob) prev = argmax(logits);
      }
      state = step_forward(params, keys, state, prev, logits, grads ? &caches[t] : nullptr);
      const int y = t < ex.target.size() ? ex.target[t] : eos();
      auto ce = nn::smoothed_cross_entropy(logits, y, opt.unigram, opt.label_smoothing);
      l_att += ce.loss;
      if (grads) d_logits[t] = std::move(ce.grad_logits);
    }
    l_att /= static_cast<double>(n);

    if (grads) {
      const double scale = w.att / static_cast<double>(n);
      const int S = config_.decoder_hidden;
      const int D = config_.embed_dim;
      Matrix d_proj = Matrix::Zero(keys.proj.rows(), Tp);
      Vector carry_s = Vector::Zero(S), carry_c = Vector::Zero(E), carry_alpha;
      for (std::size_t k = n; k-- > 0;) {
        const StepCache& c = caches[k];
        const Vector d_out_in = dec_out_.backward(params, c.out_in, d_logits[k] * scale, *grads);
        Vector d_s = carry_s + d_out_in.head(S);
        const Vector d_c = carry_c + d_out_in.tail(E);
        Vector d_s_att, d_alpha_prev;
        attention_.attend_backward(params, keys, c.attn, d_c, carry_alpha, *grads, d_hT, d_proj, d_s_att,
                                   d_alpha_prev);
        d_s += d_s_att;
        Vector d_x, d_s_prev;
        dec_gru_.step_backward(params, c.gru, d_s, *grads, d_x, d_s_prev);
        (*grads)[embed_].col(c.input_token) += d_x.head(D);
        carry_c = d_x.tail(E);
        carry_s = std::move(d_s_prev);
        carry_alpha = std::move(d_alpha_prev);
      }
      attention_.keys_backward(params, keys, d_proj, d_hT, *grads);
    }
  }

  // LID head
  if (w.lid > 0.0) {
    Matrix d_h;
    if (grads) d_h = Matrix::Zero(Tp, E);
    l_lid = lid_.loss(params, h, ex.frame_lid, w.lid, grads, grads ? &d_h : nullptr);
    if (grads) d_hT += d_h.transpose();
  }

  if (grads) encoder_.backward(params, enc_cache, d_hT.transpose(), *grads);
  result.losses = compute_losses(w, l_att, l_ctc, l_lid);
  return result;
}

std::vector<int> HybridModel::teacher_forced_argmax(const Matrix& features, const std::vector<int>& target) const {
  const auto keys = attention_keys(encode(features));
  DecoderState state = initial_state(keys);
  std::vector<int> out;
  int prev = sos();
  for (std::size_t t = 0; t <= target.size(); ++t) {
    const Vector lp = decoder_step(keys, state, prev, &state);
    out.push_back(argmax(lp));
    if (t < target.size()) prev = target[t];
  }
  return out;
}

void HybridModel::save(const std::filesystem::path& path, std::map<std::string, std::string> extra_meta) const {
  auto meta = config_.to_metadata();
  meta["kind"] = "hybrid";
  for (auto& [k, v] : extra_meta) meta[k] = v;
  nn::save_checkpoint(path, meta, params_);
}

HybridModel HybridModel::load(const std::filesystem::path& path, std::map<std::string, std::string>* meta) {
  auto ckp = nn::load_checkpoint(path);
  if (ckp.metadata["kind"] != "hybrid") throw DataError(path.string() + " is not a hybrid model checkpoint");
  HybridModel model(ModelConfig::from_metadata(ckp.metadata));
  nn::assign_params(model.params_, ckp.params);
  if (meta) *meta = std::move(ckp.metadata);
  return model;
}

// ---------------------------------------------------------------------------
// Training

Vector unigram_distribution(const std::vector<std::vector<int>>& targets, int vocab_size, int eos) {
  Vector counts = Vector::Zero(vocab_size);
  for (const auto& t : targets) {
    for (int y : t) counts(y) += 1.0;
    counts(eos) += 1.0;
  }
  if (counts.sum() <= 0.0) throw std::invalid_argument("unigram over an empty corpus");
  return counts / counts.sum();
}

std::string to_json_line(const StepRecord& r) {
  nlohmann::json j = {{"step", r.step},         {"L_att", r.losses.att}, {"L_ctc", r.losses.ctc},
                      {"L_lid", r.losses.lid},  {"L_mtl", r.losses.mtl}, {"lr", r.lr},
                      {"grad_norm", r.grad_norm}, {"infeasible", r.infeasible}};
  return j.dump();
}

Trainer::Trainer(HybridModel& model, TrainConfig config, Vector unigram)
    : model_(model), config_(std::move(config)), unigram_(std::move(unigram)), optimizer_(model.params(), config_.optimizer) {
  config_.weights.validate();
  if (config_.label_smoothing > 0.0 && unigram_.size() != model.config().vocab_size) {
    throw std::invalid_argument("unigram size differs from the model vocabulary");
  }
}

double Trainer::sampling_prob() const {
  const auto total = config_.optimizer.total_steps;
  if (total <= 1) return 0.0;
  const double frac = std::min(1.0, static_cast<double>(optimizer_.steps_taken()) / static_cast<double>(total - 1));
  return config_.max_sampling_prob * frac;
}

StepRecord Trainer::train_step(const std::vector<const Example*>& batch) {
  if (batch.empty()) throw std::invalid_argument("empty training batch");
  const std::size_t B = batch.size();
  const std::int64_t step = optimizer_.steps_taken();
  LossOptions base;
  base.weights = config_.weights;
  base.label_smoothing = config_.label_smoothing;
  base.unigram = config_.label_smoothing > 0.0 ? &unigram_ : nullptr;
  base.sampling_prob = sampling_prob();

  std::vector<GradSet> grads(B);
  std::vector<UtteranceLoss> losses(B);
  std::vector<std::exception_ptr> errors(B);
  auto work = [&](std::size_t i) {
    try {
      LossOptions opt = base;
      opt.sampling_seed = config_.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(step) * 1000003ULL + i;
      grads[i] = GradSet(model_.params());
      losses[i] = model_.utterance_loss(*batch[i], opt, &grads[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const int threads = std::max(1, std::min<int>(config_.threads, static_cast<int>(B)));
  if (threads == 1) {
    for (std::size_t i = 0; i < B; ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int k = 0; k < threads; ++k) {
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < B;) work(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  StepRecord rec;
  rec.step = step;
  GradSet total(model_.params());
  double att = 0.0, ctc = 0.0, lid = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    const auto& l = losses[i].losses;
    if (!std::isfinite(l.mtl)) {
      throw NumericError("non-finite loss at step " + std::to_string(step) + ", batch item " + std::to_string(i) +
                         " (att " + std::to_string(l.att) + ", ctc " + std::to_string(l.ctc) + ", lid " +
                         std::to_string(l.lid) + ")");
    }
    if (!losses[i].ctc_feasible) ++rec.infeasible;
    att += l.att;
    ctc += l.ctc;
    lid += l.lid;
    total.add_scaled(grads[i], 1.0 / static_cast<double>(B));
  }
  const double inv = 1.0 / static_cast<double>(B);
  rec.losses = compute_losses(config_.weights, att * inv, ctc * inv, lid * inv);
  const auto info = optimizer_.step(model_.params(), total);
  rec.lr = info.lr;
  rec.grad_norm = info.grad_norm;
  return rec;
}

}  // namespace csasr
