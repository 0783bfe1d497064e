#include <cmath>
#include <random>

#include "csasr/attnmodel.hpp"
#include "csasr/common.hpp"
#include "doctest.h"

using namespace csasr;
using nn::GradSet;
using nn::Matrix;
using nn::ParamSet;
using nn::Vector;

namespace {

Matrix gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

ModelConfig tiny_config(AttentionKind kind, int vocab = 6) {
  ModelConfig c;
  c.encoder = {.input_dim = 3, .hidden = 3, .layers = 2, .pool_before = {0, 1}};
  c.vocab_size = vocab;
  c.embed_dim = 3;
  c.decoder_hidden = 4;
  c.attention = {.kind = kind, .attn_dim = 3, .filters = 2, .filter_width = 3};
  return c;
}

// Each token id owns a feature signature; an utterance repeats signatures.
struct ToyCorpus {
  std::vector<Example> examples;
};

ToyCorpus toy_corpus(int n_utts, int vocab, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Matrix sig = gaussian(vocab, dim, rng);
  ToyCorpus corpus;
  for (int u = 0; u < n_utts; ++u) {
    Example ex;
    const int len = 2 + static_cast<int>(rng() % 3);
    std::vector<Vector> frames;
    std::vector<int> lid;
    for (int i = 0; i < len; ++i) {
      const int tok = 3 + static_cast<int>(rng() % static_cast<unsigned>(vocab - 3));
      ex.target.push_back(tok);
      const int dur = 4 + static_cast<int>(rng() % 3);
      for (int f = 0; f < dur; ++f) {
        frames.push_back(sig.row(tok).transpose() + 0.05 * gaussian(dim, 1, rng).col(0));
        lid.push_back(tok % 2);
      }
    }
    ex.features.resize(static_cast<Eigen::Index>(frames.size()), dim);
    for (std::size_t t = 0; t < frames.size(); ++t) ex.features.row(static_cast<Eigen::Index>(t)) = frames[t];
    // pooled by 4: take the majority by simple vote
    for (std::size_t j = 0; j + 4 <= lid.size(); j += 4) {
      int ones = lid[j] + lid[j + 1] + lid[j + 2] + lid[j + 3];
      ex.frame_lid.push_back(ones > 2 ? 1 : 0);
    }
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

}  // namespace

TEST_CASE("attend over a single frame returns that frame") {
  for (auto kind : {AttentionKind::Content, AttentionKind::Location}) {
    ParamSet params;
    Attention att(params, "a", {.kind = kind, .state_dim = 2, .enc_dim = 3, .attn_dim = 4, .filters = 2,
                                .filter_width = 5});
    params.init_gaussian(0.5, 3);
    std::mt19937_64 rng(1);
    const Matrix h = gaussian(3, 1, rng);
    const auto keys = att.keys(params, h);
    const auto out = att.attend(params, keys, Vector::Ones(2), Vector::Ones(1), nullptr);
    CHECK(out.alpha.size() == 1);
    CHECK(out.alpha(0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK((out.context - h.col(0)).norm() < 1e-15);
  }
}

TEST_CASE("zero scores give uniform weights") {
  for (auto kind : {AttentionKind::Content, AttentionKind::Location}) {
    ParamSet params;
    Attention att(params, "a", {.kind = kind, .state_dim = 2, .enc_dim = 3, .attn_dim = 4, .filters = 2,
                                .filter_width = 5});
    std::mt19937_64 rng(2);
    const Matrix h = gaussian(3, 7, rng);
    const auto out = att.attend(params, att.keys(params, h), Vector::Ones(2), Vector::Constant(7, 1.0 / 7), nullptr);
    for (Eigen::Index t = 0; t < 7; ++t) CHECK(out.alpha(t) == doctest::Approx(1.0 / 7).epsilon(1e-15));
    CHECK_THROWS_AS(att.attend(params, att.keys(params, h), Vector::Ones(3), Vector::Constant(7, 1.0 / 7), nullptr),
                    std::invalid_argument);
  }
}

TEST_CASE("attention gradients for both kinds") {
  for (auto kind : {AttentionKind::Content, AttentionKind::Location}) {
    ParamSet params;
    Attention att(params, "a", {.kind = kind, .state_dim = 2, .enc_dim = 3, .attn_dim = 4, .filters = 2,
                                .filter_width = 3});
    auto h_ref = params.add("h", 3, 5);
    auto s_ref = params.add("s", 2, 1);
    auto prev_ref = params.add("prev", 5, 1);
    params.init_gaussian(0.5, 11);
    std::mt19937_64 rng(12);
    const Vector probe_c = gaussian(3, 1, rng).col(0);
    const Vector probe_a = gaussian(5, 1, rng).col(0);
    auto loss = [&](const ParamSet& p, GradSet* g) {
      const auto keys = att.keys(p, p[h_ref]);
      Attention::Cache cache;
      const auto out = att.attend(p, keys, p[s_ref].col(0), p[prev_ref].col(0), &cache);
      if (g) {
        Matrix d_h = Matrix::Zero(3, 5);
        Matrix d_proj = Matrix::Zero(4, 5);
        Vector d_s, d_prev;
        att.attend_backward(p, keys, cache, probe_c, probe_a, *g, d_h, d_proj, d_s, d_prev);
        att.keys_backward(p, keys, d_proj, d_h, *g);
        (*g)[h_ref] += d_h;
        (*g)[s_ref] += d_s;
        (*g)[prev_ref] += d_prev;
      }
      return probe_c.dot(out.context) + probe_a.dot(out.alpha);
    };
    const auto report = nn::grad_check(params, loss, {.tolerance = 1e-5, .samples_per_param = 50});
    INFO(to_string(kind), " ", report.worst_param, " ", report.max_rel_error);
    CHECK(report.passed);
  }
}

TEST_CASE("lid head loss") {
  ParamSet params;
  LidHead head(params, "lid", 2);
  Matrix h(3, 2);
  h << 1.0, 0.0, 0.0, 1.0, -1.0, -1.0;
  CHECK(head.loss(params, h, {0, 1, 2}, 1.0, nullptr, nullptr) == doctest::Approx(std::log(3.0)).epsilon(1e-14));
  CHECK_THROWS_AS(head.loss(params, h, {0, 1}, 1.0, nullptr, nullptr), std::invalid_argument);

  // Weights that separate the three frames sharply.
  Matrix& w = params.value(params.find("lid.w"));
  w << 100.0, 0.0, 0.0, 100.0, -100.0, -100.0;
  CHECK(head.loss(params, h, {0, 1, 2}, 1.0, nullptr, nullptr) < 1e-30);

  auto h_ref = params.add("h", 3, 2);
  params.init_gaussian(0.5, 4);
  auto loss = [&](const ParamSet& p, GradSet* g) {
    Matrix d_h = Matrix::Zero(3, 2);
    const double l = head.loss(p, p[h_ref], {2, 0, 1}, 1.0, g, g ? &d_h : nullptr);
    if (g) (*g)[h_ref] += d_h;
    return l;
  };
  const auto report = nn::grad_check(params, loss, {.tolerance = 1e-5});
  CHECK(report.passed);
}

TEST_CASE("loss combination identities") {
  const auto eq4 = compute_losses(LossWeights::two_term(0.8), 1.0, 2.0, 0.0);
  CHECK(eq4.mtl == doctest::Approx(1.2).epsilon(1e-15));
  const auto w3 = LossWeights::three_term(0.8, 0.10);
  CHECK(w3.ctc == doctest::Approx(0.10).epsilon(1e-12));
  CHECK_THROWS_AS(compute_losses({0.5, 0.6, 0.0}, 1, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(compute_losses({1.2, -0.2, 0.0}, 1, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(LossWeights::three_term(0.8, 0.3), std::invalid_argument);

  // Three-term form at lid = 0 against the two-term form, on a real model.
  HybridModel model(tiny_config(AttentionKind::Location));
  model.init(0.1, 5);
  const auto corpus = toy_corpus(2, 6, 3, 6);
  const auto& ex = corpus.examples[0];
  GradSet g4(model.params()), g5(model.params());
  LossOptions o4{.weights = LossWeights::two_term(0.7)};
  LossOptions o5{.weights = LossWeights::three_term(0.7, 0.0)};
  const auto r4 = model.utterance_loss(ex, o4, &g4);
  const auto r5 = model.utterance_loss(ex, o5, &g5);
  CHECK(r4.losses.mtl == r5.losses.mtl);
  for (std::size_t i = 0; i < g4.size(); ++i) CHECK(g4.at(i) == g5.at(i));
}

TEST_CASE("attention-only weight leaves the CTC head without gradient") {
  HybridModel model(tiny_config(AttentionKind::Content));
  model.init(0.1, 7);
  const auto corpus = toy_corpus(1, 6, 3, 8);
  GradSet g(model.params());
  model.utterance_loss(corpus.examples[0], {.weights = LossWeights::two_term(1.0)}, &g);
  const auto& p = model.params();
  CHECK(g.at(p.find("ctc.w")).isZero(0.0));
  CHECK(g.at(p.find("ctc.b")).isZero(0.0));
  CHECK_FALSE(g.at(p.find("dec.out.w")).isZero(0.0));
}

TEST_CASE("decoder step returns a normalized distribution") {
  HybridModel model(tiny_config(AttentionKind::Location));
  model.init(0.1, 9);
  std::mt19937_64 rng(1);
  const auto keys = model.attention_keys(model.encode(gaussian(13, 3, rng)));
  DecoderState st = model.initial_state(keys);
  for (int tok : {0, 4, 3, 5}) {
    const Vector lp = model.decoder_step(keys, st, tok, &st);
    CHECK(std::abs(lp.array().exp().sum() - 1.0) <= 1e-9);
    CHECK(lp.size() == 6);
    CHECK(std::abs(st.alpha.sum() - 1.0) <= 1e-6);
    CHECK(st.alpha.minCoeff() >= 0.0);
  }
  CHECK_THROWS_AS(model.decoder_step(keys, st, 6, nullptr), std::out_of_range);
}

TEST_CASE("whole-model gradient check") {
  for (auto kind : {AttentionKind::Content, AttentionKind::Location}) {
    HybridModel model(tiny_config(kind));
    model.init(0.3, 21);
    const auto corpus = toy_corpus(1, 6, 3, 22);
    const Vector unigram = unigram_distribution({corpus.examples[0].target}, 6, 1);
    LossOptions opt{.weights = {0.5, 0.3, 0.2}, .label_smoothing = 0.1, .unigram = &unigram};
    auto loss = [&](const ParamSet&, GradSet* g) { return model.utterance_loss(corpus.examples[0], opt, g).losses.mtl; };
    const auto report = nn::grad_check(model.params(), loss, {.tolerance = 1e-4, .samples_per_param = 8});
    INFO(to_string(kind), " ", report.worst_param, " ", report.max_rel_error);
    CHECK(report.passed);
  }
}

TEST_CASE("scheduled sampling at probability zero equals teacher forcing") {
  HybridModel model(tiny_config(AttentionKind::Location));
  model.init(0.1, 3);
  const auto corpus = toy_corpus(1, 6, 3, 4);
  const auto a = model.utterance_loss(corpus.examples[0], {.sampling_prob = 0.0, .sampling_seed = 1}, nullptr);
  const auto b = model.utterance_loss(corpus.examples[0], {.sampling_prob = 0.0, .sampling_seed = 99}, nullptr);
  CHECK(a.losses.mtl == b.losses.mtl);
  const auto c = model.utterance_loss(corpus.examples[0], {.sampling_prob = 1.0, .sampling_seed = 1}, nullptr);
  CHECK(std::isfinite(c.losses.mtl));
}

namespace {

std::vector<StepRecord> overfit_run(int threads, int steps, std::vector<int>* decoded_ok = nullptr) {
  const int V = 7;
  auto corpus = toy_corpus(5, V, 4, 31);
  ModelConfig cfg = tiny_config(AttentionKind::Location, V);
  cfg.encoder = {.input_dim = 4, .hidden = 8, .layers = 2, .pool_before = {0, 1}};
  cfg.embed_dim = 6;
  cfg.decoder_hidden = 12;
  cfg.attention.attn_dim = 8;
  HybridModel model(cfg);
  model.init(0.1, 2);
  std::vector<std::vector<int>> targets;
  for (auto& e : corpus.examples) targets.push_back(e.target);
  TrainConfig tc;
  tc.weights = {0.7, 0.2, 0.1};
  tc.optimizer = {.lr_start = 2e-2, .lr_end = 2e-3, .total_steps = steps};
  tc.threads = threads;
  Trainer trainer(model, tc, unigram_distribution(targets, V, 1));
  std::vector<const Example*> batch;
  for (auto& e : corpus.examples) batch.push_back(&e);
  std::vector<StepRecord> trace;
  for (int s = 0; s < steps; ++s) trace.push_back(trainer.train_step(batch));
  if (decoded_ok) {
    for (auto& e : corpus.examples) {
      auto expect = e.target;
      expect.push_back(1);
      decoded_ok->push_back(model.teacher_forced_argmax(e.features, e.target) == expect);
    }
  }
  return trace;
}

}  // namespace

TEST_CASE("training overfits a toy set deterministically") {
  std::vector<int> ok;
  const auto trace = overfit_run(1, 150, &ok);
  std::vector<double> avg;
  for (std::size_t i = 10; i <= 50; ++i) {
    double s = 0.0;
    for (std::size_t k = i - 10; k < i; ++k) s += trace[k].losses.mtl;
    avg.push_back(s / 10.0);
  }
  for (std::size_t i = 1; i < avg.size(); ++i) CHECK(avg[i] < avg[i - 1]);
  CHECK(trace.back().losses.mtl < 0.1 * trace.front().losses.mtl);
  for (int v : ok) CHECK(v == 1);

  const auto again = overfit_run(3, 20);
  const auto single = overfit_run(1, 20);
  for (std::size_t i = 0; i < again.size(); ++i) {
    CHECK(again[i].losses.mtl == single[i].losses.mtl);
    CHECK(again[i].grad_norm == single[i].grad_norm);
  }
  CHECK(to_json_line(single[0]).find("\"L_mtl\"") != std::string::npos);
}

TEST_CASE("checkpoint round trip of the hybrid model") {
  HybridModel model(tiny_config(AttentionKind::Content));
  model.init(0.1, 1);
  const auto path = std::filesystem::temp_directory_path() / "csasr_hybrid.ckpt";
  model.save(path, {{"seed", "1"}});
  std::map<std::string, std::string> meta;
  const auto back = HybridModel::load(path, &meta);
  CHECK(meta.at("seed") == "1");
  CHECK(back.config().attention.kind == AttentionKind::Content);
  for (std::size_t i = 0; i < model.params().size(); ++i) CHECK(back.params().value(i) == model.params().value(i));
  std::filesystem::remove(path);
}
