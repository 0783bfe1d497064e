#include <cmath>
#include <random>
#include <sstream>

#include "csasr/decode.hpp"
#include "doctest.h"

using namespace csasr;
using nn::Matrix;
using nn::Vector;

namespace {

// Deterministic pseudo-random next-token distributions keyed by the prefix.
class TableScorer : public TokenScorer {
 public:
  TableScorer(int vocab, std::uint64_t salt, double spread = 1.5) : vocab_(vocab), salt_(salt), spread_(spread) {}

  struct State : ScorerState {
    std::vector<int> prefix;
  };

  ScorerStatePtr initial() const override { return make({}); }
  ScorerStatePtr advance(const ScorerState& s, int token) const override {
    auto p = static_cast<const State&>(s).prefix;
    p.push_back(token);
    return make(p);
  }

 private:
  ScorerStatePtr make(std::vector<int> prefix) const {
    std::uint64_t h = salt_;
    for (int t : prefix) h = h * 1000003ULL + static_cast<std::uint64_t>(t) + 7;
    std::mt19937_64 rng(h);
    std::normal_distribution<double> d(0.0, spread_);
    Vector logits(vocab_);
    for (int i = 0; i < vocab_; ++i) logits(i) = d(rng);
    auto s = std::make_shared<State>();
    s->prefix = std::move(prefix);
    s->log_probs = nn::log_softmax(logits);
    return s;
  }
  int vocab_;
  std::uint64_t salt_;
  double spread_;
};

PosteriorLattice random_lattice(int T, int V, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.5);
  Matrix m(T, V + 1);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return PosteriorLattice::from_logits(m);
}

SearchVocab toy_vocab(int labels) {
  SearchVocab v;
  v.size = 2 + labels;
  v.classes.assign(static_cast<std::size_t>(v.size), TokenClass::Closer);
  return v;
}

void enumerate(int lo, int hi, int max_len, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
  out.push_back(cur);
  if (static_cast<int>(cur.size()) == max_len) return;
  for (int k = lo; k < hi; ++k) {
    cur.push_back(k);
    enumerate(lo, hi, max_len, cur, out);
    cur.pop_back();
  }
}

Hypothesis brute_force(const TokenScorer& att, const PosteriorLattice& lat, const TokenScorer* lm,
                       const SearchVocab& v, int max_len, const DecodeWeights& w) {
  std::vector<int> cur;
  std::vector<std::vector<int>> all;
  enumerate(2, v.size, max_len, cur, all);
  Hypothesis best;
  for (const auto& seq : all) {
    const auto h = score_complete(att, &lat, lm, v, seq, w);
    if (!std::isfinite(h.score)) continue;
    if (h.score > best.score || (h.score == best.score && seq < best.tokens)) best = h;
  }
  return best;
}

// Vocabulary {sos, eos, 中, _a, _b, c}; dictionary words "_a c" and "_b".
struct LexToy {
  SearchVocab vocab;
  WordTrie trie = WordTrie::from_sequences({{3, 5}, {4}});
  LexToy() {
    vocab.size = 6;
    vocab.classes = {TokenClass::Closer,    TokenClass::Closer,    TokenClass::Closer,
                     TokenClass::WordStart, TokenClass::WordStart, TokenClass::WordPiece};
  }
};

}  // namespace

TEST_CASE("word trie over subword ids") {
  const auto bpe = BpeModel::from_parts({}, {"_", "e", "i", "k", "l", "_l", "_li", "ke"});
  CHECK(segment_word(bpe, "like") == std::vector<std::string>{"_li", "ke"});
  const auto vocab = Vocabulary::build(UnitMode::CharSubword, false, {}, &bpe);
  const std::vector<std::string> words{"like", "like"};
  const auto trie = WordTrie::build(words, vocab, &bpe);
  CHECK(trie.word_count() == 1);
  const int li = *vocab.find("_li"), ke = *vocab.find("ke");
  CHECK(trie.lookup(std::vector<int>{li}) == WordStatus::ValidPrefix);
  CHECK(trie.lookup(std::vector<int>{li, ke}) == WordStatus::Valid);
  CHECK(trie.lookup(std::vector<int>{ke}) == WordStatus::Invalid);
  CHECK(trie.lookup(std::vector<int>{}) == WordStatus::ValidPrefix);
  const std::vector<std::string> none;
  CHECK_THROWS_AS(WordTrie::build(none, vocab, &bpe), std::invalid_argument);
}

TEST_CASE("word trie over letters and tracker rules") {
  const auto vocab = Vocabulary::build(UnitMode::CharChar, false, {"我"});
  const std::vector<std::string> words{"ok", "okay"};
  const auto trie = WordTrie::build(words, vocab, nullptr);
  const auto sv = SearchVocab::from(vocab);
  auto ids = [&](const std::string& s) {
    std::vector<int> out;
    for (char c : s) out.push_back(*vocab.find(std::string(1, c)));
    return out;
  };
  const int space = *vocab.space(), wo = *vocab.find("我");
  CHECK(trie.lookup(ids("ok")) == WordStatus::Valid);
  CHECK(trie.lookup(ids("oka")) == WordStatus::ValidPrefix);
  CHECK(trie.lookup(ids("kay")) == WordStatus::Invalid);

  auto seq = ids("ok");
  seq.push_back(space);
  for (int t : ids("okay")) seq.push_back(t);
  seq.push_back(wo);
  CHECK(all_words_valid(seq, sv, trie));
  auto bad = ids("oka");
  bad.push_back(wo);
  CHECK_FALSE(all_words_valid(bad, sv, trie));
  CHECK_FALSE(all_words_valid(ids("oka"), sv, trie));  // open word at the end must be complete

  LexTracker tr;
  CHECK(word_validity(tr, trie) == WordStatus::Valid);
  tr = *advance_tracker(tr, ids("o")[0], sv, trie);
  CHECK(word_validity(tr, trie) == WordStatus::ValidPrefix);
  CHECK_FALSE(advance_tracker(tr, space, sv, trie).has_value());
  CHECK_FALSE(advance_tracker(tr, ids("z")[0], sv, trie).has_value());
}

TEST_CASE("exhaustive beam equals brute-force argmax") {
  std::mt19937_64 rng(4242);
  int agree = 0;
  for (int n = 0; n < 50; ++n) {
    const int labels = 1 + static_cast<int>(rng() % 3);
    const int T = 1 + static_cast<int>(rng() % 4);
    const auto v = toy_vocab(labels);
    const TableScorer att(v.size, rng());
    const TableScorer lm(v.size, rng(), 1.0);
    const auto lat = random_lattice(T, v.size, rng);
    const CtcPrefixScorer ctc(lat, v.eos);
    SearchOptions opt;
    opt.beam = 1000;
    opt.max_len = 3;
    opt.weights = {0.2 + 0.2 * static_cast<double>(rng() % 4), (n % 2) ? 0.3 : 0.0, 0.1};
    const auto res = joint_beam_search(att, &ctc, &lm, v, nullptr, opt);
    const auto oracle = brute_force(att, lat, &lm, v, 3, opt.weights);
    REQUIRE_FALSE(res.nbest.empty());
    const bool same = res.nbest[0].tokens == oracle.tokens && std::abs(res.nbest[0].score - oracle.score) <= 1e-9;
    CHECK(same);
    agree += same;
  }
  CHECK(agree == 50);
}

TEST_CASE("search invariants") {
  std::mt19937_64 rng(99);
  for (int n = 0; n < 20; ++n) {
    const auto v = toy_vocab(3);
    const TableScorer att(v.size, rng());
    const TableScorer lm(v.size, rng(), 1.0);
    const auto lat = random_lattice(4, v.size, rng);
    const CtcPrefixScorer ctc(lat, v.eos);
    SearchOptions opt;
    opt.max_len = 3;
    opt.beam = 2;
    const auto small = joint_beam_search(att, &ctc, &lm, v, nullptr, opt);
    opt.beam = 1000;
    const auto full = joint_beam_search(att, &ctc, &lm, v, nullptr, opt);
    // An exhaustive beam is never beaten by a narrower one.
    CHECK(full.nbest[0].score >= small.nbest[0].score);
    // Scores are the sum of per-step increments.
    for (const auto& h : full.nbest) {
      CHECK(std::abs(score_complete(att, &lat, &lm, v, h.tokens, opt.weights).score - h.score) <= 1e-9);
    }
    for (std::size_t i = 1; i < full.nbest.size(); ++i) CHECK(full.nbest[i - 1].score >= full.nbest[i].score);
    // Determinism.
    const auto again = joint_beam_search(att, &ctc, &lm, v, nullptr, opt);
    REQUIRE(again.nbest.size() == full.nbest.size());
    for (std::size_t i = 0; i < again.nbest.size(); ++i) {
      CHECK(again.nbest[i].tokens == full.nbest[i].tokens);
      CHECK(again.nbest[i].score == full.nbest[i].score);
    }

    // lambda_dec = 1 and gamma = 0 ignore the CTC lattice and the LM entirely.
    opt.beam = 3;
    opt.weights = {1.0, 0.0, 0.1};
    const auto pure = joint_beam_search(att, nullptr, nullptr, v, nullptr, opt);
    const auto with = joint_beam_search(att, &ctc, &lm, v, nullptr, opt);
    CHECK(pure.nbest[0].tokens == with.nbest[0].tokens);
    CHECK(pure.nbest[0].score == with.nbest[0].score);
  }
}

TEST_CASE("lexicon strategies") {
  const LexToy toy;
  std::mt19937_64 rng(7);
  int fallbacks = 0;
  for (int n = 0; n < 200; ++n) {
    const TableScorer att(toy.vocab.size, rng(), 2.5);
    const auto lat = random_lattice(5, toy.vocab.size, rng);
    const CtcPrefixScorer ctc(lat, toy.vocab.eos);
    SearchOptions opt;
    opt.beam = 3;
    opt.max_len = 4;
    opt.weights.lm_weight = 0.0;

    opt.strategy = Strategy::Decode2;
    const auto d2 = joint_beam_search(att, &ctc, nullptr, toy.vocab, &toy.trie, opt);
    for (const auto& h : d2.nbest) CHECK(all_words_valid(h.tokens, toy.vocab, toy.trie));

    opt.strategy = Strategy::Decode1;
    const auto d1 = joint_beam_search(att, &ctc, nullptr, toy.vocab, &toy.trie, opt);
    if (d1.fallback) {
      ++fallbacks;
    } else {
      for (const auto& h : d1.nbest) CHECK(all_words_valid(h.tokens, toy.vocab, toy.trie));
    }

    opt.strategy = Strategy::Basic;
    const auto basic = joint_beam_search(att, &ctc, nullptr, toy.vocab, &toy.trie, opt);
    if (d1.fallback) CHECK(d1.nbest[0].tokens == basic.nbest[0].tokens);
  }
  CHECK(fallbacks < 200);
  SearchOptions opt;
  opt.strategy = Strategy::Decode2;
  opt.max_len = 3;
  const TableScorer att(toy.vocab.size, 1);
  CHECK_THROWS_AS(joint_beam_search(att, nullptr, nullptr, toy.vocab, nullptr, opt), std::invalid_argument);
}

TEST_CASE("unfinished Decode2 output drops a trailing partial word") {
  const LexToy toy;
  struct Fixed : TokenScorer {
    ScorerStatePtr initial() const override {
      auto s = std::make_shared<ScorerState>();
      s->log_probs = Vector::Constant(6, -20.0);
      s->log_probs(3) = -0.01;  // always prefers "_a"
      return s;
    }
    ScorerStatePtr advance(const ScorerState&, int) const override { return initial(); }
  } att;
  SearchOptions opt;
  opt.strategy = Strategy::Decode2;
  opt.beam = 1;
  opt.max_len = 1;
  opt.weights.lambda_dec = 1.0;
  opt.weights.lm_weight = 0.0;
  const auto r = joint_beam_search(att, nullptr, nullptr, toy.vocab, &toy.trie, opt);
  CHECK(r.unfinished);
  REQUIRE(r.nbest.size() == 1);
  CHECK(r.nbest[0].tokens.empty());
  opt.strategy = Strategy::Basic;
  CHECK(joint_beam_search(att, nullptr, nullptr, toy.vocab, &toy.trie, opt).nbest[0].tokens.size() <= 1);
}

TEST_CASE("decode a real model and round-trip the n-best file") {
  const auto vocab = Vocabulary::build(UnitMode::CharChar, false, {"我", "你"});
  ModelConfig cfg;
  cfg.encoder = {.input_dim = 3, .hidden = 4, .layers = 2, .pool_before = {0, 1}};
  cfg.vocab_size = vocab.size();
  cfg.embed_dim = 4;
  cfg.decoder_hidden = 6;
  cfg.attention.attn_dim = 4;
  HybridModel model(cfg);
  model.init(0.1, 3);
  RnnLm lm(LmConfig{.vocab_size = vocab.size(), .embed_dim = 4, .hidden = 5, .layers = 1});
  lm.params().init_gaussian(0.1, 4);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d;
  Matrix feats(20, 3);
  for (Eigen::Index i = 0; i < feats.size(); ++i) feats.data()[i] = d(rng);
  SearchOptions opt;
  opt.beam = 4;
  opt.nbest = 3;
  const auto res = decode_utterance(model, &lm, vocab, nullptr, feats, opt);
  REQUIRE_FALSE(res.nbest.empty());
  CHECK(res.nbest.size() <= 3);
  CHECK(static_cast<int>(res.nbest[0].tokens.size()) <= 5);

  std::stringstream ss;
  write_nbest_header(ss);
  write_nbest(ss, "utt-1", res, vocab);
  const auto back = read_nbest(ss);
  REQUIRE(back.size() == res.nbest.size());
  CHECK(back[0].id == "utt-1");
  CHECK(back[0].rank == 1);
  CHECK(back[0].score == res.nbest[0].score);
  CHECK(back[0].tokens.size() == res.nbest[0].tokens.size());
  CHECK(back[0].sentence == detokenize(vocab, res.nbest[0].tokens));
}
