#include "csasr/decode.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace csasr {

// ---------------------------------------------------------------------------
// Lexicon

std::string_view word_status_name(WordStatus s) {
  switch (s) {
    case WordStatus::Valid:
      return "valid";
    case WordStatus::ValidPrefix:
      return "valid_prefix";
    case WordStatus::Invalid:
      break;
  }
  return "invalid";
}

int WordTrie::child(int node, int token) const {
  const auto& ch = nodes_[static_cast<std::size_t>(node)].children;
  auto it = std::lower_bound(ch.begin(), ch.end(), std::make_pair(token, -1));
  return it != ch.end() && it->first == token ? it->second : -1;
}

void WordTrie::insert(const std::vector<int>& ids) {
  int node = kRoot;
  for (int tok : ids) {
    int next = child(node, tok);
    if (next < 0) {
      next = static_cast<int>(nodes_.size());
      nodes_.emplace_back();
      auto& ch = nodes_[static_cast<std::size_t>(node)].children;
      ch.insert(std::lower_bound(ch.begin(), ch.end(), std::make_pair(tok, -1)), {tok, next});
    }
    node = next;
  }
  if (!nodes_[static_cast<std::size_t>(node)].terminal) {
    nodes_[static_cast<std::size_t>(node)].terminal = true;
    ++words_;
  }
}

WordTrie WordTrie::from_sequences(const std::vector<std::vector<int>>& sequences) {
  WordTrie trie;
  for (const auto& s : sequences) {
    if (!s.empty()) trie.insert(s);
  }
  if (trie.words_ == 0) throw std::invalid_argument("word dictionary is empty");
  return trie;
}

WordTrie WordTrie::build(std::span<const std::string> words, const Vocabulary& vocab, const BpeModel* bpe) {
  if (vocab.mode() == UnitMode::CharSubword && bpe == nullptr) {
    throw std::invalid_argument("subword dictionary needs a BPE model");
  }
  std::vector<std::vector<int>> seqs;
  for (const auto& w : words) {
    if (w.empty()) continue;
    std::vector<std::string> units;
    if (vocab.mode() == UnitMode::CharSubword) {
      units = segment_word(*bpe, w);
    } else {
      for (char c : w) units.emplace_back(1, c);
    }
    std::vector<int> ids;
    bool ok = true;
    for (const auto& u : units) {
      const auto id = vocab.find(u);
      if (!id || *id == vocab.unk()) {
        ok = false;
        break;
      }
      ids.push_back(*id);
    }
    if (ok) seqs.push_back(std::move(ids));
  }
  return from_sequences(seqs);
}

WordStatus WordTrie::lookup(std::span<const int> ids) const {
  int node = kRoot;
  for (int tok : ids) {
    node = child(node, tok);
    if (node < 0) return WordStatus::Invalid;
  }
  if (ids.empty()) return WordStatus::ValidPrefix;
  return terminal(node) ? WordStatus::Valid : WordStatus::ValidPrefix;
}

SearchVocab SearchVocab::from(const Vocabulary& vocab) {
  SearchVocab v;
  v.size = vocab.size();
  v.sos = vocab.sos();
  v.eos = vocab.eos();
  for (int i = 0; i < vocab.size(); ++i) v.classes.push_back(vocab.token_class(i));
  return v;
}

WordStatus word_validity(const LexTracker& tracker, const WordTrie& trie) {
  if (!tracker.open() || trie.terminal(tracker.node)) return WordStatus::Valid;
  return WordStatus::ValidPrefix;
}

std::optional<LexTracker> advance_tracker(const LexTracker& tracker, int token, const SearchVocab& vocab,
                                          const WordTrie& trie) {
  const TokenClass cls = vocab.classes.at(static_cast<std::size_t>(token));
  if (cls != TokenClass::WordPiece && tracker.open() && !trie.terminal(tracker.node)) return std::nullopt;
  switch (cls) {
    case TokenClass::Closer:
      return LexTracker{};
    case TokenClass::WordStart: {
      const int node = trie.child(WordTrie::kRoot, token);
      if (node < 0) return std::nullopt;
      return LexTracker{node};
    }
    case TokenClass::WordPiece: {
      const int node = trie.child(tracker.open() ? tracker.node : WordTrie::kRoot, token);
      if (node < 0) return std::nullopt;
      return LexTracker{node};
    }
  }
  return std::nullopt;
}

bool all_words_valid(std::span<const int> ids, const SearchVocab& vocab, const WordTrie& trie) {
  LexTracker tr;
  for (int tok : ids) {
    auto next = advance_tracker(tr, tok, vocab, trie);
    if (!next) return false;
    tr = *next;
  }
  return word_validity(tr, trie) == WordStatus::Valid;
}

// ---------------------------------------------------------------------------
// Scorers

namespace {

struct AttState : ScorerState {
  DecoderState dec;
};

struct LmScorerState : ScorerState {
  LmState lm;
};

}  // namespace

AttentionScorer::AttentionScorer(const HybridModel& model, const nn::Matrix& h)
    : model_(model), keys_(model.attention_keys(h)) {}

ScorerStatePtr AttentionScorer::initial() const {
  auto s = std::make_shared<AttState>();
  s->log_probs = model_.decoder_step(keys_, model_.initial_state(keys_), model_.sos(), &s->dec);
  return s;
}

ScorerStatePtr AttentionScorer::advance(const ScorerState& state, int token) const {
  const auto& prev = static_cast<const AttState&>(state);
  auto s = std::make_shared<AttState>();
  s->log_probs = model_.decoder_step(keys_, prev.dec, token, &s->dec);
  return s;
}

ScorerStatePtr LmScorer::initial() const {
  auto s = std::make_shared<LmScorerState>();
  s->lm = lm_.initial_state();
  s->log_probs = s->lm.log_probs;
  return s;
}

ScorerStatePtr LmScorer::advance(const ScorerState& state, int token) const {
  const auto& prev = static_cast<const LmScorerState&>(state);
  auto s = std::make_shared<LmScorerState>();
  s->lm = lm_.advance(prev.lm, token);
  s->log_probs = s->lm.log_probs;
  return s;
}

// ---------------------------------------------------------------------------
// Search

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Basic:
      return "basic";
    case Strategy::Decode1:
      return "decode1";
    case Strategy::Decode2:
      break;
  }
  return "decode2";
}

Strategy parse_strategy(std::string_view name) {
  if (name == "basic") return Strategy::Basic;
  if (name == "decode1") return Strategy::Decode1;
  if (name == "decode2") return Strategy::Decode2;
  throw std::invalid_argument("unknown strategy '" + std::string(name) + "'");
}

namespace {

struct Live {
  Hypothesis hyp;
  ScorerStatePtr att, lm;
  std::shared_ptr<const CtcPrefixScorer::State> ctc;
  LexTracker tracker;
};

struct Candidate {
  std::size_t parent;
  int token;
  double score, att, ctc, lm;
  LexTracker tracker;
};

// Higher score first; equal scores fall back to token-id order.
bool better(double sa, std::span<const int> a, double sb, std::span<const int> b) {
  if (sa != sb) return sa > sb;
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

void sort_hyps(std::vector<Hypothesis>& hyps) {
  std::sort(hyps.begin(), hyps.end(),
            [](const Hypothesis& a, const Hypothesis& b) { return better(a.score, a.tokens, b.score, b.tokens); });
}

}  // namespace

DecodeResult joint_beam_search(const TokenScorer& att, const CtcPrefixScorer* ctc, const TokenScorer* lm,
                               const SearchVocab& vocab, const WordTrie* trie, const SearchOptions& opt) {
  const auto& w = opt.weights;
  if (opt.beam < 1) throw std::invalid_argument("beam size must be at least 1");
  if (!(w.lambda_dec >= 0.0 && w.lambda_dec <= 1.0)) throw std::invalid_argument("lambda_dec must lie in [0, 1]");
  const bool use_ctc = w.lambda_dec < 1.0;
  const bool use_lm = w.lm_weight != 0.0;
  if (use_ctc && ctc == nullptr) throw std::invalid_argument("CTC weight is non-zero but no CTC scorer was given");
  if (use_lm && lm == nullptr) throw std::invalid_argument("LM weight is non-zero but no LM was given");
  if (opt.strategy != Strategy::Basic && trie == nullptr) throw std::invalid_argument("lexicon strategies need a trie");
  int max_len = opt.max_len;
  if (max_len < 0) {
    if (ctc == nullptr) throw std::invalid_argument("max_len is required without a CTC lattice");
    max_len = ctc->lattice().frames();
  }
  const bool prune = opt.strategy == Strategy::Decode2;

  std::vector<Live> live(1);
  live[0].hyp.score = 0.0;
  live[0].att = att.initial();
  if (use_ctc) live[0].ctc = std::make_shared<const CtcPrefixScorer::State>(ctc->initial());
  if (use_lm) live[0].lm = lm->initial();

  std::vector<Hypothesis> finals;
  Hypothesis last_live_best;
  std::vector<int> seq_a, seq_b;
  while (!live.empty()) {
    std::vector<Candidate> cands;
    for (std::size_t p = 0; p < live.size(); ++p) {
      const Live& L = live[p];
      const bool at_cap = static_cast<int>(L.hyp.tokens.size()) >= max_len;
      nn::Vector ctc_ext;
      if (use_ctc) ctc_ext = ctc->extension_scores(*L.ctc);
      for (int tok = 0; tok < vocab.size; ++tok) {
        if (tok == vocab.sos || (at_cap && tok != vocab.eos)) continue;
        Candidate c{p, tok, 0.0, L.hyp.att + L.att->log_probs(tok), 0.0, 0.0, L.tracker};
        if (use_ctc) c.ctc = ctc_ext(tok);
        if (use_lm) c.lm = L.hyp.lm + L.lm->log_probs(tok);
        const auto emitted = static_cast<double>(L.hyp.tokens.size() + (tok == vocab.eos ? 0 : 1));
        c.score = w.lambda_dec * c.att + w.length_bonus * emitted;
        if (use_ctc) c.score += (1.0 - w.lambda_dec) * c.ctc;
        if (use_lm) c.score += w.lm_weight * c.lm;
        if (std::isnan(c.score)) throw NumericError("NaN hypothesis score during search");
        if (c.score == kNegInf) continue;
        if (prune) {
          auto tr = advance_tracker(L.tracker, tok, vocab, *trie);
          if (!tr) continue;
          c.tracker = *tr;
        }
        cands.push_back(c);
      }
    }
    auto seq_of = [&](const Candidate& c, std::vector<int>& out) {
      out = live[c.parent].hyp.tokens;
      out.push_back(c.token);
    };
    const std::size_t keep = std::min<std::size_t>(cands.size(), static_cast<std::size_t>(opt.beam));
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [&](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        seq_of(a, seq_a);
                        seq_of(b, seq_b);
                        return std::lexicographical_compare(seq_a.begin(), seq_a.end(), seq_b.begin(), seq_b.end());
                      });
    cands.resize(keep);

    std::vector<Live> next;
    for (const auto& c : cands) {
      const Live& P = live[c.parent];
      Hypothesis h{P.hyp.tokens, c.score, c.att, c.ctc, c.lm};
      if (c.token == vocab.eos) {
        finals.push_back(std::move(h));
        continue;
      }
      h.tokens.push_back(c.token);
      Live L;
      L.hyp = std::move(h);
      L.att = att.advance(*P.att, c.token);
      if (use_ctc) L.ctc = std::make_shared<const CtcPrefixScorer::State>(ctc->extend(*P.ctc, c.token));
      if (use_lm) L.lm = lm->advance(*P.lm, c.token);
      L.tracker = c.tracker;
      next.push_back(std::move(L));
    }
    if (!next.empty()) last_live_best = next.front().hyp;
    live = std::move(next);
  }

  DecodeResult result;
  sort_hyps(finals);
  if (finals.empty()) {
    result.unfinished = true;
    if (trie && opt.strategy != Strategy::Basic) {
      // Cut a trailing partial word so lexicon-constrained output stays valid.
      LexTracker tr;
      std::size_t keep_len = 0;
      for (std::size_t k = 0; k < last_live_best.tokens.size(); ++k) {
        auto next = advance_tracker(tr, last_live_best.tokens[k], vocab, *trie);
        if (!next) break;
        tr = *next;
        if (word_validity(tr, *trie) == WordStatus::Valid) keep_len = k + 1;
      }
      last_live_best.tokens.resize(keep_len);
    }
    result.nbest.push_back(last_live_best);
    return result;
  }
  std::vector<Hypothesis> chosen;
  if (opt.strategy == Strategy::Decode1) {
    for (const auto& h : finals) {
      if (all_words_valid(h.tokens, vocab, *trie)) chosen.push_back(h);
    }
    if (chosen.empty()) {
      result.fallback = true;
      chosen = finals;
    }
  } else {
    chosen = std::move(finals);
  }
  if (opt.nbest > 0 && chosen.size() > static_cast<std::size_t>(opt.nbest)) chosen.resize(static_cast<std::size_t>(opt.nbest));
  result.nbest = std::move(chosen);
  return result;
}

Hypothesis score_complete(const TokenScorer& att, const PosteriorLattice* lattice, const TokenScorer* lm,
                          const SearchVocab& vocab, std::span<const int> tokens, const DecodeWeights& w) {
  Hypothesis h;
  h.tokens.assign(tokens.begin(), tokens.end());
  auto st = att.initial();
  for (int t : tokens) {
    h.att += st->log_probs(t);
    st = att.advance(*st, t);
  }
  h.att += st->log_probs(vocab.eos);
  h.score = w.lambda_dec * h.att + w.length_bonus * static_cast<double>(tokens.size());
  if (w.lambda_dec < 1.0) {
    if (!lattice) throw std::invalid_argument("CTC weight is non-zero but no lattice was given");
    h.ctc = ctc_loss(*lattice, tokens).log_likelihood;
    h.score += (1.0 - w.lambda_dec) * h.ctc;
  }
  if (w.lm_weight != 0.0) {
    if (!lm) throw std::invalid_argument("LM weight is non-zero but no LM was given");
    auto ls = lm->initial();
    for (int t : tokens) {
      h.lm += ls->log_probs(t);
      ls = lm->advance(*ls, t);
    }
    h.lm += ls->log_probs(vocab.eos);
    h.score += w.lm_weight * h.lm;
  }
  return h;
}

DecodeResult decode_utterance(const HybridModel& model, const RnnLm* lm, const Vocabulary& vocab, const WordTrie* trie,
                              const nn::Matrix& features, const SearchOptions& options) {
  if (model.config().vocab_size != vocab.size()) throw DataError("model and vocabulary sizes differ");
  if (lm && lm->config().vocab_size != vocab.size()) throw DataError("LM and vocabulary sizes differ");
  const nn::Matrix h = model.encode(features);
  const PosteriorLattice lattice = model.ctc_lattice(h);
  const CtcPrefixScorer ctc(lattice, vocab.eos());
  const AttentionScorer att(model, h);
  std::optional<LmScorer> lms;
  if (lm) lms.emplace(*lm);
  return joint_beam_search(att, &ctc, lms ? &*lms : nullptr, SearchVocab::from(vocab), trie, options);
}

// ---------------------------------------------------------------------------
// N-best files

void write_nbest_header(std::ostream& out) { out << "id\trank\tscore\tatt\tctc\tlm\tsentence\ttokens\n"; }

void write_nbest(std::ostream& out, const std::string& id, const DecodeResult& result, const Vocabulary& vocab) {
  int rank = 1;
  std::ostringstream line;
  line.precision(17);
  for (const auto& h : result.nbest) {
    line.str("");
    line << id << '\t' << rank++ << '\t' << h.score << '\t' << h.att << '\t' << h.ctc << '\t' << h.lm << '\t'
         << detokenize(vocab, h.tokens) << '\t';
    for (std::size_t i = 0; i < h.tokens.size(); ++i) line << (i ? " " : "") << vocab.token(h.tokens[i]).surface;
    out << line.str() << '\n';
  }
}

std::vector<NbestEntry> read_nbest(std::istream& in) {
  std::vector<NbestEntry> out;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.rfind("id\t", 0) == 0) continue;
    std::vector<std::string> f;
    std::size_t pos = 0;
    while (true) {
      const auto tab = line.find('\t', pos);
      f.push_back(line.substr(pos, tab == std::string::npos ? std::string::npos : tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    if (f.size() != 8) throw DataError("n-best line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
    NbestEntry e;
    try {
      e.id = f[0];
      e.rank = std::stoi(f[1]);
      e.score = std::stod(f[2]);
      e.att = std::stod(f[3]);
      e.ctc = std::stod(f[4]);
      e.lm = std::stod(f[5]);
    } catch (const std::exception&) {
      throw DataError("n-best line " + std::to_string(lineno) + " has a malformed number");
    }
    e.sentence = f[6];
    std::istringstream toks(f[7]);
    for (std::string t; toks >> t;) e.tokens.push_back(t);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace csasr
