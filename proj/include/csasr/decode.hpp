#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csasr/attnmodel.hpp"
#include "csasr/ctc.hpp"
#include "csasr/rnnlm.hpp"
#include "csasr/textproc.hpp"

namespace csasr {

// ---------------------------------------------------------------------------
// Lexicon

enum class WordStatus { Valid, ValidPrefix, Invalid };

std::string_view word_status_name(WordStatus s);

// Trie over English token-id sequences of dictionary words.
class WordTrie {
 public:
  // Each word is segmented with `bpe` (CharSubword) or split into letters
  // (CharChar). Words containing units outside the vocabulary are skipped.
  // Throws std::invalid_argument when no word can be inserted.
  static WordTrie build(std::span<const std::string> words, const Vocabulary& vocab, const BpeModel* bpe);
  // Builds directly from id sequences.
  static WordTrie from_sequences(const std::vector<std::vector<int>>& sequences);

  static constexpr int kRoot = 0;
  int child(int node, int token) const;  // -1 when absent
  bool terminal(int node) const { return nodes_[static_cast<std::size_t>(node)].terminal; }

  WordStatus lookup(std::span<const int> ids) const;
  std::size_t word_count() const { return words_; }

 private:
  struct Node {
    std::vector<std::pair<int, int>> children;  // (token, node), sorted
    bool terminal = false;
  };
  void insert(const std::vector<int>& ids);
  std::vector<Node> nodes_{Node{}};
  std::size_t words_ = 0;
};

// Token facts the search needs, detached from the full Vocabulary so toy
// inventories can be searched too.
struct SearchVocab {
  int size = 0;
  int sos = 0;
  int eos = 1;
  std::vector<TokenClass> classes;

  static SearchVocab from(const Vocabulary& vocab);
};

// In-progress English word: the trie node reached so far, or closed.
struct LexTracker {
  int node = -1;  // -1: no open word
  bool open() const { return node >= 0; }
};

// Status of the open word (closed trackers report Valid).
WordStatus word_validity(const LexTracker& tracker, const WordTrie& trie);
// Feeds one token. Returns nullopt when the token makes the running word
// invalid: a piece with no trie path, or a closer/word start while the open
// word is not a complete dictionary word.
std::optional<LexTracker> advance_tracker(const LexTracker& tracker, int token, const SearchVocab& vocab,
                                          const WordTrie& trie);
// True when every English word in `ids` (closed at the end) is in the trie.
bool all_words_valid(std::span<const int> ids, const SearchVocab& vocab, const WordTrie& trie);

// ---------------------------------------------------------------------------
// Scorers

struct ScorerState {
  virtual ~ScorerState() = default;
  nn::Vector log_probs;  // next-token distribution over the vocabulary
};
using ScorerStatePtr = std::shared_ptr<const ScorerState>;

// Left-to-right token scorer (attention decoder, LM, test tables).
class TokenScorer {
 public:
  virtual ~TokenScorer() = default;
  virtual ScorerStatePtr initial() const = 0;
  virtual ScorerStatePtr advance(const ScorerState& state, int token) const = 0;
};

class AttentionScorer : public TokenScorer {
 public:
  AttentionScorer(const HybridModel& model, const nn::Matrix& h);
  ScorerStatePtr initial() const override;
  ScorerStatePtr advance(const ScorerState& state, int token) const override;

 private:
  const HybridModel& model_;
  Attention::Keys keys_;
};

class LmScorer : public TokenScorer {
 public:
  explicit LmScorer(const RnnLm& lm) : lm_(lm) {}
  ScorerStatePtr initial() const override;
  ScorerStatePtr advance(const ScorerState& state, int token) const override;

 private:
  const RnnLm& lm_;
};

// ---------------------------------------------------------------------------
// Search

enum class Strategy { Basic, Decode1, Decode2 };

std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view name);

struct DecodeWeights {
  double lambda_dec = 0.8;    // attention share; CTC gets 1 - lambda_dec
  double lm_weight = 0.3;     // gamma
  double length_bonus = 0.1;  // per emitted non-eos token
};

struct SearchOptions {
  int beam = 10;
  int max_len = -1;  // non-eos tokens; -1 uses the lattice length
  int nbest = 5;
  DecodeWeights weights;
  Strategy strategy = Strategy::Basic;
};

struct Hypothesis {
  std::vector<int> tokens;  // without sos and eos
  double score = kNegInf;
  double att = 0.0;
  double ctc = 0.0;  // prefix (then complete) CTC log-probability
  double lm = 0.0;
};

struct DecodeResult {
  std::vector<Hypothesis> nbest;  // best first
  bool fallback = false;          // Decode1 found no lexicon-valid hypothesis
  bool unfinished = false;        // no hypothesis reached eos; best live returned
};

// Label-synchronous joint search. `ctc` may be null only when
// lambda_dec == 1; `lm` may be null when lm_weight == 0; `trie` is required
// for Decode1 and Decode2.
DecodeResult joint_beam_search(const TokenScorer& att, const CtcPrefixScorer* ctc, const TokenScorer* lm,
                               const SearchVocab& vocab, const WordTrie* trie, const SearchOptions& options);

// Combined score of one complete hypothesis, computed without search.
Hypothesis score_complete(const TokenScorer& att, const PosteriorLattice* lattice, const TokenScorer* lm,
                          const SearchVocab& vocab, std::span<const int> tokens, const DecodeWeights& weights);

// Encodes the features and runs the search with the model's heads.
DecodeResult decode_utterance(const HybridModel& model, const RnnLm* lm, const Vocabulary& vocab,
                              const WordTrie* trie, const nn::Matrix& features, const SearchOptions& options);

// N-best TSV: id, rank, score, att, ctc, lm, sentence, tokens (space-joined surfaces).
void write_nbest_header(std::ostream& out);
void write_nbest(std::ostream& out, const std::string& id, const DecodeResult& result, const Vocabulary& vocab);

struct NbestEntry {
  std::string id;
  int rank = 0;
  double score = 0, att = 0, ctc = 0, lm = 0;
  std::string sentence;
  std::vector<std::string> tokens;
};
std::vector<NbestEntry> read_nbest(std::istream& in);

}  // namespace csasr
