#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "csasr/attnmodel.hpp"
#include "csasr/config.hpp"
#include "csasr/decode.hpp"
#include "csasr/rnnlm.hpp"
#include "csasr/score.hpp"
#include "csasr/synthdata.hpp"
#include "csasr/textproc.hpp"

namespace csasr {

CorpusSpec corpus_spec(const ExperimentConfig& config);
nn::EncoderConfig encoder_config(const ExperimentConfig& config);
ModelConfig model_config(const ExperimentConfig& config, int vocab_size);
TrainConfig train_config(const ExperimentConfig& config, std::int64_t total_steps);
SearchOptions search_options(const ExperimentConfig& config);

struct UnitInventory {
  std::optional<BpeModel> bpe;  // CharSubword only
  Vocabulary vocab;
  const BpeModel* bpe_ptr() const { return bpe ? &*bpe : nullptr; }
};

BpeModel train_units_bpe(const ExperimentConfig& config, const std::vector<Utterance>& train);
UnitInventory build_units(const ExperimentConfig& config, const std::vector<Utterance>& train,
                          std::optional<BpeModel> bpe);

struct ExampleSet {
  std::vector<std::string> ids;
  std::vector<std::string> transcripts;
  std::vector<Example> examples;
  std::size_t unk_tokens = 0;
};

// Token targets and pooled frame LID labels for each utterance.
ExampleSet make_examples(const std::vector<Utterance>& utts, const UnitInventory& units,
                         const nn::EncoderConfig& encoder);

struct EpochSummary {
  int epoch = 0;
  LossBundle mean;  // over steps
  int infeasible = 0;
  double seconds = 0.0;
};

// Shuffled mini-batch training. Batch order depends only on the seed.
void train_asr(HybridModel& model, const ExampleSet& train, const ExperimentConfig& config,
               const std::function<void(const StepRecord&)>& on_step = {},
               const std::function<void(const EpochSummary&)>& on_epoch = {});

RnnLm train_lm(const ExampleSet& train, const ExampleSet& dev, int vocab_size, const ExperimentConfig& config,
               const std::function<void(const LmEpochRecord&)>& on_epoch = {});

// Per-utterance decoding spread over `threads` workers; output order follows input.
std::vector<DecodeResult> decode_set(const HybridModel& model, const RnnLm* lm, const UnitInventory& units,
                                     const WordTrie* trie, const ExampleSet& set, const SearchOptions& options,
                                     int threads);

// Reference tokens for TER with LID tokens dropped.
std::vector<std::string> scoring_tokens(const Vocabulary& vocab, std::span<const int> ids);

ScoreReport score_decodes(const ExampleSet& set, const std::vector<DecodeResult>& results,
                          const UnitInventory& units);

// Every closed English word of every top hypothesis is in the dictionary.
struct LexiconAudit {
  std::size_t utterances = 0;
  std::size_t fallbacks = 0;
  std::size_t invalid_outputs = 0;           // top hypotheses with an invalid word, fallbacks excluded
  std::size_t invalid_outputs_fallback = 0;  // same, among fallbacks
};
LexiconAudit audit_lexicon(const std::vector<DecodeResult>& results, const SearchVocab& vocab, const WordTrie& trie);

struct SplitScores {
  ScoreReport train, dev, test;
};

// Whole in-memory pipeline: corpus, units, training, decoding and scoring.
struct ExperimentRun {
  Corpus corpus;
  UnitInventory units;
  ExampleSet train, dev, test;
  std::optional<HybridModel> model;
  std::vector<EpochSummary> epochs;
  double train_seconds = 0.0;
};

ExperimentRun prepare_experiment(const ExperimentConfig& config);
void train_experiment(ExperimentRun& run, const ExperimentConfig& config,
                      const std::function<void(const EpochSummary&)>& on_epoch = {});

std::string stamp_json(const ExperimentConfig& config, const std::string& command);

}  // namespace csasr
