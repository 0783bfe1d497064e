#include "csasr/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace csasr {

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw std::invalid_argument("bad integer list '" + text + "'");
    }
  }
  return out;
}

}  // namespace

CorpusSpec corpus_spec(const ExperimentConfig& c) {
  CorpusSpec s;
  s.n_ch_chars = c.n_ch_chars;
  s.n_en_words = c.n_en_words;
  s.feature_dim = c.feature_dim;
  s.min_frames_per_token = c.min_frames_per_token;
  s.max_frames_per_token = c.max_frames_per_token;
  s.noise_std = c.noise_std;
  s.switch_prob = c.switch_prob;
  s.min_words = c.min_words;
  s.max_words = c.max_words;
  s.n_train = c.n_train;
  s.n_dev = c.n_dev;
  s.n_test = c.n_test;
  s.seed = c.data_seed;
  s.validate();
  return s;
}

nn::EncoderConfig encoder_config(const ExperimentConfig& c) {
  nn::EncoderConfig e;
  e.input_dim = c.feature_dim;
  e.hidden = c.enc_hidden;
  e.layers = c.enc_layers;
  e.pool_before = parse_int_list(c.pool_before);
  e.validate();
  return e;
}

ModelConfig model_config(const ExperimentConfig& c, int vocab_size) {
  ModelConfig m;
  m.encoder = encoder_config(c);
  m.vocab_size = vocab_size;
  m.embed_dim = c.embed_dim;
  m.decoder_hidden = c.decoder_hidden;
  m.attention.kind = parse_attention_kind(c.attention);
  m.attention.attn_dim = c.attn_dim;
  m.attention.filters = c.attn_filters;
  m.attention.filter_width = c.attn_filter_width;
  m.validate();
  return m;
}

TrainConfig train_config(const ExperimentConfig& c, std::int64_t total_steps) {
  TrainConfig t;
  t.weights = LossWeights::three_term(c.lambda_att, c.lambda_lid);
  t.optimizer.kind = nn::OptimizerKind::AdamWithClip;
  t.optimizer.lr_start = c.lr_start;
  t.optimizer.lr_end = c.lr_end;
  t.optimizer.clip_norm = c.clip_norm;
  t.optimizer.total_steps = std::max<std::int64_t>(1, total_steps);
  t.label_smoothing = c.label_smoothing;
  t.max_sampling_prob = c.max_sampling_prob;
  t.seed = c.train_seed;
  t.threads = c.threads;
  return t;
}

SearchOptions search_options(const ExperimentConfig& c) {
  SearchOptions o;
  o.beam = c.beam;
  o.max_len = c.max_len;
  o.nbest = c.nbest;
  o.weights.lambda_dec = c.lambda_dec;
  o.weights.lm_weight = c.use_lm ? c.lm_weight : 0.0;
  o.weights.length_bonus = c.length_bonus;
  o.strategy = parse_strategy(c.strategy);
  return o;
}

BpeModel train_units_bpe(const ExperimentConfig& config, const std::vector<Utterance>& train) {
  std::vector<std::string> sentences;
  for (const auto& u : train) sentences.push_back(u.transcript);
  return train_bpe(english_word_counts(sentences), static_cast<std::size_t>(config.bpe_size));
}

UnitInventory build_units(const ExperimentConfig& config, const std::vector<Utterance>& train,
                          std::optional<BpeModel> bpe) {
  const UnitMode mode = parse_unit_mode(config.unit_mode);
  if (mode == UnitMode::CharSubword && !bpe) bpe = train_units_bpe(config, train);
  if (mode == UnitMode::CharChar) bpe.reset();
  std::vector<std::string> sentences;
  for (const auto& u : train) sentences.push_back(u.transcript);
  Vocabulary vocab = Vocabulary::build(mode, config.lid_tokens, collect_chinese_chars(sentences), bpe ? &*bpe : nullptr);
  return UnitInventory{std::move(bpe), std::move(vocab)};
}

ExampleSet make_examples(const std::vector<Utterance>& utts, const UnitInventory& units,
                         const nn::EncoderConfig& encoder) {
  ExampleSet set;
  for (const auto& u : utts) {
    Example ex;
    ex.features = u.features.cast<double>();
    const auto seg = encode_transcript(units.vocab, units.bpe_ptr(), u.transcript);
    ex.target = seg.ids;
    set.unk_tokens += seg.unk_count;
    if (!u.frame_lid.empty()) {
      const auto pooled = pool_frame_lid(u.frame_lid, encoder.pooling_factor());
      ex.frame_lid.reserve(pooled.size());
      for (FrameLid l : pooled) ex.frame_lid.push_back(static_cast<int>(l));
      ex.frame_lid.resize(static_cast<std::size_t>(encoder.output_frames(static_cast<int>(u.features.rows()))),
                          static_cast<int>(FrameLid::SIL));
    }
    set.ids.push_back(u.id);
    set.transcripts.push_back(u.transcript);
    set.examples.push_back(std::move(ex));
  }
  return set;
}

void train_asr(HybridModel& model, const ExampleSet& train, const ExperimentConfig& config,
               const std::function<void(const StepRecord&)>& on_step,
               const std::function<void(const EpochSummary&)>& on_epoch) {
  const std::size_t n = train.examples.size();
  if (n == 0) throw DataError("no training utterances");
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  const std::int64_t per_epoch = static_cast<std::int64_t>((n + bs - 1) / bs);
  const TrainConfig tc = train_config(config, per_epoch * config.epochs);
  std::vector<std::vector<int>> targets;
  for (const auto& ex : train.examples) targets.push_back(ex.target);
  Trainer trainer(model, tc, unigram_distribution(targets, model.config().vocab_size, model.eos()));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(config.train_seed * 0x2545F4914F6CDD1DULL + 17);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    EpochSummary summary;
    summary.epoch = epoch;
    for (std::size_t b = 0; b < n; b += bs) {
      std::vector<const Example*> batch;
      for (std::size_t i = b; i < std::min(n, b + bs); ++i) batch.push_back(&train.examples[order[i]]);
      const StepRecord rec = trainer.train_step(batch);
      summary.mean.att += rec.losses.att;
      summary.mean.ctc += rec.losses.ctc;
      summary.mean.lid += rec.losses.lid;
      summary.mean.mtl += rec.losses.mtl;
      summary.infeasible += rec.infeasible;
      if (on_step) on_step(rec);
    }
    const double steps = static_cast<double>(per_epoch);
    summary.mean.att /= steps;
    summary.mean.ctc /= steps;
    summary.mean.lid /= steps;
    summary.mean.mtl /= steps;
    summary.seconds = seconds_since(start);
    if (on_epoch) on_epoch(summary);
  }
}

RnnLm train_lm(const ExampleSet& train, const ExampleSet& dev, int vocab_size, const ExperimentConfig& config,
               const std::function<void(const LmEpochRecord&)>& on_epoch) {
  LmConfig lc;
  lc.vocab_size = vocab_size;
  lc.embed_dim = config.lm_embed_dim;
  lc.hidden = config.lm_hidden;
  lc.layers = config.lm_layers;
  LmTrainConfig tc;
  tc.epochs = config.lm_epochs;
  tc.batch_size = config.lm_batch_size;
  tc.init_variance = config.init_variance;
  tc.optimizer.lr_start = config.lm_lr;
  tc.optimizer.clip_norm = config.clip_norm;
  tc.seed = config.lm_seed;
  std::vector<std::vector<int>> tr, dv;
  for (const auto& ex : train.examples) tr.push_back(ex.target);
  for (const auto& ex : dev.examples) dv.push_back(ex.target);
  return lm_train(tr, dv, lc, tc, on_epoch);
}

std::vector<DecodeResult> decode_set(const HybridModel& model, const RnnLm* lm, const UnitInventory& units,
                                     const WordTrie* trie, const ExampleSet& set, const SearchOptions& options,
                                     int threads) {
  const std::size_t n = set.examples.size();
  std::vector<DecodeResult> out(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        out[i] = decode_utterance(model, lm, units.vocab, trie, set.examples[i].features, options);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::vector<std::string> scoring_tokens(const Vocabulary& vocab, std::span<const int> ids) {
  std::vector<std::string> out;
  for (int id : ids) {
    if (vocab.is_lid(id) || id == vocab.sos() || id == vocab.eos()) continue;
    out.push_back(vocab.token(id).surface);
  }
  return out;
}

ScoreReport score_decodes(const ExampleSet& set, const std::vector<DecodeResult>& results,
                          const UnitInventory& units) {
  if (results.size() != set.examples.size()) throw DataError("decode results do not match the utterance set");
  std::vector<ScoringPair> pairs;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const std::vector<int> empty;
    const auto& hyp = results[i].nbest.empty() ? empty : results[i].nbest.front().tokens;
    pairs.push_back({set.ids[i], set.transcripts[i], detokenize(units.vocab, hyp),
                     scoring_tokens(units.vocab, set.examples[i].target), scoring_tokens(units.vocab, hyp)});
  }
  return mer_ter_report(pairs);
}

LexiconAudit audit_lexicon(const std::vector<DecodeResult>& results, const SearchVocab& vocab, const WordTrie& trie) {
  LexiconAudit a;
  for (const auto& r : results) {
    ++a.utterances;
    if (r.fallback) ++a.fallbacks;
    if (r.nbest.empty()) continue;
    if (!all_words_valid(r.nbest.front().tokens, vocab, trie)) {
      if (r.fallback) {
        ++a.invalid_outputs_fallback;
      } else {
        ++a.invalid_outputs;
      }
    }
  }
  return a;
}

ExperimentRun prepare_experiment(const ExperimentConfig& config) {
  Corpus corpus = generate_corpus(corpus_spec(config));
  UnitInventory units = build_units(config, corpus.train, std::nullopt);
  ExperimentRun run{std::move(corpus), std::move(units), {}, {}, {}, {}, {}, 0.0};
  const auto enc = encoder_config(config);
  run.train = make_examples(run.corpus.train, run.units, enc);
  run.dev = make_examples(run.corpus.dev, run.units, enc);
  run.test = make_examples(run.corpus.test, run.units, enc);
  return run;
}

void train_experiment(ExperimentRun& run, const ExperimentConfig& config,
                      const std::function<void(const EpochSummary&)>& on_epoch) {
  run.model.emplace(model_config(config, run.units.vocab.size()));
  run.model->init(config.init_variance, config.train_seed);
  run.epochs.clear();
  const auto start = std::chrono::steady_clock::now();
  train_asr(*run.model, run.train, config, {}, [&](const EpochSummary& s) {
    run.epochs.push_back(s);
    if (on_epoch) on_epoch(s);
  });
  run.train_seconds = seconds_since(start);
}

std::string stamp_json(const ExperimentConfig& config, const std::string& command) {
  nlohmann::json j = {{"command", command},
                      {"config_hash", config.config_hash()},
                      {"data_seed", config.data_seed},
                      {"train_seed", config.train_seed},
                      {"lm_seed", config.lm_seed},
                      {"config", config.to_map().entries()}};
  return j.dump(2);
}

}  // namespace csasr
