#include "csasr/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "csasr/experiment.hpp"

namespace csasr {

namespace fs = std::filesystem;

namespace {

struct Invocation {
  std::string config_file;
  ConfigMap overrides;
  std::string command;
  // Subcommand arguments outside the experiment config.
  std::string target = "asr";
  std::string split = "dev";
  std::string out_path;
  std::string hyp_path;
  std::string json_path;
  std::string sweep_param;
  std::vector<double> sweep_values;
};

void add_set_option(CLI::App& app, Invocation& inv) {
  app.add_option_function<std::vector<std::string>>(
         "--set",
         [&inv](const std::vector<std::string>& items) {
           for (const auto& item : items) {
             const auto eq = item.find('=');
             if (eq == std::string::npos || eq == 0) throw CLI::ValidationError("--set", "expected key=value, got " + item);
             inv.overrides.set(item.substr(0, eq), item.substr(eq + 1));
           }
         },
         "Override any config key (section.key=value)")
      ->take_all();
}

// Flag that writes straight into a config key.
void bind(CLI::App* app, Invocation& inv, const std::string& flag, const std::string& key, const std::string& help) {
  app->add_option_function<std::string>(flag, [&inv, key](const std::string& v) { inv.overrides.set(key, v); }, help);
}

void bind_switch(CLI::App* app, Invocation& inv, const std::string& flag, const std::string& key,
                 const std::string& help) {
  app->add_flag_function(flag, [&inv, key](std::int64_t) { inv.overrides.set(key, "true"); }, help);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void write_stamp(const ExperimentConfig& c, const std::string& command, std::ostream& out) {
  const fs::path path = fs::path(c.work) / (command + ".stamp.json");
  write_text(path, stamp_json(c, command) + "\n");
  out << fmt::format("stamp {} seed {} -> {}\n", c.config_hash(), c.train_seed, path.string());
}

fs::path manifest_for(const ExperimentConfig& c, const std::string& split) {
  if (split == "train") return c.path("train_manifest");
  if (split == "dev") return c.path("dev_manifest");
  if (split == "test") return c.path("test_manifest");
  throw std::invalid_argument("unknown split '" + split + "' (train, dev, test)");
}

UnitInventory load_units(const ExperimentConfig& c) {
  Vocabulary vocab = Vocabulary::load(c.path("vocab"));
  if (vocab.mode() != parse_unit_mode(c.unit_mode))
    throw DataError(fmt::format("vocabulary {} was built for {}, config asks for {}", c.path("vocab").string(),
                                unit_mode_name(vocab.mode()), c.unit_mode));
  std::optional<BpeModel> bpe;
  if (vocab.mode() == UnitMode::CharSubword) bpe = BpeModel::load(c.path("merges"));
  return UnitInventory{std::move(bpe), std::move(vocab)};
}

ExampleSet load_split(const ExperimentConfig& c, const std::string& split, const UnitInventory& units,
                      std::ostream& out) {
  ExampleSet set = make_examples(load_manifest(manifest_for(c, split)), units, encoder_config(c));
  if (set.unk_tokens > 0) out << fmt::format("warning: {} {} tokens map to <unk>\n", split, set.unk_tokens);
  return set;
}

std::optional<WordTrie> load_trie(const ExperimentConfig& c, const UnitInventory& units, bool required) {
  const fs::path dict = c.path("dictionary");
  if (!required && !fs::exists(dict)) return std::nullopt;
  return WordTrie::build(read_word_list(dict), units.vocab, units.bpe_ptr());
}

int cmd_gen_data(const ExperimentConfig& c, std::ostream& out) {
  const Corpus corpus = generate_corpus(corpus_spec(c));
  const fs::path features = fs::path(c.work) / "features";
  write_manifest(corpus.train, c.path("train_manifest"), features / "train");
  write_manifest(corpus.dev, c.path("dev_manifest"), features / "dev");
  write_manifest(corpus.test, c.path("test_manifest"), features / "test");
  write_word_list(c.path("dictionary"), corpus.en_words);
  out << fmt::format("wrote {} train, {} dev, {} test utterances; {} dictionary words\n", corpus.train.size(),
                     corpus.dev.size(), corpus.test.size(), corpus.en_words.size());
  write_stamp(c, "gen-data", out);
  return kExitOk;
}

int cmd_train_bpe(const ExperimentConfig& c, std::ostream& out) {
  const BpeModel bpe = train_units_bpe(c, load_manifest(c.path("train_manifest")));
  bpe.save(c.path("merges"));
  out << fmt::format("{} merges, {} subwords -> {}\n", bpe.merges.size(), bpe.inventory.size(),
                     c.path("merges").string());
  write_stamp(c, "train-bpe", out);
  return kExitOk;
}

int cmd_build_vocab(const ExperimentConfig& c, std::ostream& out) {
  std::optional<BpeModel> bpe;
  if (parse_unit_mode(c.unit_mode) == UnitMode::CharSubword) bpe = BpeModel::load(c.path("merges"));
  const UnitInventory units = build_units(c, load_manifest(c.path("train_manifest")), std::move(bpe));
  units.vocab.save(c.path("vocab"));
  out << fmt::format("{} tokens ({}) -> {}\n", units.vocab.size(), unit_mode_name(units.vocab.mode()),
                     c.path("vocab").string());
  write_stamp(c, "build-vocab", out);
  return kExitOk;
}

std::map<std::string, std::string> checkpoint_meta(const ExperimentConfig& c) {
  return {{"run.config_hash", c.config_hash()}, {"run.seed", std::to_string(c.train_seed)}};
}

int cmd_train(const ExperimentConfig& c, const Invocation& inv, std::ostream& out) {
  const UnitInventory units = load_units(c);
  const ExampleSet train = load_split(c, "train", units, out);
  if (inv.target == "asr") {
    HybridModel model(model_config(c, units.vocab.size()));
    model.init(c.init_variance, c.train_seed);
    const fs::path log_path = fs::path(c.work) / "train-asr.jsonl";
    fs::create_directories(c.work);
    std::ofstream log(log_path);
    train_asr(
        model, train, c, [&](const StepRecord& r) { log << to_json_line(r) << '\n'; },
        [&](const EpochSummary& s) {
          out << fmt::format("epoch {:>3}  L_att {:.4f}  L_ctc {:.4f}  L_lid {:.4f}  L_mtl {:.4f}  infeasible {}  {:.1f}s\n",
                             s.epoch, s.mean.att, s.mean.ctc, s.mean.lid, s.mean.mtl, s.infeasible, s.seconds);
          out.flush();
        });
    model.save(c.path("asr_checkpoint"), checkpoint_meta(c));
    out << "model -> " << c.path("asr_checkpoint").string() << "\n";
    write_stamp(c, "train-asr", out);
  } else if (inv.target == "lm") {
    const ExampleSet dev = load_split(c, "dev", units, out);
    const fs::path log_path = fs::path(c.work) / "train-lm.jsonl";
    fs::create_directories(c.work);
    std::ofstream log(log_path);
    const RnnLm lm = train_lm(train, dev, units.vocab.size(), c, [&](const LmEpochRecord& r) {
      nlohmann::json j = {{"epoch", r.epoch}, {"train_ppl", r.train_ppl}, {"dev_ppl", r.dev_ppl}, {"best", r.best}};
      log << j.dump() << '\n';
      out << fmt::format("epoch {:>3}  train ppl {:.4f}  dev ppl {:.4f}{}\n", r.epoch, r.train_ppl, r.dev_ppl,
                         r.best ? "  *" : "");
      out.flush();
    });
    lm.save(c.path("lm_checkpoint"), checkpoint_meta(c));
    out << "lm -> " << c.path("lm_checkpoint").string() << "\n";
    write_stamp(c, "train-lm", out);
  } else {
    throw std::invalid_argument("--target must be asr or lm");
  }
  return kExitOk;
}

int cmd_decode(const ExperimentConfig& c, const Invocation& inv, std::ostream& out) {
  const UnitInventory units = load_units(c);
  const ExampleSet set = load_split(c, inv.split, units, out);
  const HybridModel model = HybridModel::load(c.path("asr_checkpoint"));
  std::optional<RnnLm> lm;
  if (c.use_lm) lm = RnnLm::load(c.path("lm_checkpoint"));
  const SearchOptions opt = search_options(c);
  const auto trie = load_trie(c, units, opt.strategy != Strategy::Basic);
  std::vector<DecodeResult> results = decode_set(model, lm ? &*lm : nullptr, units,
                                                 opt.strategy == Strategy::Basic ? nullptr : &*trie, set, opt, c.threads);

  const fs::path nbest_path =
      inv.out_path.empty() ? fs::path(c.work) / fmt::format("nbest-{}.tsv", inv.split) : fs::path(inv.out_path);
  std::ostringstream tsv;
  write_nbest_header(tsv);
  std::size_t unfinished = 0, fallbacks = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    DecodeResult& r = results[i];
    if (r.nbest.empty()) r.nbest.push_back(Hypothesis{});  // keeps every utterance scoreable
    unfinished += r.unfinished ? 1 : 0;
    fallbacks += r.fallback ? 1 : 0;
    write_nbest(tsv, set.ids[i], r, units.vocab);
  }
  write_text(nbest_path, tsv.str());

  nlohmann::json summary = {{"split", inv.split},
                            {"strategy", std::string(strategy_name(opt.strategy))},
                            {"utterances", results.size()},
                            {"unfinished", unfinished},
                            {"fallbacks", fallbacks}};
  if (trie) {
    const LexiconAudit a = audit_lexicon(results, SearchVocab::from(units.vocab), *trie);
    summary["invalid_outputs"] = a.invalid_outputs;
    summary["invalid_outputs_fallback"] = a.invalid_outputs_fallback;
  }
  write_text(fs::path(c.work) / fmt::format("decode-{}.json", inv.split), summary.dump(2) + "\n");
  out << fmt::format("decoded {} utterances ({}), {} fallbacks, {} unfinished -> {}\n", results.size(),
                     strategy_name(opt.strategy), fallbacks, unfinished, nbest_path.string());
  write_stamp(c, "decode", out);
  return kExitOk;
}

int cmd_score(const ExperimentConfig& c, const Invocation& inv, std::ostream& out) {
  const auto utts = load_manifest(manifest_for(c, inv.split));
  const fs::path hyp_path =
      inv.hyp_path.empty() ? fs::path(c.work) / fmt::format("nbest-{}.tsv", inv.split) : fs::path(inv.hyp_path);
  std::ifstream hin(hyp_path);
  if (!hin) throw DataError("cannot read hypotheses " + hyp_path.string());
  std::map<std::string, std::string> refs, hyps;
  std::map<std::string, std::vector<std::string>> hyp_tokens;
  for (const auto& u : utts) refs[u.id] = u.transcript;
  for (auto& e : read_nbest(hin)) {
    if (e.rank != 1) continue;
    if (hyps.count(e.id)) throw DataError("duplicate rank-1 hypothesis for " + e.id);
    hyps[e.id] = e.sentence;
    hyp_tokens[e.id] = std::move(e.tokens);
  }
  std::vector<ScoringPair> pairs = pair_by_id(refs, hyps);

  if (fs::exists(c.path("vocab"))) {
    const UnitInventory units = load_units(c);
    for (auto& p : pairs) {
      p.ref_tokens = scoring_tokens(units.vocab, encode_transcript(units.vocab, units.bpe_ptr(), p.ref).ids);
      std::vector<std::string> toks;
      for (auto& t : hyp_tokens[p.id]) {
        const auto id = units.vocab.find(t);
        if (id && units.vocab.is_lid(*id)) continue;
        toks.push_back(std::move(t));
      }
      p.hyp_tokens = std::move(toks);
    }
  }
  const ScoreReport report = mer_ter_report(pairs);
  out << format_report(report);
  const fs::path json_path =
      inv.json_path.empty() ? fs::path(c.work) / fmt::format("score-{}.json", inv.split) : fs::path(inv.json_path);
  write_text(json_path, report_json(report, true) + "\n");
  write_stamp(c, "score", out);
  return kExitOk;
}

int cmd_sweep(const ExperimentConfig& base, const Invocation& inv, std::ostream& out) {
  if (inv.sweep_param != "lambda_att" && inv.sweep_param != "lambda_lid")
    throw std::invalid_argument("--param must be lambda_att or lambda_lid");
  if (inv.sweep_values.empty()) throw std::invalid_argument("--values needs at least one value");
  const UnitInventory units = load_units(base);
  const ExampleSet train = load_split(base, "train", units, out);
  const ExampleSet dev = load_split(base, "dev", units, out);
  const ExampleSet test = load_split(base, "test", units, out);

  std::string table = fmt::format("{:<10} {:>7} {:>7} {:>7} {:>9} {:>9} {:>9} {:>9}\n", inv.sweep_param, "att",
                                  "ctc", "lid", "dev_MER", "test_MER", "dev_TER", "test_TER");
  std::string jsonl;
  out << table;
  for (double v : inv.sweep_values) {
    ExperimentConfig c = base;
    if (inv.sweep_param == "lambda_att") {
      c.lambda_att = v;
    } else {
      c.lambda_lid = v;
    }
    c.validate();
    const LossWeights w = LossWeights::three_term(c.lambda_att, c.lambda_lid);
    HybridModel model(model_config(c, units.vocab.size()));
    model.init(c.init_variance, c.train_seed);
    train_asr(model, train, c);
    const SearchOptions opt = search_options(c);
    const auto trie = load_trie(c, units, opt.strategy != Strategy::Basic);
    const WordTrie* tp = opt.strategy == Strategy::Basic ? nullptr : &*trie;
    const ScoreReport d = score_decodes(dev, decode_set(model, nullptr, units, tp, dev, opt, c.threads), units);
    const ScoreReport t = score_decodes(test, decode_set(model, nullptr, units, tp, test, opt, c.threads), units);
    const std::string row =
        fmt::format("{:<10} {:>7.3f} {:>7.3f} {:>7.3f} {:>8.2f}% {:>8.2f}% {:>8.2f}% {:>8.2f}%\n", v, w.att, w.ctc,
                    w.lid, 100 * d.mer.rate(), 100 * t.mer.rate(), 100 * d.ter->rate(), 100 * t.ter->rate());
    out << row;
    out.flush();
    table += row;
    nlohmann::json j = {{"param", inv.sweep_param}, {"value", v},
                        {"weights", {{"att", w.att}, {"ctc", w.ctc}, {"lid", w.lid}}},
                        {"config_hash", c.config_hash()}, {"seed", c.train_seed},
                        {"dev", nlohmann::json::parse(report_json(d))}, {"test", nlohmann::json::parse(report_json(t))}};
    jsonl += j.dump() + "\n";
  }
  write_text(fs::path(base.work) / fmt::format("sweep-{}.txt", inv.sweep_param), table);
  write_text(fs::path(base.work) / fmt::format("sweep-{}.jsonl", inv.sweep_param), jsonl);
  write_stamp(base, "sweep", out);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Invocation inv;
  CLI::App app{"Code-switching speech recognition experiments on synthetic data", "csasr"};
  app.require_subcommand(1);
  app.add_option("-c,--config", inv.config_file, std::string("Config file (default: $") + kConfigEnv + ")");
  add_set_option(app, inv);
  bind(&app, inv, "--work", "paths.work", "Artifact directory");

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic corpus, manifests and dictionary");
  bind(gen, inv, "--seed", "data.seed", "Corpus seed");
  bind(gen, inv, "--train", "data.n_train", "Training utterances");
  bind(gen, inv, "--dev", "data.n_dev", "Dev utterances");
  bind(gen, inv, "--test", "data.n_test", "Test utterances");

  auto* bpe = app.add_subcommand("train-bpe", "Learn subword merges from the training transcripts");
  bind(bpe, inv, "--size", "units.bpe_size", "Target subword inventory size");

  auto* voc = app.add_subcommand("build-vocab", "Build the output vocabulary");
  bind(voc, inv, "--mode", "units.mode", "char-char or char-subword");
  bind_switch(voc, inv, "--lid-tokens", "units.lid_tokens", "Add CH/EN language tokens");

  auto* train = app.add_subcommand("train", "Train the hybrid model or the RNN language model");
  train->add_option("--target", inv.target, "asr or lm")->check(CLI::IsMember({"asr", "lm"}));
  bind(train, inv, "--epochs", "train.epochs", "ASR epochs");
  bind(train, inv, "--lambda-att", "train.lambda_att", "Attention loss weight");
  bind(train, inv, "--lambda-lid", "train.lambda_lid", "LID loss weight");
  bind(train, inv, "--seed", "train.seed", "Training seed");
  bind(train, inv, "--threads", "train.threads", "Worker threads");

  auto* dec = app.add_subcommand("decode", "Joint CTC/attention beam search over a split");
  dec->add_option("--split", inv.split, "train, dev or test")->check(CLI::IsMember({"train", "dev", "test"}));
  dec->add_option("--out", inv.out_path, "N-best TSV path");
  bind(dec, inv, "--strategy", "decode.strategy", "basic, decode1 or decode2");
  bind(dec, inv, "--beam", "decode.beam", "Beam width");
  bind(dec, inv, "--lambda-dec", "decode.lambda_dec", "Attention share of the search score");
  bind(dec, inv, "--lm-weight", "decode.lm_weight", "Shallow fusion weight");
  bind_switch(dec, inv, "--lm", "decode.use_lm", "Use the trained RNN language model");
  bind(dec, inv, "--threads", "train.threads", "Worker threads");

  auto* sc = app.add_subcommand("score", "Mixed and token error rates of rank-1 hypotheses");
  sc->add_option("--split", inv.split, "train, dev or test")->check(CLI::IsMember({"train", "dev", "test"}));
  sc->add_option("--hyp", inv.hyp_path, "N-best TSV path");
  sc->add_option("--json", inv.json_path, "Report JSON path");

  auto* sw = app.add_subcommand("sweep", "Train and evaluate one model per loss weight");
  sw->add_option("--param", inv.sweep_param, "lambda_att or lambda_lid")
      ->required()
      ->check(CLI::IsMember({"lambda_att", "lambda_lid"}));
  sw->add_option("--values", inv.sweep_values, "Comma-separated values")->required()->delimiter(',');
  bind(sw, inv, "--strategy", "decode.strategy", "basic, decode1 or decode2");
  bind(sw, inv, "--epochs", "train.epochs", "ASR epochs");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  for (auto* sub : app.get_subcommands()) inv.command = sub->get_name();

  try {
    const ExperimentConfig c = resolve_config(inv.config_file, inv.overrides);
    if (inv.command == "gen-data") return cmd_gen_data(c, out);
    if (inv.command == "train-bpe") return cmd_train_bpe(c, out);
    if (inv.command == "build-vocab") return cmd_build_vocab(c, out);
    if (inv.command == "train") return cmd_train(c, inv, out);
    if (inv.command == "decode") return cmd_decode(c, inv, out);
    if (inv.command == "score") return cmd_score(c, inv, out);
    if (inv.command == "sweep") return cmd_sweep(c, inv, out);
    err << "unknown command\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    err << "invalid configuration: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace csasr
