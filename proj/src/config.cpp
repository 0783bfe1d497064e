#include "csasr/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

#include "csasr/attnmodel.hpp"
#include "csasr/common.hpp"

namespace csasr {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

void parse_value(const std::string& key, const std::string& text, int& out) {
  std::size_t used = 0;
  try {
    out = std::stoi(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty()) throw std::invalid_argument(key + ": expected an integer, got '" + text + "'");
}

void parse_value(const std::string& key, const std::string& text, std::uint64_t& out) {
  std::size_t used = 0;
  try {
    out = std::stoull(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty() || text[0] == '-')
    throw std::invalid_argument(key + ": expected a non-negative integer, got '" + text + "'");
}

void parse_value(const std::string& key, const std::string& text, double& out) {
  std::size_t used = 0;
  try {
    out = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty()) throw std::invalid_argument(key + ": expected a number, got '" + text + "'");
}

void parse_value(const std::string& key, const std::string& text, bool& out) {
  if (text == "true" || text == "1" || text == "yes") {
    out = true;
  } else if (text == "false" || text == "0" || text == "no") {
    out = false;
  } else {
    throw std::invalid_argument(key + ": expected true or false, got '" + text + "'");
  }
}

void parse_value(const std::string&, const std::string& text, std::string& out) { out = text; }

std::string show(int v) { return std::to_string(v); }
std::string show(std::uint64_t v) { return std::to_string(v); }
std::string show(double v) { return fmt::format("{}", v); }
std::string show(bool v) { return v ? "true" : "false"; }
std::string show(const std::string& v) { return v; }

}  // namespace

ConfigMap ConfigMap::parse(std::string_view text, const std::string& origin) {
  ConfigMap map;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3)
        throw std::invalid_argument(fmt::format("{}:{}: malformed section header", origin, line_no));
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument(fmt::format("{}:{}: expected key=value", origin, line_no));
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw std::invalid_argument(fmt::format("{}:{}: empty key", origin, line_no));
    map.set(section.empty() ? key : section + "." + key, trim(line.substr(eq + 1)));
  }
  return map;
}

ConfigMap ConfigMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

const std::string& ConfigMap::at(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw std::invalid_argument("missing config key " + key);
  return it->second;
}

std::string ConfigMap::dump() const {
  std::string out, section;
  // Keys outside any section must come before the first header.
  for (const auto& [key, value] : entries_) {
    if (key.find('.') == std::string::npos) out += key + " = " + value + "\n";
  }
  bool first = out.empty();
  for (const auto& [key, value] : entries_) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) continue;
    const std::string sec = key.substr(0, dot);
    if (first || sec != section) {
      out += (first ? "" : "\n") + ("[" + sec + "]\n");
      section = sec;
      first = false;
    }
    out += key.substr(dot + 1) + " = " + value + "\n";
  }
  return out;
}

template <class F>
void ExperimentConfig::visit(F&& f) {
  f("paths.work", work);
  f("paths.train_manifest", train_manifest);
  f("paths.dev_manifest", dev_manifest);
  f("paths.test_manifest", test_manifest);
  f("paths.dictionary", dictionary);
  f("paths.merges", merges);
  f("paths.vocab", vocab);
  f("paths.asr_checkpoint", asr_checkpoint);
  f("paths.lm_checkpoint", lm_checkpoint);

  f("data.n_ch_chars", n_ch_chars);
  f("data.n_en_words", n_en_words);
  f("data.feature_dim", feature_dim);
  f("data.min_frames_per_token", min_frames_per_token);
  f("data.max_frames_per_token", max_frames_per_token);
  f("data.noise_std", noise_std);
  f("data.switch_prob", switch_prob);
  f("data.min_words", min_words);
  f("data.max_words", max_words);
  f("data.n_train", n_train);
  f("data.n_dev", n_dev);
  f("data.n_test", n_test);
  f("data.seed", data_seed);

  f("units.mode", unit_mode);
  f("units.bpe_size", bpe_size);
  f("units.lid_tokens", lid_tokens);

  f("model.enc_hidden", enc_hidden);
  f("model.enc_layers", enc_layers);
  f("model.pool_before", pool_before);
  f("model.embed_dim", embed_dim);
  f("model.decoder_hidden", decoder_hidden);
  f("model.attention", attention);
  f("model.attn_dim", attn_dim);
  f("model.attn_filters", attn_filters);
  f("model.attn_filter_width", attn_filter_width);
  f("model.init_variance", init_variance);

  f("train.lambda_att", lambda_att);
  f("train.lambda_lid", lambda_lid);
  f("train.epochs", epochs);
  f("train.batch_size", batch_size);
  f("train.lr_start", lr_start);
  f("train.lr_end", lr_end);
  f("train.clip_norm", clip_norm);
  f("train.label_smoothing", label_smoothing);
  f("train.max_sampling_prob", max_sampling_prob);
  f("train.seed", train_seed);
  f("train.threads", threads);

  f("lm.embed_dim", lm_embed_dim);
  f("lm.hidden", lm_hidden);
  f("lm.layers", lm_layers);
  f("lm.epochs", lm_epochs);
  f("lm.batch_size", lm_batch_size);
  f("lm.lr", lm_lr);
  f("lm.seed", lm_seed);

  f("decode.strategy", strategy);
  f("decode.beam", beam);
  f("decode.max_len", max_len);
  f("decode.nbest", nbest);
  f("decode.lambda_dec", lambda_dec);
  f("decode.lm_weight", lm_weight);
  f("decode.length_bonus", length_bonus);
  f("decode.use_lm", use_lm);
}

ExperimentConfig ExperimentConfig::from_map(const ConfigMap& map) {
  ExperimentConfig c;
  std::set<std::string> known;
  c.visit([&](const char* key, auto& field) {
    known.insert(key);
    if (map.has(key)) parse_value(key, map.at(key), field);
  });
  for (const auto& [key, value] : map.entries()) {
    if (!known.count(key)) throw std::invalid_argument("unknown config key " + key);
  }
  c.validate();
  return c;
}

ConfigMap ExperimentConfig::to_map() const {
  ConfigMap map;
  ExperimentConfig copy = *this;
  copy.visit([&](const char* key, auto& field) { map.set(key, show(field)); });
  return map;
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
  };
  LossWeights::three_term(lambda_att, lambda_lid).validate();
  require(lambda_dec >= 0.0 && lambda_dec <= 1.0, "decode.lambda_dec must lie in [0, 1]");
  require(lm_weight >= 0.0, "decode.lm_weight must be non-negative");
  require(beam >= 1 && nbest >= 1, "decode.beam and decode.nbest must be positive");
  require(epochs >= 1 && batch_size >= 1, "train.epochs and train.batch_size must be positive");
  require(lm_epochs >= 1 && lm_batch_size >= 1, "lm.epochs and lm.batch_size must be positive");
  require(threads >= 1, "train.threads must be positive");
  require(bpe_size >= 1, "units.bpe_size must be positive");
  require(unit_mode == "char-subword" || unit_mode == "char-char", "units.mode must be char-char or char-subword");
  require(strategy == "basic" || strategy == "decode1" || strategy == "decode2",
          "decode.strategy must be basic, decode1 or decode2");
  require(attention == "location" || attention == "content", "model.attention must be content or location");
}

std::filesystem::path ExperimentConfig::path(std::string_view name) const {
  const std::filesystem::path dir(work);
  auto pick = [&](const std::string& value, const char* fallback) {
    return value.empty() ? dir / fallback : std::filesystem::path(value);
  };
  if (name == "train_manifest") return pick(train_manifest, "train.jsonl");
  if (name == "dev_manifest") return pick(dev_manifest, "dev.jsonl");
  if (name == "test_manifest") return pick(test_manifest, "test.jsonl");
  if (name == "dictionary") return pick(dictionary, "words.txt");
  if (name == "merges") return pick(merges, "merges.txt");
  if (name == "vocab") return pick(vocab, "vocab.txt");
  if (name == "asr_checkpoint") return pick(asr_checkpoint, "asr.ckpt");
  if (name == "lm_checkpoint") return pick(lm_checkpoint, "lm.ckpt");
  throw std::invalid_argument("unknown path name " + std::string(name));
}

std::string ExperimentConfig::config_hash() const {
  return fmt::format("{:016x}", fnv1a64(to_map().dump()));
}

ExperimentConfig resolve_config(const std::string& file, const ConfigMap& overrides) {
  ConfigMap merged;
  std::string source = file;
  if (source.empty()) {
    if (const char* env = std::getenv(kConfigEnv); env && *env) source = env;
  }
  if (!source.empty()) merged = ConfigMap::load(source);
  for (const auto& [key, value] : overrides.entries()) merged.set(key, value);
  return ExperimentConfig::from_map(merged);
}

}  // namespace csasr
