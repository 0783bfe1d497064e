#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace csasr {

// Flat key=value text. "[section]" lines prefix later keys with "section.";
// '#' starts a comment. Values are trimmed.
class ConfigMap {
 public:
  static ConfigMap parse(std::string_view text, const std::string& origin = "<config>");
  static ConfigMap load(const std::filesystem::path& path);

  void set(const std::string& key, std::string value) { entries_[key] = std::move(value); }
  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  const std::string& at(const std::string& key) const;
  const std::map<std::string, std::string>& entries() const { return entries_; }

  // Sectioned text that parses back to the same map.
  std::string dump() const;

 private:
  std::map<std::string, std::string> entries_;
};

struct ExperimentConfig {
  // [paths]; empty entries default to files inside `work`.
  std::string work = "work";
  std::string train_manifest, dev_manifest, test_manifest, dictionary, merges, vocab, asr_checkpoint,
      lm_checkpoint;

  // [data]
  int n_ch_chars = 50;
  int n_en_words = 30;
  int feature_dim = 16;
  int min_frames_per_token = 5;
  int max_frames_per_token = 9;
  double noise_std = 0.3;
  double switch_prob = 0.3;
  int min_words = 2;
  int max_words = 6;
  int n_train = 2000;
  int n_dev = 200;
  int n_test = 200;
  std::uint64_t data_seed = 1;

  // [units]
  std::string unit_mode = "char-subword";
  int bpe_size = 60;
  bool lid_tokens = false;

  // [model]
  int enc_hidden = 64;
  int enc_layers = 2;
  std::string pool_before = "0,1";
  int embed_dim = 16;
  int decoder_hidden = 64;
  std::string attention = "location";
  int attn_dim = 32;
  int attn_filters = 10;
  int attn_filter_width = 15;
  double init_variance = 0.1;

  // [train]
  double lambda_att = 0.8;
  double lambda_lid = 0.0;
  int epochs = 20;
  int batch_size = 8;
  double lr_start = 3e-3;
  double lr_end = 3e-4;
  double clip_norm = 5.0;
  double label_smoothing = 0.05;
  double max_sampling_prob = 0.1;
  std::uint64_t train_seed = 1;
  int threads = 1;

  // [lm]
  int lm_embed_dim = 32;
  int lm_hidden = 64;
  int lm_layers = 2;
  int lm_epochs = 20;
  int lm_batch_size = 16;
  double lm_lr = 1.0;
  std::uint64_t lm_seed = 1;

  // [decode]
  std::string strategy = "basic";
  int beam = 10;
  int max_len = -1;
  int nbest = 5;
  double lambda_dec = 0.8;
  double lm_weight = 0.3;
  double length_bonus = 0.1;
  bool use_lm = false;

  // Unknown keys and malformed values throw std::invalid_argument; weight
  // invariants are checked too.
  static ExperimentConfig from_map(const ConfigMap& map);
  ConfigMap to_map() const;
  void validate() const;

  std::filesystem::path path(std::string_view name) const;  // "train_manifest", "vocab", ...

  // FNV-1a of the fully resolved config, hex.
  std::string config_hash() const;

  template <class F>
  void visit(F&& f);
};

// Resolution order: defaults, then the file (explicit path, else
// $CSASR_CONFIG when set), then `overrides`.
ExperimentConfig resolve_config(const std::string& file, const ConfigMap& overrides);

inline constexpr const char* kConfigEnv = "CSASR_CONFIG";

}  // namespace csasr
