#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "csasr/common.hpp"

namespace csasr {

enum class StartLang { Random, CH, EN };

struct CorpusSpec {
  int n_ch_chars = 50;
  int n_en_words = 30;
  int feature_dim = 16;
  int min_frames_per_token = 5;
  int max_frames_per_token = 9;
  double noise_std = 0.3;
  double switch_prob = 0.3;
  int min_words = 2;
  int max_words = 6;
  int min_word_letters = 3;
  int max_word_letters = 7;
  int n_train = 2000;
  int n_dev = 200;
  int n_test = 200;
  StartLang start_lang = StartLang::Random;
  std::uint64_t seed = 1;

  void validate() const;  // throws std::invalid_argument
};

struct Utterance {
  std::string id;
  Eigen::MatrixXf features;  // T x d
  std::string transcript;    // normalized sentence
  std::vector<FrameLid> frame_lid;  // length T
};

// Chinese characters get one signature each; every English letter gets two,
// one for word-initial position and one for the rest, so word boundaries are
// audible. Silence frames are zero vectors plus noise.
struct SignatureTable {
  std::vector<std::string> ch_chars;
  Eigen::MatrixXd ch;           // n_ch x d
  Eigen::MatrixXd en_initial;   // 26 x d
  Eigen::MatrixXd en_internal;  // 26 x d

  // Nearest-signature labelling of each frame followed by run collapsing.
  // Exact on noise-free features.
  std::string recover_transcript(const Eigen::MatrixXf& features) const;
};

struct Corpus {
  SignatureTable signatures;
  std::vector<std::string> en_words;
  std::vector<Utterance> train, dev, test;
};

Corpus generate_corpus(const CorpusSpec& spec);

// Line-delimited JSON records {id, feature_path, transcript, frame_lid}.
// Feature files go to `feature_dir` (created if needed); recorded paths are
// relative to the manifest's directory when possible.
void write_manifest(const std::vector<Utterance>& utts, const std::filesystem::path& manifest,
                    const std::filesystem::path& feature_dir);
std::vector<Utterance> load_manifest(const std::filesystem::path& manifest);

// Binary features: int32 T, int32 d, then T*d float32, all little-endian, row-major.
void write_features(const std::filesystem::path& path, const Eigen::MatrixXf& features);
Eigen::MatrixXf read_features(const std::filesystem::path& path);

std::string frame_lid_string(const std::vector<FrameLid>& lid);
std::vector<FrameLid> parse_frame_lid(const std::string& s);

// Plain word list, one per line.
void write_word_list(const std::filesystem::path& path, const std::vector<std::string>& words);
std::vector<std::string> read_word_list(const std::filesystem::path& path);

}  // namespace csasr
