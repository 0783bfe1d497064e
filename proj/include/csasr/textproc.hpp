#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "csasr/common.hpp"

namespace csasr {

// ---------------------------------------------------------------------------
// Unicode helpers

std::vector<char32_t> utf8_decode(std::string_view text);
std::string utf8_encode(char32_t cp);

enum class Script { CH, EN, OTHER };

// CJK Unified Ideographs (base block and extension A) are CH, ASCII letters EN.
Script classify_script(char32_t cp);

// Lowercases ASCII, keeps apostrophes inside English words, and separates
// every unit (Chinese character, English word, stray symbol) by one space.
std::string normalize_sentence(std::string_view text);

// ---------------------------------------------------------------------------
// Byte-pair encoding

struct BpeModel {
  static constexpr char kBoundary = '_';

  std::vector<std::pair<std::string, std::string>> merges;
  // Initial single-character symbols (sorted) followed by merge products in
  // merge order, without duplicates.
  std::vector<std::string> inventory;

  // Builds a model from an explicit symbol inventory; `merges` may be empty.
  static BpeModel from_parts(std::vector<std::pair<std::string, std::string>> merges,
                             std::vector<std::string> inventory);

  bool contains(std::string_view symbol) const;
  std::size_t longest_symbol() const;

  void save(const std::filesystem::path& path) const;
  static BpeModel load(const std::filesystem::path& path);

 private:
  friend BpeModel train_bpe(const std::map<std::string, std::int64_t>&, std::size_t);
  void reindex();
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t longest_ = 0;
};

// `word_freq` keys must be boundary-marked ("_word"). Ties between equally
// frequent pairs go to the lexicographically smallest (left, right) pair.
BpeModel train_bpe(const std::map<std::string, std::int64_t>& word_freq, std::size_t target_size);

inline constexpr std::string_view kUnkSurface = "<unk>";

// Greedy longest-prefix segmentation of the boundary-marked word. Characters
// not covered by the inventory come out as "<unk>".
std::vector<std::string> segment_word(const BpeModel& model, std::string_view word);

// Boundary-marked word counts over every English word of the sentences.
std::map<std::string, std::int64_t> english_word_counts(std::span<const std::string> sentences);

// ---------------------------------------------------------------------------
// Vocabulary

enum class UnitMode { CharChar, CharSubword };

std::string_view unit_mode_name(UnitMode mode);
UnitMode parse_unit_mode(std::string_view name);

struct Token {
  int id = 0;
  std::string surface;
  Lang lang = Lang::SPECIAL;
};

// How a token interacts with an in-progress English word during decoding.
enum class TokenClass {
  Closer,     // ends the current English word (Chinese, specials, <space>)
  WordStart,  // boundary-marked subword: closes the previous word, opens a new one
  WordPiece,  // English character or continuation subword
};

class Vocabulary {
 public:
  static inline constexpr std::string_view kSos = "<sos>";
  static inline constexpr std::string_view kEos = "<eos>";
  static inline constexpr std::string_view kUnk = "<unk>";
  static inline constexpr std::string_view kSpace = "<space>";
  static inline constexpr std::string_view kApostrophe = "'";
  static inline constexpr std::string_view kLidCh = "CH";
  static inline constexpr std::string_view kLidEn = "EN";

  // CharSubword requires `bpe`. Chinese characters are sorted by code point.
  static Vocabulary build(UnitMode mode, bool lid_augmented, std::vector<std::string> ch_chars,
                          const BpeModel* bpe = nullptr);

  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  // CTC blank column; never a token id.
  int blank() const { return size(); }
  UnitMode mode() const { return mode_; }
  bool lid_augmented() const { return lid_augmented_; }

  const Token& token(int id) const;
  std::optional<int> find(std::string_view surface) const;
  const std::vector<Token>& tokens() const { return tokens_; }

  int sos() const { return sos_; }
  int eos() const { return eos_; }
  int unk() const { return unk_; }
  std::optional<int> space() const { return space_; }
  std::optional<int> lid_ch() const { return lid_ch_; }
  std::optional<int> lid_en() const { return lid_en_; }
  bool is_lid(int id) const { return id == lid_ch_ || id == lid_en_; }

  TokenClass token_class(int id) const;

  bool operator==(const Vocabulary& other) const;

 private:
  Vocabulary() = default;
  void add(std::string surface, Lang lang);
  void finalize();

  UnitMode mode_ = UnitMode::CharChar;
  bool lid_augmented_ = false;
  std::vector<Token> tokens_;
  std::unordered_map<std::string, int> index_;
  int sos_ = -1, eos_ = -1, unk_ = -1;
  std::optional<int> space_, lid_ch_, lid_en_;
};

// Chinese characters appearing in the sentences, sorted by code point.
std::vector<std::string> collect_chinese_chars(std::span<const std::string> sentences);

// ---------------------------------------------------------------------------
// Transcripts

struct SegmentedTranscript {
  std::vector<int> ids;
  std::vector<Lang> langs;
  std::size_t unk_count = 0;
};

SegmentedTranscript encode_transcript(const Vocabulary& vocab, const BpeModel* bpe,
                                      std::string_view sentence);

std::string detokenize(const Vocabulary& vocab, std::span<const int> ids);

// ---------------------------------------------------------------------------
// LID supervision

// `frame_owner[t]` is the token id owning pooled frame t, or -1 for
// non-speech. Token language decides the label.
std::vector<FrameLid> lid_frames(const Vocabulary& vocab, std::span<const int> frame_owner,
                                 std::size_t pooled_length);

// Majority vote over windows of `factor` frames; a trailing partial window is
// dropped. Ties resolve in CH, EN, SIL order.
std::vector<FrameLid> pool_frame_lid(std::span<const FrameLid> frames, int factor);

}  // namespace csasr
