#include "csasr/textproc.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace csasr {

// ---------------------------------------------------------------------------
// Unicode helpers

std::vector<char32_t> utf8_decode(std::string_view text) {
  std::vector<char32_t> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    int extra = 0;
    char32_t cp = 0;
    if (lead < 0x80) {
      cp = lead;
    } else if ((lead & 0xE0) == 0xC0) {
      cp = lead & 0x1F;
      extra = 1;
    } else if ((lead & 0xF0) == 0xE0) {
      cp = lead & 0x0F;
      extra = 2;
    } else if ((lead & 0xF8) == 0xF0) {
      cp = lead & 0x07;
      extra = 3;
    } else {
      throw DataError("invalid UTF-8 lead byte at offset " + std::to_string(i));
    }
    for (int k = 1; k <= extra; ++k) {
      if (i + k >= text.size()) throw DataError("truncated UTF-8 sequence at offset " + std::to_string(i));
      const auto cont = static_cast<unsigned char>(text[i + k]);
      if ((cont & 0xC0) != 0x80) throw DataError("invalid UTF-8 continuation at offset " + std::to_string(i + k));
      cp = (cp << 6) | (cont & 0x3F);
    }
    out.push_back(cp);
    i += static_cast<std::size_t>(extra) + 1;
  }
  return out;
}

std::string utf8_encode(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
  return out;
}

Script classify_script(char32_t cp) {
  if ((cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0x3400 && cp <= 0x4DBF)) return Script::CH;
  if ((cp >= U'a' && cp <= U'z') || (cp >= U'A' && cp <= U'Z')) return Script::EN;
  return Script::OTHER;
}

namespace {

bool is_space(char32_t cp) { return cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r'; }

bool is_word_char(char32_t cp) { return classify_script(cp) == Script::EN || cp == U'\''; }

enum class UnitKind { CH, EN, OTHER };

struct Unit {
  UnitKind kind;
  std::string text;
};

// Splits a sentence into scoring/encoding units. English is lowercased.
std::vector<Unit> split_units(std::string_view sentence) {
  std::vector<Unit> units;
  const auto cps = utf8_decode(sentence);
  std::size_t i = 0;
  while (i < cps.size()) {
    const char32_t cp = cps[i];
    if (is_space(cp)) {
      ++i;
    } else if (is_word_char(cp)) {
      std::string word;
      while (i < cps.size() && is_word_char(cps[i])) {
        char32_t c = cps[i];
        if (c >= U'A' && c <= U'Z') c = c - U'A' + U'a';
        word.push_back(static_cast<char>(c));
        ++i;
      }
      units.push_back({UnitKind::EN, std::move(word)});
    } else {
      units.push_back({classify_script(cp) == Script::CH ? UnitKind::CH : UnitKind::OTHER, utf8_encode(cp)});
      ++i;
    }
  }
  return units;
}

}  // namespace

std::string normalize_sentence(std::string_view text) {
  std::string out;
  for (const auto& unit : split_units(text)) {
    if (!out.empty()) out.push_back(' ');
    out += unit.text;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Byte-pair encoding

BpeModel BpeModel::from_parts(std::vector<std::pair<std::string, std::string>> merges,
                              std::vector<std::string> inventory) {
  BpeModel model;
  model.merges = std::move(merges);
  model.inventory = std::move(inventory);
  model.reindex();
  return model;
}

bool BpeModel::contains(std::string_view symbol) const { return index_.count(std::string(symbol)) > 0; }

std::size_t BpeModel::longest_symbol() const { return longest_; }

void BpeModel::reindex() {
  index_.clear();
  longest_ = 0;
  for (std::size_t i = 0; i < inventory.size(); ++i) {
    index_.emplace(inventory[i], i);
    longest_ = std::max(longest_, inventory[i].size());
  }
}

void BpeModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write merges file " + path.string());
  // The alphabet line lets the loader rebuild single-character symbols that
  // never took part in a merge.
  out << "#alphabet";
  for (const auto& sym : inventory) {
    if (sym.size() == 1) out << ' ' << sym;
  }
  out << '\n';
  for (const auto& [left, right] : merges) out << left << ' ' << right << '\n';
}

BpeModel BpeModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read merges file " + path.string());
  BpeModel model;
  std::set<std::string> alphabet;
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> products;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    if (line.rfind("#alphabet", 0) == 0) {
      std::string tag, sym;
      fields >> tag;
      while (fields >> sym) alphabet.insert(sym);
      continue;
    }
    if (line[0] == '#') continue;
    std::string left, right, extra;
    if (!(fields >> left >> right) || (fields >> extra)) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 'left right'");
    }
    for (const auto* part : {&left, &right}) {
      if (part->size() == 1) alphabet.insert(*part);
    }
    model.merges.emplace_back(left, right);
    products.push_back(left + right);
  }
  model.inventory.assign(alphabet.begin(), alphabet.end());
  std::set<std::string> seen(alphabet.begin(), alphabet.end());
  for (auto& p : products) {
    if (seen.insert(p).second) model.inventory.push_back(std::move(p));
  }
  model.reindex();
  return model;
}

BpeModel train_bpe(const std::map<std::string, std::int64_t>& word_freq, std::size_t target_size) {
  if (word_freq.empty()) throw std::invalid_argument("train_bpe: empty corpus");

  std::vector<std::pair<std::vector<std::string>, std::int64_t>> words;
  std::set<std::string> alphabet;
  for (const auto& [word, count] : word_freq) {
    if (word.empty() || word[0] != BpeModel::kBoundary) {
      throw std::invalid_argument("train_bpe: word '" + word + "' lacks the boundary mark");
    }
    if (count <= 0) continue;
    std::vector<std::string> symbols;
    for (char c : word) {
      symbols.emplace_back(1, c);
      alphabet.insert(symbols.back());
    }
    words.emplace_back(std::move(symbols), count);
  }
  if (words.empty()) throw std::invalid_argument("train_bpe: empty corpus");
  if (target_size < alphabet.size()) {
    throw std::invalid_argument("train_bpe: target size " + std::to_string(target_size) +
                                " below the " + std::to_string(alphabet.size()) + " initial symbols");
  }

  BpeModel model;
  model.inventory.assign(alphabet.begin(), alphabet.end());
  std::set<std::string> known(alphabet.begin(), alphabet.end());

  while (model.inventory.size() < target_size) {
    std::map<std::pair<std::string, std::string>, std::int64_t> counts;
    for (const auto& [symbols, count] : words) {
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) counts[{symbols[i], symbols[i + 1]}] += count;
    }
    const std::pair<std::string, std::string>* best = nullptr;
    std::int64_t best_count = 0;
    for (const auto& [pair, count] : counts) {
      if (count > best_count) {
        best = &pair;
        best_count = count;
      }
    }
    if (best == nullptr || best_count < 2) break;

    const auto [left, right] = *best;
    const std::string product = left + right;
    for (auto& [symbols, count] : words) {
      std::vector<std::string> merged;
      merged.reserve(symbols.size());
      for (std::size_t i = 0; i < symbols.size(); ++i) {
        if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
          merged.push_back(product);
          ++i;
        } else {
          merged.push_back(std::move(symbols[i]));
        }
      }
      symbols = std::move(merged);
    }
    model.merges.emplace_back(left, right);
    if (known.insert(product).second) model.inventory.push_back(product);
  }
  model.reindex();
  return model;
}

std::vector<std::string> segment_word(const BpeModel& model, std::string_view word) {
  if (word.empty()) throw std::invalid_argument("segment_word: empty word");
  std::string marked;
  marked.reserve(word.size() + 1);
  marked.push_back(BpeModel::kBoundary);
  marked.append(word);

  std::vector<std::string> pieces;
  std::size_t pos = 0;
  while (pos < marked.size()) {
    const std::size_t max_len = std::min(model.longest_symbol(), marked.size() - pos);
    std::size_t len = max_len;
    for (; len > 0; --len) {
      if (model.contains(std::string_view(marked).substr(pos, len))) break;
    }
    if (len == 0) {
      pieces.emplace_back(kUnkSurface);
      ++pos;
    } else {
      pieces.push_back(marked.substr(pos, len));
      pos += len;
    }
  }
  return pieces;
}

std::map<std::string, std::int64_t> english_word_counts(std::span<const std::string> sentences) {
  std::map<std::string, std::int64_t> counts;
  for (const auto& sentence : sentences) {
    for (const auto& unit : split_units(sentence)) {
      if (unit.kind == UnitKind::EN) ++counts[std::string(1, BpeModel::kBoundary) + unit.text];
    }
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Vocabulary

std::string_view unit_mode_name(UnitMode mode) {
  return mode == UnitMode::CharChar ? "char-char" : "char-subword";
}

UnitMode parse_unit_mode(std::string_view name) {
  if (name == "char-char") return UnitMode::CharChar;
  if (name == "char-subword") return UnitMode::CharSubword;
  throw std::invalid_argument("unknown unit mode '" + std::string(name) + "'");
}

namespace {

Lang lang_of_surface(std::string_view surface) {
  if (surface == Vocabulary::kSos || surface == Vocabulary::kEos || surface == Vocabulary::kUnk ||
      surface == Vocabulary::kSpace || surface == Vocabulary::kLidCh || surface == Vocabulary::kLidEn) {
    return Lang::SPECIAL;
  }
  const auto cps = utf8_decode(surface);
  if (cps.size() == 1 && classify_script(cps[0]) == Script::CH) return Lang::CH;
  return Lang::EN;
}

}  // namespace

void Vocabulary::add(std::string surface, Lang lang) {
  const int id = size();
  if (!index_.emplace(surface, id).second) throw DataError("duplicate vocabulary entry '" + surface + "'");
  tokens_.push_back({id, std::move(surface), lang});
}

void Vocabulary::finalize() {
  auto need = [&](std::string_view s) {
    auto id = find(s);
    if (!id) throw DataError("vocabulary lacks " + std::string(s));
    return *id;
  };
  sos_ = need(kSos);
  eos_ = need(kEos);
  unk_ = need(kUnk);
  space_ = find(kSpace);
  lid_ch_ = find(kLidCh);
  lid_en_ = find(kLidEn);
  if (lid_augmented_ != (lid_ch_.has_value() && lid_en_.has_value())) {
    throw DataError("vocabulary LID tokens do not match its lid flag");
  }
  if (!lid_augmented_ && (lid_ch_ || lid_en_)) throw DataError("vocabulary has a stray LID token");
}

Vocabulary Vocabulary::build(UnitMode mode, bool lid_augmented, std::vector<std::string> ch_chars,
                             const BpeModel* bpe) {
  if (mode == UnitMode::CharSubword && bpe == nullptr) {
    throw std::invalid_argument("char-subword vocabulary requires a BPE model");
  }
  Vocabulary v;
  v.mode_ = mode;
  v.lid_augmented_ = lid_augmented;
  v.add(std::string(kSos), Lang::SPECIAL);
  v.add(std::string(kEos), Lang::SPECIAL);
  v.add(std::string(kUnk), Lang::SPECIAL);
  if (mode == UnitMode::CharChar) v.add(std::string(kSpace), Lang::SPECIAL);
  if (lid_augmented) {
    v.add(std::string(kLidCh), Lang::SPECIAL);
    v.add(std::string(kLidEn), Lang::SPECIAL);
  }
  std::sort(ch_chars.begin(), ch_chars.end(), [](const std::string& a, const std::string& b) {
    return utf8_decode(a) < utf8_decode(b);
  });
  ch_chars.erase(std::unique(ch_chars.begin(), ch_chars.end()), ch_chars.end());
  for (auto& c : ch_chars) {
    const auto cps = utf8_decode(c);
    if (cps.size() != 1 || classify_script(cps[0]) != Script::CH) {
      throw std::invalid_argument("not a single Chinese character: '" + c + "'");
    }
    v.add(std::move(c), Lang::CH);
  }
  if (mode == UnitMode::CharChar) {
    for (char c = 'a'; c <= 'z'; ++c) v.add(std::string(1, c), Lang::EN);
    v.add(std::string(kApostrophe), Lang::EN);
  } else {
    for (const auto& sym : bpe->inventory) v.add(sym, Lang::EN);
  }
  v.finalize();
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary " + path.string());
  out << "#csasr-vocab mode=" << unit_mode_name(mode_) << " lid=" << (lid_augmented_ ? 1 : 0) << '\n';
  for (const auto& t : tokens_) out << t.surface << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read vocabulary " + path.string());
  std::string header;
  if (!std::getline(in, header) || header.rfind("#csasr-vocab", 0) != 0) {
    throw DataError(path.string() + ":1: missing vocabulary header");
  }
  Vocabulary v;
  std::istringstream fields(header.substr(std::string_view("#csasr-vocab").size()));
  std::string kv;
  bool have_mode = false, have_lid = false;
  while (fields >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw DataError(path.string() + ":1: bad header field '" + kv + "'");
    const auto key = kv.substr(0, eq);
    const auto value = kv.substr(eq + 1);
    if (key == "mode") {
      v.mode_ = parse_unit_mode(value);
      have_mode = true;
    } else if (key == "lid") {
      v.lid_augmented_ = value == "1";
      have_lid = true;
    }
  }
  if (!have_mode || !have_lid) throw DataError(path.string() + ":1: header needs mode= and lid=");
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) throw DataError(path.string() + ":" + std::to_string(line_no) + ": empty token");
    const Lang lang = lang_of_surface(line);
    v.add(line, lang);
  }
  v.finalize();
  return v;
}

const Token& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<int> Vocabulary::find(std::string_view surface) const {
  auto it = index_.find(std::string(surface));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenClass Vocabulary::token_class(int id) const {
  const auto& t = token(id);
  if (t.lang != Lang::EN) return TokenClass::Closer;
  if (mode_ == UnitMode::CharSubword && !t.surface.empty() && t.surface[0] == BpeModel::kBoundary) {
    return TokenClass::WordStart;
  }
  return TokenClass::WordPiece;
}

bool Vocabulary::operator==(const Vocabulary& other) const {
  if (mode_ != other.mode_ || lid_augmented_ != other.lid_augmented_ || size() != other.size()) return false;
  for (int i = 0; i < size(); ++i) {
    if (tokens_[i].surface != other.tokens_[i].surface || tokens_[i].lang != other.tokens_[i].lang) return false;
  }
  return true;
}

std::vector<std::string> collect_chinese_chars(std::span<const std::string> sentences) {
  std::set<char32_t> chars;
  for (const auto& s : sentences) {
    for (char32_t cp : utf8_decode(s)) {
      if (classify_script(cp) == Script::CH) chars.insert(cp);
    }
  }
  std::vector<std::string> out;
  for (char32_t cp : chars) out.push_back(utf8_encode(cp));
  return out;
}

// ---------------------------------------------------------------------------
// Transcripts

SegmentedTranscript encode_transcript(const Vocabulary& vocab, const BpeModel* bpe, std::string_view sentence) {
  if (vocab.mode() == UnitMode::CharSubword && bpe == nullptr) {
    throw std::invalid_argument("encode_transcript: char-subword mode requires a BPE model");
  }
  const auto units = split_units(sentence);
  if (units.empty()) throw std::invalid_argument("encode_transcript: empty sentence");

  SegmentedTranscript out;
  auto emit = [&](std::optional<int> id, Lang tag) {
    if (id) {
      out.ids.push_back(*id);
    } else {
      out.ids.push_back(vocab.unk());
      ++out.unk_count;
    }
    out.langs.push_back(tag);
  };

  std::optional<UnitKind> run;  // language of the current same-language run
  UnitKind prev = UnitKind::OTHER;
  bool have_prev = false;
  for (const auto& unit : units) {
    if (vocab.lid_augmented() && unit.kind != UnitKind::OTHER && run != unit.kind) {
      emit(unit.kind == UnitKind::CH ? vocab.lid_ch() : vocab.lid_en(), Lang::SPECIAL);
      run = unit.kind;
    }
    switch (unit.kind) {
      case UnitKind::CH:
        emit(vocab.find(unit.text), Lang::CH);
        break;
      case UnitKind::EN:
        if (vocab.mode() == UnitMode::CharChar) {
          if (have_prev && prev == UnitKind::EN) emit(vocab.space(), Lang::SPECIAL);
          for (char c : unit.text) emit(vocab.find(std::string(1, c)), Lang::EN);
        } else {
          for (const auto& piece : segment_word(*bpe, unit.text)) {
            emit(piece == kUnkSurface ? std::nullopt : vocab.find(piece), Lang::EN);
          }
        }
        break;
      case UnitKind::OTHER:
        emit(std::nullopt, Lang::SPECIAL);
        break;
    }
    prev = unit.kind;
    have_prev = true;
  }
  return out;
}

std::string detokenize(const Vocabulary& vocab, std::span<const int> ids) {
  std::vector<std::string> units;
  std::string word;
  bool open = false;
  auto close = [&] {
    if (open && !word.empty()) units.push_back(word);
    word.clear();
    open = false;
  };
  for (int id : ids) {
    const auto& t = vocab.token(id);
    if (id == vocab.sos() || id == vocab.eos() || vocab.is_lid(id) || id == vocab.space()) {
      close();
    } else if (id == vocab.unk()) {
      close();
      units.emplace_back(kUnkSurface);
    } else if (t.lang == Lang::CH) {
      close();
      units.push_back(t.surface);
    } else if (vocab.token_class(id) == TokenClass::WordStart) {
      close();
      word = t.surface.substr(1);
      open = true;
    } else {
      word += t.surface;
      open = true;
    }
  }
  close();
  std::string out;
  for (const auto& u : units) {
    if (!out.empty()) out.push_back(' ');
    out += u;
  }
  return out;
}

// ---------------------------------------------------------------------------
// LID supervision

std::vector<FrameLid> lid_frames(const Vocabulary& vocab, std::span<const int> frame_owner,
                                 std::size_t pooled_length) {
  if (frame_owner.size() != pooled_length) {
    throw std::invalid_argument("lid_frames: alignment covers " + std::to_string(frame_owner.size()) +
                                " frames, expected " + std::to_string(pooled_length));
  }
  std::vector<FrameLid> out;
  out.reserve(pooled_length);
  for (int owner : frame_owner) {
    if (owner < 0) {
      out.push_back(FrameLid::SIL);
      continue;
    }
    switch (vocab.token(owner).lang) {
      case Lang::CH: out.push_back(FrameLid::CH); break;
      case Lang::EN: out.push_back(FrameLid::EN); break;
      case Lang::SPECIAL: out.push_back(FrameLid::SIL); break;
    }
  }
  return out;
}

std::vector<FrameLid> pool_frame_lid(std::span<const FrameLid> frames, int factor) {
  if (factor < 1) throw std::invalid_argument("pool_frame_lid: factor must be positive");
  const std::size_t f = static_cast<std::size_t>(factor);
  std::vector<FrameLid> out;
  for (std::size_t start = 0; start + f <= frames.size(); start += f) {
    std::array<int, kNumFrameLid> votes{};
    for (std::size_t t = start; t < start + f; ++t) ++votes[static_cast<std::size_t>(frames[t])];
    const auto best = std::max_element(votes.begin(), votes.end()) - votes.begin();
    out.push_back(static_cast<FrameLid>(best));
  }
  return out;
}

}  // namespace csasr
