#include <algorithm>
#include <filesystem>
#include <random>
#include <set>

#include "csasr/textproc.hpp"
#include "doctest.h"

using namespace csasr;

namespace {

std::string random_word(std::mt19937_64& rng, std::size_t min_len, std::size_t max_len) {
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::uniform_int_distribution<int> letter(0, 25);
  std::string w;
  const auto n = len(rng);
  for (std::size_t i = 0; i < n; ++i) w.push_back(static_cast<char>('a' + letter(rng)));
  return w;
}

BpeModel like_model() {
  return BpeModel::from_parts({}, {"_", "e", "i", "k", "l", "_li", "ke", "_like"});
}

}  // namespace

TEST_CASE("classify_script") {
  CHECK(classify_script(U'我') == Script::CH);
  CHECK(classify_script(U'k') == Script::EN);
  CHECK(classify_script(U'K') == Script::EN);
  CHECK(classify_script(U'3') == Script::OTHER);
  CHECK(classify_script(U'\'') == Script::OTHER);
}

TEST_CASE("normalize_sentence separates units and lowercases") {
  CHECK(normalize_sentence("  我Like  这个 ") == "我 like 这 个");
  CHECK(normalize_sentence("don't  STOP") == "don't stop");
  CHECK(normalize_sentence("") == "");
}

TEST_CASE("train_bpe hand-derived merges") {
  // (_,a) occurs 3 times, then (_a,a) twice.
  const auto model = train_bpe({{"_aa", 2}, {"_ab", 1}}, 3 + 2);
  REQUIRE(model.merges.size() == 2);
  CHECK(model.merges[0] == std::pair<std::string, std::string>{"_", "a"});
  CHECK(model.merges[1] == std::pair<std::string, std::string>{"_a", "a"});
  CHECK(model.inventory == std::vector<std::string>{"_", "a", "b", "_a", "_aa"});

  CHECK(train_bpe({{"_x", 5}}, 2).merges.empty());
}

TEST_CASE("train_bpe breaks ties toward the smallest pair") {
  const auto model = train_bpe({{"_ab", 2}, {"_cd", 2}}, 5 + 2);
  REQUIRE(model.merges.size() == 2);
  CHECK(model.merges[0] == std::pair<std::string, std::string>{"_", "a"});
  CHECK(model.merges[1] == std::pair<std::string, std::string>{"_", "c"});
}

TEST_CASE("train_bpe stops when no pair repeats") {
  const auto model = train_bpe({{"_ab", 1}}, 100);
  CHECK(model.merges.empty());
  CHECK(model.inventory.size() == 3);
}

TEST_CASE("train_bpe errors") {
  CHECK_THROWS_AS(train_bpe({}, 10), std::invalid_argument);
  CHECK_THROWS_AS(train_bpe({{"_abc", 3}}, 2), std::invalid_argument);
  CHECK_THROWS_AS(train_bpe({{"abc", 3}}, 10), std::invalid_argument);
}

TEST_CASE("train_bpe is deterministic and merged symbols concatenate their pair") {
  std::mt19937_64 rng(7);
  std::map<std::string, std::int64_t> freq;
  for (int i = 0; i < 200; ++i) freq["_" + random_word(rng, 2, 7)] += 1 + static_cast<int>(rng() % 5);
  const auto a = train_bpe(freq, 120);
  const auto b = train_bpe(freq, 120);
  CHECK(a.merges == b.merges);
  CHECK(a.inventory == b.inventory);
  CHECK(a.inventory.size() == 120);
  std::set<std::string> inv(a.inventory.begin(), a.inventory.end());
  for (const auto& [l, r] : a.merges) CHECK(inv.count(l + r) == 1);
}

TEST_CASE("segment_word greedy longest prefix") {
  CHECK(segment_word(BpeModel::from_parts({}, {"_ab", "_a", "b", "c"}), "abc") ==
        std::vector<std::string>{"_ab", "c"});
  CHECK(segment_word(BpeModel::from_parts({}, {"_a"}), "a") == std::vector<std::string>{"_a"});
  CHECK(segment_word(BpeModel::from_parts({}, {"_a", "b"}), "ab") == std::vector<std::string>{"_a", "b"});
  CHECK(segment_word(BpeModel::from_parts({}, {"_a", "b"}), "abz") ==
        std::vector<std::string>{"_a", "b", std::string(kUnkSurface)});
  CHECK_THROWS_AS(segment_word(BpeModel::from_parts({}, {"_a"}), ""), std::invalid_argument);
}

TEST_CASE("segmentation partitions every word and round-trips through the vocabulary") {
  std::mt19937_64 rng(11);
  std::vector<std::string> dictionary;
  std::map<std::string, std::int64_t> freq;
  for (int i = 0; i < 1000; ++i) {
    dictionary.push_back(random_word(rng, 1, 9));
    freq["_" + dictionary.back()] += 1;
  }
  const auto bpe = train_bpe(freq, 300);
  const auto vocab = Vocabulary::build(UnitMode::CharSubword, false, {}, &bpe);
  for (const auto& w : dictionary) {
    const auto pieces = segment_word(bpe, w);
    std::string joined;
    for (const auto& p : pieces) joined += p;
    CHECK(joined == "_" + w);
    const auto encoded = encode_transcript(vocab, &bpe, w);
    CHECK(encoded.unk_count == 0);
    CHECK(detokenize(vocab, encoded.ids) == w);
  }
}

TEST_CASE("BPE merges file round trip") {
  const auto path = std::filesystem::temp_directory_path() / "csasr_test_merges.txt";
  const auto model = train_bpe({{"_aa", 2}, {"_ab", 1}, {"_zq", 1}}, 7);
  model.save(path);
  const auto loaded = BpeModel::load(path);
  CHECK(loaded.merges == model.merges);
  CHECK(loaded.inventory == model.inventory);
  std::filesystem::remove(path);
}

TEST_CASE("vocabulary layout and file round trip") {
  const auto bpe = like_model();
  const auto vocab = Vocabulary::build(UnitMode::CharSubword, true, {"这", "我"}, &bpe);
  CHECK(vocab.token(vocab.sos()).surface == "<sos>");
  CHECK(vocab.lid_ch().has_value());
  CHECK_FALSE(vocab.space().has_value());
  CHECK(vocab.blank() == vocab.size());
  CHECK(vocab.token(*vocab.find("我")).lang == Lang::CH);
  CHECK(vocab.token_class(*vocab.find("_li")) == TokenClass::WordStart);
  CHECK(vocab.token_class(*vocab.find("ke")) == TokenClass::WordPiece);
  CHECK(vocab.token_class(*vocab.find("我")) == TokenClass::Closer);

  const auto path = std::filesystem::temp_directory_path() / "csasr_test_vocab.txt";
  vocab.save(path);
  CHECK(Vocabulary::load(path) == vocab);
  std::filesystem::remove(path);

  const auto cc = Vocabulary::build(UnitMode::CharChar, false, {"我"});
  CHECK(cc.space().has_value());
  CHECK(cc.find("'").has_value());
  CHECK(cc.find("z").has_value());
  CHECK_THROWS_AS(Vocabulary::build(UnitMode::CharSubword, false, {}), std::invalid_argument);
}

TEST_CASE("encode_transcript examples") {
  const auto bpe = like_model();
  const auto plain = Vocabulary::build(UnitMode::CharSubword, false, {"这", "我"}, &bpe);
  auto surfaces = [](const Vocabulary& v, const SegmentedTranscript& s) {
    std::vector<std::string> out;
    for (int id : s.ids) out.push_back(v.token(id).surface);
    return out;
  };

  const auto a = encode_transcript(plain, &bpe, "我 like 这");
  CHECK(surfaces(plain, a) == std::vector<std::string>{"我", "_like", "这"});
  CHECK(a.langs == std::vector<Lang>{Lang::CH, Lang::EN, Lang::CH});

  const auto lid = Vocabulary::build(UnitMode::CharSubword, true, {"这", "我"}, &bpe);
  const auto b = encode_transcript(lid, &bpe, "我 like 这");
  CHECK(surfaces(lid, b) == std::vector<std::string>{"CH", "我", "EN", "_like", "CH", "这"});
  CHECK(b.ids.size() == b.langs.size());

  const auto cc = Vocabulary::build(UnitMode::CharChar, false, {"我"});
  CHECK(surfaces(cc, encode_transcript(cc, nullptr, "我")) == std::vector<std::string>{"我"});
  CHECK(surfaces(cc, encode_transcript(cc, nullptr, "我 ok hi")) ==
        std::vector<std::string>{"我", "o", "k", "<space>", "h", "i"});

  const auto unk = encode_transcript(cc, nullptr, "我 你 3");
  CHECK(unk.unk_count == 2);

  CHECK_THROWS_AS(encode_transcript(cc, nullptr, "   "), std::invalid_argument);
  CHECK_THROWS_AS(encode_transcript(plain, nullptr, "我"), std::invalid_argument);
}

TEST_CASE("detokenize examples") {
  const auto bpe = like_model();
  const auto vocab = Vocabulary::build(UnitMode::CharSubword, true, {"这", "我"}, &bpe);
  auto ids = [&](std::initializer_list<const char*> surfaces) {
    std::vector<int> out;
    for (const char* s : surfaces) out.push_back(*vocab.find(s));
    return out;
  };
  CHECK(detokenize(vocab, ids({"我", "_li", "ke", "这"})) == "我 like 这");
  CHECK(detokenize(vocab, {}) == "");
  CHECK(detokenize(vocab, ids({"CH", "我"})) == "我");
  CHECK(detokenize(vocab, ids({"<sos>", "_li", "_li", "ke", "<eos>"})) == "li like");
  CHECK(detokenize(vocab, ids({"我", "<unk>"})) == "我 <unk>");
}

TEST_CASE("encode/detokenize inverse and LID count on random mixed sentences") {
  std::mt19937_64 rng(5);
  const std::vector<std::string> ch = {"我", "你", "这", "个", "是", "好"};
  std::vector<std::string> en;
  std::map<std::string, std::int64_t> freq;
  for (int i = 0; i < 40; ++i) {
    en.push_back(random_word(rng, 2, 6));
    freq["_" + en.back()] += 3;
  }
  const auto bpe = train_bpe(freq, 60);
  for (auto mode : {UnitMode::CharChar, UnitMode::CharSubword}) {
    const auto vocab = Vocabulary::build(mode, true, ch, &bpe);
    for (int n = 0; n < 200; ++n) {
      const int len = 1 + static_cast<int>(rng() % 8);
      std::string sentence;
      int switches = 0;
      int prev = -1;
      for (int k = 0; k < len; ++k) {
        const int lang = static_cast<int>(rng() % 2);
        if (prev >= 0 && lang != prev) ++switches;
        prev = lang;
        if (!sentence.empty()) sentence += ' ';
        sentence += lang == 0 ? ch[rng() % ch.size()] : en[rng() % en.size()];
      }
      const auto enc = encode_transcript(vocab, &bpe, sentence);
      CHECK(detokenize(vocab, enc.ids) == sentence);
      const auto lids = std::count_if(enc.ids.begin(), enc.ids.end(), [&](int id) { return vocab.is_lid(id); });
      CHECK(lids == switches + 1);
    }
  }
}

TEST_CASE("lid_frames and pooling") {
  const auto bpe = like_model();
  const auto vocab = Vocabulary::build(UnitMode::CharSubword, false, {"我"}, &bpe);
  const int wo = *vocab.find("我");
  const int like = *vocab.find("_like");
  const std::vector<int> owners{wo, wo, like, like};
  CHECK(lid_frames(vocab, owners, 4) == std::vector<FrameLid>{FrameLid::CH, FrameLid::CH, FrameLid::EN, FrameLid::EN});
  CHECK(lid_frames(vocab, std::vector<int>{-1, -1}, 2) == std::vector<FrameLid>{FrameLid::SIL, FrameLid::SIL});
  CHECK(lid_frames(vocab, std::vector<int>{-1, wo, wo, like}, 4) ==
        std::vector<FrameLid>{FrameLid::SIL, FrameLid::CH, FrameLid::CH, FrameLid::EN});
  CHECK_THROWS_AS(lid_frames(vocab, owners, 3), std::invalid_argument);

  using F = FrameLid;
  const std::vector<F> raw{F::SIL, F::CH, F::CH, F::CH, F::EN, F::EN, F::CH, F::EN, F::SIL};
  CHECK(pool_frame_lid(raw, 2) == std::vector<F>{F::CH, F::CH, F::EN, F::CH});
  CHECK(pool_frame_lid(raw, 4) == std::vector<F>{F::CH, F::EN});
}
