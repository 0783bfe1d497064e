#include <filesystem>
#include <fstream>
#include <set>

#include "csasr/synthdata.hpp"
#include "csasr/textproc.hpp"
#include "doctest.h"

using namespace csasr;
namespace fs = std::filesystem;

namespace {

CorpusSpec small_spec() {
  CorpusSpec s;
  s.n_ch_chars = 10;
  s.n_en_words = 8;
  s.feature_dim = 6;
  s.n_train = 40;
  s.n_dev = 10;
  s.n_test = 10;
  s.seed = 17;
  return s;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("csasr_synth_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("zero noise, one token, three frames") {
  CorpusSpec s = small_spec();
  s.noise_std = 0.0;
  s.min_words = s.max_words = 1;
  s.min_frames_per_token = s.max_frames_per_token = 3;
  s.start_lang = StartLang::CH;
  s.n_train = 5;
  const auto c = generate_corpus(s);
  for (const auto& u : c.train) {
    const auto& lid = u.frame_lid;
    std::vector<Eigen::Index> speech;
    for (std::size_t t = 0; t < lid.size(); ++t) {
      if (lid[t] == FrameLid::CH) speech.push_back(static_cast<Eigen::Index>(t));
    }
    REQUIRE(speech.size() == 3);
    std::size_t idx = 0;
    while (c.signatures.ch_chars[idx] != u.transcript) ++idx;
    for (auto t : speech) {
      CHECK((u.features.row(t).cast<double>() - c.signatures.ch.row(static_cast<Eigen::Index>(idx))).norm() < 1e-6);
    }
    // Silence frames are exactly zero without noise.
    CHECK(u.features.row(0).norm() == 0.0f);
  }
}

TEST_CASE("determinism and split disjointness") {
  const auto a = generate_corpus(small_spec());
  const auto b = generate_corpus(small_spec());
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].transcript == b.train[i].transcript);
    CHECK(a.train[i].features == b.train[i].features);
  }
  std::set<std::string> ids;
  std::size_t total = 0;
  for (const auto* split : {&a.train, &a.dev, &a.test}) {
    for (const auto& u : *split) {
      ids.insert(u.id);
      ++total;
      CHECK(static_cast<Eigen::Index>(u.frame_lid.size()) == u.features.rows());
      CHECK(normalize_sentence(u.transcript) == u.transcript);
    }
  }
  CHECK(ids.size() == total);
  auto other = small_spec();
  other.seed = 18;
  CHECK(generate_corpus(other).train[0].features != a.train[0].features);
}

TEST_CASE("no switching keeps transcripts monolingual") {
  CorpusSpec s = small_spec();
  s.switch_prob = 0.0;
  s.start_lang = StartLang::CH;
  for (const auto& u : generate_corpus(s).train) {
    for (char32_t cp : utf8_decode(u.transcript)) CHECK(classify_script(cp) != Script::EN);
  }
  s.start_lang = StartLang::EN;
  for (const auto& u : generate_corpus(s).train) {
    for (char32_t cp : utf8_decode(u.transcript)) CHECK(classify_script(cp) != Script::CH);
  }
}

TEST_CASE("noise-free corpora are recovered by nearest signature") {
  CorpusSpec s = small_spec();
  s.noise_std = 0.0;
  s.switch_prob = 0.5;
  const auto c = generate_corpus(s);
  for (const auto& u : c.train) CHECK(c.signatures.recover_transcript(u.features) == u.transcript);
  bool mixed = false;
  for (const auto& u : c.train) {
    bool ch = false, en = false;
    for (char32_t cp : utf8_decode(u.transcript)) {
      ch |= classify_script(cp) == Script::CH;
      en |= classify_script(cp) == Script::EN;
    }
    mixed |= ch && en;
  }
  CHECK(mixed);
}

TEST_CASE("manifest round trip and errors") {
  const auto dir = scratch("manifest");
  const auto c = generate_corpus(small_spec());
  write_manifest(c.dev, dir / "dev.jsonl", dir / "feats");
  const auto back = load_manifest(dir / "dev.jsonl");
  REQUIRE(back.size() == c.dev.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == c.dev[i].id);
    CHECK(back[i].transcript == c.dev[i].transcript);
    CHECK(back[i].frame_lid == c.dev[i].frame_lid);
    CHECK(back[i].features == c.dev[i].features);
  }

  std::ofstream(dir / "empty.jsonl").close();
  CHECK(load_manifest(dir / "empty.jsonl").empty());

  fs::remove(dir / "feats" / (c.dev[3].id + ".feat"));
  try {
    load_manifest(dir / "dev.jsonl");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(c.dev[3].id) != std::string::npos);
  }

  std::ofstream(dir / "bad.jsonl") << "{\"id\": \"x\"}\n";
  try {
    load_manifest(dir / "bad.jsonl");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":1") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("spec validation") {
  CorpusSpec s = small_spec();
  s.switch_prob = 1.5;
  CHECK_THROWS_AS(generate_corpus(s), std::invalid_argument);
  s = small_spec();
  s.min_frames_per_token = 0;
  CHECK_THROWS_AS(generate_corpus(s), std::invalid_argument);
  s = small_spec();
  s.noise_std = -1;
  CHECK_THROWS_AS(generate_corpus(s), std::invalid_argument);
}
