#include "csasr/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "csasr/textproc.hpp"

namespace csasr {

namespace fs = std::filesystem;

void CorpusSpec::validate() const {
  if (n_ch_chars < 2 || n_en_words < 2) throw std::invalid_argument("corpus needs at least 2 units per language");
  if (feature_dim < 1) throw std::invalid_argument("feature_dim must be positive");
  if (min_frames_per_token < 1 || max_frames_per_token < min_frames_per_token) {
    throw std::invalid_argument("frames_per_token range must satisfy 1 <= min <= max");
  }
  if (!(noise_std >= 0.0)) throw std::invalid_argument("noise_std must be non-negative");
  if (!(switch_prob >= 0.0 && switch_prob <= 1.0)) throw std::invalid_argument("switch_prob must lie in [0, 1]");
  if (min_words < 1 || max_words < min_words) throw std::invalid_argument("words-per-utterance range is invalid");
  if (min_word_letters < 2 || max_word_letters < min_word_letters) {
    throw std::invalid_argument("word length range is invalid");
  }
  if (n_train < 0 || n_dev < 0 || n_test < 0) throw std::invalid_argument("split sizes must be non-negative");
  if (n_ch_chars > 0x9FA5 - 0x4E00) throw std::invalid_argument("too many Chinese characters requested");
}

namespace {

using Rng = std::mt19937_64;

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Eigen::MatrixXd gaussian(Rng& rng, int rows, int cols) {
  std::normal_distribution<double> d(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

// Successor weights per word, peaked on a few favourites, never self.
std::vector<std::discrete_distribution<int>> markov_table(Rng& rng, int n) {
  std::normal_distribution<double> d(0.0, 1.5);
  std::vector<std::discrete_distribution<int>> table;
  for (int i = 0; i < n; ++i) {
    std::vector<double> w(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) w[static_cast<std::size_t>(j)] = j == i ? 0.0 : std::exp(d(rng));
    table.emplace_back(w.begin(), w.end());
  }
  return table;
}

struct Generator {
  const CorpusSpec& spec;
  Corpus& corpus;
  Rng& rng;
  std::vector<std::discrete_distribution<int>> ch_next, en_next;

  void emit(Eigen::MatrixXd& frames, std::vector<FrameLid>& lid, const Eigen::VectorXd& sig, FrameLid tag, int dur) {
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int f = 0; f < dur; ++f) {
      const auto row = frames.rows();
      frames.conservativeResize(row + 1, Eigen::NoChange);
      for (int k = 0; k < spec.feature_dim; ++k) {
        frames(row, k) = sig(k) + (spec.noise_std > 0.0 ? spec.noise_std * noise(rng) : 0.0);
      }
      lid.push_back(tag);
    }
  }

  Utterance make(const std::string& id) {
    const auto& sig = corpus.signatures;
    bool english = spec.start_lang == StartLang::EN ||
                   (spec.start_lang == StartLang::Random && std::bernoulli_distribution(0.5)(rng));
    const int n_words = uniform_int(rng, spec.min_words, spec.max_words);
    std::bernoulli_distribution switch_lang(spec.switch_prob);

    Eigen::MatrixXd frames(0, spec.feature_dim);
    std::vector<FrameLid> lid;
    std::vector<std::string> units;
    const Eigen::VectorXd silence = Eigen::VectorXd::Zero(spec.feature_dim);
    auto duration = [&] { return uniform_int(rng, spec.min_frames_per_token, spec.max_frames_per_token); };

    emit(frames, lid, silence, FrameLid::SIL, uniform_int(rng, 1, 3));
    int prev = -1;
    for (int w = 0; w < n_words; ++w) {
      if (w > 0 && switch_lang(rng)) {
        english = !english;
        prev = -1;
      }
      if (english) {
        const int word = prev < 0 ? uniform_int(rng, 0, spec.n_en_words - 1) : en_next[static_cast<std::size_t>(prev)](rng);
        const std::string& text = corpus.en_words[static_cast<std::size_t>(word)];
        for (std::size_t i = 0; i < text.size(); ++i) {
          const int letter = text[i] - 'a';
          const Eigen::VectorXd s = i == 0 ? sig.en_initial.row(letter).transpose() : sig.en_internal.row(letter).transpose();
          emit(frames, lid, s, FrameLid::EN, duration());
        }
        units.push_back(text);
        prev = word;
      } else {
        const int ch = prev < 0 ? uniform_int(rng, 0, spec.n_ch_chars - 1) : ch_next[static_cast<std::size_t>(prev)](rng);
        emit(frames, lid, sig.ch.row(ch).transpose(), FrameLid::CH, duration());
        units.push_back(sig.ch_chars[static_cast<std::size_t>(ch)]);
        prev = ch;
      }
    }
    emit(frames, lid, silence, FrameLid::SIL, uniform_int(rng, 1, 3));

    Utterance u;
    u.id = id;
    u.features = frames.cast<float>();
    for (std::size_t i = 0; i < units.size(); ++i) u.transcript += (i ? " " : "") + units[i];
    u.frame_lid = std::move(lid);
    return u;
  }
};

std::string pad_index(int i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 5 ? 5 - s.size() : 0, '0') + s;
}

}  // namespace

Corpus generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Corpus corpus;
  auto& sig = corpus.signatures;

  std::set<char32_t> picked;
  while (static_cast<int>(picked.size()) < spec.n_ch_chars) {
    picked.insert(static_cast<char32_t>(uniform_int(rng, 0x4E00, 0x9FA5)));
  }
  for (char32_t cp : picked) sig.ch_chars.push_back(utf8_encode(cp));

  std::set<std::string> words;
  while (static_cast<int>(words.size()) < spec.n_en_words) {
    const int len = uniform_int(rng, spec.min_word_letters, spec.max_word_letters);
    std::string w;
    while (static_cast<int>(w.size()) < len) {
      const char c = static_cast<char>('a' + uniform_int(rng, 0, 25));
      if (w.empty() || w.back() != c) w.push_back(c);
    }
    words.insert(w);
  }
  corpus.en_words.assign(words.begin(), words.end());

  sig.ch = gaussian(rng, spec.n_ch_chars, spec.feature_dim);
  sig.en_initial = gaussian(rng, 26, spec.feature_dim);
  sig.en_internal = gaussian(rng, 26, spec.feature_dim);

  Generator gen{spec, corpus, rng, markov_table(rng, spec.n_ch_chars), markov_table(rng, spec.n_en_words)};
  for (int i = 0; i < spec.n_train; ++i) corpus.train.push_back(gen.make("train-" + pad_index(i)));
  for (int i = 0; i < spec.n_dev; ++i) corpus.dev.push_back(gen.make("dev-" + pad_index(i)));
  for (int i = 0; i < spec.n_test; ++i) corpus.test.push_back(gen.make("test-" + pad_index(i)));
  return corpus;
}

std::string SignatureTable::recover_transcript(const Eigen::MatrixXf& features) const {
  // Label space: 0 silence, 1..n_ch Chinese, then 26 initial, then 26 internal letters.
  const auto n_ch = ch.rows();
  Eigen::MatrixXd all(1 + n_ch + 52, ch.cols());
  all.row(0).setZero();
  all.middleRows(1, n_ch) = ch;
  all.middleRows(1 + n_ch, 26) = en_initial;
  all.middleRows(1 + n_ch + 26, 26) = en_internal;

  std::vector<std::string> units;
  Eigen::Index prev = -1;
  for (Eigen::Index t = 0; t < features.rows(); ++t) {
    const Eigen::VectorXd x = features.row(t).cast<double>().transpose();
    Eigen::Index best = 0;
    (all.rowwise() - x.transpose()).rowwise().squaredNorm().minCoeff(&best);
    if (best == prev) continue;
    prev = best;
    if (best == 0) continue;
    if (best <= n_ch) {
      units.push_back(ch_chars[static_cast<std::size_t>(best - 1)]);
    } else if (best <= n_ch + 26) {
      units.emplace_back(1, static_cast<char>('a' + (best - 1 - n_ch)));
    } else {
      const char c = static_cast<char>('a' + (best - 1 - n_ch - 26));
      if (units.empty()) units.emplace_back();
      units.back().push_back(c);
    }
  }
  std::string out;
  for (std::size_t i = 0; i < units.size(); ++i) out += (i ? " " : "") + units[i];
  return out;
}

// ---------------------------------------------------------------------------
// Files

namespace {

static_assert(std::endian::native == std::endian::little, "feature files assume a little-endian host");

}  // namespace

void write_features(const fs::path& path, const Eigen::MatrixXf& features) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const std::int32_t T = static_cast<std::int32_t>(features.rows());
  const std::int32_t d = static_cast<std::int32_t>(features.cols());
  out.write(reinterpret_cast<const char*>(&T), 4);
  out.write(reinterpret_cast<const char*>(&d), 4);
  const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = features;
  out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(sizeof(float) * rm.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

Eigen::MatrixXf read_features(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature file " + path.string());
  std::int32_t T = 0, d = 0;
  in.read(reinterpret_cast<char*>(&T), 4);
  in.read(reinterpret_cast<char*>(&d), 4);
  if (!in || T < 0 || d <= 0) throw DataError("bad feature header in " + path.string());
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(T, d);
  in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(sizeof(float) * rm.size()));
  if (!in) throw DataError("truncated feature file " + path.string());
  return rm;
}

std::string frame_lid_string(const std::vector<FrameLid>& lid) {
  std::string s;
  s.reserve(lid.size());
  for (auto l : lid) s.push_back(frame_lid_code(l));
  return s;
}

std::vector<FrameLid> parse_frame_lid(const std::string& s) {
  std::vector<FrameLid> out;
  out.reserve(s.size());
  for (char c : s) out.push_back(frame_lid_from_code(c));
  return out;
}

void write_manifest(const std::vector<Utterance>& utts, const fs::path& manifest, const fs::path& feature_dir) {
  fs::create_directories(feature_dir);
  if (manifest.has_parent_path()) fs::create_directories(manifest.parent_path());
  std::ofstream out(manifest);
  if (!out) throw DataError("cannot write manifest " + manifest.string());
  const fs::path base = manifest.has_parent_path() ? manifest.parent_path() : fs::path(".");
  for (const auto& u : utts) {
    const fs::path feat = feature_dir / (u.id + ".feat");
    write_features(feat, u.features);
    nlohmann::json rec = {{"id", u.id},
                          {"feature_path", fs::proximate(feat, base).generic_string()},
                          {"transcript", u.transcript},
                          {"frame_lid", frame_lid_string(u.frame_lid)}};
    out << rec.dump() << '\n';
  }
  if (!out) throw DataError("write failed for " + manifest.string());
}

std::vector<Utterance> load_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot open manifest " + manifest.string());
  const fs::path base = manifest.has_parent_path() ? manifest.parent_path() : fs::path(".");
  std::vector<Utterance> utts;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = manifest.string() + ":" + std::to_string(lineno);
    Utterance u;
    fs::path feat;
    try {
      const auto rec = nlohmann::json::parse(line);
      u.id = rec.at("id").get<std::string>();
      u.transcript = rec.at("transcript").get<std::string>();
      u.frame_lid = parse_frame_lid(rec.at("frame_lid").get<std::string>());
      feat = rec.at("feature_path").get<std::string>();
    } catch (const std::exception& e) {
      throw DataError("malformed manifest record at " + where + ": " + e.what());
    }
    if (feat.is_relative()) feat = base / feat;
    if (!fs::exists(feat)) throw DataError("utterance '" + u.id + "': feature file " + feat.string() + " is missing");
    u.features = read_features(feat);
    if (static_cast<Eigen::Index>(u.frame_lid.size()) != u.features.rows()) {
      throw DataError("utterance '" + u.id + "': frame_lid has " + std::to_string(u.frame_lid.size()) +
                      " labels for " + std::to_string(u.features.rows()) + " frames (" + where + ")");
    }
    utts.push_back(std::move(u));
  }
  return utts;
}

void write_word_list(const fs::path& path, const std::vector<std::string>& words) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& w : words) out << w << '\n';
}

std::vector<std::string> read_word_list(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open word list " + path.string());
  std::vector<std::string> words;
  for (std::string line; std::getline(in, line);) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) words.push_back(line);
  }
  return words;
}

}  // namespace csasr
