#include "csasr/score.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "csasr/textproc.hpp"

namespace csasr {

ScoringUnits mixed_tokenize(std::string_view sentence) {
  ScoringUnits out;
  std::string word;
  auto flush = [&] {
    while (!word.empty() && word.back() == '\'') word.pop_back();
    if (!word.empty()) {
      out.units.push_back(word);
      out.langs.push_back(Lang::EN);
    }
    word.clear();
  };
  const std::vector<char32_t> cps = utf8_decode(sentence);
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const char32_t cp = cps[i];
    if (cp == U'<' && std::u32string_view(cps.data() + i, cps.size() - i).starts_with(U"<unk>")) {
      flush();
      out.units.emplace_back(kUnkSurface);
      out.langs.push_back(Lang::SPECIAL);
      i += 4;
      continue;
    }
    const Script s = classify_script(cp);
    if (s == Script::EN) {
      word.push_back(static_cast<char>(cp));
    } else if (cp == U'\'' && !word.empty()) {
      word.push_back('\'');
    } else {
      flush();
      if (s == Script::CH) {
        out.units.push_back(utf8_encode(cp));
        out.langs.push_back(Lang::CH);
      } else if (cp != U' ' && cp != U'\t' && cp != U'\n' && cp != U'\r') {
        out.units.push_back(utf8_encode(cp));
        out.langs.push_back(Lang::SPECIAL);
      }
    }
  }
  flush();
  return out;
}

Alignment align(std::span<const std::string> ref, std::span<const std::string> hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  // d[i][j]: distance between ref[i:] and hyp[j:].
  std::vector<int> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> int& { return d[i * (m + 1) + j]; };
  for (std::size_t i = n + 1; i-- > 0;) {
    for (std::size_t j = m + 1; j-- > 0;) {
      if (i == n) {
        at(i, j) = static_cast<int>(m - j);
      } else if (j == m) {
        at(i, j) = static_cast<int>(n - i);
      } else {
        const int diag = at(i + 1, j + 1) + (ref[i] == hyp[j] ? 0 : 1);
        at(i, j) = std::min({diag, at(i + 1, j) + 1, at(i, j + 1) + 1});
      }
    }
  }
  Alignment a;
  std::size_t i = 0, j = 0;
  while (i < n || j < m) {
    if (i < n && j < m) {
      const bool same = ref[i] == hyp[j];
      if (at(i + 1, j + 1) + (same ? 0 : 1) == at(i, j)) {
        a.ops.push_back(same ? EditOp::Match : EditOp::Sub);
        if (!same) ++a.counts.sub;
        ++i;
        ++j;
        continue;
      }
    }
    if (i < n && at(i + 1, j) + 1 == at(i, j)) {
      a.ops.push_back(EditOp::Del);
      ++a.counts.del;
      ++i;
    } else {
      a.ops.push_back(EditOp::Ins);
      ++a.counts.ins;
      ++j;
    }
  }
  return a;
}

EditCounts edit_distance(std::span<const std::string> ref, std::span<const std::string> hyp) {
  return align(ref, hyp).counts;
}

double RateCounts::rate() const {
  if (ref_units > 0) return static_cast<double>(errors()) / static_cast<double>(ref_units);
  return errors() == 0 ? 0.0 : std::numeric_limits<double>::infinity();
}

void RateCounts::add(const RateCounts& o) {
  ref_units += o.ref_units;
  sub += o.sub;
  del += o.del;
  ins += o.ins;
}

ScoreReport mer_ter_report(std::span<const ScoringPair> pairs) {
  ScoreReport r;
  bool have_ter = !pairs.empty();
  for (const auto& p : pairs) have_ter = have_ter && p.ref_tokens && p.hyp_tokens;
  if (have_ter) r.ter = RateCounts{};

  for (const auto& p : pairs) {
    const auto ref = mixed_tokenize(p.ref);
    const auto hyp = mixed_tokenize(p.hyp);
    const auto al = align(ref.units, hyp.units);
    RateCounts utt;
    utt.ref_units = static_cast<long>(ref.units.size());
    utt.sub = al.counts.sub;
    utt.del = al.counts.del;
    utt.ins = al.counts.ins;
    r.mer.add(utt);

    for (Lang l : ref.langs) {
      if (l == Lang::CH) ++r.ch.ref_units;
      if (l == Lang::EN) ++r.en.ref_units;
    }
    std::size_t i = 0, j = 0;
    auto bucket = [&](Lang l) -> RateCounts* {
      if (l == Lang::CH) return &r.ch;
      if (l == Lang::EN) return &r.en;
      return nullptr;
    };
    for (EditOp op : al.ops) {
      switch (op) {
        case EditOp::Match:
          ++i;
          ++j;
          break;
        case EditOp::Sub:
          if (auto* b = bucket(ref.langs[i])) ++b->sub;
          ++i;
          ++j;
          break;
        case EditOp::Del:
          if (auto* b = bucket(ref.langs[i])) ++b->del;
          ++i;
          break;
        case EditOp::Ins:
          if (auto* b = bucket(hyp.langs[j])) ++b->ins;
          ++j;
          break;
      }
    }
    if (have_ter) {
      const auto c = edit_distance(*p.ref_tokens, *p.hyp_tokens);
      r.ter->add(RateCounts{static_cast<long>(p.ref_tokens->size()), c.sub, c.del, c.ins});
    }
    r.per_utterance.push_back({p.id, utt});
  }
  r.utterances = pairs.size();
  return r;
}

std::vector<ScoringPair> pair_by_id(const std::map<std::string, std::string>& refs,
                                    const std::map<std::string, std::string>& hyps) {
  std::vector<ScoringPair> out;
  for (const auto& [id, ref] : refs) {
    auto it = hyps.find(id);
    if (it == hyps.end()) throw DataError("utterance '" + id + "' has a reference but no hypothesis");
    out.push_back({id, ref, it->second, std::nullopt, std::nullopt});
  }
  for (const auto& [id, hyp] : hyps) {
    if (!refs.count(id)) throw DataError("utterance '" + id + "' has a hypothesis but no reference");
  }
  return out;
}

namespace {

std::string pct(double rate) {
  if (!std::isfinite(rate)) return "n/a";
  return fmt::format("{:.2f}%", 100.0 * rate);
}

nlohmann::json counts_json(const RateCounts& c) {
  nlohmann::json j = {{"ref", c.ref_units}, {"sub", c.sub}, {"del", c.del}, {"ins", c.ins}, {"errors", c.errors()}};
  const double r = c.rate();
  j["rate"] = std::isfinite(r) ? nlohmann::json(r) : nlohmann::json(nullptr);
  return j;
}

}  // namespace

std::string format_report(const ScoreReport& r) {
  std::string out = fmt::format("utterances: {}\n", r.utterances);
  out += fmt::format("{:<6} {:>8} {:>7} {:>7} {:>7} {:>7} {:>9}\n", "metric", "ref", "sub", "del", "ins", "errors", "rate");
  auto row = [&](const char* name, const RateCounts& c) {
    out += fmt::format("{:<6} {:>8} {:>7} {:>7} {:>7} {:>7} {:>9}\n", name, c.ref_units, c.sub, c.del, c.ins,
                       c.errors(), pct(c.rate()));
  };
  row("MER", r.mer);
  row("CH", r.ch);
  row("EN", r.en);
  if (r.ter) row("TER", *r.ter);
  return out;
}

std::string report_json(const ScoreReport& r, bool include_utterances) {
  nlohmann::json j = {{"utterances", r.utterances}, {"mer", counts_json(r.mer)}, {"ch", counts_json(r.ch)},
                      {"en", counts_json(r.en)}};
  if (r.ter) j["ter"] = counts_json(*r.ter);
  if (include_utterances) {
    auto& arr = j["per_utterance"] = nlohmann::json::array();
    for (const auto& u : r.per_utterance) arr.push_back({{"id", u.id}, {"mixed", counts_json(u.mixed)}});
  }
  return j.dump();
}

}  // namespace csasr
