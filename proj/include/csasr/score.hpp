#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "csasr/common.hpp"

namespace csasr {

struct ScoringUnits {
  std::vector<std::string> units;
  std::vector<Lang> langs;  // SPECIAL for anything neither Chinese nor English
};

// Chinese characters become single units; maximal runs of English letters
// (with inner apostrophes) become word units; other non-space characters
// stand alone.
ScoringUnits mixed_tokenize(std::string_view sentence);

enum class EditOp { Match, Sub, Del, Ins };

struct EditCounts {
  int sub = 0;
  int del = 0;
  int ins = 0;
  int total() const { return sub + del + ins; }
  bool operator==(const EditCounts&) const = default;
};

struct Alignment {
  EditCounts counts;
  // One op per step; Match/Sub/Del consume a reference unit, Match/Sub/Ins a hypothesis unit.
  std::vector<EditOp> ops;
};

// Unit-cost Levenshtein alignment. Among optimal alignments the one chosen
// prefers, scanning left to right, match/substitution, then deletion, then insertion.
Alignment align(std::span<const std::string> ref, std::span<const std::string> hyp);
EditCounts edit_distance(std::span<const std::string> ref, std::span<const std::string> hyp);

struct RateCounts {
  long ref_units = 0;
  long sub = 0, del = 0, ins = 0;
  long errors() const { return sub + del + ins; }
  // errors / ref_units; 0 for an empty reference without errors, +inf otherwise.
  double rate() const;
  void add(const RateCounts& o);
};

struct ScoringPair {
  std::string id;
  std::string ref;
  std::string hyp;
  // Model output tokens for TER, LID tokens already removed. Optional.
  std::optional<std::vector<std::string>> ref_tokens, hyp_tokens;
};

struct UtteranceScore {
  std::string id;
  RateCounts mixed;
};

struct ScoreReport {
  std::size_t utterances = 0;
  RateCounts mer;
  RateCounts ch;  // substitutions and deletions of Chinese reference units, insertions of Chinese hypothesis units
  RateCounts en;
  std::optional<RateCounts> ter;
  std::vector<UtteranceScore> per_utterance;
};

ScoreReport mer_ter_report(std::span<const ScoringPair> pairs);

// Joins by id; every id must appear on both sides (DataError otherwise).
std::vector<ScoringPair> pair_by_id(const std::map<std::string, std::string>& refs,
                                    const std::map<std::string, std::string>& hyps);

std::string format_report(const ScoreReport& report);
std::string report_json(const ScoreReport& report, bool include_utterances = false);

}  // namespace csasr
