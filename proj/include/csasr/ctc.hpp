#pragma once

#include <Eigen/Dense>
#include <ostream>
#include <span>
#include <vector>

#include "csasr/common.hpp"

namespace csasr {

class Vocabulary;

// T' x (|V|+1) per-frame log-probabilities; the last column is the blank.
class PosteriorLattice {
 public:
  // Normalizes every row with a log-softmax.
  static PosteriorLattice from_logits(const Eigen::MatrixXd& logits);
  // Takes rows that already are log-probabilities; throws if a row does not
  // log-sum-exp to 0 within 1e-9.
  static PosteriorLattice from_log_probs(Eigen::MatrixXd log_probs);

  int frames() const { return static_cast<int>(log_probs_.rows()); }
  int num_labels() const { return static_cast<int>(log_probs_.cols()) - 1; }
  int blank() const { return num_labels(); }
  double operator()(int t, int k) const { return log_probs_(t, k); }
  const Eigen::MatrixXd& log_probs() const { return log_probs_; }

  // Debug dump: one frame per line, "surface:logprob" pairs.
  void dump(std::ostream& out, const Vocabulary& vocab) const;

 private:
  explicit PosteriorLattice(Eigen::MatrixXd lp) : log_probs_(std::move(lp)) {}
  Eigen::MatrixXd log_probs_;
};

// Merges consecutive duplicates, then drops blanks.
std::vector<int> collapse(std::span<const int> path, int blank);

// Minimum frames needed to emit `label`: its length plus one per adjacent repeat.
int ctc_min_frames(std::span<const int> label);

struct CtcResult {
  double log_likelihood = kNegInf;
  // d(-log P)/d(logits) of the lattice's underlying logits: softmax minus
  // state occupancy. Zero when infeasible.
  Eigen::MatrixXd grad_logits;
  bool feasible = false;
};

// Exact forward-backward in log space. Infeasible labels give -inf and a zero
// gradient instead of throwing.
CtcResult ctc_loss(const PosteriorLattice& lattice, std::span<const int> label);

// Sums every alignment path. Throws std::length_error past 1e7 paths.
double brute_force_ctc(const PosteriorLattice& lattice, std::span<const int> label);

// Incremental CTC prefix scoring over one lattice.
class CtcPrefixScorer {
 public:
  struct State {
    std::vector<int> prefix;
    // Log mass of alignments of frames [0, t] whose collapse is `prefix`,
    // split by whether frame t emits a blank or the last label.
    std::vector<double> blank_end;
    std::vector<double> label_end;
    // log P(prefix is a prefix of the CTC output).
    double prefix_log_prob = 0.0;
  };

  // `eos` extends a state to its complete-sequence probability.
  CtcPrefixScorer(const PosteriorLattice& lattice, int eos);

  State initial() const;
  // New state for prefix + token; for eos the returned prefix_log_prob is the
  // complete-sequence log-probability of the parent prefix.
  State extend(const State& state, int token) const;
  // Prefix log-probability of every one-token extension (indexed by token id;
  // the eos entry holds the complete-sequence score).
  Eigen::VectorXd extension_scores(const State& state) const;
  // log P(output == prefix exactly).
  double complete_log_prob(const State& state) const;

  int eos() const { return eos_; }
  const PosteriorLattice& lattice() const { return lattice_; }

 private:
  const PosteriorLattice& lattice_;
  int eos_;
};

}  // namespace csasr
