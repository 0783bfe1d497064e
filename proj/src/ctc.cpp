#include "csasr/ctc.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "csasr/textproc.hpp"

namespace csasr {

PosteriorLattice PosteriorLattice::from_logits(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd lp(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const double m = logits.row(t).maxCoeff();
    const double lse = m + std::log((logits.row(t).array() - m).exp().sum());
    lp.row(t) = logits.row(t).array() - lse;
  }
  return PosteriorLattice(std::move(lp));
}

PosteriorLattice PosteriorLattice::from_log_probs(Eigen::MatrixXd log_probs) {
  for (Eigen::Index t = 0; t < log_probs.rows(); ++t) {
    double lse = kNegInf;
    for (Eigen::Index k = 0; k < log_probs.cols(); ++k) lse = log_add(lse, log_probs(t, k));
    if (std::abs(lse) > 1e-9) {
      throw std::invalid_argument("lattice row " + std::to_string(t) + " is not normalized");
    }
  }
  return PosteriorLattice(std::move(log_probs));
}

void PosteriorLattice::dump(std::ostream& out, const Vocabulary& vocab) const {
  for (int t = 0; t < frames(); ++t) {
    for (int k = 0; k <= num_labels(); ++k) {
      if (k > 0) out << ' ';
      out << (k == blank() ? std::string("<b>") : vocab.token(k).surface) << ':' << log_probs_(t, k);
    }
    out << '\n';
  }
}

std::vector<int> collapse(std::span<const int> path, int blank) {
  std::vector<int> out;
  int prev = -1;
  bool have_prev = false;
  for (int sym : path) {
    if (!(have_prev && sym == prev) && sym != blank) out.push_back(sym);
    prev = sym;
    have_prev = true;
  }
  return out;
}

int ctc_min_frames(std::span<const int> label) {
  int n = static_cast<int>(label.size());
  for (std::size_t i = 1; i < label.size(); ++i) {
    if (label[i] == label[i - 1]) ++n;
  }
  return n;
}

CtcResult ctc_loss(const PosteriorLattice& lattice, std::span<const int> label) {
  const int T = lattice.frames();
  const int blank = lattice.blank();
  const int L = static_cast<int>(label.size());
  for (int k : label) {
    if (k < 0 || k >= lattice.num_labels()) throw std::out_of_range("ctc_loss: label id out of range");
  }

  CtcResult result;
  result.grad_logits = Eigen::MatrixXd::Zero(T, lattice.num_labels() + 1);
  if (T == 0 || ctc_min_frames(label) > T) return result;

  const int S = 2 * L + 1;
  auto sym = [&](int s) { return (s % 2 == 0) ? blank : label[static_cast<std::size_t>(s / 2)]; };
  // Skip transition s-2 -> s allowed for labels differing from the previous one.
  auto can_skip = [&](int s) { return s >= 2 && s % 2 == 1 && sym(s) != sym(s - 2); };

  Eigen::MatrixXd alpha = Eigen::MatrixXd::Constant(T, S, kNegInf);
  Eigen::MatrixXd beta = Eigen::MatrixXd::Constant(T, S, kNegInf);

  alpha(0, 0) = lattice(0, blank);
  if (S > 1) alpha(0, 1) = lattice(0, sym(1));
  for (int t = 1; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      double acc = alpha(t - 1, s);
      if (s >= 1) acc = log_add(acc, alpha(t - 1, s - 1));
      if (can_skip(s)) acc = log_add(acc, alpha(t - 1, s - 2));
      alpha(t, s) = acc == kNegInf ? kNegInf : acc + lattice(t, sym(s));
    }
  }

  beta(T - 1, S - 1) = 0.0;
  if (S > 1) beta(T - 1, S - 2) = 0.0;
  for (int t = T - 2; t >= 0; --t) {
    for (int s = 0; s < S; ++s) {
      double acc = beta(t + 1, s) + lattice(t + 1, sym(s));
      if (s + 1 < S) acc = log_add(acc, beta(t + 1, s + 1) + lattice(t + 1, sym(s + 1)));
      if (s + 2 < S && can_skip(s + 2)) acc = log_add(acc, beta(t + 1, s + 2) + lattice(t + 1, sym(s + 2)));
      beta(t, s) = acc;
    }
  }

  double log_p = alpha(T - 1, S - 1);
  if (S > 1) log_p = log_add(log_p, alpha(T - 1, S - 2));
  if (!std::isfinite(log_p)) return result;

  result.log_likelihood = log_p;
  result.feasible = true;
  const Eigen::MatrixXd& lp = lattice.log_probs();
  result.grad_logits = lp.array().exp();
  for (int t = 0; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      const double occ = alpha(t, s) + beta(t, s);
      if (occ == kNegInf) continue;
      result.grad_logits(t, sym(s)) -= std::exp(occ - log_p);
    }
  }
  return result;
}

double brute_force_ctc(const PosteriorLattice& lattice, std::span<const int> label) {
  const int T = lattice.frames();
  const int K = lattice.num_labels() + 1;
  double paths = 1.0;
  for (int t = 0; t < T; ++t) paths *= K;
  if (paths > 1e7) throw std::length_error("brute_force_ctc: search space exceeds 1e7 paths");

  const std::vector<int> target(label.begin(), label.end());
  std::vector<int> path(static_cast<std::size_t>(T), 0);
  double total = 0.0;
  while (true) {
    if (collapse(path, lattice.blank()) == target) {
      double lp = 0.0;
      for (int t = 0; t < T; ++t) lp += lattice(t, path[static_cast<std::size_t>(t)]);
      total += std::exp(lp);
    }
    int t = 0;
    while (t < T && ++path[static_cast<std::size_t>(t)] == K) path[static_cast<std::size_t>(t++)] = 0;
    if (t == T) break;
  }
  return total;
}

CtcPrefixScorer::CtcPrefixScorer(const PosteriorLattice& lattice, int eos) : lattice_(lattice), eos_(eos) {
  if (lattice.frames() == 0) throw std::invalid_argument("CtcPrefixScorer: empty lattice");
}

CtcPrefixScorer::State CtcPrefixScorer::initial() const {
  const int T = lattice_.frames();
  State s;
  s.blank_end.resize(static_cast<std::size_t>(T));
  s.label_end.assign(static_cast<std::size_t>(T), kNegInf);
  double acc = 0.0;
  for (int t = 0; t < T; ++t) {
    acc += lattice_(t, lattice_.blank());
    s.blank_end[static_cast<std::size_t>(t)] = acc;
  }
  s.prefix_log_prob = 0.0;
  return s;
}

double CtcPrefixScorer::complete_log_prob(const State& state) const {
  return log_add(state.blank_end.back(), state.label_end.back());
}

CtcPrefixScorer::State CtcPrefixScorer::extend(const State& state, int token) const {
  if (token < 0 || token >= lattice_.num_labels()) throw std::out_of_range("ctc prefix: token out of range");
  if (token == eos_) {
    State done = state;
    done.prefix.push_back(token);
    done.prefix_log_prob = complete_log_prob(state);
    return done;
  }
  const int T = lattice_.frames();
  const int last = state.prefix.empty() ? -1 : state.prefix.back();
  State next;
  next.prefix = state.prefix;
  next.prefix.push_back(token);
  next.blank_end.assign(static_cast<std::size_t>(T), kNegInf);
  next.label_end.assign(static_cast<std::size_t>(T), kNegInf);

  next.label_end[0] = state.prefix.empty() ? lattice_(0, token) : kNegInf;
  double psi = next.label_end[0];
  for (int t = 1; t < T; ++t) {
    const auto ut = static_cast<std::size_t>(t);
    const double phi = token == last ? state.blank_end[ut - 1] : log_add(state.blank_end[ut - 1], state.label_end[ut - 1]);
    next.label_end[ut] = log_add(next.label_end[ut - 1], phi) + lattice_(t, token);
    next.blank_end[ut] = log_add(next.blank_end[ut - 1], next.label_end[ut - 1]) + lattice_(t, lattice_.blank());
    psi = log_add(psi, phi + lattice_(t, token));
  }
  next.prefix_log_prob = psi;
  return next;
}

Eigen::VectorXd CtcPrefixScorer::extension_scores(const State& state) const {
  const int T = lattice_.frames();
  const int V = lattice_.num_labels();
  const int last = state.prefix.empty() ? -1 : state.prefix.back();
  Eigen::VectorXd scores = Eigen::VectorXd::Constant(V, kNegInf);
  if (state.prefix.empty()) scores = lattice_.log_probs().row(0).head(V).transpose();
  for (int t = 1; t < T; ++t) {
    const auto ut = static_cast<std::size_t>(t);
    const double phi_any = log_add(state.blank_end[ut - 1], state.label_end[ut - 1]);
    if (phi_any == kNegInf) continue;
    for (int c = 0; c < V; ++c) {
      const double phi = c == last ? state.blank_end[ut - 1] : phi_any;
      scores(c) = log_add(scores(c), phi + lattice_(t, c));
    }
  }
  scores(eos_) = complete_log_prob(state);
  return scores;
}

}  // namespace csasr
