#include <cmath>
#include <random>

#include "csasr/ctc.hpp"
#include "csasr/nn/train_utils.hpp"
#include "doctest.h"

using namespace csasr;

namespace {

Eigen::MatrixXd random_logits(int T, int V, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.5);
  Eigen::MatrixXd m(T, V + 1);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

std::vector<int> random_label(int max_len, int V, std::mt19937_64& rng) {
  const int len = static_cast<int>(rng() % static_cast<unsigned>(max_len + 1));
  std::vector<int> l;
  for (int i = 0; i < len; ++i) l.push_back(static_cast<int>(rng() % static_cast<unsigned>(V)));
  return l;
}

PosteriorLattice uniform_lattice(int T, int V) {
  return PosteriorLattice::from_logits(Eigen::MatrixXd::Zero(T, V + 1));
}

// Every label sequence over V symbols of length <= max_len.
void enumerate_labels(int V, int max_len, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
  out.push_back(cur);
  if (static_cast<int>(cur.size()) == max_len) return;
  for (int k = 0; k < V; ++k) {
    cur.push_back(k);
    enumerate_labels(V, max_len, cur, out);
    cur.pop_back();
  }
}

}  // namespace

TEST_CASE("collapse") {
  const int A = 0, B = 1, b = 2;
  CHECK(collapse(std::vector<int>{A, b, A, A, b, B}, b) == std::vector<int>{A, A, B});
  CHECK(collapse(std::vector<int>{b, b, b}, b).empty());
  CHECK(collapse(std::vector<int>{A, A, A}, b) == std::vector<int>{A});
}

TEST_CASE("ctc_loss hand-enumerated example and infeasibility") {
  const auto lat = uniform_lattice(2, 1);
  // Paths aa, ab, ba collapse to "a"; bb collapses to the empty string.
  const auto r = ctc_loss(lat, std::vector<int>{0});
  CHECK(r.feasible);
  CHECK(std::exp(r.log_likelihood) == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(brute_force_ctc(lat, std::vector<int>{0}) == doctest::Approx(0.75).epsilon(1e-14));

  const auto inf = ctc_loss(lat, std::vector<int>{0, 0});
  CHECK_FALSE(inf.feasible);
  CHECK(inf.log_likelihood == kNegInf);
  CHECK(inf.grad_logits.isZero());
  CHECK(brute_force_ctc(lat, std::vector<int>{0, 0}) == 0.0);
  CHECK(ctc_min_frames(std::vector<int>{0, 0}) == 3);
}

TEST_CASE("brute force edge cases") {
  std::mt19937_64 rng(1);
  const auto lat = PosteriorLattice::from_logits(random_logits(4, 2, rng));
  double blanks = 0.0;
  for (int t = 0; t < 4; ++t) blanks += lat(t, lat.blank());
  CHECK(brute_force_ctc(lat, std::vector<int>{}) == doctest::Approx(std::exp(blanks)).epsilon(1e-12));
  CHECK(brute_force_ctc(lat, std::vector<int>{0, 1, 0, 1, 0}) == 0.0);
  const auto big = PosteriorLattice::from_logits(Eigen::MatrixXd::Zero(15, 4));
  CHECK_THROWS_AS(brute_force_ctc(big, std::vector<int>{0}), std::length_error);
}

TEST_CASE("ctc_loss equals the brute-force oracle on random instances") {
  std::mt19937_64 rng(2024);
  for (int n = 0; n < 200; ++n) {
    const int T = 1 + static_cast<int>(rng() % 6);
    const int V = 1 + static_cast<int>(rng() % 3);
    const auto lat = PosteriorLattice::from_logits(random_logits(T, V, rng));
    const auto label = random_label(3, V, rng);
    const double oracle = brute_force_ctc(lat, label);
    const auto r = ctc_loss(lat, label);
    if (oracle == 0.0) {
      CHECK_FALSE(r.feasible);
    } else {
      REQUIRE(r.feasible);
      CHECK(std::abs(r.log_likelihood - std::log(oracle)) <= 1e-9);
    }
  }
}

TEST_CASE("ctc gradient matches finite differences") {
  std::mt19937_64 rng(5);
  for (int n = 0; n < 20; ++n) {
    const int T = 3 + static_cast<int>(rng() % 5);
    const int V = 1 + static_cast<int>(rng() % 4);
    nn::ParamSet params;
    auto z = params.add("logits", T, V + 1);
    params[z] = random_logits(T, V, rng);
    std::vector<int> label = random_label(3, V, rng);
    while (ctc_min_frames(label) > T) label.pop_back();
    auto loss = [&](const nn::ParamSet& p, nn::GradSet* g) {
      const auto r = ctc_loss(PosteriorLattice::from_logits(p[z]), label);
      if (g) (*g)[z] += r.grad_logits;
      return -r.log_likelihood;
    };
    const auto report = nn::grad_check(params, loss, {.tolerance = 1e-5, .samples_per_param = 1000});
    INFO(report.max_rel_error);
    CHECK(report.passed);
  }
}

TEST_CASE("ctc probabilities over all labels sum to one") {
  std::mt19937_64 rng(9);
  for (int T = 1; T <= 4; ++T) {
    for (int V = 1; V <= 2; ++V) {
      const auto lat = PosteriorLattice::from_logits(random_logits(T, V, rng));
      std::vector<int> cur;
      std::vector<std::vector<int>> labels;
      enumerate_labels(V, T, cur, labels);
      double total = 0.0;
      for (const auto& l : labels) {
        const auto r = ctc_loss(lat, l);
        if (r.feasible) total += std::exp(r.log_likelihood);
      }
      CHECK(std::abs(total - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("prefix scores: completion equals ctc_loss and extensions partition the mass") {
  std::mt19937_64 rng(77);
  for (int n = 0; n < 100; ++n) {
    const int T = 1 + static_cast<int>(rng() % 6);
    const int V = 2 + static_cast<int>(rng() % 3);  // last label acts as eos
    const int eos = V - 1;
    Eigen::MatrixXd logits = random_logits(T, V, rng);
    logits.col(eos).setConstant(kNegInf);  // eos carries no alignment mass
    const auto lat = PosteriorLattice::from_logits(logits);
    CtcPrefixScorer scorer(lat, eos);
    auto label = random_label(3, V - 1, rng);

    auto state = scorer.initial();
    double total = 0.0;
    double prev = 0.0;
    for (int tok : label) {
      state = scorer.extend(state, tok);
      total += state.prefix_log_prob - prev;
      CHECK(state.prefix_log_prob <= prev + 1e-12);
      prev = state.prefix_log_prob;
    }
    const auto done = scorer.extend(state, eos);
    total += done.prefix_log_prob - prev;
    const auto r = ctc_loss(lat, label);
    if (r.feasible) {
      CHECK(std::abs(total - r.log_likelihood) <= 1e-9);
    } else {
      CHECK(done.prefix_log_prob == kNegInf);
    }

    // P(exactly g) + sum_c P(prefix g.c) == P(prefix g), with c over non-eos labels.
    const auto ext = scorer.extension_scores(state);
    double mass = scorer.complete_log_prob(state);
    for (int c = 0; c < V; ++c) {
      if (c == eos) continue;
      const double direct = scorer.extend(state, c).prefix_log_prob;
      if (direct == kNegInf) {
        CHECK(ext(c) == kNegInf);
      } else {
        CHECK(std::abs(ext(c) - direct) <= 1e-12);
      }
      mass = log_add(mass, ext(c));
    }
    if (std::isfinite(state.prefix_log_prob)) CHECK(std::abs(mass - state.prefix_log_prob) <= 1e-9);
  }
}

TEST_CASE("empty prefix state") {
  std::mt19937_64 rng(8);
  Eigen::MatrixXd logits = random_logits(5, 3, rng);
  logits.col(2).setConstant(kNegInf);
  const auto lat = PosteriorLattice::from_logits(logits);
  CtcPrefixScorer scorer(lat, 2);
  const auto s = scorer.initial();
  CHECK(s.prefix_log_prob == 0.0);
  double blanks = 0.0;
  for (int t = 0; t < 5; ++t) blanks += lat(t, lat.blank());
  CHECK(s.blank_end.back() == doctest::Approx(blanks));
  CHECK(s.label_end.back() == kNegInf);
  // All-blank mass plus every first-label mass accounts for the whole lattice.
  const auto ext = scorer.extension_scores(s);
  const double total = log_add(log_add(s.blank_end.back(), ext(0)), ext(1));
  CHECK(std::abs(total) <= 1e-12);
  CHECK_THROWS_AS(scorer.extend(s, 3), std::out_of_range);
}

TEST_CASE("lattice validation") {
  Eigen::MatrixXd lp(1, 2);
  lp << std::log(0.5), std::log(0.6);
  CHECK_THROWS_AS(PosteriorLattice::from_log_probs(lp), std::invalid_argument);
  lp << std::log(0.4), std::log(0.6);
  CHECK(PosteriorLattice::from_log_probs(lp).frames() == 1);
}
