#include <cmath>
#include <random>

#include "csasr/rnnlm.hpp"
#include "doctest.h"

using namespace csasr;

namespace {

const std::vector<std::vector<int>> kFive = {
    {3, 4, 5, 6}, {7, 3, 8}, {5, 5, 9, 4, 3}, {8, 6, 7}, {9, 3, 4, 8, 6, 5},
};

LmConfig small_config() { return LmConfig{.vocab_size = 10, .embed_dim = 8, .hidden = 24, .layers = 2}; }

}  // namespace

TEST_CASE("lm batch gradient") {
  RnnLm lm(LmConfig{.vocab_size = 6, .embed_dim = 3, .hidden = 4, .layers = 2});
  lm.params().init_gaussian(0.3, 4);
  const std::vector<int> a{2, 3, 4}, b{5, 2};
  auto loss = [&](const nn::ParamSet&, nn::GradSet* g) {
    auto [nll, n] = lm.batch_loss({&a, &b}, g);
    return nll / static_cast<double>(n);
  };
  const auto report = nn::grad_check(lm.params(), loss, {.tolerance = 1e-5, .samples_per_param = 20});
  INFO(report.worst_param, " ", report.max_rel_error);
  CHECK(report.passed);
}

TEST_CASE("lm scores are normalized and states are isolated") {
  RnnLm lm(small_config());
  lm.params().init_gaussian(0.1, 2);
  LmState st = lm.initial_state();
  for (int tok : {3, 4, 9}) {
    CHECK(std::abs(st.log_probs.array().exp().sum() - 1.0) <= 1e-9);
    lm.score_step(st, tok, &st);
  }
  CHECK_THROWS_AS(lm.score_step(st, 10, nullptr), std::out_of_range);

  // Interleaved scoring of two hypotheses equals scoring each alone.
  const std::vector<int> h1{3, 5, 7, 2}, h2{8, 8, 4, 6};
  LmState a = lm.initial_state(), b = lm.initial_state();
  double sa = 0, sb = 0;
  for (std::size_t i = 0; i < h1.size(); ++i) {
    sa += lm.score_step(a, h1[i], &a);
    sb += lm.score_step(b, h2[i], &b);
  }
  LmState c = lm.initial_state();
  double sc = 0;
  for (int t : h1) sc += lm.score_step(c, t, &c);
  CHECK(sa == sc);
  CHECK(lm.sentence_log_prob(h2) == sb + b.log_probs(1));
}

TEST_CASE("overfit five sentences and prefer them over corruptions") {
  std::vector<LmEpochRecord> log;
  LmTrainConfig tc{.epochs = 150, .batch_size = 5};
  const RnnLm lm = lm_train(kFive, {}, small_config(), tc, [&](const LmEpochRecord& r) { log.push_back(r); });
  const double ppl = perplexity(lm, kFive);
  INFO("ppl ", ppl);
  CHECK(ppl < 1.5);

  for (const auto& s : kFive) {
    const double base = lm.sentence_log_prob(s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      for (int v = 2; v < 10; ++v) {
        if (v == s[i]) continue;
        auto bad = s;
        bad[i] = v;
        CHECK(lm.sentence_log_prob(bad) < base);
      }
    }
  }

  // The kept parameters belong to the best reported epoch.
  double best = 1e300;
  for (const auto& r : log) {
    CHECK(r.best == (r.dev_ppl < best));
    best = std::min(best, r.dev_ppl);
  }
  CHECK(ppl == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("a constant corpus drives perplexity to one") {
  const std::vector<std::vector<int>> same(8, std::vector<int>{3, 3, 3, 3});
  const RnnLm lm = lm_train(same, same, small_config(), {.epochs = 60, .batch_size = 8});
  CHECK(perplexity(lm, same) < 1.05);
}

TEST_CASE("lm errors and checkpoint") {
  CHECK_THROWS_AS(lm_train({}, {}, small_config(), {}), std::invalid_argument);
  RnnLm lm(small_config());
  lm.params().init_gaussian(0.1, 9);
  const auto path = std::filesystem::temp_directory_path() / "csasr_lm.ckpt";
  lm.save(path, {});
  const RnnLm back = RnnLm::load(path);
  CHECK(back.sentence_log_prob({3, 4}) == lm.sentence_log_prob({3, 4}));
  std::filesystem::remove(path);
}
