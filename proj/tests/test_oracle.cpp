#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "triggerlab/diversity.hpp"
#include "triggerlab/oracle.hpp"
#include "triggerlab/trainer.hpp"

using namespace triggerlab;

TEST_CASE("population statistics for a uniform pair", "[oracle]") {
  const auto dist = LengthDistribution::uniform(3, 4);  // T in {9, 11}
  const auto stats = population_stats(dist, 16);
  CHECK(stats.expected_inv_t == Catch::Approx(10.0 / 99.0).epsilon(1e-15));
  CHECK(stats.expected_inv_t2 ==
        Catch::Approx(0.5 / 81.0 + 0.5 / 121.0).epsilon(1e-15));
  REQUIRE(stats.alpha.size() == 16);
  for (int t = 1; t <= 9; ++t)
    CHECK(stats.alpha[t - 1] == Catch::Approx(10.0 / 99.0).epsilon(1e-15));
  for (int t = 10; t <= 11; ++t)
    CHECK(stats.alpha[t - 1] == Catch::Approx(1.0 / 22.0).epsilon(1e-15));
  for (int t = 12; t <= 16; ++t) CHECK(stats.alpha[t - 1] == 0.0);
  CHECK(stats.per_ell_terms.at(3) == Catch::Approx(1.0 / 18.0).epsilon(1e-15));
  CHECK(stats.per_ell_terms.at(4) == Catch::Approx(1.0 / 22.0).epsilon(1e-15));

  CHECK(expected_inv_t2_at(dist, 10) == Catch::Approx(0.5 / 121.0).epsilon(1e-15));
  CHECK(expected_inv_t2_at(dist, 12) == 0.0);
}

TEST_CASE("learning-rate scale combines both stages", "[oracle]") {
  const SamplerConfig cfg{16, 2, 40};
  const auto dist = LengthDistribution::singleton(3);
  const auto stats = population_stats(dist, cfg.L);
  CHECK(eta_tilde_scale(1000.0, 10000.0, cfg, stats) ==
        Catch::Approx((1000.0 / 16.0) * 10000.0 / 9.0).epsilon(1e-15));
}

TEST_CASE("population value matrix: frozen entries for a singleton",
          "[oracle]") {
  const SamplerConfig cfg{8, 2, 16};  // N=8, N_trg=2: E[1/T] = 1/9 for ell=3
  const auto dist = LengthDistribution::singleton(3);
  const Mat W = population_wv(dist, cfg, 1.0);
  REQUIRE(W.rows() == 8);
  REQUIRE(W.cols() == 32);

  const double tol = 1e-15;
  // Position column t=5 (within T=9): trigger rows -1/9, others +1/27.
  CHECK(W(0, 4) == Catch::Approx(-1.0 / 9.0).margin(tol));
  CHECK(W(2, 4) == Catch::Approx(1.0 / 27.0).margin(tol));
  // Position column t=10 beyond T: zero.
  CHECK(W(0, 9) == 0.0);
  CHECK(W(5, 9) == 0.0);

  // Token column of trigger j=1 (0-based col 16).
  CHECK(W(0, 16) == Catch::Approx(-1.0 / 9.0).margin(tol));
  CHECK(W(2, 16) == Catch::Approx(1.0 / 27.0).margin(tol));
  // Token column of non-trigger j=3 (0-based col 18).
  CHECK(W(0, 18) == Catch::Approx(-7.0 / 54.0).margin(tol));
  CHECK(W(2, 18) == Catch::Approx(1.0 / 6.0).margin(tol));   // diagonal k=j=3
  CHECK(W(3, 18) == Catch::Approx(1.0 / 54.0).margin(tol));  // off-diagonal

  // Previous-token column of trigger j=1 (0-based col 24): single occurrence.
  CHECK(W(0, 24) == Catch::Approx(-1.0 / 18.0).margin(tol));
  CHECK(W(2, 24) == Catch::Approx(1.0 / 54.0).margin(tol));
  // Previous-token column of non-trigger j=3: same as token block.
  CHECK(W(0, 26) == Catch::Approx(-7.0 / 54.0).margin(tol));
  CHECK(W(2, 26) == Catch::Approx(1.0 / 6.0).margin(tol));
  CHECK(W(3, 26) == Catch::Approx(1.0 / 54.0).margin(tol));

  // Every column of the population step sums to zero (softmax gradient rows
  // sum to zero sample by sample).
  for (int c = 0; c < W.cols(); ++c)
    CHECK(std::abs(W.col(c).sum()) < 1e-12);

  // Scale is linear in the per-token learning rate.
  const Mat W2 = population_wv(dist, cfg, 2.5);
  CHECK((W2 - 2.5 * W).lpNorm<Eigen::Infinity>() < 1e-14);
}

TEST_CASE("population value matrix matches a Monte Carlo average", "[oracle]") {
  const SamplerConfig cfg{6, 2, 12};
  const auto dist = LengthDistribution::singleton(2);  // T = 7
  const Mat target = population_wv(dist, cfg, 1.0);

  TrainConfig tc;
  tc.eta_v = 6.0;  // eta_v / N = 1 => same per-token scale as the oracle
  tc.eta_kq = 0.0;
  tc.m_v = 200000;
  tc.m_kq = 1;
  tc.seed = 17;
  const auto params = run_algorithm1(cfg, dist, tc);
  const double rel = (params.W_V - target).norm() / target.norm();
  CHECK(rel < 0.02);
}

TEST_CASE("population attention matrix: frozen structure for a singleton",
          "[oracle]") {
  const SamplerConfig cfg{8, 2, 16};
  const auto dist = LengthDistribution::singleton(3);  // T = 9
  const auto pop = population_wkq(dist, cfg, 1.0);
  const Mat& W = pop.matrix;
  REQUIRE(W.rows() == 32);
  REQUIRE(W.cols() == 32);

  const double tol = 1e-15;
  // Induction entries: (prev-token w, token w) = E[1/T]/N_trg each.
  CHECK(W(16 + 8 + 0, 16 + 0) == Catch::Approx(1.0 / 18.0).margin(tol));
  CHECK(W(16 + 8 + 1, 16 + 1) == Catch::Approx(1.0 / 18.0).margin(tol));
  // Positional shortcut entry (row ell+2 = 5, column position T = 9).
  CHECK(W(4, 8) == Catch::Approx(1.0 / 9.0).margin(tol));
  CHECK(W(5, 8) == Catch::Approx(1.0 / 9.0).margin(tol));  // row ell+3
  // Background positions in the same column get -2 q/T^2.
  CHECK(W(0, 8) == Catch::Approx(-2.0 / 81.0).margin(tol));
  CHECK(W(8, 8) == Catch::Approx(-2.0 / 81.0).margin(tol));  // t = T itself
  // Rows beyond T carry nothing.
  CHECK(W(9, 8) == 0.0);

  // Only three live columns: position T and the two trigger token columns.
  for (int c = 0; c < 32; ++c) {
    const bool live = (c == 8 || c == 16 || c == 17);
    if (live) {
      CHECK(W.col(c).norm() > 0.0);
    } else {
      CHECK(W.col(c).norm() == 0.0);
    }
  }

  // Remainder metadata scales as N_trg/N.
  CHECK(pop.excluded_bound == Catch::Approx(2.0 / 8.0).epsilon(1e-15));

  // Support longer than the position block is rejected.
  const SamplerConfig small{8, 2, 8};
  CHECK_THROWS(population_wkq(LengthDistribution::singleton(3), small, 1.0));
}

TEST_CASE("closed-form attention logits equal the dominant matrix quadratic",
          "[oracle]") {
  const SamplerConfig cfg{8, 2, 20};
  const std::vector<LengthDistribution> dists = {
      LengthDistribution::singleton(3), LengthDistribution::uniform(3, 4),
      optimal_distribution(2, 4)};
  const std::vector<std::pair<int, int>> pairs = {{1, 3}, {2, 2}, {3, 4}};
  for (const auto& dist : dists) {
    const auto pop = population_wkq(dist, cfg, 1.0);
    for (const auto& [e1, e2] : pairs) {
      const auto seq = adversarial_sequence(cfg, e1, e2);
      const Mat X = embed(seq, cfg);
      const int T = seq.total_length();
      const Vec scores = X.transpose() * (pop.matrix * X.col(T - 1));
      for (int t = 1; t <= T; ++t) {
        const double closed = attention_logit_closed_form(seq, dist, cfg, t);
        CHECK(std::abs(closed - scores(t - 1)) < 1e-12);
      }
    }
  }
}

TEST_CASE("closed-form logits: frozen values at the boundary distribution",
          "[oracle]") {
  // optimal_distribution(2) = masses (1/3, 2/3) on {1, 2}; adversarial pair
  // (1, 3) has T = 7 and pseudo-shortcut position 4.
  const SamplerConfig cfg{8, 2, 16};
  const auto dist = optimal_distribution(2);
  const auto seq = adversarial_sequence(cfg, 1, 3);
  CHECK(attention_logit_closed_form(seq, dist, cfg, 3) ==
        Catch::Approx(89.0 / 735.0).epsilon(1e-12));
  CHECK(attention_logit_closed_form(seq, dist, cfg, 4) ==
        Catch::Approx(37.0 / 210.0).epsilon(1e-12));
}

TEST_CASE("certifier: singleton training fails, wide window passes",
          "[oracle]") {
  const SamplerConfig cfg{64, 2, 40};
  const auto bad = certify_ood(LengthDistribution::singleton(5), cfg);
  CHECK_FALSE(bad.generalizes);
  CHECK(bad.margin < 0.0);
  REQUIRE(bad.witness.has_value());
  CHECK_NOTHROW(bad.witness->validate(cfg));
  CHECK(bad.witness_position >= 1);
  CHECK(bad.witness_position <= bad.witness->total_length());
  CHECK(bad.witness_position != bad.witness->ell1 + 2);

  const SamplerConfig wide{64, 2, 70};
  const auto good = certify_ood(LengthDistribution::uniform(3, 30), wide);
  CHECK(good.generalizes);
  CHECK(good.margin >= 0.0);
  CHECK_FALSE(good.witness.has_value());
  CHECK(good.witness_position == -1);
}

TEST_CASE("certifier: the boundary distribution sits outside the certified "
          "region",
          "[oracle]") {
  // At R = 1/N_trg the max of q/T strictly exceeds mean(q/T)/N_trg because
  // T = 2*ell + 3 is affine rather than proportional in ell, so the
  // pseudo-shortcut still wins on its exact-length sequence. Frozen margin:
  // s_3 - 2*s_4 = 89/735 - 2*37/210 = -34/147 at the witness pair (1,3).
  const SamplerConfig cfg{64, 2, 40};
  const auto res = certify_ood(optimal_distribution(2), cfg);
  CHECK_FALSE(res.generalizes);
  CHECK(res.margin <= -34.0 / 147.0 + 1e-12);
  REQUIRE(res.witness.has_value());
}

TEST_CASE("certifier input validation", "[oracle]") {
  const SamplerConfig cramped{3, 2, 40};  // N < N_trg + 2
  CHECK_THROWS(certify_ood(LengthDistribution::singleton(3), cramped));
}
