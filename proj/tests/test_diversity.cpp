#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include "triggerlab/diversity.hpp"

using namespace triggerlab;

TEST_CASE("diversity ratio: frozen values", "[diversity]") {
  // Unif{3..8}: max term (1/6)/3, sum (1/6)(1/3+...+1/8) = (1/6)(1023/840),
  // ratio (1/3)(840/1023) = 280/1023.
  CHECK(max_sum_ratio(LengthDistribution::uniform(3, 8)) ==
        Catch::Approx(280.0 / 1023.0).epsilon(1e-15));
  CHECK(max_sum_ratio(LengthDistribution::uniform(1, 2)) ==
        Catch::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(max_sum_ratio(LengthDistribution::singleton(7)) == 1.0);

  // Total-length variant: terms q/(2 ell + 3).
  CHECK(max_sum_ratio_total_length(LengthDistribution::singleton(4)) == 1.0);
  CHECK(max_sum_ratio_total_length(LengthDistribution::uniform(1, 2)) ==
        Catch::Approx(7.0 / 12.0).epsilon(1e-15));
}

TEST_CASE("zero-mass support points do not contribute", "[diversity]") {
  const LengthDistribution padded({1, 2, 3}, {0.5, 0.5, 0.0});
  const LengthDistribution plain({1, 2}, {0.5, 0.5});
  CHECK(max_sum_ratio(padded) == max_sum_ratio(plain));
}

TEST_CASE("window ratio delegates to the general ratio bit for bit",
          "[diversity]") {
  for (const auto& [ell0, K] :
       std::vector<std::pair<int, int>>{{1, 2}, {3, 6}, {5, 1}, {17, 20}}) {
    CHECK(uniform_window_ratio(ell0, K) ==
          max_sum_ratio(LengthDistribution::uniform(ell0, ell0 + K - 1)));
  }
  CHECK_THROWS(uniform_window_ratio(0, 3));
  CHECK_THROWS(uniform_window_ratio(3, 0));
}

TEST_CASE("window ratio monotonicity spot checks", "[diversity]") {
  CHECK(uniform_window_ratio(3, 2) < uniform_window_ratio(3, 1));
  CHECK(uniform_window_ratio(3, 7) < uniform_window_ratio(3, 6));
  CHECK(uniform_window_ratio(4, 3) < uniform_window_ratio(3, 3));
  // Width-one windows always have ratio exactly 1.
  CHECK(uniform_window_ratio(1, 1) == 1.0);
  CHECK(uniform_window_ratio(20, 1) == 1.0);
}

TEST_CASE("optimal distribution shape and boundary ratio", "[diversity]") {
  const auto d = optimal_distribution(3, 5);
  REQUIRE(d.support().size() == 5);
  CHECK(d.masses()[0] == 1.0 / 6.0);
  CHECK(d.masses()[1] == 2.0 / 6.0);
  CHECK(d.masses()[2] == 3.0 / 6.0);
  CHECK(d.masses()[3] == 0.0);
  CHECK(d.masses()[4] == 0.0);

  // The construction sits exactly on the diversity boundary R = 1/n_trg;
  // for these instances the double arithmetic lands on it bitwise.
  CHECK(max_sum_ratio(optimal_distribution(1, 3)) == 1.0);
  CHECK(max_sum_ratio(optimal_distribution(2, 4)) == 0.5);
  CHECK(max_sum_ratio(optimal_distribution(3, 5)) == 1.0 / 3.0);

  CHECK(optimal_distribution(2).support().size() == 2);
  CHECK_THROWS(optimal_distribution(0, 3));
  CHECK_THROWS(optimal_distribution(4, 3));
}

TEST_CASE("closed-form LP objective", "[diversity]") {
  CHECK(closed_form_lp({1, 3}).objective == 1.0);
  CHECK(closed_form_lp({2, 4}).objective == 3.0);
  CHECK(closed_form_lp({3, 5}).objective == 6.0);
  const auto sol = closed_form_lp({2, 4});
  REQUIRE(sol.masses.size() == 4);
  CHECK(sol.masses[0] == 1.0 / 3.0);
  CHECK(sol.masses[1] == 2.0 / 3.0);
}

TEST_CASE("brute-force LP agrees with the closed form on small instances",
          "[diversity]") {
  {
    const auto sol = brute_force_lp({1, 3}, 30);
    CHECK(sol.objective == 1.0);
    CHECK(sol.masses == std::vector<double>{1.0, 0.0, 0.0});
  }
  {
    const auto sol = brute_force_lp({2, 4}, 60);
    CHECK(sol.objective == 3.0);
    CHECK(sol.masses ==
          std::vector<double>{20.0 / 60.0, 40.0 / 60.0, 0.0, 0.0});
  }
  {
    const auto sol = brute_force_lp({3, 5}, 60);
    CHECK(sol.objective == 6.0);
    // Feasible grid point achieving the optimum exists at (10,20,30,0,0)/60.
    double obj = 0.0;
    for (int ell = 1; ell <= 5; ++ell)
      obj += sol.masses[static_cast<size_t>(ell - 1)] * ell * ell;
    CHECK(obj == Catch::Approx(6.0).epsilon(1e-12));
  }
}

TEST_CASE("brute-force LP is deterministic and guarded", "[diversity]") {
  const auto a = brute_force_lp({2, 4}, 40);
  const auto b = brute_force_lp({2, 4}, 40);
  CHECK(a.objective == b.objective);
  CHECK(a.masses == b.masses);
  CHECK_THROWS(brute_force_lp({2, 12}, 200));  // combinatorial guard
  CHECK_THROWS(brute_force_lp({2, 4}, 0));
}

TEST_CASE("KKT certificate accepts the closed-form optimum", "[diversity]") {
  for (const auto& inst :
       std::vector<LpInstance>{{1, 3}, {2, 4}, {3, 5}, {4, 7}}) {
    const auto sol = closed_form_lp(inst);
    const auto report = check_kkt(inst, sol.masses);
    INFO("n_trg=" << inst.n_trg << " u_max=" << inst.u_max);
    CHECK(report.primal_simplex);
    CHECK(report.primal_diversity);
    CHECK(report.dual_lambda);
    CHECK(report.dual_mu);
    CHECK(report.complementary);
    CHECK(report.stationary);
    CHECK(report.ok());
  }
}

TEST_CASE("KKT certificate rejects non-optimal feasible points", "[diversity]") {
  // Uniform on {1..4} is feasible for n_trg = 2 (R = 12/25 < 1/2) but not
  // optimal: complementary slackness fails.
  const auto uniform_report =
      check_kkt({2, 4}, {0.25, 0.25, 0.25, 0.25});
  CHECK(uniform_report.primal_simplex);
  CHECK(uniform_report.primal_diversity);
  CHECK_FALSE(uniform_report.complementary);
  CHECK_FALSE(uniform_report.ok());

  // A point mass on ell = 2 violates the diversity constraint outright.
  const auto infeasible_report = check_kkt({2, 4}, {0.0, 1.0, 0.0, 0.0});
  CHECK_FALSE(infeasible_report.primal_diversity);
  CHECK_FALSE(infeasible_report.ok());

  CHECK_THROWS(check_kkt({2, 4}, {0.5, 0.5}));  // wrong size
}
