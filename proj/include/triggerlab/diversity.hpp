#pragma once

// Diversity ratio of a length distribution, the compute-optimal distribution
// over a bounded support, an exact brute-force LP solver on a simplex grid,
// and a KKT certificate checker for the closed-form optimum.
//
// The diversity ratio R(q) = max_ell (q_ell / ell) / sum_ell (q_ell / ell)
// measures how concentrated the distribution is after the 1/ell reweighting
// induced by the training signal. The mechanism boundary sits at
// R = 1 / N_trg: strictly below, the induction weight dominates every
// positional weight; above, some positional shortcut wins.

#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "triggerlab/length_distribution.hpp"

namespace triggerlab {

namespace detail {

// Single arithmetic path for every diversity-ratio variant: max and sum over
// precomputed per-length terms, accumulated in support order.
inline double max_over_sum(const std::vector<double>& terms) {
  double mx = -std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (const double v : terms) {
    if (v > mx) mx = v;
    sum += v;
  }
  if (!(sum > 0.0))
    throw std::invalid_argument("diversity ratio: term sum must be positive");
  return mx / sum;
}

}  // namespace detail

// R(q) with terms q_ell / ell.
inline double max_sum_ratio(const LengthDistribution& dist) {
  std::vector<double> terms;
  terms.reserve(dist.support().size());
  for (size_t i = 0; i < dist.support().size(); ++i)
    terms.push_back(dist.masses()[i] / static_cast<double>(dist.support()[i]));
  return detail::max_over_sum(terms);
}

// Variant with terms q_ell / T(ell); T(ell) = 2 ell + 3. Affine reweighting
// shifts the numeric value but not the qualitative ordering; exposed for
// diagnostics.
inline double max_sum_ratio_total_length(const LengthDistribution& dist) {
  std::vector<double> terms;
  terms.reserve(dist.support().size());
  for (size_t i = 0; i < dist.support().size(); ++i)
    terms.push_back(dist.masses()[i] /
                    static_cast<double>(total_length_for(dist.support()[i])));
  return detail::max_over_sum(terms);
}

// R of the uniform window {ell0, ..., ell0 + K - 1}. Delegates to
// max_sum_ratio on the explicitly constructed window so both entry points
// share one arithmetic path bit for bit.
inline double uniform_window_ratio(int ell0, int K) {
  if (ell0 < 1 || K < 1)
    throw std::invalid_argument("uniform_window_ratio: ell0, K must be >= 1");
  return max_sum_ratio(LengthDistribution::uniform(ell0, ell0 + K - 1));
}

// Compute-optimal distribution on support {1, ..., U} subject to
// R(q) <= 1 / n_trg: masses proportional to ell up to n_trg, zero beyond.
// Minimizes E[ell^2] (objective value n_trg (n_trg + 1) / 2) and sits exactly
// on the constraint boundary R = 1 / n_trg.
inline LengthDistribution optimal_distribution(int n_trg, int U) {
  if (n_trg < 1 || U < n_trg)
    throw std::invalid_argument("optimal_distribution: need 1 <= n_trg <= U");
  const double Z = static_cast<double>(n_trg) * (n_trg + 1) / 2.0;
  std::vector<int> support(static_cast<size_t>(U));
  std::vector<double> masses(static_cast<size_t>(U), 0.0);
  for (int ell = 1; ell <= U; ++ell) {
    support[static_cast<size_t>(ell - 1)] = ell;
    if (ell <= n_trg) masses[static_cast<size_t>(ell - 1)] = ell / Z;
  }
  return LengthDistribution(support, masses);
}

// Minimal-support form: support exactly {1, ..., n_trg}.
inline LengthDistribution optimal_distribution(int n_trg) {
  return optimal_distribution(n_trg, n_trg);
}

// --- LP: minimize E[ell^2] s.t. simplex + diversity constraint ------------

struct LpInstance {
  int n_trg = 1;  // diversity budget: R(q) <= 1 / n_trg
  int u_max = 1;  // support {1, ..., u_max}

  void validate() const {
    if (n_trg < 1 || u_max < n_trg)
      throw std::invalid_argument("LpInstance: need 1 <= n_trg <= u_max");
  }
};

struct LpSolution {
  double objective = 0.0;
  std::vector<double> masses;  // size u_max, indexed by ell - 1
};

inline LpSolution closed_form_lp(const LpInstance& inst) {
  inst.validate();
  const LengthDistribution d = optimal_distribution(inst.n_trg, inst.u_max);
  LpSolution sol;
  sol.masses = d.masses();
  sol.objective =
      static_cast<double>(inst.n_trg) * (inst.n_trg + 1) / 2.0;
  return sol;
}

// Exhaustive exact search over the simplex grid q = k / resolution,
// k_ell >= 0 integers summing to `resolution`. Feasibility and objective
// comparisons are exact 64-bit integer arithmetic (cross-multiplied by
// lcm(1..u_max)), so the returned grid point is the true grid optimum.
// Enumeration is lexicographic in k, and ties keep the first minimizer, so
// the result is deterministic. Throws when the grid has more than 5e7 points.
inline LpSolution brute_force_lp(const LpInstance& inst, int resolution) {
  inst.validate();
  if (resolution < 1)
    throw std::invalid_argument("brute_force_lp: resolution must be >= 1");
  const int U = inst.u_max;

  double grid_points = 1.0;
  for (int i = 1; i < U; ++i)
    grid_points *= static_cast<double>(resolution + i) / static_cast<double>(i);
  if (grid_points > 5e7)
    throw std::runtime_error("brute_force_lp: grid too large");

  int64_t lcm_all = 1;
  for (int ell = 1; ell <= U; ++ell)
    lcm_all = std::lcm(lcm_all, static_cast<int64_t>(ell));
  std::vector<int64_t> inv_weight(static_cast<size_t>(U));
  for (int ell = 1; ell <= U; ++ell)
    inv_weight[static_cast<size_t>(ell - 1)] = lcm_all / ell;

  std::vector<int> k(static_cast<size_t>(U), 0);
  std::vector<int> best_k;
  int64_t best_obj = std::numeric_limits<int64_t>::max();

  const auto feasible = [&]() {
    int64_t total = 0;
    for (int ell = 1; ell <= U; ++ell)
      total += static_cast<int64_t>(k[static_cast<size_t>(ell - 1)]) *
               inv_weight[static_cast<size_t>(ell - 1)];
    for (int ell = 1; ell <= U; ++ell) {
      const int64_t lhs = static_cast<int64_t>(inst.n_trg) *
                          k[static_cast<size_t>(ell - 1)] *
                          inv_weight[static_cast<size_t>(ell - 1)];
      if (lhs > total) return false;
    }
    return true;
  };

  const auto visit = [&]() {
    if (!feasible()) return;
    int64_t obj = 0;
    for (int ell = 1; ell <= U; ++ell)
      obj += static_cast<int64_t>(k[static_cast<size_t>(ell - 1)]) *
             static_cast<int64_t>(ell) * ell;
    if (obj < best_obj) {
      best_obj = obj;
      best_k = k;
    }
  };

  const auto recurse = [&](auto&& self, int idx, int remaining) -> void {
    if (idx == U - 1) {
      k[static_cast<size_t>(idx)] = remaining;
      visit();
      return;
    }
    for (int c = 0; c <= remaining; ++c) {
      k[static_cast<size_t>(idx)] = c;
      self(self, idx + 1, remaining - c);
    }
  };
  recurse(recurse, 0, resolution);

  if (best_k.empty())
    throw std::runtime_error("brute_force_lp: no feasible grid point");
  LpSolution sol;
  sol.masses.resize(static_cast<size_t>(U));
  for (int ell = 1; ell <= U; ++ell)
    sol.masses[static_cast<size_t>(ell - 1)] =
        static_cast<double>(best_k[static_cast<size_t>(ell - 1)]) / resolution;
  sol.objective = static_cast<double>(best_obj) / resolution;
  return sol;
}

// --- KKT certificate -------------------------------------------------------

// Conditions are checked with the diversity constraints normalized as
//   g_ell(q) = q_ell / ell - (1/n) sum_j q_j / j <= 0,
// equality multiplier nu on sum q = 1, lambda_ell >= 0 on g_ell,
// mu_ell >= 0 on -q_ell <= 0. The closed-form multipliers are
//   nu = -n (n + 1) / 2,
//   lambda_bar = n^3/2 - n^2/2 + 1,
//   lambda_ell = lambda_bar - ell^3 - nu ell   (ell <= n, else 0),
//   mu_ell = ell^2 - lambda_bar / ell + nu     (ell > n, else 0),
// which pins lambda_n = 1.
struct KktReport {
  bool primal_simplex = false;     // sum to one, nonnegative
  bool primal_diversity = false;   // g_ell <= 0
  bool dual_lambda = false;        // lambda >= 0
  bool dual_mu = false;            // mu >= 0
  bool complementary = false;      // lambda*g = 0 and mu*q = 0
  bool stationary = false;         // gradient of the Lagrangian vanishes

  bool ok() const {
    return primal_simplex && primal_diversity && dual_lambda && dual_mu &&
           complementary && stationary;
  }
};

inline KktReport check_kkt(const LpInstance& inst,
                           const std::vector<double>& masses,
                           double tol = 1e-9) {
  inst.validate();
  const int n = inst.n_trg, U = inst.u_max;
  if (static_cast<int>(masses.size()) != U)
    throw std::invalid_argument("check_kkt: masses must have size u_max");

  KktReport report;

  double sum = 0.0;
  bool nonneg = true;
  for (const double q : masses) {
    sum += q;
    if (q < -tol) nonneg = false;
  }
  report.primal_simplex = nonneg && std::abs(sum - 1.0) <= tol;

  double inv_sum = 0.0;
  for (int ell = 1; ell <= U; ++ell)
    inv_sum += masses[static_cast<size_t>(ell - 1)] / ell;
  std::vector<double> g(static_cast<size_t>(U));
  bool div_ok = true;
  for (int ell = 1; ell <= U; ++ell) {
    g[static_cast<size_t>(ell - 1)] =
        masses[static_cast<size_t>(ell - 1)] / ell - inv_sum / n;
    if (g[static_cast<size_t>(ell - 1)] > tol) div_ok = false;
  }
  report.primal_diversity = div_ok;

  const double nu = -static_cast<double>(n) * (n + 1) / 2.0;
  const double lambda_bar = static_cast<double>(n) * n * n / 2.0 -
                            static_cast<double>(n) * n / 2.0 + 1.0;
  std::vector<double> lambda(static_cast<size_t>(U), 0.0);
  std::vector<double> mu(static_cast<size_t>(U), 0.0);
  for (int ell = 1; ell <= U; ++ell) {
    if (ell <= n)
      lambda[static_cast<size_t>(ell - 1)] =
          lambda_bar - static_cast<double>(ell) * ell * ell - nu * ell;
    else
      mu[static_cast<size_t>(ell - 1)] =
          static_cast<double>(ell) * ell - lambda_bar / ell + nu;
  }

  report.dual_lambda = true;
  report.dual_mu = true;
  for (int ell = 1; ell <= U; ++ell) {
    if (lambda[static_cast<size_t>(ell - 1)] < -tol) report.dual_lambda = false;
    if (mu[static_cast<size_t>(ell - 1)] < -tol) report.dual_mu = false;
  }

  report.complementary = true;
  for (int ell = 1; ell <= U; ++ell) {
    const size_t i = static_cast<size_t>(ell - 1);
    if (std::abs(lambda[i] * g[i]) > tol) report.complementary = false;
    if (std::abs(mu[i] * masses[i]) > tol) report.complementary = false;
  }

  double lambda_total = 0.0;
  for (int ell = 1; ell <= U; ++ell)
    lambda_total += lambda[static_cast<size_t>(ell - 1)];
  report.stationary = true;
  for (int ell = 1; ell <= U; ++ell) {
    const size_t i = static_cast<size_t>(ell - 1);
    const double grad = static_cast<double>(ell) * ell + lambda[i] / ell -
                        lambda_total / (static_cast<double>(n) * ell) + nu -
                        mu[i];
    if (std::abs(grad) > tol) report.stationary = false;
  }

  return report;
}

}  // namespace triggerlab
