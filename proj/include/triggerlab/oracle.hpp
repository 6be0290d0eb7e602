#pragma once

// Population-limit (infinite-sample) oracles for the one-step training
// procedure, plus the closed-form attention-logit certifier.
//
// Conventions. eta_tilde_v = eta_v / N is the rescaled stage-1 learning rate;
// eta_tilde = eta_tilde_v * eta_kq * E[1/T] is the natural scale of the
// stage-2 matrix. population_wv is the exact infinite-sample W_V step.
// population_wkq is the dominant-term W_KQ step: positional block
// (rows ell+2, ell+3 -> columns {position T(ell), token w}), induction block
// (previous-token row w -> same columns), and the -2 T^{-2} corrections; the
// omitted remainder is O(eta_tilde * N_trg / N) per entry and its scale is
// reported as metadata. population_wkq_exact computes the exact limit (no
// dropped terms, softmax included) by deterministic enumeration and is used
// where exactness matters (concentration-rate measurements, validation).

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "triggerlab/datagen.hpp"
#include "triggerlab/length_distribution.hpp"
#include "triggerlab/linalg.hpp"
#include "triggerlab/model.hpp"
#include "triggerlab/trainer.hpp"

namespace triggerlab {

// --- Moments of the pretraining length distribution ---------------------

struct PopulationStats {
  double expected_inv_t = 0.0;    // E[1/T]
  double expected_inv_t2 = 0.0;   // E[1/T^2]
  std::vector<double> alpha;      // alpha[t-1] = E[(1/T) 1{t <= T}], t in [1, L]
  std::map<int, double> per_ell_terms;  // ell -> q_ell / T(ell)
};

inline PopulationStats population_stats(const LengthDistribution& dist, int L) {
  PopulationStats stats;
  stats.alpha.assign(static_cast<size_t>(L), 0.0);
  const auto& sup = dist.support();
  const auto& q = dist.masses();
  for (size_t i = 0; i < sup.size(); ++i) {
    if (q[i] <= 0.0) continue;
    const int T = total_length_for(sup[i]);
    const double inv_t = 1.0 / static_cast<double>(T);
    stats.expected_inv_t += q[i] * inv_t;
    stats.expected_inv_t2 += q[i] * inv_t * inv_t;
    stats.per_ell_terms[sup[i]] = q[i] * inv_t;
    for (int t = 1; t <= std::min(T, L); ++t)
      stats.alpha[static_cast<size_t>(t - 1)] += q[i] * inv_t;
  }
  return stats;
}

// E[T^{-2} 1{t <= T}]
inline double expected_inv_t2_at(const LengthDistribution& dist, int t) {
  double acc = 0.0;
  for (size_t i = 0; i < dist.support().size(); ++i) {
    const int T = total_length_for(dist.support()[i]);
    if (t <= T)
      acc += dist.masses()[i] / (static_cast<double>(T) * static_cast<double>(T));
  }
  return acc;
}

inline double eta_tilde_scale(double eta_v, double eta_kq,
                              const SamplerConfig& cfg,
                              const PopulationStats& stats) {
  return (eta_v / static_cast<double>(cfg.N)) * eta_kq * stats.expected_inv_t;
}

// --- Exact population W_V step -------------------------------------------

// Infinite-sample limit of -eta_v * mean(grad_wv_sample), parameterized by
// eta_tilde_v = eta_v / N. Exact for every entry. Position columns scale with
// alpha_t; token and previous-token columns take one of five values depending
// on (row class, column class); the previous-token trigger column differs from
// the token trigger column by a factor 2 because the trigger occurs twice in
// z_{1:T} but once in z_{1:T-1}.
inline Mat population_wv(const LengthDistribution& dist,
                         const SamplerConfig& cfg, double eta_tilde_v) {
  cfg.validate();
  const int N = cfg.N, Ntr = cfg.N_trg, L = cfg.L;
  const int No = N - Ntr;
  const PopulationStats stats = population_stats(dist, L);
  const double e1 = stats.expected_inv_t;

  Mat W = Mat::Zero(N, L + 2 * N);

  for (int t = 1; t <= L; ++t) {
    const double a = stats.alpha[static_cast<size_t>(t - 1)];
    for (int k = 1; k <= N; ++k)
      W(k - 1, t - 1) = (k <= Ntr)
                            ? -eta_tilde_v * a
                            : eta_tilde_v * a * Ntr / static_cast<double>(No);
  }

  // Entry values shared by the token and previous-token blocks for
  // non-trigger columns; `occ` = expected trigger occurrences (2 or 1).
  const double diag_val =
      eta_tilde_v *
      (Ntr + e1 * (static_cast<double>(N) * (N - 1) -
                   static_cast<double>(Ntr) * (N + 2))) /
      (static_cast<double>(No) * No);
  const double offdiag_val =
      eta_tilde_v * (Ntr - e1 * (N + 2.0 * Ntr)) /
      (static_cast<double>(No) * No);
  const double trig_row_out_col = -eta_tilde_v * (1.0 - 2.0 * e1) / No;

  for (int block = 0; block < 2; ++block) {
    const int base = L + block * N;
    const double occ = (block == 0) ? 2.0 : 1.0;
    for (int j = 1; j <= N; ++j) {
      for (int k = 1; k <= N; ++k) {
        double val;
        if (j <= Ntr) {
          val = (k <= Ntr) ? -eta_tilde_v * occ * e1 / Ntr
                           : eta_tilde_v * occ * e1 / No;
        } else if (k <= Ntr) {
          val = trig_row_out_col;
        } else {
          val = (j == k) ? diag_val : offdiag_val;
        }
        W(k - 1, base + j - 1) = val;
      }
    }
  }
  return W;
}

// --- Dominant-term population W_KQ step ----------------------------------

struct PopulationWkq {
  Mat matrix;             // D x D dominant terms
  double excluded_bound;  // per-entry scale of the omitted remainder
};

inline PopulationWkq population_wkq(const LengthDistribution& dist,
                                    const SamplerConfig& cfg,
                                    double eta_tilde) {
  cfg.validate();
  const int N = cfg.N, Ntr = cfg.N_trg, L = cfg.L;
  const int D = L + 2 * N;
  Mat W = Mat::Zero(D, D);

  const auto& sup = dist.support();
  const auto& q = dist.masses();
  for (size_t i = 0; i < sup.size(); ++i) {
    if (q[i] <= 0.0) continue;
    const int ell = sup[i];
    const int T = total_length_for(ell);
    if (T > L)
      throw std::invalid_argument("population_wkq: support length exceeds L");
    const double inv_t = 1.0 / static_cast<double>(T);
    const double coef = eta_tilde * q[i] / static_cast<double>(Ntr);
    for (int w = 1; w <= Ntr; ++w) {
      const std::array<int, 2> cols = {T - 1, L + w - 1};
      for (const int j : cols) {
        W(ell + 1, j) += coef * inv_t;            // position row ell+2
        W(ell + 2, j) += coef * inv_t;            // position row ell+3
        W(L + N + w - 1, j) += coef * inv_t;      // previous-token row w
        for (int t = 1; t <= T; ++t)
          if (t != ell + 2 && t != ell + 3)
            W(t - 1, j) -= 2.0 * coef * inv_t * inv_t;
        W(L + w - 1, j) -= 4.0 * coef * inv_t * inv_t;  // token row w
      }
    }
  }
  return PopulationWkq{std::move(W),
                       std::abs(eta_tilde) * Ntr / static_cast<double>(N)};
}

// --- Exact population W_KQ step by sufficient-statistic enumeration ------

namespace detail {

// Number of count vectors (compositions) of m into bins parts.
inline double composition_count(int m, int bins) {
  double c = 1.0;
  for (int i = 1; i < bins; ++i)
    c *= static_cast<double>(m + i) / static_cast<double>(i);
  return c;
}

// Role of a 1-based sequence position inside z_{1:T}.
enum class SlotKind { none, trigger, output, irrelevant };

inline SlotKind classify_slot(int p, int ell, int T) {
  if (p < 1) return SlotKind::none;
  if (p == ell + 1 || p == T) return SlotKind::trigger;
  if (p == ell + 2) return SlotKind::output;
  return SlotKind::irrelevant;
}

}  // namespace detail

// Exact infinite-sample limit of the stage-2 step, -eta_kq * E[grad], with
// W_V fixed at the exact population stage-1 matrix. Deterministic: the
// expectation is evaluated by enumerating (ell, trigger w, output o,
// irrelevant count vector) classes with exact multinomial weights, and inside
// a class by the exact joint law of the at-most-three random slots each term
// touches (z_{t-1}, z_t, z_{T-1} under exchangeable arrangement of the count
// multiset). The softmax in p = softmax(W_V* xbar) is evaluated per class, so
// nothing is linearized. Cost grows with C(2*ell + N - N_trg - 1, ...); a
// guard rejects configurations beyond ~5e6 enumeration classes.
inline Mat population_wkq_exact(const LengthDistribution& dist,
                                const SamplerConfig& cfg, double eta_v,
                                double eta_kq) {
  cfg.validate_with(dist);
  const int N = cfg.N, Ntr = cfg.N_trg, L = cfg.L;
  const int B = N - Ntr;  // non-trigger alphabet size
  const int D = L + 2 * N;
  const Mat W_V = population_wv(dist, cfg, eta_v / static_cast<double>(N));

  double total_classes = 0.0;
  for (size_t i = 0; i < dist.support().size(); ++i)
    if (dist.masses()[i] > 0.0)
      total_classes += static_cast<double>(Ntr) * B *
                       detail::composition_count(2 * dist.support()[i], B);
  if (total_classes > 5e6)
    throw std::runtime_error(
        "population_wkq_exact: enumeration too large for this configuration");

  Mat G = Mat::Zero(D, D);
  const size_t fact_size = static_cast<size_t>(2 * dist.max_ell() + 2);
  std::vector<double> log_fact(fact_size, 0.0);
  for (size_t i = 2; i < fact_size; ++i)
    log_fact[i] = log_fact[i - 1] + std::log(static_cast<double>(i));

  std::vector<int> counts(static_cast<size_t>(B), 0);
  Vec xbar(D), wvec(N), v(D);

  // Enumerate count vectors recursively; `process` handles one class.
  const auto process_class = [&](int ell, int w, int o, double pcls) {
    const int T = total_length_for(ell);
    const int m = 2 * ell;
    // token counts over z_{1:T} and z_{1:T-1} (the latter drops one trigger)
    std::vector<double> cnt1T(static_cast<size_t>(N), 0.0);
    for (int a = 0; a < B; ++a)
      cnt1T[static_cast<size_t>(Ntr + a)] = counts[static_cast<size_t>(a)];
    cnt1T[static_cast<size_t>(w - 1)] += 2.0;
    cnt1T[static_cast<size_t>(o - 1)] += 1.0;

    xbar.setZero();
    const double inv_t = 1.0 / static_cast<double>(T);
    for (int t = 1; t <= T; ++t) xbar[t - 1] = inv_t;
    for (int a = 1; a <= N; ++a) {
      xbar[L + a - 1] = cnt1T[static_cast<size_t>(a - 1)] * inv_t;
      xbar[L + N + a - 1] = cnt1T[static_cast<size_t>(a - 1)] * inv_t;
    }
    xbar[L + N + w - 1] -= inv_t;  // z_{1:T-1} holds the trigger once

    wvec = softmax(W_V * xbar);
    wvec[o - 1] -= 1.0;
    v = W_V.transpose() * wvec;

    // s = sum_t c_t is a function of the counts alone.
    double s = 0.0;
    for (int t = 1; t <= T; ++t) s += v[t - 1];
    for (int a = 1; a <= N; ++a) {
      s += cnt1T[static_cast<size_t>(a - 1)] * v[L + a - 1];
      s += cnt1T[static_cast<size_t>(a - 1)] * v[L + N + a - 1];
    }
    s -= v[L + N + w - 1];

    // term 2: -(s / T) * xbar * E[x_T]^T ; E[x_T] has fixed position and
    // token rows and hypergeometric previous-token weights n_a / m.
    const double w2 = -pcls * s * inv_t;
    G.col(T - 1) += w2 * xbar;
    G.col(L + w - 1) += w2 * xbar;
    for (int a = 0; a < B; ++a) {
      const double pa =
          counts[static_cast<size_t>(a)] / static_cast<double>(m);
      if (pa > 0.0) G.col(L + N + Ntr + a) += (w2 * pa) * xbar;
    }

    // term 1: sum_t E[c_t x_t x_T^T], enumerating the random slots among
    // {t-1, t, T-1} exactly (sampling without replacement from the count
    // multiset).
    for (int t = 1; t <= T; ++t) {
      const detail::SlotKind kind_prev = detail::classify_slot(t - 1, ell, T);
      const detail::SlotKind kind_cur = detail::classify_slot(t, ell, T);

      std::array<int, 3> slots = {t - 1, t, T - 1};
      std::array<detail::SlotKind, 3> kinds = {
          kind_prev, kind_cur, detail::SlotKind::irrelevant};
      // distinct random positions, in first-appearance order
      std::array<int, 3> rnd_pos{};
      int r = 0;
      for (int sidx = 0; sidx < 3; ++sidx) {
        if (kinds[static_cast<size_t>(sidx)] != detail::SlotKind::irrelevant)
          continue;
        bool seen = false;
        for (int j = 0; j < r; ++j)
          if (rnd_pos[static_cast<size_t>(j)] ==
              slots[static_cast<size_t>(sidx)])
            seen = true;
        if (!seen) rnd_pos[static_cast<size_t>(r++)] = slots[static_cast<size_t>(sidx)];
      }

      // assignment[0..r-1] are token values (1-based ids) for rnd_pos
      std::array<int, 3> assignment{};
      const auto value_at = [&](int p) -> int {
        const detail::SlotKind k = detail::classify_slot(p, ell, T);
        if (k == detail::SlotKind::trigger) return w;
        if (k == detail::SlotKind::output) return o;
        if (k == detail::SlotKind::none) return 0;
        for (int j = 0; j < r; ++j)
          if (rnd_pos[static_cast<size_t>(j)] == p)
            return assignment[static_cast<size_t>(j)];
        throw std::logic_error("population_wkq_exact: unmapped slot");
      };

      const auto emit = [&](double prob) {
        const int zt = value_at(t);
        const int zprev = (t >= 2) ? value_at(t - 1) : 0;
        const int zlast = value_at(T - 1);
        double c = v[t - 1] + v[L + zt - 1];
        if (zprev > 0) c += v[L + N + zprev - 1];
        const double weight = pcls * prob * c * inv_t;
        const std::array<int, 3> rows = {t - 1, L + zt - 1,
                                         zprev > 0 ? L + N + zprev - 1 : -1};
        const std::array<int, 3> cols = {T - 1, L + w - 1, L + N + zlast - 1};
        for (const int i : rows) {
          if (i < 0) continue;
          for (const int j : cols) G(i, j) += weight;
        }
      };

      // enumerate r nested value choices with exact falling-count weights
      const auto recurse = [&](auto&& self, int depth, double prob) -> void {
        if (depth == r) {
          emit(prob);
          return;
        }
        for (int a = 0; a < B; ++a) {
          int avail = counts[static_cast<size_t>(a)];
          for (int j = 0; j < depth; ++j)
            if (assignment[static_cast<size_t>(j)] == Ntr + 1 + a) --avail;
          if (avail <= 0) continue;
          assignment[static_cast<size_t>(depth)] = Ntr + 1 + a;
          self(self, depth + 1,
               prob * avail / static_cast<double>(m - depth));
        }
      };
      recurse(recurse, 0, 1.0);
    }
  };

  const auto& sup = dist.support();
  const auto& q = dist.masses();
  for (size_t i = 0; i < sup.size(); ++i) {
    if (q[i] <= 0.0) continue;
    const int ell = sup[i];
    const int m = 2 * ell;
    const double base_p =
        q[i] / (static_cast<double>(Ntr) * static_cast<double>(B));
    const double log_balpha = static_cast<double>(m) * std::log(static_cast<double>(B));
    // recursive composition enumeration of `counts`
    const auto comp = [&](auto&& self, int bin, int remaining) -> void {
      if (bin == B - 1) {
        counts[static_cast<size_t>(bin)] = remaining;
        double log_multinom = log_fact[static_cast<size_t>(m)];
        for (int a = 0; a < B; ++a)
          log_multinom -= log_fact[static_cast<size_t>(counts[static_cast<size_t>(a)])];
        const double pcls = base_p * std::exp(log_multinom - log_balpha);
        for (int w = 1; w <= Ntr; ++w)
          for (int o = Ntr + 1; o <= cfg.N; ++o) process_class(ell, w, o, pcls);
        return;
      }
      for (int c = 0; c <= remaining; ++c) {
        counts[static_cast<size_t>(bin)] = c;
        self(self, bin + 1, remaining - c);
      }
    };
    comp(comp, 0, m);
  }

  return -eta_kq * G;
}

// --- Closed-form attention logits and the OOD certifier ------------------

// Attention logit s_t (per unit eta_tilde) of the population model on an
// arbitrary test sequence, dominant terms only. Group A is the contribution
// of the position-T* column of W_KQ (present only when T* matches an
// in-support total length, with mass q*); group B is the contribution of the
// token-w* column picked out by the query's trigger token.
inline double attention_logit_closed_form(const TokenSequence& seq,
                                          const LengthDistribution& dist,
                                          const SamplerConfig& cfg, int t) {
  cfg.validate();
  const int T_star = seq.total_length();
  if (t < 1 || t > T_star)
    throw std::invalid_argument(
        "attention_logit_closed_form: t must be in [1, T*]");
  const int Ntr = cfg.N_trg;
  const int w_star = seq.trigger;
  const int z_t = seq.token_at(t);
  const int z_prev = (t >= 2) ? seq.token_at(t - 1) : 0;

  const PopulationStats stats = population_stats(dist, cfg.L);
  const double inv_t = 1.0 / static_cast<double>(T_star);
  const double inv_t2 = inv_t * inv_t;

  double q_star = 0.0;
  int ell_star = -1;
  if ((T_star - 3) % 2 == 0) {
    ell_star = (T_star - 3) / 2;
    q_star = dist.mass_at(ell_star);
  }

  double s = 0.0;
  if (q_star > 0.0) {
    const bool shortcut_pos = (t == ell_star + 2 || t == ell_star + 3);
    s += q_star * ((inv_t + 2.0 * inv_t2) * (shortcut_pos ? 1.0 : 0.0) -
                   2.0 * inv_t2);
    const bool prev_is_trigger = (z_prev >= 1 && z_prev <= Ntr);
    const bool cur_is_trigger = (z_t >= 1 && z_t <= Ntr);
    s += (q_star / Ntr) * (inv_t * (prev_is_trigger ? 1.0 : 0.0) -
                           4.0 * inv_t2 * (cur_is_trigger ? 1.0 : 0.0));
  }

  double group_b = 0.0;
  for (int d = 2; d <= 3; ++d) {
    const int ell = t - d;
    if (ell < 1) continue;
    const double q = dist.mass_at(ell);
    if (q <= 0.0) continue;
    const double it = 1.0 / static_cast<double>(total_length_for(ell));
    group_b += q * (it + 2.0 * it * it);
  }
  if (z_prev == w_star) group_b += stats.expected_inv_t;
  group_b -= 2.0 * expected_inv_t2_at(dist, t);
  if (z_t == w_star) group_b -= 4.0 * stats.expected_inv_t2;
  s += group_b / Ntr;

  return s;
}

struct CertificationResult {
  bool generalizes = false;
  double margin = 0.0;  // min over pairs and positions of s_{l1+2} - 2 s_t
  std::optional<TokenSequence> witness;  // most violated sequence when false
  int witness_position = -1;             // competitor position t
};

// Exhaustive scan over all admissible test gaps. The model generalizes (at
// the population limit, dominant terms) iff the induction target ell1+2
// dominates every other position's attention logit with a factor-2 margin on
// the worst-case all-filler sequence.
inline CertificationResult certify_ood(const LengthDistribution& dist,
                                       const SamplerConfig& cfg) {
  cfg.validate();
  if (cfg.N < cfg.N_trg + 2)
    throw std::invalid_argument("certify_ood: need N >= N_trg + 2");
  CertificationResult result;
  result.margin = std::numeric_limits<double>::infinity();
  for (int ell1 = 1; ell1 + 5 <= cfg.L - 1; ++ell1) {
    for (int ell2 = 1; ell1 + ell2 + 4 <= cfg.L - 1; ++ell2) {
      const TokenSequence seq = adversarial_sequence(cfg, ell1, ell2);
      const int T = seq.total_length();
      const int target = ell1 + 2;
      const double s_target =
          attention_logit_closed_form(seq, dist, cfg, target);
      for (int t = 1; t <= T; ++t) {
        if (t == target) continue;
        const double gap =
            s_target - 2.0 * attention_logit_closed_form(seq, dist, cfg, t);
        if (gap < result.margin) {
          result.margin = gap;
          result.witness = seq;
          result.witness_position = t;
        }
      }
    }
  }
  result.generalizes = (result.margin >= 0.0);
  if (result.generalizes) {
    result.witness.reset();
    result.witness_position = -1;
  }
  return result;
}

}  // namespace triggerlab
