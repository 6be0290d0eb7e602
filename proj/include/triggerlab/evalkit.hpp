#pragma once

// Evaluation utilities: held-out accuracy under the training law, the
// out-of-distribution copy benchmark with mechanism-attribution rates, a
// weight-space probe that classifies the learned mechanism, and heatmap
// export (lossless text grid, plus optional PGM for quick viewing).

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "triggerlab/datagen.hpp"
#include "triggerlab/length_distribution.hpp"
#include "triggerlab/linalg.hpp"
#include "triggerlab/model.hpp"
#include "triggerlab/rng.hpp"

namespace triggerlab {

// --- Accuracy under the training law --------------------------------------

inline double eval_in_distribution(const ModelParams& params,
                                   const LengthDistribution& dist,
                                   int n_samples, uint64_t seed) {
  params.validate();
  if (n_samples < 1)
    throw std::invalid_argument("eval_in_distribution: n_samples must be >= 1");
  const SamplerConfig cfg = params.sampler_config();
  cfg.validate_with(dist);
  int correct = 0;
  for (int i = 0; i < n_samples; ++i) {
    Rng rng(seed, Stream::eval_in_dist, static_cast<uint64_t>(i));
    const int ell = sample_length(dist, rng);
    const TokenSequence seq = sample_train_sequence(cfg, ell, rng);
    if (predict_token(embed(seq, cfg), params) == seq.output) ++correct;
  }
  return static_cast<double>(correct) / n_samples;
}

// --- Out-of-distribution copy benchmark ------------------------------------

// Test law: ell ~ Unif{ell_min+1, ..., ell_max}, then ell1 uniform on
// {1, ..., 2 ell - 1} \ {ell} and ell2 = 2 ell - ell1, so the two gaps are
// unequal but their mean matches an in-support position. Three disjoint
// diagnostics of where the prediction lands:
//   ood_accuracy  - predicted token equals the true continuation z_{T+1};
//   pseudo_rate   - it equals the token two right of the averaged gap,
//                   z_{(ell1+ell2)/2 + 2} (mean-position shortcut);
//   leftmost_rate - it equals z_{ell_min + 2} (leftmost-shortcut position).
struct OodRates {
  double ood_accuracy = 0.0;
  double pseudo_rate = 0.0;
  double leftmost_rate = 0.0;
};

inline OodRates eval_ood(const ModelParams& params, int ell_min, int ell_max,
                         int n_samples, uint64_t seed) {
  params.validate();
  if (n_samples < 1)
    throw std::invalid_argument("eval_ood: n_samples must be >= 1");
  if (ell_min < 1 || ell_max <= ell_min)
    throw std::invalid_argument("eval_ood: need 1 <= ell_min < ell_max");
  const SamplerConfig cfg = params.sampler_config();
  if (2 * ell_max + 4 > cfg.L - 1)
    throw std::invalid_argument("eval_ood: ell_max too large for L");
  OodRates rates;
  for (int i = 0; i < n_samples; ++i) {
    Rng rng(seed, Stream::eval_ood, static_cast<uint64_t>(i));
    const TokenSequence seq = sample_ood_sequence(cfg, ell_min, ell_max, rng);
    const int pred = predict_token(embed(seq, cfg), params);
    const int T = seq.total_length();
    const int pseudo = (seq.ell1 + seq.ell2) / 2 + 2;
    if (pred == seq.token_at(T + 1)) rates.ood_accuracy += 1.0;
    if (pred == seq.token_at(pseudo)) rates.pseudo_rate += 1.0;
    if (pred == seq.token_at(ell_min + 2)) rates.leftmost_rate += 1.0;
  }
  rates.ood_accuracy /= n_samples;
  rates.pseudo_rate /= n_samples;
  rates.leftmost_rate /= n_samples;
  return rates;
}

// --- Weight-space mechanism probe ------------------------------------------

// Primary statistic: the mean induction entry of W_KQ (previous-token row of
// trigger w against token column of w) versus every positional entry
// (position row ell+2 against position column T(ell)). Secondary statistic:
// actual attention mass on probe sequences with gaps (1, 2 ell - 1), where
// the induction target sits at position 3 and the positional shortcut at
// ell + 2.
struct MechanismProbe {
  double induction_strength = 0.0;
  std::map<int, double> positional_strengths;  // ell -> W_KQ entry
  int top_positional_ell = -1;
  double top_positional_strength = 0.0;
  std::string dominant;  // "induction" or "positional"
  double attention_induction_mass = 0.0;
  double attention_positional_mass = 0.0;
};

inline MechanismProbe probe_mechanism(const ModelParams& params,
                                      const LengthDistribution& dist) {
  params.validate();
  const int N = params.N, Ntr = params.N_trg, L = params.L;
  MechanismProbe probe;

  for (int w = 1; w <= Ntr; ++w)
    probe.induction_strength += params.W_KQ(L + N + w - 1, L + w - 1);
  probe.induction_strength /= Ntr;

  const int ell_cap = (L - 3) / 2;
  for (int ell = 1; ell <= ell_cap; ++ell) {
    const double s = params.W_KQ(ell + 1, total_length_for(ell) - 1);
    probe.positional_strengths[ell] = s;
    if (probe.top_positional_ell < 0 || s > probe.top_positional_strength) {
      probe.top_positional_ell = ell;
      probe.top_positional_strength = s;
    }
  }
  probe.dominant =
      (probe.induction_strength > probe.top_positional_strength)
          ? "induction"
          : "positional";

  const SamplerConfig cfg = params.sampler_config();
  int n_probe = 0;
  for (size_t i = 0; i < dist.support().size(); ++i) {
    if (dist.masses()[i] <= 0.0) continue;
    const int ell = dist.support()[i];
    if (ell < 2 || 2 * ell + 4 > L) continue;  // need ell1 != ell2 and room
    const TokenSequence seq = adversarial_sequence(cfg, 1, 2 * ell - 1);
    const Mat X = embed(seq, cfg);
    const Vec a = attention_weights(X, params);
    probe.attention_induction_mass += a[2];        // position 3
    probe.attention_positional_mass += a[ell + 1]; // position ell + 2
    ++n_probe;
  }
  if (n_probe > 0) {
    probe.attention_induction_mass /= n_probe;
    probe.attention_positional_mass /= n_probe;
  }
  return probe;
}

// --- Metrics record ---------------------------------------------------------

struct MetricsRecord {
  int ell_min = 0;
  int ell_max = 0;
  int n_trg = 0;
  uint64_t seed = 0;
  double ood_accuracy = 0.0;
  double pseudo_rate = 0.0;
  double leftmost_rate = 0.0;
  std::string dominant_mechanism;

  static std::string csv_header() {
    return "ell_min,ell_max,N_trg,seed,ood_accuracy,pseudo_rate,leftmost_rate,"
           "dominant_mechanism";
  }

  std::string csv_row() const {
    std::ostringstream out;
    out << ell_min << ',' << ell_max << ',' << n_trg << ',' << seed << ','
        << format_double(ood_accuracy) << ',' << format_double(pseudo_rate)
        << ',' << format_double(leftmost_rate) << ',' << dominant_mechanism;
    return out.str();
  }
};

// --- Heatmaps ----------------------------------------------------------------

enum class HeatmapBlock { full, position, token, prev };

inline HeatmapBlock heatmap_block_from_string(const std::string& name) {
  if (name == "full") return HeatmapBlock::full;
  if (name == "position") return HeatmapBlock::position;
  if (name == "token") return HeatmapBlock::token;
  if (name == "prev") return HeatmapBlock::prev;
  throw std::invalid_argument("unknown heatmap block: " + name);
}

// (offset, size) of a block along a D = L + 2N embedding axis.
inline std::pair<int, int> heatmap_block_range(HeatmapBlock block, int L,
                                               int N) {
  switch (block) {
    case HeatmapBlock::full:
      return {0, L + 2 * N};
    case HeatmapBlock::position:
      return {0, L};
    case HeatmapBlock::token:
      return {L, N};
    case HeatmapBlock::prev:
      return {L + N, N};
  }
  throw std::logic_error("heatmap_block_range: unreachable");
}

inline Mat extract_block(const Mat& M, int L, int N, HeatmapBlock row_block,
                         HeatmapBlock col_block) {
  const auto [r0, nr] = heatmap_block_range(row_block, L, N);
  const auto [c0, nc] = heatmap_block_range(col_block, L, N);
  if (r0 + nr > M.rows() || c0 + nc > M.cols())
    throw std::invalid_argument("extract_block: block exceeds matrix bounds");
  return M.block(r0, c0, nr, nc);
}

// Text grid: line 1 "heatmap v1", line 2 "rows cols", then one line per row
// of %.17g entries. Lossless round trip for doubles.
inline void write_matrix_text(const std::string& path, const Mat& M) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "heatmap v1\n" << M.rows() << ' ' << M.cols() << '\n';
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      if (j > 0) out << ' ';
      out << format_double(M(i, j));
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline Mat read_matrix_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::string magic, version;
  in >> magic >> version;
  if (magic != "heatmap" || version != "v1")
    throw std::runtime_error("not a heatmap file: " + path);
  Eigen::Index rows = 0, cols = 0;
  in >> rows >> cols;
  if (!in || rows < 1 || cols < 1)
    throw std::runtime_error("bad heatmap dimensions: " + path);
  Mat M(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      if (!(in >> M(i, j)))
        throw std::runtime_error("truncated heatmap file: " + path);
  return M;
}

// 8-bit PGM (P2), linearly rescaled; constant matrices map to mid-gray.
inline void write_matrix_pgm(const std::string& path, const Mat& M) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  const double lo = M.minCoeff(), hi = M.maxCoeff();
  out << "P2\n" << M.cols() << ' ' << M.rows() << "\n255\n";
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) {
      int level = 128;
      if (hi > lo)
        level = static_cast<int>(
            std::lround(255.0 * (M(i, j) - lo) / (hi - lo)));
      level = std::clamp(level, 0, 255);
      if (j > 0) out << ' ';
      out << level;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace triggerlab
