#pragma once

// Trigger-output copying task: vocabulary conventions and sequence samplers.
//
// Tokens are 1-based ids in [1, N]. Ids 1..N_trg are trigger tokens; ids
// N_trg+1..N serve both as output tokens and as irrelevant filler. A sequence
// with gaps (ell1, ell2) looks like
//
//   [irr x ell1, w, o, irr x ell2, w, o]
//
// with trigger w at positions ell1+1 and T = ell1+ell2+3, and output o at
// positions ell1+2 and T+1. Irrelevant tokens are i.i.d. uniform on
// [N_trg+1, N] and may collide with o by design.

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "triggerlab/length_distribution.hpp"
#include "triggerlab/rng.hpp"

namespace triggerlab {

struct SamplerConfig {
  int N = 16;      // vocabulary size
  int N_trg = 2;   // number of trigger tokens
  int L = 40;      // maximum context length (position-embedding budget)

  void validate() const {
    if (N_trg < 1 || N_trg >= N)
      throw std::invalid_argument(
          "SamplerConfig: need 1 <= N_trg < N (got N_trg=" +
          std::to_string(N_trg) + ", N=" + std::to_string(N) + ")");
    if (L < 7)
      throw std::invalid_argument(
          "SamplerConfig: L must be at least 7 (shortest sequence has T+1=6 "
          "entries and needs T <= L)");
  }

  // Non-fatal checks of the natural-scaling assumptions; violations degrade
  // the population approximations but every routine stays well defined.
  std::vector<std::string> scaling_warnings(const LengthDistribution& dist) const {
    std::vector<std::string> warnings;
    if (static_cast<long long>(N_trg) * N_trg * N_trg >= N)
      warnings.push_back(
          "scaling: N_trg^3 >= N; population error terms O(N_trg/N) are not "
          "small");
    for (size_t i = 0; i < dist.support().size(); ++i)
      if (dist.masses()[i] > 0.0 && dist.support()[i] < 4) {
        warnings.push_back(
            "scaling: support contains lengths < 4; short-sequence "
            "corrections are significant");
        break;
      }
    return warnings;
  }

  // Hard requirement for sampling/training with a given length distribution:
  // the longest realizable sequence must fit, 2*ell + 4 <= L - 1.
  void validate_with(const LengthDistribution& dist) const {
    validate();
    const int ell = dist.max_positive_ell();
    if (2 * ell + 4 > L - 1)
      throw std::invalid_argument(
          "SamplerConfig: length " + std::to_string(ell) +
          " needs 2*ell+4 <= L-1 but L=" + std::to_string(L));
  }
};

struct TokenSequence {
  std::vector<int> tokens;  // size T+1, values in [1, N]; index 0 is z_1
  int ell1 = 0;
  int ell2 = 0;
  int trigger = 0;
  int output = 0;

  int total_length() const { return ell1 + ell2 + 3; }  // T; excludes z_{T+1}

  int token_at(int position) const {  // 1-based position in [1, T+1]
    if (position < 1 || position > static_cast<int>(tokens.size()))
      throw std::out_of_range("TokenSequence: position out of range");
    return tokens[static_cast<size_t>(position - 1)];
  }

  void validate(const SamplerConfig& cfg) const {
    const int T = total_length();
    if (ell1 < 1 || ell2 < 1)
      throw std::invalid_argument("TokenSequence: gaps must be >= 1");
    if (static_cast<int>(tokens.size()) != T + 1)
      throw std::invalid_argument("TokenSequence: token count must be T+1");
    if (trigger < 1 || trigger > cfg.N_trg)
      throw std::invalid_argument("TokenSequence: trigger out of range");
    if (output <= cfg.N_trg || output > cfg.N)
      throw std::invalid_argument("TokenSequence: output out of range");
    if (T > cfg.L - 1)
      throw std::invalid_argument("TokenSequence: T exceeds L-1");
    for (int p = 1; p <= T + 1; ++p) {
      const int z = token_at(p);
      const bool is_trigger_pos = (p == ell1 + 1 || p == T);
      const bool is_output_pos = (p == ell1 + 2 || p == T + 1);
      if (is_trigger_pos) {
        if (z != trigger)
          throw std::invalid_argument("TokenSequence: trigger slot mismatch");
      } else if (is_output_pos) {
        if (z != output)
          throw std::invalid_argument("TokenSequence: output slot mismatch");
      } else {
        if (z <= cfg.N_trg || z > cfg.N)
          throw std::invalid_argument(
              "TokenSequence: irrelevant token out of range");
      }
    }
  }
};

// Draw a length from the pretraining distribution (one uniform real draw).
inline int sample_length(const LengthDistribution& dist, Rng& rng) {
  return dist.sample(rng);
}

// General two-gap sampler. Consumes exactly 2 + ell1 + ell2 bounded integer
// draws, in the order: trigger, output, irrelevant tokens left to right.
inline TokenSequence sample_general_sequence(const SamplerConfig& cfg, int ell1,
                                             int ell2, Rng& rng) {
  cfg.validate();
  if (ell1 < 1 || ell2 < 1)
    throw std::invalid_argument("sample_general_sequence: gaps must be >= 1");
  if (ell1 + ell2 + 4 > cfg.L - 1)
    throw std::invalid_argument(
        "sample_general_sequence: ell1+ell2+4 must be <= L-1");

  TokenSequence seq;
  seq.ell1 = ell1;
  seq.ell2 = ell2;
  seq.trigger = static_cast<int>(rng.next_int(1, cfg.N_trg));
  seq.output = static_cast<int>(rng.next_int(cfg.N_trg + 1, cfg.N));
  const int T = seq.total_length();
  seq.tokens.assign(static_cast<size_t>(T + 1), 0);
  seq.tokens[static_cast<size_t>(ell1)] = seq.trigger;       // position ell1+1
  seq.tokens[static_cast<size_t>(ell1 + 1)] = seq.output;    // position ell1+2
  seq.tokens[static_cast<size_t>(T - 1)] = seq.trigger;      // position T
  seq.tokens[static_cast<size_t>(T)] = seq.output;           // position T+1
  for (int p = 1; p <= T + 1; ++p) {
    if (seq.tokens[static_cast<size_t>(p - 1)] == 0)
      seq.tokens[static_cast<size_t>(p - 1)] =
          static_cast<int>(rng.next_int(cfg.N_trg + 1, cfg.N));
  }
  return seq;
}

// In-distribution sampler: equal gaps ell1 = ell2 = ell.
inline TokenSequence sample_train_sequence(const SamplerConfig& cfg, int ell,
                                           Rng& rng) {
  return sample_general_sequence(cfg, ell, ell, rng);
}

// Out-of-distribution evaluation sampler:
//   ell  ~ Unif([ell_min+1, ell_max])
//   ell1 ~ Unif({1..2*ell-1} \ {ell}),  ell2 = 2*ell - ell1  (so ell1 != ell2)
inline TokenSequence sample_ood_sequence(const SamplerConfig& cfg, int ell_min,
                                         int ell_max, Rng& rng) {
  if (ell_min + 1 > ell_max)
    throw std::invalid_argument(
        "sample_ood_sequence: need ell_min + 1 <= ell_max");
  const int ell = static_cast<int>(rng.next_int(ell_min + 1, ell_max));
  int ell1 = static_cast<int>(rng.next_int(1, 2 * ell - 2));
  if (ell1 >= ell) ++ell1;  // skip the diagonal value
  return sample_general_sequence(cfg, ell1, 2 * ell - ell1, rng);
}

// Deterministic worst-case probe: every irrelevant slot holds the same filler
// token u, so a positional shortcut reading any non-target slot is always
// wrong. Uses w = 1, u = N_trg+1, v = N_trg+2.
inline TokenSequence adversarial_sequence(const SamplerConfig& cfg, int ell1,
                                          int ell2) {
  cfg.validate();
  if (cfg.N < cfg.N_trg + 2)
    throw std::invalid_argument(
        "adversarial_sequence: need at least two non-trigger tokens");
  if (ell1 < 1 || ell2 < 1 || ell1 + ell2 + 4 > cfg.L - 1)
    throw std::invalid_argument("adversarial_sequence: gaps out of range");
  TokenSequence seq;
  seq.ell1 = ell1;
  seq.ell2 = ell2;
  seq.trigger = 1;
  seq.output = cfg.N_trg + 2;
  const int T = seq.total_length();
  const int filler = cfg.N_trg + 1;
  seq.tokens.assign(static_cast<size_t>(T + 1), filler);
  seq.tokens[static_cast<size_t>(ell1)] = seq.trigger;
  seq.tokens[static_cast<size_t>(ell1 + 1)] = seq.output;
  seq.tokens[static_cast<size_t>(T - 1)] = seq.trigger;
  seq.tokens[static_cast<size_t>(T)] = seq.output;
  return seq;
}

// --- Dataset serialization: one self-describing JSON record per line. ---

inline nlohmann::json to_json(const TokenSequence& seq) {
  return nlohmann::json{{"tokens", seq.tokens},
                        {"ell1", seq.ell1},
                        {"ell2", seq.ell2},
                        {"trigger", seq.trigger},
                        {"output", seq.output}};
}

inline TokenSequence sequence_from_json(const nlohmann::json& j) {
  TokenSequence seq;
  seq.tokens = j.at("tokens").get<std::vector<int>>();
  seq.ell1 = j.at("ell1").get<int>();
  seq.ell2 = j.at("ell2").get<int>();
  seq.trigger = j.at("trigger").get<int>();
  seq.output = j.at("output").get<int>();
  return seq;
}

inline void write_dataset(const std::string& path,
                          const std::vector<TokenSequence>& dataset) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_dataset: cannot open " + path);
  for (const TokenSequence& seq : dataset) out << to_json(seq).dump() << "\n";
}

inline std::vector<TokenSequence> read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_dataset: cannot open " + path);
  std::vector<TokenSequence> dataset;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    dataset.push_back(sequence_from_json(nlohmann::json::parse(line)));
  }
  return dataset;
}

}  // namespace triggerlab
