#pragma once

// Single-layer attention model.
//
// Embedding of position t in a sequence z:
//   x_t = [ p_t ; e_{z_t} ; e_{z_{t-1}} ]  in R^D,  D = L + 2N,
// with one-hot blocks and e_{z_0} = 0, so column 1 carries two ones and every
// later column three. The model applies value weights to an attention average
// keyed on the final column:
//   f(X_{1:t}) = W_V * X_{1:t} * softmax(X_{1:t}^T * W_KQ * x_t).

#include <cmath>
#include <stdexcept>
#include <string>

#include "triggerlab/datagen.hpp"
#include "triggerlab/linalg.hpp"

namespace triggerlab {

struct ModelParams {
  int N = 0;
  int N_trg = 0;
  int L = 0;
  Mat W_KQ;  // D x D
  Mat W_V;   // N x D

  int D() const { return L + 2 * N; }

  static ModelParams zeros(const SamplerConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.N = cfg.N;
    p.N_trg = cfg.N_trg;
    p.L = cfg.L;
    p.W_KQ = Mat::Zero(p.D(), p.D());
    p.W_V = Mat::Zero(p.N, p.D());
    return p;
  }

  SamplerConfig sampler_config() const { return SamplerConfig{N, N_trg, L}; }

  void validate() const {
    if (N_trg < 1 || N_trg >= N || L < 7)
      throw std::invalid_argument("ModelParams: invalid (N, N_trg, L)");
    const int d = D();
    if (W_KQ.rows() != d || W_KQ.cols() != d)
      throw std::invalid_argument("ModelParams: W_KQ must be D x D");
    if (W_V.rows() != N || W_V.cols() != d)
      throw std::invalid_argument("ModelParams: W_V must be N x D");
    if (!W_KQ.allFinite() || !W_V.allFinite())
      throw std::invalid_argument("ModelParams: parameters must be finite");
  }
};

// One-hot row indices (0-based) of embedding column t (1-based position).
struct EmbeddingRows {
  int pos;    // t-1
  int token;  // L + z_t - 1
  int prev;   // L + N + z_{t-1} - 1, or -1 when t == 1
};

inline EmbeddingRows embedding_rows(const TokenSequence& seq, int t, int L,
                                    int N) {
  EmbeddingRows r;
  r.pos = t - 1;
  r.token = L + seq.token_at(t) - 1;
  r.prev = (t >= 2) ? L + N + seq.token_at(t - 1) - 1 : -1;
  return r;
}

// Dense embedding of z_{1:upto} as a D x upto matrix (reference path).
inline Mat embed(const TokenSequence& seq, const SamplerConfig& cfg, int upto) {
  cfg.validate();
  const int T = seq.total_length();
  if (upto < 1 || upto > T)
    throw std::invalid_argument("embed: upto must be in [1, T]");
  if (T > cfg.L - 1)
    throw std::invalid_argument("embed: sequence length T exceeds L-1");
  const int D = cfg.L + 2 * cfg.N;
  Mat X = Mat::Zero(D, upto);
  for (int t = 1; t <= upto; ++t) {
    const EmbeddingRows r = embedding_rows(seq, t, cfg.L, cfg.N);
    X(r.pos, t - 1) = 1.0;
    X(r.token, t - 1) = 1.0;
    if (r.prev >= 0) X(r.prev, t - 1) = 1.0;
  }
  return X;
}

inline Mat embed(const TokenSequence& seq, const SamplerConfig& cfg) {
  return embed(seq, cfg, seq.total_length());
}

// Attention weights over key positions 1..t for query column t (the last
// column of X). Stable softmax of s = X^T (W_KQ x_t).
inline Vec attention_weights(const Mat& X, const ModelParams& params) {
  if (X.rows() != params.D())
    throw std::invalid_argument("attention_weights: X has wrong row count");
  const Vec key = params.W_KQ * X.col(X.cols() - 1);
  const Vec logits = X.transpose() * key;
  return softmax(logits);
}

// Pre-softmax output logits f(X) = W_V X a.
inline Vec forward_logits(const Mat& X, const ModelParams& params) {
  const Vec a = attention_weights(X, params);
  const Vec attended = X * a;
  return params.W_V * attended;
}

// Next-token distribution softmax(f(X)); entries index tokens 1..N.
inline Vec predict_distribution(const Mat& X, const ModelParams& params) {
  return softmax(forward_logits(X, params));
}

// Greedy prediction with smallest-token-id tie break. Returns a 1-based id.
inline int predict_token(const Mat& X, const ModelParams& params) {
  return argmax_first(forward_logits(X, params)) + 1;
}

// Cross-entropy -log p(target) computed via log-sum-exp (never materializes
// the probability, so it is finite even for saturated logits).
inline double cross_entropy(const Mat& X, const ModelParams& params,
                            int target) {
  if (target < 1 || target > params.N)
    throw std::invalid_argument("cross_entropy: target out of range");
  const Vec logits = forward_logits(X, params);
  return log_sum_exp(logits) - logits[target - 1];
}

}  // namespace triggerlab
