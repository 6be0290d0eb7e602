#pragma once

// Two-stage one-step gradient training.
//
// Stage 1: one gradient step on W_V from zero initialization. At zero
// parameters attention is uniform and the prediction is uniform, so the
// per-sample cross-entropy gradient is exactly (u - e_y) xbar^T with
// u = (1/N, ..., 1/N) and xbar the mean embedding column.
//
// Stage 2: one gradient step on W_KQ at W_KQ = 0 with W_V fixed at its
// stage-1 value. The per-sample gradient is exactly
//   (1/T) sum_t <p - e_y, W_V1 x_t> (x_t - xbar) x_T^T,
// where p = softmax(W_V1 xbar). Both stages use fresh sample streams that are
// disjoint by construction (distinct stream ids of the same root seed);
// a reuse flag lets stage 2 replay the stage-1 stream instead.
//
// Matrices are averaged sum-then-divide in a fixed sample order, so training
// is bitwise reproducible for a given (config, seed).

#include <cstdint>
#include <stdexcept>

#include "triggerlab/datagen.hpp"
#include "triggerlab/length_distribution.hpp"
#include "triggerlab/linalg.hpp"
#include "triggerlab/model.hpp"
#include "triggerlab/rng.hpp"

namespace triggerlab {

struct TrainConfig {
  double eta_v = 1000.0;
  double eta_kq = 10000.0;
  int m_v = 4096;    // stage-1 sample count
  int m_kq = 4096;   // stage-2 sample count
  std::uint64_t seed = 0;
  bool reuse_samples = false;  // stage 2 replays the stage-1 stream

  void validate() const {
    if (!(eta_v >= 0.0) || !(eta_kq >= 0.0))
      throw std::invalid_argument("TrainConfig: learning rates must be >= 0");
    if (m_v < 1 || m_kq < 1)
      throw std::invalid_argument("TrainConfig: sample counts must be >= 1");
  }
};

// Mean embedding column xbar = (1/T) sum_t x_t.
inline Vec mean_embedding(const Mat& X) {
  return X.rowwise().sum() / static_cast<double>(X.cols());
}

// Per-sample cross-entropy gradient in W_V at (W_KQ, W_V) = (0, 0).
inline Mat grad_wv_sample(const TokenSequence& seq, const SamplerConfig& cfg) {
  const Mat X = embed(seq, cfg);
  const Vec xbar = mean_embedding(X);
  const int target = seq.token_at(seq.total_length() + 1);
  Mat grad(cfg.N, cfg.L + 2 * cfg.N);
  const double uniform = 1.0 / static_cast<double>(cfg.N);
  for (int k = 1; k <= cfg.N; ++k) {
    const double coef = uniform - (k == target ? 1.0 : 0.0);
    grad.row(k - 1) = coef * xbar.transpose();
  }
  return grad;
}

// Per-sample cross-entropy gradient in W_KQ at W_KQ = 0 with W_V = W_V1.
inline Mat grad_wkq_sample(const TokenSequence& seq, const SamplerConfig& cfg,
                           const Mat& W_V1) {
  const int D = cfg.L + 2 * cfg.N;
  if (W_V1.rows() != cfg.N || W_V1.cols() != D)
    throw std::invalid_argument("grad_wkq_sample: W_V1 must be N x D");
  const Mat X = embed(seq, cfg);
  const int T = seq.total_length();
  const Vec xbar = mean_embedding(X);
  Vec wvec = softmax(W_V1 * xbar);
  wvec[seq.token_at(T + 1) - 1] -= 1.0;      // p - e_y
  const Vec v = W_V1.transpose() * wvec;     // c_t = <v, x_t>
  const Vec c = X.transpose() * v;
  const Vec lhs = X * c - c.sum() * xbar;    // sum_t c_t (x_t - xbar)
  return (lhs / static_cast<double>(T)) * X.col(T - 1).transpose();
}

// Algorithm: draw m_v samples for the W_V step, then m_kq fresh samples for
// the W_KQ step. Sample i of each stage is generated from its own derived
// seed, so datasets are reproducible per (seed, index) and order-independent.
inline ModelParams run_algorithm1(const SamplerConfig& cfg,
                                  const LengthDistribution& dist,
                                  const TrainConfig& train) {
  cfg.validate_with(dist);
  train.validate();
  ModelParams params = ModelParams::zeros(cfg);

  Mat grad_sum_v = Mat::Zero(cfg.N, params.D());
  for (int i = 0; i < train.m_v; ++i) {
    Rng rng(train.seed, Stream::train_wv, static_cast<std::uint64_t>(i));
    const int ell = sample_length(dist, rng);
    const TokenSequence seq = sample_train_sequence(cfg, ell, rng);
    grad_sum_v += grad_wv_sample(seq, cfg);
  }
  params.W_V = -(train.eta_v / static_cast<double>(train.m_v)) * grad_sum_v;

  const Stream stage2 =
      train.reuse_samples ? Stream::train_wv : Stream::train_wkq;
  Mat grad_sum_kq = Mat::Zero(params.D(), params.D());
  for (int i = 0; i < train.m_kq; ++i) {
    Rng rng(train.seed, stage2, static_cast<std::uint64_t>(i));
    const int ell = sample_length(dist, rng);
    const TokenSequence seq = sample_train_sequence(cfg, ell, rng);
    grad_sum_kq += grad_wkq_sample(seq, cfg, params.W_V);
  }
  params.W_KQ =
      -(train.eta_kq / static_cast<double>(train.m_kq)) * grad_sum_kq;
  return params;
}

}  // namespace triggerlab
