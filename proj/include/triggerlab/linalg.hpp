#pragma once

// Shared dense linear-algebra aliases and small numeric helpers.
//
// Reference representation is dense row-major double precision. Hot paths may
// exploit the sparsity of one-hot embeddings, but any such path must agree
// with the dense semantics (tested to 1e-10 on logits, typically exact).

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace triggerlab {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

// Numerically stable softmax (max subtraction), mandatory everywhere because
// trained attention logits scale like eta_V * eta_KQ.
inline Vec softmax(const Vec& logits) {
  const double m = logits.maxCoeff();
  Vec e = (logits.array() - m).exp();
  return e / e.sum();
}

// log(sum(exp(logits))) with max subtraction.
inline double log_sum_exp(const Vec& logits) {
  const double m = logits.maxCoeff();
  return m + std::log((logits.array() - m).exp().sum());
}

// Argmax with smallest-index tie break (exact comparison, first strict win).
inline int argmax_first(const Vec& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

// FNV-1a 64-bit content hash, used for content-addressed output names and
// manifest hashes (stable across platforms, unlike std::hash).
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string fnv1a64_hex(const std::string& s) {
  static const char* digits = "0123456789abcdef";
  std::uint64_t h = fnv1a64(s);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

// Shortest round-trip decimal formatting for doubles (%.17g is exact for
// IEEE-754 binary64); used by every text serialization so that equal numbers
// always serialize to equal bytes.
inline std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace triggerlab
