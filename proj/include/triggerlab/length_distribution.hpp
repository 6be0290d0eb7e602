#pragma once

// Distribution over the half-gap length ell of a training sequence.
// A training sequence with gap ell has total context length T(ell) = 2*ell+3.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "triggerlab/rng.hpp"

namespace triggerlab {

inline int total_length_for(int ell) { return 2 * ell + 3; }

class LengthDistribution {
 public:
  // support: strictly increasing lengths >= 1; masses: same size, q >= 0,
  // sum within 1e-12 of 1. Zero masses are permitted (the optimal linear
  // profile pads its horizon with zeros); sampling never returns them.
  LengthDistribution(std::vector<int> support, std::vector<double> masses)
      : support_(std::move(support)), masses_(std::move(masses)) {
    if (support_.empty() || support_.size() != masses_.size())
      throw std::invalid_argument(
          "LengthDistribution: support and masses must be non-empty and equal "
          "in size");
    double sum = 0.0;
    for (size_t i = 0; i < support_.size(); ++i) {
      if (support_[i] < 1)
        throw std::invalid_argument(
            "LengthDistribution: every length must be >= 1");
      if (i > 0 && support_[i] <= support_[i - 1])
        throw std::invalid_argument(
            "LengthDistribution: support must be strictly increasing");
      if (!(masses_[i] >= 0.0))
        throw std::invalid_argument(
            "LengthDistribution: masses must be non-negative");
      sum += masses_[i];
    }
    if (std::abs(sum - 1.0) > 1e-12)
      throw std::invalid_argument(
          "LengthDistribution: masses must sum to 1 (got " +
          std::to_string(sum) + ")");
  }

  static LengthDistribution singleton(int ell) {
    return LengthDistribution({ell}, {1.0});
  }

  // Uniform over the inclusive window [ell_min, ell_max].
  static LengthDistribution uniform(int ell_min, int ell_max) {
    if (ell_min > ell_max)
      throw std::invalid_argument(
          "LengthDistribution::uniform: ell_min must be <= ell_max");
    std::vector<int> sup;
    std::vector<double> q;
    const double mass = 1.0 / static_cast<double>(ell_max - ell_min + 1);
    for (int l = ell_min; l <= ell_max; ++l) {
      sup.push_back(l);
      q.push_back(mass);
    }
    return LengthDistribution(std::move(sup), std::move(q));
  }

  const std::vector<int>& support() const { return support_; }
  const std::vector<double>& masses() const { return masses_; }

  double mass_at(int ell) const {
    for (size_t i = 0; i < support_.size(); ++i)
      if (support_[i] == ell) return masses_[i];
    return 0.0;
  }

  int min_ell() const { return support_.front(); }
  int max_ell() const { return support_.back(); }

  // Largest length carrying positive mass (equals max_ell unless the tail is
  // zero-padded).
  int max_positive_ell() const {
    for (size_t i = support_.size(); i-- > 0;)
      if (masses_[i] > 0.0) return support_[i];
    throw std::logic_error("LengthDistribution: no positive mass");
  }

  // CDF inversion on one uniform real draw.
  int sample(Rng& rng) const {
    const double u = rng.next_real01();
    double acc = 0.0;
    int last_positive = -1;
    for (size_t i = 0; i < support_.size(); ++i) {
      if (masses_[i] <= 0.0) continue;
      last_positive = support_[i];
      acc += masses_[i];
      if (u < acc) return support_[i];
    }
    return last_positive;  // guard against rounding at u ~ 1
  }

 private:
  std::vector<int> support_;
  std::vector<double> masses_;
};

}  // namespace triggerlab
