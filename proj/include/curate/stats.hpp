#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "curate/common.hpp"

namespace curate::stats {

template <typename T>
double mean(std::span<const T> xs) {
  if (xs.empty()) throw ValidationError("mean of empty sequence");
  double sum = 0;
  for (const auto& x : xs) sum += static_cast<double>(x);
  return sum / static_cast<double>(xs.size());
}

/// Population (divide-by-n) standard deviation.
template <typename T>
double population_stddev(std::span<const T> xs) {
  const double mu = mean(xs);
  double ss = 0;
  for (const auto& x : xs) {
    const double d = static_cast<double>(x) - mu;
    ss += d * d;
  }
  return std::sqrt(ss / static_cast<double>(xs.size()));
}

/// Standard median; the mean of the two middle elements for even counts.
inline double median(std::vector<double> xs) {
  if (xs.empty()) throw ValidationError("median of empty sequence");
  const auto mid = xs.size() / 2;
  std::nth_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(mid), xs.end());
  const double upper = xs[mid];
  if (xs.size() % 2 == 1) return upper;
  const double lower = *std::max_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(mid));
  return (lower + upper) / 2.0;
}

/// Pearson product-moment correlation.
inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("pearson: length mismatch");
  if (x.size() < 2) throw ValidationError("pearson: need at least two points");
  const double mx = mean(x);
  const double my = mean(y);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) throw ValidationError("pearson: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace curate::stats
