#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace harmonrank {

/// Ascending ranks starting at 1; tied values share the mean of their rank range.
template <typename T>
std::vector<double> mid_ranks(std::span<const T> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    // positions i..j-1 hold ranks i+1..j
    const double r = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

/// Pearson correlation; empty when either input has zero variance.
inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) return std::nullopt;
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

template <typename T>
std::optional<double> spearman(std::span<const T> x, std::span<const T> y) {
  const std::vector<double> rx = mid_ranks(x);
  const std::vector<double> ry = mid_ranks(y);
  return pearson(rx, ry);
}

/// Two-sided permutation p-value for Pearson r: (1 + #{|r_perm| >= |r_obs|}) / (1 + shuffles).
inline double pearson_permutation_p(std::span<const double> x, std::span<const double> y,
                                    std::size_t shuffles, std::uint64_t seed) {
  const auto observed = pearson(x, y);
  if (!observed) return 1.0;
  const double threshold = std::abs(*observed) - 1e-12;
  std::vector<double> shuffled(y.begin(), y.end());
  std::mt19937_64 rng(seed);
  std::size_t hits = 0;
  for (std::size_t s = 0; s < shuffles; ++s) {
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto r = pearson(x, shuffled);
    if (r && std::abs(*r) >= threshold) ++hits;
  }
  return static_cast<double>(hits + 1) / static_cast<double>(shuffles + 1);
}

}  // namespace harmonrank
