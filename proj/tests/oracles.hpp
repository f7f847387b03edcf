#pragma once

// Slow, independent reference implementations used by the tests and the
// acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <vector>

namespace oracle {

/// Exhaustive isotonic regression (non-increasing): every contiguous block
/// partition, block means, keep the feasible fit with the smallest error.
inline std::vector<double> isotonic(std::span<const double> y) {
  const std::size_t n = y.size();
  std::vector<double> best;
  double best_err = std::numeric_limits<double>::infinity();
  for (std::uint32_t cuts = 0; cuts < (1u << (n - 1)); ++cuts) {
    std::vector<double> fit(n);
    std::size_t begin = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool last = i + 1 == n || (cuts >> i & 1u);
      if (!last) continue;
      double mean = 0.0;
      for (std::size_t k = begin; k <= i; ++k) mean += y[k];
      mean /= static_cast<double>(i + 1 - begin);
      for (std::size_t k = begin; k <= i; ++k) fit[k] = mean;
      begin = i + 1;
    }
    bool ok = true;
    for (std::size_t i = 1; i < n; ++i) ok = ok && fit[i] <= fit[i - 1] + 1e-12;
    if (!ok) continue;
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) err += (fit[i] - y[i]) * (fit[i] - y[i]);
    if (err < best_err) {
      best_err = err;
      best = fit;
    }
  }
  return best;
}

/// x lies in the permutahedron of (1..n): descending prefix sums bounded by
/// those of (n, n-1, ...), equal in total.
inline bool in_permutahedron(std::vector<double> x, double tol) {
  const std::size_t n = x.size();
  std::sort(x.begin(), x.end(), std::greater<>());
  double px = 0.0, pw = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    px += x[k];
    pw += static_cast<double>(n - k);
    if (px > pw + tol) return false;
  }
  return std::abs(px - pw) <= tol;
}

/// Euclidean projection onto the permutahedron of (1..n) by enumerating every
/// face (ordered set partition), projecting onto its affine hull, and keeping
/// the closest feasible candidate.
inline std::vector<double> permutahedron_projection(std::span<const double> z) {
  const std::size_t n = z.size();
  const std::uint32_t full = (1u << n) - 1;
  std::vector<double> best, cand(n);
  double best_dist = std::numeric_limits<double>::infinity();
  std::function<void(std::uint32_t, std::size_t)> rec = [&](std::uint32_t used, std::size_t pos) {
    if (used == full) {
      if (!in_permutahedron(cand, 1e-9)) return;
      double d = 0.0;
      for (std::size_t i = 0; i < n; ++i) d += (cand[i] - z[i]) * (cand[i] - z[i]);
      if (d < best_dist) {
        best_dist = d;
        best = cand;
      }
      return;
    }
    const std::uint32_t rest = full & ~used;
    for (std::uint32_t block = rest; block; block = (block - 1) & rest) {
      const std::size_t size = static_cast<std::size_t>(__builtin_popcount(block));
      // Sorted positions pos..pos+size-1 carry values n-pos down to n-pos-size+1.
      double budget = 0.0, zsum = 0.0;
      for (std::size_t k = 0; k < size; ++k) budget += static_cast<double>(n - pos - k);
      for (std::size_t i = 0; i < n; ++i) {
        if (block >> i & 1u) zsum += z[i];
      }
      const double shift = (budget - zsum) / static_cast<double>(size);
      for (std::size_t i = 0; i < n; ++i) {
        if (block >> i & 1u) cand[i] = z[i] + shift;
      }
      rec(used | block, pos + size);
    }
  };
  rec(0, 0);
  return best;
}

/// Pairwise AUC with 0.5 credit per tied positive-negative pair.
inline double pairwise_auc(std::span<const double> s, std::span<const std::uint8_t> y) {
  double hits = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      pairs += 1.0;
      hits += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return hits / pairs;
}

/// Average ranks by counting: rank_i = #{j: x_j < x_i} + (#{j: x_j == x_i} + 1) / 2.
inline std::vector<double> count_ranks(std::span<const double> x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0.0, equal = 0.0;
    for (double v : x) {
      less += v < x[i];
      equal += v == x[i];
    }
    r[i] = less + (equal + 1.0) / 2.0;
  }
  return r;
}

inline double plain_pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = count_ranks(x), ry = count_ranks(y);
  return plain_pearson(rx, ry);
}

/// Central-difference gradient of f at x.
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(1, max_i |b_i|).
inline double rel_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, scale = 1.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return diff / scale;
}

}  // namespace oracle
