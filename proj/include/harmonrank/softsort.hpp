#pragma once

// Differentiable ranking by Euclidean projection onto the permutahedron.
//
// For z = scores / eps and w = (n, n-1, ..., 1), the projection is
//   P(z) = z - v(z_sorted - w)  mapped back through the sort permutation,
// where v(.) is the non-increasing isotonic regression of its argument.
// Forward cost is one O(n log n) sort plus an O(n) PAV pass; the Jacobian is
// (1/eps) (I - B) in sorted order, B averaging inside each PAV block, so the
// vector-Jacobian product is O(n).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace harmonrank {

struct SoftRankConfig {
  double regularization_strength = 1.0;
};

/// Half-open range [begin, end) of sorted positions that PAV pooled together.
struct Block {
  std::size_t begin;
  std::size_t end;
};

struct SoftRankResult {
  std::vector<double> soft_ranks;
  /// perm[k] is the input index at descending-sorted position k.
  std::vector<std::size_t> perm;
  std::vector<Block> blocks;
};

namespace detail {

struct IsotonicFit {
  std::vector<double> values;
  std::vector<Block> blocks;
};

// Pool-adjacent-violators for min 1/2 ||v - y||^2 s.t. v non-increasing.
inline IsotonicFit isotonic_fit(std::span<const double> y) {
  struct Run {
    double sum;
    std::size_t begin;
    std::size_t count;
    double mean() const { return sum / static_cast<double>(count); }
  };
  std::vector<Run> stack;
  stack.reserve(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    stack.push_back({y[i], i, 1});
    // A later run may not exceed the one before it.
    while (stack.size() > 1 && stack[stack.size() - 2].mean() <= stack.back().mean()) {
      Run top = stack.back();
      stack.pop_back();
      stack.back().sum += top.sum;
      stack.back().count += top.count;
    }
  }
  IsotonicFit fit;
  fit.values.resize(y.size());
  fit.blocks.reserve(stack.size());
  for (const Run& r : stack) {
    if (r.count == 1) {
      fit.values[r.begin] = y[r.begin];
    } else {
      std::fill_n(fit.values.begin() + static_cast<std::ptrdiff_t>(r.begin), r.count, r.mean());
    }
    fit.blocks.push_back({r.begin, r.begin + r.count});
  }
  return fit;
}

}  // namespace detail

/// Least-squares projection of w onto non-increasing sequences, O(n).
inline std::vector<double> isotonic_regression(std::span<const double> w) {
  if (w.empty()) throw std::invalid_argument("empty input");
  return detail::isotonic_fit(w).values;
}

inline void validate(const SoftRankConfig& config) {
  if (!(config.regularization_strength > 0.0) || !std::isfinite(config.regularization_strength)) {
    throw std::invalid_argument("invalid regularization");
  }
}

/// Ascending soft ranks: rank 1 goes to the smallest score.
inline SoftRankResult soft_rank(std::span<const double> scores, const SoftRankConfig& config = {}) {
  validate(config);
  const std::size_t n = scores.size();
  if (n == 0) throw std::invalid_argument("empty input");
  for (double s : scores) {
    if (!std::isfinite(s)) throw std::invalid_argument("non-finite input");
  }
  const double inv_eps = 1.0 / config.regularization_strength;

  SoftRankResult result;
  result.perm.resize(n);
  std::iota(result.perm.begin(), result.perm.end(), std::size_t{0});
  std::stable_sort(result.perm.begin(), result.perm.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  // u_k = z_sorted[k] - w[k] with w[k] = n - k.
  std::vector<double> u(n);
  for (std::size_t k = 0; k < n; ++k) {
    u[k] = scores[result.perm[k]] * inv_eps - static_cast<double>(n - k);
  }
  detail::IsotonicFit fit = detail::isotonic_fit(u);

  // Written as w + (u - v) so singleton blocks land exactly on the vertex.
  result.soft_ranks.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    result.soft_ranks[result.perm[k]] = static_cast<double>(n - k) + (u[k] - fit.values[k]);
  }
  result.blocks = std::move(fit.blocks);
  return result;
}

/// Vector-Jacobian product of soft_rank, O(n).
inline std::vector<double> soft_rank_backward(const SoftRankResult& result,
                                              std::span<const double> upstream,
                                              const SoftRankConfig& config = {}) {
  validate(config);
  const std::size_t n = result.perm.size();
  if (upstream.size() != n) throw std::invalid_argument("length mismatch");
  const double inv_eps = 1.0 / config.regularization_strength;
  std::vector<double> grad(n, 0.0);
  for (const Block& b : result.blocks) {
    if (b.end - b.begin == 1) continue;  // singleton: I - B vanishes
    double mean = 0.0;
    for (std::size_t k = b.begin; k < b.end; ++k) mean += upstream[result.perm[k]];
    mean /= static_cast<double>(b.end - b.begin);
    for (std::size_t k = b.begin; k < b.end; ++k) {
      const std::size_t i = result.perm[k];
      grad[i] = (upstream[i] - mean) * inv_eps;
    }
  }
  return grad;
}

}  // namespace harmonrank
