#pragma once

// Dual-path score ensemble network.
//
//   x      = [E^1[k_1]; ...; E^M[k_M]]                 (M x d, bucketed embeddings)
//   A_r    = softmax_rows(x Wq_r (x Wk_r)^T / sqrt(dk)),  x_r = A_r x Wv_r
//   A_p    = softmax(q_p (x_r Wk_p)^T / sqrt(dk)),        q_p = p Wq_p
//   s1     = w1 . (A_p x_r Wv_p) + b1
//   g      = sigmoid(flatten(x) Wg + bg)                   (one gate per objective)
//   s2     = w2 . (g (.) x) + b2,  s3 = w3 . input + b3,  s = s1 + s2 + s3
//
// Forward records everything the exact reverse pass needs in a ForwardTrace.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "harmonrank/matrix.hpp"
#include "harmonrank/numeric.hpp"

namespace harmonrank {

enum class LinearPathInput { raw_scores, embeddings };

/// Component switches. A disabled path still contributes its bias.
struct AblationSwitches {
  bool self_attention = true;   // off: x_r = x
  bool cross_attention = true;  // off: s1 = affine(concat(p, flatten(x_r)))
  bool personalized = true;     // off: query is a learned constant vector
  bool gate = true;             // off: g = 1
  bool linear_path = true;      // off: s3 = b3
  bool relation_aware_path = true;  // off: s1 = b1
  bool gated_path = true;           // off: s2 = b2

  friend bool operator==(const AblationSwitches&, const AblationSwitches&) = default;
};

struct PersonalizedFeature {
  std::string name;
  std::size_t cardinality = 0;

  friend bool operator==(const PersonalizedFeature&, const PersonalizedFeature&) = default;
};

struct ModelConfig {
  std::size_t num_objectives = 5;
  std::size_t buckets = 300;
  std::size_t embed_dim = 8;
  std::size_t key_dim = 8;
  std::size_t feature_dim = 4;
  std::vector<PersonalizedFeature> personalized_features;
  AblationSwitches ablation;
  LinearPathInput linear_path_input = LinearPathInput::raw_scores;
  /// Std-dev of the normal initialization of score and feature embeddings;
  /// unset means 1/sqrt(width), i.e. rows of roughly unit norm.
  std::optional<double> embedding_init_sd;

  /// Width of the rows of x_r.
  std::size_t token_dim() const { return ablation.self_attention ? key_dim : embed_dim; }
  std::size_t personal_dim() const { return feature_dim * personalized_features.size(); }
  std::size_t linear_input_dim() const {
    return linear_path_input == LinearPathInput::raw_scores ? num_objectives : num_objectives * embed_dim;
  }

  void validate() const {
    require(num_objectives >= 2, "model: need at least two objectives");
    require(buckets >= 2, "model: need at least two buckets");
    require(embed_dim >= 1 && key_dim >= 1 && feature_dim >= 1, "model: widths must be positive");
    require(!embedding_init_sd || (*embedding_init_sd >= 0.0 && std::isfinite(*embedding_init_sd)),
            "model: embedding_init_sd must be >= 0");
    for (const auto& f : personalized_features) {
      require(f.cardinality >= 1, "model: feature '" + f.name + "' has zero cardinality");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// All trainable tensors. The same type carries gradients.
struct ModelParams {
  std::vector<Matrix> embeddings;      // M x [B x d]
  Matrix wq_r, wk_r, wv_r;             // d x dk
  std::vector<Matrix> feature_tables;  // F x [cardinality x dp]
  Matrix wq_p;                         // (F dp) x dk
  Matrix query;                        // 1 x dk, used when personalized is off
  Matrix wk_p, wv_p;                   // token_dim x dk
  Matrix w1;                           // 1 x dk
  Matrix w1_concat;                    // 1 x (F dp + M token_dim)
  Matrix b1;                           // 1 x 1
  Matrix wg;                           // (M d) x M
  Matrix bg;                           // 1 x M
  Matrix w2;                           // 1 x (M d)
  Matrix b2;                           // 1 x 1
  Matrix w3;                           // 1 x linear_input_dim
  Matrix b3;                           // 1 x 1
  /// Bumped by every in-place update; traces remember the value they saw.
  std::uint64_t version = 0;

  static ModelParams zeros(const ModelConfig& c) {
    c.validate();
    const std::size_t m = c.num_objectives, d = c.embed_dim, k = c.key_dim, t = c.token_dim();
    const std::size_t pd = c.personal_dim();
    ModelParams p;
    for (std::size_t j = 0; j < m; ++j) p.embeddings.emplace_back(c.buckets, d);
    p.wq_r = Matrix(d, k);
    p.wk_r = Matrix(d, k);
    p.wv_r = Matrix(d, k);
    for (const auto& f : c.personalized_features) p.feature_tables.emplace_back(f.cardinality, c.feature_dim);
    p.wq_p = Matrix(pd, k);
    p.query = Matrix(1, k);
    p.wk_p = Matrix(t, k);
    p.wv_p = Matrix(t, k);
    p.w1 = Matrix(1, k);
    p.w1_concat = Matrix(1, pd + m * t);
    p.b1 = Matrix(1, 1);
    p.wg = Matrix(m * d, m);
    p.bg = Matrix(1, m);
    p.w2 = Matrix(1, m * d);
    p.b2 = Matrix(1, 1);
    p.w3 = Matrix(1, c.linear_input_dim());
    p.b3 = Matrix(1, 1);
    return p;
  }

  /// Visits every tensor with a stable name, in a fixed order.
  template <typename F>
  void for_each(F&& f) {
    for (std::size_t j = 0; j < embeddings.size(); ++j) f("embedding." + std::to_string(j), embeddings[j]);
    f("wq_r", wq_r);
    f("wk_r", wk_r);
    f("wv_r", wv_r);
    for (std::size_t j = 0; j < feature_tables.size(); ++j) f("feature." + std::to_string(j), feature_tables[j]);
    f("wq_p", wq_p);
    f("query", query);
    f("wk_p", wk_p);
    f("wv_p", wv_p);
    f("w1", w1);
    f("w1_concat", w1_concat);
    f("b1", b1);
    f("wg", wg);
    f("bg", bg);
    f("w2", w2);
    f("b2", b2);
    f("w3", w3);
    f("b3", b3);
  }

  template <typename F>
  void for_each(F&& f) const {
    const_cast<ModelParams*>(this)->for_each(
        [&](const std::string& name, Matrix& m) { f(name, static_cast<const Matrix&>(m)); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Matrix& m) { n += m.size(); });
    return n;
  }
};

inline std::size_t bucket_index(double score, std::size_t buckets) {
  const double clamped = std::clamp(score, 0.0, 1.0);
  const auto k = static_cast<std::size_t>(std::floor(clamped * static_cast<double>(buckets)));
  return std::min(k, buckets - 1);
}

struct Discretized {
  Matrix tokens;  // M x d
  std::vector<std::size_t> buckets;
  std::size_t clamped = 0;
};

/// Equal-width bucket lookup; scores outside [0, 1] are clamped and counted.
inline Discretized discretize(std::span<const double> scores, const ModelParams& params, const ModelConfig& config) {
  require(scores.size() == config.num_objectives, "discretize: score count mismatch");
  Discretized out;
  out.tokens = Matrix(config.num_objectives, config.embed_dim);
  for (std::size_t m = 0; m < scores.size(); ++m) {
    if (!std::isfinite(scores[m])) throw std::invalid_argument("discretize: non-finite score");
    if (scores[m] < 0.0 || scores[m] > 1.0) ++out.clamped;
    const std::size_t k = bucket_index(scores[m], config.buckets);
    out.buckets.push_back(k);
    std::copy_n(params.embeddings[m].row(k).begin(), config.embed_dim, out.tokens.row(m).begin());
  }
  return out;
}

namespace detail {

/// Offsets of one sample's activations inside a trace arena.
struct TraceLayout {
  std::size_t x, q, k, v, ar, xr, p, qp, kp, vp, ap, o, g, stride;

  explicit TraceLayout(const ModelConfig& c) {
    const std::size_t m = c.num_objectives, d = c.embed_dim, dk = c.key_dim, t = c.token_dim();
    std::size_t at = 0;
    auto take = [&](std::size_t n) {
      const std::size_t here = at;
      at += n;
      return here;
    };
    x = take(m * d);
    q = take(m * dk);
    k = take(m * dk);
    v = take(m * dk);
    ar = take(m * m);
    xr = take(m * t);
    p = take(c.personal_dim());
    qp = take(dk);
    kp = take(m * dk);
    vp = take(m * dk);
    ap = take(m);
    o = take(dk);
    g = take(m);
    stride = at;
  }
};

// out[r, :] = sum_i a[r, i] w[i, :]
inline void matmul(const double* a, std::size_t rows, const Matrix& w, double* out) {
  const std::size_t inner = w.rows(), cols = w.cols();
  std::fill_n(out, rows * cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double* o = out + r * cols;
    for (std::size_t i = 0; i < inner; ++i) {
      const double ai = a[r * inner + i];
      if (ai == 0.0) continue;
      const double* wi = w.row(i).data();
      for (std::size_t c = 0; c < cols; ++c) o[c] += ai * wi[c];
    }
  }
}

// grad_w += a^T da ; grad_a += da w^T
inline void matmul_backward(const double* a, std::size_t rows, const Matrix& w, const double* da, Matrix& grad_w,
                            double* grad_a) {
  const std::size_t inner = w.rows(), cols = w.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* dr = da + r * cols;
    for (std::size_t i = 0; i < inner; ++i) {
      const double ai = a[r * inner + i];
      const double* wi = w.row(i).data();
      double* gw = grad_w.row(i).data();
      double acc = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        gw[c] += ai * dr[c];
        acc += dr[c] * wi[c];
      }
      if (grad_a) grad_a[r * inner + i] += acc;
    }
  }
}

inline void softmax_inplace(double* z, std::size_t n) {
  double mx = z[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, z[i]);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = std::exp(z[i] - mx);
    total += z[i];
  }
  for (std::size_t i = 0; i < n; ++i) z[i] /= total;
}

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

struct PathScores {
  double s1, s2, s3;
};

// Everything downstream of the token matrix, for one sample.
inline PathScores forward_sample(const ModelConfig& c, const ModelParams& w, const TraceLayout& lay,
                                 std::span<const double> raw, double* buf) {
  const std::size_t m = c.num_objectives, d = c.embed_dim, dk = c.key_dim, t = c.token_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  const AblationSwitches& ab = c.ablation;
  const double* x = buf + lay.x;
  double* xr = buf + lay.xr;

  if (ab.self_attention) {
    double* q = buf + lay.q;
    double* k = buf + lay.k;
    double* v = buf + lay.v;
    double* ar = buf + lay.ar;
    matmul(x, m, w.wq_r, q);
    matmul(x, m, w.wk_r, k);
    matmul(x, m, w.wv_r, v);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) ar[i * m + j] = dot(q + i * dk, k + j * dk, dk) * inv_sqrt;
      softmax_inplace(ar + i * m, m);
    }
    std::fill_n(xr, m * t, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const double a = ar[i * m + j];
        for (std::size_t c2 = 0; c2 < dk; ++c2) xr[i * t + c2] += a * v[j * dk + c2];
      }
    }
  } else {
    std::copy_n(x, m * d, xr);
  }

  PathScores s{w.b1[0], w.b2[0], w.b3[0]};
  if (ab.relation_aware_path) {
    const double* p = buf + lay.p;
    const std::size_t pd = c.personal_dim();
    if (ab.cross_attention) {
      double* qp = buf + lay.qp;
      double* kp = buf + lay.kp;
      double* vp = buf + lay.vp;
      double* ap = buf + lay.ap;
      double* o = buf + lay.o;
      if (ab.personalized) {
        matmul(p, 1, w.wq_p, qp);
      } else {
        std::copy_n(w.query.data().data(), dk, qp);
      }
      matmul(xr, m, w.wk_p, kp);
      matmul(xr, m, w.wv_p, vp);
      for (std::size_t j = 0; j < m; ++j) ap[j] = dot(qp, kp + j * dk, dk) * inv_sqrt;
      softmax_inplace(ap, m);
      std::fill_n(o, dk, 0.0);
      for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t c2 = 0; c2 < dk; ++c2) o[c2] += ap[j] * vp[j * dk + c2];
      }
      s.s1 += dot(w.w1.data().data(), o, dk);
    } else {
      const double* wc = w.w1_concat.data().data();
      if (ab.personalized) s.s1 += dot(wc, p, pd);
      s.s1 += dot(wc + pd, xr, m * t);
    }
  }

  if (ab.gated_path) {
    double* g = buf + lay.g;
    if (ab.gate) {
      matmul(x, 1, w.wg, g);
      for (std::size_t j = 0; j < m; ++j) g[j] = sigmoid(g[j] + w.bg[j]);
    } else {
      std::fill_n(g, m, 1.0);
    }
    for (std::size_t j = 0; j < m; ++j) s.s2 += g[j] * dot(w.w2.data().data() + j * d, x + j * d, d);
  }

  if (ab.linear_path) {
    if (c.linear_path_input == LinearPathInput::raw_scores) {
      s.s3 += dot(w.w3.data().data(), raw.data(), m);
    } else {
      s.s3 += dot(w.w3.data().data(), x, m * d);
    }
  }
  return s;
}

inline void backward_sample(const ModelConfig& c, const ModelParams& w, const TraceLayout& lay,
                            std::span<const double> raw, const double* buf, double ds, ModelParams& grad,
                            std::span<double> dx, std::span<double> dxr, std::span<double> dp,
                            std::span<double> scratch) {
  const std::size_t m = c.num_objectives, d = c.embed_dim, dk = c.key_dim, t = c.token_dim();
  const std::size_t pd = c.personal_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  const AblationSwitches& ab = c.ablation;
  const double* x = buf + lay.x;
  const double* xr = buf + lay.xr;
  std::fill(dx.begin(), dx.end(), 0.0);
  std::fill(dxr.begin(), dxr.end(), 0.0);
  std::fill(dp.begin(), dp.end(), 0.0);

  grad.b1[0] += ds;
  grad.b2[0] += ds;
  grad.b3[0] += ds;

  if (ab.linear_path) {
    double* gw3 = grad.w3.data().data();
    const double* w3 = w.w3.data().data();
    if (c.linear_path_input == LinearPathInput::raw_scores) {
      for (std::size_t j = 0; j < m; ++j) gw3[j] += ds * raw[j];
    } else {
      for (std::size_t i = 0; i < m * d; ++i) {
        gw3[i] += ds * x[i];
        dx[i] += ds * w3[i];
      }
    }
  }

  if (ab.gated_path) {
    const double* g = buf + lay.g;
    const double* w2 = w.w2.data().data();
    double* gw2 = grad.w2.data().data();
    double* dz = scratch.data();  // m gate pre-activations
    for (std::size_t j = 0; j < m; ++j) {
      const double xw = dot(w2 + j * d, x + j * d, d);
      for (std::size_t i = 0; i < d; ++i) {
        gw2[j * d + i] += ds * g[j] * x[j * d + i];
        dx[j * d + i] += ds * g[j] * w2[j * d + i];
      }
      dz[j] = ab.gate ? ds * xw * g[j] * (1.0 - g[j]) : 0.0;
    }
    if (ab.gate) {
      for (std::size_t j = 0; j < m; ++j) grad.bg[j] += dz[j];
      matmul_backward(x, 1, w.wg, dz, grad.wg, dx.data());
    }
  }

  if (ab.relation_aware_path) {
    const double* p = buf + lay.p;
    if (ab.cross_attention) {
      const double* qp = buf + lay.qp;
      const double* kp = buf + lay.kp;
      const double* vp = buf + lay.vp;
      const double* ap = buf + lay.ap;
      const double* o = buf + lay.o;
      double* dkp = scratch.data();
      double* dvp = dkp + m * dk;
      double* dq = dvp + m * dk;
      double* da = dq + dk;
      const double* w1 = w.w1.data().data();
      double* gw1 = grad.w1.data().data();
      for (std::size_t c2 = 0; c2 < dk; ++c2) gw1[c2] += ds * o[c2];
      // do = ds w1
      double weighted = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        da[j] = 0.0;
        for (std::size_t c2 = 0; c2 < dk; ++c2) {
          dvp[j * dk + c2] = ap[j] * ds * w1[c2];
          da[j] += ds * w1[c2] * vp[j * dk + c2];
        }
        weighted += ap[j] * da[j];
      }
      std::fill_n(dq, dk, 0.0);
      for (std::size_t j = 0; j < m; ++j) {
        const double dlogit = ap[j] * (da[j] - weighted) * inv_sqrt;
        for (std::size_t c2 = 0; c2 < dk; ++c2) {
          dq[c2] += dlogit * kp[j * dk + c2];
          dkp[j * dk + c2] = dlogit * qp[c2];
        }
      }
      matmul_backward(xr, m, w.wk_p, dkp, grad.wk_p, dxr.data());
      matmul_backward(xr, m, w.wv_p, dvp, grad.wv_p, dxr.data());
      if (ab.personalized) {
        matmul_backward(p, 1, w.wq_p, dq, grad.wq_p, dp.data());
      } else {
        for (std::size_t c2 = 0; c2 < dk; ++c2) grad.query[c2] += dq[c2];
      }
    } else {
      const double* wc = w.w1_concat.data().data();
      double* gwc = grad.w1_concat.data().data();
      if (ab.personalized) {
        for (std::size_t i = 0; i < pd; ++i) {
          gwc[i] += ds * p[i];
          dp[i] += ds * wc[i];
        }
      }
      for (std::size_t i = 0; i < m * t; ++i) {
        gwc[pd + i] += ds * xr[i];
        dxr[i] += ds * wc[pd + i];
      }
    }
  }

  if (ab.self_attention) {
    const double* q = buf + lay.q;
    const double* k = buf + lay.k;
    const double* v = buf + lay.v;
    const double* ar = buf + lay.ar;
    double* dq = scratch.data();
    double* dk_ = dq + m * dk;
    double* dv = dk_ + m * dk;
    double* dar = dv + m * dk;
    std::fill_n(dq, 3 * m * dk, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      double weighted = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        dar[j] = dot(dxr.data() + i * t, v + j * dk, dk);
        weighted += ar[i * m + j] * dar[j];
        for (std::size_t c2 = 0; c2 < dk; ++c2) dv[j * dk + c2] += ar[i * m + j] * dxr[i * t + c2];
      }
      for (std::size_t j = 0; j < m; ++j) {
        const double dlogit = ar[i * m + j] * (dar[j] - weighted) * inv_sqrt;
        for (std::size_t c2 = 0; c2 < dk; ++c2) {
          dq[i * dk + c2] += dlogit * k[j * dk + c2];
          dk_[j * dk + c2] += dlogit * q[i * dk + c2];
        }
      }
    }
    matmul_backward(x, m, w.wq_r, dq, grad.wq_r, dx.data());
    matmul_backward(x, m, w.wk_r, dk_, grad.wk_r, dx.data());
    matmul_backward(x, m, w.wv_r, dv, grad.wv_r, dx.data());
  } else {
    for (std::size_t i = 0; i < m * d; ++i) dx[i] += dxr[i];
  }
}

}  // namespace detail

/// Cached activations of one batch forward pass.
class ForwardTrace {
 public:
  ForwardTrace() : layout_(ModelConfig{}) {}

  std::size_t size() const { return s_.size(); }
  std::uint64_t params_version() const { return version_; }
  const void* params_identity() const { return owner_; }

  std::span<const double> scores() const { return s_; }
  std::span<const double> s1() const { return s1_; }
  std::span<const double> s2() const { return s2_; }
  std::span<const double> s3() const { return s3_; }

  /// Token matrix x of sample i, M x d row-major.
  std::span<const double> tokens(std::size_t i) const { return slice(i, layout_.x, m_ * d_); }
  std::span<const double> x_r(std::size_t i) const { return slice(i, layout_.xr, m_ * t_); }
  /// Self-attention map (M x M); meaningful only with self_attention on.
  std::span<const double> self_attention(std::size_t i) const { return slice(i, layout_.ar, m_ * m_); }
  std::span<const double> queries(std::size_t i) const { return slice(i, layout_.q, m_ * dk_); }
  std::span<const double> keys(std::size_t i) const { return slice(i, layout_.k, m_ * dk_); }
  /// Cross-attention weights over objectives; meaningful only with cross_attention on.
  std::span<const double> cross_attention(std::size_t i) const { return slice(i, layout_.ap, m_); }
  std::span<const double> gate(std::size_t i) const { return slice(i, layout_.g, m_); }
  std::span<const double> personalized(std::size_t i) const { return slice(i, layout_.p, pd_); }

 private:
  friend class Model;

  std::span<const double> slice(std::size_t i, std::size_t off, std::size_t n) const {
    return {arena_.data() + i * layout_.stride + off, n};
  }

  detail::TraceLayout layout_;
  std::size_t m_ = 0, d_ = 0, dk_ = 0, t_ = 0, pd_ = 0;
  std::uint64_t version_ = 0;
  const void* owner_ = nullptr;
  std::vector<double> arena_;
  std::vector<double> raw_;
  std::vector<std::uint32_t> buckets_;
  std::vector<std::uint32_t> features_;
  std::vector<double> s_, s1_, s2_, s3_;
};

/// Rows of inputs for a batch: raw scores (n x M) and feature ids (n x F).
struct ModelInputs {
  std::span<const double> scores;
  std::span<const std::uint32_t> features;
  std::size_t rows = 0;
};

class Model {
 public:
  explicit Model(ModelConfig config) : config_(std::move(config)), layout_(config_) { config_.validate(); }

  const ModelConfig& config() const { return config_; }

  ForwardTrace forward(const ModelInputs& in, const ModelParams& params) const {
    const std::size_t m = config_.num_objectives, d = config_.embed_dim, f = config_.personalized_features.size();
    const std::size_t n = in.rows;
    require(in.scores.size() == n * m, "forward: score matrix shape mismatch");
    require(in.features.size() == n * f, "forward: feature matrix shape mismatch");
    check_params(params);

    ForwardTrace tr;
    tr.layout_ = layout_;
    tr.m_ = m;
    tr.d_ = d;
    tr.dk_ = config_.key_dim;
    tr.t_ = config_.token_dim();
    tr.pd_ = config_.personal_dim();
    tr.version_ = params.version;
    tr.owner_ = &params;
    tr.arena_.assign(n * layout_.stride, 0.0);
    tr.raw_.assign(in.scores.begin(), in.scores.end());
    tr.features_.assign(in.features.begin(), in.features.end());
    tr.buckets_.resize(n * m);
    tr.s_.resize(n);
    tr.s1_.resize(n);
    tr.s2_.resize(n);
    tr.s3_.resize(n);

    for (std::size_t i = 0; i < n; ++i) {
      double* buf = tr.arena_.data() + i * layout_.stride;
      for (std::size_t j = 0; j < m; ++j) {
        const double s = in.scores[i * m + j];
        if (!std::isfinite(s)) throw std::invalid_argument("forward: non-finite score");
        const std::size_t k = bucket_index(s, config_.buckets);
        tr.buckets_[i * m + j] = static_cast<std::uint32_t>(k);
        std::copy_n(params.embeddings[j].row(k).begin(), d, buf + layout_.x + j * d);
      }
      for (std::size_t h = 0; h < f; ++h) {
        const std::uint32_t id = in.features[i * f + h];
        require(id < config_.personalized_features[h].cardinality, "forward: feature id out of range");
        std::copy_n(params.feature_tables[h].row(id).begin(), config_.feature_dim,
                    buf + layout_.p + h * config_.feature_dim);
      }
      const auto ps = detail::forward_sample(config_, params, layout_, in.scores.subspan(i * m, m), buf);
      tr.s1_[i] = ps.s1;
      tr.s2_[i] = ps.s2;
      tr.s3_[i] = ps.s3;
      tr.s_[i] = ps.s1 + ps.s2 + ps.s3;
    }
    return tr;
  }

  /// Scores only, in bounded-memory chunks.
  std::vector<double> predict(const ModelInputs& in, const ModelParams& params, std::size_t chunk = 4096) const {
    const std::size_t m = config_.num_objectives, f = config_.personalized_features.size();
    std::vector<double> out;
    out.reserve(in.rows);
    for (std::size_t begin = 0; begin < in.rows; begin += chunk) {
      const std::size_t rows = std::min(chunk, in.rows - begin);
      ModelInputs part{in.scores.subspan(begin * m, rows * m), in.features.subspan(begin * f, rows * f), rows};
      const ForwardTrace tr = forward(part, params);
      out.insert(out.end(), tr.s_.begin(), tr.s_.end());
    }
    return out;
  }

  /// Exact reverse pass. Gradients are accumulated into a fresh record.
  ModelParams backward(const ForwardTrace& trace, std::span<const double> grad_scores,
                       const ModelParams& params) const {
    if (trace.owner_ != &params || trace.version_ != params.version) {
      throw std::logic_error("backward: stale trace (parameters changed since forward)");
    }
    require(grad_scores.size() == trace.size(), "backward: gradient length mismatch");
    const std::size_t m = config_.num_objectives, d = config_.embed_dim, dk = config_.key_dim;
    const std::size_t t = config_.token_dim(), pd = config_.personal_dim(), fd = config_.feature_dim;
    const std::size_t f = config_.personalized_features.size();
    ModelParams grad = ModelParams::zeros(config_);
    std::vector<double> dx(m * d), dxr(m * t), dp(pd), scratch(3 * m * dk + m + dk + m);
    for (std::size_t i = 0; i < trace.size(); ++i) {
      const double ds = grad_scores[i];
      if (ds == 0.0) continue;
      const double* buf = trace.arena_.data() + i * layout_.stride;
      detail::backward_sample(config_, params, layout_, std::span(trace.raw_).subspan(i * m, m), buf, ds, grad,
                              dx, dxr, dp, scratch);
      for (std::size_t j = 0; j < m; ++j) {
        auto row = grad.embeddings[j].row(trace.buckets_[i * m + j]);
        for (std::size_t c = 0; c < d; ++c) row[c] += dx[j * d + c];
      }
      if (config_.ablation.relation_aware_path && config_.ablation.personalized) {
        for (std::size_t h = 0; h < f; ++h) {
          auto row = grad.feature_tables[h].row(trace.features_[i * f + h]);
          for (std::size_t c = 0; c < fd; ++c) row[c] += dp[h * fd + c];
        }
      }
    }
    return grad;
  }

  void check_params(const ModelParams& params) const {
    const ModelParams shape = ModelParams::zeros(config_);
    std::vector<const Matrix*> expected;
    shape.for_each([&](const std::string&, const Matrix& mtx) { expected.push_back(&mtx); });
    std::size_t idx = 0;
    params.for_each([&](const std::string& name, const Matrix& mtx) {
      require(idx < expected.size() && mtx.same_shape(*expected[idx]), "params: shape mismatch at " + name);
      ++idx;
    });
    require(idx == expected.size(), "params: tensor count mismatch");
  }

 private:
  ModelConfig config_;
  detail::TraceLayout layout_;
};

/// Deterministic initialization: projections U(+-1/sqrt(fan_in)), embeddings N(0, sd^2) with
/// sd = embedding_init_sd or 1/sqrt(row width), biases 0.
inline ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = ModelParams::zeros(config);
  std::mt19937_64 rng(seed);
  auto uniform = [&](Matrix& mtx, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : mtx.data()) v = dist(rng);
  };
  auto fan_in = [](const Matrix& mtx) { return 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, mtx.rows()))); };
  auto row_vector = [](const Matrix& mtx) { return 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, mtx.cols()))); };
  auto normal = [&](Matrix& mtx) {
    const double sd = config.embedding_init_sd.value_or(1.0 / std::sqrt(static_cast<double>(mtx.cols())));
    std::normal_distribution<double> dist(0.0, sd);
    for (double& v : mtx.data()) v = dist(rng);
  };
  for (Matrix& e : p.embeddings) normal(e);
  uniform(p.wq_r, fan_in(p.wq_r));
  uniform(p.wk_r, fan_in(p.wk_r));
  uniform(p.wv_r, fan_in(p.wv_r));
  for (Matrix& t : p.feature_tables) normal(t);
  uniform(p.wq_p, fan_in(p.wq_p));
  uniform(p.query, row_vector(p.query));
  uniform(p.wk_p, fan_in(p.wk_p));
  uniform(p.wv_p, fan_in(p.wv_p));
  uniform(p.w1, row_vector(p.w1));
  uniform(p.w1_concat, row_vector(p.w1_concat));
  uniform(p.wg, fan_in(p.wg));
  uniform(p.w2, row_vector(p.w2));
  uniform(p.w3, row_vector(p.w3));
  return p;
}

// Per-sample convenience wrappers over the batched kernels.

struct RelationAwareOutput {
  double s1 = 0.0;
  Matrix self_attention;             // M x M
  std::vector<double> cross_attention;  // M
  Matrix x_r;                        // M x token_dim
};

inline RelationAwareOutput relation_aware_forward(const Matrix& x, std::span<const double> personalized_vector,
                                                  const ModelParams& params, const ModelConfig& config) {
  require(x.rows() == config.num_objectives && x.cols() == config.embed_dim, "relation_aware_forward: x shape");
  require(personalized_vector.size() == config.personal_dim(), "relation_aware_forward: personalized width");
  ModelConfig c = config;
  c.ablation.relation_aware_path = true;
  c.ablation.gated_path = false;
  c.ablation.linear_path = false;
  const detail::TraceLayout lay(c);
  std::vector<double> buf(lay.stride, 0.0);
  std::copy(x.data().begin(), x.data().end(), buf.begin() + static_cast<std::ptrdiff_t>(lay.x));
  std::copy(personalized_vector.begin(), personalized_vector.end(), buf.begin() + static_cast<std::ptrdiff_t>(lay.p));
  const std::vector<double> raw(c.num_objectives, 0.0);
  const auto ps = detail::forward_sample(c, params, lay, raw, buf.data());
  const std::size_t m = c.num_objectives, t = c.token_dim();
  RelationAwareOutput out;
  out.s1 = ps.s1;
  out.self_attention = Matrix(m, m);
  out.x_r = Matrix(m, t);
  std::copy_n(buf.begin() + static_cast<std::ptrdiff_t>(lay.ar), m * m, out.self_attention.data().begin());
  std::copy_n(buf.begin() + static_cast<std::ptrdiff_t>(lay.xr), m * t, out.x_r.data().begin());
  out.cross_attention.assign(buf.begin() + static_cast<std::ptrdiff_t>(lay.ap),
                             buf.begin() + static_cast<std::ptrdiff_t>(lay.ap + m));
  return out;
}

struct RelationAgnosticOutput {
  double s2 = 0.0;
  double s3 = 0.0;
  std::vector<double> gate;
};

inline RelationAgnosticOutput relation_agnostic_forward(const Matrix& x, std::span<const double> raw_scores,
                                                        const ModelParams& params, const ModelConfig& config) {
  require(x.rows() == config.num_objectives && x.cols() == config.embed_dim, "relation_agnostic_forward: x shape");
  require(raw_scores.size() == config.num_objectives, "relation_agnostic_forward: score count mismatch");
  ModelConfig c = config;
  c.ablation.relation_aware_path = false;
  c.ablation.self_attention = false;
  const detail::TraceLayout lay(c);
  std::vector<double> buf(lay.stride, 0.0);
  std::copy(x.data().begin(), x.data().end(), buf.begin() + static_cast<std::ptrdiff_t>(lay.x));
  const auto ps = detail::forward_sample(c, params, lay, raw_scores, buf.data());
  RelationAgnosticOutput out;
  out.s2 = ps.s2;
  out.s3 = ps.s3;
  out.gate.assign(buf.begin() + static_cast<std::ptrdiff_t>(lay.g),
                  buf.begin() + static_cast<std::ptrdiff_t>(lay.g + c.num_objectives));
  return out;
}

}  // namespace harmonrank
