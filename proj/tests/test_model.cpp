#include <gtest/gtest.h>

#include <random>

#include "harmonrank/model.hpp"
#include "oracles.hpp"

using namespace harmonrank;

namespace {

ModelConfig micro_config() {
  ModelConfig c;
  c.num_objectives = 3;
  c.buckets = 4;
  c.embed_dim = 2;
  c.key_dim = 2;
  c.feature_dim = 2;
  c.personalized_features = {{"age", 3}, {"region", 2}};
  return c;
}

struct Batch {
  std::vector<double> scores;
  std::vector<std::uint32_t> features;
  std::size_t rows;
  ModelInputs inputs() const { return {scores, features, rows}; }
};

Batch random_inputs(const ModelConfig& c, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Batch b{std::vector<double>(n * c.num_objectives), {}, n};
  for (double& s : b.scores) s = u(rng);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& f : c.personalized_features) b.features.push_back(static_cast<std::uint32_t>(rng() % f.cardinality));
  }
  return b;
}

// Straight-line reference: every intermediate as a plain nested vector.
using Mat = std::vector<std::vector<double>>;

Mat mul(const Mat& a, const Matrix& w) {
  Mat out(a.size(), std::vector<double>(w.cols(), 0.0));
  for (std::size_t r = 0; r < a.size(); ++r)
    for (std::size_t c = 0; c < w.cols(); ++c)
      for (std::size_t i = 0; i < w.rows(); ++i) out[r][c] += a[r][i] * w(i, c);
  return out;
}

std::vector<double> softmax(std::vector<double> z) {
  double mx = *std::max_element(z.begin(), z.end()), total = 0.0;
  for (double& v : z) total += (v = std::exp(v - mx));
  for (double& v : z) v /= total;
  return z;
}

double reference_score(const ModelConfig& c, const ModelParams& w, std::span<const double> raw,
                       std::span<const std::uint32_t> feats) {
  const std::size_t m = c.num_objectives, dk = c.key_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  Mat x(m);
  for (std::size_t j = 0; j < m; ++j) {
    std::size_t k = static_cast<std::size_t>(std::floor(std::clamp(raw[j], 0.0, 1.0) * c.buckets));
    if (k == c.buckets) k = c.buckets - 1;
    for (std::size_t e = 0; e < c.embed_dim; ++e) x[j].push_back(w.embeddings[j](k, e));
  }
  Mat xr = x;
  if (c.ablation.self_attention) {
    const Mat q = mul(x, w.wq_r), k = mul(x, w.wk_r), v = mul(x, w.wv_r);
    xr.assign(m, std::vector<double>(dk, 0.0));
    for (std::size_t i = 0; i < m; ++i) {
      std::vector<double> logits(m, 0.0);
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t h = 0; h < dk; ++h) logits[j] += q[i][h] * k[j][h] * scale;
      const auto a = softmax(logits);
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t h = 0; h < dk; ++h) xr[i][h] += a[j] * v[j][h];
    }
  }
  std::vector<double> p;
  for (std::size_t h = 0; h < feats.size(); ++h)
    for (std::size_t e = 0; e < c.feature_dim; ++e) p.push_back(w.feature_tables[h](feats[h], e));

  double s1 = w.b1[0];
  if (c.ablation.relation_aware_path) {
    if (c.ablation.cross_attention) {
      std::vector<double> qp = c.ablation.personalized ? mul(Mat{p}, w.wq_p)[0] : w.query.data();
      const Mat kp = mul(xr, w.wk_p), vp = mul(xr, w.wv_p);
      std::vector<double> logits(m, 0.0);
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t h = 0; h < dk; ++h) logits[j] += qp[h] * kp[j][h] * scale;
      const auto a = softmax(logits);
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t h = 0; h < dk; ++h) s1 += w.w1[h] * a[j] * vp[j][h];
    } else {
      std::vector<double> concat = c.ablation.personalized ? p : std::vector<double>(p.size(), 0.0);
      for (const auto& row : xr) concat.insert(concat.end(), row.begin(), row.end());
      for (std::size_t i = 0; i < concat.size(); ++i) s1 += w.w1_concat[i] * concat[i];
    }
  }
  double s2 = w.b2[0];
  if (c.ablation.gated_path) {
    std::vector<double> flat;
    for (const auto& row : x) flat.insert(flat.end(), row.begin(), row.end());
    const auto gl = mul(Mat{flat}, w.wg)[0];
    for (std::size_t j = 0; j < m; ++j) {
      const double g = c.ablation.gate ? 1.0 / (1.0 + std::exp(-(gl[j] + w.bg[j]))) : 1.0;
      double proj = 0.0;
      for (std::size_t e = 0; e < c.embed_dim; ++e) proj += w.w2[j * c.embed_dim + e] * x[j][e];
      s2 += g * proj;
    }
  }
  double s3 = w.b3[0];
  if (c.ablation.linear_path) {
    if (c.linear_path_input == LinearPathInput::raw_scores) {
      for (std::size_t j = 0; j < m; ++j) s3 += w.w3[j] * raw[j];
    } else {
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t e = 0; e < c.embed_dim; ++e) s3 += w.w3[j * c.embed_dim + e] * x[j][e];
    }
  }
  return s1 + s2 + s3;
}

std::vector<ModelConfig> ablation_variants() {
  std::vector<ModelConfig> out;
  for (int v = 0; v < 9; ++v) {
    ModelConfig c = micro_config();
    switch (v) {
      case 1: c.ablation.self_attention = false; break;
      case 2: c.ablation.cross_attention = false; break;
      case 3: c.ablation.personalized = false; break;
      case 4: c.ablation.gate = false; break;
      case 5: c.ablation.linear_path = false; break;
      case 6: c.linear_path_input = LinearPathInput::embeddings; break;
      case 7: c.ablation.cross_attention = false; c.ablation.personalized = false; break;
      case 8: c.key_dim = 3; c.ablation.self_attention = false; break;
      default: break;
    }
    out.push_back(c);
  }
  return out;
}

}  // namespace

TEST(Discretize, BucketIndex) {
  EXPECT_EQ(bucket_index(0.0, 300), 0u);
  EXPECT_EQ(bucket_index(1.0, 300), 299u);
  EXPECT_EQ(bucket_index(0.5, 300), 150u);
  EXPECT_EQ(bucket_index(-3.0, 300), 0u);
  EXPECT_EQ(bucket_index(7.0, 300), 299u);
  for (int i = 0; i <= 1000; ++i) {
    const double s = i / 1000.0;
    EXPECT_EQ(bucket_index(s, 300), std::min<std::size_t>(299, static_cast<std::size_t>(s * 300.0)));
  }
}

TEST(Discretize, LooksUpRowsAndCountsClamps) {
  const ModelConfig c = micro_config();
  const ModelParams p = init_params(c, 3);
  const Discretized d = discretize(std::vector<double>{0.1, 1.5, -0.2}, p, c);
  EXPECT_EQ(d.buckets, (std::vector<std::size_t>{0, 3, 0}));
  EXPECT_EQ(d.clamped, 2u);
  EXPECT_EQ(d.tokens(1, 1), p.embeddings[1](3, 1));
  EXPECT_THROW(discretize(std::vector<double>{0.1, NAN, 0.2}, p, c), std::invalid_argument);
  EXPECT_THROW(discretize(std::vector<double>{0.1}, p, c), std::invalid_argument);
}

TEST(Model, MatchesStraightLineReference) {
  for (const ModelConfig& c : ablation_variants()) {
    const Model model(c);
    ModelParams p = init_params(c, 17);
    // Non-zero biases so their wiring is exercised too.
    p.b1[0] = 0.1;
    p.b2[0] = -0.2;
    p.b3[0] = 0.3;
    p.bg[1] = 0.4;
    const Batch b = random_inputs(c, 6, 5);
    const ForwardTrace tr = model.forward(b.inputs(), p);
    const std::size_t f = c.personalized_features.size();
    for (std::size_t i = 0; i < b.rows; ++i) {
      const double ref = reference_score(c, p, std::span(b.scores).subspan(i * 3, 3),
                                         std::span(b.features).subspan(i * f, f));
      EXPECT_NEAR(tr.scores()[i], ref, 1e-12);
      EXPECT_NEAR(tr.scores()[i], tr.s1()[i] + tr.s2()[i] + tr.s3()[i], 1e-15);
    }
  }
}

TEST(Model, ZeroQueryProjectionGivesUniformAttention) {
  const ModelConfig c = micro_config();
  ModelParams p = init_params(c, 1);
  p.wq_r.fill(0.0);
  const Batch b = random_inputs(c, 3, 2);
  const ForwardTrace tr = Model(c).forward(b.inputs(), p);
  for (std::size_t i = 0; i < 3; ++i) {
    for (double a : tr.self_attention(i)) EXPECT_NEAR(a, 1.0 / 3.0, 1e-15);
  }
}

TEST(Model, SelfAttentionOffPassesTokensThrough) {
  ModelConfig c = micro_config();
  c.ablation.self_attention = false;
  const ModelParams p = init_params(c, 1);
  const Batch b = random_inputs(c, 3, 2);
  const ForwardTrace tr = Model(c).forward(b.inputs(), p);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto x = tr.tokens(i), xr = tr.x_r(i);
    EXPECT_TRUE(std::equal(x.begin(), x.end(), xr.begin(), xr.end()));
  }
}

TEST(Model, GateDefaults) {
  ModelConfig c = micro_config();
  ModelParams p = init_params(c, 1);
  p.wg.fill(0.0);
  const Batch b = random_inputs(c, 3, 2);
  const ForwardTrace half = Model(c).forward(b.inputs(), p);
  for (double g : half.gate(1)) EXPECT_DOUBLE_EQ(g, 0.5);
  c.ablation.gate = false;
  const ModelParams q = init_params(c, 1);
  const ForwardTrace open = Model(c).forward(b.inputs(), q);
  for (double g : open.gate(1)) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Model, ZeroParamsGiveBiasSum) {
  const ModelConfig c = micro_config();
  ModelParams p = ModelParams::zeros(c);
  p.b1[0] = 0.25;
  p.b2[0] = -1.0;
  p.b3[0] = 2.0;
  const Batch b = random_inputs(c, 5, 3);
  const ForwardTrace tr = Model(c).forward(b.inputs(), p);
  for (double s : tr.scores()) EXPECT_DOUBLE_EQ(s, 1.25);
}

TEST(Model, RelationAwareAndGatedOffIsAffineInRawScores) {
  ModelConfig c = micro_config();
  c.ablation.relation_aware_path = false;
  c.ablation.gated_path = false;
  const ModelParams p = init_params(c, 8);
  const Batch b = random_inputs(c, 40, 9);
  const auto s = Model(c).predict(b.inputs(), p);
  for (std::size_t i = 0; i < b.rows; ++i) {
    double expected = p.b1[0] + p.b2[0] + p.b3[0];
    for (std::size_t j = 0; j < 3; ++j) expected += p.w3[j] * b.scores[i * 3 + j];
    EXPECT_NEAR(s[i], expected, 1e-14);
  }
}

TEST(Model, BatchEqualsPerSample) {
  const ModelConfig c = micro_config();
  const Model model(c);
  const ModelParams p = init_params(c, 4);
  const Batch b = random_inputs(c, 4, 6);
  const auto batched = model.predict(b.inputs(), p, 3);
  const std::size_t f = c.personalized_features.size();
  for (std::size_t i = 0; i < 4; ++i) {
    const ModelInputs one{std::span(b.scores).subspan(i * 3, 3), std::span(b.features).subspan(i * f, f), 1};
    EXPECT_EQ(model.forward(one, p).scores()[0], batched[i]);
  }
}

TEST(Model, PerSampleWrappersAgreeWithForward) {
  const ModelConfig c = micro_config();
  const ModelParams p = init_params(c, 4);
  const Batch b = random_inputs(c, 1, 6);
  const ForwardTrace tr = Model(c).forward(b.inputs(), p);
  Matrix x(3, 2);
  std::copy(tr.tokens(0).begin(), tr.tokens(0).end(), x.data().begin());
  const auto ra = relation_aware_forward(x, tr.personalized(0), p, c);
  const auto rg = relation_agnostic_forward(x, b.scores, p, c);
  EXPECT_DOUBLE_EQ(ra.s1, tr.s1()[0]);
  EXPECT_DOUBLE_EQ(rg.s2, tr.s2()[0]);
  EXPECT_DOUBLE_EQ(rg.s3, tr.s3()[0]);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(ra.cross_attention[i], tr.cross_attention(0)[i]);
}

TEST(Model, InputValidation) {
  const ModelConfig c = micro_config();
  const Model model(c);
  const ModelParams p = init_params(c, 4);
  Batch b = random_inputs(c, 2, 6);
  b.features[0] = 7;
  EXPECT_THROW(model.forward(b.inputs(), p), std::invalid_argument);
  b = random_inputs(c, 2, 6);
  b.scores[1] = INFINITY;
  EXPECT_THROW(model.forward(b.inputs(), p), std::invalid_argument);
  ModelConfig other = c;
  other.embed_dim = 3;
  EXPECT_THROW(model.forward(random_inputs(c, 2, 6).inputs(), init_params(other, 1)), std::invalid_argument);
}

TEST(Backward, MatchesFiniteDifferencesForEveryParameter) {
  for (const ModelConfig& c : ablation_variants()) {
    const Model model(c);
    ModelParams p = init_params(c, 21);
    p.b1[0] = 0.1;
    p.bg[0] = -0.3;
    const Batch b = random_inputs(c, 4, 22);
    std::mt19937_64 rng(23);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> upstream(b.rows);
    for (double& u : upstream) u = normal(rng);
    auto loss = [&](const ModelParams& q) {
      const auto s = model.predict(b.inputs(), q);
      return std::inner_product(s.begin(), s.end(), upstream.begin(), 0.0);
    };
    const ForwardTrace tr = model.forward(b.inputs(), p);
    const ModelParams grad = model.backward(tr, upstream, p);

    std::vector<Matrix*> params_list;
    std::vector<const Matrix*> grads;
    p.for_each([&](const std::string&, Matrix& m) { params_list.push_back(&m); });
    grad.for_each([&](const std::string&, const Matrix& m) { grads.push_back(&m); });
    std::vector<std::string> names;
    p.for_each([&](const std::string& n, Matrix&) { names.push_back(n); });
    for (std::size_t t = 0; t < params_list.size(); ++t) {
      Matrix& w = *params_list[t];
      std::vector<double> fd(w.size());
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double keep = w[i];
        w[i] = keep + 1e-4;
        const double up = loss(p);
        w[i] = keep - 1e-4;
        const double down = loss(p);
        w[i] = keep;
        fd[i] = (up - down) / 2e-4;
      }
      EXPECT_LT(oracle::rel_error(grads[t]->data(), fd), 1e-3) << names[t];
    }
  }
}

TEST(Backward, BiasGradientsAndZeroUpstream) {
  const ModelConfig c = micro_config();
  const Model model(c);
  const ModelParams p = init_params(c, 2);
  const Batch b = random_inputs(c, 5, 3);
  const ForwardTrace tr = model.forward(b.inputs(), p);
  const std::vector<double> up = {0.5, -1.0, 2.0, 0.25, 0.0};
  const ModelParams g = model.backward(tr, up, p);
  EXPECT_DOUBLE_EQ(g.b1[0], 1.75);
  EXPECT_DOUBLE_EQ(g.b2[0], 1.75);
  EXPECT_DOUBLE_EQ(g.b3[0], 1.75);
  const ModelParams z = model.backward(tr, std::vector<double>(5, 0.0), p);
  z.for_each([](const std::string& name, const Matrix& m) {
    for (double v : m.data()) EXPECT_EQ(v, 0.0) << name;
  });
}

TEST(Backward, RejectsStaleTrace) {
  const ModelConfig c = micro_config();
  const Model model(c);
  ModelParams p = init_params(c, 2);
  const Batch b = random_inputs(c, 2, 3);
  const ForwardTrace tr = model.forward(b.inputs(), p);
  ++p.version;
  EXPECT_THROW(model.backward(tr, std::vector<double>{1, 1}, p), std::logic_error);
  const ModelParams copy = init_params(c, 2);
  EXPECT_THROW(model.backward(model.forward(b.inputs(), p), std::vector<double>{1, 1}, copy), std::logic_error);
}

TEST(Init, DeterministicAndBounded) {
  ModelConfig c;
  c.personalized_features = {{"age", 8}, {"gender", 2}};
  const ModelParams a = init_params(c, 5), b = init_params(c, 5), d = init_params(c, 6);
  bool same = true, differ = false;
  std::vector<const Matrix*> bs, ds;
  b.for_each([&](const std::string&, const Matrix& m) { bs.push_back(&m); });
  d.for_each([&](const std::string&, const Matrix& m) { ds.push_back(&m); });
  std::size_t idx = 0;
  a.for_each([&](const std::string&, const Matrix& m) {
    same = same && m == *bs[idx];
    differ = differ || !(m == *ds[idx]);
    ++idx;
  });
  EXPECT_TRUE(same);
  EXPECT_TRUE(differ);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> scores(2000 * 5);
  std::vector<std::uint32_t> feats;
  for (double& s : scores) s = u(rng);
  for (int i = 0; i < 2000; ++i) {
    feats.push_back(static_cast<std::uint32_t>(rng() % 8));
    feats.push_back(static_cast<std::uint32_t>(rng() % 2));
  }
  for (double s : Model(c).predict({scores, feats, 2000}, a)) EXPECT_LT(std::abs(s), 10.0);
}
