#include <gtest/gtest.h>

#include <cmath>

#include "sdtt/model.hpp"
#include "sdtt/train.hpp"

using namespace sdtt;

namespace {

ModelConfig small_config(bool causal, int K = 7, int L = 6) {
  ModelConfig c;
  c.n_layers = 2;
  c.embed_dim = 16;
  c.n_heads = 2;
  c.context = L;
  c.vocab = K;
  c.causal = causal;
  return c;
}

Tokens random_tokens(int B, int L, int K, std::uint64_t seed) {
  Rng rng(seed);
  Tokens t(B, L);
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < L; ++i) t(b, i) = static_cast<std::int32_t>(rng() % K);
  }
  return t;
}

}  // namespace

TEST(Model, ParameterCountMatchesClosedForm) {
  for (const auto& [layers, D, K] : {std::tuple{1, 8, 5}, {2, 16, 7}, {4, 128, 30}}) {
    ModelConfig c = small_config(false, K);
    c.n_layers = layers;
    c.embed_dim = D;
    c.n_heads = 2;
    const std::int64_t per_layer = 12LL * D * D + 9LL * D;
    const std::int64_t expect = 2LL * K * D + layers * per_layer + 2LL * D + K;
    EXPECT_EQ(parameter_count(c), expect);
    EXPECT_EQ(init_parameters(c, 1).size(), expect);
  }
}

TEST(Model, PresetsAndValidation) {
  const auto tiny = model_preset("tiny", 30, false);
  EXPECT_EQ(tiny.n_layers, 4);
  EXPECT_EQ(tiny.embed_dim, 128);
  EXPECT_EQ(tiny.context, 64);
  EXPECT_EQ(model_preset("small", 50258, true).embed_dim, 768);
  EXPECT_THROW(model_preset("huge", 30, false), InputError);
  ModelConfig bad = small_config(false);
  bad.n_heads = 3;
  EXPECT_THROW(bad.validate(), InputError);
}

TEST(Model, InitIsDeterministic) {
  const auto c = small_config(false);
  EXPECT_EQ(init_parameters(c, 3), init_parameters(c, 3));
  EXPECT_NE(init_parameters(c, 3), init_parameters(c, 4));
}

TEST(Model, CausalOutputIgnoresLaterTokens) {
  const auto c = small_config(true);
  const VectorX<double> p = init_parameters(c, 2).cast<double>();
  Tokens a = random_tokens(1, 6, 7, 1);
  Tokens b = a;
  b(0, 5) = (a(0, 5) + 1) % 7;
  b(0, 4) = (a(0, 4) + 2) % 7;
  const auto sa = transformer_forward(c, p, a);
  const auto sb = transformer_forward(c, p, b);
  EXPECT_LT((sa.topRows(4) - sb.topRows(4)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GT((sa.bottomRows(2) - sb.bottomRows(2)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Model, BidirectionalOutputSeesWholeRow) {
  const auto c = small_config(false);
  const VectorX<double> p = init_parameters(c, 2).cast<double>();
  Tokens a = random_tokens(1, 6, 7, 1);
  Tokens b = a;
  b(0, 5) = (a(0, 5) + 1) % 7;
  const auto sa = transformer_forward(c, p, a);
  const auto sb = transformer_forward(c, p, b);
  EXPECT_GT((sa.row(0) - sb.row(0)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Model, RowsAreIndependentWithinBatch) {
  const auto c = small_config(false);
  const VectorX<float> p = init_parameters(c, 5);
  const Tokens batch = random_tokens(3, 6, 7, 9);
  const auto full = transformer_forward(c, p, batch);
  const auto one = transformer_forward<float>(c, p, batch.row(1));
  EXPECT_LT((full.middleRows(6, 6) - one).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Model, CachedStepMatchesFullCausalForward) {
  const auto c = small_config(true, 9, 8);
  const VectorX<double> p = init_parameters(c, 6).cast<double>();
  const Tokens seq = random_tokens(3, 8, 9, 4);
  AutoregressiveCache<double> cache(c, 3);
  for (int pos = 0; pos < 8; ++pos) {
    std::vector<std::int32_t> col(3);
    for (int b = 0; b < 3; ++b) col[b] = seq(b, pos);
    const auto step = ar_forward_step(c, p, col, cache);
    const auto full = real_token_log_softmax(transformer_forward<double>(c, p, seq.leftCols(pos + 1)),
                                             c.mask_index());
    for (int b = 0; b < 3; ++b) {
      const auto last = full.row(b * (pos + 1) + pos);
      for (int v = 0; v + 1 < 9; ++v) EXPECT_NEAR(step(b, v), last(v), 1e-10);
      EXPECT_TRUE(is_log_zero(step(b, 8)));
    }
  }
  EXPECT_EQ(cache.steps, 8);
  EXPECT_EQ(cache.prefix_len, 8);
}

TEST(Model, CachedStepInFloatAgreesClosely) {
  const auto c = small_config(true, 9, 8);
  const VectorX<float> p = init_parameters(c, 6);
  const Tokens seq = random_tokens(2, 8, 9, 4);
  AutoregressiveCache<float> cache(c, 2);
  RowMatrix<float> step;
  for (int pos = 0; pos < 8; ++pos) {
    const std::vector<std::int32_t> col{seq(0, pos), seq(1, pos)};
    step = ar_forward_step(c, p, col, cache);
  }
  const auto full = real_token_log_softmax(transformer_forward(c, p, seq), c.mask_index());
  for (int v = 0; v < 8; ++v) EXPECT_NEAR(step(1, v), full(15, v), 1e-4);
}

TEST(Model, DenoiserCountsForwardCalls) {
  const auto c = small_config(false);
  TransformerDenoiser<float> d(c, init_parameters(c, 1));
  const Tokens z = random_tokens(2, 6, 7, 1);
  EXPECT_EQ(d.forward_calls(), 0);
  d.forward(z);
  d.forward(z);
  EXPECT_EQ(d.forward_calls(), 2);
  d.reset_forward_calls();
  EXPECT_EQ(d.forward_calls(), 0);
  EXPECT_EQ(d.mask_index(), 6);
}

TEST(Model, RealTokenLogSoftmaxNormalises) {
  RowMatrix<double> s(2, 4);
  s << 1, 2, 3, 100, -1, 0, 1, -100;
  const auto lp = real_token_log_softmax(s, 3);
  for (int r = 0; r < 2; ++r) {
    EXPECT_NEAR(lp.row(r).head(3).array().exp().sum(), 1.0, 1e-12);
    EXPECT_TRUE(is_log_zero(lp(r, 3)));
  }
}

namespace {

template <typename LossFn>
void check_gradient(const VectorX<double>& params, const VectorX<double>& grad, LossFn&& loss,
                    int n_coords, std::uint64_t seed) {
  Rng rng(seed);
  const double h = 1e-5;
  int failures = 0;
  for (int k = 0; k < n_coords; ++k) {
    const auto j = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(params.size()));
    VectorX<double> p = params;
    p(j) += h;
    const double up = loss(p);
    p(j) -= 2 * h;
    const double down = loss(p);
    const double fd = (up - down) / (2 * h);
    const double denom = std::max({std::abs(fd), std::abs(grad(j)), 1e-7});
    if (std::abs(fd - grad(j)) / denom > 1e-3) {
      ++failures;
      ADD_FAILURE() << "coordinate " << j << ": analytic " << grad(j) << " vs fd " << fd;
      if (failures > 5) return;
    }
  }
}

}  // namespace

TEST(ModelGradient, DiffusionLossMatchesFiniteDifferences) {
  const auto c = small_config(false);
  const VectorX<double> p = init_parameters(c, 8).cast<double>();
  const Tokens x = random_tokens(3, 6, 6, 10);
  Rng rng(2);
  const std::vector<double> t{0.3, 0.6, 0.9};
  const auto z = forward_corrupt(x, t, NoiseSchedule::linear(), c.mask_index(), rng);
  VectorX<double> g = VectorX<double>::Zero(p.size());
  diffusion_loss_and_grad(c, p, x, z, NoiseSchedule::linear(), &g);
  check_gradient(
      p, g,
      [&](const VectorX<double>& q) {
        return diffusion_loss_and_grad<double>(c, q, x, z, NoiseSchedule::linear(), nullptr);
      },
      300, 1);
}

TEST(ModelGradient, AutoregressiveLossMatchesFiniteDifferences) {
  const auto c = small_config(true);
  const VectorX<double> p = init_parameters(c, 9).cast<double>();
  const Tokens x = random_tokens(2, 6, 6, 11);
  VectorX<double> g = VectorX<double>::Zero(p.size());
  const double loss = ar_loss_and_grad(c, p, x, &g);
  EXPECT_NEAR(loss, std::log(6.0), 0.5);
  check_gradient(
      p, g, [&](const VectorX<double>& q) { return ar_loss_and_grad<double>(c, q, x, nullptr); },
      300, 2);
}
