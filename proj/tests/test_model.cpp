#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "motif/model.hpp"
#include "support.hpp"

using namespace motif;
using namespace motif::fixtures;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

ModelConfig diagonal_config(bool affine = true) {
  ModelConfig c;
  c.affine = affine;
  return c;
}

ModelConfig full_config(int heads) {
  ModelConfig c;
  c.variant = AttentionVariant::full;
  c.norm = NormMode::token;
  c.heads = heads;
  return c;
}

VectorXd ones(Eigen::Index n) { return VectorXd::Ones(n); }

}  // namespace

TEST(DiagonalAttention, ZeroInputIsUniform) {
  const MatrixXd x = MatrixXd::Zero(2, 1);
  const auto r = diagonal_attention<double>(x, full_mask(2), ones(1), ones(1), ones(1));
  EXPECT_DOUBLE_EQ(r.maps[0](0, 0), 0.5);
  EXPECT_DOUBLE_EQ(r.maps[0](1, 1), 0.5);
  EXPECT_TRUE(r.output.isZero(0));
}

TEST(DiagonalAttention, HandEvaluatedTwoStep) {
  MatrixXd x(2, 1);
  x << 1, 0;
  const auto r = diagonal_attention<double>(x, full_mask(2), ones(1), ones(1), ones(1));
  const double e = std::exp(1.0);
  EXPECT_NEAR(r.maps[0](0, 0), e / (1 + e), 1e-15);
  EXPECT_NEAR(r.maps[0](0, 1), 1 / (1 + e), 1e-15);
  EXPECT_NEAR(r.maps[0](1, 0), 0.5, 1e-15);
  EXPECT_NEAR(r.output(0, 0), 0.7310585786300049, 1e-12);
  EXPECT_NEAR(r.output(1, 0), 0.5, 1e-15);
}

TEST(DiagonalAttention, OtherChannelBitwiseUnchanged) {
  std::mt19937_64 rng(7);
  const MatrixXd x = random_matrix(rng, 5, 3);
  const VectorXd tq = random_matrix(rng, 3, 1), tk = random_matrix(rng, 3, 1), tv = random_matrix(rng, 3, 1);
  MatrixXd y = x;
  y.col(0) += random_matrix(rng, 5, 1);
  const auto a = diagonal_attention<double>(x, full_mask(5), tq, tk, tv);
  const auto b = diagonal_attention<double>(y, full_mask(5), tq, tk, tv);
  EXPECT_TRUE((a.output.col(1).array() == b.output.col(1).array()).all());
  EXPECT_TRUE((a.output.col(2).array() == b.output.col(2).array()).all());
  EXPECT_FALSE((a.output.col(0).array() == b.output.col(0).array()).all());
}

TEST(DiagonalAttention, MatchesNaiveReferenceWithMasks) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const int T = 1 + trial % 8, C = 1 + (trial / 8) % 8;
    const int valid = 1 + static_cast<int>(rng() % T);
    const Mask mask = prefix_mask(T, valid);
    MatrixXd x = random_matrix(rng, T, C);
    x.bottomRows(T - valid).setZero();
    const VectorXd tq = random_matrix(rng, C, 1), tk = random_matrix(rng, C, 1), tv = random_matrix(rng, C, 1);
    const auto got = diagonal_attention<double>(x, mask, tq, tk, tv);
    const auto want = naive_diagonal(x, mask, tq, tk, tv);
    EXPECT_LE((got.output - want.output).cwiseAbs().maxCoeff(), 1e-10);
    for (int c = 0; c < C; ++c) EXPECT_LE((got.maps[c] - want.maps[c]).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(DiagonalAttention, RowsAreProbabilityVectors) {
  std::mt19937_64 rng(9);
  const Mask mask = prefix_mask(6, 4);
  const MatrixXd x = random_matrix(rng, 6, 3, 3.0);
  const VectorXd t = random_matrix(rng, 3, 1);
  const auto r = diagonal_attention<double>(x, mask, t, t, t);
  for (const auto& m : r.maps) {
    EXPECT_GE(m.minCoeff(), 0.0);
    for (int row = 0; row < 4; ++row) EXPECT_NEAR(m.row(row).sum(), 1.0, 1e-12);
    EXPECT_TRUE(m.bottomRows(2).isZero(0));
    EXPECT_TRUE(m.rightCols(2).isZero(0));
  }
  EXPECT_TRUE(r.output.bottomRows(2).isZero(0));
}

TEST(DiagonalAttention, AllMaskedIsAnError) {
  EXPECT_THROW(diagonal_attention<double>(MatrixXd::Ones(2, 1), prefix_mask(2, 0), ones(1), ones(1), ones(1)),
               InputError);
}

TEST(FullAttention, ZeroQueryKeyIsMaskedMean) {
  std::mt19937_64 rng(10);
  const Mask mask = prefix_mask(5, 3);
  MatrixXd x = random_matrix(rng, 5, 4);
  x.bottomRows(2).setZero();
  const MatrixXd zero = MatrixXd::Zero(4, 4), id = MatrixXd::Identity(4, 4);
  const auto r = full_attention<double>(x, mask, zero, zero, id, id, 1);
  const VectorXd mean = x.topRows(3).colwise().mean();
  for (int t = 0; t < 3; ++t) EXPECT_LE((r.output.row(t).transpose() - mean).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(FullAttention, SingleStep) {
  std::mt19937_64 rng(11);
  const MatrixXd x = random_matrix(rng, 1, 4);
  const MatrixXd wq = random_matrix(rng, 4, 4), wk = random_matrix(rng, 4, 4), wv = random_matrix(rng, 4, 4),
                 wo = random_matrix(rng, 4, 4);
  const auto r = full_attention<double>(x, full_mask(1), wq, wk, wv, wo, 2);
  for (const auto& m : r.maps) EXPECT_DOUBLE_EQ(m(0, 0), 1.0);
  EXPECT_LE((r.output.row(0).transpose() - wo * wv * x.row(0).transpose()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FullAttention, MatchesNaiveReference) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 40; ++trial) {
    const int C = 1 + trial % 8, T = 1 + (trial * 3) % 8;
    std::vector<int> divisors;
    for (int h = 1; h <= C; ++h)
      if (C % h == 0) divisors.push_back(h);
    const int H = divisors[trial % divisors.size()];
    const int valid = 1 + static_cast<int>(rng() % T);
    const Mask mask = prefix_mask(T, valid);
    const MatrixXd x = random_matrix(rng, T, C);
    const MatrixXd wq = random_matrix(rng, C, C), wk = random_matrix(rng, C, C), wv = random_matrix(rng, C, C),
                   wo = random_matrix(rng, C, C);
    const auto got = full_attention<double>(x, mask, wq, wk, wv, wo, H);
    const auto want = naive_full(x, mask, wq, wk, wv, wo, H);
    EXPECT_LE((got.output.topRows(valid) - want.output.topRows(valid)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_TRUE(got.output.bottomRows(T - valid).isZero(0));
    for (int h = 0; h < H; ++h) EXPECT_LE((got.maps[h] - want.maps[h]).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(FullAttention, HeadsMustDivideConcepts) {
  const MatrixXd id = MatrixXd::Identity(3, 3);
  EXPECT_THROW(full_attention<double>(MatrixXd::Ones(2, 3), full_mask(2), id, id, id, id, 2), ConfigError);
  EXPECT_THROW(full_config(2).validate(3), ConfigError);
}

TEST(Norm, ConstantChannelIsNearZero) {
  MatrixXd x = MatrixXd::Constant(4, 1, 5.0);
  const MatrixXd y = channel_norm<double>(x, full_mask(4), ones(1), VectorXd::Zero(1));
  EXPECT_LE(y.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Norm, SingleStepGivesShift) {
  MatrixXd x(1, 2);
  x << 3, -7;
  VectorXd shift(2);
  shift << 0.25, -1.5;
  const MatrixXd y = channel_norm<double>(x, full_mask(1), VectorXd::Constant(2, 2.0), shift);
  EXPECT_DOUBLE_EQ(y(0, 0), 0.25);
  EXPECT_DOUBLE_EQ(y(0, 1), -1.5);
}

TEST(Norm, StatisticsUseValidStepsOnly) {
  MatrixXd x(3, 1);
  x << 1, 3, 1000;
  const MatrixXd y = channel_norm<double>(x, prefix_mask(3, 2), ones(1), VectorXd::Zero(1));
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(y(0, 0), -expect, 1e-12);
  EXPECT_NEAR(y(1, 0), expect, 1e-12);
  EXPECT_EQ(y(2, 0), 0.0);
}

TEST(Norm, TokenNormMixesChannelsWithinAStep) {
  MatrixXd x(2, 2);
  x << 1, 3, 5, 5;
  const MatrixXd y = token_norm<double>(x, full_mask(2), ones(2), VectorXd::Zero(2));
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(y(0, 0), -expect, 1e-12);
  EXPECT_NEAR(y(0, 1), expect, 1e-12);
  EXPECT_LE(y.row(1).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Block, VanishingBranchesGiveIdentity) {
  std::mt19937_64 rng(13);
  ModelParams<double> p = random_params(3, 2, diagonal_config(), rng);
  p.norm1_scale.setOnes();
  p.norm1_shift.setZero();
  p.theta_v.setZero();
  p.ffn_w2.setZero();
  p.ffn_b2.setZero();
  const MatrixXd x = random_matrix(rng, 5, 3);
  BlockCache<double> cache;
  const MatrixXd out = block_forward<double>(x, full_mask(5), p, std::nullopt, cache);
  EXPECT_LE((out - x).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Block, DropoutOnlyWhenSeeded) {
  std::mt19937_64 rng(14);
  ModelConfig cfg = diagonal_config();
  cfg.dropout = 0.5;
  const ModelParams<double> p = random_params(4, 2, cfg, rng);
  const MatrixXd x = random_matrix(rng, 6, 4);
  const auto eval_a = forward<double>(x, full_mask(6), p);
  const auto eval_b = forward<double>(x, full_mask(6), p);
  EXPECT_EQ(eval_a.z, eval_b.z);
  const auto train_a = forward<double>(x, full_mask(6), p, 99);
  const auto train_b = forward<double>(x, full_mask(6), p, 99);
  const auto train_c = forward<double>(x, full_mask(6), p, 100);
  EXPECT_EQ(train_a.z, train_b.z);
  EXPECT_NE(train_a.z, train_c.z);
  EXPECT_NE(train_a.z, eval_a.z);
  const MatrixXd& keep = train_a.block.keep;
  for (Eigen::Index i = 0; i < keep.size(); ++i) EXPECT_TRUE(keep.data()[i] == 0.0 || keep.data()[i] == 2.0);
}

TEST(Bottleneck, SoftplusValues) {
  EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(softplus(100.0), 100.0, 1e-12);
  EXPECT_GT(softplus(-100.0), 0.0);
  EXPECT_NEAR(softplus(-100.0) / std::exp(-100.0), 1.0, 1e-12);
  EXPECT_TRUE(std::isfinite(softplus(1e6)));
}

TEST(Bottleneck, AffineSwitch) {
  std::mt19937_64 rng(15);
  ModelParams<double> p = random_params(3, 2, diagonal_config(), rng);
  const MatrixXd xl = random_matrix(rng, 4, 3);
  const MatrixXd with = bottleneck<double>(xl, p);
  for (int t = 0; t < 4; ++t)
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(with(t, c), softplus(p.gamma(c) * xl(t, c) + p.delta(c)), 1e-15);
  p.config.affine = false;
  const MatrixXd without = bottleneck<double>(xl, p);
  for (int t = 0; t < 4; ++t)
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(without(t, c), softplus(xl(t, c)), 1e-15);
}

TEST(Pooling, Examples) {
  const Mask all = full_mask(3);
  for (double tau : {1e-3, 1.0, 50.0}) {
    const VectorXd r = lse_pool<double>(MatrixXd::Ones(3, 1), all, tau);
    EXPECT_NEAR(r(0), 1.0, 1e-12);
  }
  MatrixXd v(2, 1);
  v << 0, std::log(3.0);
  EXPECT_NEAR(lse_pool<double>(v, full_mask(2), 1.0)(0), std::log(2.0), 1e-15);
  v << 5, 100;
  EXPECT_DOUBLE_EQ(lse_pool<double>(v, prefix_mask(2, 1), 1.0)(0), 5.0);
  v << 0, 0;
  EXPECT_NEAR(lse_pool<double>(v, full_mask(2), 1.0, false)(0), std::log(2.0), 1e-15);
  EXPECT_THROW(lse_pool<double>(v, prefix_mask(2, 0), 1.0), InputError);
}

TEST(Pooling, MatchesNaiveAndStaysInBounds) {
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 100; ++trial) {
    const int T = 1 + trial % 7, valid = 1 + static_cast<int>(rng() % T);
    const MatrixXd v = random_matrix(rng, T, 3, 2.0);
    const Mask mask = prefix_mask(T, valid);
    std::vector<int> m(T, 0);
    std::fill(m.begin(), m.begin() + valid, 1);
    double prev_tau_value[3] = {-INFINITY, -INFINITY, -INFINITY};
    for (double tau : {0.1, 0.5, 1.0, 2.0, 5.0}) {
      const VectorXd got = lse_pool<double>(v, mask, tau);
      for (int j = 0; j < 3; ++j) {
        std::vector<double> col(v.col(j).data(), v.col(j).data() + T);
        EXPECT_NEAR(got(j), naive_lse(col, m, tau, true), 1e-12);
        EXPECT_GE(got(j), v.col(j).head(valid).minCoeff() - 1e-12);
        EXPECT_LE(got(j), v.col(j).head(valid).maxCoeff() + 1e-12);
        EXPECT_GE(got(j), prev_tau_value[j] - 1e-12);
        prev_tau_value[j] = got(j);
      }
    }
  }
}

TEST(Pooling, LargeValuesDoNotOverflow) {
  MatrixXd v(2, 1);
  v << 800, 790;
  const double got = lse_pool<double>(v, full_mask(2), 1.0)(0);
  EXPECT_NEAR(got, 800 + std::log((1 + std::exp(-10.0)) / 2), 1e-10);
}

TEST(Forward, ZeroHeadPredictsArgmaxBias) {
  std::mt19937_64 rng(17);
  ModelParams<double> p = random_params(3, 4, diagonal_config(), rng);
  p.W.setZero();
  p.b << 0.1, 0.7, 0.7, -2.0;
  const auto tr = forward<double>(random_matrix(rng, 5, 3), full_mask(5), p);
  EXPECT_LE((tr.pooled_logits - p.b).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(tr.prediction, 1);
}

TEST(Forward, SingleStepPoolingIsIdentity) {
  std::mt19937_64 rng(18);
  const ModelParams<double> p = random_params(3, 2, diagonal_config(), rng);
  const auto tr = forward<double>(random_matrix(rng, 1, 3), full_mask(1), p);
  EXPECT_LE((tr.pooled_logits - tr.logits.row(0).transpose()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((tr.pooled_concepts - tr.z.row(0).transpose()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Forward, TraceInvariants) {
  std::mt19937_64 rng(19);
  for (auto cfg : {diagonal_config(), full_config(2)}) {
    const ModelParams<double> p = random_params(4, 3, cfg, rng);
    const Mask mask = prefix_mask(6, 4);
    MatrixXd x = random_matrix(rng, 6, 4);
    x.bottomRows(2).setZero();
    const auto tr = forward<double>(x, mask, p);
    EXPECT_GE(tr.z.minCoeff(), 0.0);
    EXPECT_GT(tr.z.topRows(4).minCoeff(), 0.0);
    for (int t = 0; t < 4; ++t) {
      const VectorXd expect = p.W * tr.z.row(t).transpose() + p.b;
      EXPECT_EQ(tr.logits.row(t).transpose(), expect);
    }
    for (const auto& m : tr.attention())
      for (int t = 0; t < 4; ++t) EXPECT_NEAR(m.row(t).sum(), 1.0, 1e-12);
  }
}

TEST(Forward, BatchedEqualsPerSample) {
  std::mt19937_64 rng(20);
  for (auto cfg : {diagonal_config(), full_config(1)}) {
    const ModelParams<double> p = random_params(3, 2, cfg, rng);
    const PaddedBatch batch = random_batch(rng, 5, 7, 3, 2, true);
    const auto traces = forward<double>(batch, p);
    for (int b = 0; b < 5; ++b) {
      const auto n = valid_count(batch.masks[b]);
      const auto single = forward<double>(MatrixXd(batch.activations[b].topRows(n)), full_mask(n), p);
      EXPECT_LE((traces[b].pooled_logits - single.pooled_logits).cwiseAbs().maxCoeff(), 1e-10);
      EXPECT_EQ(traces[b].prediction, single.prediction);
    }
  }
}

TEST(Forward, AppendingMaskedStepsChangesNothing) {
  std::mt19937_64 rng(21);
  for (auto cfg : {diagonal_config(), diagonal_config(false), full_config(2)}) {
    const ModelParams<double> p = random_params(4, 3, cfg, rng);
    const MatrixXd x = random_matrix(rng, 5, 4);
    const auto base = forward<double>(x, full_mask(5), p);
    for (int extra : {1, 3, 10}) {
      MatrixXd padded = MatrixXd::Zero(5 + extra, 4);
      padded.topRows(5) = x;
      const auto tr = forward<double>(padded, prefix_mask(5 + extra, 5), p);
      EXPECT_LE((tr.pooled_logits - base.pooled_logits).cwiseAbs().maxCoeff(), 1e-9);
      EXPECT_LE((tr.pooled_concepts - base.pooled_concepts).cwiseAbs().maxCoeff(), 1e-9);
      EXPECT_LE((tr.z.topRows(5) - base.z).cwiseAbs().maxCoeff(), 1e-9);
      for (std::size_t m = 0; m < base.attention().size(); ++m)
        EXPECT_LE((tr.attention()[m].topLeftCorner(5, 5) - base.attention()[m]).cwiseAbs().maxCoeff(), 1e-9);
      EXPECT_EQ(tr.prediction, base.prediction);
    }
  }
}

TEST(Forward, TimePermutationEquivariance) {
  std::mt19937_64 rng(22);
  for (auto cfg : {diagonal_config(), full_config(2)}) {
    const ModelParams<double> p = random_params(4, 3, cfg, rng);
    const MatrixXd x = random_matrix(rng, 6, 4);
    std::vector<int> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    MatrixXd xp(6, 4);
    for (int t = 0; t < 6; ++t) xp.row(t) = x.row(perm[t]);
    const auto a = forward<double>(x, full_mask(6), p), b = forward<double>(xp, full_mask(6), p);
    for (int t = 0; t < 6; ++t) EXPECT_LE((b.logits.row(t) - a.logits.row(perm[t])).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE((a.pooled_logits - b.pooled_logits).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Forward, ConceptIsolationDiagonalOnly) {
  std::mt19937_64 rng(23);
  int full_violations = 0;
  for (int trial = 0; trial < 50; ++trial) {
    for (bool full : {false, true}) {
      const ModelParams<double> p = random_params(4, 2, full ? full_config(2) : diagonal_config(trial % 2), rng);
      const MatrixXd x = random_matrix(rng, 5, 4);
      MatrixXd y = x;
      const int c = trial % 4;
      y.col(c) += random_matrix(rng, 5, 1);
      const auto a = forward<double>(x, full_mask(5), p), b = forward<double>(y, full_mask(5), p);
      bool untouched_equal = true;
      for (int j = 0; j < 4; ++j)
        if (j != c)
          untouched_equal = untouched_equal && (a.z.col(j).array() == b.z.col(j).array()).all() &&
                            (a.x_l.col(j).array() == b.x_l.col(j).array()).all();
      if (full)
        full_violations += !untouched_equal;
      else
        EXPECT_TRUE(untouched_equal);
    }
  }
  EXPECT_GT(full_violations, 0);
}

TEST(Forward, ShapeErrors) {
  std::mt19937_64 rng(24);
  const ModelParams<double> p = random_params(3, 2, diagonal_config(), rng);
  EXPECT_THROW(forward<double>(MatrixXd::Ones(4, 2), full_mask(4), p), InputError);
  EXPECT_THROW(forward<double>(MatrixXd::Ones(4, 3), full_mask(3), p), InputError);
  EXPECT_THROW(forward<double>(MatrixXd::Ones(4, 3), prefix_mask(4, 0), p), InputError);
}

TEST(Config, DiagonalRejectsTokenNorm) {
  ModelConfig c;
  c.norm = NormMode::token;
  EXPECT_THROW(c.validate(4), ConfigError);
  EXPECT_THROW(parse_variant("sparse"), std::invalid_argument);
}

TEST(Init, NearIdentityBlock) {
  const auto p = init_params<double>(6, 3, diagonal_config(), 5, true);
  EXPECT_TRUE(p.ffn_w2.isZero(0));
  EXPECT_TRUE((p.theta_v.array() == 1.0).all());
  EXPECT_GE(p.W.minCoeff(), 0.0);
  EXPECT_TRUE(p.b.isZero(0));
  EXPECT_EQ(p.wq.size(), 0);
  const auto again = init_params<double>(6, 3, diagonal_config(), 5, true);
  EXPECT_EQ(p.W, again.W);
  EXPECT_EQ(p.theta_q, again.theta_q);
  const auto full = init_params<double>(6, 3, full_config(3), 5, false);
  EXPECT_TRUE(full.wv.isIdentity(0));
  EXPECT_LT(full.W.minCoeff(), 0.0);
}

TEST(Precision, SingleTracksDouble) {
  std::mt19937_64 rng(25);
  const ModelParams<double> p = random_params(4, 3, diagonal_config(), rng);
  const MatrixXd x = random_matrix(rng, 6, 4);
  const auto d = forward<double>(x, full_mask(6), p);
  const auto f = forward<float>(x.cast<float>(), full_mask(6), p.cast<float>());
  EXPECT_LE((d.pooled_logits.cast<float>() - f.pooled_logits).cwiseAbs().maxCoeff(), 1e-4f);
}

TEST(OpCount, DiagonalIsThreeCTSquared) {
  std::mt19937_64 rng(26);
  for (int T : {3, 8}) {
    for (int C : {2, 5}) {
      OpCounter ops;
      const VectorXd t = random_matrix(rng, C, 1);
      diagonal_attention<double>(random_matrix(rng, T, C), full_mask(T), t, t, t, &ops);
      EXPECT_EQ(ops.attention_mults(), static_cast<std::uint64_t>(3 * C * T * T));
      EXPECT_EQ(ops.projection_mults, static_cast<std::uint64_t>(3 * C * T));
    }
  }
}
