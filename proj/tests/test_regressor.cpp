#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "teleqa/regressor.hpp"

using namespace teleqa;

namespace {

Eigen::VectorXd random_vec(int n, Rng& rng, double scale = 1.0) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

std::vector<TrainSample> random_batch(const RegressorParams& p, Rng& rng, int n_samples,
                                      int steps) {
  std::vector<TrainSample> batch;
  for (int s = 0; s < n_samples; ++s) {
    TrainSample sample;
    int T = steps + s;  // mixed lengths
    for (int t = 0; t < T; ++t) sample.xs.push_back(random_vec(p.input_dim, rng, 0.5));
    sample.target = 1.0 + 4.0 * rng.uniform01();
    batch.push_back(std::move(sample));
  }
  return batch;
}

bool params_bit_equal(RegressorParams& a, RegressorParams& b) {
  auto ra = tensor_refs(a), rb = tensor_refs(b);
  for (size_t k = 0; k < ra.size(); ++k)
    for (Eigen::Index i = 0; i < ra[k].size(); ++i)
      if (ra[k].data[i] != rb[k].data[i]) return false;
  return true;
}

}  // namespace

TEST(GruStep, ZeroParamsZeroStateStaysZero) {
  RegressorParams p(4, 3, 4, 5, 4);
  HiddenState s = init_state(p);
  Eigen::VectorXd x = Eigen::VectorXd::Ones(4);
  auto s2 = gru_step(x, s, p);
  EXPECT_EQ(s2.step, 1);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(s2.h[i], 0.0);
}

TEST(GruStep, ZeroParamsHalvesExistingState) {
  // z = sigmoid(0) = 0.5 and the candidate is tanh(0) = 0, so h' = 0.5 h.
  RegressorParams p(4, 3, 4, 5, 4);
  HiddenState s = init_state(p);
  s.h << 0.8, -0.4, 0.2;
  auto s2 = gru_step(Eigen::VectorXd::Zero(4), s, p);
  EXPECT_DOUBLE_EQ(s2.h[0], 0.4);
  EXPECT_DOUBLE_EQ(s2.h[1], -0.2);
  EXPECT_DOUBLE_EQ(s2.h[2], 0.1);
}

TEST(GruStep, StateStaysBounded) {
  Rng rng(3);
  auto p = init_regressor(6, 5, 4, 4, 4, 77);
  HiddenState s = init_state(p);
  for (int t = 0; t < 50; ++t) {
    s = gru_step(random_vec(6, rng, 3.0), s, p);
    for (int i = 0; i < 5; ++i) EXPECT_LE(std::abs(s.h[i]), 1.0) << "step " << t;
  }
  // From an arbitrary state the bound is max(|h|, 1).
  HiddenState big{Eigen::VectorXd::Constant(5, 4.0), 0};
  auto next = gru_step(random_vec(6, rng), big, p);
  EXPECT_LE(next.h.cwiseAbs().maxCoeff(), 4.0);
}

TEST(GruStep, DimMismatchRejected) {
  auto p = init_regressor(6, 5, 4, 4, 4, 1);
  HiddenState s = init_state(p);
  EXPECT_THROW(gru_step(Eigen::VectorXd::Zero(7), s, p), ConfigError);
  HiddenState bad{Eigen::VectorXd::Zero(4), 0};
  EXPECT_THROW(gru_step(Eigen::VectorXd::Zero(6), bad, p), ConfigError);
}

TEST(PredictStep, ZeroParamsScoreZero) {
  RegressorParams p(6, 5, 4, 4, 4);
  HiddenState s = init_state(p);
  Rng rng(5);
  auto [score, s2] = predict_step(random_vec(6, rng), s, p);
  EXPECT_EQ(score, 0.0);
  EXPECT_EQ(s2.step, 1);
}

TEST(PredictStep, OnlineEqualsOfflineReference) {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = init_regressor(8, 6, 8, 10, 8, 1000 + trial);
    std::vector<Eigen::VectorXd> xs;
    for (int t = 0; t < 30; ++t) xs.push_back(random_vec(8, rng));

    auto offline = offline_scores(p, xs);
    HiddenState s = init_state(p);
    for (size_t t = 0; t < xs.size(); ++t) {
      auto [score, s2] = predict_step(xs[t], s, p);
      s = s2;
      EXPECT_NEAR(score, offline[t], 1e-6 * (1.0 + std::abs(offline[t])))
          << "trial " << trial << " step " << t;
    }
  }
}

TEST(PredictStep, OrderOfPastInputsMatters) {
  Rng rng(13);
  bool witness = false;
  for (int trial = 0; trial < 50 && !witness; ++trial) {
    auto p = init_regressor(4, 4, 4, 4, 4, 2000 + trial);
    auto x1 = random_vec(4, rng), x2 = random_vec(4, rng);
    double a = offline_scores(p, {x1, x2}).back();
    double b = offline_scores(p, {x2, x1}).back();
    witness = std::abs(a - b) > 1e-6;
  }
  EXPECT_TRUE(witness) << "no 2-step sequence found where input order changes the score";
}

TEST(PredictStep, OverflowRaisesNumericError) {
  RegressorParams p(4, 3, 4, 4, 4);
  p.head_b[0] = std::numeric_limits<double>::infinity();
  HiddenState s = init_state(p);
  EXPECT_THROW(predict_step(Eigen::VectorXd::Zero(4), s, p), NumericError);
}

TEST(Grad, ZeroResidualBatchGivesZeroGradient) {
  Rng rng(17);
  auto p = init_regressor(5, 4, 4, 4, 4, 31);
  TrainSample sample;
  for (int t = 0; t < 4; ++t) sample.xs.push_back(random_vec(5, rng));
  sample.target = sample_prediction(p, sample.xs, ScoreAggregation::mean_over_steps);

  auto result = grad(p, {sample});
  EXPECT_NEAR(result.loss, 0.0, 1e-20);
  for (auto& t : tensor_refs(result.grads))
    for (Eigen::Index i = 0; i < t.size(); ++i) EXPECT_EQ(t.data[i], 0.0) << t.name;
}

TEST(Grad, FiniteDifferenceAgreementMeanAggregation) {
  Rng rng(19);
  auto p = init_regressor(6, 4, 5, 6, 5, 37);
  auto batch = random_batch(p, rng, 2, 5);
  auto report = oracles::fd_max_rel_error(p, batch, ScoreAggregation::mean_over_steps);
  EXPECT_LE(report.max_rel, 1e-4) << "worst tensor: " << report.worst_tensor;
}

TEST(Grad, FiniteDifferenceAgreementFinalStepAggregation) {
  Rng rng(23);
  auto p = init_regressor(6, 4, 5, 6, 5, 41);
  auto batch = random_batch(p, rng, 2, 5);
  auto report = oracles::fd_max_rel_error(p, batch, ScoreAggregation::final_step);
  EXPECT_LE(report.max_rel, 1e-4) << "worst tensor: " << report.worst_tensor;
}

TEST(Grad, DoublingResidualsDoublesGradient) {
  Rng rng(29);
  auto p = init_regressor(5, 4, 4, 4, 4, 43);
  TrainSample sample;
  for (int t = 0; t < 5; ++t) sample.xs.push_back(random_vec(5, rng));
  const double pred = sample_prediction(p, sample.xs, ScoreAggregation::mean_over_steps);

  TrainSample near = sample, far = sample;
  near.target = pred - 0.5;
  far.target = pred - 1.0;  // doubled residual, identical forward pass

  auto g1 = grad(p, {near});
  auto g2 = grad(p, {far});
  auto r1 = tensor_refs(g1.grads), r2 = tensor_refs(g2.grads);
  for (size_t k = 0; k < r1.size(); ++k)
    for (Eigen::Index i = 0; i < r1[k].size(); ++i)
      EXPECT_NEAR(r2[k].data[i], 2.0 * r1[k].data[i],
                  1e-12 * (1.0 + std::abs(r1[k].data[i])))
          << r1[k].name;
}

TEST(Train, DeterministicForFixedSeed) {
  Rng rng(31);
  auto data_params = init_regressor(4, 3, 4, 4, 4, 0);
  auto batch = random_batch(data_params, rng, 6, 3);

  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 3;
  cfg.seed = 99;

  auto p1 = init_regressor(4, 3, 4, 4, 4, 7);
  auto p2 = init_regressor(4, 3, 4, 4, 4, 7);
  train_sequences(p1, batch, cfg);
  train_sequences(p2, batch, cfg);
  EXPECT_TRUE(params_bit_equal(p1, p2));
}

TEST(Train, TwoSampleMemorization) {
  Rng rng(37);
  auto p = init_regressor(6, 8, 8, 12, 8, 53);
  std::vector<TrainSample> data(2);
  for (int s = 0; s < 2; ++s) {
    for (int t = 0; t < 5; ++t) data[s].xs.push_back(random_vec(6, rng));
    data[s].target = s == 0 ? 2.0 : 4.0;
  }

  TrainConfig cfg;
  cfg.epochs = 500;
  cfg.batch_size = 2;
  cfg.lr_head = 1e-2;
  cfg.weight_decay = 0.0;
  cfg.seed = 5;
  auto result = train_sequences(p, data, cfg);
  EXPECT_LT(result.epoch_loss.back(), 1e-3);
}

TEST(Train, DegenerateTargetsWarnButTrain) {
  Rng rng(41);
  auto p = init_regressor(4, 3, 4, 4, 4, 3);
  std::vector<TrainSample> data(3);
  for (auto& s : data) {
    for (int t = 0; t < 3; ++t) s.xs.push_back(random_vec(4, rng));
    s.target = 3.0;
  }
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 3;
  EXPECT_NO_THROW(train_sequences(p, data, cfg));
}

TEST(Train, RejectsTargetsOutsideScale) {
  auto p = init_regressor(4, 3, 4, 4, 4, 3);
  std::vector<TrainSample> data(2);
  for (auto& s : data) s.xs.push_back(Eigen::VectorXd::Zero(4));
  data[0].target = 3.0;
  data[1].target = 5.5;
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train_sequences(p, data, cfg), ConfigError);
}

TEST(SystematicSample, StrideArithmetic) {
  for (uint64_t seed = 0; seed < 30; ++seed) {
    auto idx = systematic_sample(100, 20, seed);
    ASSERT_EQ(idx.size(), 20u);
    const int o = idx[0];
    EXPECT_GE(o, 0);
    EXPECT_LT(o, 5);  // stride = 100/20 = 5
    for (int i = 0; i < 20; ++i) {
      EXPECT_EQ(idx[i], o + 5 * i);
      EXPECT_LT(idx[i], 100);
    }
  }
}

TEST(SystematicSample, FullLengthIsIdentity) {
  auto idx = systematic_sample(7, 7, 12345);
  for (int i = 0; i < 7; ++i) EXPECT_EQ(idx[i], i);
}

TEST(SystematicSample, TooShortSequenceRejected) {
  try {
    systematic_sample(5, 6, 0);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("sequence too short"), std::string::npos);
  }
}

TEST(SystematicSample, EveryOffsetOccursAcrossSeeds) {
  // T=40, k=10 gives stride 4; all offsets 0..3 must appear.
  std::vector<int> seen(4, 0);
  for (uint64_t seed = 0; seed < 200; ++seed) seen[systematic_sample(40, 10, seed)[0]] += 1;
  for (int o = 0; o < 4; ++o) EXPECT_GT(seen[o], 0) << "offset " << o << " never drawn";
}

TEST(SystematicSample, PaddingRepeatsLastStep) {
  auto idx = sample_or_pad(3, 5, 0);
  std::vector<int> expect{0, 1, 2, 2, 2};
  EXPECT_EQ(idx, expect);
  auto passthrough = sample_or_pad(40, 10, 9);
  EXPECT_EQ(passthrough.size(), 10u);
}
